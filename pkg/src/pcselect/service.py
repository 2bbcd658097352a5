"""Selection service (cloud side) and its client (edge side).

One request per connection: the edge sends a ``SelectionRequest`` frame,
the cloud answers with exactly one ``ModelAssignment`` or ``ErrorReply``
frame and closes.  Error codes:

    1  no registered model satisfies the request
    2  bad request (undecodable frame, empty or malformed sample frames,
       unknown target class)
    3  internal error

Server config file, ``key = value`` per line, ``#`` comments::

    registry = kitti_registry.txt     # path, relative to the config file
    reference = reference_stats.txt   # ReferenceStats.dumps() output
    host = 127.0.0.1
    port = 5050
    # optional SelectionThresholds overrides
    low_density_max_ratio = 0.25
"""
from __future__ import annotations

import socket
import socketserver
import threading
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

from . import corpus as corpus_mod
from .degrade import DegradationSpec
from .features import ReferenceStats, _read_kv, analyze_stream
from .pointcloud_io import ParseError, read_velodyne_bin
from .protocol import (ERR_BAD_REQUEST, ERR_INTERNAL, ERR_NO_CANDIDATE, HEADER_SIZE, ErrorReply,
                       ModelAssignment, SelectionRequest, WireError, decode, encode,
                       parse_header)
from .selector import (DEFAULT_SIZE_TABLE, MethodFeatures, ModelDescriptor, NoCandidate,
                       SelectionThresholds, TargetData, UnknownClass, format_descriptor,
                       parse_registry, select)

DEFAULT_TIMEOUT_S = 30.0
MAX_FRAME_BYTES = 1 << 30


class ProtocolViolation(Exception):
    pass


class Timeout(Exception):
    pass


class TransportError(ConnectionError):
    """The connection failed before any reply byte arrived (safe to retry)."""


# ------------------------------------------------------------------- cloud

@dataclass(frozen=True)
class CloudServerState:
    registry: tuple[ModelDescriptor, ...]
    reference: ReferenceStats
    thresholds: SelectionThresholds = SelectionThresholds()
    size_table: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_SIZE_TABLE))

    def __post_init__(self):
        object.__setattr__(self, "registry", tuple(self.registry))


def cloud_handle(state: CloudServerState, req: SelectionRequest) -> ModelAssignment | ErrorReply:
    if not req.sample_frames:
        return ErrorReply(ERR_BAD_REQUEST, "request carries no sample frames")
    try:
        clouds = [read_velodyne_bin(b, str(i)) for i, b in enumerate(req.sample_frames)]
    except ParseError as exc:
        return ErrorReply(ERR_BAD_REQUEST, f"malformed sample frame: {exc}")
    try:
        target = TargetData(req.target_classes, req.latency_budget_s)
        features = analyze_stream(clouds, state.reference, req.declared_noise_sigma)
        decision = select(target, features, state.registry, state.thresholds, state.size_table)
    except NoCandidate as exc:
        return ErrorReply(ERR_NO_CANDIDATE, str(exc) or "no candidate model")
    except UnknownClass as exc:
        return ErrorReply(ERR_BAD_REQUEST, f"unknown target class {exc.args[0]!r}")
    except ValueError as exc:
        return ErrorReply(ERR_BAD_REQUEST, str(exc))
    d = decision.chosen
    return ModelAssignment(d.model_id, d.features, d.train_degradation, decision.branch_trace)


def handle_bytes(state: CloudServerState, frame: bytes) -> bytes:
    """One request frame in, one reply frame out; never raises on bad input."""
    try:
        msg = decode(frame)
    except WireError as exc:
        return encode(ErrorReply(ERR_BAD_REQUEST, f"{type(exc).__name__}: {exc}"))
    if not isinstance(msg, SelectionRequest):
        return encode(ErrorReply(ERR_BAD_REQUEST, f"expected SelectionRequest, got "
                                                  f"{type(msg).__name__}"))
    try:
        return encode(cloud_handle(state, msg))
    except Exception as exc:  # noqa: BLE001 - the reply must always be a frame
        return encode(ErrorReply(ERR_INTERNAL, f"{type(exc).__name__}: {exc}"))


# -------------------------------------------------------------- transports

class Connection(Protocol):
    def sendall(self, data: bytes) -> None: ...
    def recv(self, n: int) -> bytes: ...
    def close(self) -> None: ...


Connector = Callable[[], Connection]


def read_frame(conn: Connection) -> bytes:
    """Read one whole frame.

    EOF before the first byte raises TransportError; EOF inside a frame
    raises ``protocol.Truncated``.
    """
    buf = bytearray()
    need = HEADER_SIZE
    header_done = False
    while len(buf) < need:
        try:
            chunk = conn.recv(min(need - len(buf), 1 << 20))
        except socket.timeout:
            raise Timeout("timed out waiting for the peer") from None
        except OSError as exc:
            if not buf:
                raise TransportError(str(exc)) from exc
            chunk = b""
        if not chunk:
            if not buf:
                raise TransportError("connection closed before any reply byte")
            decode(bytes(buf))  # raises Truncated (or a header error)
            raise AssertionError("unreachable")
        buf += chunk
        if not header_done and len(buf) >= HEADER_SIZE:
            _, length = parse_header(bytes(buf[:HEADER_SIZE]))
            if length > MAX_FRAME_BYTES:
                raise ProtocolViolation(f"frame of {length} bytes exceeds the limit")
            need = HEADER_SIZE + length
            header_done = True
    return bytes(buf)


class LoopbackConnection:
    """In-memory connection served by ``handle_bytes`` in the calling thread.

    ``fail_sends`` makes that many connections fail on send (before any
    reply byte); ``cut_reply_at`` truncates the reply to that many bytes.
    """

    def __init__(self, state: CloudServerState, fail: bool = False,
                 cut_reply_at: int | None = None):
        self._state = state
        self._fail = fail
        self._cut = cut_reply_at
        self._inbox = bytearray()
        self._reply: bytes | None = None
        self._pos = 0

    def sendall(self, data: bytes) -> None:
        if self._fail:
            raise ConnectionResetError("injected transport failure")
        self._inbox += data

    def recv(self, n: int) -> bytes:
        if self._reply is None:
            reply = handle_bytes(self._state, bytes(self._inbox))
            self._reply = reply if self._cut is None else reply[:self._cut]
        out = self._reply[self._pos:self._pos + n]
        self._pos += len(out)
        return out

    def close(self) -> None:
        pass


class LoopbackTransport:
    """Connector producing in-memory connections to one server state."""

    def __init__(self, state: CloudServerState, fail_first: int = 0,
                 cut_reply_at: int | None = None):
        self.state = state
        self.fail_first = fail_first
        self.cut_reply_at = cut_reply_at
        self.connections = 0
        self._lock = threading.Lock()

    def __call__(self) -> LoopbackConnection:
        with self._lock:
            self.connections += 1
            fail = self.connections <= self.fail_first
        return LoopbackConnection(self.state, fail, self.cut_reply_at)


def tcp_connector(host: str, port: int, timeout_s: float = DEFAULT_TIMEOUT_S) -> Connector:
    def connect() -> Connection:
        try:
            return socket.create_connection((host, port), timeout=timeout_s)
        except socket.timeout:
            raise Timeout(f"connecting to {host}:{port} timed out") from None
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
    return connect


# --------------------------------------------------------------------- edge

def edge_session(connect: Connector, target: TargetData, frames: Sequence[bytes],
                 declared_noise_sigma: float | None = None, retries: int = 1,
                 timeout_s: float = DEFAULT_TIMEOUT_S) -> ModelAssignment | ErrorReply:
    """Send one SelectionRequest and return the single reply.

    A connection that fails before any reply byte arrives is retried up to
    ``retries`` times on a fresh connection.  A reply cut mid-frame, an
    undecodable reply or a reply of the wrong type raises ProtocolViolation.
    """
    frame = encode(SelectionRequest(target.target_classes, target.latency_budget_s,
                                    tuple(frames), declared_noise_sigma))
    attempt = 0
    while True:
        try:
            conn = connect()
        except TransportError:
            if attempt >= retries:
                raise
            attempt += 1
            continue
        try:
            if hasattr(conn, "settimeout"):
                conn.settimeout(timeout_s)
            try:
                conn.sendall(frame)
                if hasattr(conn, "shutdown"):
                    conn.shutdown(socket.SHUT_WR)
            except socket.timeout:
                raise Timeout("timed out sending the request") from None
            except OSError as exc:
                raise TransportError(str(exc)) from exc
            reply = read_frame(conn)
        except TransportError:
            if attempt >= retries:
                raise
            attempt += 1
            continue
        except WireError as exc:
            raise ProtocolViolation(f"{type(exc).__name__}: {exc}") from exc
        finally:
            conn.close()
        try:
            msg = decode(reply)
        except WireError as exc:
            raise ProtocolViolation(f"{type(exc).__name__}: {exc}") from exc
        if not isinstance(msg, (ModelAssignment, ErrorReply)):
            raise ProtocolViolation(f"unexpected reply type {type(msg).__name__}")
        return msg


# ---------------------------------------------------------------- TCP server

class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        sock: socket.socket = self.request
        sock.settimeout(self.server.timeout_s)
        try:
            frame = read_frame(sock)
        except (TransportError, Timeout):
            return
        except (WireError, ProtocolViolation) as exc:
            reply = encode(ErrorReply(ERR_BAD_REQUEST, f"{type(exc).__name__}: {exc}"))
        else:
            reply = handle_bytes(self.server.state, frame)
        try:
            sock.sendall(reply)
        except OSError:
            pass


class SelectionServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True
    request_queue_size = 128

    def __init__(self, state: CloudServerState, host: str = "127.0.0.1", port: int = 0,
                 timeout_s: float = DEFAULT_TIMEOUT_S):
        self.state = state
        self.timeout_s = timeout_s
        super().__init__((host, port), _Handler)

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[0], self.server_address[1]

    def start_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, name="selection-server", daemon=True)
        t.start()
        return t


# -------------------------------------------------------------------- config

@dataclass(frozen=True)
class ServerConfig:
    registry_path: Path
    reference_path: Path
    host: str = "127.0.0.1"
    port: int = 5050
    thresholds: SelectionThresholds = SelectionThresholds()

    def load_state(self) -> CloudServerState:
        try:
            registry = parse_registry(self.registry_path.read_text("utf-8"))
            reference = ReferenceStats.loads(self.reference_path.read_text("utf-8"))
        except OSError as exc:
            raise corpus_mod.IoFailure(str(exc)) from exc
        return CloudServerState(tuple(registry), reference, self.thresholds)


def load_server_config(path: Path) -> ServerConfig:
    path = Path(path)
    kv = _read_kv(path.read_text("utf-8"))
    base = path.parent
    for key in ("registry", "reference"):
        if key not in kv:
            raise ValueError(f"server config lacks '{key}'")
    names = {f.name for f in fields(SelectionThresholds)}
    overrides = {k: float(v) for k, v in kv.items() if k in names}
    unknown = set(kv) - names - {"registry", "reference", "host", "port"}
    if unknown:
        raise ValueError(f"unknown server config keys {sorted(unknown)}")
    return ServerConfig(base / kv["registry"], base / kv["reference"],
                        kv.get("host", "127.0.0.1"), int(kv.get("port", 5050)),
                        SelectionThresholds(**overrides))


# ----------------------------------------------------------------- training

def variant_name(spec: DegradationSpec) -> str:
    return "original" if spec.kind == "none" else spec.token().replace(":", "_")


def training_pipeline(corpus: Path, out_root: Path, plan: Sequence[DegradationSpec],
                      methods: Sequence[tuple[str, MethodFeatures]] = (),
                      latency_s: float = 0.35) -> list[str]:
    """Materialize one degraded corpus per plan entry and emit registry stub lines.

    Corpus ``k`` of the plan lands in ``out_root/<variant>``, where variant
    is ``original`` or the spec token with ``:`` replaced by ``_``.  Each
    ``(slug, features)`` in ``methods`` gets one stub line per variant with
    the measured corpus-mean ratio; training itself happens elsewhere.
    """
    lines = []
    for spec in plan:
        name = variant_name(spec)
        ratios = corpus_mod.degrade_corpus(corpus, Path(out_root) / name, spec)
        ratio = corpus_mod.mean_ratio(ratios)
        for slug, feats in methods:
            desc = ModelDescriptor(f"{slug}/{name}", feats, spec, min(max(ratio, 1e-9), 1.0), {},
                                   latency_s)
            lines.append(format_descriptor(desc))
    return lines
