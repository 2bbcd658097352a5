"""Binary wire format between the edge client and the selection service.

Frame layout (all integers big-endian)::

    0x50 0x43 | version 0x01 | type | u32 payload length | payload

Types: 0x01 SelectionRequest, 0x02 FeatureReport, 0x03 ModelAssignment,
0x04 ErrorReply, 0x05 Ack.  Payload field encodings:

    string    u16 byte length + UTF-8
    real      IEEE-754 binary64
    list      u32 count + elements
    optional  presence byte (0 or 1) + value
    blob      u32 byte length + bytes

Payloads, field by field:

    SelectionRequest  classes: list<string>, latency_budget_s: optional<real>,
                      sample_frames: list<blob>, declared_noise_sigma: optional<real>
    FeatureReport     normalized_point_count: real, noise_sigma: optional<real>,
                      frames_analyzed: u32
    ModelAssignment   model_id: string,
                      method: string method_id, u8 stages, string stage1,
                              string stage2, string box_strategy,
                      train: u8 kind index, real param, u64 seed,
                      branch_trace: list<string branch, string option, string reason>,
                      weights: optional<blob>
    ErrorReply        code: u16, message: string
    Ack               (empty)

Degradation kind indices: 0 none, 1 voxel_grid, 2 uniform, 3 random,
4 gaussian_noise.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Union

from .degrade import KINDS, DegradationSpec
from .features import DataFeatures
from .selector import MethodFeatures, TraceEntry

MAGIC = b"PC"
VERSION = 1
HEADER = struct.Struct(">2sBBI")
HEADER_SIZE = HEADER.size  # 8

T_REQUEST, T_FEATURES, T_ASSIGNMENT, T_ERROR, T_ACK = 1, 2, 3, 4, 5

ERR_NO_CANDIDATE = 1
ERR_BAD_REQUEST = 2
ERR_INTERNAL = 3


class WireError(ValueError):
    pass


class BadMagic(WireError):
    pass


class UnsupportedVersion(WireError):
    pass


class Truncated(WireError):
    pass


class UnknownType(WireError):
    pass


class TrailingBytes(WireError):
    pass


class MalformedPayload(WireError):
    """Complete frame whose payload violates a field rule (bad UTF-8, bad enum...)."""


@dataclass(frozen=True)
class SelectionRequest:
    target_classes: tuple[str, ...]
    latency_budget_s: float | None = None
    sample_frames: tuple[bytes, ...] = ()
    declared_noise_sigma: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "target_classes", tuple(self.target_classes))
        object.__setattr__(self, "sample_frames", tuple(bytes(b) for b in self.sample_frames))


@dataclass(frozen=True)
class FeatureReport:
    features: DataFeatures


@dataclass(frozen=True)
class ModelAssignment:
    model_id: str
    method: MethodFeatures
    train: DegradationSpec
    branch_trace: tuple[TraceEntry, ...] = ()
    weights: bytes | None = None

    def __post_init__(self):
        object.__setattr__(self, "branch_trace", tuple(self.branch_trace))


@dataclass(frozen=True)
class ErrorReply:
    code: int
    message: str


@dataclass(frozen=True)
class Ack:
    pass


WireMessage = Union[SelectionRequest, FeatureReport, ModelAssignment, ErrorReply, Ack]


# ------------------------------------------------------------------ writing

class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def u8(self, v: int):
        self.parts.append(struct.pack(">B", v))

    def u16(self, v: int):
        self.parts.append(struct.pack(">H", v))

    def u32(self, v: int):
        self.parts.append(struct.pack(">I", v))

    def u64(self, v: int):
        self.parts.append(struct.pack(">Q", v))

    def real(self, v: float):
        self.parts.append(struct.pack(">d", v))

    def string(self, s: str):
        raw = s.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError("string longer than 65535 bytes")
        self.u16(len(raw))
        self.parts.append(raw)

    def blob(self, b: bytes):
        self.u32(len(b))
        self.parts.append(bytes(b))

    def opt_real(self, v: float | None):
        self.u8(v is not None)
        if v is not None:
            self.real(v)

    def payload(self) -> bytes:
        return b"".join(self.parts)


def _encode_payload(msg: WireMessage) -> tuple[int, bytes]:
    w = _Writer()
    if isinstance(msg, SelectionRequest):
        w.u32(len(msg.target_classes))
        for c in msg.target_classes:
            w.string(c)
        w.opt_real(msg.latency_budget_s)
        w.u32(len(msg.sample_frames))
        for b in msg.sample_frames:
            w.blob(b)
        w.opt_real(msg.declared_noise_sigma)
        return T_REQUEST, w.payload()
    if isinstance(msg, FeatureReport):
        f = msg.features
        w.real(f.normalized_point_count)
        w.opt_real(f.noise_sigma)
        w.u32(f.frames_analyzed)
        return T_FEATURES, w.payload()
    if isinstance(msg, ModelAssignment):
        w.string(msg.model_id)
        m = msg.method
        w.string(m.method_id)
        w.u8(m.num_stages)
        w.string(m.stage1_unit)
        w.string(m.stage2_unit)
        w.string(m.box_strategy)
        w.u8(KINDS.index(msg.train.kind))
        w.real(msg.train.param)
        w.u64(msg.train.seed)
        w.u32(len(msg.branch_trace))
        for e in msg.branch_trace:
            w.string(e.branch)
            w.string(e.option)
            w.string(e.reason)
        w.u8(msg.weights is not None)
        if msg.weights is not None:
            w.blob(msg.weights)
        return T_ASSIGNMENT, w.payload()
    if isinstance(msg, ErrorReply):
        w.u16(msg.code)
        w.string(msg.message)
        return T_ERROR, w.payload()
    if isinstance(msg, Ack):
        return T_ACK, b""
    raise TypeError(f"not a wire message: {type(msg).__name__}")


def encode(msg: WireMessage) -> bytes:
    mtype, payload = _encode_payload(msg)
    return HEADER.pack(MAGIC, VERSION, mtype, len(payload)) + payload


# ------------------------------------------------------------------ reading

class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedPayload("field runs past the end of the payload")
        out = self.data[self.pos:self.pos + n].tobytes()
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def real(self) -> float:
        return struct.unpack(">d", self.take(8))[0]

    def string(self) -> str:
        raw = self.take(self.u16())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedPayload(f"invalid UTF-8: {exc}") from None

    def blob(self) -> bytes:
        return self.take(self.u32())

    def flag(self) -> bool:
        b = self.u8()
        if b > 1:
            raise MalformedPayload(f"presence byte must be 0 or 1, got {b}")
        return bool(b)

    def opt_real(self) -> float | None:
        return self.real() if self.flag() else None

    def count(self, min_item: int) -> int:
        n = self.u32()
        if n * min_item > len(self.data) - self.pos:
            raise MalformedPayload("list count exceeds the payload")
        return n


def _decode_payload(mtype: int, payload: bytes) -> WireMessage:
    r = _Reader(payload)
    try:
        if mtype == T_REQUEST:
            classes = tuple(r.string() for _ in range(r.count(2)))
            budget = r.opt_real()
            frames = tuple(r.blob() for _ in range(r.count(4)))
            msg = SelectionRequest(classes, budget, frames, r.opt_real())
        elif mtype == T_FEATURES:
            msg = FeatureReport(DataFeatures(r.real(), r.opt_real(), r.u32()))
        elif mtype == T_ASSIGNMENT:
            model_id = r.string()
            method = MethodFeatures(r.string(), r.u8(), r.string(), r.string(), r.string())
            kind = r.u8()
            if kind >= len(KINDS):
                raise MalformedPayload(f"unknown degradation kind index {kind}")
            train = DegradationSpec(KINDS[kind], r.real(), r.u64())
            trace = tuple(TraceEntry(r.string(), r.string(), r.string()) for _ in range(r.count(6)))
            weights = r.blob() if r.flag() else None
            msg = ModelAssignment(model_id, method, train, trace, weights)
        elif mtype == T_ERROR:
            msg = ErrorReply(r.u16(), r.string())
        elif mtype == T_ACK:
            msg = Ack()
        else:
            raise UnknownType(f"unknown message type 0x{mtype:02x}")
    except WireError:
        raise
    except ValueError as exc:
        # domain validation of a decoded field
        raise MalformedPayload(str(exc)) from None
    if r.pos != len(payload):
        raise MalformedPayload(f"{len(payload) - r.pos} unread payload bytes")
    return msg


def parse_header(header: bytes) -> tuple[int, int]:
    """Validate an 8-byte header; returns ``(type, payload_length)``."""
    if len(header) < HEADER_SIZE:
        # check what is present before complaining about length
        if header[:2] != MAGIC[:len(header[:2])]:
            raise BadMagic(f"bad magic {header[:2].hex()}")
        if len(header) > 2 and header[2] != VERSION:
            raise UnsupportedVersion(f"version {header[2]}")
        raise Truncated(f"header needs {HEADER_SIZE} bytes, got {len(header)}")
    magic, version, mtype, length = HEADER.unpack(header[:HEADER_SIZE])
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic.hex()}")
    if version != VERSION:
        raise UnsupportedVersion(f"version {version}")
    if not T_REQUEST <= mtype <= T_ACK:
        raise UnknownType(f"unknown message type 0x{mtype:02x}")
    return mtype, length


def decode(data: bytes) -> WireMessage:
    """Decode exactly one frame; anything short raises Truncated, anything extra TrailingBytes."""
    data = bytes(data)
    mtype, length = parse_header(data[:HEADER_SIZE])
    end = HEADER_SIZE + length
    if len(data) < end:
        raise Truncated(f"payload needs {length} bytes, got {len(data) - HEADER_SIZE}")
    if len(data) > end:
        raise TrailingBytes(f"{len(data) - end} bytes after the frame")
    return _decode_payload(mtype, data[HEADER_SIZE:end])


def decode_payload(mtype: int, payload: bytes) -> WireMessage:
    return _decode_payload(mtype, payload)
