"""``pcselect`` command line.

Exit status: 0 on success, 1 on a domain error (one ``error:`` line on
stderr), 2 on a usage error.  Machine-readable output goes to files or
stdout; diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from . import corpus, degrade, detect, evaluation, features, render, selector, service
from .pointcloud_io import (PointCloud, lidar_box_to_label, load_velodyne, write_labels)
from .protocol import ErrorReply, ModelAssignment

CLI_KINDS = ("voxel_grid", "uniform", "random", "noise")


class CliError(Exception):
    pass


def _classes(text: str) -> tuple[str, ...]:
    out = tuple(c.strip() for c in text.split(",") if c.strip())
    if not out:
        raise argparse.ArgumentTypeError("expected a comma-separated class list")
    return out


def _calib_for(calib_dir: Path | None, fid: str):
    return corpus.load_calibration(None if calib_dir is None else Path(calib_dir) / f"{fid}.txt")


def _print_decision(model_id: str, trace) -> None:
    print(f"chosen={model_id}")
    for e in trace:
        print(e.line())


# --------------------------------------------------------------- commands

def cmd_degrade(a) -> int:
    spec = degrade.DegradationSpec(a.kind, a.param, a.seed)
    ratios = corpus.degrade_corpus(a.inp, a.out, spec)
    print(f"frames={len(ratios)} mean_normalized_point_count={corpus.mean_ratio(ratios):.6f}")
    return 0


def cmd_refstats(a) -> int:
    counts = [len(c) for c in corpus.iter_clouds(a.inp)]
    stats = features.reference_stats_from_counts(counts, a.source_id or str(a.inp))
    corpus.atomic_write(a.out, stats.dumps())
    return 0


def cmd_analyze(a) -> int:
    ref = features.ReferenceStats.loads(Path(a.ref).read_text("utf-8"))
    clouds = list(corpus.iter_clouds(a.inp))
    feats = features.analyze_stream(clouds, ref, a.declared_noise,
                                    estimate_noise=a.estimate_noise, seed=a.seed)
    corpus.atomic_write(a.out, feats.to_csv())
    return 0


def _registry(path: Path | None):
    if path is None:
        return selector.load_default_registry()
    return selector.parse_registry(Path(path).read_text("utf-8"))


def cmd_select(a) -> int:
    feats = features.DataFeatures.from_csv(Path(a.features).read_text("utf-8"))
    decision = selector.select(selector.TargetData(a.classes, a.latency_budget), feats,
                               _registry(a.registry))
    _print_decision(decision.chosen.model_id, decision.branch_trace)
    return 0


def _read_detections(det_dir: Path, calib_dir: Path | None, fid: str):
    path = Path(det_dir) / f"{fid}.txt"
    if not path.exists():
        return []
    return evaluation.detections_from_labels(corpus.load_labels(path), _calib_for(calib_dir, fid))


def cmd_eval(a) -> int:
    ids = corpus.text_frame_ids(a.gt)
    gts = {fid: evaluation.ground_truth_from_labels(corpus.load_labels(Path(a.gt) / f"{fid}.txt"),
                                                    _calib_for(a.calib, fid)) for fid in ids}
    dets = {fid: _read_detections(a.det, a.calib, fid) for fid in ids}
    report = evaluation.evaluate(dets, gts)
    corpus.atomic_write(a.out, report.to_csv())
    return 0


def cmd_detect(a) -> int:
    ids = corpus.frame_ids(a.inp)
    if a.detector == "oracle":
        if a.gt is None:
            raise CliError("--detector oracle needs --gt")
        gts = {fid: evaluation.ground_truth_from_labels(
            corpus.load_labels(Path(a.gt) / f"{fid}.txt"), _calib_for(a.calib, fid))
            for fid in ids}
        det = detect.OracleDetector(gts, a.jitter, a.drop_rate, a.fp_rate, a.seed)
    else:
        det = detect.BaselineDetector()
    out = Path(a.out)
    for cloud in corpus.iter_clouds(a.inp, ids):
        calib = _calib_for(a.calib, cloud.frame_id)
        labels = [lidar_box_to_label(d.box, calib, d.class_name, d.score)
                  for d in det.detect(cloud)]
        corpus.atomic_write(out / f"{cloud.frame_id}.txt", write_labels(labels))
    return 0


def cmd_render(a) -> int:
    cloud = load_velodyne(a.cloud)
    calib = corpus.load_calibration(a.calib)
    dets = evaluation.detections_from_labels(corpus.load_labels(a.det), calib) if a.det else []
    gts = None
    if a.gt:
        gts = [g for g in evaluation.ground_truth_from_labels(corpus.load_labels(a.gt), calib)
               if not g.dontcare]
    corpus.atomic_write(a.out, render.render_bev_svg(cloud, dets, gts))
    return 0


def cmd_stats(a) -> int:
    ids = corpus.text_frame_ids(a.labels)
    stats = features.dataset_statistics(
        (corpus.load_labels(Path(a.labels) / f"{fid}.txt") for fid in ids), a.classes)
    prefix = str(a.out)
    corpus.atomic_write(Path(prefix + "_orientation.csv"), features.orientation_csv(stats))
    corpus.atomic_write(Path(prefix + "_per_frame.csv"), features.per_frame_csv(stats))
    for cls, s in stats.items():
        corpus.atomic_write(Path(f"{prefix}_heat_{cls}.csv"), features.heat_csv(s))
    return 0


def cmd_serve(a) -> int:
    cfg = service.load_server_config(a.config)
    port = cfg.port if a.port is None else a.port
    server = service.SelectionServer(cfg.load_state(), cfg.host, port)
    host, bound = server.address
    print(f"listening on {host}:{bound}", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def _host_port(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise CliError(f"--host must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def cmd_request(a) -> int:
    host, port = _host_port(a.host)
    d = corpus.velodyne_dir(a.frames)
    ids = corpus.frame_ids(a.frames)
    if a.max_frames is not None:
        ids = ids[:a.max_frames]
    blobs = [(d / f"{fid}.bin").read_bytes() for fid in ids]
    reply = service.edge_session(service.tcp_connector(host, port, a.timeout),
                                 selector.TargetData(a.classes, a.latency_budget), blobs,
                                 a.declared_noise, timeout_s=a.timeout)
    if isinstance(reply, ErrorReply):
        raise CliError(f"server refused (code {reply.code}): {reply.message}")
    assert isinstance(reply, ModelAssignment)
    _print_decision(reply.model_id, reply.branch_trace)
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcselect", description="Point cloud detector selection")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("degrade", help="degrade a corpus")
    s.add_argument("--in", dest="inp", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--kind", choices=CLI_KINDS, required=True)
    s.add_argument("--param", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("refstats", help="reference point statistics of a corpus")
    s.add_argument("--in", dest="inp", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--source-id", default="")
    s.set_defaults(func=cmd_refstats)

    s = sub.add_parser("analyze", help="data features of a frame stream")
    s.add_argument("--in", dest="inp", type=Path, required=True)
    s.add_argument("--ref", type=Path, required=True)
    s.add_argument("--declared-noise", type=float)
    s.add_argument("--estimate-noise", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("select", help="select a model for given features")
    s.add_argument("--registry", type=Path, help="registry file (default: shipped KITTI registry)")
    s.add_argument("--features", type=Path, required=True)
    s.add_argument("--classes", type=_classes, required=True)
    s.add_argument("--latency-budget", type=float)
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("eval", help="evaluate detections against ground truth")
    s.add_argument("--det", type=Path, required=True)
    s.add_argument("--gt", type=Path, required=True)
    s.add_argument("--calib", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("detect", help="run a detector over a corpus")
    s.add_argument("--in", dest="inp", type=Path, required=True)
    s.add_argument("--detector", choices=("oracle", "baseline"), required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--calib", type=Path)
    s.add_argument("--gt", type=Path, help="ground-truth labels (oracle only)")
    s.add_argument("--jitter", type=float, default=0.0)
    s.add_argument("--drop-rate", type=float, default=0.0)
    s.add_argument("--fp-rate", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("render", help="bird's-eye SVG of one frame")
    s.add_argument("--cloud", type=Path, required=True)
    s.add_argument("--det", type=Path)
    s.add_argument("--gt", type=Path)
    s.add_argument("--calib", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("stats", help="label statistics")
    s.add_argument("--labels", type=Path, required=True)
    s.add_argument("--out", required=True, help="output path prefix")
    s.add_argument("--classes", type=_classes, default=features.DEFAULT_CLASSES)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("serve", help="run the selection service")
    s.add_argument("--config", type=Path, required=True)
    s.add_argument("--port", type=int)
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("request", help="ask a selection service for a model")
    s.add_argument("--host", required=True, help="host:port")
    s.add_argument("--classes", type=_classes, required=True)
    s.add_argument("--frames", type=Path, required=True)
    s.add_argument("--latency-budget", type=float)
    s.add_argument("--declared-noise", type=float)
    s.add_argument("--max-frames", type=int)
    s.add_argument("--timeout", type=float, default=service.DEFAULT_TIMEOUT_S)
    s.set_defaults(func=cmd_request)
    return p


DOMAIN_ERRORS = (CliError, ValueError, LookupError, OSError, service.ProtocolViolation,
                 service.Timeout)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except selector.UnknownClass as exc:
        print(f"error: unknown target class {exc.args[0]!r}", file=sys.stderr)
        return 1
    except DOMAIN_ERRORS as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
