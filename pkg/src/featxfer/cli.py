"""Operator command line: offline matching/transfer on tensor files,
evaluation batteries over manifests, flow rendering, oracle self-check,
microbenchmarks, and the streaming server.

Exit codes: 0 success, 1 property/check failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
import zlib

import numpy as np

from .core import DepthMap, EmbeddingVector, FeatureMap, ObjectMask, SessionConfig
from .errors import EngineError, ParseError
from .matching import masked_cosine_match
from .metrics import (
    bhattacharyya,
    clip_appearance_score,
    color_histogram,
    depth_rmse,
    flow_l1,
    keypoint_ap,
    miou,
    normalize_depth,
    oks,
)
from .selfcheck import run_selfcheck
from .transfer import ObjectPair, transfer_step
from . import tensorio

DEFAULT_HOST = os.environ.get("FEATXFER_HOST", "127.0.0.1")
DEFAULT_PORT = int(os.environ.get("FEATXFER_PORT", "7763"))


def _positive_int(value):
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def _fraction(value):
    f = float(value)
    if not 0.0 < f <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in (0, 1], got {f}")
    return f


def parse_config_file(path) -> SessionConfig:
    """Parse "key=value" lines mirroring SessionConfig field names.

    Ranges are "lo,hi"; the layer set is a comma-separated id list.
    """
    values = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value

    def int_pair(text):
        parts = text.split(",")
        if len(parts) != 2:
            raise ParseError(f"expected 'lo,hi', got {text!r}")
        return (int(parts[0]), int(parts[1]))

    kwargs = {}
    try:
        for key, value in values.items():
            if key == "total_steps":
                kwargs[key] = int(value)
            elif key in ("inject_t_range", "adain_t_range"):
                kwargs[key] = int_pair(value)
            elif key == "inject_layers":
                kwargs[key] = frozenset(int(v) for v in value.split(",") if v.strip())
            elif key in ("readout_t", "readout_layer"):
                kwargs[key] = int(value)
            elif key == "epsilon":
                kwargs[key] = float(value)
            else:
                raise ParseError(f"unknown config key {key!r}")
    except ValueError as e:
        raise ParseError(f"bad config value: {e}") from e
    return SessionConfig(**kwargs).validate()


def _read_feature_map(path) -> FeatureMap:
    arr = tensorio.read_tensor(path)
    if arr.ndim != 3 or arr.dtype != np.float32:
        raise ParseError(f"{path}: expected f32 h x w x c tensor, got {arr.dtype} ndim={arr.ndim}")
    return FeatureMap(arr)


def _read_mask(path) -> ObjectMask:
    arr = tensorio.read_tensor(path)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise ParseError(f"{path}: expected u8 h x w mask, got {arr.dtype} ndim={arr.ndim}")
    return ObjectMask(arr != 0)


def _read_depth(path) -> DepthMap:
    arr = tensorio.read_tensor(path)
    if arr.ndim != 2 or arr.dtype != np.float32:
        raise ParseError(f"{path}: expected f32 h x w depth, got {arr.dtype} ndim={arr.ndim}")
    return DepthMap(arr)


def _read_embedding(path) -> EmbeddingVector:
    arr = tensorio.read_tensor(path)
    if arr.ndim != 1 or arr.dtype != np.float32:
        raise ParseError(f"{path}: expected f32 vector, got {arr.dtype} ndim={arr.ndim}")
    return EmbeddingVector(arr)


# --- commands -----------------------------------------------------------------

def cmd_match(args) -> int:
    target = _read_feature_map(args.target)
    reference = _read_feature_map(args.reference)
    m_target = _read_mask(args.target_mask)
    m_ref = _read_mask(args.ref_mask)
    corr = masked_cosine_match(target, reference, m_target, m_ref, args.epsilon)
    tensorio.write_correspondence(args.out, corr)
    return 0


def cmd_transfer(args) -> int:
    target = _read_feature_map(args.target)
    config = parse_config_file(args.config) if args.config else SessionConfig()
    objects = [
        ObjectPair(_read_feature_map(ref), _read_mask(ref_mask), _read_mask(target_mask))
        for ref, ref_mask, target_mask in args.refs
    ]
    out = transfer_step(target, objects, config, args.t, args.layer)
    tensorio.write_tensor(args.out, np.array(out.data))
    return 0


_EVAL_ROLES = {
    "hist": ("gt_image", "out_image", "gt_mask", "out_mask"),
    "clip": ("gt_embed", "out_embed"),
    "depth": ("gt_depth", "out_depth", "mask"),
    "miou": ("gt_mask", "out_mask"),
    "oks": ("pred_keypoints", "gt_keypoints"),
    "flow": ("pred_flow", "pred_validity", "gt_flow", "gt_validity"),
}


def _read_manifest(path, required_roles):
    """Manifest grammar: one "id<TAB>role<TAB>path" triple per line."""
    samples: dict[str, dict[str, str]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise ParseError(f"{path}:{lineno}: expected id<TAB>role<TAB>path")
            sample_id, role, file_path = cols
            if role not in required_roles:
                raise ParseError(
                    f"{path}:{lineno}: unknown role {role!r}, expected one of {required_roles}")
            samples.setdefault(sample_id, {})[role] = file_path
    return samples


def _eval_sample(subcommand, files, bins):
    if subcommand == "hist":
        h_gt = color_histogram(tensorio.read_ppm(files["gt_image"]),
                               _read_mask(files["gt_mask"]), bins)
        h_out = color_histogram(tensorio.read_ppm(files["out_image"]),
                                _read_mask(files["out_mask"]), bins)
        return bhattacharyya(h_gt, h_out)
    if subcommand == "clip":
        return clip_appearance_score([_read_embedding(files["gt_embed"])],
                                     [_read_embedding(files["out_embed"])])
    if subcommand == "depth":
        # depth maps are min-max normalized per image before RMSE so
        # different estimators compare on a common scale
        return depth_rmse(normalize_depth(_read_depth(files["gt_depth"])),
                          normalize_depth(_read_depth(files["out_depth"])),
                          _read_mask(files["mask"]))
    if subcommand == "miou":
        return miou([_read_mask(files["gt_mask"])], [_read_mask(files["out_mask"])])
    if subcommand == "oks":
        return oks(tensorio.read_keypoints(files["pred_keypoints"]),
                   tensorio.read_keypoints(files["gt_keypoints"]))
    if subcommand == "flow":
        return flow_l1(tensorio.read_flow(files["pred_flow"], files["pred_validity"]),
                       tensorio.read_flow(files["gt_flow"], files["gt_validity"]))
    raise ParseError(f"unknown eval subcommand {subcommand!r}")


def cmd_eval(args) -> int:
    roles = _EVAL_ROLES[args.metric]
    samples = _read_manifest(args.manifest, roles)
    lines = []
    values = []
    for sample_id in sorted(samples):
        files = samples[sample_id]
        try:
            missing = [r for r in roles if r not in files]
            if missing:
                raise ParseError(f"missing roles {missing}")
            value = _eval_sample(args.metric, files, args.bins)
        except (EngineError, OSError) as e:
            lines.append(f"{sample_id}\tERROR\t{type(e).__name__}")
            continue
        values.append(value)
        lines.append(f"{sample_id}\t{value:.6f}")
    if values:
        lines.append(f"MEAN\t{float(np.mean(values)):.6f}")
    else:
        lines.append("MEAN\tERROR\tEmptyList")
    if args.metric == "oks" and values:
        lines.append(f"AP\t{keypoint_ap(values):.6f}")
    report = "\n".join(lines) + "\n"
    with open(args.report, "w", encoding="utf-8") as f:
        f.write(report)
    sys.stdout.write(report)
    return 0


def cmd_render_flow(args) -> int:
    corr = tensorio.read_correspondence(args.corr)
    ref_image = tensorio.read_ppm(args.ref_image)
    tensorio.write_ppm(args.out, tensorio.render_correspondence(corr, ref_image))
    return 0


def cmd_selfcheck(args) -> int:
    report = run_selfcheck(args.seeds, args.max_dim)
    print(f"selfcheck: {report.passed} passed, {report.failed} failed "
          f"({args.seeds} seeds, max dim {args.max_dim})")
    for name in report.failures[:20]:
        print(f"  FAIL {name}")
    return 0 if report.ok else 1


def cmd_bench(args) -> int:
    rng = np.random.default_rng(args.seed)
    target = FeatureMap(rng.standard_normal((args.h, args.w, args.c)).astype(np.float32))
    reference = FeatureMap(rng.standard_normal((args.h, args.w, args.c)).astype(np.float32))

    def mask():
        bits = rng.random((args.h, args.w)) < args.mask_fill
        if not bits.any():
            bits[0, 0] = True
        return ObjectMask(bits)

    m_target, m_ref = mask(), mask()
    corr = masked_cosine_match(target, reference, m_target, m_ref)  # warmup
    latencies = []
    for i in range(args.iters):
        t0 = time.perf_counter()
        corr = masked_cosine_match(target, reference, m_target, m_ref)
        dt = time.perf_counter() - t0
        latencies.append(dt)
        print(f"iter {i}: {dt * 1e3:.3f} ms")
    mean = float(np.mean(latencies))
    queries = m_target.count
    print(f"mean latency: {mean * 1e3:.3f} ms over {args.iters} iters")
    print(f"matches/sec: {queries / mean:.1f} ({queries} masked queries/call)")
    checksum = zlib.crc32(np.ascontiguousarray(corr.entries).tobytes())
    print(f"checksum: 0x{checksum:08x}")
    return 0


def cmd_serve(args) -> int:
    from .server import EngineServer

    server = EngineServer(args.host, args.port)
    host, port = server.address
    print(f"listening on {host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="featxfer",
        description="Masked dense matching, feature transfer, and evaluation over tensor files.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("match", help="offline single-shot masked matching")
    p.add_argument("--target", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--target-mask", required=True)
    p.add_argument("--ref-mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epsilon", type=float, default=1e-8)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("transfer", help="offline per-step transfer over files")
    p.add_argument("--target", required=True)
    p.add_argument("--refs", nargs=3, action="append", required=True,
                   metavar=("REF", "REF_MASK", "TARGET_MASK"))
    p.add_argument("--config", default=None, help="key=value session config file")
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("eval", help="evaluation battery over a manifest")
    p.add_argument("metric", choices=sorted(_EVAL_ROLES))
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--bins", type=_positive_int, default=8,
                   help="histogram bins per channel (hist only)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render-flow", help="paint matched pixels with reference colors")
    p.add_argument("--corr", required=True)
    p.add_argument("--ref-image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render_flow)

    p = sub.add_parser("selfcheck", help="randomized oracle battery")
    p.add_argument("--seeds", type=_positive_int, default=100)
    p.add_argument("--max-dim", type=_positive_int, default=16)
    p.set_defaults(func=cmd_selfcheck)

    p = sub.add_parser("bench", help="matching kernel microbenchmark")
    p.add_argument("--h", type=_positive_int, default=64)
    p.add_argument("--w", type=_positive_int, default=64)
    p.add_argument("--c", type=_positive_int, default=640)
    p.add_argument("--mask-fill", type=_fraction, default=1.0)
    p.add_argument("--iters", type=_positive_int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="run the streaming engine server")
    p.add_argument("--host", default=DEFAULT_HOST)
    p.add_argument("--port", type=int, default=DEFAULT_PORT)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        code = args.func(args)
    except (EngineError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        code = 2
    if argv is None:
        sys.exit(code)
    return code
