"""Command line for the denoising hook.

`run` drives a full transfer against a live engine; `dump` saves plain-run
feature taps for offline experiments.  Images are PPM (P6); masks are u8
tensor files at image resolution.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import tensorfile
from .config import HookConfig
from .errors import HookError
from .pipeline import TransferObject, dump_features, run_transfer
from .synthetic import SyntheticBackend


def _range(text):
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}")
    return (int(parts[0]), int(parts[1]))


def _host_port(text):
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


def _config_from_args(args) -> HookConfig:
    host, port = args.engine
    return HookConfig(
        model_id=args.model,
        steps=args.steps,
        tap_layers=tuple(int(v) for v in args.tap_layers.split(",") if v.strip()),
        tap_point=args.tap_point,
        inject_t_range=args.inject_range,
        adain_t_range=args.adain_range,
        readout_t=args.readout_t,
        readout_block=args.readout_block,
        epsilon=args.epsilon,
        engine_host=host,
        engine_port=port,
        seed=args.seed,
        device=args.device,
    )


def _backend_from_args(args, config: HookConfig):
    if args.backend == "synthetic":
        return SyntheticBackend(steps=config.steps, image_size=args.image_size,
                                tap_point=config.tap_point, seed=config.seed)
    from .sd import StableDiffusionBackend

    return StableDiffusionBackend(model_id=config.model_id, steps=config.steps,
                                  image_size=args.image_size or 512,
                                  tap_point=config.tap_point, seed=config.seed,
                                  device=config.device)


def _read_mask(path) -> np.ndarray:
    arr = tensorfile.read(path)
    if arr.ndim != 2:
        raise HookError(f"{path}: mask must be a 2-D u8 tensor")
    return arr != 0


def cmd_run(args) -> int:
    config = _config_from_args(args)
    backend = _backend_from_args(args, config)
    target = tensorfile.read_ppm(args.target)
    objects = [
        TransferObject(ref_image=tensorfile.read_ppm(ref),
                       ref_mask=_read_mask(ref_mask),
                       target_mask=_read_mask(target_mask))
        for ref, ref_mask, target_mask in args.object
    ]
    result = run_transfer(backend, target, objects, config, dump_dir=args.dump_dir)
    tensorfile.write_ppm(args.out, result.image)
    print(f"wrote {args.out}")
    if args.flow_out and result.flow_displacement is not None:
        tensorfile.write(args.flow_out + ".disp.eft", result.flow_displacement)
        tensorfile.write(args.flow_out + ".valid.eft",
                         result.flow_validity.astype(np.uint8))
        print(f"wrote {args.flow_out}.disp.eft / .valid.eft")
    if args.dump_dir:
        print(f"dumped {len(result.dumps)} tensors to {args.dump_dir}")
    return 0


def cmd_dump(args) -> int:
    config = _config_from_args(args)
    backend = _backend_from_args(args, config)
    image = tensorfile.read_ppm(args.image)
    t_values = ([int(v) for v in args.t_values.split(",") if v.strip()]
                if args.t_values else None)
    written = dump_features(backend, image, config, args.out_dir, t_values=t_values)
    print(f"wrote {len(written)} tensor files to {args.out_dir}")
    return 0


def _add_config_flags(p):
    p.add_argument("--engine", type=_host_port, default=("127.0.0.1", 7763),
                   help="engine address HOST:PORT")
    p.add_argument("--backend", choices=("synthetic", "sd"), default="synthetic")
    p.add_argument("--model", default="runwayml/stable-diffusion-v1-5")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--image-size", type=int, default=64,
                   help="working resolution (512 for the sd backend)")
    p.add_argument("--tap-layers", default="2,3", help="up-block indices to tap")
    p.add_argument("--tap-point", choices=("before", "after"), default="before")
    p.add_argument("--inject-range", type=_range, default=(42, 100),
                   help="inclusive timestep range; lo>hi disables injection")
    p.add_argument("--adain-range", type=_range, default=(82, 100),
                   help="inclusive timestep range; lo>hi disables AdaIN")
    p.add_argument("--readout-t", type=int, default=92)
    p.add_argument("--readout-block", type=int, default=2)
    p.add_argument("--epsilon", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--device", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdhook", description="Denoising-loop client for the feature transfer engine.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a transfer against a live engine")
    p.add_argument("--target", required=True, help="target image (PPM)")
    p.add_argument("--object", nargs=3, action="append", required=True,
                   metavar=("REF_IMAGE", "REF_MASK", "TARGET_MASK"))
    p.add_argument("--out", required=True, help="output image (PPM)")
    p.add_argument("--flow-out", default=None,
                   help="prefix for the readout flow tensor files")
    p.add_argument("--dump-dir", default=None,
                   help="save per-step feature dumps of active matches")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("dump", help="save plain-run feature taps")
    p.add_argument("--image", required=True, help="input image (PPM)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--t-values", default=None,
                   help="comma-separated engine timesteps to keep (default all)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_dump)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        code = args.func(args)
    except (HookError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        code = 2
    if argv is None:
        sys.exit(code)
    return code
