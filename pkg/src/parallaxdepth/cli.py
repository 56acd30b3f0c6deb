"""Command-line front end: JSON results on stdout, rasters on disk.

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numeric or
degenerate-geometry error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import cleaning, confidence, metrics, pairing, parallax, synth, warp
from ._parallel import THREADS_ENV, default_threads
from .config import Config, load_config
from .errors import DepthError, FormatError, ParameterError, ShapeError
from .geometry import relative_pose
from .losses import optimize_depth, total_loss
from .maps import (
    FlowMap,
    RegionMask,
    ScalarMap,
    read_mask,
    read_pfm,
    read_rgb,
    read_sequence_meta,
    write_mask,
    write_pfm,
    write_rgb,
    write_sequence_meta,
)


# --- output ----------------------------------------------------------------

def _encode(obj) -> str:
    if obj is None or isinstance(obj, bool):
        return "null" if obj is None else ("true" if obj else "false")
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return "null"
        s = format(x, ".9g")
        return "0" if s == "-0" else s
    if isinstance(obj, str):
        import json

        return json.dumps(obj)
    if isinstance(obj, dict):
        items = sorted(obj.items())
        return "{" + ", ".join(f"{_encode(str(k))}: {_encode(v)}" for k, v in items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, floats at 9 significant digits, non-finite as null."""
    return _encode(obj)


def _emit(obj) -> None:
    sys.stdout.write(dumps(obj) + "\n")


# --- loading helpers -------------------------------------------------------

def _scalar(path) -> ScalarMap:
    m = read_pfm(path)
    if not isinstance(m, ScalarMap):
        raise FormatError(f"{path}: expected a 1-channel PFM")
    return m


def _flow(path) -> FlowMap:
    m = read_pfm(path)
    if not isinstance(m, FlowMap):
        raise FormatError(f"{path}: expected a 3-channel flow PFM")
    return m


def _frames(args):
    frames = read_sequence_meta(args.poses)
    for name in ("ref", "src"):
        idx = getattr(args, name, None)
        if idx is not None and not 0 <= idx < len(frames):
            raise ParameterError(f"--{name} {idx} out of range for {args.poses} ({len(frames)} frames)")
    return frames


def _mask(path, shape) -> RegionMask:
    if path is None:
        return RegionMask.empty(*shape)
    m = read_mask(path)
    if m.shape != shape:
        raise ShapeError(f"{path}: mask {m.shape} does not match raster {shape}")
    return m


def _valid_fraction(m) -> float:
    return float(np.count_nonzero(m.valid)) / m.valid.size


# --- subcommands -----------------------------------------------------------

def cmd_synth(args, cfg: Config):
    if args.scene:
        scene = synth.read_scene(args.scene)
    else:
        scene = synth.make_scene(args.seed, args.width, args.height, args.motion, args.frames,
                                 args.baseline, not args.no_human, args.texture)
    scene = synth.with_visibility(scene)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frozen = not args.unfreeze
    interval = args.flow_interval if args.flow_interval is not None else cfg.max_interval
    n = len(scene.frames)
    for k in range(n):
        f = synth.render_frame(scene, k, frozen, args.threads)
        write_rgb(f.rgb, out / f"rgb_{k:04d}.ppm")
        write_pfm(f.depth, out / f"depth_{k:04d}.pfm")
        write_mask(f.mask, out / f"mask_{k:04d}.pgm")
    flows = []
    for r in range(n):
        for s in range(max(0, r - interval), min(n, r + interval + 1)):
            if s == r:
                continue
            write_pfm(synth.render_flow(scene, r, s, frozen, args.threads), out / f"flow_{r:04d}_{s:04d}.pfm")
            flows.append([r, s])
    write_sequence_meta(list(scene.frames), out / "poses.json", width=scene.width, height=scene.height)
    _emit({"frames": n, "flows": flows, "width": scene.width, "height": scene.height, "out": str(out)})


def cmd_pair(args, cfg: Config):
    frames = read_sequence_meta(args.poses)
    _emit(pairing.select_all(frames, cfg.pairing))


def cmd_triangulate(args, cfg: Config):
    frames = _frames(args)
    flow = _flow(args.flow)
    mask = _mask(args.mask, flow.shape)
    rel = relative_pose(frames[args.ref], frames[args.src])
    depth = parallax.flow_to_depth(flow, rel, frames[args.ref], frames[args.src], mask, args.threads)
    excluded = parallax.epipole_exclusion(flow.shape, rel, frames[args.ref], cfg.radius_frac)
    if args.exclude_epipole:
        depth = depth.with_validity(depth.valid & ~excluded)
    write_pfm(depth, args.out)
    _emit({"out": args.out, "valid_fraction": _valid_fraction(depth),
           "epipole_excluded": int(np.count_nonzero(excluded))})


def cmd_confidence(args, cfg: Config):
    frames = _frames(args)
    fwd, bwd = _flow(args.flow), _flow(args.backward)
    mask = _mask(args.mask, fwd.shape)
    cam_r, cam_s = frames[args.ref], frames[args.src]
    rel = relative_pose(cam_r, cam_s)
    params = cfg.confidence
    clr = confidence.c_lr(fwd, bwd)
    cep = confidence.c_ep(fwd, rel, cam_r, cam_s, params)
    cpa = confidence.c_pa(fwd, rel, cam_r, cam_s, params)
    conf = confidence.compose_confidence(clr, cep, cpa, mask, params)
    write_pfm(conf, args.out)
    result = {"out": args.out, "valid_fraction": _valid_fraction(conf),
              "mean_confidence": float(conf.values[conf.valid].mean()) if conf.valid.any() else None}
    if args.depth:
        masked = confidence.mask_depth(_scalar(args.depth), conf)
        write_pfm(masked, args.depth_out)
        result["depth_out"] = args.depth_out
        result["depth_valid_fraction"] = _valid_fraction(masked)
    _emit(result)


def cmd_clean(args, cfg: Config):
    delta = cfg.delta if args.delta is None else args.delta
    mvs, pp = _scalar(args.mvs), _scalar(args.pp)
    cleaned = cleaning.clean_depth(mvs, pp, delta)
    write_pfm(cleaned, args.out)
    before = np.count_nonzero(mvs.valid)
    frac = _valid_fraction(cleaned)
    _emit({
        "out": args.out,
        "removed_fraction": (before - np.count_nonzero(cleaned.valid)) / before if before else 0.0,
        "valid_fraction": frac,
        "keep_frame": cleaning.filter_frame(frac),
    })


def cmd_loss(args, cfg: Config):
    pred, gt = _scalar(args.pred), _scalar(args.gt)
    image = read_rgb(args.image)
    report = total_loss(pred, gt, image, cfg.loss)
    if args.gradient_out:
        write_pfm(report.gradient, args.gradient_out)
    _emit(report.as_dict())


def cmd_optimize(args, cfg: Config):
    init, gt = _scalar(args.init), _scalar(args.gt)
    image = read_rgb(args.image)
    res = optimize_depth(init, gt, image, cfg.loss, args.steps, args.step_size, args.final_step_ratio)
    write_pfm(res.depth, args.out)
    _emit({"out": args.out, "steps": args.steps, "initial_loss": res.trace[0], "final_loss": res.trace[-1]})


def cmd_metrics(args, cfg: Config):
    pred, gt = _scalar(args.pred), _scalar(args.gt)
    _emit(metrics.evaluate(pred, gt, _mask(args.mask, pred.shape)))


def cmd_warp(args, cfg: Config):
    frames = _frames(args)
    image, depth = read_rgb(args.image), _scalar(args.depth)
    rel = relative_pose(frames[args.ref], frames[args.src])
    rep = warp.reproject(image, depth, rel, frames[args.ref], frames[args.src])
    write_rgb(rep.rgb, args.out)
    if args.coverage_out:
        write_mask(RegionMask(rep.coverage.valid), args.coverage_out)
    _emit({"out": args.out, "coverage_fraction": _valid_fraction(rep.coverage)})


def cmd_remove_people(args, cfg: Config):
    frames = read_sequence_meta(args.poses)
    n = len(args.images)
    if not (len(args.depths) == len(args.masks) == n == len(frames)):
        raise ParameterError("--images, --depths, --masks and the poses file must list the same number of frames")
    seq = [(read_rgb(i), _scalar(d), read_mask(m), cam)
           for i, d, m, cam in zip(args.images, args.depths, args.masks, frames)]
    if not 0 <= args.target < n:
        raise ParameterError(f"--target {args.target} out of range")
    res = warp.remove_people(seq, args.target, args.window)
    write_rgb(res.rgb, args.out)
    if args.residual_out:
        write_mask(RegionMask(res.residual), args.residual_out)
    human = int(np.count_nonzero(seq[args.target][2].human))
    _emit({"out": args.out, "human_pixels": human, "unfilled_pixels": int(np.count_nonzero(res.residual))})


def cmd_defocus(args, cfg: Config):
    image, depth = read_rgb(args.image), _scalar(args.depth)
    write_rgb(warp.defocus(image, depth, args.focus, args.max_radius), args.out)
    _emit({"out": args.out})


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parallaxdepth", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON file overriding default thresholds")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default: ${THREADS_ENV} or all cores)")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def pose_args(sp, src=True):
        sp.add_argument("--poses", required=True)
        sp.add_argument("--ref", type=int, required=True)
        if src:
            sp.add_argument("--src", type=int, required=True)

    sp = sub.add_parser("synth", help="render a synthetic trajectory")
    sp.add_argument("--scene", help="scene JSON; omit to generate a seeded demo scene")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--width", type=int, default=64)
    sp.add_argument("--height", type=int, default=64)
    sp.add_argument("--frames", type=int, default=5)
    sp.add_argument("--motion", choices=["sideways", "forward", "diagonal"], default="sideways")
    sp.add_argument("--baseline", type=float, default=0.1)
    sp.add_argument("--texture", choices=["sine", "checker", "flat"], default="sine")
    sp.add_argument("--no-human", action="store_true")
    sp.add_argument("--unfreeze", action="store_true", help="let human primitives move")
    sp.add_argument("--flow-interval", type=int, default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("pair", help="select a source keyframe for every frame")
    sp.add_argument("--poses", required=True)
    sp.set_defaults(func=cmd_pair)

    sp = sub.add_parser("triangulate", help="depth from flow and poses")
    sp.add_argument("--flow", required=True)
    pose_args(sp)
    sp.add_argument("--mask")
    sp.add_argument("--exclude-epipole", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_triangulate)

    sp = sub.add_parser("confidence", help="confidence map from forward/backward flow")
    sp.add_argument("--flow", required=True)
    sp.add_argument("--backward", required=True)
    pose_args(sp)
    sp.add_argument("--mask")
    sp.add_argument("--depth", help="parallax depth to mask with the confidence validity")
    sp.add_argument("--depth-out")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_confidence)

    sp = sub.add_parser("clean", help="remove MVS depth inconsistent with parallax depth")
    sp.add_argument("--mvs", required=True)
    sp.add_argument("--pp", required=True)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_clean)

    sp = sub.add_parser("loss", help="evaluate the scale-invariant objective")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--gradient-out")
    sp.set_defaults(func=cmd_loss)

    sp = sub.add_parser("optimize", help="fit depth to ground truth by gradient descent")
    sp.add_argument("--init", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--steps", type=int, default=2000)
    sp.add_argument("--step-size", type=float, default=0.5)
    sp.add_argument("--final-step-ratio", type=float, default=1e-6)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("metrics", help="region si-RMSE and aligned RMSE/Rel")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--mask")
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("warp", help="reproject an image through its depth")
    sp.add_argument("--image", required=True)
    sp.add_argument("--depth", required=True)
    pose_args(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--coverage-out")
    sp.set_defaults(func=cmd_warp)

    sp = sub.add_parser("remove-people", help="fill human pixels from later frames")
    sp.add_argument("--poses", required=True)
    sp.add_argument("--images", nargs="+", required=True)
    sp.add_argument("--depths", nargs="+", required=True)
    sp.add_argument("--masks", nargs="+", required=True)
    sp.add_argument("--target", type=int, default=0)
    sp.add_argument("--window", type=int, default=200)
    sp.add_argument("--out", required=True)
    sp.add_argument("--residual-out")
    sp.set_defaults(func=cmd_remove_people)

    sp = sub.add_parser("defocus", help="synthetic depth-of-field")
    sp.add_argument("--image", required=True)
    sp.add_argument("--depth", required=True)
    sp.add_argument("--focus", type=float, required=True)
    sp.add_argument("--max-radius", type=float, default=4.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_defocus)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    if args.threads is None:
        args.threads = default_threads()
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except DepthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: no such file", file=sys.stderr)
        return 3
    return 0


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
