"""Command-line entry point: ``mmnerf {synth,train,render,eval,ablate}``.

Failures print one JSON line ``{"error": <type>, "message": <text>}`` on
stderr and exit with status 1.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ContractError
from .losses import LossWeights
from .render import HEADS, CameraModel
from .synth import Intrinsics, SyntheticScene, TrajectorySpec, generate_dataset, lowlight_variant, orchard_scene


def _resolution(text: str):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("resolution must be positive")
    return w, h


def _scene(name: str) -> SyntheticScene:
    if name == "orchard":
        return orchard_scene()
    if name.startswith("random:"):
        from .synth import random_scene
        return random_scene(np.random.default_rng(int(name.split(":", 1)[1])))
    return SyntheticScene.load(name)


def cmd_synth(args) -> dict:
    w, h = args.res
    traj = TrajectorySpec(n_views=args.views, dt=args.dt, radius=args.radius, height=args.height)
    out = Path(args.out)
    target = out if args.rgb_gain is None else out.with_name(out.name + ".base")
    generate_dataset(_scene(args.scene), traj, Intrinsics(w, h, args.fov), target, args.event_threshold, args.seed,
                     thermal_noise=args.thermal_noise, supersample=args.supersample)
    if args.rgb_gain is not None:
        lowlight_variant(target, out, args.rgb_gain, args.noise_sigma, args.seed)
    return {"dataset": str(out), "views": args.views}


def _config(args):
    from .pipeline import TrainConfig
    cfg = TrainConfig.desk() if args.preset == "desk" else TrainConfig()
    w = LossWeights(args.w_rgb, args.w_th, args.w_reg)
    for term in args.enable or ():
        setattr(w, f"use_{term}", True)
    for term in args.disable or ():
        setattr(w, f"use_{term}", False)
    overrides = {"weights": w, "seed": args.seed, "deterministic": args.deterministic,
                 "holdout_every": args.holdout_every}
    for key, attr in (("iterations", "iters"), ("batch", "batch"), ("n_coarse", "coarse"), ("n_fine", "fine"),
                      ("lr", "lr"), ("checkpoint_every", "checkpoint_every")):
        if getattr(args, attr) is not None:
            overrides[key] = getattr(args, attr)
    d = cfg.to_dict()
    d.update(overrides)
    return TrainConfig.from_dict(d)


def cmd_train(args) -> dict:
    from .pipeline import load_dataset, train
    ds = load_dataset(args.data)
    cfg = _config(args)
    _, trace, _ = train(ds, cfg, args.out)
    if args.trace:
        Path(args.trace).write_text(json.dumps(trace.to_dict()) + "\n")
    final = trace.records[-1].total if len(trace) else None
    return {"checkpoint": str(args.out), "iterations": len(trace), "final_loss": final,
            "config_hash": cfg.hash()}


def cmd_render(args) -> dict:
    from .diffmath import load_checkpoint
    from .pipeline import render_view_file
    if args.head not in HEADS:
        raise ContractError(f"unknown head {args.head!r}; valid heads: {', '.join(HEADS)}")
    _, _, meta = load_checkpoint(args.ckpt)
    intr = meta.get("intrinsics")
    if args.pose_file:
        spec = json.loads(Path(args.pose_file).read_text())
        pose = spec["pose"] if isinstance(spec, dict) else spec
        intr = spec.get("intrinsics", intr) if isinstance(spec, dict) else intr
    else:
        poses = meta.get("poses", [])
        if not 0 <= args.frame_idx < len(poses):
            raise ContractError(f"frame index {args.frame_idx} out of range (checkpoint knows {len(poses)} frames)")
        pose = poses[args.frame_idx]
    if intr is None:
        raise ContractError("no camera intrinsics in checkpoint or pose file")
    cam = CameraModel(intr["width"], intr["height"], intr["fx"], intr["fy"], intr["cx"], intr["cy"],
                      np.asarray(pose, dtype=np.float64).reshape(4, 4))
    img = render_view_file(args.ckpt, cam, args.head, args.out, args.scale)
    return {"image": str(args.out), "width": img.shape[1], "height": img.shape[0], "head": args.head}


def cmd_eval(args) -> dict:
    from .pipeline import evaluate_checkpoint, load_dataset, write_report
    report = evaluate_checkpoint(args.ckpt, load_dataset(args.data), args.split, args.allow_mismatch)
    if args.report:
        write_report(report, args.report)
    return {"report": args.report, "mean": report["mean"]}


def cmd_ablate(args) -> dict:
    from .pipeline import TrainConfig, ablate, load_dataset
    cfg = TrainConfig.desk() if args.preset == "desk" else TrainConfig()
    if args.iters is not None:
        d = cfg.to_dict()
        d["iterations"] = args.iters
        cfg = TrainConfig.from_dict(d)
    table = ablate(load_dataset(args.data), cfg, args.out)
    return {"out": str(args.out), "rows": len(table["rows"])}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmnerf", description="multi-modal radiance field toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic multi-modal dataset")
    s.add_argument("--scene", default="orchard", help="orchard, random:<seed>, or a scene JSON file")
    s.add_argument("--views", type=int, default=23)
    s.add_argument("--res", type=_resolution, default=(64, 64), help="WxH")
    s.add_argument("--fov", type=float, default=50.0)
    s.add_argument("--event-threshold", type=float, default=0.2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dt", type=float, default=0.1)
    s.add_argument("--radius", type=float, default=3.2)
    s.add_argument("--height", type=float, default=1.2)
    s.add_argument("--supersample", type=int, default=10)
    s.add_argument("--thermal-noise", type=float, default=0.0)
    s.add_argument("--rgb-gain", type=float, help="also write a low-light variant with this RGB gain")
    s.add_argument("--noise-sigma", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path (.npz)")
    t.add_argument("--preset", choices=("desk", "full"), default="desk")
    t.add_argument("--iters", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--coarse", type=int)
    t.add_argument("--fine", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--w-rgb", type=float, default=1.0)
    t.add_argument("--w-th", type=float, default=1.0)
    t.add_argument("--w-reg", type=float, default=1.0)
    t.add_argument("--enable", action="append", choices=("rgb", "th", "reg"))
    t.add_argument("--disable", action="append", choices=("rgb", "th", "reg"))
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True)
    t.add_argument("--holdout-every", type=int, default=8)
    t.add_argument("--checkpoint-every", type=int)
    t.add_argument("--trace", help="write the per-iteration loss trace as JSON")
    t.set_defaults(fn=cmd_train)

    r = sub.add_parser("render", help="render one view of a checkpoint")
    r.add_argument("--ckpt", required=True)
    g = r.add_mutually_exclusive_group(required=True)
    g.add_argument("--frame-idx", type=int)
    g.add_argument("--pose-file")
    r.add_argument("--head", default="rgb")
    r.add_argument("--scale", type=float, default=1.0)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_render)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("holdout", "train"), default="holdout")
    e.add_argument("--report")
    e.add_argument("--allow-mismatch", action="store_true")
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate", help="train and score all six modality combinations")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--preset", choices=("desk", "full"), default="desk")
    a.add_argument("--iters", type=int)
    a.set_defaults(fn=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = args.fn(args)
    except Exception as e:  # every failure becomes one parsable line
        msg = " ".join(str(e).split())
        print(json.dumps({"error": type(e).__name__, "message": msg}), file=sys.stderr)
        return 1
    print(json.dumps(result, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
