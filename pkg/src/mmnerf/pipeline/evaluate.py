"""Rendering trained models, scoring them and running the modality ablation."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ContractError
from ..field import SceneModel
from ..losses import ABLATIONS, PSNR_CAP, psnr, ssim
from ..render import HEADS, CameraModel, RenderSettings, render_image, write_png
from .config import TrainConfig
from .dataset import SceneDataset
from .train import checkpoint_meta, load_model, train

# xspec is scored against each of these references separately
XSPEC_REFS = ("thermal", "rgb", "events")


def _settings_from_meta(meta: dict) -> RenderSettings:
    cfg = meta.get("train_config", {})
    s = RenderSettings(n_coarse=cfg.get("n_coarse", 64), n_fine=cfg.get("n_fine", 64))
    if "background" in meta:
        s.background = {k: tuple(v) for k, v in meta["background"].items()}
    return s


def render_view(model: SceneModel, camera: CameraModel, head: str = "rgb",
                settings: RenderSettings | None = None) -> np.ndarray:
    if head not in HEADS:
        raise ContractError(f"unknown head {head!r}; valid heads: {', '.join(HEADS)}")
    return render_image(model, camera, settings or RenderSettings())[head]


def render_view_file(checkpoint, camera: CameraModel, head: str, out_png, scale: float = 1.0) -> np.ndarray:
    """Render one head of a checkpoint at ``scale`` times ``camera``'s resolution into a PNG."""
    if head not in HEADS:
        raise ContractError(f"unknown head {head!r}; valid heads: {', '.join(HEADS)}")
    model, meta = load_model(checkpoint)
    img = render_view(model, camera.scaled(scale) if scale != 1 else camera, head, _settings_from_meta(meta))
    write_png(out_png, img)
    return img


def score(pred, ref) -> dict:
    return {"psnr": psnr(pred, ref, cap=PSNR_CAP), "ssim": ssim(pred, ref)}


def score_view(pred_rgb, pred_xspec, refs: dict) -> dict:
    """Metrics for one view.  ``refs`` holds ``rgb``, ``thermal`` and ``events`` (H, W, 3) images."""
    return {"rgb": score(pred_rgb, refs["rgb"]),
            "xspec": {name: score(pred_xspec, refs[name]) for name in XSPEC_REFS}}


def _mean(views: list[dict]) -> dict:
    def walk(path):
        node = views[0]
        for p in path:
            node = node[p]
        if isinstance(node, dict):
            return {k: walk(path + (k,)) for k in node}
        vals = []
        for v in views:
            x = v
            for p in path:
                x = x[p]
            vals.append(x)
        return float(sum(vals) / len(vals))
    return {"rgb": walk(("rgb",)), "xspec": walk(("xspec",))}


def references(dataset: SceneDataset, k: int) -> dict:
    return {"rgb": dataset.rgb(k), "thermal": dataset.thermal(k), "events": dataset.event_frame(k)}


def evaluate(model: SceneModel, dataset: SceneDataset, split: str = "holdout", meta: dict | None = None,
             settings: RenderSettings | None = None, holdout_every: int | None = None,
             allow_mismatch: bool = False) -> dict:
    """Render every view of ``split`` through both heads and score them."""
    meta = meta or {}
    cfg = meta.get("train_config", {})
    if holdout_every is None:
        holdout_every = cfg.get("holdout_every", 8)
    if "manifest_hash" in meta and meta["manifest_hash"] != dataset.manifest_hash and not allow_mismatch:
        raise ContractError("checkpoint was trained on a different dataset (manifest hash mismatch); "
                            "pass allow_mismatch to override")
    idx = dataset.split(split, holdout_every)
    if not idx:
        raise ContractError(f"split {split!r} is empty")
    settings = settings or _settings_from_meta(meta)
    views = []
    for k in idx:
        out = render_image(model, dataset.camera(k), settings)
        views.append({"index": k, **score_view(out["rgb"], out["xspec"], references(dataset, k))})
    return {"split": split, "n_views": len(views), "views": views, "mean": _mean(views),
            "weights": cfg.get("weights"), "train_config": cfg or None, "config_hash": meta.get("config_hash"),
            "manifest_hash": dataset.manifest_hash}


def evaluate_checkpoint(checkpoint, dataset: SceneDataset, split: str = "holdout", allow_mismatch=False) -> dict:
    model, meta = load_model(checkpoint)
    return evaluate(model, dataset, split, meta, allow_mismatch=allow_mismatch)


def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def ablate(dataset: SceneDataset, base: TrainConfig, out_dir=None, progress=None) -> dict:
    """Train and evaluate once per modality combination; returns a table with one row each."""
    rows, reports = [], {}
    for name, weights in ABLATIONS.items():
        cfg = base.with_weights(weights)
        model, trace, _ = train(dataset, cfg)
        rep = evaluate(model, dataset, "holdout", checkpoint_meta(cfg, dataset, cfg.iterations))
        reports[name] = rep
        m = rep["mean"]
        rows.append({"config": name, "rgb_psnr": m["rgb"]["psnr"], "rgb_ssim": m["rgb"]["ssim"],
                     **{f"xspec_{r}_psnr": m["xspec"][r]["psnr"] for r in XSPEC_REFS},
                     **{f"xspec_{r}_ssim": m["xspec"][r]["ssim"] for r in XSPEC_REFS},
                     "final_loss": float(trace.records[-1].total) if len(trace) else None})
        if progress is not None:
            progress(name, rows[-1])
    table = {"rows": rows, "base_config": base.to_dict(), "manifest_hash": dataset.manifest_hash}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_report(table, out / "ablation.json")
        for name, rep in reports.items():
            write_report(rep, out / f"report_{name.replace('+', '_')}.json")
        (out / "ablation.md").write_text(format_table(rows))
    return table


def format_table(rows: list[dict]) -> str:
    cols = list(rows[0])
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for r in rows:
        cells = [f"{v:.3f}" if isinstance(v, float) else str(v) for v in r.values()]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
