"""The training loop."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..diffmath import AdamState, Tape, adam_step, backward, load_checkpoint, save_checkpoint
from ..errors import ContractError, NonFiniteError
from ..field import ModelConfig, SceneModel
from ..losses import loss_reg, loss_rgb, loss_thermal, squared_error_loss, total_loss
from ..render import RenderSettings, render_rays
from .config import TrainConfig
from .dataset import SceneDataset

TERMS = ("rgb", "th", "reg")


@dataclass
class TraceRecord:
    iteration: int
    losses: dict[str, float]
    total: float
    wall_time: float


@dataclass
class TrainTrace:
    records: list[TraceRecord] = field(default_factory=list)
    checkpoints: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def totals(self) -> np.ndarray:
        return np.array([r.total for r in self.records])

    def same_losses(self, other: "TrainTrace") -> bool:
        """Bitwise equality of the per-iteration losses (wall time and checkpoint saves are ignored)."""
        if len(self) != len(other):
            return False
        for a, b in zip(self.records, other.records):
            if a.iteration != b.iteration or a.losses.keys() != b.losses.keys():
                return False
            vals_a = np.array([a.total, *a.losses.values()])
            vals_b = np.array([b.total, *b.losses.values()])
            if vals_a.tobytes() != vals_b.tobytes():
                return False
        return True

    def to_dict(self) -> dict:
        return {"records": [vars(r) for r in self.records], "checkpoints": list(self.checkpoints)}


class RaySampler:
    """Uniform pixel sampling over the training frames.

    Every drawn ``(frame, u, v)`` triple is passed to ``observer`` when one
    is attached, which lets tests audit what training actually touched.
    """

    def __init__(self, frames, width: int, height: int, rng: np.random.Generator, stratify: bool = False,
                 observer=None):
        self.frames = np.asarray(frames, dtype=np.int64)
        if len(self.frames) == 0:
            raise ContractError("no training frames to sample from")
        self.width, self.height = width, height
        self.rng = rng
        self.stratify = stratify
        self.observer = observer

    def sample(self, n: int):
        if self.stratify:
            slot = np.arange(n) % len(self.frames)
            self.rng.shuffle(slot)
        else:
            slot = self.rng.integers(0, len(self.frames), n)
        frames = self.frames[slot]
        u = self.rng.integers(0, self.width, n)
        v = self.rng.integers(0, self.height, n)
        if self.observer is not None:
            self.observer(frames, u, v)
        return slot, frames, np.stack([u, v], axis=1)


def render_settings(config: TrainConfig, dataset: SceneDataset | None = None) -> RenderSettings:
    s = RenderSettings(n_coarse=config.n_coarse, n_fine=config.n_fine)
    if dataset is not None:
        s.background = dict(dataset.background)
    return s


def model_config(config: TrainConfig, dataset: SceneDataset | None = None) -> ModelConfig:
    mc = config.model
    if dataset is not None:
        mc = replace(mc, bbox_min=tuple(dataset.bbox[0]), bbox_max=tuple(dataset.bbox[1]))
    if config.float32:
        mc = replace(mc, dtype="float32")
    return mc


def make_optimizer(config: TrainConfig) -> AdamState:
    return AdamState(lr=config.lr, decay_steps=config.iterations if config.lr_decay else None,
                     lr_scale={"coarse.": config.grid_lr_scale, "fine.": config.grid_lr_scale})


def _reg_term(xspec, c_rgb, c_ev, weights):
    if weights.reg_rgb and weights.reg_events:
        return loss_reg(xspec, c_rgb, c_ev, strict=True)
    if weights.reg_rgb:
        return squared_error_loss(xspec, c_rgb, "loss_reg[rgb]")
    return squared_error_loss(xspec, c_ev, "loss_reg[events]")


def checkpoint_meta(config: TrainConfig, dataset: SceneDataset, iteration: int) -> dict:
    return {"train_config": config.to_dict(), "config_hash": config.hash(),
            "model_config": model_config(config, dataset).to_dict(), "manifest_hash": dataset.manifest_hash,
            "background": {k: list(v) for k, v in dataset.background.items()}, "iteration": iteration,
            "intrinsics": dict(dataset.intrinsics), "poses": [f.pose.ravel().tolist() for f in dataset.frames]}


def train(dataset: SceneDataset, config: TrainConfig, checkpoint_path=None, observer=None, progress=None):
    """Optimize a fresh model on the training split.

    Returns ``(model, trace, adam)``.  ``checkpoint_path`` receives the final
    state and, with ``config.checkpoint_every``, intermediate ones named
    ``<stem>.<iteration><suffix>``.  ``progress(iteration, record)`` is
    called after every step.
    """
    config.validate()
    mc = model_config(config, dataset)
    model = SceneModel.create(mc, config.seed)
    dtype = model.store.dtype
    adam = make_optimizer(config)
    settings = render_settings(config, dataset)
    train_idx = dataset.split("train", config.holdout_every)
    rng = np.random.default_rng(config.seed + 1)
    sampler = RaySampler(train_idx, dataset.width, dataset.height, rng, config.stratify_frames, observer)
    weights = config.weights
    on = weights.enabled()
    if not any(on.values()):
        raise ContractError("every loss term is disabled")
    sup = {}
    if on["rgb"] or (on["reg"] and weights.reg_rgb):
        sup["rgb"] = dataset.stacked("rgb", train_idx).astype(dtype)
    if on["th"]:
        sup["th"] = dataset.stacked("thermal", train_idx).astype(dtype)
    if on["reg"] and weights.reg_events:
        sup["ev"] = dataset.stacked("events", train_idx).astype(dtype)
    trace = TrainTrace()
    ckpt = Path(checkpoint_path) if checkpoint_path is not None else None
    t_start = time.perf_counter()
    for it in range(1, config.iterations + 1):
        slot, frames, px = sampler.sample(config.batch)
        bundle = dataset.rays(frames, px)
        truth = {k: v[slot, px[:, 1], px[:, 0]] for k, v in sup.items()}
        tape = Tape()
        coarse, fine = render_rays(model, bundle, settings, tape, rng)
        passes = [fine, coarse] if config.coarse_supervision else [fine]
        terms = {k: [] for k in TERMS}
        for r in passes:
            if on["rgb"]:
                terms["rgb"].append(loss_rgb(r.rgb, truth["rgb"]))
            if on["th"]:
                terms["th"].append(loss_thermal(r.xspec, truth["th"]))
            if on["reg"]:
                terms["reg"].append(_reg_term(r.xspec, truth.get("rgb"), truth.get("ev"), weights))
        total = total_loss(weights, terms)
        breakdown = {k: float(sum(float(t.value) for t in v)) for k, v in terms.items() if v}
        if not np.isfinite(total.value):
            raise NonFiniteError(f"non-finite loss at iteration {it}: total={float(total.value)} terms={breakdown}")
        model.store.zero_grads()
        backward(tape, np.ones((), dtype=total.value.dtype), total)
        adam_step(adam, model.store)
        rec = TraceRecord(it, breakdown, float(total.value), time.perf_counter() - t_start)
        trace.records.append(rec)
        if ckpt is not None and config.checkpoint_every and it % config.checkpoint_every == 0 \
                and it != config.iterations:
            save_checkpoint(ckpt.with_name(f"{ckpt.stem}.{it}{ckpt.suffix}"), model.store, adam,
                            checkpoint_meta(config, dataset, it))
            trace.checkpoints.append(it)
        if progress is not None:
            progress(it, rec)
    if ckpt is not None:
        save_checkpoint(ckpt, model.store, adam, checkpoint_meta(config, dataset, config.iterations))
        trace.checkpoints.append(config.iterations)
    return model, trace, adam


def load_model(path):
    """Rebuild a SceneModel from a checkpoint; returns ``(model, meta)``."""
    store, _, meta = load_checkpoint(path)
    if "model_config" not in meta:
        raise ContractError(f"{path}: checkpoint carries no model configuration")
    model = SceneModel.build(ModelConfig.from_dict(meta["model_config"]), store)
    missing = [n for n in (model.pair.coarse.param_names() + model.pair.fine.param_names()) if n not in store]
    if missing:
        raise ContractError(f"{path}: checkpoint lacks parameters {missing[:3]}")
    return model, meta
