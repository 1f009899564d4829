"""Dataset ingestion, training, evaluation and ablation."""
from .config import TrainConfig
from .dataset import Frame, SceneDataset, load_dataset, manifest_hash
from .evaluate import (XSPEC_REFS, ablate, evaluate, evaluate_checkpoint, format_table, render_view,
                       render_view_file, score_view, write_report)
from .train import RaySampler, TraceRecord, TrainTrace, load_model, train

__all__ = [
    "Frame", "RaySampler", "SceneDataset", "TraceRecord", "TrainConfig", "TrainTrace", "XSPEC_REFS", "ablate",
    "evaluate", "evaluate_checkpoint", "format_table", "load_dataset", "load_model", "manifest_hash",
    "render_view", "render_view_file", "score_view", "train", "write_report",
]
