"""Training configuration."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

from ..errors import ContractError
from ..field import ModelConfig
from ..losses import LossWeights


@dataclass
class TrainConfig:
    iterations: int = 30000
    batch: int = 1024
    n_coarse: int = 64
    n_fine: int = 64
    lr: float = 1e-3
    grid_lr_scale: float = 20.0
    lr_decay: bool = True
    seed: int = 0
    deterministic: bool = True
    float32: bool = False
    holdout_every: int = 8
    checkpoint_every: int = 0
    coarse_supervision: bool = True
    stratify_frames: bool = False
    weights: LossWeights = field(default_factory=LossWeights)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights.from_dict(self.weights)
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        self.validate()

    def validate(self) -> None:
        if self.iterations < 0:
            raise ContractError("iterations must be >= 0")
        for name in ("batch", "n_coarse"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        if self.n_fine < 0 or self.holdout_every < 0 or self.checkpoint_every < 0:
            raise ContractError("n_fine, holdout_every and checkpoint_every must be >= 0")
        if self.lr <= 0 or self.grid_lr_scale <= 0:
            raise ContractError("learning rates must be positive")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Settings that train the 64^3 acceptance scene in minutes on one CPU core."""
        model = ModelConfig(coarse_resolution=(32, 32, 32), fine_resolution=(64, 64, 64), channels=8,
                            storage="dense", hidden_width=32, hidden_layers=2, n_freqs=2)
        base = dict(iterations=2000, batch=512, n_coarse=32, n_fine=32, lr=2e-3, grid_lr_scale=20.0,
                    float32=True, model=model)
        base.update(overrides)
        return cls(**base)

    def with_weights(self, weights: LossWeights) -> "TrainConfig":
        return replace(self, weights=weights)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["weights"] = self.weights.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]
