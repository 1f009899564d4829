"""Explicit feature volumes and the density / color heads that read them.

Two storage modes are supported:

``dense``
    one feature vector per voxel, trilinearly interpolated between voxel
    centers.
``cp``
    rank-R CP factorization: for every channel, the sum over r of
    ``vx_r(x) * vy_r(y) * vz_r(z)`` with each per-axis vector linearly
    interpolated.

Coordinates outside the box are clamped for interpolation; in ``clamp`` mode
the density head is forced to zero there.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .diffmath import Mlp, ParameterStore, Tape, Tensor, forward_mlp
from .diffmath import ops
from .errors import ContractError, OutOfBoundsError

DENSE_LIMIT = 96 ** 3


def _axis_interp(coord, lo, size, n):
    """Lower neighbour index and fractional offset along one axis."""
    u = np.clip((coord - lo) / size - 0.5, 0.0, n - 1)
    if n == 1:
        return np.zeros(u.shape, dtype=np.int64), np.zeros_like(u)
    i0 = np.minimum(np.floor(u).astype(np.int64), n - 2)
    return i0, u - i0


@dataclass
class FeatureField:
    name: str
    bbox_min: tuple[float, float, float]
    bbox_max: tuple[float, float, float]
    resolution: tuple[int, int, int]
    channels: int = 16
    mode: str = "dense"
    rank: int = 16

    def __post_init__(self):
        self.bbox_min = tuple(float(v) for v in self.bbox_min)
        self.bbox_max = tuple(float(v) for v in self.bbox_max)
        self.resolution = tuple(int(r) for r in self.resolution)
        if self.mode == "auto":
            self.mode = "dense" if int(np.prod(self.resolution)) <= DENSE_LIMIT else "cp"
        if self.mode not in ("dense", "cp"):
            raise ContractError(f"unknown storage mode {self.mode!r}")
        if any(hi <= lo for lo, hi in zip(self.bbox_min, self.bbox_max)):
            raise ContractError("bounding box must have positive extent on every axis")
        if min(self.resolution) < 1 or self.channels < 1 or self.rank < 1:
            raise ContractError("resolution, channels and rank must be positive")

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.bbox_min)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.bbox_max)

    @property
    def voxel_size(self) -> np.ndarray:
        return (self.hi - self.lo) / np.array(self.resolution)

    def param_names(self) -> list[str]:
        if self.mode == "dense":
            return [f"{self.name}.grid"]
        return [f"{self.name}.f{a}" for a in "xyz"]

    def init(self, store: ParameterStore, rng: np.random.Generator, scale: float = 0.1) -> None:
        if self.mode == "dense":
            n = int(np.prod(self.resolution))
            store.add(f"{self.name}.grid", rng.uniform(-scale, scale, size=(n, self.channels)))
        else:
            # product of three factors should land near ``scale`` in magnitude
            s = (scale / np.sqrt(self.rank)) ** (1.0 / 3.0)
            for a, n in zip("xyz", self.resolution):
                store.add(f"{self.name}.f{a}", rng.uniform(-s, s, size=(n, self.channels * self.rank)))

    def voxel_centers(self, axis: int) -> np.ndarray:
        n = self.resolution[axis]
        return self.bbox_min[axis] + (np.arange(n) + 0.5) * self.voxel_size[axis]

    def inside(self, points) -> np.ndarray:
        p = np.asarray(points)
        return np.all((p >= self.lo) & (p <= self.hi), axis=-1)

    def trilinear_weights(self, points):
        """Flat voxel indices (P, 8) and interpolation weights (P, 8)."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        size = self.voxel_size
        idx, frac = zip(*(_axis_interp(p[:, a], self.bbox_min[a], size[a], self.resolution[a])
                          for a in range(3)))
        rx, ry, rz = self.resolution
        corners_idx, corners_w = [], []
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    ix = np.minimum(idx[0] + dx, rx - 1)
                    iy = np.minimum(idx[1] + dy, ry - 1)
                    iz = np.minimum(idx[2] + dz, rz - 1)
                    corners_idx.append((ix * ry + iy) * rz + iz)
                    w = ((frac[0] if dx else 1 - frac[0]) * (frac[1] if dy else 1 - frac[1])
                         * (frac[2] if dz else 1 - frac[2]))
                    corners_w.append(w)
        return np.stack(corners_idx, axis=1), np.stack(corners_w, axis=1)

    def axis_weights(self, points, axis: int):
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        n = self.resolution[axis]
        i0, f = _axis_interp(p[:, axis], self.bbox_min[axis], self.voxel_size[axis], n)
        i1 = np.minimum(i0 + 1, n - 1)
        return np.stack([i0, i1], axis=1), np.stack([1 - f, f], axis=1)

    def to_dict(self) -> dict:
        return asdict(self)


def sample_field(fld: FeatureField, store: ParameterStore, points, tape: Tape | None = None,
                 strict: bool = False) -> Tensor:
    """Interpolated features (P, channels) at world ``points`` (P, 3)."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if strict:
        bad = ~fld.inside(p)
        if bad.any():
            i = int(np.argmax(bad))
            raise OutOfBoundsError(f"{fld.name}: point {p[i].tolist()} (index {i}) outside bounding box")
    if fld.mode == "dense":
        idx, w = fld.trilinear_weights(p)
        return ops.weighted_gather(store.var(f"{fld.name}.grid", tape), idx, w)
    out = None
    for a, axis in enumerate("xyz"):
        idx, w = fld.axis_weights(p, a)
        f = ops.weighted_gather(store.var(f"{fld.name}.f{axis}", tape), idx, w)
        out = f if out is None else out * f
    out = ops.reshape(out, (p.shape[0], fld.channels, fld.rank))
    return ops.sum(out, axis=2)


def materialize_dense(fld: FeatureField, store: ParameterStore) -> np.ndarray:
    """Feature grid (rx, ry, rz, C) evaluated at voxel centers."""
    rx, ry, rz = fld.resolution
    if fld.mode == "dense":
        return store[f"{fld.name}.grid"].reshape(rx, ry, rz, fld.channels).copy()
    C, R = fld.channels, fld.rank
    fx = store[f"{fld.name}.fx"].reshape(rx, C, R)
    fy = store[f"{fld.name}.fy"].reshape(ry, C, R)
    fz = store[f"{fld.name}.fz"].reshape(rz, C, R)
    return np.einsum("icr,jcr,kcr->ijkc", fx, fy, fz)


@dataclass
class FieldPair:
    coarse: FeatureField
    fine: FeatureField

    def __post_init__(self):
        if (self.coarse.bbox_min, self.coarse.bbox_max) != (self.fine.bbox_min, self.fine.bbox_max):
            raise ContractError("coarse and fine fields must share one bounding box")
        if any(f < c for f, c in zip(self.fine.resolution, self.coarse.resolution)):
            raise ContractError("fine resolution must be >= coarse resolution on every axis")
        if self.coarse.channels != self.fine.channels:
            raise ContractError("coarse and fine fields must have the same channel count")

    def stage(self, name: str) -> FeatureField:
        if name not in ("coarse", "fine"):
            raise ContractError(f"unknown stage {name!r}")
        return self.coarse if name == "coarse" else self.fine


def encode_direction(d, n_freqs: int, check_unit: bool = True) -> Tensor:
    """``[d, sin(pi d), cos(pi d), sin(2 pi d), cos(2 pi d), ...]``.

    Accepts a single vector (3,) or a batch (N, 3); output width is
    ``3 + 6 * n_freqs``.
    """
    d = d if isinstance(d, Tensor) else Tensor(np.asarray(d, dtype=np.float64))
    single = d.value.ndim == 1
    if d.shape[-1] != 3:
        raise ContractError(f"direction must have 3 components, got shape {d.shape}")
    if check_unit:
        norms = np.linalg.norm(d.value.reshape(-1, 3), axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ContractError(f"direction is not unit length (|d| = {norms[np.argmax(np.abs(norms - 1))]})")
    parts = [d]
    for k in range(n_freqs):
        scaled = d * (2.0 ** k * np.pi)
        parts += [ops.sin(scaled), ops.cos(scaled)]
    return ops.concat(parts, axis=0 if single else 1)


@dataclass
class ModelConfig:
    """Architecture of the scene model (fields + heads)."""

    bbox_min: tuple = (-1.0, -1.0, -1.0)
    bbox_max: tuple = (1.0, 1.0, 1.0)
    coarse_resolution: tuple = (32, 32, 32)
    fine_resolution: tuple = (64, 64, 64)
    channels: int = 16
    storage: str = "auto"
    rank: int = 16
    hidden_width: int = 64
    hidden_layers: int = 3
    n_freqs: int = 2
    feature_init: float = 0.1
    dtype: str = "float64"

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("bbox_min", "bbox_max", "coarse_resolution", "fine_resolution"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for k in ("bbox_min", "bbox_max", "coarse_resolution", "fine_resolution"):
            d[k] = tuple(d[k])
        return cls(**d)


def resolution_for_voxels(n_voxels: int) -> tuple[int, int, int]:
    """Cubic resolution whose voxel count is closest to ``n_voxels``."""
    r = int(round(n_voxels ** (1.0 / 3.0)))
    return (r, r, r)


@dataclass
class SceneModel:
    """Coarse/fine feature fields plus the density, RGB and cross-spectral heads.

    The heads are shared between stages; both color heads read the same
    positional features as the density head of the selected stage.
    """

    config: ModelConfig
    store: ParameterStore
    pair: FieldPair
    density_head: Mlp
    rgb_head: Mlp
    xspec_head: Mlp
    extra: dict = field(default_factory=dict)

    @property
    def enc_width(self) -> int:
        return 3 + 6 * self.config.n_freqs

    @classmethod
    def build(cls, config: ModelConfig, store: ParameterStore | None = None):
        """Construct the architecture without allocating parameters."""
        store = store if store is not None else ParameterStore(np.dtype(config.dtype))
        coarse = FeatureField("coarse", config.bbox_min, config.bbox_max, config.coarse_resolution,
                              config.channels, config.storage, config.rank)
        fine = FeatureField("fine", config.bbox_min, config.bbox_max, config.fine_resolution,
                            config.channels, config.storage, config.rank)
        in_width = config.channels + 3 + 6 * config.n_freqs
        hidden = (config.hidden_width,) * config.hidden_layers
        return cls(config, store, FieldPair(coarse, fine),
                   Mlp("density", (config.channels, 1), "softplus"),
                   Mlp("rgb", (in_width, *hidden, 3), "sigmoid"),
                   Mlp("xspec", (in_width, *hidden, 3), "sigmoid"))

    @classmethod
    def create(cls, config: ModelConfig, seed: int = 0) -> "SceneModel":
        model = cls.build(config)
        rng = np.random.default_rng(seed)
        model.pair.coarse.init(model.store, rng, config.feature_init)
        model.pair.fine.init(model.store, rng, config.feature_init)
        for head in (model.density_head, model.rgb_head, model.xspec_head):
            head.init(model.store, rng)
        return model


def query_heads(model: SceneModel, points, directions, stage: str = "fine", tape: Tape | None = None,
                mode: str = "clamp", encoded=None):
    """Density (P,), rgb (P, 3) and xspec (P, 3) at ``points`` seen along ``directions``.

    ``encoded`` may carry a precomputed direction encoding (P, enc_width).
    In ``clamp`` mode density is zero outside the bounding box; ``strict``
    raises instead.
    """
    fld = model.pair.stage(stage)
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    feats = sample_field(fld, model.store, p, tape, strict=(mode == "strict"))
    sigma = ops.reshape(forward_mlp(model.density_head, model.store, feats, tape), (p.shape[0],))
    inside = fld.inside(p)
    if not inside.all():
        sigma = sigma * inside.astype(model.store.dtype)
    if encoded is None:
        encoded = encode_direction(np.asarray(directions, dtype=np.float64).reshape(-1, 3), model.config.n_freqs)
    enc = ops.constant(np.asarray(getattr(encoded, "value", encoded), dtype=model.store.dtype))
    x = ops.concat([feats, enc], axis=1)
    rgb = forward_mlp(model.rgb_head, model.store, x, tape)
    xspec = forward_mlp(model.xspec_head, model.store, x, tape)
    return sigma, rgb, xspec
