"""Training objectives and image-quality metrics."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .diffmath import Tensor
from .diffmath import ops
from .errors import ContractError

PSNR_CAP = 99.0


class MissingModalityWarning(UserWarning):
    pass


def _check_pair(rendered, truth, name):
    rv = rendered.value if isinstance(rendered, Tensor) else np.asarray(rendered)
    tv = np.asarray(truth)
    if rv.ndim != 2 or rv.shape[0] == 0:
        raise ContractError(f"{name}: need a non-empty (rays, channels) batch, got {rv.shape}")
    if tv.shape != rv.shape:
        raise ContractError(f"{name}: rendered {rv.shape} and truth {tv.shape} differ")
    return rv.shape[0]


def squared_error_loss(rendered, truth, name="loss") -> Tensor:
    """Mean over rays of the squared L2 norm across channels."""
    n = _check_pair(rendered, truth, name)
    resid = ops.as_tensor(rendered) - np.asarray(truth, dtype=ops.as_tensor(rendered).value.dtype)
    return ops.sum(ops.square(resid)) * (1.0 / n)


def loss_rgb(rendered, truth) -> Tensor:
    return squared_error_loss(rendered, truth, "loss_rgb")


def loss_thermal(rendered, truth) -> Tensor:
    return squared_error_loss(rendered, truth, "loss_thermal")


def loss_reg(rendered, truth_rgb, truth_ev, strict: bool = False) -> Tensor | None:
    """Pull the cross-spectral rendering toward both the RGB and event references.

    Either reference may be None (modality unavailable); its half is then
    skipped with a warning, or rejected when ``strict``.  Returns None when
    both are missing in non-strict mode.
    """
    parts = []
    for truth, label in ((truth_rgb, "rgb"), (truth_ev, "events")):
        if truth is None:
            if strict:
                raise ContractError(f"loss_reg: {label} reference unavailable")
            warnings.warn(f"loss_reg: {label} reference unavailable, term skipped", MissingModalityWarning,
                          stacklevel=2)
            continue
        parts.append(squared_error_loss(rendered, truth, f"loss_reg[{label}]"))
    if not parts:
        return None
    return parts[0] if len(parts) == 1 else parts[0] + parts[1]


@dataclass
class LossWeights:
    """Per-term weights and enable flags.

    ``reg_rgb`` / ``reg_events`` select which references the cross-spectral
    term uses; they are the finer ablation axes below the three main terms.
    """

    w_rgb: float = 1.0
    w_th: float = 1.0
    w_reg: float = 1.0
    use_rgb: bool = True
    use_th: bool = True
    use_reg: bool = True
    reg_rgb: bool = True
    reg_events: bool = True

    def __post_init__(self):
        if min(self.w_rgb, self.w_th, self.w_reg) < 0:
            raise ContractError("loss weights must be non-negative")

    def enabled(self) -> dict[str, bool]:
        return {"rgb": self.use_rgb and self.w_rgb > 0,
                "th": self.use_th and self.w_th > 0,
                "reg": self.use_reg and self.w_reg > 0 and (self.reg_rgb or self.reg_events)}

    def weight(self, term: str) -> float:
        return {"rgb": self.w_rgb, "th": self.w_th, "reg": self.w_reg}[term]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "LossWeights":
        return cls(**d)


# modality combinations of the ablation table
ABLATIONS = {
    "RGB": LossWeights(use_th=False, use_reg=False),
    "RGB+Events": LossWeights(use_th=False, reg_rgb=True, reg_events=True),
    "RGB+Thermal": LossWeights(reg_rgb=True, reg_events=False),
    "Thermal": LossWeights(use_rgb=False, use_reg=False),
    "Thermal+Events": LossWeights(use_rgb=False, reg_rgb=False, reg_events=True),
    "All": LossWeights(),
}


def total_loss(weights: LossWeights, terms: dict) -> Tensor:
    """Weighted sum of enabled terms; each value is a Tensor or a list of per-pass Tensors."""
    enabled = weights.enabled()
    if not any(enabled.values()):
        raise ContractError("every loss term is disabled")
    total = None
    for name, on in enabled.items():
        if not on:
            continue
        vals = terms.get(name)
        if vals is None:
            continue
        vals = vals if isinstance(vals, (list, tuple)) else [vals]
        for v in vals:
            if v is None:
                continue
            contrib = v * weights.weight(name)
            total = contrib if total is None else total + contrib
    if total is None:
        raise ContractError("no enabled loss term was provided")
    return total


# --- metrics ----------------------------------------------------------------

def psnr_from_mse(mse: float, max_value: float = 1.0, cap: float | None = None) -> float:
    if mse == 0:
        return math.inf if cap is None else cap
    value = 10.0 * math.log10(max_value * max_value / mse)
    return value if cap is None else min(value, cap)


def psnr(image_a, image_b, max_value: float = 1.0, cap: float | None = None) -> float:
    """Peak signal-to-noise ratio in dB; +inf (or ``cap``) for identical images."""
    a = np.asarray(image_a, dtype=np.float64)
    b = np.asarray(image_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    if max_value <= 0:
        raise ContractError("psnr: max_value must be positive")
    return psnr_from_mse(float(np.mean((a - b) ** 2)), max_value, cap)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img, g):
    n = len(g)
    tmp = sliding_window_view(img, n, axis=0) @ g
    return sliding_window_view(tmp, n, axis=1) @ g


def ssim(image_a, image_b, data_range: float = 1.0, win_size: int = 11, sigma: float = 1.5) -> float:
    """Mean structural similarity over Gaussian-weighted local windows.

    Multi-channel images (H, W, C) are scored per channel and averaged.
    Only fully covered window positions contribute.
    """
    a = np.asarray(image_a, dtype=np.float64)
    b = np.asarray(image_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.shape[0] < win_size or a.shape[1] < win_size:
        raise ContractError(f"ssim: image {a.shape[:2]} smaller than the {win_size}x{win_size} window")
    if a.ndim == 3:
        return float(np.mean([ssim(a[..., c], b[..., c], data_range, win_size, sigma) for c in range(a.shape[2])]))
    g = gaussian_window(win_size, sigma)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
