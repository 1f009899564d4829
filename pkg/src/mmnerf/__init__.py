"""Multi-modal radiance fields (RGB, thermal, events) on a pure-NumPy autodiff core."""
from .errors import ContractError
from .losses import LossWeights, psnr, ssim
from .render import CameraModel, RenderSettings, render_image
from .synth import Intrinsics, SyntheticScene, TrajectorySpec, generate_dataset, orchard_scene

__version__ = "0.1.0"

__all__ = [
    "CameraModel", "ContractError", "Intrinsics", "LossWeights", "RenderSettings", "SyntheticScene",
    "TrajectorySpec", "generate_dataset", "orchard_scene", "psnr", "render_image", "ssim",
]
