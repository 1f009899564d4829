"""Cameras, rays, sampling along rays and alpha compositing.

Camera convention: right-handed, the camera looks down its local -z axis with
+y up.  Poses are 4x4 camera-to-world matrices.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image

from .diffmath import Tape, Tensor
from .diffmath import ops
from .errors import ContractError, OutOfBoundsError
from .field import SceneModel, encode_direction, query_heads

HEADS = ("rgb", "xspec")


@dataclass
class CameraModel:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    pose: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64).reshape(4, 4)
        if self.fx <= 0 or self.fy <= 0:
            raise ContractError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ContractError("principal point must lie inside the image")
        check_pose(self.pose)

    @property
    def rotation(self) -> np.ndarray:
        return self.pose[:3, :3]

    @property
    def position(self) -> np.ndarray:
        return self.pose[:3, 3]

    def intrinsics(self) -> dict:
        return {"width": self.width, "height": self.height, "fx": self.fx, "fy": self.fy,
                "cx": self.cx, "cy": self.cy}

    def with_pose(self, pose) -> "CameraModel":
        return replace(self, pose=np.asarray(pose, dtype=np.float64))

    def scaled(self, factor: float) -> "CameraModel":
        """Same field of view at ``factor`` times the resolution."""
        return CameraModel(int(round(self.width * factor)), int(round(self.height * factor)),
                           self.fx * factor, self.fy * factor, self.cx * factor, self.cy * factor,
                           self.pose.copy())

    def all_pixels(self) -> np.ndarray:
        v, u = np.mgrid[0:self.height, 0:self.width]
        return np.stack([u.ravel(), v.ravel()], axis=1)


def check_pose(pose, tol: float = 1e-6) -> None:
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (4, 4):
        raise ContractError(f"pose must be 4x4, got {pose.shape}")
    r = pose[:3, :3]
    if not np.allclose(r.T @ r, np.eye(3), atol=tol) or abs(np.linalg.det(r) - 1.0) > tol:
        raise ContractError("pose rotation is not a proper orthonormal matrix")
    if not np.allclose(pose[3], [0, 0, 0, 1]):
        raise ContractError("pose bottom row must be (0, 0, 0, 1)")


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world pose at ``eye`` whose -z axis points at ``target``."""
    eye, target, up = (np.asarray(v, dtype=np.float64) for v in (eye, target, up))
    back = eye - target
    back /= np.linalg.norm(back)
    right = np.cross(up, back)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross((0.0, 1.0, 0.0), back)
    right /= np.linalg.norm(right)
    true_up = np.cross(back, right)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = right, true_up, back, eye
    return pose


@dataclass
class RayBundle:
    origins: np.ndarray
    directions: np.ndarray
    near: np.ndarray
    far: np.ndarray
    pixels: np.ndarray
    frames: np.ndarray
    hit: np.ndarray | None = None

    def __len__(self):
        return len(self.origins)

    def subset(self, sel) -> "RayBundle":
        return RayBundle(self.origins[sel], self.directions[sel], self.near[sel], self.far[sel],
                         self.pixels[sel], self.frames[sel], None if self.hit is None else self.hit[sel])


def ray_box(origins, directions, lo, hi):
    """Slab intersection; returns ``(near, far, hit)`` with near clamped at 0."""
    o, d = np.asarray(origins), np.asarray(directions)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (np.asarray(lo) - o) * inv
        t1 = (np.asarray(hi) - o) * inv
    tmin = np.nanmax(np.minimum(t0, t1), axis=-1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=-1)
    near = np.maximum(tmin, 0.0)
    hit = tmax > near
    return near, tmax, hit


def generate_rays(camera: CameraModel, pixels, frame: int = 0, bbox=None,
                  near: float = 0.0, far: float = 10.0) -> RayBundle:
    """One ray per (u, v) pixel through the pixel centre.

    With ``bbox`` given, near/far come from the ray-box intersection; rays
    that miss get ``near=0, far=1`` and ``hit=False``.
    """
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    u, v = px[:, 0], px[:, 1]
    if np.any((u < 0) | (u >= camera.width) | (v < 0) | (v >= camera.height)):
        i = int(np.argmax((u < 0) | (u >= camera.width) | (v < 0) | (v >= camera.height)))
        raise OutOfBoundsError(f"pixel {px[i].tolist()} outside {camera.width}x{camera.height} image")
    d_cam = np.stack([(u + 0.5 - camera.cx) / camera.fx, -(v + 0.5 - camera.cy) / camera.fy,
                      -np.ones_like(u)], axis=1)
    d = d_cam @ camera.rotation.T
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.broadcast_to(camera.position, d.shape).copy()
    n = len(d)
    if bbox is None:
        t_near, t_far, hit = np.full(n, near), np.full(n, far), np.ones(n, dtype=bool)
    else:
        t_near, t_far, hit = ray_box(o, d, *bbox)
        t_near = np.where(hit, t_near, 0.0)
        t_far = np.where(hit, t_far, 1.0)
    return RayBundle(o, d, t_near, t_far, px, np.full(n, frame, dtype=np.int64), hit)


def sample_coarse(near, far, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Stratified depths (R, n): one per equal bin, jittered when ``rng`` is given."""
    if n < 1:
        raise ContractError("need at least one sample per ray")
    near = np.atleast_1d(np.asarray(near, dtype=np.float64))
    far = np.atleast_1d(np.asarray(far, dtype=np.float64))
    offs = np.full((len(near), n), 0.5) if rng is None else rng.random((len(near), n))
    return near[:, None] + (np.arange(n) + offs) / n * (far - near)[:, None]


def sample_fine(near, far, weights, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Inverse-CDF depths (R, n) from the piecewise-constant PDF over coarse bins.

    Bins are the equal strata of ``[near, far]`` used by :func:`sample_coarse`;
    rays whose weights are all zero fall back to a uniform PDF.  Without an
    ``rng`` the quantiles are evenly spaced (deterministic evaluation).
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim == 1:
        w = w[None]
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ContractError("coarse weights must be finite and non-negative")
    near = np.atleast_1d(np.asarray(near, dtype=np.float64))
    far = np.atleast_1d(np.asarray(far, dtype=np.float64))
    R, S = w.shape
    total = w.sum(axis=1, keepdims=True)
    pdf = np.where(total > 0, w / np.where(total > 0, total, 1.0), 1.0 / S)
    cdf = np.concatenate([np.zeros((R, 1)), np.cumsum(pdf, axis=1)], axis=1)
    cdf[:, -1] = 1.0
    if rng is None:
        u = np.broadcast_to((np.arange(n) + 0.5) / n, (R, n))
    else:
        u = np.sort(rng.random((R, n)), axis=1)
    # batched searchsorted: offset each row into its own unit interval
    offset = 2.0 * np.arange(R)[:, None]
    flat = np.searchsorted((cdf[:, 1:] + offset).ravel(), (u + offset).ravel(), side="right")
    idx = np.clip(flat.reshape(R, n) - np.arange(R)[:, None] * S, 0, S - 1)
    lo = np.take_along_axis(cdf, idx, axis=1)
    hi = np.take_along_axis(cdf, idx + 1, axis=1)
    frac = np.clip((u - lo) / np.maximum(hi - lo, 1e-300), 0.0, 1.0)
    width = (far - near)[:, None] / S
    return near[:, None] + (idx + frac) * width


@dataclass
class RenderedRays:
    """Per-ray compositing results for a batch; tensors stay on the tape."""

    colors: dict[str, Tensor]
    opacity: Tensor
    weights: Tensor
    depth: np.ndarray
    t: np.ndarray

    @property
    def rgb(self) -> Tensor:
        return self.colors["rgb"]

    @property
    def xspec(self) -> Tensor:
        return self.colors["xspec"]


def composite(t, sigma, colors: dict, far, background=None) -> RenderedRays:
    """Alpha-composite samples along each ray.

    ``t`` (R, S) depths, ``sigma`` (R, S) densities, ``colors`` maps head name
    to (R, S, 3) values.  Intervals are ``t[i+1] - t[i]`` with the last one
    running to ``far``; equal depths give zero-length intervals.
    """
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 1:
        t = t[None]
    sigma = sigma if isinstance(sigma, Tensor) else Tensor(np.asarray(sigma, dtype=np.float64).reshape(t.shape))
    colors = {k: (c if isinstance(c, Tensor) else Tensor(np.asarray(c, dtype=np.float64).reshape(*t.shape, -1)))
              for k, c in colors.items()}
    far = np.broadcast_to(np.asarray(far, dtype=np.float64), (t.shape[0],))
    if np.any(np.diff(t, axis=1) < 0):
        raise ContractError("sample depths must be sorted ascending along each ray")
    sv = sigma.value
    if np.any(~(sv >= 0)):
        raise ContractError("densities must be non-negative")
    delta = np.concatenate([np.diff(t, axis=1), np.maximum(far[:, None] - t[:, -1:], 0.0)], axis=1)
    delta = delta.astype(sv.dtype)
    with np.errstate(invalid="ignore"):
        tau = sigma * delta
    if not sigma.tracked:
        tau.value[delta == 0] = 0.0  # inf * 0 for untracked opaque tests
    alpha = 1.0 - ops.exp(-tau)
    trans = ops.exp(-ops.cumsum_exclusive(tau, axis=1))
    w = trans * alpha
    opacity = ops.sum(w, axis=1)
    w3 = ops.reshape(w, (*t.shape, 1))
    out = {}
    for name, c in colors.items():
        bg = _background(background, name, c.shape[-1], sv.dtype)
        col = ops.sum(w3 * c, axis=1)
        if np.any(bg != 0):
            col = col + ops.reshape(1.0 - opacity, (t.shape[0], 1)) * bg
        out[name] = col
    depth = (w.value * t).sum(axis=1)
    return RenderedRays(out, opacity, w, depth, t)


def _background(background, name, channels, dtype):
    if background is None:
        return np.zeros(channels, dtype=dtype)
    if isinstance(background, dict):
        background = background.get(name, 0.0)
    return np.broadcast_to(np.asarray(background, dtype=dtype), (channels,))


@dataclass
class RenderSettings:
    n_coarse: int = 64
    n_fine: int = 64
    background: dict = field(default_factory=lambda: {"rgb": (0.0, 0.0, 0.0), "xspec": (0.0, 0.0, 0.0)})
    chunk: int = 4096


def _stage_pass(model, bundle, t, stage, tape, enc, background):
    R, S = t.shape
    pts = bundle.origins[:, None, :] + bundle.directions[:, None, :] * t[..., None]
    sigma, rgb, xs = query_heads(model, pts.reshape(-1, 3), None, stage, tape,
                                 encoded=np.repeat(enc, S, axis=0))
    return composite(t, ops.reshape(sigma, (R, S)),
                     {"rgb": ops.reshape(rgb, (R, S, 3)), "xspec": ops.reshape(xs, (R, S, 3))},
                     bundle.far, background)


def render_rays(model: SceneModel, bundle: RayBundle, settings: RenderSettings,
                tape: Tape | None = None, rng: np.random.Generator | None = None):
    """Coarse pass on stratified samples, fine pass on coarse+importance samples.

    Returns ``(coarse, fine)`` RenderedRays.  ``rng`` jitters the coarse
    strata and draws the fine quantiles; without it both are deterministic.
    """
    enc = encode_direction(bundle.directions, model.config.n_freqs).value
    tc = sample_coarse(bundle.near, bundle.far, settings.n_coarse, rng)
    coarse = _stage_pass(model, bundle, tc, "coarse", tape, enc, settings.background)
    if settings.n_fine > 0:
        tf = sample_fine(bundle.near, bundle.far, coarse.weights.value, settings.n_fine, rng)
        t_all = np.sort(np.concatenate([tc, tf], axis=1), axis=1)
    else:
        t_all = tc
    fine = _stage_pass(model, bundle, t_all, "fine", tape, enc, settings.background)
    return coarse, fine


def render_image(model: SceneModel, camera: CameraModel, settings: RenderSettings,
                 stage: str = "fine") -> dict[str, np.ndarray]:
    """Full-frame render without gradients: ``rgb``, ``xspec`` (H, W, 3), ``opacity``, ``depth`` (H, W)."""
    lo, hi = model.config.bbox_min, model.config.bbox_max
    bundle = generate_rays(camera, camera.all_pixels(), bbox=(lo, hi))
    outs = {k: [] for k in ("rgb", "xspec", "opacity", "depth")}
    for s in range(0, len(bundle), settings.chunk):
        sub = bundle.subset(slice(s, s + settings.chunk))
        coarse, fine = render_rays(model, sub, settings)
        r = fine if stage == "fine" else coarse
        outs["rgb"].append(r.rgb.value)
        outs["xspec"].append(r.xspec.value)
        outs["opacity"].append(r.opacity.value)
        outs["depth"].append(r.depth)
    H, W = camera.height, camera.width
    return {"rgb": np.concatenate(outs["rgb"]).reshape(H, W, 3),
            "xspec": np.concatenate(outs["xspec"]).reshape(H, W, 3),
            "opacity": np.concatenate(outs["opacity"]).reshape(H, W),
            "depth": np.concatenate(outs["depth"]).reshape(H, W)}


def to_uint8(image) -> np.ndarray:
    return np.clip(np.floor(np.asarray(image, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def write_png(path, image) -> None:
    """Write a [0, 1] float image as 8-bit PNG (round(255 c), clamped)."""
    Image.fromarray(to_uint8(image)).save(path, format="PNG")


DEPTH_MAGIC = b"DPT0"


def write_depth(path, depth) -> None:
    """Float32 depth map: 4-byte tag, u32 width, u32 height, little-endian data."""
    depth = np.asarray(depth, dtype="<f4")
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(DEPTH_MAGIC + struct.pack("<II", w, h))
        f.write(depth.tobytes())


def read_depth(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != DEPTH_MAGIC:
        raise ContractError(f"{path}: not a depth map")
    w, h = struct.unpack("<II", data[4:12])
    return np.frombuffer(data[12:], dtype="<f4").reshape(h, w).copy()
