"""Synthetic multi-modal scenes with an exact renderer.

Scenes are unions of axis-aligned boxes and spheres filled with constant
density.  Where primitives overlap, densities add and emitted colors mix in
proportion to density, so every ray crosses a piecewise-constant medium that
can be integrated in closed form.
"""
from __future__ import annotations

import json
import shutil
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ContractError, DatasetError
from .render import CameraModel, composite, generate_rays, look_at, sample_coarse, to_uint8
from .sensors import synthesize_events, write_events, write_thermal_raw

DATASET_FORMAT = "mmnerf-dataset/1"
SCENE_FORMAT = "mmnerf-scene/1"
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class Primitive:
    kind: str
    center: tuple
    size: tuple | float
    density: float
    rgb: tuple
    thermal: float

    def __post_init__(self):
        if self.kind not in ("box", "sphere"):
            raise ContractError(f"unknown primitive kind {self.kind!r}")
        if self.density < 0:
            raise ContractError("primitive density must be non-negative")
        self.center = tuple(float(v) for v in self.center)
        self.rgb = tuple(float(v) for v in self.rgb)
        self.size = float(self.size) if self.kind == "sphere" else tuple(float(v) for v in self.size)

    def extent(self):
        c = np.array(self.center)
        half = np.full(3, self.size) if self.kind == "sphere" else np.array(self.size) / 2
        return c - half, c + half

    def interval(self, o, d):
        """Entry/exit depths (R,) along rays; entry > exit means a miss."""
        c = np.array(self.center)
        if self.kind == "box":
            lo, hi = self.extent()
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / d
                t0, t1 = (lo - o) * inv, (hi - o) * inv
            return np.nanmax(np.minimum(t0, t1), axis=1), np.nanmin(np.maximum(t0, t1), axis=1)
        oc = o - c
        b = np.sum(oc * d, axis=1)
        disc = b * b - (np.sum(oc * oc, axis=1) - self.size ** 2)
        root = np.sqrt(np.maximum(disc, 0.0))
        miss = disc <= 0
        return np.where(miss, np.inf, -b - root), np.where(miss, -np.inf, -b + root)

    def contains(self, p):
        c = np.array(self.center)
        if self.kind == "sphere":
            return np.sum((p - c) ** 2, axis=-1) <= self.size ** 2
        lo, hi = self.extent()
        return np.all((p >= lo) & (p <= hi), axis=-1)


@dataclass
class SyntheticScene:
    primitives: list[Primitive]
    bbox_min: tuple = (-1.0, -1.0, -1.0)
    bbox_max: tuple = (1.0, 1.0, 1.0)
    background_rgb: tuple = (0.0, 0.0, 0.0)
    background_thermal: float = 0.0

    def __post_init__(self):
        lo, hi = np.array(self.bbox_min), np.array(self.bbox_max)
        for p in self.primitives:
            plo, phi = p.extent()
            if np.any(plo < lo - 1e-12) or np.any(phi > hi + 1e-12):
                raise ContractError(f"primitive at {p.center} leaves the scene bounding box")

    def background(self, modality: str) -> np.ndarray:
        if modality == "rgb":
            return np.array(self.background_rgb, dtype=np.float64)
        return np.array([self.background_thermal], dtype=np.float64)

    def emission(self, modality: str) -> np.ndarray:
        """(P, channels) emitted values per primitive."""
        if modality == "rgb":
            return np.array([p.rgb for p in self.primitives]).reshape(-1, 3)
        if modality == "thermal":
            return np.array([[p.thermal] for p in self.primitives]).reshape(-1, 1)
        raise ContractError(f"unknown modality {modality!r}")

    def query(self, points, modality: str = "rgb"):
        """Density (N,) and density-weighted emission (N, channels) at ``points``."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        em = self.emission(modality)
        sigma = np.zeros(len(p))
        acc = np.zeros((len(p), em.shape[1]))
        for prim, e in zip(self.primitives, em):
            inside = prim.contains(p)
            sigma += inside * prim.density
            acc += (inside * prim.density)[:, None] * e
        color = np.where(sigma[:, None] > 0, acc / np.where(sigma > 0, sigma, 1.0)[:, None], 0.0)
        return sigma, color

    def to_dict(self) -> dict:
        return {"format": SCENE_FORMAT, "bbox_min": list(self.bbox_min), "bbox_max": list(self.bbox_max),
                "background_rgb": list(self.background_rgb), "background_thermal": self.background_thermal,
                "primitives": [{**asdict(p), "center": list(p.center), "rgb": list(p.rgb),
                                "size": p.size if p.kind == "sphere" else list(p.size)} for p in self.primitives]}

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticScene":
        if d.get("format") != SCENE_FORMAT:
            raise ContractError(f"unsupported scene format {d.get('format')!r}")
        return cls([Primitive(**p) for p in d["primitives"]], tuple(d["bbox_min"]), tuple(d["bbox_max"]),
                   tuple(d["background_rgb"]), d["background_thermal"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "SyntheticScene":
        return cls.from_dict(json.loads(Path(path).read_text()))


def oracle_render_rays(scene: SyntheticScene, origins, directions, modality: str = "rgb") -> np.ndarray:
    """Exact Beer-Lambert integration through the scene's piecewise-constant medium."""
    o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    bg = scene.background(modality)
    R = len(o)
    if not scene.primitives:
        return np.tile(bg, (R, 1))
    em = scene.emission(modality)
    dens = np.array([p.density for p in scene.primitives])
    enter, leave = zip(*(p.interval(o, d) for p in scene.primitives))
    enter = np.maximum(np.stack(enter, axis=1), 0.0)  # (R, P)
    leave = np.stack(leave, axis=1)
    valid = leave > enter
    enter = np.where(valid, enter, 0.0)
    leave = np.where(valid, leave, 0.0)
    bounds = np.sort(np.concatenate([enter, leave], axis=1), axis=1)  # (R, 2P)
    seg_len = np.diff(bounds, axis=1)
    mid = 0.5 * (bounds[:, 1:] + bounds[:, :-1])
    inside = valid[:, None, :] & (enter[:, None, :] <= mid[..., None]) & (mid[..., None] <= leave[:, None, :])
    sig = inside @ dens  # (R, S)
    mixed = (inside * dens) @ em  # (R, S, ch)
    color = np.where(sig[..., None] > 0, mixed / np.where(sig > 0, sig, 1.0)[..., None], 0.0)
    tau = sig * seg_len
    alpha = 1.0 - np.exp(-tau)
    trans = np.exp(-np.concatenate([np.zeros((R, 1)), np.cumsum(tau, axis=1)[:, :-1]], axis=1))
    w = trans * alpha
    residual = np.exp(-tau.sum(axis=1))
    return np.einsum("rs,rsc->rc", w, color) + residual[:, None] * bg


def oracle_render(scene: SyntheticScene, camera: CameraModel, modality: str = "rgb") -> np.ndarray:
    """Image (H, W, 3) for rgb or (H, W) for thermal, with no sampling error."""
    b = generate_rays(camera, camera.all_pixels())
    out = oracle_render_rays(scene, b.origins, b.directions, modality)
    shape = (camera.height, camera.width)
    return out.reshape(*shape, 3) if modality == "rgb" else out.reshape(shape)


def sampled_render(scene: SyntheticScene, camera: CameraModel, n_samples: int = 256,
                   modality: str = "rgb", rng=None) -> np.ndarray:
    """Same image through stratified sampling and :func:`mmnerf.render.composite`."""
    b = generate_rays(camera, camera.all_pixels(), bbox=(scene.bbox_min, scene.bbox_max))
    t = sample_coarse(b.near, b.far, n_samples, rng)
    pts = b.origins[:, None] + b.directions[:, None] * t[..., None]
    sigma, color = scene.query(pts.reshape(-1, 3), modality)
    sigma = np.where(np.repeat(b.hit, n_samples), sigma, 0.0)
    r = composite(t, sigma.reshape(t.shape), {"c": color.reshape(*t.shape, -1)}, b.far,
                  {"c": scene.background(modality)})
    out = r.colors["c"].value
    shape = (camera.height, camera.width)
    return out.reshape(*shape, 3) if modality == "rgb" else out.reshape(shape)


def luminance(rgb) -> np.ndarray:
    return np.asarray(rgb) @ LUMA


# --- scenes -----------------------------------------------------------------

def orchard_scene() -> SyntheticScene:
    """Small plant-like scene: soil, trunk, canopy and warm fruit."""
    prims = [
        Primitive("box", (0.0, 0.0, -0.85), (1.9, 1.9, 0.3), 10.0, (0.45, 0.33, 0.2), 0.35),
        Primitive("box", (0.0, 0.0, -0.4), (0.22, 0.22, 0.6), 10.0, (0.35, 0.25, 0.15), 0.5),
        Primitive("sphere", (0.0, 0.0, 0.25), 0.55, 6.0, (0.2, 0.6, 0.25), 0.25),
        Primitive("sphere", (0.42, -0.3, 0.2), 0.14, 20.0, (0.55, 0.15, 0.5), 0.95),
        Primitive("sphere", (-0.35, -0.4, 0.35), 0.13, 20.0, (0.8, 0.2, 0.15), 0.9),
        Primitive("sphere", (-0.2, 0.45, 0.05), 0.13, 20.0, (0.55, 0.15, 0.5), 0.95),
        Primitive("sphere", (0.3, 0.35, 0.5), 0.12, 20.0, (0.8, 0.2, 0.15), 0.9),
    ]
    return SyntheticScene(prims)


def random_scene(rng: np.random.Generator, n_primitives: int = 4, max_density: float = 1.0) -> SyntheticScene:
    """Random boxes and spheres inside the unit box (for oracle checks)."""
    prims = []
    for _ in range(n_primitives):
        kind = "sphere" if rng.random() < 0.5 else "box"
        if kind == "sphere":
            r = rng.uniform(0.2, 0.5)
            c = rng.uniform(-1 + r, 1 - r, 3)
            size = r
        else:
            size = rng.uniform(0.3, 1.0, 3)
            c = rng.uniform(-1 + size / 2, 1 - size / 2)
        prims.append(Primitive(kind, c, size, rng.uniform(0.3, max_density), rng.random(3), rng.random()))
    return SyntheticScene(prims, background_rgb=tuple(rng.random(3) * 0.3), background_thermal=0.1)


@dataclass
class TrajectorySpec:
    """Circular orbit around ``center``; view k is taken at time ``k * dt``."""

    center: tuple = (0.0, 0.0, -0.1)
    radius: float = 3.2
    height: float = 1.2
    n_views: int = 23
    dt: float = 0.1
    arc: float = 2 * np.pi
    start_angle: float = 0.0

    @property
    def step_angle(self) -> float:
        return self.arc / self.n_views

    def time(self, k) -> float:
        return k * self.dt

    def pose_at(self, t: float) -> np.ndarray:
        theta = self.start_angle + (t / self.dt) * self.step_angle
        c = np.array(self.center)
        eye = c + np.array([self.radius * np.cos(theta), self.radius * np.sin(theta), self.height])
        return look_at(eye, c)

    def poses(self) -> list[np.ndarray]:
        return [self.pose_at(self.time(k)) for k in range(self.n_views)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["center"] = list(d["center"])
        return d


@dataclass
class Intrinsics:
    width: int = 64
    height: int = 64
    fov_deg: float = 50.0

    def camera(self, pose=None) -> CameraModel:
        f = 0.5 * self.width / np.tan(np.radians(self.fov_deg) / 2)
        return CameraModel(self.width, self.height, f, f, self.width / 2, self.height / 2,
                           np.eye(4) if pose is None else pose)


def _write_png(path, img):
    Image.fromarray(img).save(path, format="PNG")


def generate_dataset(scene: SyntheticScene, trajectory: TrajectorySpec, intrinsics: Intrinsics, out_dir,
                     event_threshold: float = 0.2, seed: int = 0, thermal_range=(2000, 3000),
                     thermal_noise: float = 0.0, supersample: int = 10) -> Path:
    """Render every modality for each view and write a dataset directory.

    Layout: ``manifest.json``, ``scene.json``, ``rgb/NNNN.png`` (8-bit),
    ``thermal/NNNN.png`` (16-bit raw counts) and ``events.bin``.  Events come
    from the RGB luminance along a ``supersample``-times denser pose path.
    """
    if trajectory.n_views < 2:
        raise ContractError("a dataset needs at least two views")
    out = Path(out_dir)
    try:
        (out / "rgb").mkdir(parents=True, exist_ok=True)
        (out / "thermal").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DatasetError(f"cannot create dataset directory {out}: {e}") from e
    rng = np.random.default_rng(seed)
    lo, hi = thermal_range
    frames = []
    for k in range(trajectory.n_views):
        t = trajectory.time(k)
        cam = intrinsics.camera(trajectory.pose_at(t))
        rgb = oracle_render(scene, cam, "rgb")
        th = oracle_render(scene, cam, "thermal")
        counts = lo + (hi - lo) * th
        if thermal_noise > 0:
            counts = counts + rng.normal(0.0, thermal_noise, size=counts.shape)
        counts = np.clip(np.round(counts), 0, 65535).astype(np.uint16)
        rgb_rel, th_rel = f"rgb/{k:04d}.png", f"thermal/{k:04d}.png"
        _write_png(out / rgb_rel, to_uint8(rgb))
        write_thermal_raw(out / th_rel, counts)
        frames.append({"index": k, "time": t, "rgb": rgb_rel, "thermal_raw": th_rel,
                       "pose": [float(v) for v in cam.pose.ravel()]})

    times, lum = event_video(scene, trajectory, intrinsics, supersample)
    write_events(out / "events.bin", synthesize_events(lum, event_threshold, times))
    scene.save(out / "scene.json")
    manifest = {
        "format": DATASET_FORMAT,
        "convention": "opengl",
        "intrinsics": intrinsics.camera().intrinsics(),
        "frames": frames,
        "events": "events.bin",
        "event_threshold": event_threshold,
        "event_window": trajectory.dt,
        "thermal_range": [lo, hi],
        "scene": "scene.json",
        "bbox_min": list(scene.bbox_min),
        "bbox_max": list(scene.bbox_max),
        "background": {"rgb": list(scene.background_rgb), "thermal": scene.background_thermal},
        "trajectory": trajectory.to_dict(),
        "seed": seed,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def event_video(scene, trajectory, intrinsics, supersample: int = 10):
    """Timestamps and luminance frames along the densified pose path."""
    n_sub = (trajectory.n_views - 1) * supersample + 1
    times = np.arange(n_sub) * (trajectory.dt / supersample)
    lum = np.stack([luminance(oracle_render(scene, intrinsics.camera(trajectory.pose_at(t)), "rgb"))
                    for t in times])
    return times, lum


def lowlight_variant(src_dir, out_dir, rgb_gain: float, noise_sigma: float = 0.0, seed: int = 0) -> Path:
    """Copy a dataset with darkened, noisy RGB; thermal and events stay byte-identical."""
    if not 0 < rgb_gain <= 1:
        raise ContractError("rgb_gain must lie in (0, 1]")
    src, out = Path(src_dir), Path(out_dir)
    if out.exists():
        shutil.rmtree(out)
    shutil.copytree(src, out)
    manifest = json.loads((src / "manifest.json").read_text())
    rng = np.random.default_rng(seed)
    for fr in manifest["frames"]:
        with Image.open(src / fr["rgb"]) as im:
            img = np.asarray(im, dtype=np.float64) / 255.0
        if rgb_gain == 1 and noise_sigma == 0:
            continue
        dark = img * rgb_gain
        if noise_sigma > 0:
            dark = dark + rng.normal(0.0, noise_sigma, size=dark.shape)
        _write_png(out / fr["rgb"], to_uint8(np.clip(dark, 0.0, 1.0)))
    manifest["lowlight"] = {"rgb_gain": rgb_gain, "noise_sigma": noise_sigma, "seed": seed}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def dataset_files(path) -> dict[str, bytes]:
    """Relative path -> bytes for every file in a dataset directory."""
    root = Path(path)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


__all__ = [
    "Intrinsics", "Primitive", "SyntheticScene", "TrajectorySpec", "dataset_files", "event_video",
    "generate_dataset", "lowlight_variant", "luminance", "oracle_render", "oracle_render_rays",
    "orchard_scene", "random_scene", "sampled_render",
]
