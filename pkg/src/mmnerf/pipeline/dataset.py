"""Loading and validating on-disk multi-modal datasets."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ContractError, DatasetError
from ..render import CameraModel, RayBundle, check_pose, ray_box
from ..sensors import EventStream, accumulate_events, enhance_thermal, normalize_event_frame, read_events, \
    read_thermal_raw, thermal_to_unit

REQUIRED_KEYS = ("intrinsics", "frames", "events", "convention")
FRAME_KEYS = ("index", "time", "rgb", "thermal_raw", "pose")
# camera axes flip between the +z-forward/y-down and -z-forward/y-up conventions
_OPENCV_TO_OPENGL = np.diag([1.0, -1.0, -1.0, 1.0])


@dataclass
class Frame:
    index: int
    time: float
    rgb_path: Path
    thermal_path: Path
    pose: np.ndarray


class SceneDataset:
    """A validated dataset; images, enhanced thermal and event frames decode lazily and are cached."""

    def __init__(self, root, manifest: dict, frames: list[Frame], intrinsics: dict, manifest_hash: str):
        self.root = Path(root)
        self.manifest = manifest
        self.frames = frames
        self.intrinsics = intrinsics
        self.manifest_hash = manifest_hash
        self.event_path = self.root / manifest["events"]
        self.event_threshold = manifest.get("event_threshold")
        times = [f.time for f in frames]
        default_window = float(np.min(np.diff(times))) if len(times) > 1 else 1.0
        self.event_window = float(manifest.get("event_window", default_window))
        self.event_clip = float(manifest.get("event_clip", 5.0))
        self.thermal_grid = int(manifest.get("thermal_grid", 8))
        self.thermal_rounds = int(manifest.get("thermal_rounds", 3))
        self.bbox = (tuple(manifest.get("bbox_min", (-1.0, -1.0, -1.0))),
                     tuple(manifest.get("bbox_max", (1.0, 1.0, 1.0))))
        bg = manifest.get("background", {})
        self.background = {"rgb": tuple(bg.get("rgb", (0.0, 0.0, 0.0))),
                           "xspec": (float(bg.get("xspec", 0.0)),) * 3}
        self._cache: dict = {}

    def __len__(self):
        return len(self.frames)

    @property
    def width(self) -> int:
        return int(self.intrinsics["width"])

    @property
    def height(self) -> int:
        return int(self.intrinsics["height"])

    def camera(self, k: int) -> CameraModel:
        i = self.intrinsics
        return CameraModel(self.width, self.height, i["fx"], i["fy"], i["cx"], i["cy"], self.frames[k].pose)

    def _cached(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def rgb(self, k: int) -> np.ndarray:
        def load():
            path = self.frames[k].rgb_path
            try:
                with Image.open(path) as im:
                    img = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
            except OSError as e:
                raise DatasetError(f"cannot decode {path}: {e}") from e
            self._check_shape(img, path)
            return img
        return self._cached(("rgb", k), load)

    def thermal_raw(self, k: int) -> np.ndarray:
        def load():
            path = self.frames[k].thermal_path
            try:
                raw = read_thermal_raw(path)
            except OSError as e:
                raise DatasetError(f"cannot decode {path}: {e}") from e
            self._check_shape(raw, path)
            return raw
        return self._cached(("thraw", k), load)

    def thermal_enhanced(self, k: int) -> np.ndarray:
        return self._cached(("th8", k), lambda: enhance_thermal(self.thermal_raw(k), self.thermal_grid,
                                                                self.thermal_rounds))

    def thermal(self, k: int) -> np.ndarray:
        """Enhanced thermal as (H, W, 3) in [0, 1]."""
        return self._cached(("th", k), lambda: thermal_to_unit(self.thermal_enhanced(k)))

    def events(self) -> EventStream:
        def load():
            try:
                s = read_events(self.event_path)
            except OSError as e:
                raise DatasetError(f"cannot read events {self.event_path}: {e}") from e
            if (s.width, s.height) != (self.width, self.height):
                raise DatasetError(f"{self.event_path}: sensor {s.width}x{s.height} does not match images")
            return s
        return self._cached("events", load)

    def event_frames(self) -> list[np.ndarray]:
        """Normalized (H, W, 3) event frame for each view, windows starting at the frame time."""
        def build():
            frames = accumulate_events(self.events(), [f.time for f in self.frames], self.event_window)
            return [normalize_event_frame(f, self.event_clip) for f in frames]
        return self._cached("evframes", build)

    def event_frame(self, k: int) -> np.ndarray:
        return self.event_frames()[k]

    def _check_shape(self, img, path):
        if img.shape[:2] != (self.height, self.width):
            raise DatasetError(f"{path}: image is {img.shape[1]}x{img.shape[0]}, manifest says "
                               f"{self.width}x{self.height}")

    def split(self, name: str, holdout_every: int = 8) -> list[int]:
        """Holdout is every ``holdout_every``-th frame (0, n, 2n, ...); 0 disables it."""
        if name not in ("train", "holdout"):
            raise ContractError(f"unknown split {name!r}; expected train or holdout")
        held = [f.index for f in self.frames if holdout_every > 0 and f.index % holdout_every == 0]
        if name == "holdout":
            return held
        return [f.index for f in self.frames if f.index not in set(held)]

    def stacked(self, which: str, indices) -> np.ndarray:
        """(len(indices), H, W, 3) stack of ``rgb``, ``thermal`` or ``events`` supervision."""
        get = {"rgb": self.rgb, "thermal": self.thermal, "events": self.event_frame}[which]
        return np.stack([get(k) for k in indices])

    def rays(self, frames, pixels) -> RayBundle:
        """Rays through pixel centres of mixed frames, clipped to the scene box."""
        frames = np.asarray(frames, dtype=np.int64)
        px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
        i = self.intrinsics
        d_cam = np.stack([(px[:, 0] + 0.5 - i["cx"]) / i["fx"], -(px[:, 1] + 0.5 - i["cy"]) / i["fy"],
                          -np.ones(len(px))], axis=1)
        poses = self.poses()[frames]
        d = np.einsum("rij,rj->ri", poses[:, :3, :3], d_cam)
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        o = poses[:, :3, 3].copy()
        near, far, hit = ray_box(o, d, *self.bbox)
        return RayBundle(o, d, np.where(hit, near, 0.0), np.where(hit, far, 1.0), px, frames, hit)

    def poses(self) -> np.ndarray:
        return self._cached("poses", lambda: np.stack([f.pose for f in self.frames]))


def manifest_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_dataset(path) -> SceneDataset:
    """Read ``manifest.json`` under ``path`` and validate every reference.

    Raises DatasetError naming the offending file or frame.
    """
    root = Path(path)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise DatasetError(f"missing manifest: {mpath}")
    try:
        manifest = json.loads(mpath.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetError(f"unreadable manifest {mpath}: {e}") from e
    for key in REQUIRED_KEYS:
        if key not in manifest:
            raise DatasetError(f"{mpath}: missing key {key!r}")
    conv = manifest["convention"]
    if conv not in ("opengl", "opencv"):
        raise DatasetError(f"{mpath}: unknown camera convention {conv!r}")
    intr = manifest["intrinsics"]
    for key in ("width", "height", "fx", "fy", "cx", "cy"):
        if key not in intr:
            raise DatasetError(f"{mpath}: intrinsics missing {key!r}")
    if not manifest["frames"]:
        raise DatasetError(f"{mpath}: no frames")
    frames = []
    for n, fr in enumerate(manifest["frames"]):
        for key in FRAME_KEYS:
            if key not in fr:
                raise DatasetError(f"{mpath}: frame {n} missing key {key!r}")
        if fr["index"] != n:
            raise DatasetError(f"{mpath}: frame {n} has index {fr['index']}")
        pose = np.asarray(fr["pose"], dtype=np.float64)
        if pose.size != 16:
            raise DatasetError(f"{mpath}: frame {n} pose must have 16 entries")
        pose = pose.reshape(4, 4)
        if conv == "opencv":
            pose = pose @ _OPENCV_TO_OPENGL
        try:
            check_pose(pose)
        except ContractError as e:
            raise DatasetError(f"{mpath}: frame {n} pose rejected: {e}") from e
        rgb, th = root / fr["rgb"], root / fr["thermal_raw"]
        for p in (rgb, th):
            if not p.is_file():
                raise DatasetError(f"missing file referenced by frame {n}: {p}")
        frames.append(Frame(n, float(fr["time"]), rgb, th, pose))
    if np.any(np.diff([f.time for f in frames]) <= 0):
        raise DatasetError(f"{mpath}: frame times must be strictly increasing")
    if not (root / manifest["events"]).is_file():
        raise DatasetError(f"missing event file: {root / manifest['events']}")
    return SceneDataset(root, manifest, frames, intr, manifest_hash(mpath))
