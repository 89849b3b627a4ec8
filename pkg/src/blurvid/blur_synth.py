"""Blurred/sharp training pair generation and the on-disk dataset format.

Two generators are provided:

* rotational blur, rendered from an equirectangular panorama with a virtual
  camera sweeping between two orientations;
* dynamic blur, averaging a window of consecutive high-frame-rate video frames.

Dataset layout::

    root/manifest.json
    root/sample_000000/blur.png
    root/sample_000000/frame_00.png ...
    root/sample_000000/meta.json
"""
import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from . import geometry

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1


class InputError(ValueError):
    """Invalid source data or configuration for sample generation."""


class DatasetError(IOError):
    """Unreadable, missing or empty dataset."""


@dataclass
class SynthConfig:
    mode: str = "rotational"
    rotation_range: tuple = (-10.0, 10.0)
    c: float = 10.0
    n_dynamic: int = 7
    crop_size: int = 256
    output_size: int = 128
    fov: float = 60.0
    init_pitch_range: tuple = (-30.0, 30.0)
    samples_per_source: int = 26
    stride: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("rotational", "dynamic"):
            raise InputError(f"unknown synthesis mode {self.mode!r}")
        lo, hi = self.rotation_range
        if not -180.0 <= lo <= hi <= 180.0:
            raise InputError(f"rotation range {self.rotation_range} not within [-180, 180]")
        if self.c <= 0:
            raise InputError(f"c must be positive, got {self.c}")
        if self.n_dynamic < 3 or self.n_dynamic % 2 == 0:
            raise InputError(f"n_dynamic must be odd and >= 3, got {self.n_dynamic}")
        if self.stride < 1:
            raise InputError("stride must be >= 1")


@dataclass
class BlurSample:
    blurred: np.ndarray
    frames: np.ndarray
    n: int
    seed: int
    rotation: Optional[np.ndarray] = None
    crop_origin: Optional[tuple] = None
    source: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def middle_index(self):
        return int(np.floor((self.n - 1) / 2.0 + 0.5))

    @property
    def triple(self):
        """(initial, middle, final) frames."""
        return self.frames[[0, self.middle_index, self.n - 1]]

    @property
    def rotation_magnitude(self):
        if self.rotation is None:
            return None
        return float(np.linalg.norm(self.rotation))


def frame_count(beta, c=10.0):
    """Number of frames to render for a rotation ``beta`` (degrees)."""
    if c <= 0:
        raise InputError(f"c must be positive, got {c}")
    mag = float(np.linalg.norm(np.asarray(beta, dtype=np.float64)))
    return max(3, int(np.floor(c + mag / 3.0 + 0.5)))


def target_indices(n_source, n_target):
    """Evenly spaced indices picking ``n_target`` frames out of ``n_source``.

    Endpoints are always kept and the middle lands on round((n_source-1)/2).
    """
    if n_target > n_source:
        raise InputError(f"cannot select {n_target} frames from {n_source}")
    pos = np.linspace(0.0, n_source - 1.0, n_target)
    return np.floor(pos + 0.5).astype(int)


def _mean_frames(frames):
    return np.mean(frames, axis=0)


def generate_rotational_sample(pano, cfg, rng_seed, source=""):
    if cfg.mode != "rotational":
        raise InputError("config mode must be 'rotational'")
    try:
        pano = geometry.check_panorama(pano)
    except ValueError as e:
        raise InputError(str(e)) from e
    rng = np.random.default_rng(rng_seed)
    yaw = rng.uniform(0.0, 360.0)
    pitch = rng.uniform(*cfg.init_pitch_range)
    q_init = geometry.euler_to_quaternion((pitch, yaw, 0.0))
    lo, hi = cfg.rotation_range
    beta = rng.uniform(lo, hi, size=3) if hi > lo else np.full(3, float(lo))
    q_final = geometry.quat_multiply(q_init, geometry.euler_to_quaternion(beta))
    n = frame_count(beta, cfg.c)
    cam = geometry.VirtualCamera(cfg.fov, cfg.output_size, cfg.output_size)
    frames = np.stack([
        geometry.render_view(pano, geometry.slerp(q_init, q_final, i / (n - 1)), cam)
        for i in range(n)
    ])
    return BlurSample(
        blurred=_mean_frames(frames),
        frames=frames,
        n=n,
        seed=int(rng_seed),
        rotation=beta,
        source=source,
        meta={"initial_orientation": q_init.tolist()},
    )


def dynamic_windows(num_frames, n, stride=1):
    """Start indices of every full window of ``n`` frames."""
    if num_frames < n:
        return []
    return list(range(0, num_frames - n + 1, stride))


def generate_dynamic_sample(frames_in, cfg, rng_seed, start=None, source=""):
    if cfg.mode != "dynamic":
        raise InputError("config mode must be 'dynamic'")
    n = cfg.n_dynamic
    if n < 3 or n % 2 == 0:
        raise InputError(f"dynamic mode needs an odd window of at least 3 frames, got {n}")
    if len(frames_in) < n:
        raise InputError(f"window of {n} frames exceeds the {len(frames_in)} available")
    shapes = {np.shape(f) for f in frames_in}
    if len(shapes) != 1:
        raise InputError(f"frames differ in size: {sorted(shapes)}")
    h, w = next(iter(shapes))[:2]
    crop = cfg.crop_size
    if crop > min(h, w):
        raise InputError(f"crop size {crop} exceeds frame size {w}x{h}")
    rng = np.random.default_rng(rng_seed)
    if start is None:
        start = int(rng.integers(0, len(frames_in) - n + 1))
    elif not 0 <= start <= len(frames_in) - n:
        raise InputError(f"window start {start} out of range")
    y0 = int(rng.integers(0, h - crop + 1))
    x0 = int(rng.integers(0, w - crop + 1))
    frames = np.stack([
        np.asarray(f, dtype=np.float64)[y0:y0 + crop, x0:x0 + crop]
        for f in frames_in[start:start + n]
    ])
    return BlurSample(
        blurred=_mean_frames(frames),
        frames=frames,
        n=n,
        seed=int(rng_seed),
        crop_origin=(y0, x0),
        source=source,
        meta={"window_start": start},
    )


# -- image I/O --------------------------------------------------------------

def load_image(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_image(path, img):
    arr = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def _sample_meta(sample):
    return {
        "n": sample.n,
        "seed": sample.seed,
        "rotation": None if sample.rotation is None else [float(b) for b in sample.rotation],
        "crop_origin": None if sample.crop_origin is None else list(sample.crop_origin),
        "source": sample.source,
        "middle_index": sample.middle_index,
        **sample.meta,
    }


def write_dataset(samples, root, mode="rotational", seed=None, config=None):
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DatasetError(f"cannot create dataset directory {root}: {e}") from e
    entries = []
    for i, sample in enumerate(samples):
        name = f"sample_{i:06d}"
        d = root / name
        try:
            d.mkdir(exist_ok=True)
            save_image(d / "blur.png", sample.blurred)
            for j, frame in enumerate(sample.frames):
                save_image(d / f"frame_{j:02d}.png", frame)
            meta = _sample_meta(sample)
            (d / "meta.json").write_text(json.dumps(meta, indent=2))
        except OSError as e:
            raise DatasetError(f"failed writing sample {d}: {e}") from e
        entries.append({"dir": name, **meta})
    manifest = {
        "version": MANIFEST_VERSION,
        "mode": mode,
        "n_policy": "frame_count(beta, c)" if mode == "rotational" else "fixed",
        "seed": seed,
        "config": config,
        "num_samples": len(entries),
        "samples": entries,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def read_manifest(root):
    path = Path(root) / "manifest.json"
    if not path.exists():
        if Path(root).is_dir() and not any(Path(root).iterdir()):
            raise DatasetError(f"empty dataset: {root}")
        raise DatasetError(f"missing manifest: {path}")
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetError(f"unreadable manifest {path}: {e}") from e


def read_dataset(root):
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset directory not found: {root}")
    manifest = read_manifest(root)
    if not manifest.get("samples"):
        raise DatasetError(f"empty dataset: {root}")
    samples = []
    for entry in manifest["samples"]:
        d = root / entry["dir"]
        try:
            blurred = load_image(d / "blur.png")
            frames = np.stack([load_image(d / f"frame_{j:02d}.png") for j in range(entry["n"])])
        except OSError as e:
            raise DatasetError(f"failed reading sample {d}: {e}") from e
        extra = {k: v for k, v in entry.items()
                 if k not in ("dir", "n", "seed", "rotation", "crop_origin", "source", "middle_index")}
        samples.append(BlurSample(
            blurred=blurred,
            frames=frames,
            n=entry["n"],
            seed=entry["seed"],
            rotation=None if entry["rotation"] is None else np.array(entry["rotation"]),
            crop_origin=None if entry["crop_origin"] is None else tuple(entry["crop_origin"]),
            source=entry.get("source", ""),
            meta=extra,
        ))
    return samples


def config_dict(cfg):
    d = asdict(cfg)
    d["rotation_range"] = list(cfg.rotation_range)
    d["init_pitch_range"] = list(cfg.init_pitch_range)
    return d


def synthetic_panorama(height, rng, waves=24, max_freq=6.0, edge_sharpness=4.0):
    """Procedural 2:1 panorama built from random plane waves on the unit sphere.

    Seamless across the longitude seam and at the poles; ``edge_sharpness``
    squashes the waves through tanh to create step-like edges.
    """
    h, w = height, 2 * height
    xx, yy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    theta, phi = geometry.equirect_to_sphere(xx, yy, w, h)
    d = geometry.sphere_to_ray(theta, phi)
    pano = np.zeros((h, w, 3))
    for _ in range(waves):
        u = rng.standard_normal(3)
        u /= np.linalg.norm(u)
        freq = rng.uniform(0.5, max_freq)
        wave = np.tanh(edge_sharpness * np.cos(2 * np.pi * freq * (d @ u) + rng.uniform(0, 2 * np.pi)))
        pano += wave[..., None] * rng.uniform(-1.0, 1.0, size=3)
    pano = pano / (np.abs(pano).max() + 1e-12)
    return np.clip(0.5 + 0.5 * pano, 0.0, 1.0)
