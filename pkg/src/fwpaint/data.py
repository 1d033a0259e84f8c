"""Image datasets (folders and synthetic generators) and 8-bit image encode/decode."""
from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".ppm")
SYNTH_KINDS = ("blobs", "stripes", "squares")


class DatasetError(ValueError):
    pass


# ---------------------------------------------------------------------------
# pixel mapping
# ---------------------------------------------------------------------------

def to_uint8(x: np.ndarray) -> np.ndarray:
    """Float in [-1, 1] -> uint8 via ``clamp(floor((x + 1) * 127.5 + 0.5), 0, 255)``."""
    v = np.floor((np.asarray(x, dtype=np.float64) + 1.0) * 127.5 + 0.5)
    return np.clip(v, 0, 255).astype(np.uint8)


def from_uint8(v: np.ndarray) -> np.ndarray:
    return np.asarray(v, dtype=np.float32) / np.float32(127.5) - np.float32(1.0)


def _hwc(img: np.ndarray) -> np.ndarray:
    """(c, H, W) float image -> (H, W, 3) uint8; one channel is replicated to RGB."""
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[None]
    if img.shape[0] == 1:
        img = np.repeat(img, 3, axis=0)
    if img.shape[0] != 3:
        raise DatasetError(f"can only encode 1- or 3-channel images, got shape {img.shape}")
    return to_uint8(img).transpose(1, 2, 0)


def write_image(path, img: np.ndarray) -> None:
    """Write a (c, H, W) float image as 8-bit RGB PNG, or PPM P6 if the suffix is ``.ppm``."""
    path = Path(path)
    pixels = _hwc(img)
    if path.suffix.lower() == ".ppm":
        write_ppm(path, pixels)
    else:
        Image.fromarray(pixels, mode="RGB").save(path, format="PNG")


def write_rgb8(path, pixels: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 array as PNG."""
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8), mode="RGB").save(Path(path), format="PNG")


def write_ppm(path, pixels: np.ndarray) -> None:
    h, w, _ = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())


def read_image(path, channels: int = 3) -> np.ndarray:
    """Read a PNG/PPM file as a (channels, H, W) float32 image in [-1, 1]."""
    with Image.open(path) as im:
        im = im.convert("L" if channels == 1 else "RGB")
        arr = np.asarray(im, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return from_uint8(arr.transpose(2, 0, 1))


# ---------------------------------------------------------------------------
# dataset handle
# ---------------------------------------------------------------------------

class DatasetHandle:
    """In-memory image set of shape (N, c, R, R) with seeded per-epoch shuffling."""

    def __init__(self, images: np.ndarray, seed: int = 0, source: str = "", meta: dict | None = None) -> None:
        images = np.asarray(images, dtype=np.float32)
        if images.ndim != 4 or images.shape[0] == 0:
            raise DatasetError(f"dataset needs a non-empty (N, c, H, W) array, got shape {images.shape}")
        if images.min() < -1.0 or images.max() > 1.0:
            raise DatasetError("dataset pixels must lie in [-1, 1]")
        self.images = images
        self.seed = seed
        self.source = source
        self.meta = meta or {}

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def channels(self) -> int:
        return self.images.shape[1]

    @property
    def resolution(self) -> int:
        return self.images.shape[-1]

    def epoch_order(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.seed, epoch]).permutation(len(self))

    def index_stream(self, start_epoch: int = 0) -> Iterator[int]:
        epoch = start_epoch
        while True:
            yield from self.epoch_order(epoch)
            epoch += 1

    def batches(self, batch_size: int) -> Iterator[np.ndarray]:
        """Endless stream of (batch_size, c, R, R) batches, reshuffled every epoch."""
        stream = self.index_stream()
        while True:
            idx = [next(stream) for _ in range(batch_size)]
            yield self.images[idx]

    def sample(self, n: int, seed: int = 0) -> np.ndarray:
        """Deterministic selection of ``n`` images (all images first, then with replacement)."""
        if n <= len(self):
            return self.images[np.random.default_rng(seed).permutation(len(self))[:n]]
        extra = np.random.default_rng(seed).integers(0, len(self), n - len(self))
        return np.concatenate([self.images, self.images[extra]], axis=0)


def load_folder(path, resolution: int, channels: int = 3, seed: int = 0) -> DatasetHandle:
    """Load every decodable PNG/PPM in a flat directory; all must be ``resolution`` square."""
    path = Path(path)
    if not path.is_dir():
        raise DatasetError(f"{path} is not a directory")
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    images = []
    for f in files:
        try:
            img = read_image(f, channels)
        except (UnidentifiedImageError, OSError, SyntaxError) as e:
            log.warning("skipping undecodable image %s: %s", f, e)
            continue
        if img.shape[1:] != (resolution, resolution):
            raise DatasetError(f"{f} has size {img.shape[2]}x{img.shape[1]}, expected {resolution}x{resolution}")
        images.append(img)
    if not images:
        raise DatasetError(f"no decodable images in {path}")
    return DatasetHandle(np.stack(images), seed=seed, source=os.fspath(path))


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def _grid(res: int) -> np.ndarray:
    return np.arange(res, dtype=np.float64) + 0.5


def blob_margin(res: int) -> float:
    return res / 8.0


def _blobs(rng: np.random.Generator, n: int, res: int, channels: int, meta: dict) -> np.ndarray:
    """1-4 axis-aligned Gaussian bumps per image on a black background."""
    g = _grid(res)
    lo, hi = blob_margin(res), res - blob_margin(res)
    out = np.empty((n, channels, res, res))
    centres = []
    for i in range(n):
        img = np.zeros((channels, res, res))
        for _ in range(rng.integers(1, 5)):
            cy, cx = rng.uniform(lo, hi, size=2)
            sy, sx = rng.uniform(0.08, 0.2, size=2) * res
            colour = rng.uniform(0.3, 1.0, size=channels)
            bump = np.outer(np.exp(-0.5 * ((g - cy) / sy) ** 2), np.exp(-0.5 * ((g - cx) / sx) ** 2))
            img += colour[:, None, None] * bump
            centres.append((cy, cx))
        out[i] = 2.0 * np.clip(img, 0.0, 1.0) - 1.0
    meta["centres"] = np.array(centres)
    return out


def _stripes(rng: np.random.Generator, n: int, res: int, channels: int, meta: dict) -> np.ndarray:
    """Oriented sinusoidal gradients blending two random colours."""
    yy, xx = np.meshgrid(_grid(res) / res, _grid(res) / res, indexing="ij")
    out = np.empty((n, channels, res, res))
    for i in range(n):
        angle = rng.uniform(0, np.pi)
        freq = rng.uniform(0.5, 3.0)
        phase = rng.uniform(0, 2 * np.pi)
        a, b = rng.uniform(-1, 1, size=(2, channels))
        wave = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy) + phase)
        out[i] = a[:, None, None] + (b - a)[:, None, None] * wave
    return out


def _squares(rng: np.random.Generator, n: int, res: int, channels: int, meta: dict) -> np.ndarray:
    """1-3 filled rectangles over a linear colour gradient background."""
    yy, xx = np.meshgrid(_grid(res) / res, _grid(res) / res, indexing="ij")
    out = np.empty((n, channels, res, res))
    for i in range(n):
        angle = rng.uniform(0, 2 * np.pi)
        ramp = np.clip(0.5 + (np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5)), 0, 1)
        a, b = rng.uniform(-1, 0.2, size=(2, channels))
        img = a[:, None, None] + (b - a)[:, None, None] * ramp
        for _ in range(rng.integers(1, 4)):
            y0, x0 = rng.integers(0, res - 2, size=2)
            h, w = rng.integers(2, res // 2 + 1, size=2)
            img[:, y0:y0 + h, x0:x0 + w] = rng.uniform(-1, 1, size=channels)[:, None, None]
        out[i] = img
    return out


_GENERATORS = {"blobs": _blobs, "stripes": _stripes, "squares": _squares}


def synth_generate(kind: str, n: int, resolution: int, seed: int = 0, channels: int = 3) -> DatasetHandle:
    """Deterministic synthetic image set; see the per-kind helpers for the image model."""
    if kind not in _GENERATORS:
        raise DatasetError(f"unknown synthetic dataset {kind!r}; expected one of {list(SYNTH_KINDS)}")
    if n < 1 or resolution < 4:
        raise DatasetError("synthetic datasets need n >= 1 and resolution >= 4")
    rng = np.random.default_rng(seed)
    meta: dict = {"kind": kind}
    images = np.clip(_GENERATORS[kind](rng, n, resolution, channels, meta), -1.0, 1.0)
    return DatasetHandle(images.astype(np.float32), seed=seed, source=f"synth:{kind}", meta=meta)


def save_dataset(handle: DatasetHandle, out_dir, prefix: str = "img") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(handle.images):
        p = out_dir / f"{prefix}_{i:06d}.png"
        write_image(p, img)
        paths.append(p)
    return paths
