"""
psmamba_core.data
~~~~~~~~~~~~~~~~~
Image folders, PNG I/O, the train/validation split and the bundled
synthetic texture corpus.

Images are held as ``(3, H, W)`` float arrays in [0, 1] in the current
precision. 8-bit values map through ``/255``; grayscale files are replicated
to three channels.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from psmamba_core.errors import DataError
from psmamba_core.tensor import Array, get_dtype

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = frozenset({".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"})
VALIDATION_PERCENT = 10


# ---------------------------------------------------------------------------
# PNG I/O
# ---------------------------------------------------------------------------


def load_image(path: str | Path) -> Array:
    with Image.open(path) as img:
        rgb = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return (rgb.transpose(2, 0, 1) / 255.0).astype(get_dtype())


def to_uint8(img: Array) -> np.ndarray:
    """``(C, H, W)`` floats -> ``(H, W, C)`` bytes, clamped and rounded."""
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def save_image(path: str | Path, img: Array) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img)).save(path, format="PNG")
    return path


# ---------------------------------------------------------------------------
# Folders
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LoadedImage:
    path: Path
    pixels: Array

    @property
    def name(self) -> str:
        return self.path.name


def list_images(folder: str | Path) -> list[Path]:
    folder = Path(folder)
    if not folder.is_dir():
        raise DataError(f"data folder {folder} does not exist or is not a directory", path=str(folder))
    files = sorted(p for p in folder.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DataError(f"no images found in {folder}", path=str(folder))
    return files


def load_folder(folder: str | Path) -> list[LoadedImage]:
    """Every readable image in ``folder``; unreadable files are skipped with a warning."""
    loaded: list[LoadedImage] = []
    for path in list_images(folder):
        try:
            loaded.append(LoadedImage(path=path, pixels=load_image(path)))
        except (OSError, UnidentifiedImageError, ValueError) as exc:
            logger.warning("skipping unreadable image", extra={"path": str(path), "error": str(exc)})
    if not loaded:
        raise DataError(f"no readable images in {folder}", path=str(folder))
    return loaded


def _name_hash(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "big")


def split_holdout(images: list[LoadedImage]) -> tuple[list[LoadedImage], list[LoadedImage]]:
    """Deterministic ~10% validation split by filename hash.

    At least one image is held out; a single-image folder validates on its
    only (training) image.
    """
    if len(images) == 1:
        return list(images), list(images)
    val = [img for img in images if _name_hash(img.name) % 100 < VALIDATION_PERCENT]
    if not val:
        val = [min(images, key=lambda img: _name_hash(img.name))]
    if len(val) == len(images):
        val = val[:1]
    held = {img.path for img in val}
    train = [img for img in images if img.path not in held]
    return train, val


# ---------------------------------------------------------------------------
# Crops
# ---------------------------------------------------------------------------


def random_crop(img: Array, size: int, rng: np.random.Generator) -> Array:
    h, w = img.shape[-2:]
    top = int(rng.integers(h - size + 1))
    left = int(rng.integers(w - size + 1))
    return img[..., top : top + size, left : left + size]


def center_crop(img: Array, size: int) -> Array:
    h, w = img.shape[-2:]
    ch, cw = min(size, h), min(size, w)
    top, left = (h - ch) // 2, (w - cw) // 2
    return img[..., top : top + ch, left : left + cw]


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------


def synthesize_texture(size: int, rng: np.random.Generator) -> Array:
    """Seeded sum of oriented sinusoids plus a hard edge, per channel, in [0, 1]."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    img = np.empty((3, size, size))
    for c in range(3):
        field_ = np.zeros((size, size))
        for _ in range(3):
            theta = rng.uniform(0, np.pi)
            freq = rng.uniform(1.0, 8.0)
            phase = rng.uniform(0, 2 * np.pi)
            field_ += rng.uniform(0.05, 0.15) * np.sin(
                2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase
            )
        img[c] = 0.5 + field_
    # one straight edge shared by all channels
    normal = rng.uniform(0, 2 * np.pi)
    offset = rng.uniform(0.3, 0.7)
    side = (np.cos(normal) * (xx - 0.5) + np.sin(normal) * (yy - 0.5) + 0.5) > offset
    img += np.where(side, 1.0, -1.0)[None] * rng.uniform(0.1, 0.25, size=(3, 1, 1))
    return np.clip(img, 0.0, 1.0).astype(get_dtype())


def write_synthetic_corpus(out_dir: str | Path, count: int = 8, size: int = 64, seed: int = 0) -> list[Path]:
    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    paths = [save_image(out / f"texture_{i:03d}.png", synthesize_texture(size, rng)) for i in range(count)]
    logger.info("synthetic corpus written", extra={"path": str(out), "count": count, "size": size, "seed": seed})
    return paths
