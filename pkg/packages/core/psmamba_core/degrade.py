"""
psmamba_core.degrade
~~~~~~~~~~~~~~~~~~~~
Synthetic degradations and training-time augmentation on plain arrays.

Images are float arrays in [0, 1] with the two spatial axes last, so the
same functions serve single images ``(C, H, W)`` and batches ``(B, C, H, W)``.
"""

from __future__ import annotations

import numpy as np

from psmamba_core.models import RestoreTask, TaskKind
from psmamba_core.tensor import Array


def mod_crop(img: Array, factor: int) -> Array:
    """Trim bottom/right so both spatial sides are multiples of ``factor``."""
    h, w = img.shape[-2], img.shape[-1]
    return img[..., : h - h % factor, : w - w % factor]


def add_noise(clean: Array, sigma: float, rng: np.random.Generator) -> Array:
    """Additive Gaussian noise with std ``sigma / 255``, clamped to [0, 1]."""
    noise = rng.standard_normal(clean.shape) * (sigma / 255.0)
    return np.clip(clean + noise.astype(clean.dtype), 0.0, 1.0).astype(clean.dtype)


def area_downsample(img: Array, factor: int) -> Array:
    """Mean over non-overlapping ``factor x factor`` blocks (after mod-crop)."""
    cropped = mod_crop(img, factor)
    h, w = cropped.shape[-2] // factor, cropped.shape[-1] // factor
    blocks = cropped.reshape(*cropped.shape[:-2], h, factor, w, factor)
    return blocks.mean(axis=(-3, -1)).astype(img.dtype)


def degrade(clean: Array, task: RestoreTask, rng: np.random.Generator) -> Array:
    if task.kind is TaskKind.DENOISE:
        assert task.sigma is not None
        return add_noise(clean, task.sigma, rng)
    return area_downsample(clean, task.upscale)


def augment(clean: Array, rng: np.random.Generator) -> Array:
    """Random horizontal flip then rotation by 0/90/180/270 degrees."""
    out = clean[..., ::-1] if rng.integers(2) else clean
    out = np.rot90(out, k=int(rng.integers(4)), axes=(-2, -1))
    return np.ascontiguousarray(out)
