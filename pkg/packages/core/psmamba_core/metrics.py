"""
psmamba_core.metrics
~~~~~~~~~~~~~~~~~~~~
PSNR and SSIM on ``(C, H, W)`` images or ``(B, C, H, W)`` batches.

SSIM uses scikit-image with the reference settings: 11x11 Gaussian window
(sigma 1.5), K1 = 0.01, K2 = 0.03, population covariance, computed per
channel and averaged.
"""

from __future__ import annotations

import math

import numpy as np
from skimage.metrics import structural_similarity

from psmamba_core.errors import ShapeError
from psmamba_core.tensor import Array

PSNR_CAP_DB = 99.0
_REL_MSE_FLOOR = 1e-12
SSIM_MIN_SIDE = 11


def _pair(a: Array, b: Array, op: str) -> tuple[Array, Array]:
    a64 = np.asarray(a, dtype=np.float64)
    b64 = np.asarray(b, dtype=np.float64)
    if a64.shape != b64.shape:
        raise ShapeError(f"{op}: shapes {a64.shape} and {b64.shape} differ", expected=a64.shape, actual=b64.shape)
    return a64, b64


def psnr(a: Array, b: Array, peak: float = 1.0) -> float:
    """``10 log10(peak**2 / MSE)`` in dB, never above 99 dB.

    The cap is decided on ``MSE / peak**2`` so rescaling both images and the
    peak together leaves the result unchanged.
    """
    a64, b64 = _pair(a, b, "psnr")
    diff = a64 - b64
    rel_mse = float(np.mean(diff * diff)) / (peak * peak)
    if rel_mse < _REL_MSE_FLOOR:
        return PSNR_CAP_DB
    return min(-10.0 * math.log10(rel_mse), PSNR_CAP_DB)


def _ssim_image(a: Array, b: Array, data_range: float) -> float:
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < SSIM_MIN_SIDE:
        raise ShapeError(
            f"ssim needs both sides >= {SSIM_MIN_SIDE}, got {a.shape[-2:]}",
            expected=(SSIM_MIN_SIDE, SSIM_MIN_SIDE),
            actual=a.shape[-2:],
        )
    return float(
        structural_similarity(
            a,
            b,
            data_range=data_range,
            channel_axis=0,
            gaussian_weights=True,
            sigma=1.5,
            use_sample_covariance=False,
            K1=0.01,
            K2=0.03,
        )
    )


def ssim(a: Array, b: Array, data_range: float = 1.0) -> float:
    """Mean structural similarity in [-1, 1]; batches average per-image scores."""
    a64, b64 = _pair(a, b, "ssim")
    if a64.ndim == 4:
        return float(np.mean([_ssim_image(x, y, data_range) for x, y in zip(a64, b64, strict=True)]))
    return _ssim_image(a64, b64, data_range)
