"""
psmamba_core.losses
~~~~~~~~~~~~~~~~~~~
Pixel losses. Each returns ``(loss, grad_pred)`` so the caller seeds
``pred.backward(grad_pred)`` directly.
"""

from __future__ import annotations

import numpy as np

from psmamba_core.errors import ShapeError
from psmamba_core.models import LossKind, RestoreTask
from psmamba_core.tensor import Array, Tensor


def _residual(pred: Tensor | Array, target: Tensor | Array) -> Array:
    p = pred.data if isinstance(pred, Tensor) else np.asarray(pred)
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if p.shape != t.shape:
        raise ShapeError(f"loss: prediction {p.shape} vs target {t.shape}", expected=t.shape, actual=p.shape)
    return p - t.astype(p.dtype)


def l1_loss(pred: Tensor | Array, target: Tensor | Array) -> tuple[float, Array]:
    """Mean absolute error; subgradient sign(r) / count with sign(0) = 0."""
    r = _residual(pred, target)
    count = r.size
    loss = float(np.mean(np.abs(r.astype(np.float64))))
    return loss, (np.sign(r) / count).astype(r.dtype)


def charbonnier_loss(pred: Tensor | Array, target: Tensor | Array, eps: float = 1e-3) -> tuple[float, Array]:
    """Per-element ``sqrt(r**2 + eps**2)`` averaged over all elements."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    r = _residual(pred, target)
    r64 = r.astype(np.float64)
    root = np.sqrt(r64 * r64 + eps * eps)
    # sqrt(r^2 + eps^2) - eps, cancellation-free; the mean of it is 0 at r = 0
    excess = (r64 * r64) / (root + eps)
    loss = eps + float(np.mean(excess))
    return loss, (r64 / root / r.size).astype(r.dtype)


def task_loss(pred: Tensor | Array, target: Tensor | Array, task: RestoreTask) -> tuple[float, Array]:
    if task.loss_kind is LossKind.CHARBONNIER:
        return charbonnier_loss(pred, target, task.charbonnier_eps)
    return l1_loss(pred, target)
