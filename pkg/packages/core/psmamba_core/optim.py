"""
psmamba_core.optim
~~~~~~~~~~~~~~~~~~
Named parameter storage and the Adam update.
"""

from __future__ import annotations

import logging
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field

import numpy as np

from psmamba_core.models import TrainConfig
from psmamba_core.tensor import Array, Tensor

logger = logging.getLogger(__name__)


@dataclass
class ParamStore:
    """Parameters by dotted name, with Adam first/second moments and a step counter.

    Gradients live on the tensors themselves (``Tensor.grad``) and are
    accumulated by ``backward``.
    """

    params: dict[str, Tensor]
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self) -> None:
        for name, p in self.params.items():
            self.m.setdefault(name, np.zeros_like(p.data))
            self.v.setdefault(name, np.zeros_like(p.data))
        extra = (set(self.m) | set(self.v)) - set(self.params)
        if extra:
            raise KeyError(f"moment buffers for unknown parameters: {sorted(extra)}")

    @classmethod
    def from_named(cls, named: Mapping[str, Tensor]) -> ParamStore:
        return cls(params=dict(named))

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def grad(self, name: str) -> Array:
        """Gradient of ``name``, zeros when none has been accumulated."""
        p = self.params[name]
        return p.grad if p.grad is not None else np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def snapshot(self) -> dict[str, Array]:
        return {name: p.data.copy() for name, p in self.params.items()}


def adam_step(store: ParamStore, cfg: TrainConfig, *, lr: float | None = None) -> ParamStore:
    """One bias-corrected Adam update in place; gradients are cleared afterwards.

    ``lr`` defaults to the scheduled rate for the step being taken.
    """
    store.step += 1
    t = store.step
    rate = cfg.lr_at(t) if lr is None else lr
    b1, b2, eps = cfg.beta1, cfg.beta2, cfg.adam_eps
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in store.params.items():
        g = store.grad(name)
        m = store.m[name]
        v = store.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= rate * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = None
    return store
