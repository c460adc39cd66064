"""
psmamba_core.gradcheck
~~~~~~~~~~~~~~~~~~~~~~
Central finite-difference check of analytic gradients.

The scalar objective is ``sum(w * f(x))`` for a fixed random ``w``; for every
parameter group (and the input) a seeded sample of entries is perturbed by
``+-step`` and the numeric slope compared against the backward pass with::

    rel = |analytic - numeric| / max(|analytic|, |numeric|, 1e-3)

Only meaningful in 64-bit mode.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np

from psmamba_core.errors import GradcheckError
from psmamba_core.tensor import Array, Tensor, get_dtype, no_grad

logger = logging.getLogger(__name__)

INPUT_GROUP = "input"
_REL_FLOOR = 1e-3


@dataclass
class GradcheckReport:
    tolerance: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(err < self.tolerance for err in self.max_rel_error.values())

    @property
    def worst(self) -> tuple[str, float]:
        if not self.max_rel_error:
            return "", 0.0
        name = max(self.max_rel_error, key=self.max_rel_error.__getitem__)
        return name, self.max_rel_error[name]

    def failures(self) -> list[str]:
        return [name for name, err in self.max_rel_error.items() if err >= self.tolerance]

    def to_tsv(self) -> str:
        lines = ["group\tentries\tmax_rel_error"]
        lines += [f"{name}\t{self.checked[name]}\t{err:.3e}" for name, err in self.max_rel_error.items()]
        return "\n".join(lines) + "\n"


def _sample(size: int, k: int, rng: np.random.Generator) -> Array:
    if size <= k:
        return np.arange(size)
    return np.sort(rng.choice(size, size=k, replace=False))


def gradcheck(
    fn: Callable[[Tensor], Tensor],
    x: Array | tuple[int, ...],
    params: Mapping[str, Tensor] | None = None,
    *,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    max_entries: int = 16,
    seed: int = 0,
) -> GradcheckReport:
    """Compare ``fn``'s backward pass with central differences.

    ``x`` is either the input array or a shape to draw a standard normal
    input for. ``params`` are the leaf tensors ``fn`` closes over.
    """
    if np.dtype(get_dtype()) != np.float64:
        raise GradcheckError("gradcheck requires 64-bit precision; wrap the call in precision('float64')")
    rng = np.random.default_rng(seed)
    data = rng.standard_normal(x) if isinstance(x, tuple) else np.array(x, dtype=np.float64)
    xt = Tensor(data, requires_grad=True, name=INPUT_GROUP)
    groups: dict[str, Tensor] = {INPUT_GROUP: xt, **dict(params or {})}
    for t in groups.values():
        if t.data.dtype != np.float64:
            raise GradcheckError(f"tensor {t.name or '?'} is {t.data.dtype}; build it in 64-bit mode")
        t.grad = None

    out = fn(xt)
    weights = rng.standard_normal(out.shape) / np.sqrt(max(out.size, 1))
    out.backward(weights)
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for name, t in groups.items()}

    def objective() -> float:
        with no_grad():
            return float(np.sum(weights * fn(xt).data))

    report = GradcheckReport(tolerance=tolerance)
    for name, t in groups.items():
        flat = t.data.reshape(-1)
        worst, count = 0.0, 0
        for idx in _sample(flat.size, max_entries, rng):
            original = flat[idx]
            if not np.isfinite(original):
                continue
            flat[idx] = original + step
            plus = objective()
            flat[idx] = original - step
            minus = objective()
            flat[idx] = original
            numeric = (plus - minus) / (2 * step)
            a = float(analytic[name].reshape(-1)[idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), _REL_FLOOR)
            worst = max(worst, rel)
            count += 1
        report.max_rel_error[name] = worst
        report.checked[name] = count
        t.grad = None

    name, err = report.worst
    logger.debug("gradcheck finished", extra={"passed": report.passed, "worst_group": name, "worst_rel": err})
    return report
