"""
psmamba_core.models
~~~~~~~~~~~~~~~~~~~
Pydantic v2 run-level models: restoration tasks, network hyperparameters and
training settings.

All models are immutable (``frozen=True``) and validate cross-field
invariants on construction, so a model that exists is a model that can be
run.
"""

from __future__ import annotations

import sys
from typing import Literal

if sys.version_info >= (3, 11):
    from enum import StrEnum
else:  # pragma: no cover - Python 3.10 compatibility
    from enum import Enum

    class StrEnum(str, Enum):
        """Backport of :class:`enum.StrEnum` (Python 3.11)."""

        __str__ = str.__str__
        __format__ = str.__format__

from pydantic import BaseModel, ConfigDict, Field, model_validator

# ---------------------------------------------------------------------------
# Enumerations
# ---------------------------------------------------------------------------


class SplitLevel(StrEnum):
    """Partition levels of the progressive split hierarchy."""

    FULL = "full"
    HALVES = "halves"
    QUADRANTS = "quadrants"
    OCTANTS = "octants"
    SIXTEENTHS = "sixteenths"

    @property
    def k(self) -> int:
        """Number of patches produced at this level."""
        return _GRIDS[self][0] * _GRIDS[self][1]

    @property
    def grid(self) -> tuple[int, int]:
        """Patch grid as (rows, cols); cuts alternate axes starting with height."""
        return _GRIDS[self]

    @classmethod
    def from_k(cls, k: int) -> SplitLevel:
        for level in cls:
            if level.k == k:
                return level
        raise ValueError(f"no split level with k={k}; expected one of 1, 2, 4, 8, 16")


_GRIDS: dict[SplitLevel, tuple[int, int]] = {
    SplitLevel.FULL: (1, 1),
    SplitLevel.HALVES: (2, 1),
    SplitLevel.QUADRANTS: (2, 2),
    SplitLevel.OCTANTS: (4, 2),
    SplitLevel.SIXTEENTHS: (4, 4),
}

_LEVEL_ORDER: tuple[SplitLevel, ...] = tuple(SplitLevel)


class TaskKind(StrEnum):
    """Restoration task families."""

    DENOISE = "denoise"
    SUPER_RESOLVE = "sr"


class LossKind(StrEnum):
    """Pixel losses used for training."""

    L1 = "l1"
    CHARBONNIER = "charbonnier"


# ---------------------------------------------------------------------------
# Base configuration
# ---------------------------------------------------------------------------


class _FrozenModel(BaseModel):
    """Shared base: immutable, validated, whitespace-stripped strings."""

    model_config = ConfigDict(
        frozen=True,
        populate_by_name=True,
        str_strip_whitespace=True,
        validate_assignment=True,
    )


# ---------------------------------------------------------------------------
# RestoreTask
# ---------------------------------------------------------------------------


class RestoreTask(_FrozenModel):
    """Degradation description binding data synthesis, loss and metrics.

    Example::

        task = RestoreTask.denoise(sigma=25)
        sr = RestoreTask.super_resolve(scale=2)
    """

    kind: TaskKind
    sigma: float | None = Field(
        default=None, description="Noise std on the [0, 255] scale (denoise only)."
    )
    scale: int | None = Field(default=None, description="Integer upscale factor (sr only).")
    loss: LossKind | None = Field(
        default=None,
        description="Training loss; defaults to Charbonnier for denoising and L1 for SR.",
    )
    charbonnier_eps: float = Field(default=1e-3, gt=0.0)

    @model_validator(mode="after")
    def _check_kind_fields(self) -> RestoreTask:
        if self.kind is TaskKind.DENOISE:
            if self.sigma is None or self.sigma <= 0:
                raise ValueError("denoise task requires sigma > 0")
        elif self.scale not in (2, 3, 4):
            raise ValueError(f"super-resolution scale must be 2, 3 or 4, got {self.scale}")
        return self

    @classmethod
    def denoise(cls, sigma: float = 25.0, **kwargs: object) -> RestoreTask:
        return cls(kind=TaskKind.DENOISE, sigma=sigma, **kwargs)  # type: ignore[arg-type]

    @classmethod
    def super_resolve(cls, scale: int = 2, **kwargs: object) -> RestoreTask:
        return cls(kind=TaskKind.SUPER_RESOLVE, scale=scale, **kwargs)  # type: ignore[arg-type]

    @property
    def upscale(self) -> int:
        """Output/input spatial ratio: 1 for denoising, s for SR."""
        return self.scale if self.kind is TaskKind.SUPER_RESOLVE and self.scale else 1

    @property
    def loss_kind(self) -> LossKind:
        if self.loss is not None:
            return self.loss
        return LossKind.CHARBONNIER if self.kind is TaskKind.DENOISE else LossKind.L1


# ---------------------------------------------------------------------------
# ModelConfig
# ---------------------------------------------------------------------------


class ModelConfig(_FrozenModel):
    """Hyperparameters of the progressive split hierarchy."""

    in_channels: int = Field(default=3, ge=1)
    c0: int = Field(default=48, ge=1, description="Base channel width after the shallow conv.")
    channel_step: int = Field(
        default=48, ge=0, description="Channels added per descending stage and removed per ascending stage."
    )
    n_blocks: int = Field(default=2, ge=1, description="Blocks per stage.")
    state_n: int = Field(default=8, ge=1, description="SSM state size N.")
    alpha_init: float = 0.1
    reduction_r: int = Field(default=4, ge=1)
    split_level: SplitLevel = SplitLevel.OCTANTS
    ln_eps: float = Field(default=1e-6, gt=0.0)

    @model_validator(mode="after")
    def _check_reduction(self) -> ModelConfig:
        for width in self.widths:
            if width % self.reduction_r:
                raise ValueError(
                    f"reduction_r={self.reduction_r} must divide every stage width {self.widths}"
                )
        return self

    @property
    def levels(self) -> tuple[SplitLevel, SplitLevel, SplitLevel]:
        """Descending-path levels: (halves, quadrants, deepest), clamped to the deepest."""
        deepest = self.split_level
        cap = _LEVEL_ORDER.index(deepest)
        base = (SplitLevel.HALVES, SplitLevel.QUADRANTS)
        first, second = (_LEVEL_ORDER[min(_LEVEL_ORDER.index(lv), cap)] for lv in base)
        return first, second, deepest

    @property
    def widths(self) -> tuple[int, ...]:
        """Channel width before the stages and after each descending lift."""
        return tuple(self.c0 + i * self.channel_step for i in range(len(self.levels) + 1))


# ---------------------------------------------------------------------------
# TrainConfig
# ---------------------------------------------------------------------------


class TrainConfig(_FrozenModel):
    """Optimizer, schedule and data-pipeline settings for one training run."""

    lr: float = Field(default=2e-4, gt=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    batch_size: int = Field(default=8, ge=1)
    crop_size: int = Field(default=64, ge=4, description="Training crop side on the clean (HR) image.")
    total_steps: int = Field(default=1000, ge=1)
    milestones: tuple[int, ...] | None = Field(
        default=None, description="Steps at which lr halves; default 50% and 80% of total_steps."
    )
    seed: int = 0
    precision: Literal["float32", "float64"] = "float32"
    deterministic: bool = False
    log_every: int = Field(default=10, ge=1)
    val_every: int = Field(default=100, ge=1)
    val_crop: int = Field(default=64, ge=11)
    model: ModelConfig = Field(default_factory=ModelConfig)

    @model_validator(mode="after")
    def _check_milestones(self) -> TrainConfig:
        ms = self.milestones
        if ms is not None:
            if any(b <= a for a, b in zip(ms, ms[1:], strict=False)):
                raise ValueError(f"milestones must be strictly increasing, got {ms}")
            if any(m <= 0 for m in ms):
                raise ValueError("milestones must be positive step numbers")
        return self

    @property
    def resolved_milestones(self) -> tuple[int, ...]:
        if self.milestones is not None:
            return self.milestones
        half = max(1, self.total_steps // 2)
        late = max(half + 1, (self.total_steps * 4) // 5)
        return (half, late)

    def lr_at(self, step: int) -> float:
        """Learning rate in effect for 1-based ``step``: halved once per milestone passed."""
        passed = sum(1 for m in self.resolved_milestones if step > m)
        return self.lr * (0.5**passed)
