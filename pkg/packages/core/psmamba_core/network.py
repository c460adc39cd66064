"""
psmamba_core.network
~~~~~~~~~~~~~~~~~~~~
The progressive split hierarchy.

    shallow conv
    down.0  lift +step, blocks @ halves     -> skip 0
    down.1  lift +step, blocks @ quadrants  -> skip 1
    down.2  lift +step, blocks @ octants    -> skip 2
    up.2    + skip 2, blocks @ octants,   drop -step
    up.1    + skip 1, blocks @ quadrants, drop -step
    up.0    + skip 0, blocks @ halves,    drop -step
    tail conv -> residual on the input (denoise) or on its bilinear
                 upsample after depth-to-space (SR)

Stage levels come from :attr:`ModelConfig.levels`. Parameter names are
dotted paths (``down.1.block.0.ssm.a_raw``) and are the checkpoint keys.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from psmamba_core.block import BlockParams, block_forward
from psmamba_core.errors import ShapeError
from psmamba_core.functional import (
    ConvKernel,
    add,
    conv2d,
    crop,
    pad_to_multiple,
    pixel_shuffle,
    resize_bilinear,
)
from psmamba_core.models import ModelConfig, RestoreTask, SplitLevel
from psmamba_core.partition import PartitionSpec, lcm_grid
from psmamba_core.tensor import Array, Tensor

logger = logging.getLogger(__name__)


@dataclass
class Stage:
    """One level of the hierarchy: a 1x1 channel projection plus its blocks."""

    level: SplitLevel
    proj: ConvKernel
    blocks: list[BlockParams]

    @property
    def spec(self) -> PartitionSpec:
        return PartitionSpec(self.level)


@dataclass
class HierarchyParams:
    config: ModelConfig
    task: RestoreTask
    shallow: ConvKernel
    down: list[Stage]
    up: list[Stage]  # up[i] mirrors down[i]; executed in reverse index order
    tail: ConvKernel
    _named: dict[str, Tensor] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.down) != len(self.up):
            raise ShapeError(f"{len(self.down)} descending stages but {len(self.up)} ascending")
        for i, (d, u) in enumerate(zip(self.down, self.up, strict=True)):
            if d.proj.out_channels != u.proj.in_channels or d.proj.in_channels != u.proj.out_channels:
                raise ShapeError(
                    f"stage {i}: lift {d.proj.weight.shape} and drop {u.proj.weight.shape} are not mirrored",
                    expected=(d.proj.in_channels, d.proj.out_channels),
                    actual=(u.proj.out_channels, u.proj.in_channels),
                )
        self._named = self._collect()

    @property
    def levels(self) -> tuple[SplitLevel, ...]:
        return tuple(stage.level for stage in self.down)

    @property
    def pad_grid(self) -> tuple[int, int]:
        return lcm_grid(self.levels)

    def _collect(self) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {"shallow.weight": self.shallow.weight, "shallow.bias": self.shallow.bias}
        for i, stage in enumerate(self.down):
            named[f"down.{i}.lift.weight"] = stage.proj.weight
            named[f"down.{i}.lift.bias"] = stage.proj.bias
            for j, block in enumerate(stage.blocks):
                named |= block.named_parameters(f"down.{i}.block.{j}")
        for i, stage in enumerate(self.up):
            for j, block in enumerate(stage.blocks):
                named |= block.named_parameters(f"up.{i}.block.{j}")
            named[f"up.{i}.drop.weight"] = stage.proj.weight
            named[f"up.{i}.drop.bias"] = stage.proj.bias
        named["tail.weight"] = self.tail.weight
        named["tail.bias"] = self.tail.bias
        return named

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self._named)

    def blocks(self) -> list[tuple[str, BlockParams]]:
        """Every block with its name prefix, descending path first."""
        out = [(f"down.{i}.block.{j}", b) for i, s in enumerate(self.down) for j, b in enumerate(s.blocks)]
        out += [(f"up.{i}.block.{j}", b) for i, s in enumerate(self.up) for j, b in enumerate(s.blocks)]
        return out


def named_parameters(hp: HierarchyParams) -> dict[str, Tensor]:
    return hp.named_parameters()


def count_parameters(hp: HierarchyParams) -> int:
    return sum(t.size for t in hp.named_parameters().values())


def build_hierarchy(cfg: ModelConfig, task: RestoreTask, rng: np.random.Generator | int = 0) -> HierarchyParams:
    """Randomly initialised hierarchy in the current precision."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    widths = cfg.widths
    shallow = ConvKernel.create(cfg.in_channels, cfg.c0, 3, rng)
    down, up = [], []
    for i, level in enumerate(cfg.levels):
        lift = ConvKernel.create(widths[i], widths[i + 1], 1, rng)
        blocks = [BlockParams.init(widths[i + 1], cfg, rng) for _ in range(cfg.n_blocks)]
        down.append(Stage(level, lift, blocks))
    for i, level in enumerate(cfg.levels):
        blocks = [BlockParams.init(widths[i + 1], cfg, rng) for _ in range(cfg.n_blocks)]
        drop = ConvKernel.create(widths[i + 1], widths[i], 1, rng)
        up.append(Stage(level, drop, blocks))
    tail_out = cfg.in_channels * task.upscale**2
    tail = ConvKernel.create(cfg.c0, tail_out, 3, rng, std=1e-3)
    hp = HierarchyParams(config=cfg, task=task, shallow=shallow, down=down, up=up, tail=tail)
    logger.debug(
        "hierarchy built",
        extra={"levels": [lv.value for lv in cfg.levels], "widths": list(widths), "params": count_parameters(hp)},
    )
    return hp


def hierarchy_forward(
    x: Tensor,
    hp: HierarchyParams,
    task: RestoreTask | None = None,
    skip_perturbation: Mapping[str, Array] | None = None,
) -> Tensor:
    """Restore a degraded batch ``(B, C_in, H, W)``.

    ``skip_perturbation`` maps ``"down.<i>"`` to an array added to that stage's
    stashed skip tensor only (not to the main path).
    """
    task = task or hp.task
    if x.ndim != 4 or x.shape[1] != hp.config.in_channels:
        raise ShapeError(
            f"expected (B, {hp.config.in_channels}, H, W) input, got {x.shape}",
            expected=(hp.config.in_channels,),
            actual=x.shape,
        )
    rows, cols = hp.pad_grid
    if x.shape[2] < rows or x.shape[3] < cols:
        raise ShapeError(
            f"input {x.shape[2]}x{x.shape[3]} is smaller than the {rows}x{cols} patch grid of the deepest level",
            expected=(rows, cols),
            actual=x.shape[2:],
        )
    perturb = dict(skip_perturbation or {})
    xp, record = pad_to_multiple(x, rows, cols)

    f = conv2d(xp, hp.shallow)
    skips: list[Tensor] = []
    for i, stage in enumerate(hp.down):
        f = conv2d(f, stage.proj)
        for block in stage.blocks:
            f = block_forward(f, block, stage.spec)
        skip = f
        if (delta := perturb.pop(f"down.{i}", None)) is not None:
            skip = add(f, Tensor(delta, dtype=f.data.dtype))
        skips.append(skip)
    if perturb:
        raise KeyError(f"unknown skip names {sorted(perturb)}")

    for i in reversed(range(len(hp.up))):
        stage = hp.up[i]
        f = add(f, skips[i])
        for block in stage.blocks:
            f = block_forward(f, block, stage.spec)
        f = conv2d(f, stage.proj)

    residual = conv2d(f, hp.tail)
    s = task.upscale
    if s == 1:
        out = add(xp, residual)
    else:
        base = resize_bilinear(xp, xp.shape[2] * s, xp.shape[3] * s)
        out = add(base, pixel_shuffle(residual, s))
    return crop(out, record, factor=s)
