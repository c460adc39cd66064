"""
psmamba_core.partition
~~~~~~~~~~~~~~~~~~~~~~
Geometry-aligned split and merge of feature maps, the in-patch raster, and
the adjacency-distortion diagnostic.

Cut geometry: recursive bisection alternating axes, height first::

    full        1 x 1 grid   (H      x W)
    halves      2 x 1 grid   (H/2    x W)
    quadrants   2 x 2 grid   (H/2    x W/2)
    octants     4 x 2 grid   (H/4    x W/2)
    sixteenths  4 x 4 grid   (H/4    x W/4)

Patches are ordered row-major over the patch grid, top-left first. Inside a
patch tokens are rastered row-major with width fastest.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from psmamba_core.errors import PartitionError, ShapeError
from psmamba_core.functional import place, reshape, window
from psmamba_core.models import SplitLevel
from psmamba_core.ssm import TokenSequence
from psmamba_core.tensor import Tensor

# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PartitionSpec:
    """A split level; extents and origins are derived for a concrete padded (H, W)."""

    level: SplitLevel

    @classmethod
    def of(cls, level: SplitLevel | str | int) -> PartitionSpec:
        if isinstance(level, int) and not isinstance(level, bool):
            return cls(SplitLevel.from_k(level))
        return cls(SplitLevel(level))

    @property
    def k(self) -> int:
        return self.level.k

    @property
    def grid(self) -> tuple[int, int]:
        """Patch grid as (rows, cols)."""
        return self.level.grid

    def divides(self, height: int, width: int) -> bool:
        rows, cols = self.grid
        return height % rows == 0 and width % cols == 0

    def require_divisible(self, height: int, width: int) -> None:
        if height < 1 or width < 1 or not self.divides(height, width):
            rows, cols = self.grid
            raise PartitionError(
                f"{height}x{width} map cannot be split into {self.level.value} "
                f"({rows}x{cols} grid); pad to a multiple of ({rows}, {cols}) first with pad_to_multiple",
                level=self.level.value,
                shape=(height, width),
            )

    def patch_shape(self, height: int, width: int) -> tuple[int, int]:
        """Extent (H_j, W_j) shared by every patch."""
        self.require_divisible(height, width)
        rows, cols = self.grid
        return height // rows, width // cols

    def origins(self, height: int, width: int) -> list[tuple[int, int]]:
        """Top-left corner of every patch, in patch order."""
        ph, pw = self.patch_shape(height, width)
        rows, cols = self.grid
        return [(r * ph, c * pw) for r in range(rows) for c in range(cols)]

    def sequence_lengths(self, height: int, width: int) -> list[int]:
        ph, pw = self.patch_shape(height, width)
        return [ph * pw] * self.k


@dataclass
class PatchSet:
    """The k patches of one split, in row-major patch-grid order."""

    patches: list[Tensor]
    spec: PartitionSpec
    parent_shape: tuple[int, int, int, int]

    def __len__(self) -> int:
        return len(self.patches)

    @property
    def origins(self) -> list[tuple[int, int]]:
        return self.spec.origins(self.parent_shape[2], self.parent_shape[3])


def lcm_grid(levels: Iterable[SplitLevel]) -> tuple[int, int]:
    """Smallest (rows, cols) multiple divisible by every level's grid."""
    rows, cols = 1, 1
    for level in levels:
        r, c = level.grid
        rows, cols = math.lcm(rows, r), math.lcm(cols, c)
    return rows, cols


# ---------------------------------------------------------------------------
# Split / merge
# ---------------------------------------------------------------------------


def split(x: Tensor, spec: PartitionSpec) -> PatchSet:
    """Copy ``x (B,C,H,W)`` out into ``spec.k`` patches. ``k = 1`` keeps ``x`` itself."""
    if x.ndim != 4:
        raise ShapeError(f"split expects (B, C, H, W), got {x.shape}", actual=x.shape)
    n, c, h, w = x.shape
    spec.require_divisible(h, w)
    parent = (n, c, h, w)
    if spec.k == 1:
        return PatchSet([x], spec, parent)
    ph, pw = spec.patch_shape(h, w)
    patches = [window(x, top, left, ph, pw) for top, left in spec.origins(h, w)]
    return PatchSet(patches, spec, parent)


def merge(ps: PatchSet) -> Tensor:
    """Reassemble the full map; inverse of :func:`split`."""
    n, c, h, w = ps.parent_shape
    if len(ps.patches) != ps.spec.k:
        raise PartitionError(
            f"{ps.spec.level.value} expects {ps.spec.k} patches, got {len(ps.patches)}",
            level=ps.spec.level.value,
            shape=(h, w),
        )
    ph, pw = ps.spec.patch_shape(h, w)
    for j, patch in enumerate(ps.patches):
        if patch.shape != (n, c, ph, pw):
            raise PartitionError(
                f"patch {j} has shape {patch.shape}, expected {(n, c, ph, pw)}",
                level=ps.spec.level.value,
                shape=patch.shape,
            )
    if ps.spec.k == 1:
        return ps.patches[0]
    return place(ps.patches, ps.origins, h, w)


# ---------------------------------------------------------------------------
# Patch raster
# ---------------------------------------------------------------------------


def unfold(patch: Tensor, origin: tuple[int, int] | None = None) -> TokenSequence:
    """Row-major raster ``(B,C,H_j,W_j) -> (B,C,H_j*W_j)``."""
    if patch.ndim != 4:
        raise ShapeError(f"unfold expects (B, C, H, W), got {patch.shape}", actual=patch.shape)
    n, c, h, w = patch.shape
    return TokenSequence(reshape(patch, (n, c, h * w)), origin=origin)


def fold(seq: TokenSequence, height: int, width: int) -> Tensor:
    """Inverse raster ``(B,C,L) -> (B,C,height,width)`` with ``L = height * width``."""
    n, c, length = seq.values.shape
    if length != height * width:
        raise ShapeError(
            f"cannot fold a length-{length} sequence into {height}x{width}",
            expected=(n, c, height * width),
            actual=seq.values.shape,
        )
    return reshape(seq.values, (n, c, height, width))


# ---------------------------------------------------------------------------
# Adjacency distortion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdjacencyStats:
    """Sequence-distance statistics of 4-neighbour pixel pairs under one rasterization."""

    level: SplitLevel
    k: int
    pairs: int
    severed: int
    mean_dist: float
    max_dist: int

    @property
    def severed_fraction(self) -> float:
        return self.severed / self.pairs if self.pairs else 0.0

    def tsv_row(self) -> str:
        return f"{self.level.value}\t{self.k}\t{self.mean_dist:.6g}\t{self.max_dist}\t{self.severed_fraction:.6g}"


@dataclass(frozen=True)
class AdjacencyReport:
    """Stats for the requested level plus the k = 1 full raster baseline."""

    height: int
    width: int
    stats: AdjacencyStats
    baseline: AdjacencyStats

    def to_tsv(self, *, header: bool = True) -> str:
        lines = [TSV_HEADER] if header else []
        lines.append(self.baseline.tsv_row())
        if self.stats.k != 1:
            lines.append(self.stats.tsv_row())
        return "\n".join(lines) + "\n"


TSV_HEADER = "level\tk\tmean_dist\tmax_dist\tsevered_fraction"


def _raster_index(height: int, width: int, spec: PartitionSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel patch id and in-patch sequence position."""
    ph, pw = spec.patch_shape(height, width)
    _, cols = spec.grid
    rr, cc = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    patch_id = (rr // ph) * cols + (cc // pw)
    position = (rr % ph) * pw + (cc % pw)
    return patch_id, position


def _stats(height: int, width: int, spec: PartitionSpec) -> AdjacencyStats:
    patch_id, position = _raster_index(height, width, spec)
    same, dist = [], []
    for a, b in (
        (np.s_[:, :-1], np.s_[:, 1:]),  # horizontal
        (np.s_[:-1, :], np.s_[1:, :]),  # vertical
    ):
        same.append((patch_id[a] == patch_id[b]).ravel())
        dist.append(np.abs(position[a] - position[b]).ravel())
    same_all = np.concatenate(same)
    dist_all = np.concatenate(dist)
    kept = dist_all[same_all]
    return AdjacencyStats(
        level=spec.level,
        k=spec.k,
        pairs=int(same_all.size),
        severed=int(same_all.size - kept.size),
        mean_dist=float(kept.mean()) if kept.size else 0.0,
        max_dist=int(kept.max()) if kept.size else 0,
    )


def adjacency_distortion(height: int, width: int, spec: PartitionSpec) -> AdjacencyReport:
    """Distribution of |sequence distance| over every 4-connected pixel pair.

    Pairs whose pixels land in different patches share no sequence; they are
    counted as severed and excluded from the distance statistics.
    """
    spec.require_divisible(height, width)
    baseline = _stats(height, width, PartitionSpec(SplitLevel.FULL))
    stats = baseline if spec.k == 1 else _stats(height, width, spec)
    return AdjacencyReport(height=height, width=width, stats=stats, baseline=baseline)


def distortion_table(height: int, width: int, levels: Sequence[SplitLevel]) -> str:
    """One TSV row per requested level (no separate baseline rows)."""
    rows = [TSV_HEADER]
    for level in levels:
        rows.append(adjacency_distortion(height, width, PartitionSpec(level)).stats.tsv_row())
    return "\n".join(rows) + "\n"
