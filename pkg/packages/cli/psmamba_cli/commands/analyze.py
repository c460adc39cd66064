"""
psmamba_cli.commands.analyze
~~~~~~~~~~~~~~~~~~~~~~~~~~~~
Diagnostics for the two locality arguments behind patch-wise scanning.

Usage::

    psmamba analyze adjacency --height 64 --width 64 --levels full,octants,sixteenths
    psmamba analyze decay --a 0.5 --lags 8 --l-full 8 --l-patch 4
    psmamba analyze decay --ckpt model.psmb --block up.2.block.0 --lags 64
"""

from __future__ import annotations

from pathlib import Path
from typing import Annotated

import typer

from psmamba_core import SplitLevel

analyze_app = typer.Typer(
    name="analyze",
    help="Adjacency-distortion and state-decay reports.",
    no_args_is_help=True,
)


def parse_levels(raw: str) -> list[SplitLevel]:
    """``"full,octants"`` -> levels; unknown names raise ValueError."""
    names = [part.strip().lower() for part in raw.split(",") if part.strip()]
    if not names:
        raise ValueError("no split levels given")
    levels = []
    for name in names:
        try:
            levels.append(SplitLevel(name))
        except ValueError as exc:
            valid = ", ".join(lv.value for lv in SplitLevel)
            raise ValueError(f"invalid split level {name!r}; expected one of {valid}") from exc
    return levels


def _fail(message: str, code: int) -> typer.Exit:
    from psmamba_cli.main import fail

    return fail(message, code)


# ---------------------------------------------------------------------------
# adjacency
# ---------------------------------------------------------------------------


@analyze_app.command()
def adjacency(
    height: Annotated[int, typer.Option("--height", "-H", min=1, help="Feature-map height")],
    width: Annotated[int, typer.Option("--width", "-W", min=1, help="Feature-map width")],
    levels: Annotated[str, typer.Option("--levels", "-l", help="Comma-separated split levels")] = "full,octants",
) -> None:
    """Sequence distance between 4-connected neighbours for each level."""
    from psmamba_cli.output import print_tsv
    from psmamba_core import PartitionError, distortion_table

    try:
        chosen = parse_levels(levels)
        table = distortion_table(height, width, chosen)
    except (ValueError, PartitionError) as exc:
        raise _fail(str(exc), 2) from exc
    print_tsv(table)


# ---------------------------------------------------------------------------
# decay
# ---------------------------------------------------------------------------


@analyze_app.command()
def decay(
    ckpt: Annotated[Path | None, typer.Option("--ckpt", help="Checkpoint to read the scan parameters from")] = None,
    block: Annotated[str, typer.Option("--block", help="Block name prefix inside the checkpoint")] = "down.0.block.0",
    a: Annotated[float | None, typer.Option("--a", help="Scalar transition for a 1x1 system")] = None,
    b: Annotated[float, typer.Option("--b", help="Input weight of the scalar system")] = 1.0,
    cw: Annotated[float, typer.Option("--cw", help="Output weight of the scalar system")] = 1.0,
    d: Annotated[float, typer.Option("--d", help="Skip weight of the scalar system")] = 0.0,
    lags: Annotated[int, typer.Option("--lags", min=1, help="Per-lag rows 1..N")] = 16,
    l_full: Annotated[int, typer.Option("--l-full", min=1, help="Full-raster sequence length")] = 4096,
    l_patch: Annotated[int, typer.Option("--l-patch", min=1, help="Patch sequence length")] = 512,
) -> None:
    """Impulse-response decay and full-vs-patch sensitivity of one scan."""
    from psmamba_cli.output import print_tsv
    from psmamba_core import CheckpointError, SSMParams, decay_profile, load_model

    if (ckpt is None) == (a is None):
        raise _fail("give exactly one of --ckpt or --a", 2)
    if ckpt is not None:
        try:
            hp, _ = load_model(ckpt)
        except CheckpointError as exc:
            raise _fail(str(exc), 4) from exc
        blocks = dict(hp.blocks())
        if block not in blocks:
            raise _fail(f"no block {block!r} in {ckpt}; available: {', '.join(blocks)}", 2)
        params = blocks[block].ssm
    else:
        if not 0.0 <= a < 1.0:  # type: ignore[operator]
            raise _fail(f"--a must lie in [0, 1), got {a}", 2)
        params = SSMParams.from_transition(a, b, cw, d)  # type: ignore[arg-type]

    try:
        report = decay_profile(params, l_full=l_full, l_patch=l_patch, max_lag=lags)
    except ValueError as exc:
        raise _fail(str(exc), 2) from exc
    print_tsv(report.to_tsv())
