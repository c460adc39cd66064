"""
psmamba_cli.output
~~~~~~~~~~~~~~~~~~
Output formatting: tab-separated tables on stdout, rich summaries on stderr.
"""

from __future__ import annotations

import math
from collections.abc import Sequence

import typer
from rich.console import Console
from rich.table import Table

from psmamba_core import AblationTable, TrainResult

console = Console(stderr=True)


def print_tsv(text: str) -> None:
    """Write a finished TSV table to stdout unchanged."""
    typer.echo(text, nl=False)


def _num(value: float, digits: int = 4) -> str:
    return "nan" if math.isnan(value) else f"{value:.{digits}f}"


def print_train_summary(result: TrainResult) -> None:
    table = Table(title="Training run")
    table.add_column("Field", style="cyan")
    table.add_column("Value", style="green")

    table.add_row("Steps", str(result.steps))
    table.add_row("Parameters", f"{result.params:,}")
    if result.losses:
        table.add_row("Final loss", f"{result.losses[-1]:.6f}")
    final = result.final_validation
    if final is not None:
        table.add_row("Val PSNR", f"{_num(final.psnr)} dB")
        table.add_row("Input PSNR", f"{_num(final.input_psnr)} dB")
        table.add_row("Val SSIM", _num(final.ssim))
    table.add_row("Checkpoint", str(result.checkpoint))
    table.add_row("Log", str(result.log_path))

    console.print(table)


def print_eval_summary(rows: Sequence[tuple[str, float, float]], skipped: int) -> None:
    if not rows:
        console.print("[yellow]No image pairs evaluated.[/yellow]")
        return
    psnrs = [r[1] for r in rows]
    table = Table(title=f"Evaluation ({len(rows)} images, {skipped} skipped)")
    table.add_column("Metric", style="cyan")
    table.add_column("Mean", style="green")
    table.add_row("PSNR", f"{_num(sum(psnrs) / len(psnrs))} dB")
    table.add_row("SSIM", _num(sum(r[2] for r in rows) / len(rows)))
    console.print(table)


def print_ablation_summary(table_data: AblationTable) -> None:
    best = table_data.best()
    table = Table(title=f"Ablation over {table_data.axis}")
    table.add_column(table_data.axis, style="cyan")
    table.add_column("Params", justify="right")
    table.add_column("Val PSNR", style="green", justify="right")
    table.add_column("Val SSIM", justify="right")
    for row in table_data.rows:
        style = "bold" if row is best else None
        table.add_row(row.variant, f"{row.params:,}", _num(row.val_psnr), _num(row.val_ssim), style=style)
    console.print(table)
