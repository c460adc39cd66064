"""
psmamba_cli.main
~~~~~~~~~~~~~~~~
Typer application entry point for the ``psmamba`` CLI.

Usage::

    psmamba synth --out corpus/
    psmamba train --config run.cfg --data corpus/ --task denoise --out model.psmb
    psmamba restore --ckpt model.psmb --in noisy/ --out restored/
    psmamba eval --pred restored/ --gt clean/
    psmamba ablate --data corpus/ --levels full,quadrants,octants --out ablation/
    psmamba analyze adjacency --height 64 --width 64 --levels full,octants
    psmamba analyze decay --a 0.5 --lags 8

Tables go to stdout as tab-separated text; logs and summaries go to stderr.

Exit codes::

    2  configuration error or invalid split level
    3  data folder error
    4  checkpoint or shape mismatch on restore
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import TYPE_CHECKING, Annotated

import typer

from psmamba_cli.commands.analyze import analyze_app, parse_levels
from psmamba_core import settings

if TYPE_CHECKING:
    from psmamba_cli.config_file import RunConfig

app = typer.Typer(
    name="psmamba",
    help="psmamba - progressive split state-space image restoration.",
    no_args_is_help=True,
)
app.add_typer(analyze_app, name="analyze")

logger = logging.getLogger("psmamba_cli")

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECKPOINT = 4

# ---------------------------------------------------------------------------
# Global state (populated by the callback)
# ---------------------------------------------------------------------------

_seed: int | None = None


def get_seed() -> int | None:
    """Return the global --seed override, if any."""
    return _seed


def fail(message: str, code: int) -> typer.Exit:
    """Report ``message`` on stderr and build the matching exit."""
    typer.echo(f"error: {message}", err=True)
    return typer.Exit(code=code)


@app.callback()
def main(
    log_level: Annotated[str, typer.Option(envvar="PSMAMBA_LOG_LEVEL", help="Log level")] = settings.LOG_LEVEL,
    seed: Annotated[int | None, typer.Option(help="Seed override for every command")] = None,
    deterministic: Annotated[
        bool,
        typer.Option("--deterministic/--no-deterministic", help="Single-threaded, reproducible execution"),
    ] = settings.DETERMINISTIC,
) -> None:
    """Configure global options for all commands."""
    from psmamba_core import configure_logging, set_deterministic

    global _seed  # noqa: PLW0603
    _seed = seed
    configure_logging(log_level, service_name="psmamba-cli")
    set_deterministic(deterministic)


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


@app.command()
def synth(
    out: Annotated[Path, typer.Option("--out", "-o", help="Output folder")],
    count: Annotated[int, typer.Option(min=1, help="Number of images")] = 8,
    size: Annotated[int, typer.Option(min=8, help="Image side in pixels")] = 64,
    seed: Annotated[int | None, typer.Option(help="Corpus seed (default: global --seed or 0)")] = None,
) -> None:
    """Write the bundled synthetic texture corpus as PNG files."""
    from psmamba_core import write_synthetic_corpus

    corpus_seed = seed if seed is not None else (get_seed() or 0)
    paths = write_synthetic_corpus(out, count=count, size=size, seed=corpus_seed)
    for path in paths:
        typer.echo(str(path))


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _run_config(config: Path | None) -> RunConfig:
    """Load ``config`` and apply the global --seed override."""
    from psmamba_cli.config_file import load_config
    from psmamba_core import ConfigError

    try:
        cfg = load_config(config)
    except ConfigError as exc:
        raise fail(str(exc), EXIT_CONFIG) from exc
    seed = get_seed()
    if seed is not None:
        from psmamba_core import TrainConfig

        train_cfg = TrainConfig.model_validate({**cfg.train.model_dump(), "seed": seed})
        cfg = dataclasses.replace(cfg, train=train_cfg)
    return cfg


@app.command()
def train(
    data: Annotated[Path, typer.Option("--data", "-d", help="Folder of clean training images")],
    out: Annotated[Path, typer.Option("--out", "-o", help="Final checkpoint path")],
    config: Annotated[Path | None, typer.Option("--config", "-c", help="key = value run configuration")] = None,
    task: Annotated[str, typer.Option("--task", "-t", help="denoise or sr")] = "denoise",
    resume: Annotated[Path | None, typer.Option("--resume", help="Checkpoint to continue from")] = None,
) -> None:
    """Train a restoration network and write its checkpoint and TSV log."""
    from psmamba_cli.output import print_train_summary
    from psmamba_core import CheckpointError, DataError, TaskKind
    from psmamba_core import train as run_training

    cfg = _run_config(config)
    try:
        restore_task = cfg.task_settings.task(TaskKind(task))
    except ValueError as exc:
        raise fail(f"invalid task {task!r}; expected one of denoise, sr", EXIT_CONFIG) from exc

    try:
        result = run_training(data, cfg.train, restore_task, out, resume=resume)
    except DataError as exc:
        raise fail(str(exc), EXIT_DATA) from exc
    except CheckpointError as exc:
        raise fail(str(exc), EXIT_CHECKPOINT) from exc
    print_train_summary(result)


# ---------------------------------------------------------------------------
# restore
# ---------------------------------------------------------------------------


@app.command()
def restore(
    ckpt: Annotated[Path, typer.Option("--ckpt", help="Trained checkpoint")],
    in_dir: Annotated[Path, typer.Option("--in", help="Folder of degraded images")],
    out_dir: Annotated[Path, typer.Option("--out", help="Folder for restored PNGs")],
    task: Annotated[str | None, typer.Option("--task", "-t", help="Expected task (denoise or sr)")] = None,
    jobs: Annotated[int, typer.Option("--jobs", "-j", min=1, help="Images restored concurrently")] = 1,
) -> None:
    """Restore every image in a folder with a trained checkpoint."""
    from psmamba_core import (
        CheckpointError,
        DataError,
        ShapeError,
        TaskKind,
        is_deterministic,
        list_images,
        load_image,
        load_model,
        precision,
        restore_image,
        save_image,
    )

    with precision(settings.PRECISION):
        try:
            hp, _ = load_model(ckpt)
        except CheckpointError as exc:
            raise fail(str(exc), EXIT_CHECKPOINT) from exc
        if task is not None:
            try:
                expected = TaskKind(task)
            except ValueError as exc:
                raise fail(f"invalid task {task!r}; expected one of denoise, sr", EXIT_CONFIG) from exc
            if expected is not hp.task.kind:
                raise fail(f"{ckpt} was trained for {hp.task.kind.value}, not {expected.value}", EXIT_CHECKPOINT)
        try:
            paths = list_images(in_dir)
        except DataError as exc:
            raise fail(str(exc), EXIT_DATA) from exc

        def restore_one(path: Path) -> Path:
            t0 = time.perf_counter()
            degraded = load_image(path)
            restored = restore_image(hp, degraded)
            target = save_image(out_dir / f"{path.stem}.png", restored)
            logger.info(
                "image restored",
                extra={
                    "path": str(path),
                    "out": str(target),
                    "in_shape": list(degraded.shape[-2:]),
                    "out_shape": list(restored.shape[-2:]),
                    "seconds": time.perf_counter() - t0,
                },
            )
            return target

        workers = 1 if is_deterministic() else jobs
        try:
            if workers == 1:
                written = [restore_one(p) for p in paths]
            else:
                with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="psmamba-restore") as pool:
                    written = list(pool.map(restore_one, paths))
        except ShapeError as exc:
            raise fail(str(exc), EXIT_CHECKPOINT) from exc
    for path in written:
        typer.echo(str(path))


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


@app.command(name="eval")
def evaluate(
    pred: Annotated[Path, typer.Option("--pred", help="Folder of restored images")],
    gt: Annotated[Path, typer.Option("--gt", help="Folder of ground-truth images")],
) -> None:
    """Per-image and mean PSNR / SSIM of paired images (matched by file stem)."""
    from PIL import UnidentifiedImageError

    from psmamba_cli.output import print_eval_summary, print_tsv
    from psmamba_core import DataError, ShapeError, list_images, load_image, psnr, ssim

    try:
        pred_paths = list_images(pred)
        gt_by_stem = {p.stem: p for p in list_images(gt)}
    except DataError as exc:
        raise fail(str(exc), EXIT_DATA) from exc

    rows: list[tuple[str, float, float]] = []
    skipped = 0
    for path in pred_paths:
        ref = gt_by_stem.get(path.stem)
        if ref is None:
            logger.warning("no ground truth for prediction; skipping", extra={"path": str(path)})
            skipped += 1
            continue
        try:
            a, b = load_image(path), load_image(ref)
        except (OSError, UnidentifiedImageError, ValueError) as exc:
            logger.warning("unreadable image pair; skipping", extra={"path": str(path), "error": str(exc)})
            skipped += 1
            continue
        if a.shape != b.shape:
            logger.warning(
                "shape mismatch; skipping",
                extra={"path": str(path), "pred_shape": list(a.shape), "gt_shape": list(b.shape)},
            )
            skipped += 1
            continue
        try:
            s = ssim(a, b)
        except ShapeError:
            s = math.nan
        rows.append((path.name, psnr(a, b), s))

    lines = ["image\tpsnr\tssim"]
    lines += [f"{name}\t{p:.4f}\t{s:.4f}" for name, p, s in rows]
    if rows:
        mean_p = sum(r[1] for r in rows) / len(rows)
        mean_s = sum(r[2] for r in rows) / len(rows)
        lines.append(f"mean\t{mean_p:.4f}\t{mean_s:.4f}")
    print_tsv("\n".join(lines) + "\n")
    print_eval_summary(rows, skipped)


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------


def _int_list(raw: str) -> list[int]:
    try:
        return [int(part) for part in raw.split(",") if part.strip()]
    except ValueError as exc:
        raise fail(f"expected a comma-separated list of integers, got {raw!r}", EXIT_CONFIG) from exc


@app.command()
def ablate(
    data: Annotated[Path, typer.Option("--data", "-d", help="Folder of clean training images")],
    out: Annotated[Path, typer.Option("--out", "-o", help="Folder for per-variant checkpoints")],
    levels: Annotated[str | None, typer.Option("--levels", help="Deepest split levels to compare")] = None,
    channel_steps: Annotated[
        str | None, typer.Option("--channel-steps", help="Channel increments to compare, e.g. 16,32,48")
    ] = None,
    config: Annotated[Path | None, typer.Option("--config", "-c", help="Shared run configuration")] = None,
    task: Annotated[str, typer.Option("--task", "-t", help="denoise or sr")] = "denoise",
) -> None:
    """Train one model per variant and print the comparison table."""
    from psmamba_cli.output import print_ablation_summary, print_tsv
    from psmamba_core import DataError, TaskKind, run_channel_ablation, run_split_ablation

    cfg = _run_config(config)
    try:
        restore_task = cfg.task_settings.task(TaskKind(task))
    except ValueError as exc:
        raise fail(f"invalid task {task!r}; expected one of denoise, sr", EXIT_CONFIG) from exc

    try:
        if channel_steps is not None:
            table = run_channel_ablation(data, _int_list(channel_steps), cfg.train, restore_task, out)
        else:
            chosen = parse_levels(levels or "full,quadrants,octants,sixteenths")
            table = run_split_ablation(data, chosen, cfg.train, restore_task, out)
    except DataError as exc:
        raise fail(str(exc), EXIT_DATA) from exc
    except ValueError as exc:
        raise fail(str(exc), EXIT_CONFIG) from exc
    print_tsv(table.to_tsv())
    print_ablation_summary(table)


if __name__ == "__main__":
    app()
