"""
psmamba_core.train
~~~~~~~~~~~~~~~~~~
Training loop, validation, single-image restoration and the desk-scale
ablation harness.

Each step draws its randomness from ``default_rng([seed, step])``: crop
positions, augmentation and degradation noise. A resumed run therefore
needs nothing but parameters, Adam moments and the step counter to continue
bit-exactly. The next batch is prepared on a worker thread unless
deterministic mode is on.
"""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Sequence
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import TextIO

import numpy as np

from psmamba_core.checkpoint import load_model, restore_store, save_checkpoint
from psmamba_core.data import LoadedImage, center_crop, load_folder, random_crop, split_holdout
from psmamba_core.degrade import augment, degrade, mod_crop
from psmamba_core.errors import CheckpointError, DataError
from psmamba_core.functional import resize_bilinear
from psmamba_core.losses import task_loss
from psmamba_core.metrics import SSIM_MIN_SIDE, psnr, ssim
from psmamba_core.models import ModelConfig, RestoreTask, SplitLevel, TaskKind, TrainConfig
from psmamba_core.network import HierarchyParams, build_hierarchy, count_parameters, hierarchy_forward
from psmamba_core.optim import ParamStore, adam_step
from psmamba_core.tensor import Array, Tensor, deterministic, get_dtype, is_deterministic, no_grad, precision

logger = logging.getLogger(__name__)

LOG_HEADER = "step\tlr\tloss\tval_psnr\tval_ssim"
_VAL_STREAM = 0x7FFF_FFFF
_INIT_STREAM = 0x1A17


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Validation:
    step: int
    psnr: float
    ssim: float
    input_psnr: float
    images: int

    @property
    def gain(self) -> float:
        return self.psnr - self.input_psnr


@dataclass
class TrainResult:
    checkpoint: Path
    log_path: Path
    steps: int
    params: int
    losses: list[float] = field(default_factory=list)
    validations: list[Validation] = field(default_factory=list)
    milestone_checkpoints: list[Path] = field(default_factory=list)

    @property
    def final_validation(self) -> Validation | None:
        return self.validations[-1] if self.validations else None


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def restore_image(hp: HierarchyParams, degraded: Array) -> Array:
    """Forward one ``(C, H, W)`` image or a batch, clamped to [0, 1].

    Padding to the patch grid and cropping back happen inside the network.
    """
    batch = degraded if degraded.ndim == 4 else degraded[None]
    with no_grad():
        out = hierarchy_forward(Tensor(batch), hp).data
    out = np.clip(out, 0.0, 1.0)
    return out if degraded.ndim == 4 else out[0]


def _input_baseline(degraded: Array, task: RestoreTask, height: int, width: int) -> Array:
    """What "no restoration" looks like: the noisy image, or its bilinear upsample for SR."""
    if task.kind is TaskKind.DENOISE:
        return degraded
    with no_grad():
        return resize_bilinear(Tensor(degraded[None]), height, width).data[0]


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationSample:
    name: str
    clean: Array
    degraded: Array


def prepare_validation(
    images: Sequence[LoadedImage], cfg: TrainConfig, task: RestoreTask
) -> list[ValidationSample]:
    """Center crops degraded once with a fixed seed, so every evaluation sees the same inputs."""
    rng = np.random.default_rng([cfg.seed, _VAL_STREAM])
    s = task.upscale
    samples = []
    for img in images:
        clean = mod_crop(center_crop(mod_crop(img.pixels, s), cfg.val_crop), s)
        degraded = degrade(clean[None], task, rng)[0].astype(get_dtype())
        samples.append(ValidationSample(name=img.name, clean=np.ascontiguousarray(clean), degraded=degraded))
    return samples


def _maybe_ssim(a: Array, b: Array) -> float:
    if min(a.shape[-2:]) < SSIM_MIN_SIDE:
        return math.nan
    return ssim(a, b)


def validate(hp: HierarchyParams, samples: Sequence[ValidationSample], step: int = 0) -> Validation:
    task = hp.task
    psnrs, ssims, inputs = [], [], []
    for sample in samples:
        restored = restore_image(hp, sample.degraded)
        h, w = sample.clean.shape[-2:]
        psnrs.append(psnr(restored, sample.clean))
        ssims.append(_maybe_ssim(restored, sample.clean))
        inputs.append(psnr(_input_baseline(sample.degraded, task, h, w), sample.clean))
    return Validation(
        step=step,
        psnr=float(np.mean(psnrs)),
        ssim=float(np.mean(ssims)),
        input_psnr=float(np.mean(inputs)),
        images=len(samples),
    )


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------


def effective_crop(images: Sequence[LoadedImage], size: int, scale: int = 1) -> int:
    """Largest usable square crop <= ``size`` that fits every image and is a multiple of ``scale``."""
    smallest = min(min(img.pixels.shape[-2:]) for img in images)
    crop = min(size, smallest)
    crop -= crop % scale
    if crop < 1:
        raise DataError(f"images are too small for a {scale}x crop (smallest side {smallest})")
    return crop


def make_batch(
    images: Sequence[Array], cfg: TrainConfig, task: RestoreTask, step: int, crop: int
) -> tuple[Array, Array]:
    """``(degraded, clean)`` batch for ``step``, a pure function of ``(seed, step)``."""
    rng = np.random.default_rng([cfg.seed, step])
    clean = np.stack(
        [augment(random_crop(images[int(rng.integers(len(images)))], crop, rng), rng) for _ in range(cfg.batch_size)]
    )
    degraded = degrade(clean, task, rng)
    dtype = get_dtype()
    return np.ascontiguousarray(degraded, dtype=dtype), np.ascontiguousarray(clean, dtype=dtype)


def milestone_path(out: Path, step: int) -> Path:
    return out.with_name(f"{out.stem}_step{step:06d}{out.suffix or '.psmb'}")


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.6g}"


def _write_row(log: TextIO, step: int, lr: float, loss: float, val: Validation | None) -> None:
    fields = [str(step), _fmt(lr), _fmt(loss), _fmt(val.psnr if val else None), _fmt(val.ssim if val else None)]
    log.write("\t".join(fields) + "\n")
    log.flush()


def _load_images(data: str | Path | Sequence[LoadedImage]) -> list[LoadedImage]:
    if isinstance(data, (str, Path)):
        return load_folder(data)
    images = list(data)
    if not images:
        raise DataError("no training images given")
    return images


def _resume(path: Path, cfg: TrainConfig, task: RestoreTask) -> tuple[HierarchyParams, ParamStore]:
    hp, ckpt = load_model(path)
    if ckpt.model != cfg.model or ckpt.task != task:
        raise CheckpointError(
            f"{path}: checkpoint was trained with a different model or task configuration",
            path=str(path),
            record="meta.config",
        )
    store = restore_store(hp, ckpt)
    if store.step >= cfg.total_steps:
        logger.warning("checkpoint already at or past total_steps", extra={"step": store.step})
    return hp, store


def train(
    data: str | Path | Sequence[LoadedImage],
    cfg: TrainConfig,
    task: RestoreTask,
    out: str | Path,
    *,
    resume: str | Path | None = None,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Train a hierarchy on an image folder and write checkpoints plus a TSV log.

    Checkpoints are written at every lr milestone (``<out>_stepNNNNNN``) and
    at the end (``out``). ``resume`` continues from any such checkpoint.
    """
    out = Path(out)
    log_file = Path(log_path) if log_path else out.with_suffix(".log.tsv")
    with precision(cfg.precision), deterministic(cfg.deterministic or is_deterministic()):
        images = _load_images(data)
        train_set, val_set = split_holdout(images)
        s = task.upscale
        crop = effective_crop(train_set, cfg.crop_size, s)
        train_pixels = [img.pixels.astype(get_dtype()) for img in train_set]
        samples = prepare_validation(val_set, cfg, task)

        if resume is not None:
            hp, store = _resume(Path(resume), cfg, task)
        else:
            hp = build_hierarchy(cfg.model, task, rng=np.random.default_rng([cfg.seed, _INIT_STREAM]))
            store = ParamStore.from_named(hp.named_parameters())
        start = store.step
        result = TrainResult(checkpoint=out, log_path=log_file, steps=start, params=count_parameters(hp))
        logger.info(
            "training started",
            extra={
                "task": task.kind.value,
                "levels": [lv.value for lv in hp.levels],
                "params": result.params,
                "train_images": len(train_set),
                "val_images": len(val_set),
                "crop": crop,
                "start_step": start,
                "total_steps": cfg.total_steps,
            },
        )
        baseline = validate(hp, samples, step=start)
        logger.info("validation baseline", extra={"step": start, "input_psnr": baseline.input_psnr})

        milestones = set(cfg.resolved_milestones)
        log_file.parent.mkdir(parents=True, exist_ok=True)
        prefetch = None if is_deterministic() else ThreadPoolExecutor(max_workers=1, thread_name_prefix="psmamba-batch")
        try:
            with log_file.open("a" if resume is not None and log_file.exists() else "w", encoding="utf-8") as log:
                if log.tell() == 0:
                    log.write(LOG_HEADER + "\n")
                pending: Future[tuple[Array, Array]] | None = None
                for step in range(start + 1, cfg.total_steps + 1):
                    if pending is not None:
                        degraded, clean = pending.result()
                    else:
                        degraded, clean = make_batch(train_pixels, cfg, task, step, crop)
                    pending = None
                    if prefetch is not None and step < cfg.total_steps:
                        pending = prefetch.submit(make_batch, train_pixels, cfg, task, step + 1, crop)

                    t0 = time.perf_counter()
                    pred = hierarchy_forward(Tensor(degraded), hp)
                    loss, grad = task_loss(pred, clean, task)
                    store.zero_grad()
                    pred.backward(grad)
                    adam_step(store, cfg)
                    result.losses.append(loss)
                    result.steps = step
                    if not math.isfinite(loss):
                        logger.error("non-finite loss", extra={"step": step, "loss": loss})

                    lr = cfg.lr_at(step)
                    val = None
                    if step % cfg.val_every == 0 or step == cfg.total_steps:
                        val = validate(hp, samples, step=step)
                        result.validations.append(val)
                        logger.info(
                            "validation",
                            extra={
                                "step": step,
                                "val_psnr": val.psnr,
                                "val_ssim": val.ssim,
                                "input_psnr": val.input_psnr,
                            },
                        )
                    if step % cfg.log_every == 0 or val is not None:
                        _write_row(log, step, lr, loss, val)
                        logger.info(
                            "train step",
                            extra={"step": step, "lr": lr, "loss": loss, "seconds": time.perf_counter() - t0},
                        )
                    if step in milestones and step < cfg.total_steps:
                        result.milestone_checkpoints.append(save_checkpoint(milestone_path(out, step), hp, store))
        finally:
            if prefetch is not None:
                prefetch.shutdown(wait=True, cancel_futures=True)

        save_checkpoint(out, hp, store)
        logger.info("training finished", extra={"step": result.steps, "checkpoint": str(out)})
    return result


# ---------------------------------------------------------------------------
# Ablations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AblationRow:
    variant: str
    params: int
    val_psnr: float
    val_ssim: float
    input_psnr: float


@dataclass
class AblationTable:
    axis: str
    rows: list[AblationRow] = field(default_factory=list)

    def to_tsv(self) -> str:
        lines = [f"{self.axis}\tparams\tval_psnr\tval_ssim\tinput_psnr"]
        for r in self.rows:
            lines.append(f"{r.variant}\t{r.params}\t{r.val_psnr:.4f}\t{r.val_ssim:.4f}\t{r.input_psnr:.4f}")
        return "\n".join(lines) + "\n"

    def best(self) -> AblationRow:
        return max(self.rows, key=lambda r: r.val_psnr)


def _run_variants(
    axis: str,
    variants: Sequence[tuple[str, ModelConfig]],
    data: str | Path | Sequence[LoadedImage],
    cfg: TrainConfig,
    task: RestoreTask,
    out_dir: str | Path,
) -> AblationTable:
    images = _load_images(data)
    table = AblationTable(axis=axis)
    for label, model in variants:
        run_cfg = TrainConfig.model_validate({**cfg.model_dump(), "model": model.model_dump()})
        ckpt = Path(out_dir) / f"{axis}_{label}.psmb"
        result = train(images, run_cfg, task, ckpt)
        final = result.final_validation
        assert final is not None
        table.rows.append(
            AblationRow(
                variant=label,
                params=result.params,
                val_psnr=final.psnr,
                val_ssim=final.ssim,
                input_psnr=final.input_psnr,
            )
        )
        logger.info("ablation variant finished", extra={"axis": axis, "variant": label, "val_psnr": final.psnr})
    return table


def run_split_ablation(
    data: str | Path | Sequence[LoadedImage],
    levels: Sequence[SplitLevel],
    cfg: TrainConfig,
    task: RestoreTask,
    out_dir: str | Path,
) -> AblationTable:
    """One parameter-matched model per deepest split level, same seed and data."""
    variants = [
        (level.value, ModelConfig.model_validate({**cfg.model.model_dump(), "split_level": level})) for level in levels
    ]
    return _run_variants("level", variants, data, cfg, task, out_dir)


def run_channel_ablation(
    data: str | Path | Sequence[LoadedImage],
    channel_steps: Sequence[int],
    cfg: TrainConfig,
    task: RestoreTask,
    out_dir: str | Path,
) -> AblationTable:
    """One model per per-stage channel increment."""
    variants = [
        (str(step), ModelConfig.model_validate({**cfg.model.model_dump(), "channel_step": step}))
        for step in channel_steps
    ]
    return _run_variants("channel_step", variants, data, cfg, task, out_dir)
