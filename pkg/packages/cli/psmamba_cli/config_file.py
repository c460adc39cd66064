"""
psmamba_cli.config_file
~~~~~~~~~~~~~~~~~~~~~~~
Line-oriented ``key = value`` run configuration.

Blank lines and lines starting with ``#`` are ignored; every key is optional
and unknown keys are rejected. Example::

    # desk-scale denoising
    total_steps = 500
    c0 = 16
    state_n = 4
    n_blocks = 1
    split_level = octants
    milestones = 250, 400
    sigma = 25

:func:`serialize_config` writes every key with its resolved value, so
parse -> serialize -> parse yields the same configuration.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from psmamba_core import ConfigError, LossKind, ModelConfig, RestoreTask, TaskKind, TrainConfig

TRAIN_KEYS: tuple[str, ...] = (
    "lr",
    "beta1",
    "beta2",
    "batch_size",
    "crop_size",
    "total_steps",
    "milestones",
    "seed",
    "precision",
    "deterministic",
    "log_every",
    "val_every",
    "val_crop",
)
MODEL_KEYS: tuple[str, ...] = (
    "split_level",
    "n_blocks",
    "c0",
    "channel_step",
    "state_n",
    "alpha_init",
    "reduction_r",
)
TASK_KEYS: tuple[str, ...] = ("loss", "sigma", "scale", "charbonnier_eps")
KNOWN_KEYS: tuple[str, ...] = TRAIN_KEYS + MODEL_KEYS + TASK_KEYS

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class TaskSettings:
    """Task knobs from the file; the task kind itself comes from the command line."""

    sigma: float = 25.0
    scale: int = 2
    loss: LossKind | None = None
    charbonnier_eps: float = 1e-3

    def task(self, kind: TaskKind | str) -> RestoreTask:
        kind = TaskKind(kind)
        if kind is TaskKind.DENOISE:
            return RestoreTask.denoise(self.sigma, loss=self.loss, charbonnier_eps=self.charbonnier_eps)
        return RestoreTask.super_resolve(self.scale, loss=self.loss, charbonnier_eps=self.charbonnier_eps)


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    task_settings: TaskSettings

    @property
    def model(self) -> ModelConfig:
        return self.train.model


def _coerce(key: str, raw: str) -> Any:
    if key == "milestones":
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        return tuple(parts) if parts else None
    if key == "deterministic":
        lowered = raw.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
    if key == "loss" and raw.lower() in {"", "default", "none"}:
        return None
    return raw


def _names(key: str, message: str) -> bool:
    return re.search(rf"\b{re.escape(key)}\b", message) is not None


def _error_for(exc: ValidationError, lines: dict[str, int], group: tuple[str, ...]) -> ConfigError:
    first = exc.errors()[0]
    loc = [str(part) for part in first.get("loc", ())]
    msg = str(first.get("msg", ""))
    # cross-field validators report an empty location; fall back to the key their message names
    key = next((part for part in loc if part in group), "") or next((k for k in group if _names(k, msg)), "")
    line_no = lines.get(key, 0)
    where = f"line {line_no}: " if line_no else ""
    target = f"invalid value for {key!r}" if key else "invalid configuration"
    return ConfigError(f"{where}{target}: {first.get('msg', exc)}", line_no=line_no, key=key)


def parse_config(text: str) -> RunConfig:
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {raw_line!r}", line_no=line_no)
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.split(" #", 1)[0].strip()
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {line_no}: unknown key {key!r}", line_no=line_no, key=key)
        if key in values:
            raise ConfigError(
                f"line {line_no}: duplicate key {key!r} (first set on line {lines[key]})", line_no=line_no, key=key
            )
        values[key] = _coerce(key, raw)
        lines[key] = line_no

    model_fields = {k: values[k] for k in MODEL_KEYS if k in values}
    train_fields = {k: values[k] for k in TRAIN_KEYS if k in values}
    try:
        model = ModelConfig.model_validate(model_fields)
    except ValidationError as exc:
        raise _error_for(exc, lines, MODEL_KEYS) from exc
    try:
        train = TrainConfig.model_validate({**train_fields, "model": model})
    except ValidationError as exc:
        raise _error_for(exc, lines, TRAIN_KEYS) from exc

    task_fields = {k: values[k] for k in TASK_KEYS if k in values}
    try:
        settings = TaskSettings(
            sigma=float(task_fields.get("sigma", 25.0)),
            scale=int(task_fields.get("scale", 2)),
            loss=LossKind(task_fields["loss"]) if task_fields.get("loss") else None,
            charbonnier_eps=float(task_fields.get("charbonnier_eps", 1e-3)),
        )
        # both kinds must be constructible from these settings
        settings.task(TaskKind.DENOISE)
        settings.task(TaskKind.SUPER_RESOLVE)
    except (ValueError, ValidationError) as exc:
        msg = str(exc.errors()[0].get("msg", "")) if isinstance(exc, ValidationError) else str(exc)
        key = next((k for k in task_fields if _names(k, msg)), next(iter(task_fields), ""))
        line_no = lines.get(key, 0)
        raise ConfigError(f"line {line_no}: invalid task setting {key!r}: {exc}", line_no=line_no, key=key) from exc
    return RunConfig(train=train, task_settings=settings)


def load_config(path: str | Path | None) -> RunConfig:
    """Parse ``path``; ``None`` gives the defaults."""
    if path is None:
        return parse_config("")
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config(text)


def _format(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(str(v) for v in value)
    if hasattr(value, "value"):
        return str(value.value)
    return repr(value) if isinstance(value, float) else str(value)


def serialize_config(cfg: RunConfig) -> str:
    train = cfg.train
    model = train.model
    ts = cfg.task_settings
    lines = ["# psmamba run configuration"]
    lines += [f"{key} = {_format(getattr(train, key))}" for key in TRAIN_KEYS]
    lines += [f"{key} = {_format(getattr(model, key))}" for key in MODEL_KEYS]
    lines += [
        f"loss = {_format(ts.loss) or 'default'}",
        f"sigma = {_format(ts.sigma)}",
        f"scale = {_format(ts.scale)}",
        f"charbonnier_eps = {_format(ts.charbonnier_eps)}",
    ]
    return "\n".join(lines) + "\n"
