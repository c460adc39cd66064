"""Shared fixtures for the psmamba_cli suite."""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterator
from pathlib import Path

import numpy as np
import pytest
from typer.testing import CliRunner

from psmamba_core import HierarchyParams, ModelConfig, RestoreTask, build_hierarchy, save_image, set_deterministic

TINY_CONFIG = """\
# small enough to train in seconds
total_steps = 2
batch_size = 2
crop_size = 16
val_crop = 16
val_every = 2
log_every = 1
c0 = 4
channel_step = 4
n_blocks = 1
state_n = 2
reduction_r = 2
"""


@pytest.fixture()
def runner() -> CliRunner:
    return CliRunner()


@pytest.fixture(autouse=True)
def _restore_process_state() -> Iterator[None]:
    """The CLI callback reconfigures logging and the execution mode for the whole process."""
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers = handlers
    root.setLevel(level)
    set_deterministic(False)


@pytest.fixture()
def tiny_config(tmp_path: Path) -> Path:
    path = tmp_path / "run.cfg"
    path.write_text(TINY_CONFIG)
    return path


@pytest.fixture()
def image_dir(tmp_path: Path) -> Path:
    """Three random 8-bit images, one of odd size."""
    folder = tmp_path / "images"
    rng = np.random.default_rng(0)
    for name, (h, w) in {"a": (16, 16), "b": (16, 24), "c": (37, 53)}.items():
        save_image(folder / f"{name}.png", rng.integers(0, 256, size=(3, h, w)) / 255.0)
    return folder


@pytest.fixture()
def collapsed() -> Callable[[RestoreTask], HierarchyParams]:
    """Factory for a network whose body contributes nothing: identity for denoising, bilinear upsampling for SR."""

    def build(task: RestoreTask) -> HierarchyParams:
        cfg = ModelConfig(c0=4, channel_step=4, n_blocks=1, state_n=2, reduction_r=2)
        hp = build_hierarchy(cfg, task, rng=0)
        for _, block in hp.blocks():
            block.alpha.data[...] = 0.0
        hp.tail.weight.data[...] = 0.0
        hp.tail.bias.data[...] = 0.0
        return hp

    return build
