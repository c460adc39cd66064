"""Shared fixtures for the psmamba_core suite."""

from __future__ import annotations

from collections.abc import Iterator

import numpy as np
import pytest

from psmamba_core import deterministic, precision


@pytest.fixture()
def f64() -> Iterator[None]:
    """Run the test in 64-bit precision."""
    with precision("float64"):
        yield


@pytest.fixture()
def serial() -> Iterator[None]:
    with deterministic(True):
        yield


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
