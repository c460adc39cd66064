"""
Tests for psmamba_core.losses.

Covers: closed-form values, gradients, the epsilon floor of Charbonnier
and its distance from L1, and per-task loss selection.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from psmamba_core import LossKind, RestoreTask, ShapeError, Tensor, charbonnier_loss, l1_loss, task_loss


class TestL1:
    def test_equal_inputs(self) -> None:
        loss, grad = l1_loss(np.ones((2, 3)), np.ones((2, 3)))
        assert loss == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_constant_offset(self) -> None:
        pred = np.full((2, 3, 4, 4), 0.75)
        loss, grad = l1_loss(pred, pred - 0.25)
        assert loss == pytest.approx(0.25)
        np.testing.assert_allclose(grad, 1 / pred.size)

    def test_matches_elementwise_oracle(self, rng: np.random.Generator) -> None:
        a, b = rng.standard_normal((3, 5)), rng.standard_normal((3, 5))
        loss, grad = l1_loss(a, b)
        assert loss == pytest.approx(sum(abs(x - y) for x, y in zip(a.ravel(), b.ravel(), strict=True)) / 15)
        np.testing.assert_array_equal(grad, np.sign(a - b) / 15)

    def test_accepts_tensors(self) -> None:
        loss, _ = l1_loss(Tensor(np.zeros(4)), Tensor(np.ones(4)))
        assert loss == pytest.approx(1.0)

    def test_shape_mismatch(self) -> None:
        with pytest.raises(ShapeError):
            l1_loss(np.zeros(3), np.zeros(4))


class TestCharbonnier:
    def test_equal_inputs_give_eps(self) -> None:
        loss, grad = charbonnier_loss(np.ones(10), np.ones(10), eps=1e-3)
        assert loss == 1e-3
        np.testing.assert_array_equal(grad, 0.0)

    def test_unit_residual(self) -> None:
        loss, _ = charbonnier_loss(np.array([1.0]), np.array([0.0]), eps=1e-3)
        assert loss == pytest.approx(math.sqrt(1 + 1e-6), rel=1e-12)

    def test_residual_equal_to_eps(self) -> None:
        loss, _ = charbonnier_loss(np.array([1e-3]), np.array([0.0]), eps=1e-3)
        assert loss == pytest.approx(1e-3 * math.sqrt(2), rel=1e-9)

    def test_gradient_closed_form(self, rng: np.random.Generator) -> None:
        a, b = rng.standard_normal(20), rng.standard_normal(20)
        _, grad = charbonnier_loss(a, b, eps=0.1)
        r = a - b
        np.testing.assert_allclose(grad, r / np.sqrt(r * r + 0.01) / 20)

    def test_floor_and_l1_distance(self, rng: np.random.Generator) -> None:
        for _ in range(20):
            a, b = rng.standard_normal(50), rng.standard_normal(50)
            charb, _ = charbonnier_loss(a, b, eps=1e-3)
            l1, _ = l1_loss(a, b)
            assert charb > 1e-3
            assert abs(charb - l1) <= 1e-3 + 1e-12

    def test_eps_must_be_positive(self) -> None:
        with pytest.raises(ValueError):
            charbonnier_loss(np.zeros(2), np.zeros(2), eps=0.0)


class TestTaskLoss:
    def test_denoise_uses_charbonnier(self) -> None:
        loss, _ = task_loss(np.zeros(4), np.zeros(4), RestoreTask.denoise(25, charbonnier_eps=0.01))
        assert loss == 0.01

    def test_sr_uses_l1(self) -> None:
        loss, _ = task_loss(np.zeros(4), np.zeros(4), RestoreTask.super_resolve(2))
        assert loss == 0.0

    def test_override(self) -> None:
        loss, _ = task_loss(np.zeros(4), np.zeros(4), RestoreTask.super_resolve(2, loss=LossKind.CHARBONNIER))
        assert loss == pytest.approx(1e-3)
