"""
Tests for psmamba_core.ssm.

Covers: the JIT scan bit-for-bit against a plain-Python recurrence, linearity,
the adjoint scan against finite differences and closed forms,
batch independence, the memoryless encoding, operation counts,
impulse responses and the decay report.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from psmamba_core import (
    ShapeError,
    SSMParams,
    Tensor,
    TokenSequence,
    count_macs,
    decay_profile,
    envelope_log10,
    gradcheck,
    impulse_response,
    log_impulse_response,
    scan_macs,
    ssm_scan,
    ssm_scan_backward,
    transition,
)


def _reference_scan(x: np.ndarray, p: SSMParams) -> np.ndarray:
    """Unrolled recurrence in scalar float arithmetic, one state entry at a time."""
    a, b, cw, d = p.a.tolist(), p.b.data.tolist(), p.cw.data.tolist(), p.d.data.tolist()
    n_batch, n_chan, length = x.shape
    y = np.zeros_like(x)
    for bi in range(n_batch):
        for c in range(n_chan):
            h = [0.0] * p.state_n
            for i in range(length):
                xi = float(x[bi, c, i])
                acc = 0.0
                for n in range(p.state_n):
                    h[n] = a[c][n] * h[n] + b[c][n] * xi
                    acc += cw[c][n] * h[n]
                y[bi, c, i] = acc + d[c] * xi
    return y


@pytest.mark.usefixtures("f64")
class TestScan:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_reference_bit_for_bit(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        p = SSMParams.init(3, 8, rng)
        x = rng.standard_normal((2, 3, 256))
        y = ssm_scan(TokenSequence(Tensor(x)), p).values.data
        np.testing.assert_array_equal(y, _reference_scan(x, p))

    def test_linear_in_input(self, rng: np.random.Generator) -> None:
        p = SSMParams.init(3, 4, rng)
        x1, x2 = rng.standard_normal((2, 3, 64)), rng.standard_normal((2, 3, 64))
        alpha, beta = 1.7, -0.4

        def run(x: np.ndarray) -> np.ndarray:
            return ssm_scan(TokenSequence(Tensor(x)), p).values.data

        np.testing.assert_allclose(run(alpha * x1 + beta * x2), alpha * run(x1) + beta * run(x2), rtol=0, atol=1e-10)

    def test_zero_input_gives_zero_output(self, rng: np.random.Generator) -> None:
        p = SSMParams.init(2, 3, rng)
        y = ssm_scan(TokenSequence(Tensor(np.zeros((1, 2, 9)))), p).values.data
        np.testing.assert_array_equal(y, 0.0)

    def test_batches_are_independent(self, rng: np.random.Generator) -> None:
        p = SSMParams.init(2, 3, rng)
        x = rng.standard_normal((3, 2, 10))
        joint = ssm_scan(TokenSequence(Tensor(x)), p).values.data
        for bi in range(3):
            alone = ssm_scan(TokenSequence(Tensor(x[bi : bi + 1])), p).values.data
            np.testing.assert_array_equal(joint[bi : bi + 1], alone)

    def test_causal(self, rng: np.random.Generator) -> None:
        p = SSMParams.init(2, 3, rng)
        x = rng.standard_normal((1, 2, 12))
        y1 = ssm_scan(TokenSequence(Tensor(x)), p).values.data
        x2 = x.copy()
        x2[..., 7:] += 1.0
        y2 = ssm_scan(TokenSequence(Tensor(x2)), p).values.data
        np.testing.assert_array_equal(y1[..., :7], y2[..., :7])

    def test_memoryless_channel(self) -> None:
        p = SSMParams.from_transition(0.0, 2.0, 3.0, 0.5)
        x = np.array([[[1.0, -2.0, 4.0]]])
        y = ssm_scan(TokenSequence(Tensor(x)), p).values.data
        np.testing.assert_allclose(y, 6.5 * x)

    def test_length_one(self) -> None:
        p = SSMParams.from_transition(0.9, 1.0, 1.0, 1.0)
        y = ssm_scan(TokenSequence(Tensor(np.array([[[2.0]]]))), p).values.data
        np.testing.assert_allclose(y, [[[4.0]]])

    def test_initial_state_carried(self) -> None:
        p = SSMParams.from_transition(0.5, 1.0, 1.0, 0.0)
        x = np.zeros((1, 1, 3))
        y = ssm_scan(TokenSequence(Tensor(x)), p, h0=np.ones((1, 1, 1))).values.data
        np.testing.assert_allclose(y, [[[0.5, 0.25, 0.125]]])

    def test_channel_mismatch(self, rng: np.random.Generator) -> None:
        p = SSMParams.init(3, 2, rng)
        with pytest.raises(ShapeError, match="channels"):
            ssm_scan(TokenSequence(Tensor(np.zeros((1, 2, 4)))), p)

    def test_empty_sequence_rejected(self) -> None:
        with pytest.raises(ShapeError):
            TokenSequence(Tensor(np.zeros((1, 2, 0))))

    def test_finite_a_raw_stays_inside_unit_interval(self) -> None:
        for dtype in (np.float32, np.float64):
            a = transition(np.array([-1e6, -30.0, 0.0, 15.0, 1e6], dtype=dtype))
            assert np.all(a > 0) and np.all(a < 1)

    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_random_a_raw_stays_inside_unit_interval(self, dtype: type, rng: np.random.Generator) -> None:
        raw = np.concatenate([rng.uniform(-1e3, 1e3, 50_000), rng.standard_normal(50_000) * 20]).astype(dtype)
        a = transition(raw)
        assert a.dtype == dtype
        assert np.all(a > 0) and np.all(a < 1)

    def test_macs_reported(self, rng: np.random.Generator) -> None:
        p = SSMParams.init(3, 4, rng)
        with count_macs() as macs:
            ssm_scan(TokenSequence(Tensor(np.zeros((2, 3, 5)))), p)
        assert macs.by_op["ssm_scan"] == scan_macs(2, 3, 5, 4)

    def test_macs_double_with_length(self, rng: np.random.Generator) -> None:
        p = SSMParams.init(3, 4, rng)
        counts = []
        for length in (37, 74):
            with count_macs() as macs:
                ssm_scan(TokenSequence(Tensor(np.zeros((2, 3, length)))), p)
            counts.append(macs.by_op["ssm_scan"])
        assert counts[1] == 2 * counts[0]


@pytest.mark.usefixtures("f64")
class TestScanGradients:
    def test_all_groups(self, rng: np.random.Generator) -> None:
        p = SSMParams.init(2, 3, rng)
        report = gradcheck(
            lambda x: ssm_scan(TokenSequence(x), p).values,
            (2, 2, 9),
            {"a_raw": p.a_raw, "b": p.b, "cw": p.cw, "d": p.d},
            max_entries=12,
        )
        assert report.passed, report.to_tsv()

    def test_memoryless_entries_skipped(self) -> None:
        p = SSMParams.from_transition(np.array([[0.0, 0.5]]), 1.0, 1.0, 0.0)
        report = gradcheck(lambda x: ssm_scan(TokenSequence(x), p).values, (1, 1, 5), {"a_raw": p.a_raw})
        assert report.checked["a_raw"] == 1
        assert report.passed


@pytest.mark.usefixtures("f64")
class TestScanBackward:
    def test_zero_upstream_gives_zero_gradients(self, rng: np.random.Generator) -> None:
        p = SSMParams.init(2, 3, rng)
        x = TokenSequence(Tensor(rng.standard_normal((2, 2, 16))))
        gx, grads = ssm_scan_backward(x, p, np.zeros((2, 2, 16)))
        np.testing.assert_array_equal(gx, 0.0)
        for g in (grads.a_raw, grads.b, grads.cw, grads.d, grads.h0):
            np.testing.assert_array_equal(g, 0.0)

    def test_memoryless_closed_form(self, rng: np.random.Generator) -> None:
        p = SSMParams.from_transition(0.0, 2.0, 3.0, 0.5)
        x = rng.standard_normal((2, 1, 7))
        g = rng.standard_normal((2, 1, 7))
        gx, grads = ssm_scan_backward(TokenSequence(Tensor(x)), p, g)
        gx_sum = float(np.sum(g * x))
        np.testing.assert_allclose(gx, (2.0 * 3.0 + 0.5) * g, rtol=1e-12)
        np.testing.assert_allclose(grads.d, [gx_sum], rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(grads.b, [[3.0 * gx_sum]], rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(grads.cw, [[2.0 * gx_sum]], rtol=1e-10, atol=1e-12)
        np.testing.assert_array_equal(grads.a_raw, 0.0)

    @pytest.mark.parametrize("length", [64, 500, 2000])
    def test_first_token_sensitivity_matches_closed_form(self, length: int) -> None:
        p = SSMParams.from_transition(
            np.array([[0.9, 0.95, 0.5], [0.99, 0.7, 0.8]]),
            np.array([[1.0, 0.5, 2.0], [0.3, 1.0, 1.0]]),
            np.array([[0.3, 1.0, 1.0], [2.0, 0.1, 0.5]]),
            0.25,
        )
        x = TokenSequence(Tensor(np.zeros((1, 2, length))))
        g = np.zeros((1, 2, length))
        g[..., -1] = 1.0
        gx, _ = ssm_scan_backward(x, p, g)
        for c in (1, 2):
            closed = log_impulse_response(p, c, np.array([length]))[0]
            assert abs(math.log10(abs(gx[0, c - 1, 0])) - closed) < 1e-8


@pytest.mark.usefixtures("f64")
class TestImpulseResponse:
    def test_scalar_geometric(self) -> None:
        p = SSMParams.from_transition(0.5, 1.0, 1.0)
        g = impulse_response(p, 1, 8)
        np.testing.assert_allclose(g, 0.5 ** np.arange(8))

    def test_matches_scan_of_unit_impulse(self, rng: np.random.Generator) -> None:
        p = SSMParams.init(2, 3, rng)
        x = np.zeros((1, 2, 10))
        x[..., 0] = 1.0
        y = ssm_scan(TokenSequence(Tensor(x, dtype=np.float64)), p).values.data
        for c in (1, 2):
            g = impulse_response(p, c, 10)
            expected = g.copy()
            expected[0] += p.d.data[c - 1]
            np.testing.assert_allclose(y[0, c - 1], expected, rtol=0, atol=1e-10)

    def test_log_form_never_underflows(self) -> None:
        p = SSMParams.from_transition(0.5, 1.0, 1.0)
        logs = log_impulse_response(p, 1, np.array([1, 10_000]))
        assert logs[0] == pytest.approx(0.0)
        assert logs[1] == pytest.approx(9999 * math.log10(0.5))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_envelope_bounds_response(self, seed: int) -> None:
        p = SSMParams.init(2, 4, np.random.default_rng(seed))
        lags = np.arange(1, 10_001)
        for c in (1, 2):
            assert np.all(log_impulse_response(p, c, lags) <= envelope_log10(p, c, lags) + 1e-9)

    def test_channel_is_one_based(self) -> None:
        p = SSMParams.from_transition(0.5, 1.0, 1.0)
        with pytest.raises(ValueError, match="channel"):
            impulse_response(p, 0, 4)


class TestDecayProfile:
    def test_geometric_column(self) -> None:
        p = SSMParams.from_transition(0.5, 1.0, 1.0)
        report = decay_profile(p, l_full=8, l_patch=4, max_lag=8)
        np.testing.assert_allclose(report.log10_abs[:, 0], np.arange(8) * math.log10(0.5), atol=1e-12)
        ch = report.channels[0]
        assert ch.log10_ratio == pytest.approx(4 * math.log10(2.0))
        assert ch.ratio == pytest.approx(16.0)

    def test_equal_lengths_give_unit_ratio(self, rng: np.random.Generator) -> None:
        p = SSMParams.init(3, 4, rng)
        report = decay_profile(p, l_full=64, l_patch=64)
        assert [ch.ratio for ch in report.channels] == [1.0, 1.0, 1.0]

    def test_patch_is_more_sensitive(self, rng: np.random.Generator) -> None:
        p = SSMParams.init(2, 4, rng)
        report = decay_profile(p, l_full=4096, l_patch=512)
        assert all(ch.log10_patch > ch.log10_full for ch in report.channels)

    def test_skip_reported_separately(self) -> None:
        p = SSMParams.from_transition(0.5, 1.0, 1.0, 0.75)
        assert decay_profile(p, 4, 2).channels[0].skip == 0.75

    def test_tsv_layout(self) -> None:
        p = SSMParams.from_transition(0.5, 1.0, 1.0)
        lines = decay_profile(p, 8, 4, max_lag=3).to_tsv().splitlines()
        assert lines[0] == "lag\tabs_g_ch1\tlog10_g_ch1"
        assert lines[1].split("\t")[:2] == ["1", "1"]
        assert lines[4] == ""
        assert lines[5].startswith("channel\tl_full\tl_patch")
        assert len(lines) == 7

    def test_rejects_patch_longer_than_full(self) -> None:
        p = SSMParams.from_transition(0.5, 1.0, 1.0)
        with pytest.raises(ValueError):
            decay_profile(p, l_full=4, l_patch=8)
