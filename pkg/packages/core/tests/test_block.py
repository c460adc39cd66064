"""
Tests for psmamba_core.block.

Covers: each stage of the block against composed oracles, patch
independence of the SSM core, the residual degeneracy at alpha = 0 and a
finite-difference check of the whole block.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from psmamba_core import (
    BlockParams,
    ConvKernel,
    ModelConfig,
    PartitionSpec,
    ShapeError,
    SplitLevel,
    SSMParams,
    Tensor,
    TokenSequence,
    block_forward,
    conv_preprocess,
    dual_attention,
    fold,
    gated_fusion,
    gradcheck,
    layer_norm,
    patch_mamba_core,
    ssm_scan,
    unfold,
)

OCTANTS = PartitionSpec(SplitLevel.OCTANTS)


@pytest.fixture()
def cfg() -> ModelConfig:
    return ModelConfig(c0=4, channel_step=4, n_blocks=1, state_n=2, reduction_r=2)


@pytest.fixture()
def block(cfg: ModelConfig, f64: None) -> BlockParams:
    return BlockParams.init(4, cfg, np.random.default_rng(7))


@pytest.fixture()
def x(f64: None) -> Tensor:
    return Tensor(np.random.default_rng(3).standard_normal((1, 4, 8, 8)))


def _center_tap(channels: int) -> ConvKernel:
    w = np.zeros((channels, channels, 3, 3))
    w[np.arange(channels), np.arange(channels), 1, 1] = 1.0
    return ConvKernel.from_arrays(w)


class TestBlockParams:
    def test_named_parameters(self, block: BlockParams) -> None:
        names = block.named_parameters("down.0.block.0")
        assert "down.0.block.0.ssm.a_raw" in names
        assert "down.0.block.0.sa.weight" in names
        assert names["down.0.block.0.alpha"].shape == (1,)
        assert len(names) == 23

    def test_alpha_initialised_from_config(self, block: BlockParams, cfg: ModelConfig) -> None:
        assert block.alpha.data[0] == pytest.approx(cfg.alpha_init)

    def test_reduction_must_divide_width(self, cfg: ModelConfig) -> None:
        with pytest.raises(ValueError, match="reduction_r"):
            BlockParams.init(5, cfg, np.random.default_rng(0))

    def test_alpha_must_be_finite(self, block: BlockParams) -> None:
        with pytest.raises(ValueError, match="alpha"):
            dataclasses.replace(block, alpha=Tensor(np.array([np.nan])))

    def test_width_mismatch(self, block: BlockParams, cfg: ModelConfig) -> None:
        other = SSMParams.init(6, 2, np.random.default_rng(0))
        with pytest.raises(ShapeError):
            dataclasses.replace(block, ssm=other)


class TestConvPreprocess:
    def test_zero_in_zero_out(self, block: BlockParams) -> None:
        out = conv_preprocess(Tensor(np.zeros((1, 4, 5, 5))), block)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_identity_kernels_pass_nonnegative_input(self, block: BlockParams) -> None:
        p = dataclasses.replace(block, conv1=_center_tap(4), conv2=_center_tap(4))
        x = Tensor(np.random.default_rng(0).uniform(size=(1, 4, 6, 6)))
        np.testing.assert_allclose(conv_preprocess(x, p).data, x.data, atol=1e-15)


class TestPatchMambaCore:
    def test_single_patch_is_whole_map_scan(self, block: BlockParams, x: Tensor) -> None:
        out = patch_mamba_core(x, block, PartitionSpec(SplitLevel.FULL))
        seq = unfold(x).values
        seq = layer_norm(seq, block.ln_in.gamma, block.ln_in.beta, block.ln_in.eps)
        seq = ssm_scan(TokenSequence(seq), block.ssm).values
        seq = layer_norm(seq, block.ln_out.gamma, block.ln_out.beta, block.ln_out.eps)
        np.testing.assert_array_equal(out.data, fold(TokenSequence(seq), 8, 8).data)

    def test_passthrough_scan_reduces_to_norms(self, block: BlockParams, x: Tensor) -> None:
        passthrough = SSMParams.from_transition(np.zeros((4, 2)), np.array([[1.0, 0.0]] * 4), 1.0, 0.0)
        p = dataclasses.replace(block, ssm=passthrough)
        out = patch_mamba_core(x, p, OCTANTS)
        normed = layer_norm(layer_norm(x, p.ln_in.gamma, p.ln_in.beta), p.ln_out.gamma, p.ln_out.beta)
        np.testing.assert_allclose(out.data, normed.data, atol=1e-12)

    def test_processing_order_irrelevant(self, block: BlockParams, x: Tensor) -> None:
        base = patch_mamba_core(x, block, OCTANTS)
        shuffled = patch_mamba_core(x, block, OCTANTS, order=[5, 2, 7, 0, 1, 6, 3, 4])
        np.testing.assert_array_equal(base.data, shuffled.data)

    def test_order_must_be_permutation(self, block: BlockParams, x: Tensor) -> None:
        with pytest.raises(ValueError, match="permutation"):
            patch_mamba_core(x, block, OCTANTS, order=[0, 0, 1, 2, 3, 4, 5, 6])

    def test_zeroing_one_octant_only_changes_that_octant(self, block: BlockParams, x: Tensor) -> None:
        base = patch_mamba_core(x, block, OCTANTS).data
        top, left = OCTANTS.origins(8, 8)[5]
        ph, pw = OCTANTS.patch_shape(8, 8)
        zeroed = x.data.copy()
        zeroed[..., top : top + ph, left : left + pw] = 0.0
        out = patch_mamba_core(Tensor(zeroed), block, OCTANTS).data
        inside = np.zeros((8, 8), dtype=bool)
        inside[top : top + ph, left : left + pw] = True
        np.testing.assert_array_equal(out[..., ~inside], base[..., ~inside])
        assert not np.array_equal(out[..., inside], base[..., inside])

    def test_whole_map_scan_leaks_across_octants(self, block: BlockParams, x: Tensor) -> None:
        full = PartitionSpec(SplitLevel.FULL)
        base = patch_mamba_core(x, block, full).data
        zeroed = x.data.copy()
        zeroed[..., 0:2, 0:4] = 0.0
        out = patch_mamba_core(Tensor(zeroed), block, full).data
        assert not np.array_equal(out[..., 6:, 4:], base[..., 6:, 4:])

    @pytest.mark.parametrize(("h", "w"), [(8, 8), (6, 10), (3, 5)])
    def test_shape_preserved_with_internal_padding(self, block: BlockParams, h: int, w: int) -> None:
        x = Tensor(np.random.default_rng(1).standard_normal((2, 4, h, w)))
        assert patch_mamba_core(x, block, PartitionSpec(SplitLevel.SIXTEENTHS)).shape == (2, 4, h, w)


class TestGatedFusion:
    def test_zero_gate_mlp_averages(self, block: BlockParams, x: Tensor) -> None:
        block.gate.w2.data[...] = 0.0
        block.gate.b2.data[...] = 0.0
        other = Tensor(np.random.default_rng(9).standard_normal(x.shape))
        out = gated_fusion(x, other, block)
        np.testing.assert_allclose(out.data, (x.data + other.data) / 2, atol=1e-15)

    def test_equal_branches_returned_unchanged(self, block: BlockParams, x: Tensor) -> None:
        np.testing.assert_array_equal(gated_fusion(x, x, block).data, x.data)

    def test_matches_composed_oracle(self, block: BlockParams, x: Tensor) -> None:
        other = np.random.default_rng(9).standard_normal(x.shape)
        pooled = (x.data + other).mean(axis=(2, 3))
        hidden = np.maximum(pooled @ block.gate.w1.data.T + block.gate.b1.data, 0)
        g = 1 / (1 + np.exp(-(hidden @ block.gate.w2.data.T + block.gate.b2.data)))
        expected = g[:, :, None, None] * x.data + (1 - g[:, :, None, None]) * other
        np.testing.assert_allclose(gated_fusion(x, Tensor(other), block).data, expected, atol=1e-12)

    def test_shape_mismatch(self, block: BlockParams, x: Tensor) -> None:
        with pytest.raises(ShapeError):
            gated_fusion(x, Tensor(np.zeros((1, 4, 8, 4))), block)


class TestDualAttention:
    def test_zero_alpha_returns_input(self, block: BlockParams, x: Tensor) -> None:
        block.alpha.data[...] = 0.0
        mix = Tensor(np.random.default_rng(2).standard_normal(x.shape))
        np.testing.assert_array_equal(dual_attention(x, mix, block).data, x.data)

    def test_saturated_gates(self, block: BlockParams, x: Tensor) -> None:
        block.alpha.data[...] = 1.0
        block.ca.b2.data[...] = 50.0
        block.ca.w2.data[...] = 0.0
        block.sa.weight.data[...] = 0.0
        block.sa.bias.data[...] = 50.0
        mix = Tensor(np.random.default_rng(2).standard_normal(x.shape))
        np.testing.assert_allclose(dual_attention(x, mix, block).data, x.data + mix.data, atol=1e-12)


class TestBlockForward:
    def test_zero_alpha_is_identity(self, block: BlockParams, x: Tensor) -> None:
        block.alpha.data[...] = 0.0
        np.testing.assert_array_equal(block_forward(x, block, OCTANTS).data, x.data)

    def test_composition(self, block: BlockParams, x: Tensor) -> None:
        f_mix = gated_fusion(conv_preprocess(x, block), patch_mamba_core(x, block, OCTANTS), block)
        np.testing.assert_array_equal(block_forward(x, block, OCTANTS).data, dual_attention(x, f_mix, block).data)

    @pytest.mark.parametrize("level", list(SplitLevel))
    def test_shape_preserved(self, block: BlockParams, x: Tensor, level: SplitLevel) -> None:
        assert block_forward(x, block, PartitionSpec(level)).shape == x.shape

    def test_width_checked(self, block: BlockParams) -> None:
        with pytest.raises(ShapeError, match="width"):
            block_forward(Tensor(np.zeros((1, 3, 8, 8))), block, OCTANTS)

    def test_gradients(self, block: BlockParams) -> None:
        report = gradcheck(
            lambda t: block_forward(t, block, OCTANTS),
            (1, 4, 8, 8),
            block.named_parameters(),
            max_entries=8,
        )
        assert report.passed, report.to_tsv()
