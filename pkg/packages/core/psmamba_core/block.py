"""
psmamba_core.block
~~~~~~~~~~~~~~~~~~
The split-Mamba block: convolutional preprocessing, a patch-level SSM core,
content-adaptive gated fusion of the two branches, and channel + spatial
attention applied as a scaled residual::

    f_conv = conv3x3(relu(conv3x3(x)))
    f_m    = merge_j fold(LN_out(scan(LN_in(unfold(split_j(x))))))
    g      = sigmoid(W2 relu(W1 gap(f_conv + f_m)))
    f_mix  = g * f_conv + (1 - g) * f_m
    y      = x + alpha * SA(CA(f_mix))
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from psmamba_core.errors import ShapeError
from psmamba_core.functional import (
    ConvKernel,
    add,
    channel_max,
    channel_mean,
    concat,
    conv2d,
    crop,
    global_avg_pool,
    layer_norm,
    linear,
    pad_to_multiple,
    relu,
    scale,
    scale_channels,
    scale_pixels,
    sigmoid,
    split_axis,
    sub,
)
from psmamba_core.models import ModelConfig
from psmamba_core.partition import PartitionSpec, PatchSet, fold, merge, split, unfold
from psmamba_core.ssm import SSMParams, TokenSequence, ssm_scan
from psmamba_core.tensor import Tensor, parameter

# ---------------------------------------------------------------------------
# Parameter groups
# ---------------------------------------------------------------------------


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor
    eps: float = 1e-6

    @classmethod
    def init(cls, channels: int, eps: float = 1e-6) -> LayerNormParams:
        return cls(gamma=parameter(np.ones(channels)), beta=parameter(np.zeros(channels)), eps=eps)

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}


@dataclass
class Bottleneck:
    """Two-layer squeeze MLP ``C -> C/r -> C`` applied to pooled channel vectors."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, channels: int, reduction: int, rng: np.random.Generator) -> Bottleneck:
        hidden = channels // reduction
        return cls(
            w1=parameter(rng.standard_normal((hidden, channels)) * np.sqrt(2.0 / channels)),
            b1=parameter(np.zeros(hidden)),
            w2=parameter(rng.standard_normal((channels, hidden)) * np.sqrt(1.0 / hidden)),
            b2=parameter(np.zeros(channels)),
        )

    def __call__(self, v: Tensor) -> Tensor:
        return linear(relu(linear(v, self.w1, self.b1)), self.w2, self.b2)

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w1": self.w1, f"{prefix}.b1": self.b1, f"{prefix}.w2": self.w2, f"{prefix}.b2": self.b2}


@dataclass
class BlockParams:
    """Every learnable tensor of one block at a fixed channel width."""

    conv1: ConvKernel
    conv2: ConvKernel
    ln_in: LayerNormParams
    ln_out: LayerNormParams
    ssm: SSMParams
    gate: Bottleneck
    ca: Bottleneck
    sa: ConvKernel
    alpha: Tensor

    def __post_init__(self) -> None:
        c = self.channels
        if self.conv2.in_channels != c or self.conv2.out_channels != c or self.ssm.channels != c:
            raise ShapeError(
                f"block parameters disagree on width: conv1 {self.conv1.weight.shape}, "
                f"conv2 {self.conv2.weight.shape}, ssm {self.ssm.a_raw.shape}",
                expected=(c,),
                actual=(self.ssm.channels,),
            )
        if self.sa.in_channels != 2 or self.sa.out_channels != 1:
            raise ShapeError(f"spatial attention kernel must map 2 -> 1 channels, got {self.sa.weight.shape}")
        if self.alpha.shape != (1,) or not np.isfinite(self.alpha.data).all():
            raise ValueError(f"alpha must be one finite value, got {self.alpha.data!r}")

    @property
    def channels(self) -> int:
        return self.conv1.out_channels

    @classmethod
    def init(cls, channels: int, cfg: ModelConfig, rng: np.random.Generator) -> BlockParams:
        if channels % cfg.reduction_r:
            raise ValueError(f"reduction_r={cfg.reduction_r} does not divide {channels} channels")
        return cls(
            conv1=ConvKernel.create(channels, channels, 3, rng),
            conv2=ConvKernel.create(channels, channels, 3, rng),
            ln_in=LayerNormParams.init(channels, cfg.ln_eps),
            ln_out=LayerNormParams.init(channels, cfg.ln_eps),
            ssm=SSMParams.init(channels, cfg.state_n, rng),
            gate=Bottleneck.init(channels, cfg.reduction_r, rng),
            ca=Bottleneck.init(channels, cfg.reduction_r, rng),
            sa=ConvKernel.create(2, 1, 7, rng),
            alpha=parameter(np.array([cfg.alpha_init])),
        )

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        p = f"{prefix}." if prefix else ""
        out: dict[str, Tensor] = {
            f"{p}conv1.weight": self.conv1.weight,
            f"{p}conv1.bias": self.conv1.bias,
            f"{p}conv2.weight": self.conv2.weight,
            f"{p}conv2.bias": self.conv2.bias,
        }
        out |= self.ln_in.named(f"{p}ln_in")
        out |= self.ln_out.named(f"{p}ln_out")
        out |= {
            f"{p}ssm.a_raw": self.ssm.a_raw,
            f"{p}ssm.b": self.ssm.b,
            f"{p}ssm.cw": self.ssm.cw,
            f"{p}ssm.d": self.ssm.d,
        }
        out |= self.gate.named(f"{p}gate")
        out |= self.ca.named(f"{p}ca")
        out |= {f"{p}sa.weight": self.sa.weight, f"{p}sa.bias": self.sa.bias, f"{p}alpha": self.alpha}
        return out


# ---------------------------------------------------------------------------
# Block stages
# ---------------------------------------------------------------------------


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: {a.shape} vs {b.shape}", expected=a.shape, actual=b.shape)


def conv_preprocess(x: Tensor, p: BlockParams) -> Tensor:
    return conv2d(relu(conv2d(x, p.conv1)), p.conv2)


def patch_mamba_core(
    x: Tensor,
    p: BlockParams,
    spec: PartitionSpec,
    order: Sequence[int] | None = None,
) -> Tensor:
    """Scan every patch independently with the block's shared SSM.

    Inputs that do not divide the patch grid are edge-padded and the result
    cropped back. All patches are stacked along the batch axis and scanned
    in one call; ``order`` only permutes that stacking.
    """
    padded, record = pad_to_multiple(x, *spec.grid)
    ps = split(padded, spec)
    k = len(ps)
    order = list(range(k)) if order is None else list(order)
    if sorted(order) != list(range(k)):
        raise ValueError(f"order must be a permutation of 0..{k - 1}, got {order}")
    n, c, h, w = padded.shape
    ph, pw = spec.patch_shape(h, w)

    sequences = [unfold(ps.patches[j]).values for j in order]
    tokens = sequences[0] if k == 1 else concat(sequences, axis=0)
    normed = layer_norm(tokens, p.ln_in.gamma, p.ln_in.beta, p.ln_in.eps)
    scanned = ssm_scan(TokenSequence(normed), p.ssm).values
    out = layer_norm(scanned, p.ln_out.gamma, p.ln_out.beta, p.ln_out.eps)

    chunks = [out] if k == 1 else split_axis(out, k, axis=0)
    folded: list[Tensor] = [out] * k
    for slot, j in enumerate(order):
        folded[j] = fold(TokenSequence(chunks[slot]), ph, pw)
    merged = merge(PatchSet(folded, spec, (n, c, h, w)))
    return crop(merged, record)


def gated_fusion(f_conv: Tensor, f_m: Tensor, p: BlockParams) -> Tensor:
    """Per-(batch, channel) convex mix of the conv and SSM branches."""
    _require_same_shape(f_conv, f_m, "gated_fusion")
    g = sigmoid(p.gate(global_avg_pool(add(f_conv, f_m))))
    # f_m + g * (f_conv - f_m): equal branches come back unchanged
    return add(f_m, scale_channels(sub(f_conv, f_m), g))


def channel_attention(x: Tensor, p: BlockParams) -> Tensor:
    return scale_channels(x, sigmoid(p.ca(global_avg_pool(x))))


def spatial_attention(x: Tensor, p: BlockParams) -> Tensor:
    pooled = concat([channel_mean(x), channel_max(x)], axis=1)
    return scale_pixels(x, sigmoid(conv2d(pooled, p.sa)))


def dual_attention(x_in: Tensor, f_mix: Tensor, p: BlockParams) -> Tensor:
    """``x_in + alpha * SA(CA(f_mix))``."""
    _require_same_shape(x_in, f_mix, "dual_attention")
    refined = spatial_attention(channel_attention(f_mix, p), p)
    return add(x_in, scale(refined, p.alpha))


def block_forward(x: Tensor, p: BlockParams, spec: PartitionSpec) -> Tensor:
    if x.ndim != 4 or x.shape[1] != p.channels:
        raise ShapeError(
            f"block of width {p.channels} cannot take input {x.shape}",
            expected=(p.channels,),
            actual=x.shape,
        )
    f_conv = conv_preprocess(x, p)
    f_m = patch_mamba_core(x, p, spec)
    return dual_attention(x, gated_fusion(f_conv, f_m, p), p)
