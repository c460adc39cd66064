"""
psmamba_core.functional
~~~~~~~~~~~~~~~~~~~~~~~
Differentiable feature-map operations.

Every public op takes and returns :class:`~psmamba_core.tensor.Tensor` values
and registers a hand-written backward kernel with the graph. Feature maps
are rank-4 ``(batch, channels, height, width)`` arrays in row-major order
with width fastest; token sequences are rank-3 ``(batch, channels, length)``.

Convolution is cross-correlation (no kernel flip), stride 1, zero "same"
padding for odd kernels. Padding for partitioning is edge replication.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from psmamba_core.errors import ShapeError
from psmamba_core.tensor import Array, Tensor, make_node, parameter, record_macs

# ---------------------------------------------------------------------------
# Shape helpers
# ---------------------------------------------------------------------------


def _require_rank(x: Tensor, rank: int, op: str) -> None:
    if x.ndim != rank:
        raise ShapeError(f"{op} expects a rank-{rank} tensor, got shape {x.shape}", actual=x.shape)


def _require_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ", expected=a.shape, actual=b.shape)


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------


@dataclass
class ConvKernel:
    """Weights ``(out, in, kh, kw)`` and bias ``(out,)`` of a stride-1 convolution."""

    weight: Tensor
    bias: Tensor

    def __post_init__(self) -> None:
        w, b = self.weight.shape, self.bias.shape
        if len(w) != 4 or b != (w[0],):
            raise ShapeError(f"kernel weight {w} and bias {b} are inconsistent", expected=(w[0],), actual=b)
        if w[2] % 2 == 0 or w[3] % 2 == 0:
            raise ShapeError(f"kernel extents must be odd, got {w[2]}x{w[3]}", actual=w)

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def padding(self) -> int:
        return (self.weight.shape[2] - 1) // 2

    @classmethod
    def create(
        cls,
        in_channels: int,
        out_channels: int,
        size: int,
        rng: np.random.Generator,
        *,
        std: float | None = None,
        name: str = "",
    ) -> ConvKernel:
        """He-normal initialised kernel (``std`` overrides the fan-in rule)."""
        fan_in = in_channels * size * size
        scale = np.sqrt(2.0 / fan_in) if std is None else std
        weight = rng.standard_normal((out_channels, in_channels, size, size)) * scale
        prefix = f"{name}." if name else ""
        return cls(
            weight=parameter(weight, name=f"{prefix}weight"),
            bias=parameter(np.zeros(out_channels), name=f"{prefix}bias"),
        )

    @classmethod
    def from_arrays(cls, weight: Array, bias: Array | None = None, *, name: str = "") -> ConvKernel:
        weight = np.asarray(weight)
        if bias is None:
            bias = np.zeros(weight.shape[0])
        prefix = f"{name}." if name else ""
        return cls(weight=parameter(weight, name=f"{prefix}weight"), bias=parameter(bias, name=f"{prefix}bias"))

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


def _correlate(x: Array, w: Array, pad: int) -> Array:
    """Cross-correlate ``x (B,Cin,H,W)`` with ``w (Cout,Cin,kh,kw)``."""
    kh, kw = w.shape[2], w.shape[3]
    if kh == 1 and kw == 1:
        out = np.tensordot(x, w[:, :, 0, 0], axes=([1], [1]))
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_backward(x: Array, w: Array, grad: Array) -> tuple[Array, Array, Array]:
    """Gradients of a same-padded stride-1 correlation w.r.t. input, weight and bias."""
    pad = (w.shape[2] - 1) // 2
    kh, kw = w.shape[2], w.shape[3]
    if kh == 1 and kw == 1:
        gw = np.tensordot(grad, x, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
    else:
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))
        gw = np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3]))
    flipped = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    gx = _correlate(grad, flipped, pad)
    gb = grad.sum(axis=(0, 2, 3))
    return gx, np.ascontiguousarray(gw), gb


def conv2d(x: Tensor, k: ConvKernel) -> Tensor:
    """Same-padded, stride-1 2D cross-correlation plus per-channel bias."""
    _require_rank(x, 4, "conv2d")
    if x.shape[1] != k.in_channels:
        raise ShapeError(
            f"conv2d: input {x.shape} has {x.shape[1]} channels but kernel {k.weight.shape} expects {k.in_channels}",
            expected=k.weight.shape,
            actual=x.shape,
        )
    n, _, h, w = x.shape
    out = _correlate(x.data, k.weight.data, k.padding)
    out += k.bias.data[None, :, None, None]
    record_macs("conv2d", n * h * w * k.weight.size)
    xd, wd = x.data, k.weight.data

    def backward(g: Array) -> tuple[Array, Array, Array]:
        record_macs("conv2d", 2 * n * h * w * k.weight.size)
        return conv2d_backward(xd, wd, g)

    return make_node(out, (x, k.weight, k.bias), backward, "conv2d")


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x)."""
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.data.dtype)
    return make_node(out, (x,), lambda g: (g * mask,), "relu")


def _sigmoid(v: Array) -> Array:
    pos = v >= 0
    z = np.exp(-np.abs(v))
    return np.where(pos, 1 / (1 + z), z / (1 + z)).astype(v.dtype)


def sigmoid(x: Tensor) -> Tensor:
    """Elementwise logistic 1 / (1 + exp(-x)), evaluated without overflow."""
    s = _sigmoid(x.data)
    return make_node(s, (x,), lambda g: (g * s * (1 - s),), "sigmoid")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same(a, b, "add")
    return make_node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same(a, b, "sub")
    return make_node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same(a, b, "mul")
    ad, bd = a.data, b.data
    return make_node(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(x: Tensor, alpha: Tensor) -> Tensor:
    """Multiply every element by the single value held in ``alpha`` (shape (1,))."""
    if alpha.size != 1:
        raise ShapeError(f"scale expects a one-element factor, got {alpha.shape}", expected=(1,), actual=alpha.shape)
    xd, av = x.data, alpha.data.reshape(())

    def backward(g: Array) -> tuple[Array, Array]:
        return g * av, np.array([np.sum(g * xd)], dtype=g.dtype).reshape(alpha.shape)

    return make_node(xd * av, (x, alpha), backward, "scale")


# ---------------------------------------------------------------------------
# Normalization and pooling
# ---------------------------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the channel axis independently for every token.

    Works for feature maps ``(B,C,H,W)`` and sequences ``(B,C,L)`` alike.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match {c} channels",
            expected=(c,),
            actual=gamma.shape,
        )
    bshape = (1, c) + (1,) * (x.ndim - 2)
    mean = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1 / np.sqrt(var + eps)
    xhat = centered * inv_std
    gd = gamma.data.reshape(bshape)
    out = xhat * gd + beta.data.reshape(bshape)
    reduce_axes = (0,) + tuple(range(2, x.ndim))

    def backward(g: Array) -> tuple[Array, Array, Array]:
        gxhat = g * gd
        gx = inv_std * (
            gxhat - gxhat.mean(axis=1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=reduce_axes), g.sum(axis=reduce_axes)

    return make_node(out, (x, gamma, beta), backward, "layer_norm")


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per (batch, channel): ``(B,C,H,W) -> (B,C)``."""
    _require_rank(x, 4, "global_avg_pool")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g: Array) -> tuple[Array]:
        return (np.broadcast_to((g / (h * w))[:, :, None, None], (n, c, h, w)).copy(),)

    return make_node(out, (x,), backward, "global_avg_pool")


def channel_mean(x: Tensor) -> Tensor:
    """Mean over channels: ``(B,C,H,W) -> (B,1,H,W)``."""
    c = x.shape[1]
    out = x.data.mean(axis=1, keepdims=True)
    return make_node(out, (x,), lambda g: (np.broadcast_to(g / c, x.shape).copy(),), "channel_mean")


def channel_max(x: Tensor) -> Tensor:
    """Max over channels: ``(B,C,H,W) -> (B,1,H,W)``; ties route to the first channel."""
    idx = x.data.argmax(axis=1)[:, None]
    out = np.take_along_axis(x.data, idx, axis=1)

    def backward(g: Array) -> tuple[Array]:
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, g, axis=1)
        return (gx,)

    return make_node(out, (x,), backward, "channel_max")


# ---------------------------------------------------------------------------
# Dense and broadcasting products
# ---------------------------------------------------------------------------


def linear(v: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map of channel vectors: ``(B,Cin) @ W.T + b`` with ``W (Cout,Cin)``."""
    _require_rank(v, 2, "linear")
    if v.shape[1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise ShapeError(
            f"linear: input {v.shape} incompatible with weight {weight.shape} / bias {bias.shape}",
            expected=weight.shape,
            actual=v.shape,
        )
    vd, wd = v.data, weight.data
    out = vd @ wd.T + bias.data
    record_macs("linear", v.shape[0] * weight.size)
    return make_node(out, (v, weight, bias), lambda g: (g @ wd, g.T @ vd, g.sum(axis=0)), "linear")


def scale_channels(x: Tensor, gate: Tensor) -> Tensor:
    """Multiply ``x (B,C,H,W)`` by a per-(batch, channel) gate ``(B,C)``, broadcast over space."""
    if gate.shape != x.shape[:2]:
        raise ShapeError(f"scale_channels: gate {gate.shape} vs map {x.shape}", expected=x.shape[:2], actual=gate.shape)
    xd, gd = x.data, gate.data[:, :, None, None]
    return make_node(xd * gd, (x, gate), lambda g: (g * gd, (g * xd).sum(axis=(2, 3))), "scale_channels")


def scale_pixels(x: Tensor, gate: Tensor) -> Tensor:
    """Multiply ``x (B,C,H,W)`` by a per-pixel gate ``(B,1,H,W)``, broadcast over channels."""
    expected = (x.shape[0], 1, *x.shape[2:])
    if gate.shape != expected:
        raise ShapeError(f"scale_pixels: gate {gate.shape} vs map {x.shape}", expected=expected, actual=gate.shape)
    xd, gd = x.data, gate.data
    return make_node(xd * gd, (x, gate), lambda g: (g * gd, (g * xd).sum(axis=1, keepdims=True)), "scale_pixels")


# ---------------------------------------------------------------------------
# Structural ops
# ---------------------------------------------------------------------------


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along ``axis``; the backward pass splits the gradient back."""
    sizes = [p.shape[axis] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum(sizes)[:-1]

    def backward(g: Array) -> list[Array]:
        return [np.ascontiguousarray(s) for s in np.split(g, bounds, axis=axis)]

    return make_node(out, tuple(parts), backward, "concat")


def split_axis(x: Tensor, count: int, axis: int = 0) -> list[Tensor]:
    """Split ``x`` into ``count`` equal slabs along ``axis`` (inverse of :func:`concat`)."""
    if x.shape[axis] % count:
        raise ShapeError(f"cannot split axis {axis} of {x.shape} into {count} parts", actual=x.shape)
    step = x.shape[axis] // count
    return [take(x, axis, i * step, step) for i in range(count)]


def take(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slab ``[start, start+length)`` of ``x`` along ``axis``."""
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + length)
    sl = tuple(index)
    out = np.ascontiguousarray(x.data[sl])

    def backward(g: Array) -> tuple[Array]:
        gx = np.zeros_like(x.data)
        gx[sl] = g
        return (gx,)

    return make_node(out, (x,), backward, "take")


def window(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    """Copy out the spatial rectangle ``[top:top+height, left:left+width]``."""
    sl = (slice(None), slice(None), slice(top, top + height), slice(left, left + width))
    out = np.ascontiguousarray(x.data[sl])

    def backward(g: Array) -> tuple[Array]:
        gx = np.zeros_like(x.data)
        gx[sl] = g
        return (gx,)

    return make_node(out, (x,), backward, "window")


def place(parts: Sequence[Tensor], origins: Sequence[tuple[int, int]], height: int, width: int) -> Tensor:
    """Assemble disjoint spatial rectangles into one ``height x width`` map."""
    first = parts[0]
    out = np.zeros((first.shape[0], first.shape[1], height, width), dtype=first.data.dtype)
    slices = []
    for part, (top, left) in zip(parts, origins, strict=True):
        sl = (slice(None), slice(None), slice(top, top + part.shape[2]), slice(left, left + part.shape[3]))
        out[sl] = part.data
        slices.append(sl)

    def backward(g: Array) -> list[Array]:
        return [np.ascontiguousarray(g[sl]) for sl in slices]

    return make_node(out, tuple(parts), backward, "place")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Row-major reshape with the element order unchanged."""
    original = x.shape
    out = x.data.reshape(shape)
    return make_node(out, (x,), lambda g: (g.reshape(original),), "reshape")


def pixel_shuffle(x: Tensor, factor: int) -> Tensor:
    """Depth-to-space: ``(B, C*s*s, H, W) -> (B, C, H*s, W*s)``."""
    n, cs, h, w = x.shape
    s = factor
    if cs % (s * s):
        raise ShapeError(f"pixel_shuffle: {cs} channels not divisible by {s * s}", actual=x.shape)
    c = cs // (s * s)
    out = x.data.reshape(n, c, s, s, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * s, w * s)

    def backward(g: Array) -> tuple[Array]:
        return (np.ascontiguousarray(g.reshape(n, c, h, s, w, s).transpose(0, 1, 3, 5, 2, 4).reshape(x.shape)),)

    return make_node(np.ascontiguousarray(out), (x,), backward, "pixel_shuffle")


def _bilinear_matrix(n_in: int, n_out: int, dtype: type) -> Array:
    """Half-pixel, edge-clamped linear interpolation weights ``(n_out, n_in)``."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def resize_bilinear(x: Tensor, height: int, width: int) -> Tensor:
    """Separable bilinear resize of a feature map to ``height x width``."""
    _require_rank(x, 4, "resize_bilinear")
    n, c, h, w = x.shape
    mh = _bilinear_matrix(h, height, x.data.dtype.type)
    mw = _bilinear_matrix(w, width, x.data.dtype.type)
    out = np.einsum("oh,bchw,pw->bcop", mh, x.data, mw, optimize=True)
    record_macs("resize", n * c * (height * h * w + height * width * w))

    def backward(g: Array) -> tuple[Array]:
        return (np.ascontiguousarray(np.einsum("oh,bcop,pw->bchw", mh, g, mw, optimize=True)),)

    return make_node(np.ascontiguousarray(out), (x,), backward, "resize_bilinear")


# ---------------------------------------------------------------------------
# Padding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PadRecord:
    """Original spatial extent of a padded map, for :func:`crop`."""

    height: int
    width: int
    pad_bottom: int = 0
    pad_right: int = 0

    @property
    def is_empty(self) -> bool:
        return self.pad_bottom == 0 and self.pad_right == 0


def pad_to_multiple(x: Tensor, mh: int, mw: int) -> tuple[Tensor, PadRecord]:
    """Edge-replicate the bottom/right borders up to the next multiples of (mh, mw)."""
    if mh < 1 or mw < 1:
        raise ValueError(f"multiples must be >= 1, got ({mh}, {mw})")
    _require_rank(x, 4, "pad_to_multiple")
    h, w = x.shape[2], x.shape[3]
    ph, pw = -h % mh, -w % mw
    record = PadRecord(height=h, width=w, pad_bottom=ph, pad_right=pw)
    if record.is_empty:
        return x, record
    out = np.pad(x.data, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge")

    def backward(g: Array) -> tuple[Array]:
        gx = g[:, :, :h, :w].copy()
        if ph:
            gx[:, :, h - 1, :] += g[:, :, h:, :w].sum(axis=2)
        if pw:
            gx[:, :, :, w - 1] += g[:, :, :h, w:].sum(axis=3)
        if ph and pw:
            gx[:, :, h - 1, w - 1] += g[:, :, h:, w:].sum(axis=(2, 3))
        return (gx,)

    return make_node(out, (x,), backward, "pad_to_multiple"), record


def crop(x: Tensor, record: PadRecord, factor: int = 1) -> Tensor:
    """Undo :func:`pad_to_multiple`; ``factor`` scales the record for upsampled outputs."""
    h, w = record.height * factor, record.width * factor
    if x.shape[2] == h and x.shape[3] == w:
        return x
    out = np.ascontiguousarray(x.data[:, :, :h, :w])

    def backward(g: Array) -> tuple[Array]:
        gx = np.zeros_like(x.data)
        gx[:, :, :h, :w] = g
        return (gx,)

    return make_node(out, (x,), backward, "crop")
