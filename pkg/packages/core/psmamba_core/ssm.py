"""
psmamba_core.ssm
~~~~~~~~~~~~~~~~
Time-invariant diagonal state-space scan and its decay diagnostics.

For every channel ``c`` and state index ``n``::

    h_i[n] = a[c,n] * h_{i-1}[n] + b[c,n] * x_i
    y_i    = sum_n cw[c,n] * h_i[n] + d[c] * x_i

The transition is parameterised as ``a = sigmoid(a_raw)`` so every finite
``a_raw`` yields ``0 < a < 1``. ``a_raw = -inf`` is accepted and encodes an
exactly memoryless channel (``a = 0``).

decay_profile
    Compares the lag-L sensitivity |dy_L/dx_1| of a full-raster sequence
    with that of a patch sequence, in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from psmamba_core import kernels
from psmamba_core.errors import ShapeError
from psmamba_core.functional import _sigmoid
from psmamba_core.tensor import Array, Tensor, make_node, parameter, record_macs

# Finite a_raw values are clamped here so sigmoid never rounds to 0 or 1 in float32.
A_RAW_MIN = -30.0
A_RAW_MAX = 15.0


def transition(a_raw: Array) -> Array:
    """Effective diagonal transition entries for raw parameters."""
    clipped = np.clip(a_raw, A_RAW_MIN, A_RAW_MAX)
    return np.where(np.isneginf(a_raw), 0, _sigmoid(clipped)).astype(a_raw.dtype)


def _transition_slope(a_raw: Array, a: Array) -> Array:
    """d a / d a_raw; zero where the clamp (or the -inf encoding) is active."""
    inside = (a_raw > A_RAW_MIN) & (a_raw < A_RAW_MAX)
    return np.where(inside, a * (1 - a), 0).astype(a.dtype)


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass
class SSMParams:
    """Per-channel diagonal parameters ``(a_raw, b, cw)`` of shape (C, N) and ``d`` of shape (C,)."""

    a_raw: Tensor
    b: Tensor
    cw: Tensor
    d: Tensor

    def __post_init__(self) -> None:
        cn = self.a_raw.shape
        if len(cn) != 2 or self.b.shape != cn or self.cw.shape != cn or self.d.shape != (cn[0],):
            raise ShapeError(
                f"inconsistent SSM parameter shapes a_raw={cn} b={self.b.shape} cw={self.cw.shape} d={self.d.shape}",
                expected=cn,
                actual=self.b.shape,
            )

    @property
    def channels(self) -> int:
        return self.a_raw.shape[0]

    @property
    def state_n(self) -> int:
        return self.a_raw.shape[1]

    @property
    def a(self) -> Array:
        return transition(self.a_raw.data)

    @classmethod
    def init(cls, channels: int, state_n: int, rng: np.random.Generator, *, name: str = "") -> SSMParams:
        """Memories spread over a in [0.5, 0.99]; small b and cw; identity-leaning skip d = 1."""
        lo, hi = 0.0, math.log(0.99 / 0.01)
        prefix = f"{name}." if name else ""
        return cls(
            a_raw=parameter(rng.uniform(lo, hi, (channels, state_n)), name=f"{prefix}a_raw"),
            b=parameter(rng.standard_normal((channels, state_n)) * 0.1, name=f"{prefix}b"),
            cw=parameter(rng.standard_normal((channels, state_n)) * 0.1, name=f"{prefix}cw"),
            d=parameter(np.ones(channels), name=f"{prefix}d"),
        )

    @classmethod
    def from_transition(
        cls,
        a: Array | float,
        b: Array | float,
        cw: Array | float,
        d: Array | float = 0.0,
        *,
        name: str = "",
    ) -> SSMParams:
        """Build parameters from effective transitions; scalars become a 1x1 system."""
        a_arr = np.atleast_2d(np.asarray(a, dtype=np.float64))
        with np.errstate(divide="ignore"):
            a_raw = np.where(a_arr <= 0, -np.inf, np.log(a_arr) - np.log1p(-a_arr))
        shape = a_arr.shape
        prefix = f"{name}." if name else ""
        return cls(
            a_raw=parameter(a_raw, name=f"{prefix}a_raw"),
            b=parameter(np.broadcast_to(b, shape), name=f"{prefix}b"),
            cw=parameter(np.broadcast_to(cw, shape), name=f"{prefix}cw"),
            d=parameter(np.broadcast_to(d, (shape[0],)), name=f"{prefix}d"),
        )

    def parameters(self) -> list[Tensor]:
        return [self.a_raw, self.b, self.cw, self.d]


@dataclass
class SSMGrads:
    """Gradients w.r.t. every raw parameter group and the initial state."""

    a_raw: Array
    b: Array
    cw: Array
    d: Array
    h0: Array


@dataclass
class TokenSequence:
    """Token values ``(B, C, L)`` plus an optional back-reference to their patch raster."""

    values: Tensor
    origin: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if self.values.ndim != 3 or self.values.shape[2] < 1:
            raise ShapeError(f"token sequence must be (B, C, L>=1), got {self.values.shape}", actual=self.values.shape)

    @property
    def length(self) -> int:
        return self.values.shape[2]


# ---------------------------------------------------------------------------
# Scan
# ---------------------------------------------------------------------------


def _check_channels(x: Tensor, p: SSMParams) -> None:
    if x.shape[1] != p.channels:
        raise ShapeError(
            f"ssm_scan: sequence {x.shape} has {x.shape[1]} channels, parameters {p.a_raw.shape} have {p.channels}",
            expected=(p.channels,),
            actual=x.shape,
        )


def _initial_state(x: Array, p: SSMParams, h0: Array | None) -> Array:
    shape = (x.shape[0], x.shape[1], p.state_n)
    if h0 is None:
        return np.zeros(shape, dtype=x.dtype)
    if h0.shape != shape:
        raise ShapeError(f"initial state {h0.shape} does not match {shape}", expected=shape, actual=h0.shape)
    return np.array(h0, dtype=x.dtype)


def _params_as(p: SSMParams, dtype: np.dtype) -> tuple[Array, Array, Array, Array]:
    return (
        np.ascontiguousarray(p.a, dtype=dtype),
        np.ascontiguousarray(p.b.data, dtype=dtype),
        np.ascontiguousarray(p.cw.data, dtype=dtype),
        np.ascontiguousarray(p.d.data, dtype=dtype),
    )


def scan_macs(batch: int, channels: int, length: int, state_n: int) -> int:
    """Multiply-adds of one forward scan: 2N for the state update, N+1 for the readout."""
    return batch * channels * length * (3 * state_n + 1)


def ssm_scan(x: TokenSequence, p: SSMParams, h0: Array | None = None) -> TokenSequence:
    """Run the linear recurrence over every (batch, channel) sequence.

    The result joins the autograd graph when ``x`` or any parameter requires
    gradients; the backward pass is :func:`ssm_scan_backward`.
    """
    xt = x.values
    _check_channels(xt, p)
    xd = xt.data
    state = _initial_state(xd, p, h0)
    h_init = state.copy()
    a, b, cw, d = _params_as(p, xd.dtype)
    y = np.empty_like(xd)
    kernels.scan_forward(xd, a, b, cw, d, state, y)
    n_batch, n_chan, length = xd.shape
    record_macs("ssm_scan", scan_macs(n_batch, n_chan, length, p.state_n))

    def backward(g: Array) -> tuple[Array, Array, Array, Array, Array]:
        gx, grads = ssm_scan_backward(x, p, g, h_init)
        return gx, grads.a_raw, grads.b, grads.cw, grads.d

    out = make_node(y, (xt, p.a_raw, p.b, p.cw, p.d), backward, "ssm_scan")
    return TokenSequence(out, origin=x.origin)


def ssm_scan_backward(
    x: TokenSequence,
    p: SSMParams,
    grad_y: Array,
    h0: Array | None = None,
) -> tuple[Array, SSMGrads]:
    """Reverse-time adjoint scan: gradients of ``sum(grad_y * y)``.

    Returns the input gradient and the gradients of every raw parameter
    (through the sigmoid reparameterisation of ``a_raw``) plus the initial
    state.
    """
    xd = x.values.data
    _check_channels(x.values, p)
    if grad_y.shape != xd.shape:
        raise ShapeError(
            f"ssm_scan_backward: grad_y {grad_y.shape} vs input {xd.shape}", expected=xd.shape, actual=grad_y.shape
        )
    dtype = xd.dtype
    gy = np.ascontiguousarray(grad_y, dtype=dtype)
    state = _initial_state(xd, p, h0)
    a, b, cw, d = _params_as(p, dtype)
    n_batch, n_chan, length = xd.shape
    n_state = p.state_n

    hist = np.empty((n_chan, n_state, length + 1), dtype=dtype)
    gx = np.empty_like(xd)
    ga = np.zeros((n_chan, n_state), dtype=dtype)
    gb = np.zeros_like(ga)
    gcw = np.zeros_like(ga)
    gd = np.zeros(n_chan, dtype=dtype)
    gh0 = np.zeros_like(state)
    kernels.scan_backward(xd, a, b, cw, d, state, gy, hist, gx, ga, gb, gcw, gd, gh0)

    ga_raw = ga * _transition_slope(p.a_raw.data.astype(dtype), a)
    return gx, SSMGrads(a_raw=ga_raw, b=gb, cw=gcw, d=gd, h0=gh0)


# ---------------------------------------------------------------------------
# Impulse response and decay
# ---------------------------------------------------------------------------


def _check_channel_index(p: SSMParams, channel: int) -> None:
    if not 1 <= channel <= p.channels:
        raise ValueError(f"channel must be in 1..{p.channels}, got {channel}")


def impulse_response(p: SSMParams, channel: int, length: int) -> Array:
    """State-path response g_t = sum_n cw[n] * a[n]**(t-1) * b[n] for lags t = 1..length.

    ``channel`` is 1-based. The d-skip term is excluded (it only acts at lag 0).
    """
    _check_channel_index(p, channel)
    c = channel - 1
    a = transition(p.a_raw.data.astype(np.float64))[c]
    weights = p.cw.data[c].astype(np.float64) * p.b.data[c].astype(np.float64)
    powers = np.power(a[None, :], np.arange(length, dtype=np.float64)[:, None])
    return powers @ weights


def log_impulse_response(p: SSMParams, channel: int, lags: Array) -> Array:
    """log10 |g_t| at the given 1-based lags, via a signed log-sum-exp.

    Stays finite far past the point where g_t underflows in float64; a
    response that cancels exactly to zero reports ``-inf``.
    """
    _check_channel_index(p, channel)
    c = channel - 1
    a = transition(p.a_raw.data.astype(np.float64))[c]
    weights = p.cw.data[c].astype(np.float64) * p.b.data[c].astype(np.float64)
    t = np.asarray(lags, dtype=np.float64)[:, None] - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        log_a = np.log(a)[None, :]
        terms = np.log(np.abs(weights))[None, :] + np.where(t == 0, 0.0, t * log_a)
    signs = np.sign(weights)[None, :]
    peak = np.max(np.where(signs != 0, terms, -np.inf), axis=1, keepdims=True)
    finite_peak = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(invalid="ignore"):
        total = np.sum(np.where(signs != 0, signs * np.exp(terms - finite_peak), 0.0), axis=1)
    with np.errstate(divide="ignore"):
        log_abs = np.log(np.abs(total)) + finite_peak[:, 0]
    log_abs = np.where(np.isfinite(peak[:, 0]), log_abs, -np.inf)
    return log_abs / math.log(10.0)


def envelope_log10(p: SSMParams, channel: int, lags: Array) -> Array:
    """log10 of the geometric bound (sum_n |cw*b|) * (max_n a)**(t-1)."""
    _check_channel_index(p, channel)
    c = channel - 1
    a = transition(p.a_raw.data.astype(np.float64))[c]
    weight = np.sum(np.abs(p.cw.data[c].astype(np.float64) * p.b.data[c].astype(np.float64)))
    t = np.asarray(lags, dtype=np.float64) - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        log_rate = np.where(t == 0, 0.0, t * np.log(np.max(a)))
        return (np.log(weight) + log_rate) / math.log(10.0)


@dataclass
class ChannelDecay:
    """Lag-L sensitivities of one channel, full raster versus patch raster."""

    channel: int
    log10_full: float
    log10_patch: float
    skip: float

    @property
    def log10_ratio(self) -> float:
        if math.isinf(self.log10_full) and math.isinf(self.log10_patch):
            return 0.0
        return self.log10_patch - self.log10_full

    @property
    def ratio(self) -> float:
        lr = self.log10_ratio
        if lr > 300:
            return math.inf
        return 10.0**lr


@dataclass
class DecayReport:
    """Per-lag impulse magnitudes and the full-vs-patch sensitivity summary."""

    l_full: int
    l_patch: int
    lags: Array
    log10_abs: Array  # (n_lags, channels)
    channels: list[ChannelDecay] = field(default_factory=list)

    def to_tsv(self) -> str:
        """Per-lag table followed by the per-channel summary, both tab-separated."""
        n_chan = self.log10_abs.shape[1]
        header = ["lag"]
        for c in range(1, n_chan + 1):
            header += [f"abs_g_ch{c}", f"log10_g_ch{c}"]
        lines = ["\t".join(header)]
        for lag, row in zip(self.lags, self.log10_abs, strict=True):
            cells = [str(int(lag))]
            for value in row:
                cells += [_fmt(10.0**value if value > -300 else 0.0), _fmt(value)]
            lines.append("\t".join(cells))
        lines.append("")
        lines.append("channel\tl_full\tl_patch\tlog10_full\tlog10_patch\tlog10_ratio\tratio\tskip_d")
        for ch in self.channels:
            lines.append(
                "\t".join(
                    [
                        str(ch.channel),
                        str(self.l_full),
                        str(self.l_patch),
                        _fmt(ch.log10_full),
                        _fmt(ch.log10_patch),
                        _fmt(ch.log10_ratio),
                        _fmt(ch.ratio),
                        _fmt(ch.skip),
                    ]
                )
            )
        return "\n".join(lines) + "\n"


def _fmt(value: float) -> str:
    return f"{value:.10g}"


def decay_profile(p: SSMParams, l_full: int, l_patch: int, max_lag: int | None = None) -> DecayReport:
    """Sensitivity of y_L to x_1 for a full raster (L = l_full) versus a patch (L = l_patch).

    For L >= 2 the sensitivity is |g_L|; per-lag rows cover lags 1..max_lag
    (default l_patch).
    """
    if not 1 <= l_patch <= l_full:
        raise ValueError(f"need 1 <= l_patch <= l_full, got l_patch={l_patch}, l_full={l_full}")
    lags = np.arange(1, (max_lag or l_patch) + 1)
    table = np.stack([log_impulse_response(p, c, lags) for c in range(1, p.channels + 1)], axis=1)
    channels = []
    for c in range(1, p.channels + 1):
        full, patch = log_impulse_response(p, c, np.array([l_full, l_patch]))
        channels.append(
            ChannelDecay(channel=c, log10_full=float(full), log10_patch=float(patch), skip=float(p.d.data[c - 1]))
        )
    return DecayReport(l_full=l_full, l_patch=l_patch, lags=lags, log10_abs=table, channels=channels)
