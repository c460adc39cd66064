"""
psmamba_core.kernels
~~~~~~~~~~~~~~~~~~~~
JIT-compiled linear-recurrence kernels.

The scan is sequential in the sequence axis by definition, so the kernels
parallelise over channels only. Each channel's work (including its share of
the parameter gradients) is done by exactly one thread in a fixed order, so
results do not depend on the thread count.

Arrays are laid out as ``x[batch, channel, position]`` and
``a[channel, state]``. Scratch buffers are allocated by the caller so every
kernel works in the caller's precision.
"""

from __future__ import annotations

import numba
from numba import njit, prange


def configure_threads(count: int) -> None:
    """Set the JIT thread pool size; 0 restores the library default."""
    limit = numba.config.NUMBA_NUM_THREADS
    numba.set_num_threads(limit if count <= 0 else min(count, limit))


@njit(cache=True, parallel=True)
def scan_forward(x, a, b, cw, d, state, y):  # type: ignore[no-untyped-def]
    """Run h_i = a*h_{i-1} + b*x_i, y_i = sum_n cw*h_i + d*x_i in place.

    ``state`` holds h_0 on entry and h_L on exit; ``y`` receives the output.
    """
    n_batch, n_chan, length = x.shape
    n_state = a.shape[1]
    for c in prange(n_chan):
        for bi in range(n_batch):
            for i in range(length):
                xi = x[bi, c, i]
                acc = 0.0
                for n in range(n_state):
                    hn = a[c, n] * state[bi, c, n] + b[c, n] * xi
                    state[bi, c, n] = hn
                    acc += cw[c, n] * hn
                y[bi, c, i] = acc + d[c] * xi


@njit(cache=True, parallel=True)
def scan_backward(x, a, b, cw, d, h0, gy, hist, gx, ga, gb, gcw, gd, gh0):  # type: ignore[no-untyped-def]
    """Reverse-time adjoint scan for :func:`scan_forward`.

    Recomputes the state history into ``hist[channel, state, 0..L]`` and
    accumulates gradients w.r.t. the input, the effective transition ``a``,
    ``b``, ``cw``, ``d`` and the initial state. Gradient buffers must be
    zeroed by the caller.
    """
    n_batch, n_chan, length = x.shape
    n_state = a.shape[1]
    for c in prange(n_chan):
        for bi in range(n_batch):
            for n in range(n_state):
                hist[c, n, 0] = h0[bi, c, n]
            for i in range(length):
                xi = x[bi, c, i]
                for n in range(n_state):
                    hist[c, n, i + 1] = a[c, n] * hist[c, n, i] + b[c, n] * xi

            for n in range(n_state):
                gh0[bi, c, n] = 0.0
            for i in range(length - 1, -1, -1):
                g = gy[bi, c, i]
                xi = x[bi, c, i]
                gd[c] += g * xi
                acc = 0.0
                for n in range(n_state):
                    # gh0 carries the running adjoint of h_{i+1} between steps.
                    lam = cw[c, n] * g + a[c, n] * gh0[bi, c, n]
                    gh0[bi, c, n] = lam
                    gcw[c, n] += g * hist[c, n, i + 1]
                    gb[c, n] += lam * xi
                    ga[c, n] += lam * hist[c, n, i]
                    acc += b[c, n] * lam
                gx[bi, c, i] = d[c] * g + acc
            for n in range(n_state):
                gh0[bi, c, n] = a[c, n] * gh0[bi, c, n]
