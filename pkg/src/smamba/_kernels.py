"""Compiled fused scan kernels (numba); ``AVAILABLE`` is False when numba is missing.

Both kernels walk the sequence once and form ``a_bar``/``b_bar`` on the
fly instead of materializing (S, L, C, N) temporaries. The forward pass
saves only the states ``h`` and ``expm1(delta * a)`` for the backward pass.
All loops are serial, so results do not depend on thread count.
"""

from __future__ import annotations

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

AVAILABLE = numba is not None
SERIES_THRESHOLD = 1e-6


def _fwd(delta, a, b, c, x, em1_arr, consts, h_out, y):
    S, L, C = x.shape
    N = a.shape[1]
    zero, one, half, thr = consts[0], consts[1], consts[2], consts[3]
    for s in range(S):
        for t in range(L):
            for ci in range(C):
                d = delta[s, t, ci]
                xv = x[s, t, ci]
                acc = zero
                for n in range(N):
                    an = a[ci, n]
                    da = d * an
                    em1 = em1_arr[s, t, ci, n]
                    if abs(da) < thr:
                        coef = d * (one + da * half)
                    else:
                        coef = em1 / an
                    prev = h_out[s, t - 1, ci, n] if t > 0 else zero
                    hv = (em1 + one) * prev + coef * b[s, t, n] * xv
                    h_out[s, t, ci, n] = hv
                    acc += hv * c[s, t, n]
                y[s, t, ci] = acc


def _bwd(delta, a, inv_a, b, c, x, h, em1_arr, gy, consts, gdelta, ga, gb, gc, gx):
    S, L, C = x.shape
    N = a.shape[1]
    zero, one, half, thr = consts[0], consts[1], consts[2], consts[3]
    dh = np.zeros((C, N), dtype=h.dtype)
    gc_t = np.zeros(N, dtype=h.dtype)
    for s in range(S):
        dh[:, :] = zero
        for t in range(L - 1, -1, -1):
            gc_t[:] = zero
            for ci in range(C):
                d = delta[s, t, ci]
                xv = x[s, t, ci]
                g = gy[s, t, ci]
                acc_x = zero
                acc_d = zero
                for n in range(N):
                    an = a[ci, n]
                    da = d * an
                    em1 = em1_arr[s, t, ci, n]
                    abar = em1 + one
                    bn = b[s, t, n]
                    if abs(da) < thr:
                        coef = d * (one + da * half)
                        dcoef_dd = one + da
                        dcoef_da = d * d * half
                    else:
                        coef = em1 / an
                        dcoef_dd = abar
                        dcoef_da = (d * abar - coef) * inv_a[ci, n]
                    gc_t[n] += g * h[s, t, ci, n]
                    gh = dh[ci, n] + g * c[s, t, n]
                    prev = h[s, t - 1, ci, n] if t > 0 else zero
                    g_abar = gh * prev * abar
                    acc_x += gh * coef * bn
                    g_bbar = gh * xv
                    gb[s, t, n] += g_bbar * coef
                    g_coef = g_bbar * bn
                    acc_d += g_abar * an + g_coef * dcoef_dd
                    ga[ci, n] += g_abar * d + g_coef * dcoef_da
                    dh[ci, n] = abar * gh
                gx[s, t, ci] = acc_x
                gdelta[s, t, ci] = acc_d
            for n in range(N):
                gc[s, t, n] = gc_t[n]


def _consts(dtype):
    return np.array([0.0, 1.0, 0.5, SERIES_THRESHOLD], dtype=dtype)


if AVAILABLE:
    _fwd_jit = numba.njit(cache=True, fastmath=False)(_fwd)
    _bwd_jit = numba.njit(cache=True, fastmath=False)(_bwd)


def fused_forward(delta, a, b, c, x):
    """Return ``y`` and the saved (states, expm1(delta*a)) for the backward pass."""
    S, L, C = x.shape
    # vectorized expm1 is several times faster than the scalar libm call
    em1 = np.expm1(delta[..., None] * a)
    h = np.empty_like(em1)
    y = np.empty_like(x)
    _fwd_jit(delta, a, b, c, x, em1, _consts(x.dtype), h, y)
    return y, (h, em1)


def fused_backward(delta, a, b, c, x, saved, gy):
    gdelta = np.empty_like(delta)
    ga = np.zeros_like(a)
    gb = np.zeros_like(b)
    gc = np.empty_like(c)
    gx = np.empty_like(x)
    gy = np.ascontiguousarray(gy, dtype=x.dtype)
    _bwd_jit(delta, a, 1.0 / a, b, c, x, saved[0], saved[1], gy, _consts(x.dtype), gdelta, ga, gb, gc, gx)
    return gdelta, ga, gb, gc, gx
