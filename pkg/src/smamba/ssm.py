"""Selective state-space scan.

A diagonal continuous system ``h' = A h + B x, y = C h`` is discretized with
a zero-order hold over step ``delta``::

    a_bar = exp(delta * a)
    b_bar = (exp(delta * a) - 1) / a * b          (exact, elementwise)

and evaluated as the linear recurrence ``h_t = a_bar_t * h_{t-1} + b_bar_t x_t``,
``y_t = <c_t, h_t> + d * x_t``. In the selective variant ``delta``, ``b`` and
``c`` are linear functions of the current input.

Array conventions: a batch of ``S`` sequences of length ``L`` with ``C``
channels and ``N`` state dims per channel. States are ``(S, L, C, N)``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import _kernels
from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

SERIES_THRESHOLD = 1e-6


@dataclass
class SSMParams:
    """Learnable parameters of one selective scan over ``C`` channels."""

    a_log: Tensor    # (C, N); A = -exp(a_log)
    d_skip: Tensor   # (C,)
    w_delta: Tensor  # (C, C)
    b_delta: Tensor  # (C,)
    w_b: Tensor      # (C, N)
    w_c: Tensor      # (C, N)

    @property
    def channels(self) -> int:
        return self.a_log.shape[0]

    @property
    def state_dim(self) -> int:
        return self.a_log.shape[1]

    def named(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def param_shapes(channels: int, state_dim: int) -> dict[str, tuple[int, ...]]:
    C, N = channels, state_dim
    return {
        "a_log": (C, N),
        "d_skip": (C,),
        "w_delta": (C, C),
        "b_delta": (C,),
        "w_b": (C, N),
        "w_c": (C, N),
    }


def init_params(channels: int, state_dim: int, rng: np.random.Generator, dtype=np.float32,
                dt_min: float = 1e-3, dt_max: float = 1e-1) -> dict[str, np.ndarray]:
    """Standard Mamba-style initialization.

    ``a_n = -(n + 1)`` for every channel, ``d = 1``, and the delta bias chosen
    so ``softplus(bias)`` is log-uniform in ``[dt_min, dt_max]``.
    """
    C, N = channels, state_dim
    bound = 1.0 / np.sqrt(C)
    dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), size=C))
    return {
        "a_log": np.tile(np.log(np.arange(1, N + 1, dtype=np.float64)), (C, 1)).astype(dtype),
        "d_skip": np.ones(C, dtype=dtype),
        "w_delta": rng.uniform(-bound, bound, size=(C, C)).astype(dtype),
        "b_delta": (dt + np.log(-np.expm1(-dt))).astype(dtype),
        "w_b": rng.uniform(-bound, bound, size=(C, N)).astype(dtype),
        "w_c": rng.uniform(-bound, bound, size=(C, N)).astype(dtype),
    }


@dataclass
class DiscretePair:
    """Per-step discrete transition ``a_bar`` and input map ``b_bar``, both (..., L, C, N).

    The input product ``b_bar * x_t`` is formed by the recurrence.
    """

    a_bar: np.ndarray
    b_bar: np.ndarray


def _zoh_coeffs(delta: np.ndarray, a: np.ndarray):
    """Return (a_bar, coef, small) with ``b_bar = coef * b``; delta (..., C), a (C, N)."""
    dA = delta[..., None] * a
    a_bar = np.exp(dA)
    small = np.abs(dA) < SERIES_THRESHOLD
    with np.errstate(invalid="ignore", divide="ignore"):
        exact = np.expm1(dA) / a
    series = delta[..., None] * (1 + dA / 2)
    coef = np.where(small, series, exact)
    return a_bar, coef, small


def zoh_discretize(delta, a_diag, b) -> DiscretePair:
    """Zero-order hold for a diagonal ``A``.

    ``delta`` (..., L, C) > 0, ``a_diag`` (C, N) < 0, ``b`` (..., L, N).
    Below ``|delta * a| < 1e-6`` the two-term series ``delta * (1 + delta*a/2)``
    replaces ``expm1(delta*a)/a``.
    """
    delta, a_diag, b = np.asarray(delta), np.asarray(a_diag), np.asarray(b)
    if delta.shape[-1] != a_diag.shape[0] or b.shape[-1] != a_diag.shape[1] or delta.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"zoh_discretize: delta {delta.shape}, a {a_diag.shape}, b {b.shape}")
    if not (delta > 0).all():
        raise ValueError("zoh_discretize: delta must be strictly positive")
    if not (a_diag < 0).all():
        raise ValueError("zoh_discretize: diagonal A must be strictly negative")
    a_bar, coef, _ = _zoh_coeffs(delta, a_diag)
    return DiscretePair(a_bar=a_bar, b_bar=coef * b[..., None, :])


def _readout(h: np.ndarray, c: np.ndarray) -> np.ndarray:
    return (h * c[..., None, :]).sum(axis=-1)


def recurrence_reference(pair: DiscretePair, c, x, d_skip=None) -> np.ndarray:
    """Literal step-by-step evaluation with ``h_0 = 0``; the oracle for faster paths.

    ``c`` (..., L, N), ``x`` (..., L, C), optional ``d_skip`` (C,). Returns (..., L, C).
    """
    a_bar, b_bar = pair.a_bar, pair.b_bar
    c, x = np.asarray(c), np.asarray(x)
    if a_bar.shape != b_bar.shape or x.shape != a_bar.shape[:-1] or c.shape != a_bar.shape[:-2] + a_bar.shape[-1:]:
        raise ShapeError(f"recurrence_reference: a_bar {a_bar.shape}, b_bar {b_bar.shape}, c {c.shape}, x {x.shape}")
    L = x.shape[-2]
    h = np.zeros(a_bar.shape[:-3] + a_bar.shape[-2:], dtype=a_bar.dtype)
    y = np.empty_like(x)
    for t in range(L):
        h = a_bar[..., t, :, :] * h + b_bar[..., t, :, :] * x[..., t, :, None]
        y[..., t, :] = _readout(h, c[..., t, :])
    if d_skip is not None:
        y = y + np.asarray(d_skip) * x
    return y


def linear_scan(a: np.ndarray, b: np.ndarray, chunk: int | None = None) -> np.ndarray:
    """All states of ``h_t = a_t * h_{t-1} + b_t`` along axis 1, ``h_{-1} = 0``.

    ``chunk=None`` runs the plain sequential loop. Otherwise the sequence is
    cut into blocks of ``chunk`` steps: each block is scanned locally from a
    zero state (vectorized across blocks) while tracking its running product
    of ``a``; block entry states are then chained sequentially and folded in
    as ``h = local + prod_a * h_in``.
    """
    if a.shape != b.shape:
        raise ShapeError(f"linear_scan: a {a.shape} vs b {b.shape}")
    S, L = a.shape[:2]
    rest = a.shape[2:]
    if chunk is None:
        h = np.empty_like(b)
        h[:, 0] = b[:, 0]
        for t in range(1, L):
            h[:, t] = a[:, t] * h[:, t - 1] + b[:, t]
        return h
    K = max(1, min(int(chunk), L))
    nc = -(-L // K)
    pad = nc * K - L
    if pad:
        a = np.concatenate([a, np.ones((S, pad) + rest, dtype=a.dtype)], axis=1)
        b = np.concatenate([b, np.zeros((S, pad) + rest, dtype=b.dtype)], axis=1)
    a4 = a.reshape((S, nc, K) + rest)
    b4 = b.reshape((S, nc, K) + rest)
    local = np.empty_like(b4)
    prod = np.empty_like(a4)
    local[:, :, 0] = b4[:, :, 0]
    prod[:, :, 0] = a4[:, :, 0]
    for k in range(1, K):
        local[:, :, k] = a4[:, :, k] * local[:, :, k - 1] + b4[:, :, k]
        prod[:, :, k] = prod[:, :, k - 1] * a4[:, :, k]
    h_in = np.zeros((S, nc) + rest, dtype=b.dtype)
    for j in range(1, nc):
        h_in[:, j] = prod[:, j - 1, -1] * h_in[:, j - 1] + local[:, j - 1, -1]
    h = local + prod * h_in[:, :, None]
    return h.reshape((S, nc * K) + rest)[:, :L]


def auto_chunk(L: int) -> int:
    return max(1, int(round(np.sqrt(L))))


def scan_core(delta: Tensor, a: Tensor, b: Tensor, c: Tensor, x: Tensor,
              chunk: int | None = None, backend: str = "auto") -> Tensor:
    """Differentiable fused discretize + recurrence + readout (no skip term).

    ``delta`` (S, L, C), ``a`` (C, N) negative, ``b``/``c`` (S, L, N), ``x`` (S, L, C).

    With ``chunk=None`` and ``backend="auto"`` the compiled kernel runs when
    numba is importable. ``backend="numpy"`` forces the array path: plain
    sequential for ``chunk=None``, blocked for an integer ``chunk``.
    """
    S, L, C = x.shape
    N = a.shape[1]
    if delta.shape != (S, L, C) or a.shape != (C, N) or b.shape != (S, L, N) or c.shape != (S, L, N):
        raise ShapeError(f"scan_core: delta {delta.shape}, a {a.shape}, b {b.shape}, c {c.shape}, x {x.shape}")
    if backend not in ("auto", "numpy", "fused"):
        raise ValueError(f"unknown scan backend {backend!r}")
    if backend == "fused" or (backend == "auto" and chunk is None and _kernels.AVAILABLE):
        return _scan_fused(delta, a, b, c, x)
    return _scan_numpy(delta, a, b, c, x, chunk)


def kernels_available() -> bool:
    return _kernels.AVAILABLE


def scan_values(delta, a, b, c, x, chunk: int | None = None, backend: str = "auto") -> np.ndarray:
    """Array-in, array-out :func:`scan_core` without recording a graph."""
    with T.no_grad():
        return scan_core(*(Tensor(np.asarray(v)) for v in (delta, a, b, c, x)), chunk=chunk, backend=backend).data


def _scan_fused(delta, a, b, c, x) -> Tensor:
    arrs = [np.ascontiguousarray(t.data) for t in (delta, a, b, c, x)]
    y, saved = _kernels.fused_forward(*arrs)

    def backward(gy):
        return _kernels.fused_backward(*arrs, saved, gy)

    return T.custom_op("selective_scan", y, (delta, a, b, c, x), backward)


def _scan_numpy(delta, a, b, c, x, chunk) -> Tensor:
    dv, av, bv, cv, xv = delta.data, a.data, b.data, c.data, x.data
    a_bar, coef, small = _zoh_coeffs(dv, av)
    b_bar = coef * bv[:, :, None, :]
    bx = b_bar * xv[..., None]
    h = linear_scan(a_bar, bx, chunk)
    y = _readout(h, cv)

    def backward(gy):
        gh_local = gy[..., None] * cv[:, :, None, :]
        a_next = np.empty_like(a_bar)
        a_next[:, :-1] = a_bar[:, 1:]
        a_next[:, -1] = 0
        dh = linear_scan(a_next[:, ::-1], gh_local[:, ::-1], chunk)[:, ::-1]
        gc = (gy[..., None] * h).sum(axis=2)
        h_prev = np.empty_like(h)
        h_prev[:, 0] = 0
        h_prev[:, 1:] = h[:, :-1]
        g_abar = dh * h_prev
        gx = (dh * b_bar).sum(axis=-1)
        g_bbar = dh * xv[..., None]
        gb = (g_bbar * coef).sum(axis=2)
        g_coef = g_bbar * bv[:, :, None, :]
        d_ext = dv[..., None]
        dcoef_ddelta = np.where(small, 1 + d_ext * av, a_bar)
        with np.errstate(invalid="ignore", divide="ignore"):
            dcoef_da = np.where(small, d_ext * d_ext / 2, (d_ext * a_bar - coef) / av)
        g_abar_dA = g_abar * a_bar
        gdelta = (g_abar_dA * av + g_coef * dcoef_ddelta).sum(axis=-1)
        ga = (g_abar_dA * d_ext + g_coef * dcoef_da).sum(axis=(0, 1))
        return gdelta, ga, gb, gc, gx

    return T.custom_op("selective_scan", y, (delta, a, b, c, x), backward)


def ssm_inputs(x: Tensor, params: SSMParams):
    """Input-dependent ``delta`` (softplus), ``B``, ``C`` and the negative diagonal ``A``."""
    delta = T.softplus(T.linear(x, params.w_delta, params.b_delta))
    b = T.linear(x, params.w_b)
    c = T.linear(x, params.w_c)
    a = T.mul(T.exp(params.a_log), -1.0)
    return delta, a, b, c


def selective_scan(x: Tensor, params: SSMParams, chunk: int | None = None, use_d_skip: bool = True,
                   backend: str = "auto") -> Tensor:
    """S6 scan of ``x`` (L, C) or (S, L, C); returns the same shape."""
    squeeze = x.ndim == 2
    if squeeze:
        x = T.reshape(x, (1,) + x.shape)
    if x.ndim != 3 or x.shape[2] != params.channels:
        raise ShapeError(f"selective_scan: x {x.shape} vs {params.channels} channels")
    delta, a, b, c = ssm_inputs(x, params)
    y = scan_core(delta, a, b, c, x, chunk, backend)
    if use_d_skip:
        y = T.add(y, T.mul(x, params.d_skip))
    if squeeze:
        y = T.reshape(y, y.shape[1:])
    return y
