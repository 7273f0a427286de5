"""Finite-difference gradient suites shared by the ``gradcheck`` command and the tests.

Every check runs in float64 and reduces to a scalar through a smooth
weighted sum, so kinks in the loss itself never enter the comparison.
"""

from __future__ import annotations

import time
from collections.abc import Callable, Iterator
from dataclasses import dataclass

import numpy as np

from . import losses
from . import model as M
from . import ssm
from . import tensor as T
from .iss2d import N_DIRECTIONS, iss2d_forward
from .tensor import Tensor

OP_TOL = 1e-4
NETWORK_TOL = 1e-3
SUITES = ("ops", "scan", "iss2d", "block", "network")
# Steps sit between truncation error (large steps, strongly curved weights)
# and rounding noise (small gradients behind layer norms); each value was
# picked from a sweep over 1e-2 .. 1e-6 for its suite.
STEPS = {"ops": 1e-4, "scan": 1e-4, "iss2d": 1e-4, "block": 1e-3, "network": 1e-4}


@dataclass
class GradResult:
    suite: str
    name: str
    error: float
    tol: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error <= self.tol


def _t(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def _weighted(rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    """Scalar probe ``sum(y * r)`` with a fixed random ``r`` per output shape."""
    cache: dict[tuple, np.ndarray] = {}

    def probe(y: Tensor) -> Tensor:
        if y.shape not in cache:
            cache[y.shape] = rng.normal(size=y.shape)
        return T.sum(T.mul(y, Tensor(cache[y.shape])))

    return probe


def _op_cases(rng: np.random.Generator):
    r = rng.normal
    probe = _weighted(rng)
    away = r(size=(3, 4))
    away = np.where(np.abs(away) < 0.2, away + 0.5, away)
    mask = (rng.random((2, 5, 5, 3)) >= 0.3) / 0.7
    idx = np.array([[2, 0, 1, 3], [3, 3, 0, 1]])
    yield "add_broadcast", lambda a, b: probe(T.add(a, b)), [_t(r(size=(3, 4))), _t(r(size=(4,)))]
    yield "sub_broadcast", lambda a, b: probe(T.sub(a, b)), [_t(r(size=(2, 1, 4))), _t(r(size=(3, 1)))]
    yield "mul_broadcast", lambda a, b: probe(T.mul(a, b)), [_t(r(size=(3, 4))), _t(r(size=(3, 1)))]
    yield "exp", lambda a: probe(T.exp(a)), [_t(r(size=(3, 4)))]
    yield "silu", lambda a: probe(T.silu(a)), [_t(3 * r(size=(3, 4)))]
    yield "softplus", lambda a: probe(T.softplus(a)), [_t(3 * r(size=(3, 4)))]
    yield "abs", lambda a: probe(T.abs(a)), [_t(away)]
    yield "sqrt", lambda a: probe(T.sqrt(a)), [_t(rng.uniform(0.5, 2.0, size=(3, 4)))]
    yield "softmax", lambda a: probe(T.softmax(a, axis=-1)), [_t(r(size=(3, 4)))]
    yield "sum_axis", lambda a: probe(T.sum(a, axis=1, keepdims=True)), [_t(r(size=(2, 3, 4)))]
    yield "mean_axes", lambda a: probe(T.mean(a, axis=(0, 2))), [_t(r(size=(2, 3, 4)))]
    yield "reshape_permute", lambda a: probe(T.permute(T.reshape(a, (4, 3, 2)), (2, 0, 1))), [_t(r(size=(2, 3, 4)))]
    yield "concat", lambda a, b: probe(T.concat([a, b], axis=1)), [_t(r(size=(2, 3))), _t(r(size=(2, 2)))]
    yield "getitem", lambda a: probe(T.getitem(a, (slice(None), slice(1, 3)))), [_t(r(size=(3, 4)))]
    yield "take_repeated", lambda a: probe(T.take(a, idx, axis=1)), [_t(r(size=(2, 4, 3)))]
    yield "matmul_batched", lambda a, b: probe(T.matmul(a, b)), [_t(r(size=(2, 3, 4))), _t(r(size=(2, 4, 5)))]
    yield "linear", lambda x, w, b: probe(T.linear(x, w, b)), [_t(r(size=(2, 3, 4))), _t(r(size=(4, 5))), _t(r(size=(5,)))]
    yield "conv2d_same", lambda x, w, b: probe(T.conv2d(x, w, b)), [_t(r(size=(2, 5, 6, 2))), _t(r(size=(3, 3, 2, 3))), _t(r(size=(3,)))]
    yield "conv2d_stride2", lambda x, w: probe(T.conv2d(x, w, stride=2, padding=1)), [_t(r(size=(1, 6, 6, 2))), _t(r(size=(3, 3, 2, 3)))]
    yield "depthwise_conv2d", lambda x, w, b: probe(T.depthwise_conv2d(x, w, b)), [_t(r(size=(2, 4, 5, 3))), _t(r(size=(3, 3, 3))), _t(r(size=(3,)))]
    yield "layer_norm", lambda x, w, b: probe(T.layer_norm(x, w, b)), [_t(r(size=(2, 3, 5))), _t(r(size=(5,))), _t(r(size=(5,)))]
    yield "dropout_fixed_mask", lambda x: probe(T.mul(x, Tensor(mask))), [_t(r(size=(2, 5, 5, 3)))]
    yield "pixel_shuffle", lambda x: probe(M.pixel_shuffle(x, 2)), [_t(r(size=(1, 2, 3, 8)))]
    yield "patch_merge", lambda x: probe(M.merge_neighbourhoods(x)), [_t(r(size=(1, 4, 4, 2)))]
    hr = rng.random((2, 16, 16, 1))
    phi = losses.FeatureExtractor.seeded(0, channels=(4, 4, 4, 4), dtype=np.float64)
    yield "perceptual_loss", lambda x: losses.perceptual_loss(x, hr, phi), [_t(hr + 0.1 * r(size=hr.shape))]


def _scan_cases(rng: np.random.Generator):
    probe = _weighted(rng)
    C, N = 5, 4
    raw = ssm.init_params(C, N, rng, np.float64)
    names = list(raw)

    def run(backend, chunk):
        def f(x, *ps):
            params = ssm.SSMParams(**dict(zip(names, ps)))
            return probe(ssm.selective_scan(x, params, chunk=chunk, backend=backend))
        return f

    def inputs():
        return [_t(rng.normal(size=(2, 11, C)))] + [_t(raw[k]) for k in names]

    yield "selective_scan_numpy", run("numpy", None), inputs()
    yield "selective_scan_chunked", run("numpy", 4), inputs()
    yield "selective_scan_fused", run("auto", None), inputs()
    # delta ~ 1e-7 keeps every element on the series branch; the 1e7 rescale
    # keeps finite differences well conditioned
    a = -np.exp(raw["a_log"])
    c = rng.normal(size=(2, 7, N))
    for backend in ("numpy", "fused"):
        yield f"scan_series_branch_{backend}", lambda u, b, x, be=backend: T.mul(probe(ssm.scan_core(
            T.mul(u, 1e-7), Tensor(a), b, Tensor(c), x, backend=be)), 1e7), [
            _t(rng.uniform(1.0, 2.0, size=(2, 7, C))), _t(rng.normal(size=(2, 7, N))), _t(rng.normal(size=(2, 7, C)))]


def _iss2d_cases(rng: np.random.Generator):
    probe = _weighted(rng)
    C, N = 3, 4
    raw = ssm.init_params(C, N, rng, np.float64)
    names = list(raw)

    def shared(x, logits, *ps):
        return probe(iss2d_forward(x, ssm.SSMParams(**dict(zip(names, ps))), logits))

    yield "iss2d_shared", shared, [_t(rng.normal(size=(2, 3, 4, C))), _t(rng.normal(size=N_DIRECTIONS))] + [_t(raw[k]) for k in names]
    per = [ssm.init_params(C, N, rng, np.float64) for _ in range(N_DIRECTIONS)]

    def per_direction(x, logits, *w_deltas):
        ps = [ssm.SSMParams(**{**{k: Tensor(v) for k, v in p.items()}, "w_delta": w}) for p, w in zip(per, w_deltas)]
        return probe(iss2d_forward(x, ps, logits))

    yield "iss2d_per_direction", per_direction, [_t(rng.normal(size=(1, 3, 3, C))), _t(rng.normal(size=N_DIRECTIONS))] + [
        _t(p["w_delta"]) for p in per]


def _tiny_block_config(**kw) -> M.UNetConfig:
    base = dict(level_channels=(4, 4, 8, 8), blocks_per_level=1, state_dim=4, dropout=0.0, head_channels=2)
    base.update(kw)
    return M.UNetConfig(**base)


def _randomized(P, rng: np.random.Generator):
    """Perturb every parameter so no gradient is identically zero (e.g. the zero-init output conv)."""
    for name, t in P.items():
        if name.endswith("a_log") or name.endswith("b_delta"):
            continue
        t.data += 0.1 * rng.normal(size=t.shape)
    return P


def _block_cases(rng: np.random.Generator):
    probe = _weighted(rng)
    cfg = _tiny_block_config()
    P = _randomized(M.init_params(cfg, seed=1, dtype=np.float64), rng)
    prefix = "enc0.blk0."
    keys = [k for k in P if k.startswith(prefix) and P[k].requires_grad]

    def block(x, *ps):
        Q = dict(P)
        Q.update(zip(keys, ps))
        return probe(M.vision_mamba_block(x, Q, prefix, cfg, training=False))

    yield "vision_mamba_block", block, [_t(rng.normal(size=(1, 4, 4, 4)))] + [_t(P[k].data) for k in keys]


def _network_cases(rng: np.random.Generator):
    probe = _weighted(rng)
    cfg = M.UNetConfig(level_channels=(4, 8, 16, 32), blocks_per_level=1, dropout=0.0)
    P = _randomized(M.init_params(cfg, seed=2, dtype=np.float64), rng)
    picks = ["head.conv.w", "embed.w", "enc0.blk0.ssm.w_delta", "enc1.merge.lin.w", "bott.blk0.fusion.logits",
             "dec1.fuse.w", "dec0.blk0.ssm.a_log", "final.expand.w", "final.conv.w"]
    lr = rng.random((1, 16, 16, 1))

    def net(*ps):
        Q = dict(P)
        Q.update(zip(picks, ps))
        # training mode avoids the inference clip; dropout is disabled in the config
        return probe(M.forward(lr, Q, cfg, training=True))

    yield "micro_network", net, [_t(P[k].data) for k in picks]


_CASES = {"ops": _op_cases, "scan": _scan_cases, "iss2d": _iss2d_cases, "block": _block_cases, "network": _network_cases}


def run_suite(suite: str, seed: int = 0, max_coords: int | None = 12) -> Iterator[GradResult]:
    """Yield one result per check; ``max_coords`` caps probed coordinates per tensor."""
    if suite not in _CASES:
        raise ValueError(f"unknown gradient suite {suite!r}; choose from {SUITES}")
    tol = NETWORK_TOL if suite == "network" else OP_TOL
    rng = np.random.default_rng([seed, SUITES.index(suite)])
    for name, f, xs in _CASES[suite](rng):
        t0 = time.perf_counter()
        err = T.grad_check(f, xs, step=STEPS[suite], max_coords=max_coords, seed=seed)
        yield GradResult(suite, name, err, tol, time.perf_counter() - t0)


def run_all(suites=SUITES, seed: int = 0, max_coords: int | None = 12) -> list[GradResult]:
    return [r for s in suites for r in run_suite(s, seed, max_coords)]
