"""Dense tensors with tape-based reverse-mode differentiation.

Every op below is a plain function that takes :class:`Tensor` operands,
computes its result with numpy and, when any operand requires a gradient,
appends a node (inputs, output id, backward closure) to the active :class:`Tape`.
Because nodes are appended in execution order the tape is already
topologically sorted; :func:`backward` simply walks it in reverse.

Layout is row-major (numpy C order). Images and feature grids are NHWC:
``(batch, height, width, channels)``.

Shape rules
-----------

==================  ===============================================  =====================
op                  operands                                         result
==================  ===============================================  =====================
add / sub / mul     ``a``, ``b`` broadcast right-aligned (numpy)     broadcast shape
matmul              ``(..., m, k) @ (k, n)`` or batched equal rank   ``(..., m, n)``
linear              ``x (..., in)``, ``w (in, out)``, ``b (out,)``   ``(..., out)``
conv2d              ``x (B, H, W, Ci)``, ``w (k, k, Ci, Co)``        ``(B, Ho, Wo, Co)``
depthwise_conv2d    ``x (B, H, W, C)``, ``w (k, k, C)``              ``(B, H, W, C)``
layer_norm          ``x (..., C)``, ``weight/bias (C,)``             same as ``x``
silu/softplus/exp   any                                              same
abs/sqrt            any                                              same
softmax             any, along ``axis``                              same
sum / mean          any, over ``axis`` (None = all)                  reduced
reshape / permute   any                                              new view order
concat              equal shapes except ``axis``                     joined
getitem             basic indexing (ints, slices incl. negative)     numpy result
take                ``x``, integer ``indices`` along ``axis``        numpy ``take``
==================  ===============================================  =====================

For conv2d, ``Ho = (H + 2p - k) // s + 1``; the default padding is
``(k - 1) // 2`` for stride 1 (size preserving) and 0 otherwise.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

DEFAULT_DTYPE = np.float32
LAYER_NORM_EPS = 1e-5


class Tape:
    """Ordered record of differentiable ops executed since the last backward."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __len__(self):
        return len(self.nodes)


class _Node:
    # The output is referenced by id only: a strong reference would form a
    # Tensor <-> node cycle and keep whole graphs alive until the cyclic GC runs.
    __slots__ = ("op", "inputs", "output_id", "backward", "tape")

    def __init__(self, op, inputs, output, backward, tape):
        self.tape = tape
        self.op = op
        self.inputs = inputs
        self.output_id = id(output)
        self.backward = backward


class _State:
    tape = Tape()
    grad_enabled = True
    check_finite = True


def current_tape() -> Tape:
    if _State.tape.consumed:
        _State.tape = Tape()
    return _State.tape


def reset_tape() -> None:
    """Drop any recorded-but-unused graph (e.g. after an aborted step)."""
    _State.tape = Tape()


@contextlib.contextmanager
def no_grad():
    prev = _State.grad_enabled
    _State.grad_enabled = False
    try:
        yield
    finally:
        _State.grad_enabled = prev


def set_check_finite(flag: bool) -> None:
    _State.check_finite = bool(flag)


class Tensor:
    """An n-dimensional float array with an optional gradient."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype, order="C")
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None and not isinstance(x, np.ndarray):
        dtype = DEFAULT_DTYPE
    return Tensor(np.asarray(x), dtype=dtype)


def _const(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _record(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    if _State.check_finite and not np.isfinite(data).all():
        raise NumericError(f"{op}: non-finite value in output of shape {data.shape}")
    out = Tensor(data, dtype=data.dtype)
    if _State.grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape = current_tape()
        node = _Node(op, tuple(inputs), out, backward, tape)
        out._node = node
        tape.nodes.append(node)
    return out


def custom_op(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Register a fused op defined outside this module.

    ``backward(grad_out)`` must return one gradient (or None) per input.
    """
    return _record(op, data, inputs, backward)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# --- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _const(a, b)
    b = _const(b, a)
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _const(a, b)
    b = _const(b, a)
    _broadcast_shape("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record("sub", a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _const(a, b)
    b = _const(b, a)
    _broadcast_shape("mul", a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _record("mul", a.data * b.data, (a, b), backward)


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    return _record("exp", y, (x,), lambda g: (g * y,))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * v) + 1.0)


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)

    def backward(g):
        return (g * (s * (1.0 + x.data * (1.0 - s))),)

    return _record("silu", x.data * s, (x,), backward)


def softplus(x: Tensor) -> Tensor:
    v = x.data
    y = np.maximum(v, 0) + np.log1p(np.exp(-np.abs(v)))
    return _record("softplus", y, (x,), lambda g: (g * _sigmoid(x.data),))


def abs(x: Tensor) -> Tensor:  # noqa: A001
    return _record("abs", np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def sqrt(x: Tensor) -> Tensor:
    if (x.data < 0).any():
        raise NumericError("sqrt: negative input")
    y = np.sqrt(x.data)

    def backward(g):
        # subgradient 0 at the origin keeps ||0|| differentiable in practice
        safe = np.where(y > 0, y, 1.0)
        return (np.where(y > 0, g / (2.0 * safe), 0.0).astype(y.dtype),)

    return _record("sqrt", y, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _record("softmax", s, (x,), backward)


# --- reductions and layout ----------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, x.ndim)
    y = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record("sum", np.asarray(y), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    y = x.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).astype(x.dtype),)

    return _record("mean", np.asarray(y, dtype=x.dtype), (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {shape}") from None
    return _record("reshape", y, (x,), lambda g: (g.reshape(x.shape),))


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute: axes {axes} invalid for shape {x.shape}")
    inv = tuple(np.argsort(axes))
    y = np.ascontiguousarray(x.data.transpose(axes))
    return _record("permute", y, (x,), lambda g: (g.transpose(inv),))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = list(xs)
    ref = xs[0]
    ax = axis % ref.ndim
    for t in xs[1:]:
        if t.ndim != ref.ndim or any(t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax):
            raise ShapeError(f"concat: shape {t.shape} incompatible with {ref.shape} along axis {axis}")
    y = np.concatenate([t.data for t in xs], axis=ax)
    splits = np.cumsum([t.shape[ax] for t in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=ax))

    return _record("concat", y, xs, backward)


def getitem(x: Tensor, idx) -> Tensor:
    y = np.ascontiguousarray(x.data[idx])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[idx] += g
        return (gx,)

    return _record("getitem", y, (x,), backward)


def take(x: Tensor, indices, axis: int) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    ax = axis % x.ndim
    y = np.take(x.data, idx, axis=ax)

    def backward(g):
        gx = np.zeros_like(x.data)
        gm = np.moveaxis(gx, ax, 0)
        flat_idx = idx.reshape(-1)
        gsrc = np.moveaxis(g, tuple(range(ax, ax + idx.ndim)), tuple(range(idx.ndim)))
        gsrc = gsrc.reshape((flat_idx.size,) + gm.shape[1:])
        order = np.argsort(flat_idx, kind="stable")
        sorted_idx = flat_idx[order]
        starts = np.flatnonzero(np.r_[True, sorted_idx[1:] != sorted_idx[:-1]])
        if starts.size == flat_idx.size:
            gm[flat_idx] = gsrc
        else:
            # segment sums are much faster than np.add.at for repeated gathers
            gm[sorted_idx[starts]] = np.add.reduceat(gsrc[order], starts, axis=0)
        return (gx,)

    return _record("take", y, (x,), backward)


# --- linear algebra and convolution ---------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or (b.ndim > 2 and b.ndim != a.ndim):
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    y = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _record("matmul", y, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``; ``w`` is stored (in, out)."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0] or (b is not None and b.shape != (w.shape[1],)):
        bshape = None if b is None else b.shape
        raise ShapeError(f"linear: x {x.shape}, w {w.shape}, b {bshape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[0])
    y = x2 @ w.data
    if b is not None:
        y = y + b.data
    inputs = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _record("linear", y.reshape(lead + (w.shape[1],)), inputs, backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int | None = None) -> Tensor:
    """Zero-padded 2-D cross-correlation, NHWC input, weight (k, k, Cin, Cout)."""
    if x.ndim != 4 or w.ndim != 4 or w.shape[0] != w.shape[1] or x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv2d: x {x.shape} incompatible with w {w.shape}")
    k, s = w.shape[0], int(stride)
    p = ((k - 1) // 2 if s == 1 else 0) if padding is None else int(padding)
    B, H, W, _ = x.shape
    Ho, Wo = (H + 2 * p - k) // s + 1, (W + 2 * p - k) // s + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d: input {x.shape} too small for kernel {k} stride {s}")
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0))) if p else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))[:, : (Ho - 1) * s + 1 : s, : (Wo - 1) * s + 1 : s]
    y = np.tensordot(win, w.data, axes=([4, 5, 3], [0, 1, 2]))
    if b is not None:
        y = y + b.data
    inputs = (x, w) if b is None else (x, w, b)

    def backward(g):
        gw = np.tensordot(win, g, axes=([0, 1, 2], [0, 1, 2])).transpose(1, 2, 0, 3) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, i : i + (Ho - 1) * s + 1 : s, j : j + (Wo - 1) * s + 1 : s] += g @ w.data[i, j].T
            gx = gxp[:, p : p + H, p : p + W] if p else gxp
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 1, 2))

    return _record("conv2d", np.ascontiguousarray(y), inputs, backward)


def depthwise_conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Per-channel k x k correlation, stride 1, size preserving; weight (k, k, C)."""
    if x.ndim != 4 or w.ndim != 3 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0 or x.shape[3] != w.shape[2]:
        raise ShapeError(f"depthwise_conv2d: x {x.shape} incompatible with w {w.shape}")
    k = w.shape[0]
    p = (k - 1) // 2
    B, H, W, C = x.shape
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0)))
    y = np.zeros_like(x.data)
    for i in range(k):
        for j in range(k):
            y += xp[:, i : i + H, j : j + W] * w.data[i, j]
    if b is not None:
        y += b.data
    inputs = (x, w) if b is None else (x, w, b)

    def backward(g):
        gw = np.empty_like(w.data)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gw[i, j] = (xp[:, i : i + H, j : j + W] * g).sum(axis=(0, 1, 2))
                gxp[:, i : i + H, j : j + W] += g * w.data[i, j]
        gx = gxp[:, p : p + H, p : p + W]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 1, 2))

    return _record("depthwise_conv2d", y, inputs, backward)


def layer_norm(x: Tensor, weight: Tensor | None = None, bias: Tensor | None = None, eps: float = LAYER_NORM_EPS) -> Tensor:
    C = x.shape[-1]
    for t in (weight, bias):
        if t is not None and t.shape != (C,):
            raise ShapeError(f"layer_norm: affine shape {t.shape} does not match last axis of {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    y = xhat
    if weight is not None:
        y = y * weight.data
    if bias is not None:
        y = y + bias.data
    inputs = [x] + [t for t in (weight, bias) if t is not None]
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        gxhat = g * weight.data if weight is not None else g
        gx = rstd * (gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        if weight is not None:
            grads.append((g * xhat).sum(axis=lead))
        if bias is not None:
            grads.append(g.sum(axis=lead))
        return tuple(grads)

    return _record("layer_norm", np.asarray(y, dtype=x.dtype), inputs, backward)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout: a seeded generator is required in training mode")
    keep = rng.random(x.shape) >= rate
    scale = np.where(keep, 1.0 / (1.0 - rate), 0.0).astype(x.dtype)
    return mul(x, Tensor(scale))


# --- gradients ---------------------------------------------------------------------

def backward(loss: Tensor, params: Sequence[Tensor] = ()) -> None:
    """Populate ``.grad`` on every leaf reachable from ``loss``.

    Leaves listed in ``params`` that the loss does not depend on receive
    zero gradients. Gradients accumulate into existing ``.grad`` arrays.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    node = loss._node
    if node is None:
        raise RuntimeError("backward: loss is not connected to any tensor requiring grad")
    tape = node.tape
    if tape.consumed:
        raise RuntimeError("backward: graph already consumed; recompute the forward pass")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for n in reversed(tape.nodes):
        g = grads.pop(n.output_id, None)
        if g is None:
            continue
        for t, gi in zip(n.inputs, n.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            if t._node is None:
                if t.grad is None:
                    t.grad = np.array(gi, dtype=t.dtype, copy=True)
                else:
                    t.grad += gi
            else:
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
    tape.consumed = True
    tape.nodes = []
    for p in params:
        if p.requires_grad and p.grad is None:
            p.grad = np.zeros_like(p.data)


def grad_check(f: Callable[..., Tensor], x, step: float = 1e-4, max_coords: int | None = None, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``x`` is one tensor or a sequence of tensors (64-bit, requires_grad);
    ``f`` receives them positionally and must return a scalar tensor. With
    ``max_coords`` only a seeded random subset of coordinates per tensor is
    probed. The per-coordinate error is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        if t.dtype != np.float64:
            raise TypeError("grad_check requires 64-bit tensors")
        t.requires_grad = True
        t.grad = None
    reset_tape()
    loss = f(*xs)
    backward(loss, xs)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in xs:
        analytic = t.grad.copy()
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, max_coords, replace=False))
        for c in coords:
            orig = flat[c]
            with no_grad():
                flat[c] = orig + step
                fp = float(f(*xs).data)
                flat[c] = orig - step
                fm = float(f(*xs).data)
            flat[c] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError("grad_check: non-finite function value")
            num = (fp - fm) / (2.0 * step)
            ana = float(analytic.reshape(-1)[c])
            err = np.abs(ana - num) / max(np.abs(ana), np.abs(num), 1e-8)
            worst = max(worst, float(err))
    return worst
