"""Four-direction 2-D selective scan with learned softmax fusion.

A feature grid (B, H, W, C) is linearized four ways:

* direction 0: row-major (left to right, top to bottom)
* direction 1: direction 0 reversed
* direction 2: column-major (top to bottom, left to right)
* direction 3: direction 2 reversed

For the 2x2 grid ``[[1, 2], [3, 4]]`` this gives ``[1,2,3,4]``, ``[4,3,2,1]``,
``[1,3,2,4]`` and ``[4,2,3,1]``. Each sequence is scanned, mapped back to
grid order, and the four grids are blended with ``softmax(logits)``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .ssm import SSMParams, selective_scan
from .tensor import Tensor

N_DIRECTIONS = 4


def traversal_orders(height: int, width: int) -> np.ndarray:
    """(4, H*W) array; row ``i`` lists the row-major grid positions visited by direction ``i``."""
    if height < 1 or width < 1:
        raise ShapeError(f"grid extents must be >= 1, got {height}x{width}")
    grid = np.arange(height * width).reshape(height, width)
    row = grid.reshape(-1)
    col = grid.T.reshape(-1)
    return np.stack([row, row[::-1], col, col[::-1]])


def inverse_orders(orders: np.ndarray) -> np.ndarray:
    inv = np.empty_like(orders)
    for i, perm in enumerate(orders):
        inv[i, perm] = np.arange(perm.size)
    return inv


def scan_expand(grid: Tensor) -> Tensor:
    """(B, H, W, C) grid -> (4, B, L, C) directional sequences, L = H*W."""
    if grid.ndim != 4:
        raise ShapeError(f"scan_expand: expected (B, H, W, C), got {grid.shape}")
    B, H, W, C = grid.shape
    flat = T.reshape(grid, (B, H * W, C))
    seqs = T.take(flat, traversal_orders(H, W), axis=1)  # (B, 4, L, C)
    return T.permute(seqs, (1, 0, 2, 3))


def scan_merge(ys: Tensor | Sequence[Tensor], logits: Tensor, height: int, width: int) -> Tensor:
    """Re-index four (B, L, C) scan outputs to grid order and blend them.

    ``ys`` is a (4, B, L, C) tensor or a sequence of four (B, L, C) tensors.
    """
    if isinstance(ys, Tensor):
        if ys.ndim != 4 or ys.shape[0] != N_DIRECTIONS:
            raise ShapeError(f"scan_merge: expected (4, B, L, C), got {ys.shape}")
        parts = [T.getitem(ys, i) for i in range(N_DIRECTIONS)]
    else:
        parts = list(ys)
        if len(parts) != N_DIRECTIONS or any(p.shape != parts[0].shape for p in parts):
            raise ShapeError(f"scan_merge: need four equal-shape outputs, got {[p.shape for p in parts]}")
    B, L, C = parts[0].shape
    if L != height * width:
        raise ShapeError(f"scan_merge: sequence length {L} does not match grid {height}x{width}")
    if logits.shape != (N_DIRECTIONS,):
        raise ShapeError(f"scan_merge: logits must have shape (4,), got {logits.shape}")
    inv = inverse_orders(traversal_orders(height, width))
    w = T.softmax(logits, axis=0)
    out = None
    for i, y in enumerate(parts):
        term = T.mul(T.take(y, inv[i], axis=1), T.getitem(w, slice(i, i + 1)))
        out = term if out is None else T.add(out, term)
    return T.reshape(out, (B, height, width, C))


def iss2d_forward(grid: Tensor, params: SSMParams | Sequence[SSMParams], logits: Tensor,
                  chunk: int | None = None, use_d_skip: bool = True) -> Tensor:
    """Expand, scan each direction, merge. Output shape equals input shape.

    One shared ``SSMParams`` scans all four directions in a single batched
    call; a sequence of four gives each direction its own parameters.
    """
    B, H, W, C = grid.shape
    seqs = scan_expand(grid)
    if isinstance(params, SSMParams):
        ys = selective_scan(T.reshape(seqs, (N_DIRECTIONS * B, H * W, C)), params, chunk, use_d_skip)
        ys = T.reshape(ys, (N_DIRECTIONS, B, H * W, C))
    else:
        if len(params) != N_DIRECTIONS:
            raise ShapeError("iss2d_forward: per-direction mode needs exactly four parameter sets")
        ys = [selective_scan(T.getitem(seqs, i), p, chunk, use_d_skip) for i, p in enumerate(params)]
    return scan_merge(ys, logits, H, W)
