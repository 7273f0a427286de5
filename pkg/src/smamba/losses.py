"""Training objectives: pixel L1, a feature-space loss, and their weighted sum."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from . import srt
from . import tensor as T
from .errors import DataError, ShapeError
from .tensor import Tensor

EXTRACTOR_CHANNELS = (8, 16, 32, 64)


def _check_pair(sr: Tensor, hr) -> Tensor:
    hr_t = hr if isinstance(hr, Tensor) else Tensor(np.asarray(hr), dtype=sr.dtype)
    if sr.shape != hr_t.shape:
        raise ShapeError(f"loss: prediction {sr.shape} vs target {hr_t.shape}")
    return hr_t


def l1_loss(sr: Tensor, hr) -> Tensor:
    """Mean absolute difference over every element of the batch."""
    hr_t = _check_pair(sr, hr)
    return T.mean(T.abs(T.sub(sr, hr_t)))


class FeatureExtractor:
    """Frozen stack of stride-2 3x3 convolutions with SiLU, ending at 1/16 resolution.

    Weights are seeded-random by default. ``from_weight_pack`` loads an SRT
    file holding the records ``w0, b0, w1, b1, ...`` back to back, with
    ``w_i`` shaped (3, 3, Cin, Cout).
    """

    def __init__(self, weights: list[tuple[np.ndarray, np.ndarray]], dtype=np.float32):
        if not weights:
            raise ValueError("feature extractor needs at least one layer")
        cin = 1
        for i, (w, b) in enumerate(weights):
            if w.ndim != 4 or w.shape[:2] != (3, 3) or w.shape[2] != cin or b.shape != (w.shape[3],):
                raise ShapeError(f"extractor layer {i}: weight {w.shape}, bias {b.shape} (expected 3x3x{cin}xC)")
            cin = w.shape[3]
        self.dtype = np.dtype(dtype)
        self.layers = [(Tensor(w, dtype=dtype), Tensor(b, dtype=dtype)) for w, b in weights]
        self.calls = 0

    @classmethod
    def seeded(cls, seed: int = 0, channels=EXTRACTOR_CHANNELS, dtype=np.float32) -> "FeatureExtractor":
        rng = np.random.default_rng([seed, 0x5EA7])
        weights, cin = [], 1
        for cout in channels:
            # He-style scale keeps activations from collapsing through the stack
            w = rng.normal(0.0, np.sqrt(2.0 / (9 * cin)), size=(3, 3, cin, cout))
            weights.append((w, np.zeros(cout)))
            cin = cout
        return cls(weights, dtype)

    @classmethod
    def from_weight_pack(cls, path, dtype=np.float32) -> "FeatureExtractor":
        path = Path(path)
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise DataError(f"cannot read weight pack {path}: {exc}") from exc
        stream, arrays = io.BytesIO(raw), []
        while stream.tell() < len(raw):
            arrays.append(srt.read_from(stream))
        if not arrays or len(arrays) % 2:
            raise DataError(f"{path}: weight pack must hold (weight, bias) pairs, found {len(arrays)} records")
        return cls([(arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2)], dtype)

    @property
    def downsample(self) -> int:
        return 2 ** len(self.layers)

    def __call__(self, x: Tensor) -> Tensor:
        """(B, H, W, 1) -> (B, H/2^k, W/2^k, C_k); gradients flow to ``x`` only."""
        f = self.downsample
        if x.ndim != 4 or x.shape[1] % f or x.shape[2] % f:
            raise ShapeError(f"feature extractor: input {x.shape} needs extents divisible by {f}")
        self.calls += 1
        for w, b in self.layers:
            x = T.silu(T.conv2d(x, w, b, stride=2, padding=1))
        return x


def perceptual_loss(sr: Tensor, hr, phi: FeatureExtractor) -> Tensor:
    """``sqrt(sum_i ||phi(sr_i) - phi(hr_i)||^2 / M) / n`` for a batch of ``n`` images.

    ``M`` is the number of feature elements per image, which keeps the value
    independent of resolution.
    """
    hr_t = _check_pair(sr, hr)
    n = sr.shape[0]
    with T.no_grad():
        f_hr = phi(Tensor(hr_t.data))
    f_sr = phi(sr)
    per_image = int(np.prod(f_sr.shape[1:]))
    diff = T.sub(f_sr, f_hr)
    return T.mul(T.sqrt(T.mul(T.sum(T.mul(diff, diff)), 1.0 / per_image)), 1.0 / n)


def total_loss(sr: Tensor, hr, beta: float, phi: FeatureExtractor | None = None):
    """Return ``(total, l1, perceptual)``; ``beta == 0`` never touches ``phi``."""
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    l1 = l1_loss(sr, hr)
    if beta == 0:
        return l1, l1, None
    if phi is None:
        raise ValueError("a feature extractor is required when beta > 0")
    perc = perceptual_loss(sr, hr, phi)
    return T.add(l1, T.mul(perc, beta)), l1, perc
