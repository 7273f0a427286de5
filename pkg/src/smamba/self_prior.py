"""Training-time brightness-block occlusion inside a central region of interest."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

BLOCK = 5


@dataclass(frozen=True)
class ROISpec:
    origin_y: int
    origin_x: int
    height: int
    width: int

    def validate(self, image_h: int, image_w: int, block: int = BLOCK) -> None:
        if self.origin_y < 0 or self.origin_x < 0:
            raise ValueError(f"ROI origin must be non-negative: {self}")
        if self.origin_y + self.height > image_h or self.origin_x + self.width > image_w:
            raise ValueError(f"ROI {self} exceeds image {image_h}x{image_w}")
        if self.height < block or self.width < block:
            raise ValueError(f"ROI {self} cannot hold a {block}x{block} block")


@dataclass(frozen=True)
class PerturbRecord:
    block_y: int
    block_x: int
    brightness: float
    applied: bool

    def as_dict(self) -> dict:
        return asdict(self)


def default_roi(height: int, width: int | None = None) -> ROISpec:
    """Central half of the image: origin at extents // 4, size extents // 2."""
    width = height if width is None else width
    if height < 10 or width < 10:
        raise ValueError(f"image {height}x{width} too small for a self-prior ROI (need >= 10)")
    return ROISpec(height // 4, width // 4, height // 2, width // 2)


def perturb(image: np.ndarray, roi: ROISpec, rng: np.random.Generator, training: bool,
            block: int = BLOCK, mode: str = "replace", prob: float = 1.0) -> tuple[np.ndarray, PerturbRecord]:
    """Return a perturbed copy of ``image`` (H, W, 1) and what was done to it.

    In training, a ``block`` x ``block`` square with top-left drawn uniformly
    from the admissible positions inside ``roi`` is set to one brightness
    value drawn from U[0, 1] (``mode="add"`` offsets instead, then clips).
    Evaluation returns the input unchanged.
    """
    H, W = image.shape[:2]
    roi.validate(H, W, block)
    if not training:
        return image, PerturbRecord(-1, -1, 0.0, False)
    if mode not in ("replace", "add"):
        raise ValueError(f"unknown perturb mode {mode!r}")
    if prob < 1.0 and rng.random() >= prob:
        return image.copy(), PerturbRecord(-1, -1, 0.0, False)
    by = roi.origin_y + int(rng.integers(0, roi.height - block + 1))
    bx = roi.origin_x + int(rng.integers(0, roi.width - block + 1))
    value = float(rng.random())
    out = image.copy()
    if mode == "replace":
        out[by:by + block, bx:bx + block] = value
    else:
        out[by:by + block, bx:bx + block] = np.clip(out[by:by + block, bx:bx + block] + value, 0.0, 1.0)
    return out, PerturbRecord(by, bx, value, True)
