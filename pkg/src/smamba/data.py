"""Slices, degradation, synthetic phantoms, bicubic baseline and file I/O."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import srt
from .errors import DataError, ShapeError

CATMULL_ROM_A = -0.5
MANIFEST_VERSION = 1


@dataclass
class SlicePair:
    hr: np.ndarray  # (H, W, 1) in [0, 1]
    lr: np.ndarray  # (H/s, W/s, 1) in [0, 1]
    scale: int
    norm_max: float = 1.0

    def __post_init__(self):
        H, W = self.hr.shape[:2]
        if self.lr.shape[0] * self.scale != H or self.lr.shape[1] * self.scale != W:
            raise ShapeError(f"slice pair: hr {self.hr.shape} and lr {self.lr.shape} disagree with scale {self.scale}")


def _as_hw1(img) -> np.ndarray:
    a = np.asarray(img)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] != 1:
        raise ShapeError(f"expected a single-channel (H, W) or (H, W, 1) image, got {a.shape}")
    return a


# --- k-space degradation ------------------------------------------------------------

def kspace_crop_slices(H: int, W: int, scale: int) -> tuple[slice, slice]:
    """Index window of the retained low frequencies in an fftshift-ed spectrum."""
    h, w = H // scale, W // scale
    y0, x0 = H // 2 - h // 2, W // 2 - w // 2
    return slice(y0, y0 + h), slice(x0, x0 + w)


def degrade_kspace(hr, scale: int, kspace_noise_std: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
    """Low-resolution image by central k-space truncation.

    The DC-centred (H/s x W/s) block of the 2-D spectrum is kept, inverse
    transformed, the real part taken and scaled by 1/s^2 so that a constant
    image keeps its value; the result is clipped to [0, 1].
    """
    img = _as_hw1(hr)
    H, W = img.shape[:2]
    if scale < 1 or H % scale or W % scale:
        raise ShapeError(f"degrade_kspace: extents {H}x{W} not divisible by scale {scale}")
    spec = np.fft.fftshift(np.fft.fft2(img[:, :, 0].astype(np.float64)))
    sy, sx = kspace_crop_slices(H, W, scale)
    crop = spec[sy, sx]
    if kspace_noise_std > 0:
        if rng is None:
            raise ValueError("kspace noise requires a seeded generator")
        crop = crop + kspace_noise_std * np.sqrt(H * W) * (rng.normal(size=crop.shape) + 1j * rng.normal(size=crop.shape))
    lr = np.fft.ifft2(np.fft.ifftshift(crop)).real / (scale * scale)
    return np.clip(lr, 0.0, 1.0)[:, :, None].astype(img.dtype if img.dtype.kind == "f" else np.float64)


def fourier_upsample(lr, scale: int) -> np.ndarray:
    """Zero-padded spectrum interpolation; exact inverse of the crop for band-limited images."""
    img = _as_hw1(lr)[:, :, 0].astype(np.float64)
    h, w = img.shape
    H, W = h * scale, w * scale
    spec = np.zeros((H, W), dtype=np.complex128)
    sy, sx = kspace_crop_slices(H, W, scale)
    spec[sy, sx] = np.fft.fftshift(np.fft.fft2(img))
    return (np.fft.ifft2(np.fft.ifftshift(spec)).real * scale * scale)[:, :, None]


# --- bicubic ----------------------------------------------------------------------------

def cubic_kernel(x, a: float = CATMULL_ROM_A):
    x = np.abs(np.asarray(x, dtype=np.float64))
    near = ((a + 2) * x - (a + 3)) * x * x + 1
    far = ((a * x - 5 * a) * x + 8 * a) * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def bicubic_matrix(n_in: int, scale: int) -> np.ndarray:
    """(n_in*scale, n_in) interpolation matrix, edge-clamped.

    Output sample ``i`` sits at input coordinate ``i / s``, the same sampling
    grid the k-space crop produces (LR pixel ``k`` is HR pixel ``s*k``). For
    s = 2 the two phases use taps (-1, 0, +1, +2) with weights
    ``[0, 1, 0, 0]`` (t = 0) and ``[-0.0625, 0.5625, 0.5625, -0.0625]``
    (t = 1/2); for s = 4 the t = 1/4 phase is
    ``[-0.0703125, 0.8671875, 0.2265625, -0.0234375]`` and t = 3/4 its mirror.
    Every weight is a dyadic rational, exact in binary floating point.
    """
    n_out = n_in * scale
    src = np.arange(n_out) / scale
    base = np.floor(src).astype(int)
    t = src - base
    m = np.zeros((n_out, n_in))
    for off in (-1, 0, 1, 2):
        wts = cubic_kernel(t - off)
        idx = np.clip(base + off, 0, n_in - 1)
        np.add.at(m, (np.arange(n_out), idx), wts)
    return m


def bicubic_upscale(lr, scale: int) -> np.ndarray:
    """Catmull-Rom (a = -0.5) upscaling of (h, w, 1) or batched (B, h, w, 1) images."""
    if scale not in (2, 4):
        raise ValueError(f"bicubic_upscale: scale must be 2 or 4, got {scale}")
    a = np.asarray(lr)
    batched = a.ndim == 4
    if not batched:
        a = _as_hw1(a)[None]
    h, w = a.shape[1:3]
    my = bicubic_matrix(h, scale).astype(a.dtype)
    mx = bicubic_matrix(w, scale).astype(a.dtype)
    out = np.einsum("yi,bijc->byjc", my, a)
    out = np.einsum("xj,byjc->byxc", mx, out)
    return out if batched else out[0]


# --- synthetic phantoms -----------------------------------------------------------------

def _ellipse_mask(yy, xx, cy, cx, ry, rx, theta):
    c, s = np.cos(theta), np.sin(theta)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _phantom(size: int, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    coords = (np.arange(size) + 0.5) / size * 2 - 1
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    img = np.zeros((size, size))
    n_ell = int(rng.integers(2, 6))
    cy, cx = rng.uniform(-0.05, 0.05, size=2)
    ry, rx = rng.uniform(0.6, 0.8), rng.uniform(0.5, 0.75)
    theta = rng.uniform(-0.3, 0.3)
    levels: list[float] = []
    head = None
    for k in range(n_ell):
        while True:
            val = rng.uniform(0.25, 1.0)
            if all(abs(val - v) >= 0.1 for v in levels):
                break
        levels.append(val)
        mask = _ellipse_mask(yy, xx, cy, cx, ry, rx, theta)
        if head is None:
            head = mask
        img[mask] = val
        # next ellipse nested inside this one
        shrink = rng.uniform(0.35, 0.7)
        jy, jx = rng.uniform(-0.5, 0.5, size=2) * (1 - shrink)
        cy, cx = cy + jy * ry, cx + jx * rx
        ry, rx = ry * shrink, rx * shrink
        theta = rng.uniform(-np.pi / 2, np.pi / 2)
    # band-limited texture inside the head
    kmax = max(2, size // 8)
    spec = np.zeros((size, size), dtype=np.complex128)
    fy, fx = np.meshgrid(np.fft.fftfreq(size) * size, np.fft.fftfreq(size) * size, indexing="ij")
    band = (np.abs(fy) <= kmax) & (np.abs(fx) <= kmax) & ((fy != 0) | (fx != 0))
    spec[band] = rng.normal(size=band.sum()) + 1j * rng.normal(size=band.sum())
    tex = np.fft.ifft2(spec).real
    tex = tex / (np.abs(tex).max() + 1e-12)
    img = img + 0.06 * tex * head
    # mild smooth bias field
    g = rng.uniform(-0.1, 0.1, size=3)
    img = img * (1.0 + g[0] * yy + g[1] * xx + g[2] * xx * yy)
    img = np.clip(img, 0.0, None)
    peak = float(img.max())
    return img / peak, peak


def phantom_generate(count: int, size: int, seed: int) -> list[tuple[np.ndarray, float]]:
    """``count`` float32 (size, size, 1) phantoms in [0, 1] with their pre-normalization peak."""
    if size % 16:
        raise ShapeError(f"phantom size must be divisible by 16, got {size}")
    out = []
    for i in range(count):
        img, peak = _phantom(size, np.random.default_rng([seed, i]))
        out.append((img[:, :, None].astype(np.float32), peak))
    return out


# --- PGM ------------------------------------------------------------------------------

def write_pgm(path, img, maxval: int = 65535) -> None:
    """Binary P5 PGM; intensities in [0, 1] are scaled to ``maxval`` (16-bit big-endian)."""
    a = _as_hw1(img)[:, :, 0]
    q = np.round(np.clip(a, 0.0, 1.0) * maxval)
    dt = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as f:
        f.write(f"P5\n{a.shape[1]} {a.shape[0]}\n{maxval}\n".encode("ascii"))
        f.write(q.astype(dt).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    dt = ">u2" if maxval > 255 else "u1"
    data = np.frombuffer(raw[pos + 1:], dtype=dt, count=w * h)
    return (data.reshape(h, w).astype(np.float64) / maxval)[:, :, None]


# --- manifest -------------------------------------------------------------------------------

@dataclass
class DatasetManifest:
    """Ordered slice list with split tags; paths are relative to the manifest's directory."""

    slices: list[dict]
    scale: int | None = None
    root: Path = Path(".")

    def __post_init__(self):
        seen: dict[str, str] = {}
        for s in self.slices:
            if s["split"] not in ("train", "test"):
                raise DataError(f"unknown split tag {s['split']!r}")
            prev = seen.setdefault(s["hr"], s["split"])
            if prev != s["split"]:
                raise DataError(f"{s['hr']} appears in both train and test splits")

    def split(self, tag: str) -> list[dict]:
        return [s for s in self.slices if s["split"] == tag]

    def to_json(self) -> str:
        body = {"version": MANIFEST_VERSION, "scale": self.scale, "slices": self.slices}
        return json.dumps(body, sort_keys=True, indent=2) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            body = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
        if body.get("version") != MANIFEST_VERSION:
            raise DataError(f"{path}: unsupported manifest version {body.get('version')}")
        return cls(slices=body["slices"], scale=body.get("scale"), root=path.parent)

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def load_pair(self, entry: dict, scale: int | None = None) -> SlicePair:
        scale = scale or self.scale
        if scale is None:
            raise DataError("manifest has no scale; run `degrade` or pass one")
        hr_path = self.resolve(entry["hr"])
        if not hr_path.exists():
            raise DataError(f"missing slice file {hr_path}")
        hr = srt.load(hr_path)
        lr_rel = entry.get("lr")
        if lr_rel and scale == self.scale:
            lr = srt.load(self.resolve(lr_rel))
        else:
            lr = degrade_kspace(hr, scale)
        return SlicePair(hr=hr, lr=lr, scale=scale, norm_max=float(entry.get("norm_max", 1.0)))


def write_phantom_dataset(out_dir, count: int, size: int, seed: int, n_test: int = 0) -> DatasetManifest:
    """Generate phantoms as SRT files plus ``manifest.json``; the last ``n_test`` are tagged test."""
    out = Path(out_dir)
    (out / "hr").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (img, peak) in enumerate(phantom_generate(count, size, seed)):
        rel = f"hr/slice_{i:04d}.srt"
        srt.save(out / rel, img)
        entries.append({
            "name": f"slice_{i:04d}",
            "hr": rel,
            "lr": None,
            "norm_max": peak,
            "split": "test" if i >= count - n_test else "train",
        })
    manifest = DatasetManifest(slices=entries, scale=None, root=out)
    manifest.save(out / "manifest.json")
    return manifest


def degrade_dataset(manifest_path, scale: int) -> DatasetManifest:
    """Write LR slices for ``scale`` next to the HR files and record them in the manifest."""
    m = DatasetManifest.load(manifest_path)
    lr_dir = m.root / f"lr_x{scale}"
    lr_dir.mkdir(exist_ok=True)
    for s in m.slices:
        hr = srt.load(m.resolve(s["hr"]))
        rel = f"lr_x{scale}/{Path(s['hr']).name}"
        srt.save(m.root / rel, degrade_kspace(hr, scale))
        s["lr"] = rel
    m.scale = scale
    m.save(manifest_path)
    return m


def import_srt_directory(src_dir, out_dir, n_test: int = 0) -> DatasetManifest:
    """Build a manifest over an existing directory of HR ``.srt`` slices (sorted by name)."""
    src = Path(src_dir)
    files = sorted(p for p in src.iterdir() if p.suffix == ".srt")
    if not files:
        raise DataError(f"no .srt files in {src}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, p in enumerate(files):
        entries.append({
            "name": p.stem,
            "hr": os.path.relpath(p, out),
            "lr": None,
            "norm_max": 1.0,
            "split": "test" if i >= len(files) - n_test else "train",
        })
    m = DatasetManifest(slices=entries, root=out)
    m.save(out / "manifest.json")
    return m
