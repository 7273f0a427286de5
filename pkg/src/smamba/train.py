"""Configuration, the training loop and held-out evaluation."""

from __future__ import annotations

import contextlib
import csv
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import model as M
from . import tensor as T
from .data import DatasetManifest, SlicePair, bicubic_upscale, write_pgm
from .errors import DataError, NumericError, ShapeError
from .losses import FeatureExtractor, total_loss
from .metrics import psnr, ssim
from .optim import AdamState, adam_step
from .self_prior import BLOCK, default_roi, perturb

THREADS_ENV = "SMAMBA_THREADS"
FINAL_CHECKPOINT = "final.smck"


@dataclass
class PerturbConfig:
    prob: float = 1.0
    mode: str = "replace"  # "replace" | "add"
    block: int = BLOCK


@dataclass
class TrainConfig:
    unet: M.UNetConfig = field(default_factory=M.UNetConfig)
    lr: float = 1e-4
    beta: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 4
    steps: int = 1000
    seed: int = 0
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    manifest: str = ""
    out_dir: str = "run"
    checkpoint_every: int = 0  # 0: final checkpoint only
    deterministic: bool = True
    extractor_seed: int = 0
    extractor_weights: str | None = None
    dtype: str = "float32"

    def validate(self) -> None:
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")
        if self.steps < 1 or self.batch_size < 1 or self.checkpoint_every < 0:
            raise ValueError("steps and batch_size must be >= 1, checkpoint_every >= 0")
        if not 0.0 <= self.perturb.prob <= 1.0 or self.perturb.mode not in ("replace", "add"):
            raise ValueError(f"invalid perturb settings {self.perturb}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["unet"] = self.unet.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        if "unet" in d:
            d["unet"] = M.UNetConfig.from_dict(d["unet"])
        if "perturb" in d:
            d["perturb"] = PerturbConfig(**d["perturb"])
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc


def parse_value(text: str):
    """JSON literal if it parses (numbers, booleans, null, lists), otherwise the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(base: dict, pairs: list[tuple[str, str]]) -> dict:
    """Set dotted keys (``unet.scale``, ``perturb.mode``, ``lr``) on a config dict copy."""
    out = json.loads(json.dumps(base))
    for key, text in pairs:
        parts = key.replace("-", "_").split(".")
        node = out
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ValueError(f"unknown config section {p!r} in --{key}")
            node = node[p]
        if parts[-1] not in node:
            raise ValueError(f"unknown config key --{key}")
        node[parts[-1]] = parse_value(text)
    return out


@contextlib.contextmanager
def thread_limits(deterministic: bool):
    """Deterministic runs pin BLAS to one thread; otherwise ``SMAMBA_THREADS`` caps it."""
    env = os.environ.get(THREADS_ENV)
    limit = 1 if deterministic else (int(env) if env else None)
    if limit is None:
        yield
        return
    with threadpool_limits(limits=limit):
        yield


def _stack(arrays, dtype) -> np.ndarray:
    return np.stack(arrays).astype(dtype, copy=False)


def _preflight(cfg: TrainConfig) -> tuple[list[SlicePair], DatasetManifest]:
    cfg.validate()
    if not cfg.manifest:
        raise DataError("no dataset manifest configured")
    manifest = DatasetManifest.load(cfg.manifest)
    if manifest.scale is not None and manifest.scale != cfg.unet.scale:
        raise DataError(f"manifest scale {manifest.scale} differs from model scale {cfg.unet.scale}")
    entries = manifest.split("train")
    if not entries:
        raise DataError(f"{cfg.manifest}: no training slices")
    pairs = [manifest.load_pair(e, cfg.unet.scale) for e in entries]
    shapes = {p.lr.shape for p in pairs}
    if len(shapes) != 1:
        raise DataError(f"training slices have mixed LR shapes {sorted(shapes)}")
    lr_shape = shapes.pop()
    try:
        M.check_input((1,) + lr_shape, cfg.unet)
    except ShapeError as exc:
        raise DataError(str(exc)) from exc
    if cfg.unet.use_self_prior:
        roi = default_roi(lr_shape[0], lr_shape[1])
        roi.validate(lr_shape[0], lr_shape[1], cfg.perturb.block)
    return pairs, manifest


def _extractor(cfg: TrainConfig, dtype) -> FeatureExtractor | None:
    if cfg.beta == 0:
        return None
    if cfg.extractor_weights:
        return FeatureExtractor.from_weight_pack(cfg.extractor_weights, dtype)
    return FeatureExtractor.seeded(cfg.extractor_seed, dtype=dtype)


def dataset_l1(P, unet: M.UNetConfig, lr: np.ndarray, hr: np.ndarray, batch: int = 8) -> float:
    """Mean inference-mode L1 over a stacked dataset (no perturbation, no dropout)."""
    total = 0.0
    with T.no_grad():
        for i in range(0, len(lr), batch):
            sr = M.forward(lr[i:i + batch], P, unet, training=False).data
            total += float(np.abs(sr.astype(np.float64) - hr[i:i + batch]).sum())
    return total / hr.size


@dataclass
class TrainResult:
    out_dir: Path
    checkpoint: Path
    steps: int
    initial_train_l1: float
    final_train_l1: float
    log_path: Path


def train(cfg: TrainConfig, progress=None) -> TrainResult:
    """Run ``cfg.steps`` Adam steps; writes ``train_log.csv``, checkpoints and ``summary.json``.

    Every random draw (init, batches, perturbation, dropout) comes from a
    generator derived from ``cfg.seed``. ``progress`` is called with each log
    row when given.
    """
    pairs, _ = _preflight(cfg)
    dtype = np.dtype(cfg.dtype)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    unet = cfg.unet
    lr_all = _stack([p.lr for p in pairs], dtype)
    hr_all = _stack([p.hr for p in pairs], dtype)
    n = len(pairs)
    roi = default_roi(lr_all.shape[1], lr_all.shape[2]) if unet.use_self_prior else None
    phi = _extractor(cfg, dtype)

    P = M.init_params(unet, seed=cfg.seed, dtype=dtype)
    params = M.trainable(P)
    state = AdamState.zeros_like(params)
    rng_batch = np.random.default_rng([cfg.seed, 1])
    rng_perturb = np.random.default_rng([cfg.seed, 2])
    rng_dropout = np.random.default_rng([cfg.seed, 3])
    log_path = out / "train_log.csv"
    with thread_limits(cfg.deterministic), open(log_path, "w", newline="") as logf:
        writer = csv.writer(logf)
        writer.writerow(["step", "l1", "perceptual", "total", "wall_ms", "perturb"])
        initial = dataset_l1(P, unet, lr_all, hr_all)
        for step in range(1, cfg.steps + 1):
            t0 = time.perf_counter()
            idx = rng_batch.choice(n, size=cfg.batch_size, replace=cfg.batch_size > n)
            lr_batch = lr_all[idx]
            records = []
            if roi is not None:
                perturbed = []
                for img in lr_batch:
                    img2, rec = perturb(img, roi, rng_perturb, training=True, block=cfg.perturb.block,
                                        mode=cfg.perturb.mode, prob=cfg.perturb.prob)
                    perturbed.append(img2)
                    records.append(rec)
                lr_batch = np.stack(perturbed)
            T.reset_tape()
            sr = M.forward(lr_batch, P, unet, training=True, rng=rng_dropout)
            loss, l1, perc = total_loss(sr, hr_all[idx], cfg.beta, phi)
            if not math.isfinite(float(loss.data)):
                raise NumericError(f"non-finite loss at step {step}")
            for p in params:
                p.grad = None
            T.backward(loss, params)
            adam_step(params, [p.grad for p in params], state, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            wall_ms = (time.perf_counter() - t0) * 1000.0
            row = [step, f"{float(l1.data):.8g}", "" if perc is None else f"{float(perc.data):.8g}",
                   f"{float(loss.data):.8g}", f"{wall_ms:.1f}",
                   "|".join(f"{r.block_y}:{r.block_x}:{r.brightness:.6f}" for r in records if r.applied)]
            writer.writerow(row)
            if progress is not None:
                progress(row)
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0 and step != cfg.steps:
                M.save_checkpoint(out / f"step_{step:06d}.smck", P, unet, {"step": step})
        final = dataset_l1(P, unet, lr_all, hr_all)
    for p in params:
        p.grad = None
    ckpt = out / FINAL_CHECKPOINT
    # the output location is left out so identical runs give identical bytes
    recorded = {k: v for k, v in cfg.to_dict().items() if k != "out_dir"}
    M.save_checkpoint(ckpt, P, unet, {"step": cfg.steps, "train": recorded})
    summary = {"steps": cfg.steps, "initial_train_l1": initial, "final_train_l1": final,
               "ratio": final / initial if initial else None}
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return TrainResult(out, ckpt, cfg.steps, initial, final, log_path)


def read_train_log(path) -> dict[str, list]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    out: dict[str, list] = {"step": [int(r["step"]) for r in rows]}
    for key in ("l1", "perceptual", "total", "wall_ms"):
        out[key] = [float(r[key]) if r[key] else math.nan for r in rows]
    return out


# --- evaluation ---------------------------------------------------------------------------

def format_metric(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.6f}"


def _write_metrics(path, rows: list[tuple[str, float, float]]) -> tuple[float, float]:
    mean_p = float(np.mean([r[1] for r in rows]))
    mean_s = float(np.mean([r[2] for r in rows]))
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["slice", "psnr_db", "ssim"])
        for name, p, s in rows:
            w.writerow([name, format_metric(p), format_metric(s)])
        w.writerow(["mean", format_metric(mean_p), format_metric(mean_s)])
    return mean_p, mean_s


@dataclass
class EvalResult:
    model_rows: list[tuple[str, float, float]]
    bicubic_rows: list[tuple[str, float, float]]
    mean_psnr: float
    mean_ssim: float
    bicubic_mean_psnr: float
    bicubic_mean_ssim: float
    out_dir: Path


def evaluate(checkpoint, manifest_path, out_dir, figures: bool = True, split: str = "test") -> EvalResult:
    """Score the model and the bicubic baseline on every slice of ``split``.

    Writes ``metrics.csv`` and ``bicubic_metrics.csv`` (``slice,psnr_db,ssim``
    plus a ``mean`` row), one ``|SR - HR|`` PGM per slice under ``error_maps/``
    and, with ``figures``, ``comparison.png`` and ``psnr.png``.
    """
    cfg, P, _ = M.load_checkpoint(checkpoint)
    manifest = DatasetManifest.load(manifest_path)
    if manifest.scale is not None and manifest.scale != cfg.scale:
        raise DataError(f"checkpoint scale {cfg.scale} does not match manifest scale {manifest.scale}")
    entries = manifest.split(split)
    if not entries:
        raise DataError(f"{manifest_path}: no {split!r} slices")
    out = Path(out_dir)
    (out / "error_maps").mkdir(parents=True, exist_ok=True)
    dtype = P["head.conv.w"].dtype
    model_rows, base_rows, panels = [], [], []
    with T.no_grad():
        for e in entries:
            pair = manifest.load_pair(e, cfg.scale)
            name = e.get("name") or Path(e["hr"]).stem
            sr = M.forward(pair.lr[None].astype(dtype), P, cfg, training=False).data[0]
            base = np.clip(bicubic_upscale(pair.lr, cfg.scale), 0.0, 1.0)
            model_rows.append((name, psnr(sr, pair.hr), ssim(sr, pair.hr)))
            base_rows.append((name, psnr(base, pair.hr), ssim(base, pair.hr)))
            write_pgm(out / "error_maps" / f"{name}.pgm", np.abs(sr.astype(np.float64) - pair.hr))
            panels.append({"name": name, "lr": pair.lr, "bicubic": base, "sr": sr, "hr": pair.hr})
    mp, ms = _write_metrics(out / "metrics.csv", model_rows)
    bp, bs = _write_metrics(out / "bicubic_metrics.csv", base_rows)
    if figures:
        from . import plotting

        plotting.comparison_figure(out / "comparison.png", panels)
        plotting.metrics_figure(out / "psnr.png", [r[0] for r in model_rows], [r[1] for r in model_rows],
                                [r[1] for r in base_rows])
    return EvalResult(model_rows, base_rows, mp, ms, bp, bs, out)


def super_resolve(checkpoint, lr_image: np.ndarray) -> np.ndarray:
    """Inference on one (h, w, 1) LR image; returns the clipped (h*s, w*s, 1) result."""
    cfg, P, _ = M.load_checkpoint(checkpoint)
    img = np.asarray(lr_image)
    if img.ndim == 2:
        img = img[:, :, None]
    with T.no_grad():
        return M.forward(img[None].astype(P["head.conv.w"].dtype), P, cfg, training=False).data[0]
