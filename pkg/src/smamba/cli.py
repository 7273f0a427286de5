"""Command-line entry point: ``smamba <command> ...``.

Exit codes: 0 ok, 1 usage or configuration error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import data, srt
from .errors import DataError, NumericError, ShapeError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
REPORTED_TOTAL = 27.57e6  # published parameter total for the default configuration


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        # prefix matching would swallow config overrides such as --lr
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _pairs(extra: list[str]) -> list[tuple[str, str]]:
    """``['--lr', '1e-3', '--unet.scale', '4']`` -> ``[('lr', '1e-3'), ('unet.scale', '4')]``."""
    out, i = [], 0
    while i < len(extra):
        key = extra[i]
        if not key.startswith("--"):
            raise UsageError(f"expected --key value override, got {key!r}")
        if "=" in key:
            k, v = key[2:].split("=", 1)
            out.append((k, v))
            i += 1
            continue
        if i + 1 >= len(extra):
            raise UsageError(f"override {key} needs a value")
        out.append((key[2:], extra[i + 1]))
        i += 2
    return out


def _train_config(config_path, extra):
    from .train import TrainConfig, apply_overrides

    base = TrainConfig.load(config_path).to_dict() if config_path else TrainConfig().to_dict()
    try:
        return TrainConfig.from_dict(apply_overrides(base, _pairs(extra)))
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _read_image(path: Path) -> np.ndarray:
    if path.suffix == ".pgm":
        return data.read_pgm(path)
    if path.suffix == ".srt":
        return srt.load(path)
    raise UsageError(f"unsupported image format {path.suffix!r} (use .srt or .pgm)")


# --- commands ------------------------------------------------------------------------------

def cmd_phantom(args, extra):
    m = data.write_phantom_dataset(args.out, args.count, args.size, args.seed, args.n_test)
    if args.scale:
        m = data.degrade_dataset(Path(args.out) / "manifest.json", args.scale)
    print(f"wrote {len(m.slices)} slices to {args.out}/manifest.json")


def cmd_degrade(args, extra):
    m = data.degrade_dataset(args.manifest, args.scale)
    print(f"degraded {len(m.slices)} slices at x{args.scale}")


def cmd_train(args, extra):
    from .train import train

    cfg = _train_config(args.config, extra)
    if args.print_config:
        sys.stdout.write(cfg.to_json())
        return

    def progress(row):
        if row[0] == 1 or row[0] % args.log_every == 0 or row[0] == cfg.steps:
            print(f"step {row[0]:6d}  l1 {row[1]}  total {row[3]}  {row[4]} ms", flush=True)

    res = train(cfg, progress=progress)
    print(f"train L1 {res.initial_train_l1:.6f} -> {res.final_train_l1:.6f}; checkpoint {res.checkpoint}")
    if args.figures:
        from . import plotting
        from .train import read_train_log

        log = read_train_log(res.log_path)
        series = {"l1": log["l1"]}
        if not all(np.isnan(log["perceptual"])):
            series["perceptual"] = log["perceptual"]
        plotting.loss_figure(res.out_dir / "loss.png", log["step"], series)


def cmd_eval(args, extra):
    from .train import evaluate, format_metric

    res = evaluate(args.checkpoint, args.manifest, args.out, figures=not args.no_figures, split=args.split)
    w = csv.writer(sys.stdout)
    w.writerow(["method", "psnr_db", "ssim"])
    w.writerow(["model", format_metric(res.mean_psnr), format_metric(res.mean_ssim)])
    w.writerow(["bicubic", format_metric(res.bicubic_mean_psnr), format_metric(res.bicubic_mean_ssim)])


def cmd_sr(args, extra):
    from .train import super_resolve

    img = _read_image(Path(args.input))
    out = super_resolve(args.checkpoint, img)
    dst = Path(args.output)
    if dst.suffix == ".pgm":
        data.write_pgm(dst, out)
    elif dst.suffix == ".srt":
        srt.save(dst, out)
    else:
        raise UsageError(f"unsupported output format {dst.suffix!r} (use .srt or .pgm)")
    print(f"{args.input} {img.shape[0]}x{img.shape[1]} -> {dst} {out.shape[0]}x{out.shape[1]}")


def cmd_gradcheck(args, extra):
    from .gradsuite import SUITES, run_suite

    suites = SUITES if args.suite == "all" else (args.suite,)
    failed = 0
    w = csv.writer(sys.stdout)
    w.writerow(["suite", "check", "max_rel_err", "tol", "seconds", "status"])
    for s in suites:
        for r in run_suite(s, seed=args.seed, max_coords=args.max_coords):
            failed += not r.passed
            w.writerow([r.suite, r.name, f"{r.error:.3e}", f"{r.tol:.0e}", f"{r.seconds:.2f}",
                        "ok" if r.passed else "FAIL"])
            sys.stdout.flush()
    if failed:
        raise NumericError(f"{failed} gradient check(s) exceeded tolerance")


def _time_call(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1000.0


def cmd_bench_scan(args, extra):
    from . import ssm

    rng = np.random.default_rng(args.seed)
    lengths = [int(v) for v in args.lengths.split(",")]
    chunks = [int(v) for v in args.chunks.split(",")] if args.chunks else []
    C, N = args.channels, args.state_dim
    methods = ["sequential"] + [f"chunked_{c}" for c in chunks] + (["fused"] if ssm.kernels_available() else [])
    timings: dict[str, list[float]] = {m: [] for m in methods}
    rows = []
    for L in lengths:
        delta = rng.uniform(1e-3, 1e-1, size=(1, L, C)).astype(np.float32)
        a = -np.exp(rng.normal(size=(C, N))).astype(np.float32)
        b, c = rng.normal(size=(1, L, N)).astype(np.float32), rng.normal(size=(1, L, N)).astype(np.float32)
        x = rng.normal(size=(1, L, C)).astype(np.float32)
        ref = None
        for m in methods:
            backend, chunk = ("fused", None) if m == "fused" else ("numpy", None if m == "sequential" else int(m.split("_")[1]))

            def run(backend=backend, chunk=chunk):
                return ssm.scan_values(delta, a, b, c, x, chunk=chunk, backend=backend)

            y = run()
            ref = y if ref is None else ref
            ms = _time_call(run, args.repeat)
            timings[m].append(ms)
            rows.append([L, m, f"{ms:.3f}", f"{float(np.max(np.abs(y - ref))):.3e}"])
    out = Path(args.out) if args.out else None
    w = csv.writer(sys.stdout)
    header = ["length", "method", "ms", "max_abs_diff_vs_sequential"]
    w.writerow(header)
    w.writerows(rows)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bench_scan.csv", "w", newline="") as f:
            cw = csv.writer(f)
            cw.writerow(header)
            cw.writerows(rows)
        from . import plotting

        plotting.bench_figure(out / "bench_scan.png", lengths, timings)


def cmd_params(args, extra):
    from .model import UNetConfig, param_breakdown

    if args.config:
        try:
            body = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from exc
        base = body.get("unet", body)
    else:
        base = UNetConfig().to_dict()
    from .train import apply_overrides

    try:
        pairs = [(k.removeprefix("unet."), v) for k, v in _pairs(extra)]
        cfg = UNetConfig.from_dict(apply_overrides(base, pairs))
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    breakdown = param_breakdown(cfg)
    total = sum(breakdown.values())
    w = csv.writer(sys.stdout)
    w.writerow(["group", "params"])
    for g, n in breakdown.items():
        w.writerow([g, n])
    w.writerow(["total", total])
    print(f"# reported total for the default configuration: {REPORTED_TOTAL / 1e6:.2f}M; "
          f"this configuration: {total / 1e6:.2f}M (ratio {total / REPORTED_TOTAL:.3f}). "
          "Block internals are not fully pinned down, so the comparison is informational.")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="smamba", description="Mamba-UNet super-resolution toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantom", help="generate a synthetic phantom dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=12)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-test", type=int, default=4)
    s.add_argument("--scale", type=int, choices=(2, 4), help="also write LR slices at this scale")
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("degrade", help="write k-space degraded LR slices for a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--scale", type=int, choices=(2, 4), required=True)
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("train", help="train a model; extra --key value pairs override the config")
    s.add_argument("--config", help="JSON training config")
    s.add_argument("--log-every", type=int, default=50)
    s.add_argument("--figures", action="store_true", help="render loss.png next to train_log.csv")
    s.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    s.set_defaults(func=cmd_train, takes_overrides=True)

    s = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint and the bicubic baseline")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--split", default="test", choices=("train", "test"))
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sr", help="super-resolve one LR image (.srt or .pgm)")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_sr)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    s.add_argument("--suite", default="all", choices=("all", "ops", "scan", "iss2d", "block", "network"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-coords", type=int, default=12)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("bench-scan", help="time sequential, chunked and fused scans")
    s.add_argument("--lengths", default="64,256,1024,4096")
    s.add_argument("--chunks", default="16,64")
    s.add_argument("--channels", type=int, default=32)
    s.add_argument("--state-dim", type=int, default=16)
    s.add_argument("--repeat", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="directory for bench_scan.csv and bench_scan.png")
    s.set_defaults(func=cmd_bench_scan)

    s = sub.add_parser("params", help="parameter-count breakdown; --unet keys override the default config")
    s.add_argument("--config", help="JSON file holding a model config (or a training config with a 'unet' key)")
    s.set_defaults(func=cmd_params, takes_overrides=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if extra and not getattr(args, "takes_overrides", False):
            raise UsageError(f"unrecognized arguments: {' '.join(extra)}")
        args.func(args, extra)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ShapeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
