"""Command-line entry point: ``fastsn {train,bench,attack,spectral}``.

Exit codes: 0 success, 2 configuration error, 3 I/O or file-format error,
4 numerical failure. Every report is written as CSV plus a JSON summary
with the same fields; files are replaced atomically.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys

import numpy as np

from .adversarial import AttackConfig, AttackKind, evaluate_robustness, fgsm_sweep
from .conv import circulant_conv_matrix
from .data import (Dataset, atomic_write, generate_synthetic, load_checkpoint, load_dataset,
                   save_checkpoint, split_dataset)
from .errors import (ConvergenceNotReached, FastSNError, FormatError, KernelTooLarge,
                     NumericalFailure)
from .nn import build_cnn
from .spectral import spectral_norm_exact, spectral_norm_fft, spectral_norm_power
from .training import TrainConfig, TrainMethod, compare_methods, train

log = logging.getLogger("fastsn")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

TRAIN_COLUMNS = ["method", "epoch", "time_s", "train_loss", "train_acc", "test_acc", "sum_sigma"]
BENCH_COLUMNS = ["method", "mean_time_s", "best_test_acc", "final_train_acc", "fsn_speedup_pct"]
ATTACK_COLUMNS = ["attack", "epsilon", "overshoot", "accuracy", "mean_perturbation"]
SWEEP_COLUMNS = ["epsilon", "accuracy"]
LAMBDA_COLUMNS = ["lambda", "clean_acc", "fgsm_acc", "break_epsilon"]


class ConfigError(ValueError):
    pass


# key -> (type, default); config-file keys and flag destinations share names
SETTINGS = {
    "epochs": (int, 100),
    "batch_size": (int, 32),
    "learning_rate": (float, 0.05),
    "lambda": (float, 0.01),
    "seed": (int, 0),
    "method": (str, "normal"),
    "power_iters": (int, 20),
    "tol": (float, 1e-6),
    "resplit_every": (int, 0),
    "train_fraction": (float, 0.8),
    "channels": (str, "4,8"),
    "classes": (int, 3),
    "per_class": (int, 100),
    "side": (int, 16),
    "contrast": (float, 0.5),
    "noise": (float, 0.1),
    "attack": (str, "fgsm"),
    "epsilon": (str, "0.1"),
    "overshoot": (float, 0.02),
    "max_iters": (int, 50),
    "attack_tol": (float, 1e-6),
}


def read_config_file(path) -> dict:
    """Flat ``key = value`` pairs; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in SETTINGS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value
    return out


def resolve(args) -> dict:
    """Defaults, then the config file, then explicit flags."""
    values = {k: d for k, (_, d) in SETTINGS.items()}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for key in SETTINGS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    typed = {}
    for key, (kind, _) in SETTINGS.items():
        try:
            typed[key] = kind(values[key])
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: cannot parse {values[key]!r} as {kind.__name__}") from None
    return typed


def train_config(s: dict, method=None) -> TrainConfig:
    checks = [("epochs", s["epochs"] >= 0), ("batch_size", s["batch_size"] >= 1),
              ("learning_rate", s["learning_rate"] > 0), ("lambda", s["lambda"] >= 0),
              ("power_iters", s["power_iters"] >= 1), ("tol", s["tol"] > 0),
              ("resplit_every", s["resplit_every"] >= 0),
              ("train_fraction", 0 < s["train_fraction"] < 1)]
    for key, ok in checks:
        if not ok:
            raise ConfigError(f"{key}: invalid value {s[key]!r}")
    try:
        method = TrainMethod(method or s["method"])
    except ValueError:
        raise ConfigError(f"method: expected one of normal, sn, fsn, got {s['method']!r}") from None
    return TrainConfig(epochs=s["epochs"], batch_size=s["batch_size"],
                       learning_rate=s["learning_rate"], lam=s["lambda"], seed=s["seed"],
                       method=method, power_iters=s["power_iters"], tol=s["tol"],
                       resplit_every=s["resplit_every"], train_fraction=s["train_fraction"])


def parse_channels(text: str) -> tuple[int, ...]:
    try:
        chans = tuple(int(c) for c in text.split(",") if c.strip())
    except ValueError:
        raise ConfigError(f"channels: expected comma-separated integers, got {text!r}") from None
    if not chans or min(chans) < 1:
        raise ConfigError(f"channels: invalid value {text!r}")
    return chans


def parse_range(text: str, key: str) -> np.ndarray:
    """``start:stop:step`` inclusive of ``stop`` (up to rounding)."""
    try:
        start, stop, step = (float(p) for p in text.split(":"))
    except ValueError:
        raise ConfigError(f"{key}: expected start:stop:step, got {text!r}") from None
    if step <= 0 or stop < start:
        raise ConfigError(f"{key}: need step > 0 and stop >= start, got {text!r}")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return np.round(start + step * np.arange(count), 12)


def load_data(args, s: dict) -> Dataset:
    if args.data:
        return load_dataset(args.data)
    if s["classes"] < 2 or s["side"] < 8 or s["per_class"] < 1:
        raise ConfigError("synthetic data needs classes >= 2, side >= 8, per_class >= 1")
    return generate_synthetic(s["classes"], s["per_class"], s["side"], seed=s["seed"],
                              contrast=s["contrast"], noise=s["noise"])


def initial_network(data: Dataset, s: dict):
    rows, cols = data.images.shape[1:]
    if rows != cols:
        raise ConfigError(f"images must be square, got {rows}x{cols}")
    chans = parse_channels(s["channels"])
    if rows - 2 * len(chans) < 1:
        raise ConfigError(f"{len(chans)} conv layers do not fit a {rows}x{cols} input")
    return build_cnn(rows, chans, data.num_classes, seed=s["seed"])


def to_csv(columns, rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(["" if row[c] is None else row[c] for c in columns])
    return buf.getvalue().encode("utf-8")


def write_report(out_dir, stem: str, columns, rows, extra=None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    atomic_write(os.path.join(out_dir, f"{stem}.csv"), to_csv(columns, rows))
    doc = {"columns": columns, "rows": rows}
    if extra:
        doc.update(extra)
    atomic_write(os.path.join(out_dir, f"{stem}.json"),
                 (json.dumps(doc, indent=1) + "\n").encode("utf-8"))


def cmd_train(args) -> int:
    s = resolve(args)
    cfg = train_config(s)
    data = load_data(args, s)
    net = initial_network(data, s)
    trained, records = train(net, data, cfg)
    rows = [{"method": cfg.method.value, "epoch": r.epoch, "time_s": r.wall_time_s,
             "train_loss": r.train_loss, "train_acc": r.train_accuracy,
             "test_acc": r.test_accuracy, "sum_sigma": r.sum_sigma,
             "per_layer_sigma": r.per_layer_sigma,
             "per_layer_residual_fro": r.per_layer_residual_fro,
             "unconverged": r.unconverged} for r in records]
    write_report(args.out_dir, "epochs", TRAIN_COLUMNS, rows, {"config": s})
    checkpoint = args.checkpoint or os.path.join(args.out_dir, "checkpoint.json")
    save_checkpoint(trained, checkpoint)
    if records:
        last = records[-1]
        print(f"{cfg.method.value}: {len(records)} epochs, train_acc={last.train_accuracy:.4f}"
              f" test_acc={last.test_accuracy:.4f} sum_sigma={last.sum_sigma:.4f}")
    print(f"checkpoint: {checkpoint}")
    return EXIT_OK


def cmd_bench(args) -> int:
    s = resolve(args)
    cfg = train_config(s)
    data = load_data(args, s)
    net = initial_network(data, s)
    cmp, _ = compare_methods(net, data, cfg)
    speedup = cmp.fsn_speedup_pct if cfg.epochs else None
    rows = [{"method": r.method.value, "mean_time_s": r.mean_time_s,
             "best_test_acc": r.best_test_accuracy, "final_train_acc": r.final_train_accuracy,
             "fsn_speedup_pct": speedup} for r in cmp.rows]
    write_report(args.out_dir, "bench", BENCH_COLUMNS, rows,
                 {"config": s, "fsn_speedup_pct": speedup})
    for r in rows:
        print(f"{r['method']:>6}: {r['mean_time_s']:.4f} s/epoch,"
              f" best test acc {r['best_test_acc']:.4f}")
    if speedup is not None:
        print(f"fsn speedup vs sn: {speedup:.1f}%")
    return EXIT_OK


def attack_configs(s: dict) -> list[AttackConfig]:
    kind = s["attack"]
    if kind not in ("fgsm", "deepfool"):
        raise ConfigError(f"attack: expected fgsm or deepfool, got {kind!r}")
    if s["max_iters"] < 1:
        raise ConfigError("max_iters: must be >= 1")
    if kind == "deepfool":
        return [AttackConfig(kind=AttackKind.DEEPFOOL, overshoot=s["overshoot"],
                             max_iters=s["max_iters"], tol=s["attack_tol"])]
    try:
        eps = [float(e) for e in s["epsilon"].split(",") if e.strip()]
    except ValueError:
        raise ConfigError(f"epsilon: cannot parse {s['epsilon']!r}") from None
    if not eps or min(eps) < 0:
        raise ConfigError(f"epsilon: invalid value {s['epsilon']!r}")
    return [AttackConfig(kind=AttackKind.FGSM, epsilon=e) for e in eps]


def cmd_attack(args) -> int:
    s = resolve(args)
    configs = attack_configs(s)
    sweep = parse_range(args.sweep, "sweep") if args.sweep else None
    lambdas = parse_range(args.lambda_sweep, "lambda_sweep") if args.lambda_sweep else None
    if sweep is not None and sweep[0] != 0.0:
        raise ConfigError("sweep: the grid must start at 0")
    data = load_data(args, s)
    _, test = split_dataset(data, s["train_fraction"], s["seed"])
    if len(test) == 0:
        raise ConfigError("test split is empty")

    if lambdas is not None:
        base = train_config(s, method=s["method"] if s["method"] != "normal" else "fsn")
        grid = sweep if sweep is not None else parse_range("0:1:0.01", "sweep")
        rows = []
        for lam in lambdas:
            cfg = TrainConfig(**{**base.__dict__, "lam": float(lam)})
            net, _ = train(initial_network(data, s), data, cfg)
            report = evaluate_robustness(net, test, [AttackConfig(epsilon=0.1)])
            _, brk = fgsm_sweep(net, test, grid)
            rows.append({"lambda": float(lam), "clean_acc": report.clean_accuracy,
                         "fgsm_acc": report.results[0].accuracy, "break_epsilon": brk})
            print(f"lambda={lam:g}: clean {report.clean_accuracy:.4f},"
                  f" fgsm(0.1) {report.results[0].accuracy:.4f}, break_eps {brk}")
        write_report(args.out_dir, "lambda_sweep", LAMBDA_COLUMNS, rows,
                     {"config": s, "method": base.method.value})
        return EXIT_OK

    if not args.checkpoint:
        raise ConfigError("checkpoint: required unless --lambda-sweep is given")
    net = load_checkpoint(args.checkpoint)
    report = evaluate_robustness(net, test, configs)
    rows = [{"attack": "none", "epsilon": 0.0, "overshoot": None,
             "accuracy": report.clean_accuracy, "mean_perturbation": 0.0}]
    for r in report.results:
        fg = r.config.kind is AttackKind.FGSM
        rows.append({"attack": r.config.kind.value, "epsilon": r.config.epsilon if fg else None,
                     "overshoot": None if fg else r.config.overshoot, "accuracy": r.accuracy,
                     "mean_perturbation": r.mean_perturbation})
        print(f"{r.name}: accuracy {r.accuracy:.4f}")
    extra = {"config": s, "clean_accuracy": report.clean_accuracy}
    if sweep is not None:
        curve, brk = fgsm_sweep(net, test, sweep)
        write_report(args.out_dir, "sweep", SWEEP_COLUMNS,
                     [{"epsilon": float(e), "accuracy": a} for e, a in zip(sweep, curve)],
                     {"break_epsilon": brk})
        extra["break_epsilon"] = brk
        print(f"break epsilon: {brk}")
    write_report(args.out_dir, "attack", ATTACK_COLUMNS, rows, extra)
    return EXIT_OK


def parse_kernel_text(text: str) -> np.ndarray:
    """Rows of space-separated reals, or a bracketed JSON matrix like ``[[1]]``."""
    body = text.strip()
    if not body:
        raise ConfigError("kernel file is empty")
    try:
        if body.startswith("["):
            k = np.asarray(json.loads(body), dtype=float)
        else:
            rows = [line.split() for line in body.splitlines() if line.strip()]
            if len({len(r) for r in rows}) != 1:
                raise ValueError("ragged rows")
            k = np.asarray(rows, dtype=float)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"cannot parse kernel: {exc}") from None
    if k.ndim != 2 or min(k.shape) < 1 or not np.all(np.isfinite(k)):
        raise ConfigError(f"kernel must be a finite 2D matrix, got shape {k.shape}")
    return k


def cmd_spectral(args) -> int:
    with open(args.kernel, encoding="utf-8") as fh:
        text = fh.read()
    k = parse_kernel_text(text)
    if args.n < 1:
        raise ConfigError("n: must be >= 1")
    if max(k.shape) > args.n:
        raise ConfigError(f"n: kernel {k.shape[0]}x{k.shape[1]} does not fit n={args.n}")
    m = circulant_conv_matrix(k, args.n)
    exact = spectral_norm_exact(m).sigma
    note = ""
    try:
        power = spectral_norm_power(m, max_iters=args.max_iters, tol=args.tol).sigma
    except ConvergenceNotReached as exc:
        power, note = exc.sigma, " (iteration cap reached)"
    fft = spectral_norm_fft(k, args.n).sigma
    values = [exact, power, fft]
    diff = max(abs(a - b) / max(abs(a), abs(b), 1e-300)
               for i, a in enumerate(values) for b in values[i + 1:])
    print(f"exact {exact:.12g}")
    print(f"power {power:.12g}{note}")
    print(f"fft   {fft:.12g}")
    print(f"max_rel_diff {diff:.3e}")
    return EXIT_OK


def _training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="file of key=value pairs; explicit flags win")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", help="dataset file (SNDS format)")
    src.add_argument("--synthetic", action="store_true",
                     help="generate the synthetic shape dataset (default without --data)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--lambda", dest="lambda", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--power-iters", dest="power_iters", type=int)
    p.add_argument("--tol", type=float, help="power iteration tolerance")
    p.add_argument("--resplit-every", dest="resplit_every", type=int,
                   help="reshuffle the 80/20 split every N epochs (0 = never)")
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--channels", help="conv widths, e.g. 4,8")
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--side", type=int)
    p.add_argument("--contrast", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--out-dir", dest="out_dir", default=".")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fastsn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one network and write epochs.csv + checkpoint")
    _training_flags(p)
    p.add_argument("--method", choices=[m.value for m in TrainMethod])
    p.add_argument("--checkpoint", help="checkpoint path (default OUT_DIR/checkpoint.json)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="compare normal, sn and fsn training")
    _training_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("attack", help="evaluate robustness of a checkpoint")
    _training_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--method", choices=[m.value for m in TrainMethod],
                   help="method retrained by --lambda-sweep (default fsn)")
    p.add_argument("--attack", choices=["fgsm", "deepfool"])
    p.add_argument("--eps", dest="epsilon", help="FGSM budget(s), comma-separated")
    p.add_argument("--overshoot", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--attack-tol", dest="attack_tol", type=float)
    p.add_argument("--sweep", help="unbounded FGSM grid start:stop:step, e.g. 0:1:0.05")
    p.add_argument("--lambda-sweep", dest="lambda_sweep",
                   help="retrain for each lambda in start:stop:step and attack")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("spectral", help="spectral norm of a kernel by all three methods")
    p.add_argument("--kernel", required=True, help="text file: rows of reals or [[...]]")
    p.add_argument("--n", type=int, required=True, help="input size the kernel is padded to")
    p.add_argument("--max-iters", dest="max_iters", type=int, default=2000)
    p.add_argument("--tol", type=float, default=1e-12)
    p.set_defaults(func=cmd_spectral)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, KernelTooLarge) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalFailure, ConvergenceNotReached, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, FastSNError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
