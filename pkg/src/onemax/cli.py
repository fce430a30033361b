"""Command-line interface: synth, extract, train, eval, sweep, gradcheck.

Configuration precedence: built-in defaults < config file (key=value
lines, # comments) < command-line flags. All randomness flows from one
--seed; sub-seeds are derived by labeled hashing, so adding a consumer
never perturbs existing streams. Exit codes: 0 success, 1 runtime or
I/O failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import dsp, model
from .data import (
    Manifest,
    ManifestFormatError,
    NoiseBank,
    Sample,
    SynthConfig,
    WavFormatError,
    condition_name,
    load_noise_bank,
    read_manifest,
    synth_corpus,
)
from .dsp import SifFormatError
from .model import CheckpointFormatError
from .optim import AdamStateFormatError
from .seeds import derive_seed
from .train import (
    DEFAULT_WIDTHS,
    TrainConfig,
    accuracy_table,
    config_text,
    evaluate,
    extract_features,
    feature_digest,
    sweep_tsv,
    train,
    width_sweep,
)

CACHE_ENV = "ONEMAX_CACHE"

# keys a config file may set; anything else is a typo worth failing on
CONFIG_KEYS = {
    "widths", "filters_per_width", "learning_rate", "dropout_rate",
    "l2_lambda", "batch_size", "epochs", "seed", "regime", "with_energy",
    "energy_scale", "n_freq", "masked_pool", "regularize_biases", "snrs",
    "copies_per_snr", "validate_clean_only", "cache",
}

# hyperparameter keys --paper-defaults pins back to the built-in defaults
HYPERPARAM_KEYS = {
    "widths", "filters_per_width", "learning_rate", "dropout_rate",
    "l2_lambda", "batch_size", "epochs",
}

RUNTIME_ERRORS = (
    OSError,
    WavFormatError,
    ManifestFormatError,
    SifFormatError,
    CheckpointFormatError,
    AdamStateFormatError,
    RuntimeError,
    FloatingPointError,
)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    if not text.strip():
        return ()
    return tuple(int(part) for part in text.split(","))


def _parse_float_list(text: str) -> tuple[float, ...]:
    if not text.strip():
        return ()
    return tuple(float(part) for part in text.split(","))


def load_config_file(path) -> dict[str, str]:
    """Parse key=value lines; # starts a comment; unknown keys are errors."""
    values: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = value
    return values


def _resolve(args, file_cfg: dict[str, str], key: str, default, conv):
    flag_value = getattr(args, key, None)
    if flag_value is not None:
        return flag_value
    if key in file_cfg:
        return conv(file_cfg[key])
    return default


def resolve_seed(args, file_cfg: dict[str, str]) -> int:
    return _resolve(args, file_cfg, "seed", 0, int)


def resolve_train_config(args, file_cfg: dict[str, str]) -> TrainConfig:
    """Apply precedence defaults < config file < flags and validate."""
    if getattr(args, "paper_defaults", False):
        file_cfg = {k: v for k, v in file_cfg.items() if k not in HYPERPARAM_KEYS}
    masked = True
    if "masked_pool" in file_cfg:
        masked = _parse_bool(file_cfg["masked_pool"])
    if getattr(args, "unmasked_pool", None):
        masked = False

    widths_flag = getattr(args, "widths", None)
    if widths_flag is not None:
        widths = _parse_int_list(widths_flag)
    elif "widths" in file_cfg:
        widths = _parse_int_list(file_cfg["widths"])
    else:
        widths = DEFAULT_WIDTHS

    snrs_flag = getattr(args, "snrs", None)
    if snrs_flag is not None:
        snrs = _parse_float_list(snrs_flag)
    elif "snrs" in file_cfg:
        snrs = _parse_float_list(file_cfg["snrs"])
    else:
        snrs = (20.0, 10.0, 0.0)

    return TrainConfig(
        widths=widths,
        filters_per_width=_resolve(args, file_cfg, "filters_per_width", 100, int),
        learning_rate=_resolve(args, file_cfg, "learning_rate", 1e-4, float),
        dropout_rate=_resolve(args, file_cfg, "dropout_rate", 0.5, float),
        l2_lambda=_resolve(args, file_cfg, "l2_lambda", 1e-4, float),
        batch_size=_resolve(args, file_cfg, "batch_size", 100, int),
        epochs=_resolve(args, file_cfg, "epochs", None, int),
        seed=resolve_seed(args, file_cfg),
        regime=_resolve(args, file_cfg, "regime", "mismatched", str),
        with_energy=_resolve(args, file_cfg, "with_energy", False, _parse_bool),
        energy_scale=_resolve(args, file_cfg, "energy_scale", 1.0, float),
        n_freq=_resolve(args, file_cfg, "n_freq", dsp.N_FREQ, int),
        masked_pool=masked,
        regularize_biases=_resolve(args, file_cfg, "regularize_biases", False, _parse_bool),
        snrs=snrs,
        copies_per_snr=_resolve(args, file_cfg, "copies_per_snr", 1, int),
        validate_clean_only=_resolve(args, file_cfg, "validate_clean_only", False, _parse_bool),
    )


def resolve_cache_dir(args, file_cfg: dict[str, str], default=None):
    explicit = getattr(args, "cache", None)
    if explicit is not None:
        return Path(explicit)
    if "cache" in file_cfg:
        return Path(file_cfg["cache"])
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return default


def _load_inputs(args, file_cfg) -> tuple[Manifest, NoiseBank]:
    manifest = read_manifest(args.manifest)
    noise_dir = Path(args.noise_dir) if args.noise_dir else manifest.root / "noise"
    return manifest, load_noise_bank(noise_dir)


# ---------------------------------------------------------------------------
# Subcommands

def cmd_synth(args, file_cfg) -> int:
    cfg = SynthConfig(
        n_classes=args.classes,
        instances_per_class=args.per_class,
        noise_duration_s=args.noise_duration,
    )
    manifest, bank = synth_corpus(cfg, args.out, resolve_seed(args, file_cfg))
    counts = {split: len(manifest.by_split(split)) for split in ("train", "validation", "test")}
    print(f"wrote {len(manifest.records)} event WAVs across {manifest.n_classes} classes")
    print(f"splits: train={counts['train']} validation={counts['validation']} test={counts['test']}")
    print(f"noises: {', '.join(bank.names)}")
    print(f"manifest: {Path(args.out) / 'manifest.tsv'}")
    return 0


def cmd_extract(args, file_cfg) -> int:
    config = resolve_train_config(args, file_cfg)
    manifest = read_manifest(args.manifest)
    cache_dir = Path(args.out) if args.out else resolve_cache_dir(
        args, file_cfg, default=manifest.root / "sif_cache"
    )
    cache_dir.mkdir(parents=True, exist_ok=True)

    conditions = ["clean"] + [condition_name(snr) for snr in config.snrs]
    bank = None
    if len(conditions) > 1:
        noise_dir = Path(args.noise_dir) if args.noise_dir else manifest.root / "noise"
        bank = load_noise_bank(noise_dir)

    index_lines = ["digest\tpath\tcondition\trows\tcols"]
    failures = 0
    for record in manifest.records:
        record_conditions = conditions if record.condition == "clean" else [record.condition]
        for condition in record_conditions:
            sample = Sample(
                record=record,
                condition=condition,
                class_index=manifest.class_index(record.label),
                mix_seed=None if condition == "clean"
                else derive_seed(config.seed, "mix", record.path, condition, 0),
            )
            digest = feature_digest(config, sample)
            out_path = cache_dir / f"{digest}.sif"
            if out_path.exists():
                sif = dsp.read_sif(out_path)
                print(f"skip (cached): {record.path} [{condition}] -> {out_path.name}")
            else:
                try:
                    [values] = extract_features([sample], manifest, bank, config, cache_dir)
                except (WavFormatError, OSError, ValueError) as exc:
                    print(f"error: {record.path} [{condition}]: {exc}", file=sys.stderr)
                    failures += 1
                    continue
                sif = dsp.read_sif(out_path)
                print(f"wrote: {record.path} [{condition}] -> {out_path.name} "
                      f"({sif.n_rows}x{sif.n_frames})")
            index_lines.append(
                f"{digest}\t{record.path}\t{condition}\t{sif.n_rows}\t{sif.n_frames}"
            )
    (cache_dir / "index.tsv").write_text("\n".join(index_lines) + "\n", encoding="utf-8")
    if failures:
        print(f"{failures} file(s) failed", file=sys.stderr)
        return 1
    return 0


def cmd_train(args, file_cfg) -> int:
    config = resolve_train_config(args, file_cfg)
    manifest, bank = _load_inputs(args, file_cfg)
    cache_dir = resolve_cache_dir(args, file_cfg)

    print("resolved configuration:")
    print(config_text(config))
    total = config.resolved_epochs
    interval = max(1, total // 10)

    def progress(epoch, loss, acc):
        if epoch % interval == 0 or epoch == total:
            print(f"epoch {epoch}/{total}  train_loss {loss:.6f}  val_acc {acc:.4f}")

    params, report = train(config, manifest, bank, cache_dir, progress=progress)

    out = Path(args.out)
    model.save_checkpoint(params, out)
    sidecar = out.with_name(out.name + ".config.txt")
    sidecar.write_text(
        config_text(config) + f"\nmanifest={args.manifest}\ncheckpoint={out}\n",
        encoding="utf-8",
    )
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".log.jsonl")
    log_path.write_text("\n".join(report.epoch_lines()) + "\n", encoding="utf-8")

    print(f"best epoch {report.best_epoch} (validation accuracy {report.best_val_acc:.4f})")
    print(accuracy_table(report.test_acc, report.mean_acc))
    print(f"checkpoint: {out}")
    print(f"epoch log: {log_path}")
    return 0


def _infer_energy(params: model.ModelParams, config: TrainConfig, args) -> TrainConfig:
    if getattr(args, "energy", None) is None and params.input_rows == config.n_freq + 1:
        return config.with_overrides(with_energy=True)
    return config


def cmd_eval(args, file_cfg) -> int:
    params = model.load_checkpoint(args.ckpt)
    config = _infer_energy(params, resolve_train_config(args, file_cfg), args)
    manifest, bank = _load_inputs(args, file_cfg)
    cache_dir = resolve_cache_dir(args, file_cfg)
    accuracies = evaluate(params, manifest, bank, config, cache_dir)
    mean = accuracies.pop("mean")
    if args.tsv:
        names = list(accuracies) + ["mean"]
        values = [accuracies[c] for c in accuracies] + [mean]
        print("\t".join(names))
        print("\t".join(f"{v:.6f}" for v in values))
    else:
        print(accuracy_table(accuracies, mean))
    return 0


def cmd_sweep(args, file_cfg) -> int:
    # --widths names the widths to sweep, one single-width model each; it is
    # not a width tuple for the base config, so a bad entry must surface as a
    # failed sweep row rather than a usage error.
    widths = _parse_int_list(args.widths) if args.widths is not None else DEFAULT_WIDTHS
    args.widths = None
    config = resolve_train_config(args, file_cfg)
    manifest, bank = _load_inputs(args, file_cfg)
    cache_dir = resolve_cache_dir(args, file_cfg)
    rows = width_sweep(config, widths, manifest, bank, cache_dir)
    text = sweep_tsv(rows)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(text)
    failed = [row for row in rows if row["error"] is not None]
    for row in failed:
        print(f"width {row['width']} failed: {row['error']}", file=sys.stderr)
    return 1 if failed else 0


def cmd_gradcheck(args, file_cfg) -> int:
    seed = resolve_seed(args, file_cfg)
    tolerance = args.tolerance
    worst = 0.0
    for t in range(args.trials):
        rng = np.random.default_rng(derive_seed(seed, "gradcheck", t))
        rows = int(rng.integers(8, 54))
        n_cols = int(rng.integers(5, 41))
        widths = tuple(w for w in (1, 3, 5) if rng.random() < 0.5) or (3,)
        p = int(rng.integers(2, 6))
        n_classes = int(rng.integers(2, 7))
        lam = (0.0, 1e-4, 1e-2)[t % 3]
        params = model.init_params(
            n_classes, rows, widths, p, seed=derive_seed(seed, "gradcheck-init", t)
        )
        sif = rng.uniform(0.0, 3.0, size=(rows, n_cols))
        padded, _ = model.pad_to_min(sif, max(widths))
        true_len = int(rng.integers(1, n_cols + 1))
        target = int(rng.integers(n_classes))

        trace = model.forward(params, padded, true_len, mode="eval")
        analytic = model.backward(params, trace, padded, target, lam)
        fd = model.finite_difference_gradients(
            params, padded, true_len, target, lam, h=args.h
        )
        arrays = analytic.arrays()
        if args.break_gradient and t == 0:
            arrays[0].reshape(-1)[0] += 1e-3
        trial_worst = 0.0
        for a, f in zip(arrays, fd):
            denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-3)
            trial_worst = max(trial_worst, float(np.max(np.abs(a - f) / denom)))
        worst = max(worst, trial_worst)
        print(
            f"trial {t}: rows={rows} T={n_cols} widths={widths} P={p} "
            f"classes={n_classes} lambda={lam:g} max_rel_err={trial_worst:.3e}"
        )
    passed = worst < tolerance
    print(f"max relative error {worst:.3e} over {args.trials} trials "
          f"({'PASS' if passed else 'FAIL'}, tolerance {tolerance:g})")
    return 0 if passed else 1


# ---------------------------------------------------------------------------
# Parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="master random seed (default: 0)")
    common.add_argument("--jobs", type=int, default=None,
                        help="worker cap for extraction/evaluation; results "
                             "are identical for any value (default: 1)")
    common.add_argument("--config", default=None,
                        help="config file of key=value lines; flags win over it")

    parser = argparse.ArgumentParser(
        prog="onemax",
        description="Noise-robust audio event recognition with a "
                    "1-max pooling convolutional network.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common],
                       help="generate a synthetic labeled corpus plus noise bank")
    p.add_argument("--classes", type=int, default=5,
                   help="number of event classes (default: 5)")
    p.add_argument("--per-class", type=int, default=16,
                   help="instances per class (default: 16)")
    p.add_argument("--noise-duration", type=float, default=3.0,
                   help="noise file length in seconds (default: 3.0)")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.set_defaults(func=cmd_synth)

    def add_feature_flags(p):
        p.add_argument("--energy", dest="with_energy", default=None,
                       action=argparse.BooleanOptionalAction,
                       help="append the short-time energy row (default: off)")
        p.add_argument("--energy-scale", dest="energy_scale", type=float, default=None,
                       help="scale factor for the energy row (default: 1.0)")
        p.add_argument("--n-freq", dest="n_freq", type=int, default=None,
                       help="down-sampled frequency rows (default: 52)")
        p.add_argument("--snrs", default=None,
                       help="comma-separated corruption SNRs in dB (default: 20,10,0)")
        p.add_argument("--cache", default=None,
                       help=f"SIF cache directory (default: ${CACHE_ENV} if set)")

    def add_train_flags(p):
        p.add_argument("--widths", default=None,
                       help="comma-separated filter widths (default: 1,3,5,...,25)")
        p.add_argument("--filters", dest="filters_per_width", type=int, default=None,
                       help="filters per width (default: 100)")
        p.add_argument("--lr", dest="learning_rate", type=float, default=None,
                       help="Adam learning rate (default: 0.0001)")
        p.add_argument("--dropout", dest="dropout_rate", type=float, default=None,
                       help="dropout rate on the pooled vector (default: 0.5)")
        p.add_argument("--l2", dest="l2_lambda", type=float, default=None,
                       help="L2 regularization strength (default: 0.0001)")
        p.add_argument("--batch-size", dest="batch_size", type=int, default=None,
                       help="minibatch size (default: 100)")
        p.add_argument("--epochs", type=int, default=None,
                       help="training epochs (default: 1000 mismatched, 500 multi)")
        p.add_argument("--regime", choices=("mismatched", "multi"), default=None,
                       help="training regime (default: mismatched)")
        p.add_argument("--copies-per-snr", dest="copies_per_snr", type=int, default=None,
                       help="corrupted copies per SNR per training instance (default: 1)")
        p.add_argument("--validate-clean-only", dest="validate_clean_only", default=None,
                       action=argparse.BooleanOptionalAction,
                       help="score validation on clean audio only "
                            "(default: off; multi regime validates on all conditions)")
        p.add_argument("--regularize-biases", dest="regularize_biases", default=None,
                       action=argparse.BooleanOptionalAction,
                       help="include biases in the L2 term (default: off)")
        p.add_argument("--unmasked-pool", dest="unmasked_pool", action="store_true",
                       default=None,
                       help="pool over zero-padded positions too (default: masked)")
        p.add_argument("--paper-defaults", action="store_true",
                       help="restore the published hyperparameters over any config file")

    p = sub.add_parser("extract", parents=[common],
                       help="extract features for every (record, condition) pair")
    p.add_argument("--manifest", default="manifest.tsv",
                   help="corpus manifest (default: manifest.tsv)")
    p.add_argument("--noise-dir", default=None,
                   help="noise bank directory (default: <manifest dir>/noise)")
    p.add_argument("--out", default=None,
                   help=f"output directory (default: ${CACHE_ENV} or <manifest dir>/sif_cache)")
    add_feature_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", parents=[common],
                       help="train a model and write the best checkpoint")
    p.add_argument("--manifest", default="manifest.tsv",
                   help="corpus manifest (default: manifest.tsv)")
    p.add_argument("--noise-dir", default=None,
                   help="noise bank directory (default: <manifest dir>/noise)")
    p.add_argument("--out", default="model.1max",
                   help="checkpoint output path (default: model.1max)")
    p.add_argument("--log", default=None,
                   help="per-epoch JSONL log path (default: <out>.log.jsonl)")
    add_feature_flags(p)
    add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common],
                       help="evaluate a checkpoint per noise condition")
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--manifest", default="manifest.tsv",
                   help="corpus manifest (default: manifest.tsv)")
    p.add_argument("--noise-dir", default=None,
                   help="noise bank directory (default: <manifest dir>/noise)")
    p.add_argument("--tsv", action="store_true", help="tab-separated output")
    add_feature_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common],
                       help="train one single-width model per width")
    p.add_argument("--manifest", default="manifest.tsv",
                   help="corpus manifest (default: manifest.tsv)")
    p.add_argument("--noise-dir", default=None,
                   help="noise bank directory (default: <manifest dir>/noise)")
    p.add_argument("--out", default=None, help="TSV output path (default: stdout)")
    add_feature_flags(p)
    add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="verify analytic gradients against finite differences")
    p.add_argument("--trials", type=int, default=20,
                   help="random model configurations to check (default: 20)")
    p.add_argument("--tolerance", type=float, default=1e-6,
                   help="maximum allowed relative error (default: 1e-6; the "
                        "comparison floors denominators at 1e-3 so finite-"
                        "difference roundoff cannot fail near-zero gradients)")
    p.add_argument("--h", type=float, default=1e-5,
                   help="central-difference step (default: 1e-5)")
    p.add_argument("--break-gradient", action="store_true",
                   help=argparse.SUPPRESS)  # negative control for the test suite
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        file_cfg = load_config_file(args.config) if args.config else {}
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: cannot read config file: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args, file_cfg)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
