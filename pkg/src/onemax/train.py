"""Training loop with validation-based retention, evaluation, width sweeps.

Each epoch: shuffled minibatches, per-sample forward (train mode) and
backward, arithmetic-mean gradient over the batch, one Adam step. After
every epoch the clean-or-corrupted validation stream is scored in eval
mode and the best-scoring parameter snapshot is retained (ties keep the
earlier epoch). Features are extracted once up front — optionally through
an on-disk cache — so the DSP cost is paid a single time.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dsp, model
from .data import (
    ConditionSet,
    DEFAULT_SNRS,
    Manifest,
    NoiseBank,
    Sample,
    build_condition_set,
    make_batches,
    resolve_sample,
)
from .optim import adam_init, adam_step
from .seeds import derive_seed

DEFAULT_WIDTHS = tuple(range(1, 26, 2))  # {1, 3, ..., 25}


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters; defaults are the published large-corpus settings."""

    widths: tuple[int, ...] = DEFAULT_WIDTHS
    filters_per_width: int = 100
    learning_rate: float = 1e-4
    dropout_rate: float = 0.5
    l2_lambda: float = 1e-4
    batch_size: int = 100
    epochs: int | None = None      # None -> 1000 mismatched / 500 multi
    seed: int = 0
    regime: str = "mismatched"
    with_energy: bool = False
    energy_scale: float = 1.0
    n_freq: int = dsp.N_FREQ
    masked_pool: bool = True
    regularize_biases: bool = False
    snrs: tuple[float, ...] = DEFAULT_SNRS
    copies_per_snr: int = 1
    validate_clean_only: bool = False

    def __post_init__(self):
        if not self.widths or any(w < 1 for w in self.widths):
            raise ValueError(f"widths must all be >= 1, got {self.widths}")
        if len(set(self.widths)) != len(self.widths):
            raise ValueError(f"widths must be distinct, got {self.widths}")
        if self.filters_per_width < 1:
            raise ValueError("filters_per_width must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs is not None and self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.regime not in ("mismatched", "multi"):
            raise ValueError(f"regime must be 'mismatched' or 'multi', got {self.regime!r}")
        if self.n_freq < 1:
            raise ValueError("n_freq must be >= 1")
        if self.copies_per_snr < 1:
            raise ValueError("copies_per_snr must be >= 1")

    @property
    def resolved_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return 1000 if self.regime == "mismatched" else 500

    @property
    def input_rows(self) -> int:
        return self.n_freq + (1 if self.with_energy else 0)

    def with_overrides(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)


@dataclass
class TrainReport:
    """Learning curves plus the final test-accuracy row.

    val_acc[0] scores the untrained initialization; val_acc[e] the state
    after epoch e. train_loss[e-1] is epoch e's sample-weighted mean
    minibatch loss. best_epoch indexes val_acc (0 = initialization).
    """

    train_loss: list[float]
    val_acc: list[float]
    best_epoch: int
    best_val_acc: float
    test_acc: dict[str, float] = field(default_factory=dict)
    mean_acc: float = float("nan")
    wall_seconds: float = 0.0

    def epoch_lines(self) -> list[str]:
        """One machine-readable JSON line per trained epoch."""
        return [
            json.dumps(
                {"epoch": e, "train_loss": self.train_loss[e - 1], "val_acc": self.val_acc[e]}
            )
            for e in range(1, len(self.train_loss) + 1)
        ]

    def to_text(self) -> str:
        lines = ["epoch  train_loss    val_acc"]
        lines.append(f"{0:>5}  {'-':>10}  {self.val_acc[0]:>9.4f}")
        for e in range(1, len(self.train_loss) + 1):
            lines.append(f"{e:>5}  {self.train_loss[e - 1]:>10.6f}  {self.val_acc[e]:>9.4f}")
        lines.append(
            f"best epoch {self.best_epoch} (validation accuracy {self.best_val_acc:.4f})"
        )
        if self.test_acc:
            lines.append("")
            lines.append(accuracy_table(self.test_acc, self.mean_acc))
        return "\n".join(lines)


def accuracy_table(test_acc: dict[str, float], mean_acc: float) -> str:
    """Text accuracy row: one column per condition plus the mean."""
    names = list(test_acc) + ["mean"]
    values = [test_acc[c] for c in test_acc] + [mean_acc]
    header = "  ".join(f"{n:>8}" for n in names)
    row = "  ".join(f"{v:>8.4f}" for v in values)
    return header + "\n" + row


def feature_digest(config: TrainConfig, sample: Sample) -> str:
    """Cache filename stem for one (sample, feature-config) pairing."""
    key = "|".join(
        str(x)
        for x in (
            sample.cache_key,
            config.seed,
            config.n_freq,
            config.with_energy,
            config.energy_scale,
            dsp.WINDOW_LEN,
            dsp.HOP_LEN,
            dsp.FFT_SIZE,
        )
    )
    return hashlib.sha256(key.encode("utf-8")).hexdigest()


def extract_features(
    samples: list[Sample],
    manifest: Manifest,
    bank: NoiseBank | None,
    config: TrainConfig,
    cache_dir=None,
) -> list[np.ndarray]:
    """SIF matrices for a sample stream, via the cache directory when given."""
    cache = Path(cache_dir) if cache_dir is not None else None
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
    out = []
    for sample in samples:
        path = cache / f"{feature_digest(config, sample)}.sif" if cache is not None else None
        if path is not None and path.exists():
            out.append(dsp.read_sif(path).values)
            continue
        wave = resolve_sample(sample, manifest, bank)
        sif = dsp.extract_sif(
            wave,
            n_freq=config.n_freq,
            with_energy=config.with_energy,
            energy_scale=config.energy_scale,
        )
        if path is not None:
            dsp.write_sif(sif, path)
        out.append(sif.values)
    return out


def _accuracy(
    params: model.ModelParams,
    sifs: list[np.ndarray],
    labels: list[int],
    min_cols: int,
    masked: bool,
) -> float:
    correct = 0
    for sif, label in zip(sifs, labels):
        padded, true_len = model.pad_to_min(sif, min_cols)
        trace = model.forward(params, padded, true_len, mode="eval", masked=masked)
        correct += int(np.argmax(trace.y_hat)) == label
    return correct / len(sifs)


def _check_splits(manifest: Manifest) -> None:
    for split in ("train", "validation", "test"):
        if not manifest.by_split(split):
            raise ValueError(f"manifest has no records in the {split!r} split")


def train(
    config: TrainConfig,
    manifest: Manifest,
    bank: NoiseBank,
    cache_dir=None,
    progress=None,
) -> tuple[model.ModelParams, TrainReport]:
    """Train on the manifest's train split; return the best snapshot and report.

    The returned parameters are the ones that maximized validation
    accuracy (earliest epoch on ties, including the untrained epoch 0).
    The report carries the full learning curve and the test-accuracy row
    of the retained model. Bit-deterministic for a fixed (config, corpus).
    """
    t0 = time.monotonic()
    _check_splits(manifest)
    if manifest.n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {manifest.n_classes}")

    cs = build_condition_set(
        manifest, bank, config.regime, config.seed,
        snrs=config.snrs, copies_per_snr=config.copies_per_snr,
        validate_clean_only=config.validate_clean_only,
    )
    train_sifs = extract_features(cs.train, manifest, bank, config, cache_dir)
    train_labels = [s.class_index for s in cs.train]
    val_sifs = extract_features(cs.validation, manifest, bank, config, cache_dir)
    val_labels = [s.class_index for s in cs.validation]
    if not val_sifs:
        raise ValueError("validation split is empty")

    min_cols = max(config.widths)
    params = model.init_params(
        n_classes=manifest.n_classes,
        input_rows=config.input_rows,
        widths=config.widths,
        filters_per_width=config.filters_per_width,
        seed=derive_seed(config.seed, "init"),
    )
    state = adam_init(params.blocks(), alpha=config.learning_rate)

    val_curve = [_accuracy(params, val_sifs, val_labels, min_cols, config.masked_pool)]
    best_params = params.copy()
    best_acc = val_curve[0]
    best_epoch = 0
    loss_curve: list[float] = []

    for epoch in range(1, config.resolved_epochs + 1):
        batches = make_batches(
            train_sifs, train_labels, config.batch_size, min_cols,
            shuffle_seed=derive_seed(config.seed, "shuffle", epoch),
        )
        epoch_ce = 0.0
        epoch_reg = 0.0
        for b, batch in enumerate(batches):
            grad_sum = None
            batch_ce = 0.0
            for j in range(len(batch)):
                sif = batch.sifs[j]
                true_len = int(batch.true_lens[j])
                target = int(batch.labels[j])
                trace = model.forward(
                    params, sif, true_len, mode="train",
                    dropout_rate=config.dropout_rate,
                    rng_seed=derive_seed(config.seed, "dropout", epoch, int(batch.indices[j])),
                    masked=config.masked_pool,
                )
                batch_ce += model.loss(trace, target, params, 0.0)
                grads = model.backward(
                    params, trace, sif, target, config.l2_lambda,
                    regularize_biases=config.regularize_biases,
                )
                if grad_sum is None:
                    grad_sum = grads.arrays()
                else:
                    for acc, g in zip(grad_sum, grads.arrays()):
                        acc += g
            n = len(batch)
            mean_grads = [g / n for g in grad_sum]
            reg = model.regularizer(params, config.l2_lambda, config.regularize_biases)
            batch_loss = batch_ce / n + reg
            if not np.isfinite(batch_loss):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch}, batch {b}"
                )
            try:
                adam_step(state, params.blocks(), mean_grads)
            except FloatingPointError as exc:
                raise RuntimeError(
                    f"training diverged at epoch {epoch}, batch {b}: {exc}"
                ) from exc
            epoch_ce += batch_ce
            epoch_reg += reg * n
        n_train = len(train_sifs)
        loss_curve.append(epoch_ce / n_train + epoch_reg / n_train)

        acc = _accuracy(params, val_sifs, val_labels, min_cols, config.masked_pool)
        val_curve.append(acc)
        if acc > best_acc:
            best_acc = acc
            best_epoch = epoch
            best_params = params.copy()
        if progress is not None:
            progress(epoch, loss_curve[-1], acc)

    report = TrainReport(
        train_loss=loss_curve,
        val_acc=val_curve,
        best_epoch=best_epoch,
        best_val_acc=best_acc,
    )
    report.test_acc = evaluate(best_params, manifest, bank, config, cache_dir)
    report.mean_acc = report.test_acc.pop("mean")
    report.wall_seconds = time.monotonic() - t0
    return best_params, report


def evaluate(
    params: model.ModelParams,
    manifest: Manifest,
    bank: NoiseBank,
    config: TrainConfig,
    cache_dir=None,
) -> dict[str, float]:
    """Test accuracy per condition (clean plus each SNR) and their mean.

    Returned dict preserves condition order and ends with a "mean" entry.
    """
    _check_splits(manifest)
    if params.n_classes != manifest.n_classes:
        raise ValueError(
            f"checkpoint has {params.n_classes} classes, manifest has {manifest.n_classes}"
        )
    if params.input_rows != config.input_rows:
        raise ValueError(
            f"checkpoint expects {params.input_rows} input rows, "
            f"config produces {config.input_rows}"
        )
    cs = build_condition_set(
        manifest, bank, config.regime, config.seed,
        snrs=config.snrs, copies_per_snr=config.copies_per_snr,
        validate_clean_only=config.validate_clean_only,
    )
    min_cols = max(params.bank.widths)
    out: dict[str, float] = {}
    for condition, samples in cs.test.items():
        sifs = extract_features(samples, manifest, bank, config, cache_dir)
        labels = [s.class_index for s in samples]
        out[condition] = _accuracy(params, sifs, labels, min_cols, config.masked_pool)
    out["mean"] = float(np.mean([v for v in out.values()]))
    return out


def width_sweep(
    base_config: TrainConfig,
    widths_list,
    manifest: Manifest,
    bank: NoiseBank,
    cache_dir=None,
) -> list[dict]:
    """Train one single-width model per width; report per-condition accuracy.

    A failed width is recorded with its error message and the sweep
    continues. Each row: {"width": w, "accuracy": {...}, "error": None}.
    """
    rows = []
    for w in widths_list:
        try:
            config = base_config.with_overrides(widths=(int(w),))
            _, report = train(config, manifest, bank, cache_dir)
            acc = dict(report.test_acc)
            acc["mean"] = report.mean_acc
            rows.append({"width": int(w), "accuracy": acc, "error": None})
        except (ValueError, RuntimeError, OSError) as exc:
            rows.append({"width": int(w), "accuracy": None, "error": str(exc)})
    return rows


def sweep_tsv(rows: list[dict]) -> str:
    """Plot-ready TSV: one line per (width, condition) pair."""
    lines = ["width\tcondition\taccuracy"]
    for row in rows:
        if row["error"] is not None:
            lines.append(f"{row['width']}\terror\t{row['error']}")
            continue
        for condition, acc in row["accuracy"].items():
            lines.append(f"{row['width']}\t{condition}\t{acc:.6f}")
    return "\n".join(lines)


def config_text(config: TrainConfig) -> str:
    """Human-readable key=value dump of every resolved setting."""
    pairs = [
        ("widths", ",".join(str(w) for w in config.widths)),
        ("filters_per_width", config.filters_per_width),
        ("learning_rate", config.learning_rate),
        ("dropout_rate", config.dropout_rate),
        ("l2_lambda", config.l2_lambda),
        ("batch_size", config.batch_size),
        ("epochs", config.resolved_epochs),
        ("seed", config.seed),
        ("regime", config.regime),
        ("with_energy", config.with_energy),
        ("energy_scale", config.energy_scale),
        ("n_freq", config.n_freq),
        ("masked_pool", config.masked_pool),
        ("regularize_biases", config.regularize_biases),
        ("snrs", ",".join(f"{s:g}" for s in config.snrs)),
        ("copies_per_snr", config.copies_per_snr),
        ("validate_clean_only", config.validate_clean_only),
    ]
    return "\n".join(f"{k}={v}" for k, v in pairs)
