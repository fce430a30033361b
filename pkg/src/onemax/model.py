"""Three-layer 1-max pooling convolutional network with analytic gradients.

Architecture: Q groups of P time-convolution filters (each filter spans
all input rows and w columns), ReLU, per-filter 1-max pooling over the
valid (un-padded) time range, dropout on the pooled vector, softmax.
Gradients are hand-derived for exactly this shape — the 1-max pool makes
them cheap, since each filter's gradient flows through a single column
window of the input.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .optim import fnv1a

CHECKPOINT_MAGIC = b"1MAX"
CHECKPOINT_VERSION = 1

PROB_FLOOR = 1e-300


class CheckpointFormatError(Exception):
    """Raised when a model checkpoint file is malformed or corrupt."""


@dataclass
class FilterBank:
    """Q width-groups of P filters each; weights[q] has shape [P, input_rows, widths[q]]."""

    widths: tuple[int, ...]
    filters_per_width: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if not self.widths:
            raise ValueError("need at least one filter width")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be >= 1, got {self.widths}")
        if any(a >= b for a, b in zip(self.widths, self.widths[1:])):
            raise ValueError(f"widths must be strictly increasing, got {self.widths}")
        if not (len(self.weights) == len(self.biases) == len(self.widths)):
            raise ValueError("widths, weights, biases must have one entry per group")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        rows = self.weights[0].shape[1] if self.weights[0].ndim == 3 else -1
        p = self.filters_per_width
        for q, (w, wt, b) in enumerate(zip(self.widths, self.weights, self.biases)):
            if wt.shape != (p, rows, w):
                raise ValueError(
                    f"group {q}: weight shape {wt.shape}, expected {(p, rows, w)}"
                )
            if b.shape != (p,):
                raise ValueError(f"group {q}: bias shape {b.shape}, expected ({p},)")

    @property
    def n_groups(self) -> int:
        return len(self.widths)

    @property
    def input_rows(self) -> int:
        return self.weights[0].shape[1]

    @property
    def pooled_dim(self) -> int:
        return self.filters_per_width * self.n_groups


@dataclass
class SoftmaxParams:
    """Output layer: weight matrix [n_classes, pooled_dim] and bias vector [n_classes]."""

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError(f"softmax weights must be 2-d, got shape {self.weights.shape}")
        if self.biases.shape != (self.weights.shape[0],):
            raise ValueError(
                f"softmax bias shape {self.biases.shape} does not match "
                f"{self.weights.shape[0]} classes"
            )


@dataclass
class ModelParams:
    """Complete parameter set of the network."""

    bank: FilterBank
    softmax: SoftmaxParams
    n_classes: int

    def __post_init__(self):
        if self.softmax.weights.shape != (self.n_classes, self.bank.pooled_dim):
            raise ValueError(
                f"softmax weights {self.softmax.weights.shape} inconsistent with "
                f"{self.n_classes} classes x pooled dim {self.bank.pooled_dim}"
            )

    @property
    def input_rows(self) -> int:
        return self.bank.input_rows

    def blocks(self) -> list[tuple[str, np.ndarray]]:
        """Ordered (name, array) parameter blocks; arrays are live references."""
        out = []
        for q in range(self.bank.n_groups):
            out.append((f"conv{q}.weights", self.bank.weights[q]))
            out.append((f"conv{q}.biases", self.bank.biases[q]))
        out.append(("softmax.weights", self.softmax.weights))
        out.append(("softmax.biases", self.softmax.biases))
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            bank=FilterBank(
                widths=self.bank.widths,
                filters_per_width=self.bank.filters_per_width,
                weights=[w.copy() for w in self.bank.weights],
                biases=[b.copy() for b in self.bank.biases],
            ),
            softmax=SoftmaxParams(
                weights=self.softmax.weights.copy(),
                biases=self.softmax.biases.copy(),
            ),
            n_classes=self.n_classes,
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(arr)) for _, arr in self.blocks())


@dataclass
class ForwardTrace:
    """Intermediate values of one forward pass, kept for the backward pass."""

    pre_relu: list[np.ndarray] = field(repr=False)   # per group [P, L_q]
    post_relu: list[np.ndarray] = field(repr=False)  # per group [P, L_q]
    argmax: list[np.ndarray]                         # per group [P] positions
    pooled: np.ndarray                               # [P*Q], post-ReLU maxima
    dropout_mask: np.ndarray | None                  # [P*Q] of {0,1}, train mode only
    keep_prob: float
    softmax_input: np.ndarray                        # pooled vector entering softmax
    logits: np.ndarray
    y_hat: np.ndarray


@dataclass
class Gradients:
    """d(loss)/d(theta), shaped exactly like the ModelParams they differentiate."""

    conv_weights: list[np.ndarray]
    conv_biases: list[np.ndarray]
    softmax_weights: np.ndarray
    softmax_biases: np.ndarray

    def blocks(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for q in range(len(self.conv_weights)):
            out.append((f"conv{q}.weights", self.conv_weights[q]))
            out.append((f"conv{q}.biases", self.conv_biases[q]))
        out.append(("softmax.weights", self.softmax_weights))
        out.append(("softmax.biases", self.softmax_biases))
        return out

    def arrays(self) -> list[np.ndarray]:
        return [arr for _, arr in self.blocks()]


def zero_gradients(params: ModelParams) -> Gradients:
    return Gradients(
        conv_weights=[np.zeros_like(w) for w in params.bank.weights],
        conv_biases=[np.zeros_like(b) for b in params.bank.biases],
        softmax_weights=np.zeros_like(params.softmax.weights),
        softmax_biases=np.zeros_like(params.softmax.biases),
    )


def init_params(
    n_classes: int,
    input_rows: int,
    widths: tuple[int, ...],
    filters_per_width: int,
    seed: int,
) -> ModelParams:
    """Seeded initialization: weights uniform in [-s, s] with
    s = sqrt(6 / (fan_in + fan_out)), biases zero.

    For a filter group fan_in = input_rows * width and fan_out is the
    filter count; for the softmax layer fan_in is the pooled dimension
    and fan_out the class count.
    """
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    rng = np.random.default_rng(seed)
    widths = tuple(sorted(int(w) for w in widths))
    p = filters_per_width
    weights, biases = [], []
    for w in widths:
        s = np.sqrt(6.0 / (input_rows * w + p))
        weights.append(rng.uniform(-s, s, size=(p, input_rows, w)))
        biases.append(np.zeros(p))
    pooled_dim = p * len(widths)
    s = np.sqrt(6.0 / (pooled_dim + n_classes))
    softmax = SoftmaxParams(
        weights=rng.uniform(-s, s, size=(n_classes, pooled_dim)),
        biases=np.zeros(n_classes),
    )
    return ModelParams(
        bank=FilterBank(widths=widths, filters_per_width=p, weights=weights, biases=biases),
        softmax=softmax,
        n_classes=n_classes,
    )


def conv_time_valid(sif: np.ndarray, filter_weights: np.ndarray, bias: float) -> np.ndarray:
    """Valid time-only correlation of one filter, plus bias, through ReLU.

    a[i] = max(0, bias + sum_{k,l} sif[k, i+l] * filter_weights[k, l])
    for i = 0 .. T - w. No kernel flip.
    """
    sif = np.asarray(sif, dtype=np.float64)
    filter_weights = np.asarray(filter_weights, dtype=np.float64)
    if sif.ndim != 2 or filter_weights.ndim != 2:
        raise ValueError("sif and filter_weights must both be 2-d")
    if sif.shape[0] != filter_weights.shape[0]:
        raise ValueError(
            f"row mismatch: input has {sif.shape[0]} rows, filter has {filter_weights.shape[0]}"
        )
    w = filter_weights.shape[1]
    if sif.shape[1] < w:
        raise ValueError(f"input has {sif.shape[1]} columns, shorter than filter width {w}")
    windows = np.lib.stride_tricks.sliding_window_view(sif, (sif.shape[0], w))[0]
    pre = np.einsum("lkw,kw->l", windows, filter_weights) + bias
    return np.maximum(pre, 0.0)


def one_max_pool(feature_map: np.ndarray, valid_len: int) -> tuple[float, int]:
    """Max over feature_map[:valid_len] and the earliest index attaining it.

    Positions at or beyond valid_len come from zero-padding and are never
    pooled.
    """
    feature_map = np.asarray(feature_map, dtype=np.float64)
    if not 1 <= valid_len <= len(feature_map):
        raise ValueError(
            f"valid_len must be in [1, {len(feature_map)}], got {valid_len}"
        )
    idx = int(np.argmax(feature_map[:valid_len]))
    return float(feature_map[idx]), idx


def pad_to_min(sif: np.ndarray, min_cols: int) -> tuple[np.ndarray, int]:
    """Right-pad with zero columns up to min_cols; true_len records the original width."""
    sif = np.asarray(sif, dtype=np.float64)
    if min_cols < 1:
        raise ValueError(f"min_cols must be >= 1, got {min_cols}")
    true_len = sif.shape[1]
    if true_len >= min_cols:
        return sif, true_len
    padded = np.zeros((sif.shape[0], min_cols))
    padded[:, :true_len] = sif
    return padded, true_len


def forward(
    params: ModelParams,
    sif: np.ndarray,
    true_len: int,
    mode: str = "eval",
    dropout_rate: float = 0.5,
    rng_seed: int = 0,
    masked: bool = True,
) -> ForwardTrace:
    """One forward pass.

    Each width-w group pools over valid_len = max(1, true_len - w + 1)
    positions (or the whole feature map with masked=False). In masked
    mode the convolution itself is restricted to the true-length columns
    rather than computed over the padding and discarded: einsum's
    reduction chunking depends on operand extents, so running it over
    the padded width can perturb even the kept positions by an ulp.
    Restricting the operand makes padding-neutrality exact by
    construction. Train mode applies inverted dropout to the pooled
    vector: units are kept with probability 1 - dropout_rate and scaled
    by 1/(1 - dropout_rate), so eval mode needs no rescaling.
    """
    sif = np.asarray(sif, dtype=np.float64)
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
    if sif.shape[0] != params.input_rows:
        raise ValueError(
            f"input has {sif.shape[0]} rows, model expects {params.input_rows}"
        )
    t = sif.shape[1]
    if not 1 <= true_len <= t:
        raise ValueError(f"true_len must be in [1, {t}], got {true_len}")
    if t < max(params.bank.widths):
        raise ValueError(
            f"input has {t} columns, narrower than the widest filter "
            f"({max(params.bank.widths)}); pad with pad_to_min first"
        )

    if masked:
        # one contiguous copy whose shape and strides depend only on the
        # true content, never on how far the storage happens to be padded
        content = np.ascontiguousarray(
            sif[:, : max(true_len, max(params.bank.widths))]
        )
    pre_list, post_list, argmax_list, pooled_parts = [], [], [], []
    for q, w in enumerate(params.bank.widths):
        source = content[:, : max(true_len, w)] if masked else sif
        windows = np.lib.stride_tricks.sliding_window_view(source, (sif.shape[0], w))[0]
        pre = np.einsum("lkw,pkw->pl", windows, params.bank.weights[q])
        pre += params.bank.biases[q][:, None]
        post = np.maximum(pre, 0.0)
        idx = post.argmax(axis=1)
        pooled_parts.append(post[np.arange(post.shape[0]), idx])
        pre_list.append(pre)
        post_list.append(post)
        argmax_list.append(idx)

    pooled = np.concatenate(pooled_parts)
    if mode == "train" and dropout_rate > 0.0:
        keep_prob = 1.0 - dropout_rate
        rng = np.random.default_rng(rng_seed)
        mask = (rng.random(pooled.shape[0]) >= dropout_rate).astype(np.float64)
        softmax_input = pooled * mask / keep_prob
    else:
        keep_prob = 1.0
        mask = None
        softmax_input = pooled

    logits = params.softmax.weights @ softmax_input + params.softmax.biases
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    y_hat = exp / exp.sum()

    return ForwardTrace(
        pre_relu=pre_list,
        post_relu=post_list,
        argmax=argmax_list,
        pooled=pooled,
        dropout_mask=mask,
        keep_prob=keep_prob,
        softmax_input=softmax_input,
        logits=logits,
        y_hat=y_hat,
    )


def regularizer(params: ModelParams, l2_lambda: float, regularize_biases: bool = False) -> float:
    """(lambda/2) * sum of squared weights; biases included only on request."""
    if l2_lambda == 0.0:
        return 0.0
    total = sum(float(np.sum(w * w)) for w in params.bank.weights)
    total += float(np.sum(params.softmax.weights**2))
    if regularize_biases:
        total += sum(float(np.sum(b * b)) for b in params.bank.biases)
        total += float(np.sum(params.softmax.biases**2))
    return 0.5 * l2_lambda * total


def loss(
    trace: ForwardTrace,
    target_class: int,
    params: ModelParams,
    l2_lambda: float,
    regularize_biases: bool = False,
) -> float:
    """Cross-entropy -log(y_hat[target]) plus the L2 penalty.

    Computed via the log-softmax identity on the logits, which stays
    finite even when the reported probability underflows; a probability
    of exactly 0 is clamped to 1e-300 and flagged with a warning.
    """
    if not 0 <= target_class < len(trace.y_hat):
        raise ValueError(
            f"target_class {target_class} out of range for {len(trace.y_hat)} classes"
        )
    if trace.y_hat[target_class] == 0.0:
        warnings.warn(
            f"probability for class {target_class} underflowed to 0; clamped",
            RuntimeWarning,
            stacklevel=2,
        )
        ce = -np.log(PROB_FLOOR)
    else:
        shifted = trace.logits - trace.logits.max()
        ce = float(np.log(np.sum(np.exp(shifted))) - shifted[target_class])
    return ce + regularizer(params, l2_lambda, regularize_biases)


def backward(
    params: ModelParams,
    trace: ForwardTrace,
    sif: np.ndarray,
    target_class: int,
    l2_lambda: float,
    regularize_biases: bool = False,
) -> Gradients:
    """Exact gradients of loss() for one sample.

    The softmax layer sees (y_hat - onehot) x softmax_input; the dropout
    mask and 1/keep scale apply on the way back exactly as they did
    forward. Each conv filter's gradient flows only through the column
    window that won its 1-max pool, and is zero when that window's
    pre-activation was clipped by the ReLU. The L2 term contributes
    lambda * theta for every regularized parameter.
    """
    sif = np.asarray(sif, dtype=np.float64)
    if sif.shape[0] != params.input_rows:
        raise ValueError(
            f"input has {sif.shape[0]} rows, model expects {params.input_rows}"
        )
    if len(trace.pooled) != params.bank.pooled_dim:
        raise ValueError(
            f"trace pooled dim {len(trace.pooled)} does not match model "
            f"{params.bank.pooled_dim}"
        )
    grads = zero_gradients(params)

    dlogits = trace.y_hat.copy()
    dlogits[target_class] -= 1.0
    grads.softmax_weights[:] = np.outer(dlogits, trace.softmax_input)
    grads.softmax_biases[:] = dlogits
    dpooled = params.softmax.weights.T @ dlogits
    if trace.dropout_mask is not None:
        dpooled = dpooled * trace.dropout_mask / trace.keep_prob

    p = params.bank.filters_per_width
    for q, w in enumerate(params.bank.widths):
        dvals = dpooled[q * p : (q + 1) * p]
        idx = trace.argmax[q]
        pre_at_max = trace.pre_relu[q][np.arange(p), idx]
        live = pre_at_max > 0.0
        gw, gb = grads.conv_weights[q], grads.conv_biases[q]
        for j in np.nonzero(live)[0]:
            t0 = idx[j]
            gw[j] = dvals[j] * sif[:, t0 : t0 + w]
            gb[j] = dvals[j]

    if l2_lambda != 0.0:
        for q in range(params.bank.n_groups):
            grads.conv_weights[q] += l2_lambda * params.bank.weights[q]
        grads.softmax_weights += l2_lambda * params.softmax.weights
        if regularize_biases:
            for q in range(params.bank.n_groups):
                grads.conv_biases[q] += l2_lambda * params.bank.biases[q]
            grads.softmax_biases += l2_lambda * params.softmax.biases
    return grads


def finite_difference_gradients(
    params: ModelParams,
    sif: np.ndarray,
    true_len: int,
    target_class: int,
    l2_lambda: float,
    h: float = 1e-5,
    mode: str = "eval",
    dropout_rate: float = 0.5,
    rng_seed: int = 0,
    regularize_biases: bool = False,
    masked: bool = True,
) -> list[np.ndarray]:
    """Central finite differences of loss() over every parameter.

    Independent of backward(); only forward() and loss() are exercised.
    Returns one array per parameter block, in blocks() order. In train
    mode the same rng_seed is used for every evaluation so the dropout
    mask is held fixed.
    """
    work = params.copy()

    def eval_loss() -> float:
        trace = forward(
            work, sif, true_len, mode=mode,
            dropout_rate=dropout_rate, rng_seed=rng_seed, masked=masked,
        )
        return loss(trace, target_class, work, l2_lambda, regularize_biases)

    out = []
    for _, arr in work.blocks():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = eval_loss()
            flat[i] = orig - h
            down = eval_loss()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        out.append(g)
    return out


def save_checkpoint(params: ModelParams, path) -> None:
    """Write a model checkpoint; round-trips bit-exactly via load_checkpoint."""
    body = struct.pack(
        "<IIII",
        CHECKPOINT_VERSION,
        params.n_classes,
        params.input_rows,
        params.bank.n_groups,
    )
    for q, w in enumerate(params.bank.widths):
        body += struct.pack("<II", w, params.bank.filters_per_width)
        body += np.ascontiguousarray(params.bank.weights[q], dtype="<f8").tobytes()
        body += np.ascontiguousarray(params.bank.biases[q], dtype="<f8").tobytes()
    body += np.ascontiguousarray(params.softmax.weights, dtype="<f8").tobytes()
    body += np.ascontiguousarray(params.softmax.biases, dtype="<f8").tobytes()
    payload = CHECKPOINT_MAGIC + body
    with open(path, "wb") as f:
        f.write(payload + struct.pack("<Q", fnv1a(payload)))


def load_checkpoint(path) -> ModelParams:
    """Read a checkpoint written by save_checkpoint, verifying the checksum."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(CHECKPOINT_MAGIC) + 16 + 8:
        raise CheckpointFormatError(f"{path}: file too short ({len(raw)} bytes)")
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {raw[:4]!r}")
    payload, (stored,) = raw[:-8], struct.unpack("<Q", raw[-8:])
    if fnv1a(payload) != stored:
        raise CheckpointFormatError(f"{path}: checksum mismatch")

    pos = 4
    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(payload):
            raise CheckpointFormatError(f"{path}: truncated (needed {n} more bytes)")
        chunk = payload[pos : pos + n]
        pos += n
        return chunk

    version, n_classes, input_rows, n_groups = struct.unpack("<IIII", take(16))
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    if n_groups == 0 or n_classes < 2 or input_rows == 0:
        raise CheckpointFormatError(
            f"{path}: implausible header (classes={n_classes}, rows={input_rows}, groups={n_groups})"
        )
    widths, weights, biases = [], [], []
    p = None
    for _ in range(n_groups):
        w, group_p = struct.unpack("<II", take(8))
        if p is None:
            p = group_p
        elif group_p != p:
            raise CheckpointFormatError(f"{path}: filter count varies across groups")
        wt = np.frombuffer(take(group_p * input_rows * w * 8), dtype="<f8")
        weights.append(wt.reshape(group_p, input_rows, w).astype(np.float64))
        biases.append(np.frombuffer(take(group_p * 8), dtype="<f8").astype(np.float64))
        widths.append(w)
    pooled_dim = p * n_groups
    sw = np.frombuffer(take(n_classes * pooled_dim * 8), dtype="<f8")
    sb = np.frombuffer(take(n_classes * 8), dtype="<f8").astype(np.float64)
    if pos != len(payload):
        raise CheckpointFormatError(f"{path}: {len(payload) - pos} trailing bytes")
    try:
        params = ModelParams(
            bank=FilterBank(
                widths=tuple(widths), filters_per_width=p,
                weights=weights, biases=biases,
            ),
            softmax=SoftmaxParams(
                weights=sw.reshape(n_classes, pooled_dim).astype(np.float64), biases=sb
            ),
            n_classes=n_classes,
        )
    except ValueError as exc:
        raise CheckpointFormatError(f"{path}: inconsistent contents: {exc}") from exc
    if not params.all_finite():
        raise CheckpointFormatError(f"{path}: non-finite parameter values")
    return params
