"""Small numpy classifier: per-input embedding or one-hot, dense ReLU layers, sigmoid output.

Inputs are integer ids, one per (sub)column.  Every input's vocabulary
includes a trailing wildcard slot, so an input with ``n`` real values has
encoding size ``n + 1``.  One-hot inputs are not materialized: their block of
the first dense layer is indexed directly, which is numerically identical to a
one-hot vector times the weight matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

BYTES_PER_PARAM = 4


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class Embedding:
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("embedding dim must be >= 1")


@dataclass(frozen=True)
class OneHot:
    pass


Encoding = Union[Embedding, OneHot]


def default_encoding(size: int, onehot_max: int = 64, min_dim: int = 4, max_dim: int = 32) -> Encoding:
    """One-hot for small vocabularies, otherwise an embedding sized by log2(size)."""
    if size <= onehot_max:
        return OneHot()
    dim = math.ceil(math.log2(size)) * 2
    return Embedding(min(max(dim, min_dim), max_dim))


@dataclass
class ModelConfig:
    hidden_layers: list[int] = field(default_factory=lambda: [64])
    encodings: Optional[list[Encoding]] = None
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 5
    min_delta: float = 1e-4
    holdout_fraction: float = 0.2
    seed: int = 0
    onehot_max: int = 64
    embed_min_dim: int = 4
    embed_max_dim: int = 32

    def __post_init__(self):
        if not self.hidden_layers or any(w < 1 for w in self.hidden_layers):
            raise ValueError("need at least one hidden layer of width >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class Model:
    """Parameters live in ``self.params``; names are stable and ordered."""

    def __init__(self, input_sizes: Sequence[int], encodings: Sequence[Encoding],
                 hidden_layers: Sequence[int], params: dict[str, np.ndarray]):
        if len(input_sizes) != len(encodings):
            raise ValueError("one encoding per input required")
        self.input_sizes = [int(s) for s in input_sizes]
        self.encodings = list(encodings)
        self.hidden_layers = [int(w) for w in hidden_layers]
        self.params = params
        self.offsets: list[int] = []
        off = 0
        for size, enc in zip(self.input_sizes, self.encodings):
            self.offsets.append(off)
            off += enc.dim if isinstance(enc, Embedding) else size
        self.concat_width = off

    @property
    def dtype(self):
        return self.params["W1"].dtype

    def copy(self, dtype=None) -> "Model":
        params = {k: v.astype(dtype or v.dtype, copy=True) for k, v in self.params.items()}
        return Model(self.input_sizes, self.encodings, self.hidden_layers, params)

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def memory_bytes(self) -> int:
        return BYTES_PER_PARAM * self.param_count()

    def memory_mb(self) -> float:
        return self.memory_bytes() / 2**20

    def embedding_param_count(self) -> int:
        return int(sum(p.size for k, p in self.params.items() if k.startswith("E")))

    # -- forward / backward ------------------------------------------------

    def _check_ids(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        if ids.shape[1] != len(self.input_sizes):
            raise ValueError(f"expected {len(self.input_sizes)} inputs, got {ids.shape[1]}")
        sizes = np.asarray(self.input_sizes)
        if (ids < 0).any() or (ids >= sizes).any():
            raise ValueError("id out of encoding range")
        return ids

    def _forward(self, ids: np.ndarray):
        p = self.params
        W1 = p["W1"]
        z = np.broadcast_to(p["b1"], (ids.shape[0], W1.shape[1])).copy()
        embedded = {}
        for i, (enc, off) in enumerate(zip(self.encodings, self.offsets)):
            col = ids[:, i]
            if isinstance(enc, Embedding):
                e = p[f"E{i}"][col]
                embedded[i] = e
                z += e @ W1[off : off + enc.dim]
            else:
                z += W1[off + col]
        cache = [(z, None)]
        a = np.maximum(z, 0)
        for j in range(2, len(self.hidden_layers) + 1):
            z = a @ p[f"W{j}"] + p[f"b{j}"]
            cache.append((z, a))
            a = np.maximum(z, 0)
        logit = (a @ p["Wout"])[:, 0] + p["bout"][0]
        return logit, a, cache, embedded

    def logits(self, ids) -> np.ndarray:
        return self._forward(self._check_ids(ids))[0]

    def predict_proba(self, ids) -> np.ndarray:
        return sigmoid(self.logits(ids).astype(np.float64))

    def forward(self, ids) -> float:
        """Probability for a single encoded tuple."""
        return float(self.predict_proba(np.asarray(ids).reshape(1, -1))[0])

    def loss_and_grads(self, ids: np.ndarray, labels: np.ndarray):
        """Mean binary cross-entropy and its gradient w.r.t. every parameter."""
        ids = self._check_ids(ids)
        p = self.params
        y = np.asarray(labels, dtype=self.dtype)
        logit, a_last, cache, embedded = self._forward(ids)
        n = ids.shape[0]
        loss = float(np.mean(bce_with_logits(logit, y)))

        grads: dict[str, np.ndarray] = {}
        dlogit = ((sigmoid(logit) - y) / n).astype(self.dtype)[:, None]
        grads["Wout"] = a_last.T @ dlogit
        grads["bout"] = dlogit.sum(axis=0)
        da = dlogit @ p["Wout"].T
        for j in range(len(self.hidden_layers), 1, -1):
            z, a_prev = cache[j - 1]
            dz = da * (z > 0)
            grads[f"W{j}"] = a_prev.T @ dz
            grads[f"b{j}"] = dz.sum(axis=0)
            da = dz @ p[f"W{j}"].T
        z1 = cache[0][0]
        dz = da * (z1 > 0)
        grads["b1"] = dz.sum(axis=0)
        W1 = p["W1"]
        dW1 = np.zeros_like(W1)
        for i, (enc, off) in enumerate(zip(self.encodings, self.offsets)):
            col = ids[:, i]
            if isinstance(enc, Embedding):
                dW1[off : off + enc.dim] = embedded[i].T @ dz
                dE = np.zeros_like(p[f"E{i}"])
                np.add.at(dE, col, dz @ W1[off : off + enc.dim].T)
                grads[f"E{i}"] = dE
            else:
                np.add.at(dW1, off + col, dz)
        grads["W1"] = dW1
        return loss, grads


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x.dtype, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bce_with_logits(logit: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.maximum(logit, 0) - logit * y + np.log1p(np.exp(-np.abs(logit)))


def init_model(config: ModelConfig, input_sizes: Sequence[int], dtype=np.float32) -> Model:
    """Glorot-uniform weights, zero biases, deterministic under ``config.seed``."""
    encodings = config.encodings or [
        default_encoding(s, config.onehot_max, config.embed_min_dim, config.embed_max_dim)
        for s in input_sizes
    ]
    if len(encodings) != len(input_sizes):
        raise ValueError("one encoding per input required")
    rng = np.random.default_rng(config.seed)

    def glorot(fan_in, fan_out):
        s = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-s, s, size=(fan_in, fan_out)).astype(dtype)

    params: dict[str, np.ndarray] = {}
    width = 0
    for i, (size, enc) in enumerate(zip(input_sizes, encodings)):
        if isinstance(enc, Embedding):
            params[f"E{i}"] = glorot(size, enc.dim)
            width += enc.dim
        else:
            width += size
    fan_in = width
    for j, w in enumerate(config.hidden_layers, start=1):
        params[f"W{j}"] = glorot(fan_in, w)
        params[f"b{j}"] = np.zeros(w, dtype=dtype)
        fan_in = w
    params["Wout"] = glorot(fan_in, 1)
    params["bout"] = np.zeros(1, dtype=dtype)
    return Model(input_sizes, encodings, config.hidden_layers, params)


def closed_form_param_count(input_sizes: Sequence[int], encodings: Sequence[Encoding],
                            hidden_layers: Sequence[int]) -> int:
    emb = sum(s * e.dim for s, e in zip(input_sizes, encodings) if isinstance(e, Embedding))
    width = sum(e.dim if isinstance(e, Embedding) else s for s, e in zip(input_sizes, encodings))
    dense = 0
    for w in [*hidden_layers, 1]:
        dense += (width + 1) * w
        width = w
    return emb + dense


@dataclass
class TrainingReport:
    final_loss: float
    epochs_run: int
    accuracy_on_holdout: float
    holdout_loss: float
    loss_history: list[float] = field(default_factory=list)
    holdout_loss_history: list[float] = field(default_factory=list)


def stratified_split(labels: np.ndarray, fraction: float, rng: np.random.Generator):
    """Indices ``(train, holdout)`` with ``fraction`` of each class held out."""
    labels = np.asarray(labels)
    train, hold = [], []
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        k = int(round(len(idx) * fraction))
        hold.append(idx[:k])
        train.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(hold))


def evaluate(model: Model, ids: np.ndarray, labels: np.ndarray, batch: int = 8192) -> tuple[float, float]:
    """Mean BCE loss and accuracy at threshold 0.5."""
    if len(labels) == 0:
        return float("nan"), float("nan")
    losses, correct = 0.0, 0
    for s in range(0, len(labels), batch):
        lg = model.logits(ids[s : s + batch])
        y = labels[s : s + batch]
        losses += float(bce_with_logits(lg.astype(np.float64), y).sum())
        correct += int(((lg >= 0) == (y == 1)).sum())
    return losses / len(labels), correct / len(labels)


def train(model: Model, ids: np.ndarray, labels: np.ndarray, config: ModelConfig,
          holdout: tuple[np.ndarray, np.ndarray] | None = None) -> TrainingReport:
    """Minibatch SGD with momentum on binary cross-entropy.

    Stops after ``patience`` epochs without a holdout-loss improvement larger
    than ``min_delta`` and restores the best parameters seen.  Without an
    explicit ``holdout`` a stratified slice of the data is held out.
    """
    ids = np.asarray(ids, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(np.unique(labels)) < 2:
        raise TrainingError("degenerate training set")
    rng = np.random.default_rng(config.seed + 1)
    if holdout is None and config.holdout_fraction > 0:
        tr, ho = stratified_split(labels, config.holdout_fraction, rng)
        holdout = (ids[ho], labels[ho])
        ids, labels = ids[tr], labels[tr]
    dtype = model.dtype
    lr = dtype.type(config.learning_rate)
    mu = dtype.type(config.momentum)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}

    best_loss = math.inf
    best_params = {k: v.copy() for k, v in model.params.items()}
    stale = 0
    history, ho_history = [], []
    n = len(labels)
    epochs = 0
    for epoch in range(config.max_epochs):
        epochs = epoch + 1
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, config.batch_size):
            batch = order[s : s + config.batch_size]
            loss, grads = model.loss_and_grads(ids[batch], labels[batch])
            total += loss * len(batch)
            for k, g in grads.items():
                v = velocity[k]
                v *= mu
                v -= lr * g
                model.params[k] += v
        history.append(total / n)
        monitor = evaluate(model, *holdout)[0] if holdout is not None else history[-1]
        ho_history.append(monitor)
        if monitor < best_loss - config.min_delta:
            best_loss = monitor
            best_params = {k: v.copy() for k, v in model.params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.params.update(best_params)
    if holdout is not None:
        ho_loss, ho_acc = evaluate(model, *holdout)
    else:
        ho_loss, ho_acc = evaluate(model, ids, labels)
    final_loss = evaluate(model, ids, labels)[0]
    return TrainingReport(final_loss, epochs, ho_acc, ho_loss, history, ho_history)


def gradient_check(model: Model, ids, labels, step: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs on a float64 copy of ``model`` so the finite differences are clean.
    """
    m = model.copy(np.float64)
    ids = np.asarray(ids, dtype=np.int64).reshape(-1, len(m.input_sizes))
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    _, grads = m.loss_and_grads(ids, labels)
    worst = 0.0
    for name, param in m.params.items():
        g = grads[name]
        flat = param.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = m.loss_and_grads(ids, labels)[0]
            flat[k] = orig - step
            down = m.loss_and_grads(ids, labels)[0]
            flat[k] = orig
            numeric = (up - down) / (2 * step)
            denom = max(abs(numeric), abs(gflat[k]), 1e-8)
            worst = max(worst, abs(numeric - gflat[k]) / denom)
    return worst
