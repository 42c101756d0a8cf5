"""Adam, reduce-on-plateau scheduling, best-checkpoint tracking and the
epoch-level training loop."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, NumericError
from .layers import loss as loss_value
from .layers import loss_logit_grad
from .model import Model, save

log = logging.getLogger(__name__)


class Adam:
    """Adam with bias correction; epsilon is added outside the square root."""

    def __init__(self, params: dict, lr=5e-5, beta1=0.9, beta2=0.999, eps=1e-7):
        if lr <= 0:
            raise ArgumentError(f"learning rate must be positive, got {lr}")
        self.params = params
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict):
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None or g.shape != p.shape:
                raise ArgumentError(f"gradient for {name} missing or mis-shaped")
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name}; step aborted")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)

    def state(self) -> dict:
        return {"t": self.t, "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}

    def moment_tensors(self) -> dict:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        return out

    def load(self, state: dict, tensors: dict):
        self.t = int(state["t"])
        self.lr = float(state["lr"])
        self.beta1, self.beta2, self.eps = state["beta1"], state["beta2"], state["eps"]
        for k in self.params:
            self.m[k][...] = tensors[f"adam.m.{k}"]
            self.v[k][...] = tensors[f"adam.v.{k}"]


@dataclass
class ReduceLROnPlateau:
    lr: float = 5e-5
    factor: float = 0.3
    patience: int = 2
    min_lr: float = 1e-8
    min_delta: float = 0.0
    best_loss: float = math.inf
    wait: int = 0

    def update(self, val_loss: float) -> float:
        """Record one epoch's validation loss and return the (possibly reduced) lr."""
        if math.isnan(val_loss):
            raise NumericError("validation loss is NaN")
        if val_loss < self.best_loss - self.min_delta:
            self.best_loss = val_loss
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.wait = 0
        return self.lr

    def state(self) -> dict:
        d = asdict(self)
        if math.isinf(d["best_loss"]):
            d["best_loss"] = None
        return d

    @classmethod
    def from_state(cls, d: dict) -> "ReduceLROnPlateau":
        d = dict(d)
        if d.get("best_loss") is None:
            d["best_loss"] = math.inf
        return cls(**d)


@dataclass
class BestTracker:
    """Keeps the checkpoint with the highest validation accuracy (strict improvements only)."""

    best_val_accuracy: float = 0.0
    best_epoch: int = -1

    def update(self, epoch: int, val_accuracy: float, save_fn=None) -> str:
        if not 0.0 <= val_accuracy <= 1.0:
            raise ArgumentError(f"validation accuracy {val_accuracy} outside [0, 1]")
        if self.best_epoch >= 0 and val_accuracy <= self.best_val_accuracy:
            return "skipped"
        if save_fn is not None:
            save_fn()  # an OSError here leaves the tracker untouched
        self.best_val_accuracy = float(val_accuracy)
        self.best_epoch = int(epoch)
        return "saved"


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float
    saved: bool

    def to_line(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)

    def append(self, rec: EpochRecord):
        self.records.append(rec)

    def lines(self) -> list:
        return [r.to_line() for r in self.records]

    def write(self, path):
        Path(path).write_text("".join(line + "\n" for line in self.lines()))

    @classmethod
    def read(cls, path) -> "TrainingLog":
        recs = [EpochRecord(**json.loads(line)) for line in Path(path).read_text().splitlines() if line]
        return cls(recs)


# --------------------------------------------------------------------------

def encode_targets(labels, task: str, dtype=np.float64) -> np.ndarray:
    """Class ids -> scalar {0,1} targets (binary) or one-hot rows (three_class)."""
    labels = np.asarray(labels, dtype=np.intp)
    if task == "binary":
        if np.any((labels < 0) | (labels > 1)):
            raise ArgumentError("binary labels must be 0 or 1")
        return labels.astype(dtype)
    if task != "three_class":
        raise ArgumentError(f"unsupported task {task!r}")
    n = 3
    if np.any((labels < 0) | (labels >= n)):
        raise ArgumentError(f"labels must lie in [0, {n})")
    return np.eye(n, dtype=dtype)[labels]


def predicted_labels(probs: np.ndarray, threshold=0.5) -> np.ndarray:
    if probs.shape[1] == 1:
        return (probs[:, 0] >= threshold).astype(np.intp)
    return probs.argmax(axis=1)  # lowest index wins ties


def dropout_rng(seed: int, epoch: int, batch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, batch, 1])


def batch_order(n: int, batch_size: int, seed: int, epoch: int) -> list:
    """Seeded per-epoch permutation cut into batches; the last batch may be short."""
    if n <= 0:
        raise ArgumentError("cannot batch an empty split")
    if batch_size < 1:
        raise ArgumentError(f"batch size must be >= 1, got {batch_size}")
    perm = np.random.default_rng([seed, epoch, 0]).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def train_step(model: Model, adam: Adam, x, labels, rng) -> tuple:
    """One forward/backward/update on a batch. Returns (loss, n_correct)."""
    kind = model.spec.loss_kind
    targets = encode_targets(labels, model.spec.task, dtype=model.dtype)
    logits = model.logits(x, train=True, rng=rng)
    probs = model.output.forward(logits, train=True)
    value = float(loss_value(probs, targets, kind))
    if not math.isfinite(value):
        raise NumericError(f"non-finite training loss {value}")
    bundle = model.backward_logits(loss_logit_grad(probs, targets, kind))
    adam.step(bundle.grads)
    correct = int(np.sum(predicted_labels(probs) == np.asarray(labels)))
    return value, correct


def evaluate_split(model: Model, dataset, batch_size=8, threshold=0.5) -> tuple:
    """Inference pass over a dataset. Returns (mean loss, accuracy, true ids, predicted ids)."""
    kind = model.spec.loss_kind
    total = 0.0
    truth, preds = [], []
    n = len(dataset)
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        x, labels = dataset.get(idx)
        probs = model.forward(x, train=False)
        targets = encode_targets(labels, model.spec.task, dtype=model.dtype)
        total += float(loss_value(probs, targets, kind)) * len(idx)
        truth.append(np.asarray(labels))
        preds.append(predicted_labels(probs, threshold))
    truth = np.concatenate(truth)
    preds = np.concatenate(preds)
    return total / n, float(np.mean(truth == preds)), truth, preds


def train_state(epoch, adam, plateau, tracker, seed) -> dict:
    return {
        "epoch": epoch,
        "seed": seed,
        "adam": adam.state(),
        "plateau": plateau.state(),
        "best": asdict(tracker),
    }


def train_loop(
    model: Model,
    train_set,
    val_set,
    epochs: int,
    batch_size: int = 8,
    seed: int = 0,
    lr: float = 5e-5,
    checkpoint_path=None,
    log_path=None,
    plateau: ReduceLROnPlateau | None = None,
    extra_state: dict | None = None,
) -> TrainingLog:
    """Train with Adam, schedule lr on validation loss, keep the best-accuracy checkpoint.

    ``train_set`` / ``val_set`` expose ``len()`` and ``get(indices) -> (x, labels)``.
    When ``log_path`` is given each epoch record is appended as one JSON line.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ArgumentError("training and validation splits must be non-empty")
    if epochs < 0:
        raise ArgumentError("epochs must be >= 0")
    adam = Adam(model.named_parameters(), lr=lr)
    plateau = plateau or ReduceLROnPlateau(lr=lr)
    tracker = BestTracker()
    history = TrainingLog()
    if log_path is not None:
        Path(log_path).write_text("")

    for epoch in range(epochs):
        loss_sum, correct = 0.0, 0
        for b, idx in enumerate(batch_order(len(train_set), batch_size, seed, epoch)):
            x, labels = train_set.get(idx)
            value, ok = train_step(model, adam, x, labels, dropout_rng(seed, epoch, b))
            loss_sum += value * len(idx)
            correct += ok
        train_loss = loss_sum / len(train_set)
        train_acc = correct / len(train_set)

        val_loss, val_acc, _, _ = evaluate_split(model, val_set, batch_size)
        if not math.isfinite(val_loss):
            raise NumericError(f"epoch {epoch + 1}: non-finite validation loss")
        adam.lr = plateau.update(val_loss)

        def write_best():
            if checkpoint_path is not None:
                state = train_state(epoch + 1, adam, plateau, BestTracker(val_acc, epoch + 1), seed)
                state.update(extra_state or {})
                save(model, checkpoint_path, state, adam.moment_tensors())

        status = tracker.update(epoch + 1, val_acc, write_best)
        rec = EpochRecord(epoch + 1, train_loss, train_acc, val_loss, val_acc, adam.lr, status == "saved")
        history.append(rec)
        log.info("epoch %d: %s", epoch + 1, rec.to_line())
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(rec.to_line() + "\n")
    return history
