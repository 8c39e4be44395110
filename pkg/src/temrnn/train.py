"""Mini-batch SGD with a step-decay schedule, checkpoints and stratified folds."""
from __future__ import annotations

import csv
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .models import ModelConfig, SequenceClassifier
from .synth import Dataset

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"DLCK"
CHECKPOINT_VERSION = 1
LOG_COLUMNS = ("epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc")


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 0.01
    decay: float = 0.4
    milestones: tuple = (50, 70, 80)
    batch_size: int = 32
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError(f"milestones must be strictly increasing: {self.milestones}")
        if self.milestones and self.milestones[-1] >= self.epochs:
            raise ValueError(f"milestones {self.milestones} must lie below epochs={self.epochs}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def lr_at(config: TrainConfig, epoch: int) -> float:
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    passed = sum(1 for m in config.milestones if m <= epoch)
    return config.lr * config.decay ** passed


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits.

    Accepts one example (``[2]``, scalar label) or a batch (``[N, 2]``).
    """
    z = np.asarray(logits, dtype=float)
    single = z.ndim == 1
    if single:
        z = z[None]
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = len(z)
    loss = -logp[np.arange(n), y].mean()
    grad = np.exp(logp)
    grad[np.arange(n), y] -= 1.0
    grad /= n
    return float(loss), (grad[0] if single else grad)


def softmax_positive(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    return 1.0 / (1.0 + np.exp(z[..., 0] - z[..., 1]))


def predict_proba(model: SequenceClassifier, data: Dataset, batch_size: int = 128) -> np.ndarray:
    """Probability of the positive class for every sample (inference mode)."""
    out = []
    for s in range(0, len(data), batch_size):
        logits, _ = model.forward(data.inputs[s:s + batch_size], data.distances[s:s + batch_size])
        out.append(softmax_positive(logits))
    return np.concatenate(out)


def _evaluate(model, data, batch_size=128):
    losses, correct = 0.0, 0
    for s in range(0, len(data), batch_size):
        logits, _ = model.forward(data.inputs[s:s + batch_size], data.distances[s:s + batch_size])
        y = data.labels[s:s + batch_size]
        loss, _ = cross_entropy(logits, y)
        losses += loss * len(y)
        correct += int((logits.argmax(axis=1) == y).sum())
    return losses / len(data), correct / len(data)


@dataclass
class TrainState:
    model: SequenceClassifier
    config: TrainConfig
    rng: np.random.Generator
    velocity: dict
    epoch: int = 0
    history: list = field(default_factory=list)


def new_state(model: SequenceClassifier, config: TrainConfig) -> TrainState:
    rng = np.random.default_rng(config.seed)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    return TrainState(model, config, rng, velocity)


def train(config: TrainConfig, dataset: Dataset, model: SequenceClassifier, val: Dataset | None = None,
          state: TrainState | None = None, stop_epoch: int | None = None, log_path=None,
          header: dict | None = None) -> TrainState:
    """Run SGD (with momentum) from ``state`` (or scratch) up to ``stop_epoch``.

    Loss is the batch-mean cross-entropy; momentum follows ``v = mu * v + g;
    p -= lr * v``. Raises :class:`DivergenceError` on a non-finite loss.
    """
    if len(dataset) == 0:
        raise ValueError("empty training set")
    state = state or new_state(model, config)
    stop = config.epochs if stop_epoch is None else stop_epoch
    params, vel, rng = state.model.params, state.velocity, state.rng
    n, bs = len(dataset), config.batch_size
    while state.epoch < stop:
        epoch = state.epoch
        lr = lr_at(config, epoch)
        order = rng.permutation(n)
        tot_loss, tot_correct = 0.0, 0
        for b, start in enumerate(range(0, n, bs)):
            idx = order[start:start + bs]
            logits, cache = state.model.forward(dataset.inputs[idx], dataset.distances[idx], training=True, rng=rng)
            y = dataset.labels[idx]
            loss, dlogits = cross_entropy(logits, y)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}")
            grads = state.model.backward(cache, dlogits)
            for k, g in grads.items():
                v = vel[k]
                v *= config.momentum
                v += g
                params[k] -= lr * v
            tot_loss += loss * len(idx)
            tot_correct += int((logits.argmax(axis=1) == y).sum())
        row = {"epoch": epoch, "lr": lr, "train_loss": tot_loss / n, "train_acc": tot_correct / n,
               "val_loss": "", "val_acc": ""}
        if val is not None and len(val):
            row["val_loss"], row["val_acc"] = _evaluate(state.model, val)
        state.history.append(row)
        log.info("epoch %d lr %.5g loss %.4f acc %.3f", epoch, lr, row["train_loss"], row["train_acc"])
        state.epoch += 1
    if log_path is not None:
        write_log(log_path, state.history, header or {})
    return state


def write_log(path, rows, header: dict) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in header.items():
            fh.write(f"# {k}={v}\n")
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})


def kfold(labels, k: int = 5, seed: int = 0) -> list[np.ndarray]:
    """Stratified folds: each class is shuffled then dealt round-robin."""
    labels = np.asarray(labels)
    n = len(labels)
    if k < 1 or k > n:
        raise ValueError(f"cannot split {n} samples into {k} folds")
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
    return [np.sort(order[i::k]) for i in range(k)]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, state: TrainState, extra: dict | None = None) -> None:
    meta = {
        "model": state.model.config.to_dict(),
        "train": asdict(state.config),
        "epoch": state.epoch,
        "rng_state": state.rng.bit_generator.state,
        "history": state.history,
    }
    if extra:
        meta["extra"] = extra
    blob = json.dumps(meta, sort_keys=True).encode()
    tensors = {**state.model.params, **{f"velocity/{k}": v for k, v in state.velocity.items()}}
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<HI", CHECKPOINT_VERSION, len(blob)) + blob)
        for name in sorted(tensors):
            arr = np.asarray(tensors[name], dtype="<f8")
            key = name.encode()
            fh.write(struct.pack("<H", len(key)) + key + struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> TrainState:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (magic {raw[:4]!r})")
    version, n = struct.unpack_from("<HI", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 10
    meta = json.loads(raw[pos:pos + n])
    pos += n
    tensors = {}
    while pos < len(raw):
        (klen,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + klen].decode()
        pos += klen
        (rank,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{rank}I", raw, pos)
        pos += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
    params = {k: v for k, v in tensors.items() if not k.startswith("velocity/")}
    velocity = {k[len("velocity/"):]: v for k, v in tensors.items() if k.startswith("velocity/")}
    model = SequenceClassifier(ModelConfig(**meta["model"]), params)
    tcfg = TrainConfig(**meta["train"])
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    state = TrainState(model, tcfg, rng, velocity, meta["epoch"], meta.get("history", []))
    state.meta = meta
    return state
