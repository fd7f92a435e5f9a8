"""SGD training loop, step learning-rate schedule, evaluation and checkpoints."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import struct
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .backbone import model_config, model_from_config
from .data import Dataset, batch_order
from .errors import (
    CheckpointMagicError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
    NumericalError,
)
from .metrics import ConfusionMatrix, MetricReport, aggregate, confusion_from_predictions
from .nn import Mode
from .threads import configure_threads

log = logging.getLogger(__name__)

EPOCH_CSV_HEADER = ("epoch", "lr", "mean_train_loss", "train_acc", "test_acc", "epoch_seconds")


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 0.01
    lr_halving_period_epochs: int = 4
    lr_factor: float = 0.5
    epochs: int = 100
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.initial_lr > 0:
            raise ConfigError(f"initial_lr must be > 0, got {self.initial_lr}")
        if not 0 < self.lr_factor <= 1:
            raise ConfigError(f"lr_factor must be in (0, 1], got {self.lr_factor}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_halving_period_epochs < 1:
            raise ConfigError("lr_halving_period_epochs must be >= 1")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("momentum and weight_decay must be non-negative")


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate for 0-based ``epoch``: multiplied by ``lr_factor`` every period."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return cfg.initial_lr * cfg.lr_factor ** (epoch // cfg.lr_halving_period_epochs)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient ``(softmax - onehot) / N``."""
    z = logits.astype(np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = z.shape[0]
    z = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - logsumexp
    loss = -log_probs[np.arange(n), labels].mean()
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), (grad / n).astype(logits.dtype)


def sgd_step(params: dict, grads: dict, lr: float, cfg: TrainConfig, velocity: dict | None = None):
    """In-place momentum SGD: ``v = m*v + g + wd*p; p -= lr*v``.

    Every gradient is checked before any parameter moves, so a non-finite
    gradient leaves the state untouched. Returns ``(params, velocity)``.
    """
    velocity = {} if velocity is None else velocity
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise KeyError(f"no gradient for parameter {name!r}")
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}")
    for name, p in params.items():
        g = grads[name]
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(p)
        v *= cfg.momentum
        v += g
        p -= lr * v
    return params, velocity


class SGD:
    """Momentum SGD over a model's trainable arrays."""

    def __init__(self, model, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.velocity: dict[str, np.ndarray] = {}
        self.steps = 0

    def step(self, lr: float):
        params, grads = {}, {}
        for name, mod, key in self.model.named_arrays(trainable_only=True):
            params[name] = mod.params[key]
            grads[name] = mod.grads.get(key)
            if grads[name] is None:
                raise NumericalError(f"missing gradient for {name}; was backward() called?")
        sgd_step(params, grads, lr, self.cfg, self.velocity)
        self.steps += 1


@dataclass
class EpochStats:
    epoch: int
    mean_train_loss: float
    train_accuracy: float
    test_accuracy: float
    lr: float
    epoch_wall_seconds: float
    steps: int = 0

    def csv_row(self):
        return [
            self.epoch, repr(self.lr), f"{self.mean_train_loss:.8f}", f"{self.train_accuracy:.6f}",
            f"{self.test_accuracy:.6f}", f"{self.epoch_wall_seconds:.3f}",
        ]


def epoch_stats_csv(stats) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EPOCH_CSV_HEADER)
    for s in stats:
        w.writerow(s.csv_row())
    return buf.getvalue()


def epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def predict(model, x) -> np.ndarray:
    # argmax returns the first maximum, so ties go to the lowest class index
    return np.argmax(model.forward(x, Mode.EVAL), axis=1)


def evaluate(model, ds: Dataset, batch_size: int = 256) -> tuple[ConfusionMatrix, MetricReport, float]:
    """Eval-mode confusion matrix, macro metrics, and forward-pass wall time."""
    preds = np.empty(len(ds), dtype=np.int64)
    seconds = 0.0
    for idx in batch_order(len(ds), batch_size, shuffle=False, seed=0):
        x = ds.batch(idx)
        start = time.perf_counter()
        logits = model.forward(x, Mode.EVAL)
        seconds += time.perf_counter() - start
        preds[idx] = np.argmax(logits, axis=1)
    cm = confusion_from_predictions(ds.labels, preds, ds.num_classes, ds.class_names)
    return cm, aggregate(cm), seconds


# -- checkpoints ----------------------------------------------------------------

CHECKPOINT_MAGIC = b"VEAC"
CHECKPOINT_VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 0x0D, np.dtype("<f8"): 0x0E}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}
VELOCITY_PREFIX = "optimizer.velocity."


@dataclass
class Checkpoint:
    config: dict
    tensors: OrderedDict = field(default_factory=OrderedDict)

    @property
    def epoch(self) -> int:
        return int(self.config.get("epoch", 0))

    @property
    def rng_state(self) -> dict:
        return self.config.get("rng", {})

    def model_state(self) -> OrderedDict:
        return OrderedDict((k, v) for k, v in self.tensors.items() if not k.startswith(VELOCITY_PREFIX))

    def velocity(self) -> dict:
        n = len(VELOCITY_PREFIX)
        return {k[n:]: v for k, v in self.tensors.items() if k.startswith(VELOCITY_PREFIX)}

    @classmethod
    def from_model(cls, model, optimizer: SGD | None = None, train_cfg: TrainConfig | None = None,
                   epoch: int = 0, extra: dict | None = None) -> "Checkpoint":
        config = {"architecture": model_config(model), "epoch": epoch}
        if train_cfg is not None:
            config["train"] = asdict(train_cfg)
            config["rng"] = {"seed": train_cfg.seed, "next_epoch": epoch}
        if extra:
            config.update(extra)
        tensors = OrderedDict((k, v.copy()) for k, v in model.state_dict().items())
        if optimizer is not None:
            for k, v in optimizer.velocity.items():
                tensors[VELOCITY_PREFIX + k] = v.copy()
        return cls(config, tensors)

    def to_bytes(self) -> bytes:
        text = json.dumps(self.config, sort_keys=True).encode("utf-8")
        parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION), struct.pack("<I", len(text)), text]
        for name, arr in self.tensors.items():
            arr = np.asarray(arr)
            le = arr.dtype.newbyteorder("<")
            if le not in _DTYPE_CODES:
                raise ValueError(f"cannot store dtype {arr.dtype} for {name}")
            raw_name = name.encode("utf-8")
            parts.append(struct.pack("<I", len(raw_name)) + raw_name)
            parts.append(struct.pack("<BB", _DTYPE_CODES[le], arr.ndim))
            parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            parts.append(np.ascontiguousarray(arr, dtype=le).tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Checkpoint":
        view = memoryview(buf)
        pos = 0

        def take(n, what):
            nonlocal pos
            if pos + n > len(view):
                raise CheckpointTruncatedError(
                    f"truncated payload: {what} needs {n} bytes at offset {pos}, file has {len(view)}"
                )
            out = view[pos : pos + n]
            pos += n
            return out

        if len(view) >= 4 and bytes(view[:4]) != CHECKPOINT_MAGIC:
            raise CheckpointMagicError(f"bad magic {bytes(view[:4])!r}, expected {CHECKPOINT_MAGIC!r}")
        take(4, "magic")
        (version,) = struct.unpack("<I", take(4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointVersionError(f"checkpoint version {version}, this build reads {CHECKPOINT_VERSION}")
        (text_len,) = struct.unpack("<I", take(4, "config length"))
        config = json.loads(bytes(take(text_len, "config text")).decode("utf-8"))
        tensors = OrderedDict()
        while pos < len(view):
            (name_len,) = struct.unpack("<I", take(4, "name length"))
            name = bytes(take(name_len, "name")).decode("utf-8")
            code, ndim = struct.unpack("<BB", take(2, f"{name} header"))
            if code not in _CODE_DTYPES:
                raise CheckpointTruncatedError(f"unknown dtype code 0x{code:02x} for {name}")
            dims = struct.unpack(f"<{ndim}I", take(4 * ndim, f"{name} dims"))
            dtype = _CODE_DTYPES[code]
            raw = take(math.prod(dims) * dtype.itemsize, f"{name} data")
            tensors[name] = np.frombuffer(raw, dtype=dtype).astype(dtype.newbyteorder("=")).reshape(dims)
        return cls(config, tensors)


def save_checkpoint(model, path, optimizer: SGD | None = None, train_cfg: TrainConfig | None = None,
                    epoch: int = 0, extra: dict | None = None) -> Checkpoint:
    ckpt = Checkpoint.from_model(model, optimizer, train_cfg, epoch, extra)
    Path(path).write_bytes(ckpt.to_bytes())
    return ckpt


def read_checkpoint(path) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes())


def restore(ckpt: Checkpoint, model=None, optimizer: SGD | None = None):
    """Load checkpoint tensors into ``model`` (built from the stored config if None)."""
    if model is None:
        model = model_from_config(ckpt.config["architecture"])
    state = ckpt.model_state()
    own = model.state_dict()
    for name, arr in own.items():
        if name not in state:
            raise CheckpointShapeError(f"checkpoint lacks tensor {name}")
        if state[name].shape != arr.shape:
            raise CheckpointShapeError(
                f"shape mismatch for {name}: checkpoint {state[name].shape} vs model {arr.shape}"
            )
    extra = sorted(set(state) - set(own))
    if extra:
        raise CheckpointShapeError(f"checkpoint has tensors the model lacks: {extra[:5]}")
    model.load_state_dict(state)
    if optimizer is not None:
        optimizer.velocity = {k: v.copy() for k, v in ckpt.velocity().items()}
    return model


def load_checkpoint(path, model=None, optimizer: SGD | None = None):
    return restore(read_checkpoint(path), model, optimizer)


# -- training loop ------------------------------------------------------------------

@dataclass
class TrainResult:
    stats: list[EpochStats]
    checkpoint: Checkpoint
    train_seconds: float
    optimizer: SGD


def train(model, train_ds: Dataset, test_ds: Dataset | None, cfg: TrainConfig, on_epoch=None) -> TrainResult:
    """Run ``cfg.epochs`` epochs of shuffled minibatch SGD, evaluating after each.

    ``on_epoch(stats)`` is called after every epoch. Raises ``NumericalError``
    naming the epoch and batch when the loss stops being finite.
    """
    configure_threads()
    if train_ds.num_classes != model.num_classes:
        raise ConfigError(
            f"dataset has {train_ds.num_classes} classes but model head has {model.num_classes}"
        )
    opt = SGD(model, cfg)
    history = []
    total = 0.0
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        start = time.perf_counter()
        loss_sum, correct, steps = 0.0, 0, 0
        for b, idx in enumerate(batch_order(len(train_ds), cfg.batch_size, True, epoch_seed(cfg.seed, epoch))):
            x, y = train_ds.batch(idx), train_ds.labels[idx]
            logits = model.forward(x, Mode.TRAIN)
            loss, grad = cross_entropy(logits, y)
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch} batch {b}")
            model.zero_grad()
            model.backward(grad)
            opt.step(lr)
            steps += 1
            loss_sum += loss * len(idx)
            correct += int((np.argmax(logits, axis=1) == y).sum())
        elapsed = time.perf_counter() - start
        total += elapsed
        test_acc = evaluate(model, test_ds)[1].accuracy if test_ds is not None else float("nan")
        stats = EpochStats(epoch, loss_sum / len(train_ds), correct / len(train_ds), test_acc, lr, elapsed, steps)
        history.append(stats)
        log.info("epoch %d lr=%g loss=%.4f train_acc=%.4f test_acc=%.4f (%.1fs)",
                 epoch, lr, stats.mean_train_loss, stats.train_accuracy, test_acc, elapsed)
        if on_epoch is not None:
            on_epoch(stats)
    ckpt = Checkpoint.from_model(model, opt, cfg, epoch=cfg.epochs)
    return TrainResult(history, ckpt, total, opt)
