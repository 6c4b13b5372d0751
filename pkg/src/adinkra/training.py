"""Training, evaluation and prediction for the custom CNN."""

from __future__ import annotations

import logging
import resource
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .core import GradientTape, adam_step, softmax, softmax_cross_entropy, zero_grad
from .datasets import Dataset, LabelCatalog, LabeledImage, batches, preprocess, read_image
from .errors import ConfigurationError, NonFiniteLossError, PreconditionError, UsageError
from .model import ModelState, forward

log = logging.getLogger(__name__)

PRECISIONS = {"float32": np.float32, "float64": np.float64}


@dataclass
class TrainConfig:
    epochs: int = 50
    optimizer: str = "adam"
    lr: float = 1e-4
    batch_train: int = 32
    batch_pred: int = 4
    workers: int = 4
    seed: int = 0
    checkpoint_every: Optional[int] = None
    early_stop_patience: Optional[int] = None
    precision: str = "float32"

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr >= 0:
            raise ConfigurationError(f"lr must be non-negative, got {self.lr}")
        if self.batch_train < 1 or self.batch_pred < 1 or self.workers < 1:
            raise ConfigurationError("batch sizes and workers must be >= 1")
        if self.optimizer.lower() != "adam":
            raise ConfigurationError(f"unsupported optimizer {self.optimizer!r}")
        if self.precision not in PRECISIONS:
            raise ConfigurationError(f"precision must be one of {sorted(PRECISIONS)}")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    seconds: float
    peak_mem: int


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    initial_val_loss: Optional[float] = None
    initial_val_acc: Optional[float] = None
    best_epoch: Optional[int] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainHistory":
        d = dict(d)
        d["records"] = [EpochRecord(**r) for r in d.get("records", [])]
        return cls(**d)

    @property
    def total_seconds(self) -> float:
        return sum(r.seconds for r in self.records)

    @property
    def peak_mem(self) -> int:
        return max((r.peak_mem for r in self.records), default=peak_rss_bytes())


def peak_rss_bytes() -> int:
    # ru_maxrss is in KiB on Linux
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


@dataclass
class Evaluation:
    accuracy: float
    confusion: np.ndarray
    mean_loss: float


def confusion_accuracy(confusion: np.ndarray) -> float:
    total = confusion.sum()
    return float(np.trace(confusion) / total) if total else 0.0


def evaluate(model: ModelState, data: Dataset, split: str = "test", batch: int = 32,
             workers: int = 1) -> Evaluation:
    """Accuracy, confusion matrix (rows true, columns predicted) and mean loss."""
    n_cls = model.spec.num_classes
    if len(data.indices(split)) == 0:
        raise UsageError(f"split {split!r} is empty")
    confusion = np.zeros((n_cls, n_cls), dtype=np.int64)
    loss_sum, count = 0.0, 0
    for x, y in batches(data, split, batch, workers=workers, size=model.spec.input_size,
                        dtype=model.dtype):
        logits = forward(model, x, training=False).data
        loss_sum += float(softmax_cross_entropy(logits, y).data) * len(y)
        count += len(y)
        np.add.at(confusion, (y, logits.argmax(axis=1)), 1)
    return Evaluation(confusion_accuracy(confusion), confusion, loss_sum / count)


def train(model: ModelState, data: Dataset, cfg: TrainConfig,
          checkpoint_path=None) -> TrainHistory:
    """Mini-batch Adam on the cross-entropy loss.

    After the last epoch the model holds the parameters of the epoch with the
    best validation accuracy (earliest epoch on ties).
    """
    cfg.validate()
    if model.dtype != cfg.dtype:
        raise ConfigurationError(f"model is {model.dtype} but config asks for {cfg.precision}")
    for s in ("train", "val"):
        if len(data.indices(s)) == 0:
            raise UsageError(f"split {s!r} is empty")
    labels = data.labels
    if labels.min() < 0 or labels.max() >= model.spec.num_classes:
        raise PreconditionError("labels fall outside [0, num_classes)")

    size = model.spec.input_size
    history = TrainHistory()
    init = evaluate(model, data, "val", cfg.batch_train, cfg.workers)
    history.initial_val_loss, history.initial_val_acc = init.mean_loss, init.accuracy
    best_acc, best_weights, since_best = -1.0, None, 0

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        loss_sum, correct, seen = 0.0, 0, 0
        epoch_seed = int(np.random.default_rng([cfg.seed, epoch]).integers(2**62))
        stream = batches(data, "train", cfg.batch_train, shuffle=True, seed=epoch_seed,
                         workers=cfg.workers, size=size, dtype=model.dtype)
        for b, (x, y) in enumerate(stream):
            with GradientTape() as tape:
                logits = forward(model, x, training=True, seed=epoch_seed + b)
                loss = softmax_cross_entropy(logits, y)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NonFiniteLossError(epoch, b, value)
            tape.backward(loss)
            adam_step(model.parameters, cfg.lr)
            zero_grad(model.parameters)
            loss_sum += value * len(y)
            correct += int((logits.data.argmax(axis=1) == y).sum())
            seen += len(y)
            # the loss keeps the whole graph reachable; free it before the next forward
            del tape, loss, logits
            if b % 50 == 49:
                log.debug("epoch %d batch %d: running loss %.4f", epoch, b + 1, loss_sum / seen)

        val = evaluate(model, data, "val", cfg.batch_train, cfg.workers)
        rec = EpochRecord(epoch, loss_sum / seen, correct / seen, val.mean_loss, val.accuracy,
                          time.perf_counter() - t0, peak_rss_bytes())
        history.records.append(rec)
        log.info("epoch %d: train loss %.4f acc %.4f | val loss %.4f acc %.4f | %.1fs",
                 epoch, rec.train_loss, rec.train_acc, rec.val_loss, rec.val_acc, rec.seconds)

        if val.accuracy > best_acc:
            best_acc, best_weights, since_best = val.accuracy, model.get_weights(), 0
            history.best_epoch = epoch
        else:
            since_best += 1
        if checkpoint_path is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            from .checkpoint import save_checkpoint
            save_checkpoint(model, history, checkpoint_path)
        if cfg.early_stop_patience is not None and since_best >= cfg.early_stop_patience:
            log.info("early stop after epoch %d", epoch)
            break

    model.set_weights(best_weights)
    return history


@dataclass
class Prediction:
    index: int
    twi_name: str
    english: str
    confidence: float


def predict_logits(model: ModelState, images: np.ndarray, batch: int = 4) -> np.ndarray:
    out = [forward(model, images[i:i + batch], training=False).data
           for i in range(0, len(images), batch)]
    return np.concatenate(out, axis=0)


def prediction_from_logits(logits: np.ndarray, catalog: LabelCatalog) -> Prediction:
    probs = softmax(np.asarray(logits, dtype=np.float64).reshape(-1))
    k = int(np.argmax(probs))  # first maximum wins ties
    e = catalog[k]
    return Prediction(k, e.twi_name, e.english, float(probs[k]))


def predict(model: ModelState, image, catalog: LabelCatalog) -> Prediction:
    """Classify one image (a LabeledImage or a path to a PNG/JPEG file)."""
    if len(catalog) != model.spec.num_classes:
        raise ConfigurationError(
            f"catalog has {len(catalog)} classes but the model predicts {model.spec.num_classes}")
    if not isinstance(image, LabeledImage):
        image = read_image(image)
    x = preprocess(image, model.spec.input_size, model.dtype)[None]
    return prediction_from_logits(forward(model, x, training=False).data[0], catalog)
