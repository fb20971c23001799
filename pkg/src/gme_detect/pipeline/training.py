"""Minibatch Adam training and evaluation with FP/FN accounting."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..atomic import atomic_write_bytes
from ..featurize import DEFAULT_NORMALIZATION, NormStats, normalize_features
from ..gmn_oracle import ENTANGLED, NOT_DETECTED
from ..nn import AdamState, Model, adam_step, build_model, checkpoint_bytes
from ..rng import derive_seed, make_rng
from .data import Dataset

log = logging.getLogger(__name__)

DEFAULT_EPOCHS = {"dense": 200, "ghz_diagonal": 50}

# class index <-> label
CLASS_OF_LABEL = {ENTANGLED: 0, NOT_DETECTED: 1}
LABEL_OF_CLASS = np.array([ENTANGLED, NOT_DETECTED], dtype=np.int8)


def labels_to_classes(labels: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(labels) == ENTANGLED, 0, 1).astype(np.intp)


class TrainingDiverged(ArithmeticError):
    def __init__(self, message: str, checkpoint: bytes | None = None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TrainConfig:
    max_epochs: int = 50
    learning_rate: float = 1e-3
    l2: float = 1e-4
    batch_size: int = 128
    shuffle_each_epoch: bool = True
    seed: int = 0
    se_enabled: bool = False
    reduction: int = 4
    channels: tuple[int, int] = (16, 32)
    normalization: str | None = None  # None: default for the feature kind
    recalibrate_bn: bool = True

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.learning_rate <= 0 or self.batch_size < 2 or self.l2 < 0:
            raise ValueError("learning_rate and batch_size must be positive, l2 non-negative")
        self.channels = tuple(int(c) for c in self.channels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


@dataclass
class History:
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.loss)

    def to_csv(self) -> str:
        rows = ["epoch,loss,accuracy"]
        rows += [f"{i + 1},{lo!r},{ac!r}" for i, (lo, ac) in enumerate(zip(self.loss, self.accuracy))]
        return "\n".join(rows) + "\n"


@dataclass
class TrainResult:
    model: Model
    norm: NormStats
    adam: AdamState
    history: History
    config: TrainConfig

    def checkpoint(self, meta: dict | None = None) -> bytes:
        return checkpoint_bytes(self.model, self.norm, self.adam, {"train_config": self.config.to_dict(), **(meta or {})})


def _batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    parts = [order[i : i + batch_size] for i in range(0, order.size, batch_size)]
    # batchnorm cannot train on a single sample; fold it into the previous batch
    if len(parts) > 1 and parts[-1].size == 1:
        last = parts.pop()
        parts[-1] = np.concatenate([parts[-1], last])
    return parts


def train(
    train_set: Dataset,
    config: TrainConfig,
    diagnostic_path: str | None = None,
) -> TrainResult:
    """Train the reference network on ``train_set``.

    Normalization statistics are fitted on ``train_set`` only, pooled or
    per position according to ``config.normalization``.  After the last
    epoch the batchnorm running statistics are recomputed over the whole
    training split (``config.recalibrate_bn``), since the moving averages
    mix minibatch estimates from earlier parameters.  On a
    non-finite loss a diagnostic checkpoint is written to ``diagnostic_path``
    (if given) and :class:`TrainingDiverged` is raised.
    """
    if len(train_set) < 2:
        raise ValueError("training needs at least 2 samples")
    mode = config.normalization or DEFAULT_NORMALIZATION[train_set.kind]
    norm = NormStats.fit(train_set.features, mode)
    x = normalize_features(train_set.features, norm)
    y = labels_to_classes(train_set.labels)
    model = build_model(x.shape[1], config.se_enabled, derive_seed(config.seed, 1), config.channels, config.reduction)
    adam = AdamState(lr=config.learning_rate)
    params = model.param_dict()
    shuffle_rng = make_rng(derive_seed(config.seed, 2))
    history = History()
    order = np.arange(len(train_set))
    for epoch in range(config.max_epochs):
        if config.shuffle_each_epoch:
            order = shuffle_rng.permutation(len(train_set))
        total, correct = 0.0, 0
        for idx in _batches(order, config.batch_size):
            loss, probs, _ = model.loss_and_grads(x[idx], y[idx], config.l2)
            if not math.isfinite(loss):
                blob = checkpoint_bytes(model, norm, adam, {"diverged_epoch": epoch + 1, "train_config": config.to_dict()})
                if diagnostic_path:
                    atomic_write_bytes(diagnostic_path, blob)
                raise TrainingDiverged(f"loss became {loss} in epoch {epoch + 1}", blob)
            adam_step(params, model.grad_dict(), adam)
            total += loss * idx.size
            correct += int(np.sum(np.argmax(probs, axis=1) == y[idx]))
        history.loss.append(total / len(train_set))
        history.accuracy.append(correct / len(train_set))
        log.debug("epoch %d loss %.5f acc %.4f", epoch + 1, history.loss[-1], history.accuracy[-1])
    if config.recalibrate_bn:
        model.recalibrate_batchnorm(x)
    return TrainResult(model, norm, adam, history, config)


@dataclass
class EvalReport:
    total: int
    correct: int
    fn_count: int
    fp_count: int
    per_class: dict[str, dict[str, int]]
    history: History | None = None

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    def check(self) -> None:
        if self.fn_count + self.fp_count + self.correct != self.total:
            raise AssertionError("fn + fp + correct != total")

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "correct": self.correct,
            "total": self.total,
            "fn_count": self.fn_count,
            "fp_count": self.fp_count,
            "per_class": self.per_class,
        }


def report_from_predictions(true_labels: np.ndarray, predicted_labels: np.ndarray) -> EvalReport:
    """Confusion counts; FN = entangled predicted not-detected, FP = the reverse."""
    t = np.asarray(true_labels)
    p = np.asarray(predicted_labels)
    if t.shape != p.shape:
        raise ValueError("prediction and label arrays differ in shape")
    fn = int(np.sum((t == ENTANGLED) & (p == NOT_DETECTED)))
    fp = int(np.sum((t == NOT_DETECTED) & (p == ENTANGLED)))
    correct = int(np.sum(t == p))
    per_class = {
        f"{lab:+d}": {"count": int(np.sum(t == lab)), "correct": int(np.sum((t == lab) & (p == lab)))}
        for lab in (ENTANGLED, NOT_DETECTED)
    }
    rep = EvalReport(int(t.size), correct, fn, fp, per_class)
    rep.check()
    return rep


def predict_labels(model: Model, norm: NormStats, features: np.ndarray) -> np.ndarray:
    x = normalize_features(features, norm)
    return LABEL_OF_CLASS[model.predict(x)]


def evaluate(model: Model, norm: NormStats, test_set: Dataset, history: History | None = None) -> EvalReport:
    if test_set.feature_length != model.spec.feature_length:
        raise ValueError(
            f"dataset feature length {test_set.feature_length} does not match the model ({model.spec.feature_length})"
        )
    rep = report_from_predictions(test_set.labels, predict_labels(model, norm, test_set.features))
    rep.history = history
    return rep
