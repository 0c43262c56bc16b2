from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import DegenerateInputError, SchemaError
from ..storygen import Story


@dataclass(frozen=True)
class ClassifierConfig:
    backbone_id: str = "bert-base-cased"
    dropout: float = 0.5
    learning_rate: float = 1e-5
    batch_size: int = 4
    max_epochs: int = 15
    patience_epochs: int = 3
    max_input_tokens: int = 512
    seed: int = 0
    # "mlp": dense -> ReLU -> dense; "literal": dense -> ReLU on the class scores
    head: str = "mlp"
    allow_download: bool = False
    # reference backend only
    reference_learning_rate: float = 0.05
    reference_batch_size: int = 32
    reference_l2: float = 1e-5

    def __post_init__(self):
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0 < self.patience_epochs < self.max_epochs:
            raise ValueError("need 0 < patience_epochs < max_epochs")
        if self.head not in ("mlp", "literal"):
            raise ValueError(f"unknown head {self.head!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierConfig":
        known = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class StoryDataset:
    samples: list[Story]
    label_vocabulary: list[str]

    def __post_init__(self):
        self.label_vocabulary = list(self.label_vocabulary)
        if self.label_vocabulary != sorted(set(self.label_vocabulary)):
            raise SchemaError("label vocabulary must be sorted and duplicate-free")
        index = self.index
        bad = {s.label for s in self.samples if s.label not in index}
        if bad:
            raise SchemaError(f"labels outside the vocabulary: {sorted(bad)}")

    @property
    def index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.label_vocabulary)}

    @property
    def texts(self) -> list[str]:
        return [s.text for s in self.samples]

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.samples]

    def targets(self) -> np.ndarray:
        index = self.index
        return np.array([index[s.label] for s in self.samples], dtype=np.int64)

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class PredictionDistribution:
    scores: np.ndarray
    labels: tuple[str, ...]

    def argmax(self) -> str:
        # np.argmax returns the first maximum: ties go to the lowest index
        return self.labels[int(np.argmax(self.scores))]

    def top_k(self, k: int) -> list[str]:
        if not 1 <= k <= len(self.labels):
            raise ValueError(f"k must lie in [1, {len(self.labels)}], got {k}")
        order = np.argsort(-self.scores, kind="stable")
        return [self.labels[i] for i in order[:k]]


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float


class TrainedClassifier:
    """Common surface of fitted backends: batched scoring plus helpers."""

    backend = "base"

    def __init__(self, label_vocabulary: Sequence[str], config: ClassifierConfig, training_curve=()):
        self.label_vocabulary = list(label_vocabulary)
        self.config = config
        self.training_curve = list(training_curve)

    def score_texts(self, texts: Sequence[str]) -> np.ndarray:
        raise NotImplementedError

    def predict(self, text: str) -> PredictionDistribution:
        if not text or not text.strip():
            raise ValueError("cannot predict from empty text")
        return PredictionDistribution(self.score_texts([text])[0], tuple(self.label_vocabulary))

    def predict_top_k(self, text: str, k: int) -> list[str]:
        return self.predict(text).top_k(k)

    def predict_labels(self, texts: Sequence[str]) -> list[str]:
        if not texts:
            return []
        scores = self.score_texts(list(texts))
        return [self.label_vocabulary[i] for i in np.argmax(scores, axis=1)]

    @property
    def best_val_accuracy(self) -> float:
        return max((r.val_accuracy for r in self.training_curve), default=float("nan"))


def predict(model: TrainedClassifier, story_text: str) -> PredictionDistribution:
    return model.predict(story_text)


def predict_top_k(model: TrainedClassifier, story_text: str, k: int) -> list[str]:
    return model.predict_top_k(story_text, k)


def check_datasets(train: StoryDataset, validation: StoryDataset) -> None:
    if train.label_vocabulary != validation.label_vocabulary:
        raise SchemaError("train and validation label vocabularies differ")
    if not len(train) or not len(validation):
        raise SchemaError("train and validation sets must be non-empty")
    if len(set(train.labels)) < 2:
        raise DegenerateInputError(f"training set has a single class ({train.labels[0]!r})")


def accuracy(predicted: Sequence[str], truth: Sequence[str]) -> float:
    return float(np.mean([p == t for p, t in zip(predicted, truth)])) if truth else float("nan")


def train_with_early_stopping(
    run_epoch: Callable[[int], float],
    val_accuracy: Callable[[], float],
    snapshot: Callable[[], object],
    max_epochs: int,
    patience: int,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[object, list[EpochRecord]]:
    """Generic epoch loop keeping the snapshot with the best validation accuracy.

    Training stops once validation accuracy has not improved on the best seen
    for ``patience`` consecutive epochs.
    """
    best, best_state, stale = -np.inf, None, 0
    curve = []
    for epoch in range(1, max_epochs + 1):
        loss = run_epoch(epoch)
        acc = val_accuracy()
        rec = EpochRecord(epoch, float(loss), float(acc))
        curve.append(rec)
        if on_epoch:
            on_epoch(rec)
        if acc > best:
            best, best_state, stale = acc, snapshot(), 0
        else:
            stale += 1
            if stale >= patience:
                break
    return best_state, curve
