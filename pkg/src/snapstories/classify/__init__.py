"""Story classifiers: a fine-tuned encoder backend and a lightweight reference backend."""

from .core import (
    ClassifierConfig,
    EpochRecord,
    PredictionDistribution,
    StoryDataset,
    TrainedClassifier,
    predict,
    predict_top_k,
    train_with_early_stopping,
)
from .persist import load, save
from .reference import ReferenceClassifier, fit_reference


def fit(train, validation, config=ClassifierConfig(), **kw):
    from .transformer import fit as _fit

    return _fit(train, validation, config, **kw)


BACKENDS = {"transformer": fit, "reference": fit_reference}


def get_backend(name: str):
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown classifier backend {name!r}; choose from {sorted(BACKENDS)}") from None


__all__ = [
    "BACKENDS",
    "ClassifierConfig",
    "EpochRecord",
    "PredictionDistribution",
    "ReferenceClassifier",
    "StoryDataset",
    "TrainedClassifier",
    "fit",
    "fit_reference",
    "get_backend",
    "load",
    "predict",
    "predict_top_k",
    "save",
    "train_with_early_stopping",
]
