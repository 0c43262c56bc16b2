"""Accelerator-free backend: softmax regression over word uni- and bi-gram counts."""

from __future__ import annotations

import numpy as np
from scipy import sparse
from sklearn.feature_extraction.text import CountVectorizer

from .core import (
    ClassifierConfig,
    StoryDataset,
    TrainedClassifier,
    accuracy,
    check_datasets,
    train_with_early_stopping,
)

TOKEN_PATTERN = r"(?u)\b\w+\b"


def make_vectorizer(vocabulary=None) -> CountVectorizer:
    return CountVectorizer(ngram_range=(1, 2), lowercase=True, token_pattern=TOKEN_PATTERN, vocabulary=vocabulary)


class ReferenceClassifier(TrainedClassifier):
    backend = "reference"

    def __init__(self, vocabulary: dict[str, int], weights, bias, label_vocabulary, config, training_curve=()):
        super().__init__(label_vocabulary, config, training_curve)
        self.vocabulary = dict(vocabulary)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self._vectorizer = make_vectorizer(self.vocabulary)

    def score_texts(self, texts):
        X = self._vectorizer.transform(texts)
        return np.asarray(X @ self.weights) + self.bias


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class _Adam:
    def __init__(self, shapes, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mhat = m / (1 - self.b1**self.t)
            vhat = v / (1 - self.b2**self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def fit_reference(train: StoryDataset, validation: StoryDataset, config: ClassifierConfig = ClassifierConfig()) -> ReferenceClassifier:
    """Multinomial logistic regression trained with Adam and validation early stopping."""
    check_datasets(train, validation)
    vec = make_vectorizer()
    X = sparse.csr_matrix(vec.fit_transform(train.texts), dtype=np.float64)
    Xv = vec.transform(validation.texts)
    y = train.targets()
    n, d = X.shape
    c = len(train.label_vocabulary)
    Y = np.zeros((n, c))
    Y[np.arange(n), y] = 1.0

    W = np.zeros((d, c))
    b = np.zeros(c)
    opt = _Adam([W.shape, b.shape], config.reference_learning_rate)
    rng = np.random.default_rng(config.seed)
    bs = max(1, config.reference_batch_size)

    def run_epoch(epoch):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            Xb = X[idx]
            P = _softmax(np.asarray(Xb @ W) + b)
            total += -np.log(np.clip(P[np.arange(len(idx)), y[idx]], 1e-12, None)).sum()
            G = (P - Y[idx]) / len(idx)
            gW = np.asarray(Xb.T @ G) + config.reference_l2 * W
            opt.step([W, b], [gW, G.sum(axis=0)])
        return total / n

    labels = train.label_vocabulary

    def val_accuracy():
        pred = np.argmax(np.asarray(Xv @ W) + b, axis=1)
        return accuracy([labels[i] for i in pred], validation.labels)

    best, curve = train_with_early_stopping(
        run_epoch,
        val_accuracy,
        lambda: (W.copy(), b.copy()),
        config.max_epochs,
        config.patience_epochs,
    )
    return ReferenceClassifier(vec.vocabulary_, best[0], best[1], labels, config, curve)
