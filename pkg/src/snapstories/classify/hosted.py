"""Thin adapter for a hosted generative fine-tuning service.

Only the local halves are implemented: exporting prompt/completion training
files and wrapping a completion callable as a classifier. Uploading, job
management and billing stay with the provider's own tooling.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from ..storygen import Story
from .core import ClassifierConfig, TrainedClassifier

PROMPT_SUFFIX = "\n\nNext activity:"
STOP = "\n"


def export_finetune_file(stories: Iterable[Story], path: str | Path) -> int:
    """Write ``{"prompt", "completion"}`` records; returns the record count."""
    n = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in stories:
            fh.write(json.dumps({"prompt": s.text + PROMPT_SUFFIX, "completion": " " + s.label + STOP}) + "\n")
            n += 1
    return n


class HostedClassifier(TrainedClassifier):
    """Scores are one-hot on the label the remote model completes with."""

    backend = "hosted"

    def __init__(self, complete: Callable[[str], str], label_vocabulary, config=ClassifierConfig()):
        super().__init__(label_vocabulary, config)
        self.complete = complete

    def score_texts(self, texts):
        index = {c.lower(): i for i, c in enumerate(self.label_vocabulary)}
        out = np.zeros((len(texts), len(self.label_vocabulary)))
        for row, text in enumerate(texts):
            answer = self.complete(text + PROMPT_SUFFIX).strip().split(STOP)[0].strip().lower()
            if answer in index:
                out[row, index[answer]] = 1.0
        return out
