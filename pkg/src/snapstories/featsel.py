"""Feature design for stories: temporal features, tabular encoding, importance ranking."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from datetime import timedelta
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import DegenerateInputError, SchemaError
from .eventlog import (
    AttributeDescriptor,
    AttributeKind,
    EventLog,
    LabeledPrefix,
    _is_missing,
    log_prefixes,
)

TIME_FROM_CASE_START = "time from case start"
TIME_FROM_PREVIOUS = "time from previous activity"
TEMPORAL_FEATURES = (TIME_FROM_CASE_START, TIME_FROM_PREVIOUS)

HISTORY = "activity history"
HISTORY_PREFIX = "history::"
TARGET = "__next_activity__"

DEFAULT_THRESHOLD = 0.02
DEFAULT_MAX_COUNT = 6


@dataclass(frozen=True)
class TemporalFeatures:
    time_from_case_start: timedelta
    time_from_previous: timedelta

    def as_dict(self) -> dict[str, timedelta]:
        return {TIME_FROM_CASE_START: self.time_from_case_start, TIME_FROM_PREVIOUS: self.time_from_previous}


def derive_temporal_features(prefix: LabeledPrefix | Sequence) -> TemporalFeatures:
    events = prefix.prefix if isinstance(prefix, LabeledPrefix) else tuple(prefix)
    if not events:
        raise ValueError("prefix must be non-empty")
    last = events[-1].timestamp
    if len(events) == 1:
        return TemporalFeatures(timedelta(0), timedelta(0))
    return TemporalFeatures(last - events[0].timestamp, last - events[-2].timestamp)


_UNITS = (
    (timedelta(minutes=2), 1, "second"),
    (timedelta(hours=2), 60, "minute"),
    (timedelta(days=2), 3600, "hour"),
    (None, 86400, "day"),
)


def render_duration(delta: timedelta) -> str:
    """Whole-number duration text: ``"45 seconds"``, ``"12 days"``.

    Units switch at 2 minutes, 2 hours and 2 days; values are floored.
    """
    seconds = max(delta.total_seconds(), 0.0)
    for limit, size, unit in _UNITS:
        if limit is None or delta < limit:
            n = int(seconds // size)
            return f"{n} {unit}" if n == 1 else f"{n} {unit}s"
    raise AssertionError("unreachable")


# --- tabular encoding -------------------------------------------------------


@dataclass
class TabularDataset:
    """One row per labeled prefix; ``sources`` maps each column to its log attribute."""

    frame: pd.DataFrame
    target: pd.Series
    sources: dict[str, str]

    @property
    def classes(self) -> list[str]:
        return sorted(set(self.target))


def value_frequencies(log: EventLog, name: str) -> dict:
    counts = Counter(
        e.attributes.get(name)
        for t in log.traces
        for e in t.events
        if not _is_missing(e.attributes.get(name))
    )
    total = sum(counts.values())
    return {v: c / total for v, c in counts.items()} if total else {}


def frequency_encode(
    log: EventLog,
    schema: Sequence[AttributeDescriptor] | None = None,
    *,
    fit_log: EventLog | None = None,
) -> TabularDataset:
    """Encode every labeled prefix of ``log`` as a numeric row.

    Categorical attributes of the prefix's last event become the relative
    frequency of that value among events of ``fit_log`` (default: ``log``);
    numeric attributes pass through; the activity history becomes one count
    column per activity. Values unseen in ``fit_log`` or missing encode as NaN.
    Free-text, timestamp and identifier attributes are not encoded.
    """
    schema = list(schema if schema is not None else log.schema)
    fit_log = fit_log or log
    if not log.traces:
        raise SchemaError("cannot encode an empty log")
    categorical = [a.name for a in schema if a.kind is AttributeKind.CATEGORICAL]
    numeric = [a.name for a in schema if a.kind is AttributeKind.NUMERIC]
    freqs = {name: value_frequencies(fit_log, name) for name in categorical}
    activities = sorted(fit_log.activity_vocabulary | log.activity_vocabulary)

    rows, target = [], []
    for p in log_prefixes(log):
        attrs = p.last.attributes
        row = {}
        for name in categorical:
            row[name] = freqs[name].get(attrs.get(name), np.nan)
        for name in numeric:
            v = attrs.get(name)
            row[name] = np.nan if _is_missing(v) else float(v)
        hist = Counter(e.activity for e in p.prefix)
        for a in activities:
            row[HISTORY_PREFIX + a] = float(hist.get(a, 0))
        rows.append(row)
        target.append(p.label)

    columns = categorical + numeric + [HISTORY_PREFIX + a for a in activities]
    frame = pd.DataFrame(rows, columns=columns, dtype=float)
    sources = {c: c for c in categorical + numeric}
    sources.update({HISTORY_PREFIX + a: HISTORY for a in activities})
    return TabularDataset(frame, pd.Series(target, name=TARGET), sources)


# --- ranking and selection ----------------------------------------------------


@dataclass
class ImportanceReport:
    scores: dict[str, float]

    def ranked(self) -> list[tuple[str, float]]:
        return sorted(self.scores.items(), key=lambda kv: (-kv[1], kv[0]))

    def to_json(self) -> str:
        return json.dumps({"scores": self.scores}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ImportanceReport":
        return cls({k: float(v) for k, v in json.loads(text)["scores"].items()})


def rank_features(
    tabular: TabularDataset,
    *,
    seed: int = 0,
    n_estimators: int = 100,
    max_depth: int = 6,
    learning_rate: float = 0.3,
) -> ImportanceReport:
    """Fit a gradient-boosted tree ensemble and aggregate total gain per source attribute.

    Scores are normalized to sum to 1. History-count columns are pooled under
    :data:`HISTORY`; columns with identical encodings share their gain equally.
    """
    from xgboost import XGBClassifier

    classes = tabular.classes
    if len(classes) < 2:
        raise DegenerateInputError(f"target has a single class ({classes[0]!r}); nothing to rank")
    index = {c: i for i, c in enumerate(classes)}
    y = tabular.target.map(index).to_numpy()
    full = tabular.frame.to_numpy(dtype=np.float32)
    # exact greedy splitting always credits the first of several identical
    # columns, so fit one representative and share its gain with the twins
    groups: dict[bytes, list[int]] = {}
    for j in range(full.shape[1]):
        groups.setdefault(full[:, j].tobytes(), []).append(j)
    members = list(groups.values())
    X = full[:, [m[0] for m in members]]

    model = XGBClassifier(
        n_estimators=n_estimators,
        max_depth=max_depth,
        learning_rate=learning_rate,
        random_state=seed,
        n_jobs=1,
        tree_method="exact",
        objective="binary:logistic" if len(classes) == 2 else "multi:softprob",
    )
    model.fit(X, y)
    gain = model.get_booster().get_score(importance_type="total_gain")

    scores = {src: 0.0 for src in dict.fromkeys(tabular.sources.values())}
    for fname, g in gain.items():
        group = members[int(fname[1:])]
        for j in group:
            scores[tabular.sources[tabular.frame.columns[j]]] += float(g) / len(group)
    total = sum(scores.values())
    if total <= 0:
        uniform = 1.0 / len(scores)
        return ImportanceReport({k: uniform for k in scores})
    return ImportanceReport({k: v / total for k, v in scores.items()})


@dataclass
class SelectedFeatures:
    """Attributes a story mentions.

    ``activity`` names the log's activity attribute; it is always covered by the
    story's activity-sequence clause rather than by its own placeholder.
    """

    ranked: list[str] = field(default_factory=list)
    forced_text: list[str] = field(default_factory=list)
    temporal: list[str] = field(default_factory=lambda: list(TEMPORAL_FEATURES))
    activity: str = "activity"

    def __post_init__(self):
        overlap = set(self.ranked) & set(self.forced_text)
        if overlap:
            raise SchemaError(f"features both ranked and forced: {sorted(overlap)}")

    @property
    def story_features(self) -> list[str]:
        """Attribute placeholders a template must cover."""
        return [f for f in self.ranked + self.forced_text if f != self.activity]

    @property
    def names(self) -> list[str]:
        return [*self.story_features, self.activity]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SelectedFeatures":
        return cls(**json.loads(text))


def select_features(
    report: ImportanceReport,
    schema: Sequence[AttributeDescriptor],
    threshold: float = DEFAULT_THRESHOLD,
    max_count: int = DEFAULT_MAX_COUNT,
    *,
    activity: str = "activity",
) -> SelectedFeatures:
    free_text = [a.name for a in schema if a.kind is AttributeKind.FREE_TEXT]
    candidates = [
        (name, score) for name, score in report.ranked() if name != HISTORY and name not in free_text
    ]
    ranked = [name for name, score in candidates if score >= threshold][:max_count]
    return SelectedFeatures(ranked, free_text, list(TEMPORAL_FEATURES), activity)


def save_json(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text + "\n", encoding="utf-8")
