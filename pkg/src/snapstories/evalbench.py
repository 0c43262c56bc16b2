"""Evaluation protocol: case-level folds, metrics, significance tests and experiment runs."""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from . import classify
from .errors import DegenerateInputError, SchemaError
from .eventlog import EventLog, label_vocabulary, log_prefixes
from .featsel import SelectedFeatures, frequency_encode, rank_features, select_features
from .storygen import (
    PLACEHOLDER_RE,
    RenderOptions,
    Story,
    StoryTemplate,
    default_template,
    exclude_features,
    number_activities,
    render_list_of_values,
    render_story,
    validate_template,
)

logger = logging.getLogger(__name__)

VARIANTS = ("story", "list_of_values", "numbered", "no_utterance")


# --- folds ------------------------------------------------------------------------


@dataclass(frozen=True)
class Fold:
    train_cases: tuple[str, ...]
    val_cases: tuple[str, ...]
    test_cases: tuple[str, ...]


@dataclass
class FoldPlan:
    folds: list[Fold]
    seed: int

    def to_json(self) -> str:
        return json.dumps(
            {"seed": self.seed, "folds": [{k: list(v) for k, v in asdict(f).items()} for f in self.folds]},
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "FoldPlan":
        d = json.loads(text)
        return cls([Fold(tuple(f["train_cases"]), tuple(f["val_cases"]), tuple(f["test_cases"])) for f in d["folds"]], d["seed"])


def make_folds(log_or_cases: EventLog | Sequence[str], n_folds: int = 5, seed: int = 0, val_fraction: float = 0.2) -> FoldPlan:
    """Shuffle cases with ``seed``; fold i tests on the i-th slice and splits the rest 80/20 into train/val.

    With the defaults every fold is 64/16/20 train/val/test by case.
    """
    cases = [t.case_id for t in log_or_cases.traces] if isinstance(log_or_cases, EventLog) else list(log_or_cases)
    if len(cases) < n_folds:
        raise SchemaError(f"need at least {n_folds} cases for {n_folds} folds, got {len(cases)}")
    rng = np.random.default_rng(seed)
    order = [cases[i] for i in rng.permutation(len(cases))]
    chunks = np.array_split(np.arange(len(order)), n_folds)
    folds = []
    for chunk in chunks:
        test_idx = set(chunk.tolist())
        test = [order[i] for i in chunk]
        rest = [c for i, c in enumerate(order) if i not in test_idx]
        n_val = int(round(val_fraction * len(rest)))
        folds.append(Fold(tuple(rest[n_val:]), tuple(rest[:n_val]), tuple(test)))
    return FoldPlan(folds, seed)


# --- metrics -------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldMetrics:
    accuracy: float
    weighted_f1: float
    n_test_samples: int


@dataclass
class MetricsReport:
    per_fold: list[FoldMetrics]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([f.accuracy for f in self.per_fold]))

    @property
    def mean_weighted_f1(self) -> float:
        return float(np.mean([f.weighted_f1 for f in self.per_fold]))

    def to_dict(self) -> dict:
        return {
            "per_fold": [asdict(f) for f in self.per_fold],
            "mean_accuracy": self.mean_accuracy,
            "mean_weighted_f1": self.mean_weighted_f1,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricsReport":
        return cls([FoldMetrics(**f) for f in d["per_fold"]])


def weighted_f1(truth: Sequence[str], predicted: Sequence[str]) -> float:
    """Support-weighted mean of per-class F1 over the classes present in ``truth``."""
    n = len(truth)
    support = Counter(truth)
    pred_count = Counter(predicted)
    hits = Counter(t for t, p in zip(truth, predicted) if t == p)
    total = 0.0
    for c, s in support.items():
        tp = hits[c]
        denom = s + pred_count[c]
        f1 = 2 * tp / denom if denom else 0.0
        total += s / n * f1
    return total


def metrics_from_predictions(truth: Sequence[str], predicted: Sequence[str]) -> FoldMetrics:
    if not truth:
        raise SchemaError("cannot score an empty test set")
    acc = sum(t == p for t, p in zip(truth, predicted)) / len(truth)
    return FoldMetrics(float(acc), float(weighted_f1(truth, predicted)), len(truth))


def evaluate(model, test_stories: Sequence[Story]) -> FoldMetrics:
    predicted = model.predict_labels([s.text for s in test_stories])
    return metrics_from_predictions([s.label for s in test_stories], predicted)


# --- Wilcoxon signed-rank -------------------------------------------------------------


@dataclass
class SignificanceReport:
    statistic: float
    p_value: float
    paired_scores_a: list[float]
    paired_scores_b: list[float]
    method: str = "exact"

    def to_dict(self) -> dict:
        return asdict(self)


def _exact_signed_rank_cdf(doubled_ranks: Sequence[int]) -> np.ndarray:
    """Counts of sign assignments per value of twice the positive-rank sum."""
    total = sum(doubled_ranks)
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(scores_a: Sequence[float], scores_b: Sequence[float], exact_max_n: int = 25) -> SignificanceReport:
    """Two-sided Wilcoxon signed-rank test of ``a - b``.

    Zero differences are dropped and tied magnitudes share average ranks. For
    at most ``exact_max_n`` non-zero differences the p-value is exact (the
    conditional null distribution over all sign assignments); beyond that a
    tie-corrected normal approximation is used. The statistic is
    ``min(W+, W-)``.
    """
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if a.shape != b.shape:
        raise SchemaError("paired score vectors must have equal length")
    d = a - b
    d = d[d != 0]
    if d.size == 0:
        raise DegenerateInputError("all paired differences are zero")
    ranks = stats.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    n = d.size
    if n <= exact_max_n:
        doubled = [int(round(2 * r)) for r in ranks]
        counts = _exact_signed_rank_cdf(doubled)
        total = int(sum(counts))
        k = int(round(2 * w_plus))
        lower = int(sum(counts[: k + 1])) / total
        upper = int(sum(counts[k:])) / total
        p = min(1.0, 2 * min(lower, upper))
        method = "exact"
    else:
        _, tie_sizes = np.unique(np.abs(d), return_counts=True)
        mean = n * (n + 1) / 4
        var = n * (n + 1) * (2 * n + 1) / 24 - float(np.sum(tie_sizes**3 - tie_sizes)) / 48
        z = (w_plus - mean) / math.sqrt(var)
        p = float(min(1.0, 2 * stats.norm.sf(abs(z))))
        method = "normal"
    return SignificanceReport(min(w_plus, w_minus), float(p), a.tolist(), b.tolist(), method)


# --- multi-seed confidence intervals ----------------------------------------------------


@dataclass
class SeedStudy:
    per_seed: list[float]
    mean: float
    ci_low: float
    ci_high: float
    confidence: float = 0.95
    reference: float | None = None

    @property
    def reference_outside(self) -> bool | None:
        if self.reference is None:
            return None
        return not (self.ci_low <= self.reference <= self.ci_high)

    @property
    def verdict(self) -> str:
        if self.reference is None:
            return "no reference"
        return "significant" if self.reference_outside else "not significant"

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(reference_outside=self.reference_outside, verdict=self.verdict)
        return d


def t_interval(values: Sequence[float], confidence: float = 0.95) -> tuple[float, float, float]:
    x = np.asarray(values, dtype=float)
    mean = float(x.mean())
    if x.size < 2:
        return mean, mean, mean
    half = float(stats.t.ppf(0.5 + confidence / 2, x.size - 1) * x.std(ddof=1) / math.sqrt(x.size))
    return mean, mean - half, mean + half


def seed_study(runner: Callable[[int], float], n_seeds: int = 25, *, seeds: Iterable[int] | None = None, reference: float | None = None, confidence: float = 0.95) -> SeedStudy:
    """Run a full cross-validation per seed and put a t-based CI on the mean accuracy."""
    seeds = list(seeds) if seeds is not None else list(range(n_seeds))
    values = [float(runner(s)) for s in seeds]
    mean, lo, hi = t_interval(values, confidence)
    return SeedStudy(values, mean, lo, hi, confidence, reference)


# --- reference results -------------------------------------------------------------------


def load_benchmarks(path: str | Path | None = None) -> dict:
    if path is None:
        text = resources.files("snapstories.data").joinpath("benchmarks.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return json.loads(text)["results"]


# --- experiment runs ---------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    n_folds: int = 5
    seed: int = 0
    backend: str = "reference"
    classifier: classify.ClassifierConfig = field(default_factory=classify.ClassifierConfig)
    render: RenderOptions = field(default_factory=RenderOptions)
    utterance_features: list[str] | None = None
    jobs: int = 1
    save_models: bool = True


def strip_placeholders(template: StoryTemplate, names: Iterable[str]) -> StoryTemplate:
    """Remove the placeholders for ``names`` from a template.

    A sentence left without any placeholder is dropped; otherwise only the
    placeholder (with its quotes) is cut out of the sentence.
    """
    from .storygen import _SENTENCE_SPLIT

    names = set(names)
    parts = _SENTENCE_SPLIT.split(template.body)
    kept = []
    for sentence, sep in zip(parts[0::2], parts[1::2] + [""]):
        found = set(PLACEHOLDER_RE.findall(sentence))
        if not found & names:
            kept.append(sentence + sep)
        elif found - names:
            for n in names:
                sentence = sentence.replace(f"'⟨{n}⟩'", "").replace(f"⟨{n}⟩", "")
            sentence = re.sub(r"\s+([,.;:!?])", r"\1", re.sub(r"\s{2,}", " ", sentence))
            sentence = re.sub(r"[,;:]+([.!?])", r"\1", sentence).strip()
            kept.append(sentence + sep)
    return StoryTemplate("".join(kept).strip(), template.source)


def default_utterance_features(features: SelectedFeatures) -> list[str]:
    return [f for f in features.forced_text if "utterance" in f.lower()]


def render_variant(
    log: EventLog,
    variant: str,
    template: StoryTemplate,
    features: SelectedFeatures,
    options: RenderOptions,
    utterance_features: Sequence[str] | None = None,
) -> list[Story]:
    """Render every labeled prefix of ``log`` for one experiment variant."""
    prefixes = log_prefixes(log)
    if variant == "story":
        return [render_story(p, template, features, options) for p in prefixes]
    if variant == "list_of_values":
        return [render_list_of_values(p, features, options) for p in prefixes]
    if variant == "numbered":
        numbered = number_activities(log).apply(options)
        return [render_story(p, template, features, numbered) for p in prefixes]
    if variant == "no_utterance":
        names = list(utterance_features) if utterance_features is not None else default_utterance_features(features)
        reduced = exclude_features(features, names)
        if template.source == "default":
            reduced_template = default_template(reduced)
        else:
            reduced_template = strip_placeholders(template, names)
        return [render_story(p, reduced_template, reduced, options) for p in prefixes]
    raise SchemaError(f"unknown variant {variant!r}; choose from {VARIANTS}")


def _fit_and_score(backend, train, val, test_stories, config, model_path):
    fit = classify.get_backend(backend)
    model = fit(train, val, config)
    if model_path is not None:
        classify.save(model, model_path)
    metrics = evaluate(model, test_stories)
    return metrics, [asdict(r) for r in model.training_curve]


def select_features_for(log: EventLog, threshold: float = 0.02, max_count: int = 6, seed: int = 0) -> tuple[SelectedFeatures, dict]:
    report = rank_features(frequency_encode(log), seed=seed)
    return select_features(report, log.schema, threshold, max_count, activity=log.activity_key), report.scores


def run_experiment(
    log: EventLog,
    variant: str,
    config: ExperimentConfig = ExperimentConfig(),
    *,
    features: SelectedFeatures | None = None,
    template: StoryTemplate | None = None,
    run_dir: str | Path | None = None,
    plan: FoldPlan | None = None,
) -> MetricsReport:
    """Folds -> render -> fit -> evaluate for one variant; artifacts go under ``run_dir``.

    Layout: ``folds.json`` at the root and ``<variant>/stories/fold_i.jsonl``,
    ``<variant>/models/fold_i/model.snapclf``, ``<variant>/metrics.json``.
    """
    if features is None:
        features, _ = select_features_for(log, seed=config.seed)
    if template is None:
        template = default_template(features)
    if template.source != "default" or variant != "no_utterance":
        violations = validate_template(template, features)
        if violations:
            raise SchemaError("template invalid: " + "; ".join(violations))
    plan = plan or make_folds(log, config.n_folds, config.seed)

    stories = render_variant(log, variant, template, features, config.render, config.utterance_features)
    by_case: dict[str, list[Story]] = {}
    for s in stories:
        by_case.setdefault(s.case_id, []).append(s)
    vocab = label_vocabulary(log)

    root = Path(run_dir) if run_dir is not None else None
    vdir = root / variant if root is not None else None
    if root is not None:
        root.mkdir(parents=True, exist_ok=True)
        (root / "folds.json").write_text(plan.to_json() + "\n", encoding="utf-8")

    jobs = []
    for i, fold in enumerate(plan.folds):
        split = {
            "train": [s for c in fold.train_cases for s in by_case[c]],
            "val": [s for c in fold.val_cases for s in by_case[c]],
            "test": [s for c in fold.test_cases for s in by_case[c]],
        }
        model_path = None
        if vdir is not None:
            path = vdir / "stories" / f"fold_{i}.jsonl"
            path.parent.mkdir(parents=True, exist_ok=True)
            with path.open("w", encoding="utf-8") as fh:
                for name, items in split.items():
                    for s in items:
                        fh.write(json.dumps({**s.to_record(), "split": name}, ensure_ascii=False) + "\n")
            if config.save_models:
                model_path = vdir / "models" / f"fold_{i}" / "model.snapclf"
        train = classify.StoryDataset(split["train"], vocab)
        val = classify.StoryDataset(split["val"], vocab)
        jobs.append((config.backend, train, val, split["test"], config.classifier, model_path))

    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_fit_and_score, *zip(*jobs)))
    else:
        results = [_fit_and_score(*job) for job in jobs]

    report = MetricsReport([m for m, _ in results])
    if vdir is not None:
        out = report.to_dict()
        out["variant"] = variant
        out["training_curves"] = [curve for _, curve in results]
        (vdir / "metrics.json").write_text(json.dumps(out, indent=2) + "\n", encoding="utf-8")
    for i, m in enumerate(report.per_fold):
        logger.info("%s fold %d: acc %.4f wF1 %.4f (n=%d)", variant, i, m.accuracy, m.weighted_f1, m.n_test_samples)
    return report


def pooled_significance(per_dataset: Mapping[str, tuple[Sequence[float], float]]) -> SignificanceReport:
    """Wilcoxon over fold scores pooled across datasets, each fold paired with its dataset's reference value."""
    a, b = [], []
    for scores, ref in per_dataset.values():
        a.extend(scores)
        b.extend([ref] * len(scores))
    return wilcoxon_signed_rank(a, b)
