"""Declarative run configuration (one JSON document per run).

Example::

    {
      "dataset": {"path": "logs/bpi13cp.xes", "format": "xes", "name": "BPI13cp"},
      "schema_overrides": {"org:group": "categorical"},
      "feature_selection": {"threshold": 0.02, "max_count": 6},
      "template": {"source": "default"},
      "render": {"window": 10, "missing_policy": "omit_clause"},
      "classifier": {"backend": "reference", "max_epochs": 15},
      "evaluation": {"n_folds": 5, "seed": 0, "variants": ["story", "list_of_values"]},
      "output_dir": "runs/bpi13cp"
    }

For CSV input, ``dataset.column_mapping`` maps ``case_id``, ``activity`` and
``timestamp`` to column names. ``template.source`` is ``default``, ``llm``
(with ``template.llm.endpoint`` / ``model``) or ``manual`` (with
``template.path``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .classify import BACKENDS, ClassifierConfig
from .errors import ConfigError
from .evalbench import VARIANTS, ExperimentConfig
from .storygen import MissingPolicy, RenderOptions


@dataclass
class DatasetConfig:
    path: str
    format: str | None = None
    name: str | None = None
    column_mapping: dict[str, str] | None = None
    rename_map: dict[str, str] | str | None = None
    include_lifecycle: bool = True


@dataclass
class TemplateConfig:
    source: str = "default"
    path: str | None = None
    llm: dict[str, Any] = field(default_factory=dict)
    shot_examples: list[dict] | None = None


@dataclass
class RunConfig:
    dataset: DatasetConfig
    output_dir: str = "runs/default"
    schema_overrides: dict[str, str] = field(default_factory=dict)
    threshold: float = 0.02
    max_count: int = 6
    template: TemplateConfig = field(default_factory=TemplateConfig)
    render: RenderOptions = field(default_factory=RenderOptions)
    backend: str = "reference"
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    n_folds: int = 5
    seed: int = 0
    variants: list[str] = field(default_factory=lambda: ["story"])
    utterance_features: list[str] | None = None
    n_seeds: int = 25
    jobs: int = 1
    base_dir: Path = Path(".")

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    @property
    def out(self) -> Path:
        return self.resolve(self.output_dir)

    def experiment(self, seed: int | None = None) -> ExperimentConfig:
        return ExperimentConfig(
            n_folds=self.n_folds,
            seed=self.seed if seed is None else seed,
            backend=self.backend,
            classifier=self.classifier,
            render=self.render,
            utterance_features=self.utterance_features,
            jobs=self.jobs,
        )

    def validate(self, check_paths: bool = True) -> None:
        if check_paths and not self.resolve(self.dataset.path).exists():
            raise ConfigError(f"dataset path does not exist: {self.dataset.path}")
        if not self.variants:
            raise ConfigError("evaluation.variants must be non-empty")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ConfigError(f"unknown variant(s) {bad}; choose from {list(VARIANTS)}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}; choose from {sorted(BACKENDS)}")
        if self.template.source not in ("default", "llm", "manual"):
            raise ConfigError(f"template.source must be default, llm or manual, got {self.template.source!r}")
        if self.template.source == "manual":
            if not self.template.path:
                raise ConfigError("template.source=manual needs template.path")
            if check_paths and not self.resolve(self.template.path).exists():
                raise ConfigError(f"template path does not exist: {self.template.path}")
        fmt = self.dataset.format or Path(self.dataset.path).suffix.lstrip(".").lower()
        if fmt == "csv" and not self.dataset.column_mapping:
            raise ConfigError("CSV datasets need dataset.column_mapping (case_id, activity, timestamp)")

    def to_dict(self) -> dict:
        return {
            "dataset": vars(self.dataset),
            "output_dir": self.output_dir,
            "schema_overrides": self.schema_overrides,
            "feature_selection": {"threshold": self.threshold, "max_count": self.max_count},
            "template": vars(self.template),
            "render": {
                "window": self.render.window,
                "missing_policy": self.render.missing_policy.value,
                "missing_token": self.render.missing_token,
                "max_tokens": self.render.max_tokens,
            },
            "classifier": {"backend": self.backend, **self.classifier.to_dict()},
            "evaluation": {
                "n_folds": self.n_folds,
                "seed": self.seed,
                "variants": self.variants,
                "utterance_features": self.utterance_features,
                "n_seeds": self.n_seeds,
                "jobs": self.jobs,
            },
        }


def _pick(cls, d: dict, where: str) -> dict:
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    return d


def from_dict(d: dict, base_dir: str | Path = ".") -> RunConfig:
    try:
        ds = d["dataset"]
    except KeyError:
        raise ConfigError("config needs a 'dataset' section") from None
    known_top = {"dataset", "output_dir", "schema_overrides", "feature_selection", "template", "render", "classifier", "evaluation"}
    unknown = set(d) - known_top
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    try:
        dataset = DatasetConfig(**_pick(DatasetConfig, ds, "dataset"))
        fs = d.get("feature_selection", {})
        template = TemplateConfig(**_pick(TemplateConfig, d.get("template", {}), "template"))
        r = dict(d.get("render", {}))
        if "missing_policy" in r:
            r["missing_policy"] = MissingPolicy(r["missing_policy"])
        render = RenderOptions(**_pick(RenderOptions, r, "render"))
        c = dict(d.get("classifier", {}))
        backend = c.pop("backend", "reference")
        classifier = ClassifierConfig(**_pick(ClassifierConfig, c, "classifier"))
        ev = dict(d.get("evaluation", {}))
        cfg = RunConfig(
            dataset=dataset,
            output_dir=d.get("output_dir", "runs/default"),
            schema_overrides=dict(d.get("schema_overrides", {})),
            threshold=float(fs.get("threshold", 0.02)),
            max_count=int(fs.get("max_count", 6)),
            template=template,
            render=render,
            backend=backend,
            classifier=classifier,
            n_folds=int(ev.pop("n_folds", 5)),
            seed=int(ev.pop("seed", 0)),
            variants=list(ev.pop("variants", ["story"])),
            utterance_features=ev.pop("utterance_features", None),
            n_seeds=int(ev.pop("n_seeds", 25)),
            jobs=int(ev.pop("jobs", 1)),
            base_dir=Path(base_dir),
        )
        if ev:
            raise ConfigError(f"unknown key(s) in evaluation: {sorted(ev)}")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return from_dict(d, base_dir=path.parent)
