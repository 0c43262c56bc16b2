"""Command line entry point: ``snap <command> --config run.json``.

Commands: ``ingest``, ``features``, ``template``, ``render``, ``run``,
``seed-study``. Exit codes: 0 success, 2 usage/config error, 3 data error,
4 external-service error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import evalbench, report
from .config import RunConfig, load_config
from .errors import ConfigError, DegenerateInputError, SnapError
from .eventlog import EventLog, dump_jsonl, load_log, log_stats, rename_activities
from .featsel import ImportanceReport, SelectedFeatures, frequency_encode, rank_features, save_json, select_features
from .storygen import (
    StoryTemplate,
    build_template_prompt,
    default_template,
    generate_template_llm,
    template_from_completion,
    validate_template,
    write_stories,
)

log = logging.getLogger("snapstories")

TEMPLATE_FILE = "template.txt"
FEATURES_FILE = "selected_features.json"
IMPORTANCE_FILE = "importance.json"


# --- shared pipeline steps ------------------------------------------------------------


def load_dataset(cfg: RunConfig) -> EventLog:
    ds = cfg.dataset
    kw = {}
    fmt = (ds.format or Path(ds.path).suffix.lstrip(".")).lower()
    if fmt == "xes":
        kw["include_lifecycle"] = ds.include_lifecycle
    log_ = load_log(cfg.resolve(ds.path), fmt, ds.column_mapping, cfg.schema_overrides or None, **kw)
    if ds.rename_map:
        mapping = ds.rename_map
        if isinstance(mapping, str):
            mapping = json.loads(cfg.resolve(mapping).read_text(encoding="utf-8"))
        log_ = rename_activities(log_, mapping)
    return log_


def ensure_features(cfg: RunConfig, log_: EventLog, refresh: bool = False) -> SelectedFeatures:
    path = cfg.out / FEATURES_FILE
    if path.exists() and not refresh:
        return SelectedFeatures.from_json(path.read_text(encoding="utf-8"))
    rep = rank_features(frequency_encode(log_), seed=cfg.seed)
    selected = select_features(rep, log_.schema, cfg.threshold, cfg.max_count, activity=log_.activity_key)
    save_json(cfg.out / IMPORTANCE_FILE, rep.to_json())
    save_json(path, selected.to_json())
    save_json(
        cfg.out / "schema.json",
        json.dumps({a.name: a.kind.value for a in log_.schema}, indent=2),
    )
    return selected


def make_llm_client(cfg: RunConfig):
    from .llm import LLMClient

    opts = dict(cfg.template.llm)
    if "endpoint" not in opts or "model" not in opts:
        raise ConfigError("template.llm needs 'endpoint' and 'model'")
    return LLMClient(**opts)


def acquire_template(cfg: RunConfig, selected: SelectedFeatures, source: str, client=None) -> StoryTemplate:
    if source == "default":
        return default_template(selected)
    if source == "manual":
        return StoryTemplate.load(cfg.resolve(cfg.template.path), "manual")
    if source == "llm":
        client = client or make_llm_client(cfg)
        prompt = build_template_prompt(selected, cfg.template.shot_examples)
        return generate_template_llm(prompt, client, selected)
    raise ConfigError(f"unknown template source {source!r}")


def current_template(cfg: RunConfig, selected: SelectedFeatures) -> StoryTemplate:
    if cfg.template.source == "manual":
        return acquire_template(cfg, selected, "manual")
    path = cfg.out / TEMPLATE_FILE
    if path.exists():
        return StoryTemplate.load(path, cfg.template.source)
    template = acquire_template(cfg, selected, cfg.template.source)
    template.save(path)
    return template


# --- commands ---------------------------------------------------------------------------------


def cmd_ingest(args, cfg: RunConfig | None) -> int:
    if cfg is None:
        if not args.log:
            raise ConfigError("ingest needs --config or --log")
        mapping = dict(kv.split("=", 1) for kv in args.mapping.split(",")) if args.mapping else None
        fmt = (args.format or Path(args.log).suffix.lstrip(".")).lower()
        if fmt == "csv" and not mapping:
            raise ConfigError("CSV input needs --mapping case_id=...,activity=...,timestamp=...")
        log_ = load_log(args.log, fmt, mapping)
        out = Path(args.dump) if args.dump else None
    else:
        log_ = load_dataset(cfg)
        out = Path(args.dump) if args.dump else cfg.out / "log.jsonl"
    stats = log_stats(log_)
    print(stats.as_row())
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        dump_jsonl(log_, out)
        (out.parent / "stats.json").write_text(json.dumps(stats.__dict__, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_features(args, cfg: RunConfig) -> int:
    log_ = load_dataset(cfg)
    selected = ensure_features(cfg, log_, refresh=True)
    rep = ImportanceReport.from_json((cfg.out / IMPORTANCE_FILE).read_text(encoding="utf-8"))
    for name, score in rep.ranked():
        print(f"{score:.4f}\t{name}")
    print("selected:", ", ".join(selected.names + selected.temporal))
    return 0


def cmd_template(args, cfg: RunConfig) -> int:
    log_ = load_dataset(cfg)
    selected = ensure_features(cfg, log_)
    if args.manual:
        cfg = replace(cfg, template=replace(cfg.template, source="manual", path=args.manual))
    source = "llm" if args.llm else "default" if args.default else "manual" if args.manual else cfg.template.source
    if source == "llm":
        # validation happens below so that --force can keep an imperfect completion
        client = make_llm_client(cfg)
        prompt = build_template_prompt(selected, cfg.template.shot_examples)
        cfg.out.mkdir(parents=True, exist_ok=True)
        (cfg.out / "template_prompt.txt").write_text(prompt + "\n", encoding="utf-8")
        template = template_from_completion(client.complete(prompt), selected)
    else:
        template = acquire_template(cfg, selected, source)
    violations = validate_template(template, selected)
    print(template.body)
    if violations:
        for v in violations:
            print(f"violation: {v}", file=sys.stderr)
        if not args.force:
            return 3
    template.save(cfg.out / TEMPLATE_FILE)
    if not violations:
        print("template ok", file=sys.stderr)
    return 0


def cmd_render(args, cfg: RunConfig) -> int:
    log_ = load_dataset(cfg)
    selected = ensure_features(cfg, log_)
    template = current_template(cfg, selected)
    variant = args.variant or cfg.variants[0]
    stories = evalbench.render_variant(log_, variant, template, selected, cfg.render, cfg.utterance_features)
    path = Path(args.out) if args.out else cfg.out / f"stories_{variant}.jsonl"
    write_stories(stories, path)
    print(f"{len(stories)} stories -> {path}")
    return 0


def _significance(results, bench, first):
    out = {"vs_reference": {}, "vs_first_variant": {}}
    sota = {k: v for k, v in (bench or {}).items() if not k.startswith("SNAP")}
    best = max(sota.items(), key=lambda kv: kv[1]["accuracy"]) if sota else None
    for variant, rep in results.items():
        acc = [f.accuracy for f in rep.per_fold]
        if best is not None:
            try:
                sig = evalbench.wilcoxon_signed_rank(acc, [best[1]["accuracy"]] * len(acc))
                out["vs_reference"][variant] = {"reference": best[0], **sig.to_dict()}
            except DegenerateInputError as exc:
                out["vs_reference"][variant] = {"reference": best[0], "error": str(exc)}
        if variant != first:
            base = [f.accuracy for f in results[first].per_fold]
            try:
                out["vs_first_variant"][variant] = {"baseline": first, **evalbench.wilcoxon_signed_rank(acc, base).to_dict()}
            except DegenerateInputError as exc:
                out["vs_first_variant"][variant] = {"baseline": first, "error": str(exc)}
    return out


def write_run_report(cfg: RunConfig, results: dict, curves: dict) -> str:
    out = cfg.out
    benchmarks = evalbench.load_benchmarks()
    bench = benchmarks.get(cfg.dataset.name or "", {})
    first = next(iter(results))
    sig = _significance(results, bench, first)
    (out / "significance.json").write_text(json.dumps(sig, indent=2) + "\n", encoding="utf-8")
    marks = {v: s for v, s in (sig["vs_reference"] or sig["vs_first_variant"]).items() if "p_value" in s}
    rows = report.comparison_rows(results, bench, marks)
    report.write_table(rows, out / "comparison.tsv")
    text = report.format_table(rows)
    (out / "report.txt").write_text(text + "\n", encoding="utf-8")
    figs = out / "figures"
    figs.mkdir(exist_ok=True)
    title = cfg.dataset.name or ""
    report.plot_fold_accuracy(results, figs / "fold_accuracy.png", title)
    report.plot_comparison(rows, figs / "comparison.png", title)
    for variant, c in curves.items():
        report.plot_training_curves(c, figs / f"training_{variant}.png", f"{title} {variant}".strip())
    return text


def cmd_run(args, cfg: RunConfig) -> int:
    log_ = load_dataset(cfg)
    selected = ensure_features(cfg, log_)
    template = current_template(cfg, selected)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")
    exp = cfg.experiment()
    plan = evalbench.make_folds(log_, cfg.n_folds, cfg.seed)
    results, curves = {}, {}
    try:
        for variant in cfg.variants:
            results[variant] = evalbench.run_experiment(
                log_, variant, exp, features=selected, template=template, run_dir=out, plan=plan
            )
            curves[variant] = json.loads((out / variant / "metrics.json").read_text(encoding="utf-8"))["training_curves"]
    finally:
        if results:
            merged = {v: r.to_dict() for v, r in results.items()}
            (out / "metrics.json").write_text(json.dumps(merged, indent=2) + "\n", encoding="utf-8")
    print(write_run_report(cfg, results, curves))
    return 0


def cmd_seed_study(args, cfg: RunConfig) -> int:
    log_ = load_dataset(cfg)
    selected = ensure_features(cfg, log_)
    template = current_template(cfg, selected)
    variant = args.variant or cfg.variants[0]
    n = args.n_seeds or cfg.n_seeds

    def runner(seed):
        rep = evalbench.run_experiment(
            log_, variant, replace(cfg.experiment(seed), save_models=False), features=selected, template=template,
            run_dir=cfg.out / "seeds" / f"seed_{seed}",
        )
        return rep.mean_accuracy

    ref = None
    bench = evalbench.load_benchmarks().get(cfg.dataset.name or "", {})
    sota = {k: v for k, v in bench.items() if not k.startswith("SNAP")}
    if sota:
        ref = max(m["accuracy"] for m in sota.values())
    study = evalbench.seed_study(runner, n, reference=ref)
    (cfg.out / "seed_study.json").write_text(json.dumps(study.to_dict(), indent=2) + "\n", encoding="utf-8")
    print(f"mean {study.mean:.4f}  95% CI [{study.ci_low:.4f}, {study.ci_high:.4f}]  reference {ref}  {study.verdict}")
    return 0


# --- argument parsing -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="snap", description="Semantic-story next-activity prediction pipeline")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp, required=True):
        sp.add_argument("--config", "-c", required=required, help="run configuration JSON")
        sp.add_argument("--output-dir", help="override output_dir")
        sp.add_argument("--seed", type=int, help="override evaluation.seed")
        return sp

    sp = with_config(sub.add_parser("ingest", help="load a log, print statistics, write the JSONL dump"), required=False)
    sp.add_argument("--log", help="log file (instead of --config)")
    sp.add_argument("--format", choices=["xes", "csv", "jsonl"])
    sp.add_argument("--mapping", help="CSV roles, e.g. case_id=session,activity=skill,timestamp=time")
    sp.add_argument("--dump", help="where to write the JSONL dump")

    with_config(sub.add_parser("features", help="rank attribute importance and select story features"))

    sp = with_config(sub.add_parser("template", help="acquire and validate a story template"))
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--llm", action="store_true", help="generate with the configured LLM endpoint")
    g.add_argument("--default", action="store_true", help="use the deterministic fallback template")
    g.add_argument("--manual", metavar="PATH", help="validate a hand-written template")
    sp.add_argument("--force", action="store_true", help="write the template even when validation fails")

    sp = with_config(sub.add_parser("render", help="render all prefixes into stories"))
    sp.add_argument("--variant", choices=evalbench.VARIANTS)
    sp.add_argument("--out")

    sp = with_config(sub.add_parser("run", help="cross-validated experiment for each variant"))
    sp.add_argument("--variants", nargs="+", choices=evalbench.VARIANTS)
    sp.add_argument("--backend", choices=["reference", "transformer"])
    sp.add_argument("--jobs", type=int, help="parallel folds")
    sp.add_argument("--window", type=int)

    sp = with_config(sub.add_parser("seed-study", help="repeat cross-validation over many case orderings"))
    sp.add_argument("--variant", choices=evalbench.VARIANTS)
    sp.add_argument("--n-seeds", type=int)
    return p


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "output_dir", None):
        cfg.output_dir = str(Path(args.output_dir).resolve())
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "variants", None):
        cfg.variants = list(args.variants)
    if getattr(args, "backend", None):
        cfg.backend = args.backend
    if getattr(args, "jobs", None):
        cfg.jobs = args.jobs
    if getattr(args, "window", None):
        cfg.render = replace(cfg.render, window=args.window)
    return cfg


COMMANDS = {
    "ingest": cmd_ingest,
    "features": cmd_features,
    "template": cmd_template,
    "render": cmd_render,
    "run": cmd_run,
    "seed-study": cmd_seed_study,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = None
        if args.config:
            cfg = _apply_overrides(load_config(args.config), args)
            cfg.validate()
        return COMMANDS[args.command](args, cfg)
    except SnapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
