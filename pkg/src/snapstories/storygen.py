"""Story templates and the rendering of labeled prefixes into text samples.

A template is plain text with ``⟨feature name⟩`` placeholders and exactly one
``⟨sequence⟩`` slot that receives the most recent activities, e.g.::

    The ⟨role⟩ wrote in turn ⟨turn number⟩ '⟨user utterance⟩'.
    Sequence of skills: ⟨sequence⟩
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .errors import PromptBuildError, SchemaError, TemplateValidationError
from .eventlog import EventLog, LabeledPrefix, _is_missing
from .featsel import TEMPORAL_FEATURES, SelectedFeatures, derive_temporal_features, render_duration

OPEN, CLOSE = "⟨", "⟩"
SEQUENCE = "sequence"
SEQUENCE_SLOT = OPEN + SEQUENCE + CLOSE
PLACEHOLDER_RE = re.compile(OPEN + r"([^" + OPEN + CLOSE + r"]+)" + CLOSE)
_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])(\s+)")

SEQUENCE_JOINER = ", then "
LIST_SEPARATOR = " | "
LIST_SEQUENCE_JOINER = ", "


class MissingPolicy(str, Enum):
    OMIT_CLAUSE = "omit_clause"
    PLACEHOLDER_TOKEN = "placeholder_token"


@dataclass(frozen=True)
class StoryTemplate:
    body: str
    source: str = "manual"

    sequence_slot = SEQUENCE_SLOT

    def placeholders(self) -> list[str]:
        return PLACEHOLDER_RE.findall(self.body)

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.body + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, source: str = "manual") -> "StoryTemplate":
        return cls(Path(path).read_text(encoding="utf-8").rstrip("\n"), source)


@dataclass(frozen=True)
class RenderOptions:
    """Rendering knobs.

    ``activity_alias`` rewrites activity names wherever they are mentioned
    (used for the numbered-activities ablation). When ``max_tokens`` is set,
    stories longer than the budget lose their oldest activities first and then
    have their free-text values shortened.
    """

    window: int = 10
    missing_policy: MissingPolicy = MissingPolicy.OMIT_CLAUSE
    missing_token: str = "unknown"
    activity_alias: Mapping[str, str] | None = None
    max_tokens: int | None = None
    token_counter: Callable[[str], int] | None = None

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        object.__setattr__(self, "missing_policy", MissingPolicy(self.missing_policy))

    def count_tokens(self, text: str) -> int:
        return self.token_counter(text) if self.token_counter else len(text.split())


@dataclass(frozen=True)
class Story:
    text: str
    label: str
    case_id: str
    k: int

    def to_record(self) -> dict:
        return {"story": self.text, "label": self.label, "case_id": self.case_id, "k": self.k}


# --- prompt -------------------------------------------------------------------

DEFAULT_SHOT = {
    "features": ["claim type", "handler", "claimed amount", "time from case start"],
    "template": (
        "A ⟨claim type⟩ claim of ⟨claimed amount⟩ was handled by ⟨handler⟩, "
        "⟨time from case start⟩ after the claim was opened. "
        "Sequence of recent activities: ⟨sequence⟩."
    ),
}

_PROMPT_HEAD = """\
You design story templates for business process event logs. A template turns a single step of a case into a short, fluent narrative.
Rules:
- Refer to every listed feature exactly once through a placeholder that repeats the feature name inside angle brackets, for example ⟨handler⟩.
- Do not invent placeholders for features that are not listed.
- Finish with one clause that names the recent activities through the single placeholder ⟨sequence⟩, for example "Sequence of recent activities: ⟨sequence⟩."
- Output only the template text.
"""


def _shot_block(shot: Mapping) -> str:
    return f"Features: {', '.join(shot['features'])}\nTemplate: {shot['template']}\n"


def build_template_prompt(features: SelectedFeatures | Sequence[str], shot_examples: Sequence[Mapping] | None = None) -> str:
    """Few-shot prompt asking an LLM for a story template over ``features``."""
    if isinstance(features, SelectedFeatures):
        names = features.story_features + list(features.temporal)
        names.append(features.activity)
    else:
        names = list(features)
    if not names:
        raise PromptBuildError("cannot build a template prompt without features")
    shots = list(shot_examples) if shot_examples is not None else [DEFAULT_SHOT]
    if not shots:
        raise PromptBuildError("at least one example template is required")
    parts = [_PROMPT_HEAD]
    for i, shot in enumerate(shots, 1):
        parts.append(f"Example {i}\n{_shot_block(shot)}")
    parts.append(f"Now write the template.\nFeatures: {', '.join(names)}\nTemplate:")
    return "\n".join(parts)


# --- template acquisition -------------------------------------------------------


def _key(name: str) -> str:
    text = name.strip().lower().replace("_", " ").replace("#", " number")
    return re.sub(r"\s+", " ", text).strip()


def normalize_template_text(text: str, features: SelectedFeatures) -> str:
    """Canonicalize placeholder spellings in model output.

    Placeholders are matched to feature names case-insensitively, treating
    ``_`` as a space and ``#`` as "number"; ASCII ``<...>`` brackets naming a
    known feature are accepted. An enumerated activity run such as
    ``⟨skill 1⟩, then ⟨skill 2⟩, then ⟨skill3⟩...`` collapses into the
    sequence slot.
    """
    body = text.strip()
    body = re.sub(r"^\s*template\s*:\s*", "", body, flags=re.IGNORECASE).strip()
    if len(body) >= 2 and body[0] == body[-1] == '"':
        body = body[1:-1].strip()

    canon = {_key(f): f for f in features.story_features + list(features.temporal)}
    seq_keys = {_key(features.activity), "activity", "activities", SEQUENCE}

    def resolve(name: str) -> str | None:
        k = _key(name)
        if k in canon:
            return canon[k]
        if f"{k} number" in canon:
            return canon[f"{k} number"]
        if k.endswith(" number") and k[: -len(" number")] in canon:
            return canon[k[: -len(" number")]]
        if re.sub(r"\s*\d+$", "", k) in seq_keys:
            return SEQUENCE
        return None

    def ascii_sub(m):
        return OPEN + m.group(1) + CLOSE if resolve(m.group(1)) else m.group(0)

    body = re.sub(r"<([^<>]+)>", ascii_sub, body)

    seq_token = "\x00SEQ\x00"

    def ph_sub(m):
        target = resolve(m.group(1))
        if target == SEQUENCE:
            return seq_token
        return OPEN + target + CLOSE if target else m.group(0)

    body = PLACEHOLDER_RE.sub(ph_sub, body)
    run = re.escape(seq_token) + r"(?:\s*,?\s*(?:and\s+|then\s+)?" + re.escape(seq_token) + r")*(?:\s*(?:\.\.\.|…))?"
    return re.sub(run, SEQUENCE_SLOT, body)


def validate_template(template: StoryTemplate, features: SelectedFeatures) -> list[str]:
    """List every problem with ``template``; an empty list means it is usable."""
    found = template.placeholders()
    violations = []
    counts: dict[str, int] = {}
    for name in found:
        counts[name] = counts.get(name, 0) + 1
    for f in features.story_features:
        n = counts.get(f, 0)
        if n == 0:
            violations.append(f"uncovered feature: {f}")
        elif n > 1:
            violations.append(f"feature placeholder repeated {n} times: {f}")
    optional = set(features.temporal) | {features.activity}
    for f in optional:
        if counts.get(f, 0) > 1:
            violations.append(f"feature placeholder repeated {counts[f]} times: {f}")
    n_seq = counts.get(SEQUENCE, 0)
    if n_seq == 0:
        violations.append("missing sequence slot")
    elif n_seq > 1:
        violations.append(f"{n_seq} sequence slots; exactly one is allowed")
    allowed = set(features.story_features) | optional | {SEQUENCE}
    for name in dict.fromkeys(found):
        if name not in allowed:
            violations.append(f"unknown placeholder: {name}")
    return violations


def template_from_completion(completion: str, features: SelectedFeatures) -> StoryTemplate:
    return StoryTemplate(normalize_template_text(completion, features), source="llm")


def generate_template_llm(prompt: str, llm_client, features: SelectedFeatures) -> StoryTemplate:
    """Ask ``llm_client`` for a template and validate it before returning.

    Raises :class:`TemplateValidationError` when the completion does not cover
    the features; transport errors from the client propagate unchanged.
    """
    template = template_from_completion(llm_client.complete(prompt), features)
    violations = validate_template(template, features)
    if violations:
        raise TemplateValidationError(violations)
    return template


def _display(name: str) -> str:
    return name.rsplit(":", 1)[-1].replace("_", " ")


def _is_turn(name: str) -> bool:
    return _key(name) in ("turn", "turn number", "turn no")


def default_template(features: SelectedFeatures) -> StoryTemplate:
    """Deterministic template: one sentence per feature, a time sentence, then the sequence."""
    sentences = []
    turn = next((f for f in features.story_features if _is_turn(f)), None)
    for f in features.story_features:
        if f == turn:
            continue
        value = f"'{OPEN}{f}{CLOSE}'" if f in features.forced_text else f"{OPEN}{f}{CLOSE}"
        sentences.append(f"The {_display(f)} was {value}.")

    time_bits = []
    temporal = [t for t in TEMPORAL_FEATURES if t in features.temporal]
    if TEMPORAL_FEATURES[0] in temporal:
        time_bits.append(f"{OPEN}{TEMPORAL_FEATURES[0]}{CLOSE} after the case started")
    if TEMPORAL_FEATURES[1] in temporal:
        time_bits.append(f"{OPEN}{TEMPORAL_FEATURES[1]}{CLOSE} after the previous activity")
    if turn or time_bits:
        head = f"This happened on turn {OPEN}{turn}{CLOSE}" if turn else "This happened"
        tail = " and ".join(time_bits)
        if turn and tail:
            sentences.append(f"{head}, {tail}.")
        elif tail:
            sentences.append(f"{head} {tail}.")
        else:
            sentences.append(f"{head}.")
    sentences.append(f"Sequence of recent activities: {SEQUENCE_SLOT}.")
    return StoryTemplate(" ".join(sentences), source="default")


# --- rendering ------------------------------------------------------------------


def format_value(value) -> str:
    if isinstance(value, timedelta):
        return render_duration(value)
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        if math.isfinite(value) and value.is_integer():
            return str(int(value))
        return f"{value:g}"
    if isinstance(value, datetime):
        return value.isoformat(sep=" ")
    return str(value)


def _alias(name: str, options: RenderOptions) -> str:
    return options.activity_alias.get(name, name) if options.activity_alias else name


def _feature_values(prefix: LabeledPrefix, features: SelectedFeatures, options: RenderOptions) -> dict:
    values = {}
    attrs = prefix.last.attributes
    for f in features.story_features:
        v = attrs.get(f)
        values[f] = None if _is_missing(v) else format_value(v)
    temporal = derive_temporal_features(prefix).as_dict()
    for t in features.temporal:
        values[t] = format_value(temporal[t]) if t in temporal else None
    values[features.activity] = _alias(prefix.last.activity, options)
    return values


def _recent(prefix: LabeledPrefix, n: int, options: RenderOptions) -> list[str]:
    return [_alias(e.activity, options) for e in prefix.prefix[-n:]]


def _fill(body: str, values: Mapping[str, str | None], sequence: str, options: RenderOptions) -> str:
    def sub(m):
        name = m.group(1)
        if name == SEQUENCE:
            return sequence
        v = values.get(name)
        return options.missing_token if v is None else v

    if options.missing_policy is MissingPolicy.OMIT_CLAUSE:
        parts = _SENTENCE_SPLIT.split(body)
        kept = []
        for sentence, sep in zip(parts[0::2], parts[1::2] + [""]):
            names = PLACEHOLDER_RE.findall(sentence)
            drop = SEQUENCE not in names and any(n in values and values[n] is None for n in names)
            if not drop:
                kept.append(sentence + sep)
        trimmed = "".join(kept)
        body = trimmed if body[-1:].isspace() else trimmed.rstrip()
    return PLACEHOLDER_RE.sub(sub, body)


def _shorten(text: str) -> str:
    words = text.split()
    return " ".join(words[: max(1, (len(words) + 1) // 2)])


def render_story(
    prefix: LabeledPrefix,
    template: StoryTemplate,
    features: SelectedFeatures,
    options: RenderOptions = RenderOptions(),
) -> Story:
    """Instantiate ``template`` for one labeled prefix.

    Feature placeholders take the last event's attribute values (or derived
    temporal features); the sequence slot receives the last
    ``min(k, window)`` activities joined by ", then ".
    """
    values = _feature_values(prefix, features, options)
    n = min(prefix.k, options.window)
    text = _fill(template.body, values, SEQUENCE_JOINER.join(_recent(prefix, n, options)), options)

    if options.max_tokens is not None:
        while options.count_tokens(text) > options.max_tokens and n > 1:
            n -= 1
            text = _fill(template.body, values, SEQUENCE_JOINER.join(_recent(prefix, n, options)), options)
        seq = SEQUENCE_JOINER.join(_recent(prefix, n, options))
        while options.count_tokens(text) > options.max_tokens:
            longest = max(
                (f for f in features.forced_text if values.get(f)),
                key=lambda f: len(values[f].split()),
                default=None,
            )
            if longest is None or len(values[longest].split()) <= 1:
                break
            values[longest] = _shorten(values[longest])
            text = _fill(template.body, values, seq, options)
    return Story(text, prefix.label, prefix.case_id, prefix.k)


def render_list_of_values(
    prefix: LabeledPrefix,
    features: SelectedFeatures,
    options: RenderOptions = RenderOptions(),
) -> Story:
    """Bare feature values joined by " | ", ending with the recent activities."""
    values = _feature_values(prefix, features, options)
    names = features.story_features + list(features.temporal)
    fields = [values[f] if values.get(f) is not None else options.missing_token for f in names]
    n = min(prefix.k, options.window)
    fields.append(LIST_SEQUENCE_JOINER.join(_recent(prefix, n, options)))
    return Story(LIST_SEPARATOR.join(fields), prefix.label, prefix.case_id, prefix.k)


# --- ablation helpers ---------------------------------------------------------


@dataclass(frozen=True)
class ActivityNumbering:
    """Bijection between activity names and integer codes (sorted name order)."""

    codes: Mapping[str, int]

    def encode(self, name: str) -> str:
        return str(self.codes[name])

    def decode(self, code: str | int) -> str:
        return self._inverse[int(code)]

    @property
    def _inverse(self) -> dict[int, str]:
        return {v: k for k, v in self.codes.items()}

    @property
    def alias(self) -> dict[str, str]:
        return {name: str(code) for name, code in self.codes.items()}

    def apply(self, options: RenderOptions) -> RenderOptions:
        """Rendering hook: options that mention activities by code only."""
        return replace(options, activity_alias=self.alias)


def number_activities(log: EventLog | Iterable[str]) -> ActivityNumbering:
    names = log.activity_vocabulary if isinstance(log, EventLog) else set(log)
    return ActivityNumbering({name: i for i, name in enumerate(sorted(names))})


def exclude_features(features: SelectedFeatures, names: Iterable[str]) -> SelectedFeatures:
    """Drop ``names`` from a selection.

    The activity attribute may be named but stays covered by the sequence
    slot, so excluding everything yields sequence-only stories.
    """
    names = list(names)
    known = set(features.names) | set(features.temporal)
    unknown = [n for n in names if n not in known]
    if unknown:
        raise SchemaError(f"cannot exclude unknown feature(s): {unknown}")
    drop = set(names)
    return SelectedFeatures(
        [f for f in features.ranked if f not in drop],
        [f for f in features.forced_text if f not in drop],
        [f for f in features.temporal if f not in drop],
        features.activity,
    )


# --- story datasets on disk -------------------------------------------------------


def write_stories(stories: Iterable[Story], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for s in stories:
            fh.write(json.dumps(s.to_record(), ensure_ascii=False) + "\n")


def read_stories(path: str | Path) -> list[Story]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                r = json.loads(line)
                out.append(Story(r["story"], r["label"], r["case_id"], int(r["k"])))
    return out
