"""Event logs: loading (XES, CSV, JSONL dump), statistics and prefix enumeration.

An event is ``(activity, timestamp, {attribute: value})``; a trace is the
time-ordered event sequence of one case; a log is the collection of traces
plus an attribute schema. Every trace of length ``n`` yields ``n`` labeled
prefixes, the last of which is labeled with the synthetic :data:`END` class.
"""

from __future__ import annotations

import csv
import json
import math
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import EmptyLogError, MalformedInputError, SchemaError

END = "end"

XES_ACTIVITY_KEY = "concept:name"
XES_TIMESTAMP_KEY = "time:timestamp"
XES_LIFECYCLE_KEY = "lifecycle:transition"


class AttributeKind(str, Enum):
    CATEGORICAL = "categorical"
    NUMERIC = "numeric"
    FREE_TEXT = "free_text"
    TIMESTAMP = "timestamp"
    IDENTIFIER = "identifier"


@dataclass(frozen=True)
class AttributeDescriptor:
    name: str
    kind: AttributeKind


@dataclass(frozen=True)
class Event:
    activity: str
    timestamp: datetime
    attributes: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.activity:
            raise SchemaError("event activity must be non-empty")

    __hash__ = None


@dataclass(frozen=True)
class Trace:
    case_id: str
    events: tuple[Event, ...]

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if not self.events:
            raise SchemaError(f"trace {self.case_id!r} has no events")
        for prev, cur in zip(self.events, self.events[1:]):
            if cur.timestamp < prev.timestamp:
                raise SchemaError(f"trace {self.case_id!r}: timestamps decrease")

    def __len__(self):
        return len(self.events)

    @property
    def activities(self) -> list[str]:
        return [e.activity for e in self.events]


@dataclass(frozen=True)
class EventLog:
    traces: tuple[Trace, ...]
    schema: tuple[AttributeDescriptor, ...] = ()
    activity_key: str = "activity"

    def __post_init__(self):
        object.__setattr__(self, "traces", tuple(self.traces))
        object.__setattr__(self, "schema", tuple(self.schema))
        ids = [t.case_id for t in self.traces]
        if len(set(ids)) != len(ids):
            dup = next(c for c, n in Counter(ids).items() if n > 1)
            raise SchemaError(f"duplicate case id {dup!r}")
        names = [a.name for a in self.schema]
        if len(set(names)) != len(names):
            raise SchemaError("attribute names in schema must be unique")

    def __len__(self):
        return len(self.traces)

    def __iter__(self):
        return iter(self.traces)

    @property
    def activity_vocabulary(self) -> frozenset[str]:
        return frozenset(e.activity for t in self.traces for e in t.events)

    @property
    def num_events(self) -> int:
        return sum(len(t) for t in self.traces)

    def attribute_names(self) -> list[str]:
        seen = {}
        for t in self.traces:
            for e in t.events:
                for k in e.attributes:
                    seen.setdefault(k, None)
        return list(seen)

    def kind_of(self, name: str) -> AttributeKind | None:
        for a in self.schema:
            if a.name == name:
                return a.kind
        return None

    def subset(self, case_ids: Iterable[str]) -> "EventLog":
        wanted = set(case_ids)
        return EventLog(
            [t for t in self.traces if t.case_id in wanted], self.schema, self.activity_key
        )

    def with_schema(self, schema: Sequence[AttributeDescriptor]) -> "EventLog":
        return EventLog(self.traces, schema, self.activity_key)


@dataclass(frozen=True)
class LabeledPrefix:
    """The first ``k`` events of a case and the activity that followed them."""

    prefix: tuple[Event, ...]
    label: str
    case_id: str
    k: int

    @property
    def last(self) -> Event:
        return self.prefix[-1]


@dataclass(frozen=True)
class LogStats:
    num_cases: int
    num_events: int
    num_activities: int
    avg_case_length: float

    def as_row(self) -> str:
        return (
            f"{self.num_cases} cases, {self.num_events} events, "
            f"{self.num_activities} activities, avg {self.avg_case_length:.2f}"
        )


# --- value parsing --------------------------------------------------------


def parse_timestamp(value: Any) -> datetime:
    """Parse an ISO-8601-ish timestamp; aware values are converted to naive UTC."""
    if isinstance(value, datetime):
        ts = value
    else:
        text = str(value).strip()
        if not text:
            raise ValueError("empty timestamp")
        if text.endswith("Z"):
            text = text[:-1] + "+00:00"
        try:
            ts = datetime.fromisoformat(text)
        except ValueError:
            import pandas as pd

            try:
                ts = pd.Timestamp(text).to_pydatetime()
            except (ValueError, TypeError) as exc:
                raise ValueError(f"unparseable timestamp {value!r}") from exc
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
    return ts


def _is_missing(value) -> bool:
    if value is None:
        return True
    if isinstance(value, float) and math.isnan(value):
        return True
    return isinstance(value, str) and value == ""


def _as_number(value):
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        return value
    try:
        return int(value)
    except (TypeError, ValueError):
        pass
    try:
        out = float(value)
    except (TypeError, ValueError):
        return None
    return out if math.isfinite(out) else None


def _as_timestamp(value):
    if isinstance(value, datetime):
        return value
    if not isinstance(value, str):
        return None
    try:
        return parse_timestamp(value)
    except ValueError:
        return None


# --- kind inference -------------------------------------------------------


def infer_attribute_kinds(
    log: EventLog,
    overrides: Mapping[str, str | AttributeKind] | None = None,
    *,
    free_text_unique_ratio: float = 0.5,
    free_text_min_length: float = 15.0,
) -> list[AttributeDescriptor]:
    """Assign an :class:`AttributeKind` to every event attribute of ``log``.

    Rules, first match wins: every value parses as a number -> numeric;
    every value parses as a timestamp -> timestamp; unique ratio above
    ``free_text_unique_ratio`` and mean length above ``free_text_min_length``
    -> free_text; otherwise categorical. ``overrides`` win over the rules.
    """
    overrides = dict(overrides or {})
    values: dict[str, list] = {name: [] for name in log.attribute_names()}
    unknown = set(overrides) - set(values)
    if unknown:
        raise SchemaError(f"override names unknown attribute(s): {sorted(unknown)}")

    for t in log.traces:
        for e in t.events:
            for k, v in e.attributes.items():
                if not _is_missing(v):
                    values[k].append(v)

    schema = []
    for name, vals in values.items():
        if name in overrides:
            kind = AttributeKind(overrides[name])
        else:
            kind = _infer_kind(vals, free_text_unique_ratio, free_text_min_length)
        schema.append(AttributeDescriptor(name, kind))
    return schema


def _infer_kind(vals, unique_ratio, min_length) -> AttributeKind:
    if not vals:
        return AttributeKind.CATEGORICAL
    if all(_as_number(v) is not None for v in vals):
        return AttributeKind.NUMERIC
    if all(_as_timestamp(v) is not None for v in vals):
        return AttributeKind.TIMESTAMP
    texts = [str(v) for v in vals]
    ratio = len(set(texts)) / len(texts)
    mean_len = sum(map(len, texts)) / len(texts)
    if ratio > unique_ratio and mean_len > min_length:
        return AttributeKind.FREE_TEXT
    return AttributeKind.CATEGORICAL


def _coerce(value, kind: AttributeKind, integral: bool):
    if _is_missing(value):
        return None
    if kind is AttributeKind.NUMERIC:
        num = _as_number(value)
        if num is None:
            return value
        return int(num) if integral and float(num).is_integer() else num
    if kind is AttributeKind.TIMESTAMP:
        ts = _as_timestamp(value)
        return value if ts is None else ts
    return value


def apply_schema(log: EventLog, schema: Sequence[AttributeDescriptor]) -> EventLog:
    """Coerce attribute values to the Python type implied by each kind."""
    kinds = {a.name: a.kind for a in schema}
    integral = {}
    for a in schema:
        if a.kind is AttributeKind.NUMERIC:
            vals = [
                e.attributes.get(a.name) for t in log.traces for e in t.events
            ]
            integral[a.name] = all(
                _is_missing(v) or isinstance(v, int) or (isinstance(v, str) and _is_int_text(v))
                for v in vals
            )
    traces = []
    for t in log.traces:
        events = [
            Event(
                e.activity,
                e.timestamp,
                {
                    k: _coerce(v, kinds.get(k, AttributeKind.CATEGORICAL), integral.get(k, False))
                    for k, v in e.attributes.items()
                },
            )
            for e in t.events
        ]
        traces.append(Trace(t.case_id, events))
    return EventLog(traces, schema, log.activity_key)


def _is_int_text(text: str) -> bool:
    try:
        int(text)
    except ValueError:
        return False
    return True


def _finish(traces: list[Trace], activity_key: str, overrides=None) -> EventLog:
    raw = EventLog(traces, (), activity_key)
    schema = infer_attribute_kinds(raw, overrides)
    return apply_schema(raw, schema)


def _sorted_events(events: list[Event]) -> list[Event]:
    # sorted() is stable: ties keep source order
    return sorted(events, key=lambda e: e.timestamp)


# --- XES ------------------------------------------------------------------

_XES_SCALARS = {"string", "date", "int", "float", "boolean", "id"}


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _xes_value(elem):
    kind = _local(elem.tag)
    raw = elem.get("value")
    if raw is None:
        return None
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "date":
        return parse_timestamp(raw)
    if kind == "boolean":
        return raw.strip().lower()
    return raw


def _xes_attributes(elem) -> dict[str, Any]:
    out = {}
    for child in elem:
        if _local(child.tag) in _XES_SCALARS and child.get("key") is not None:
            out[child.get("key")] = _xes_value(child)
    return out


def load_xes(
    path: str | Path,
    *,
    include_lifecycle: bool = True,
    lifecycle_separator: str = " ",
    overrides: Mapping[str, str] | None = None,
) -> EventLog:
    """Read an IEEE 1849 XES file.

    ``concept:name`` becomes the activity and ``time:timestamp`` the event
    time; when ``include_lifecycle`` is set, a ``lifecycle:transition`` value
    is appended to the activity label. Trace-level attributes are copied onto
    each event unless the event defines the same key.
    """
    path = Path(path)
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        line, col = exc.position
        raise MalformedInputError(f"{path}: XML parse error at line {line}, column {col}: {exc}") from exc
    except OSError as exc:
        raise MalformedInputError(f"{path}: {exc}") from exc
    if _local(root.tag) != "log":
        raise MalformedInputError(f"{path}: root element is <{_local(root.tag)}>, expected <log>")

    traces = []
    for i, trace_el in enumerate(el for el in root if _local(el.tag) == "trace"):
        case_attrs = _xes_attributes(trace_el)
        case_id = str(case_attrs.pop(XES_ACTIVITY_KEY, f"case_{i}"))
        events = []
        for j, ev_el in enumerate(el for el in trace_el if _local(el.tag) == "event"):
            attrs = _xes_attributes(ev_el)
            activity = attrs.pop(XES_ACTIVITY_KEY, None)
            if activity is None:
                raise SchemaError(f"{path}: case {case_id!r} event {j}: missing {XES_ACTIVITY_KEY}")
            ts = attrs.pop(XES_TIMESTAMP_KEY, None)
            if ts is None:
                raise SchemaError(f"{path}: case {case_id!r} event {j}: missing {XES_TIMESTAMP_KEY}")
            transition = attrs.pop(XES_LIFECYCLE_KEY, None)
            if include_lifecycle and transition:
                activity = f"{activity}{lifecycle_separator}{transition}"
            elif transition is not None:
                attrs[XES_LIFECYCLE_KEY] = transition
            merged = {k: v for k, v in case_attrs.items() if k not in attrs}
            merged.update(attrs)
            events.append(Event(str(activity), ts, merged))
        if events:
            traces.append(Trace(case_id, _sorted_events(events)))
    return _finish(traces, XES_ACTIVITY_KEY, overrides)


# --- CSV ------------------------------------------------------------------

_MAPPING_ALIASES = {"case": "case_id", "case_id": "case_id", "activity": "activity", "timestamp": "timestamp"}


def _normalize_mapping(column_mapping: Mapping[str, str]) -> dict[str, str]:
    out = {}
    for role, col in column_mapping.items():
        if role not in _MAPPING_ALIASES:
            raise SchemaError(f"unknown mapping role {role!r}; use case_id, activity, timestamp")
        out[_MAPPING_ALIASES[role]] = col
    missing = {"case_id", "activity", "timestamp"} - set(out)
    if missing:
        raise SchemaError(f"column mapping lacks mandatory role(s): {sorted(missing)}")
    return out


def load_csv(
    path: str | Path,
    column_mapping: Mapping[str, str],
    *,
    overrides: Mapping[str, str] | None = None,
    delimiter: str = ",",
) -> EventLog:
    """Read a flat CSV where each row is one event.

    ``column_mapping`` maps the roles ``case_id``, ``activity`` and
    ``timestamp`` to column names. Every other column becomes an attribute.
    """
    path = Path(path)
    mapping = _normalize_mapping(column_mapping)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        header = reader.fieldnames or []
        for role, col in mapping.items():
            if col not in header:
                raise SchemaError(f"{path}: mapped {role} column {col!r} not in header {header}")
        extra = [c for c in header if c not in mapping.values()]

        by_case: dict[str, list[Event]] = {}
        for row in reader:
            rowno = reader.line_num
            try:
                ts = parse_timestamp(row[mapping["timestamp"]])
            except ValueError as exc:
                raise MalformedInputError(f"{path}: row {rowno}: {exc}") from exc
            activity = row[mapping["activity"]]
            if not activity:
                raise SchemaError(f"{path}: row {rowno}: empty activity")
            attrs = {c: (row[c] if row[c] != "" else None) for c in extra}
            by_case.setdefault(row[mapping["case_id"]], []).append(Event(activity, ts, attrs))

    if not by_case:
        raise EmptyLogError(f"{path}: no events")
    traces = [Trace(cid, _sorted_events(evts)) for cid, evts in by_case.items()]
    return _finish(traces, mapping["activity"], overrides)


def _format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, datetime):
        return v.isoformat()
    return str(v)


def write_csv(log: EventLog, path: str | Path, *, case_col="case_id", activity_col=None, timestamp_col="timestamp"):
    """Write ``log`` as flat CSV; returns the column mapping to read it back."""
    activity_col = activity_col or log.activity_key
    attrs = [n for n in log.attribute_names() if n not in (case_col, activity_col, timestamp_col)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([case_col, activity_col, timestamp_col, *attrs])
        for t in log.traces:
            for e in t.events:
                w.writerow(
                    [t.case_id, e.activity, e.timestamp.isoformat()]
                    + [_format_value(e.attributes.get(a)) for a in attrs]
                )
    return {"case_id": case_col, "activity": activity_col, "timestamp": timestamp_col}


# --- canonical JSONL dump ---------------------------------------------------


def dump_jsonl(log: EventLog, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for t in log.traces:
            rec = {
                "case_id": t.case_id,
                "events": [
                    {
                        "activity": e.activity,
                        "timestamp": e.timestamp.isoformat(),
                        "attributes": {k: _json_value(v) for k, v in e.attributes.items()},
                    }
                    for e in t.events
                ],
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def _json_value(v):
    return v.isoformat() if isinstance(v, datetime) else v


def load_jsonl(path: str | Path, *, activity_key: str = "activity", overrides=None) -> EventLog:
    traces = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                events = [
                    Event(ev["activity"], parse_timestamp(ev["timestamp"]), ev.get("attributes", {}))
                    for ev in rec["events"]
                ]
                traces.append(Trace(str(rec["case_id"]), events))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise MalformedInputError(f"{path}: line {lineno}: {exc}") from exc
    if not traces:
        raise EmptyLogError(f"{path}: no traces")
    return _finish(traces, activity_key, overrides)


def load_log(path: str | Path, fmt: str | None = None, column_mapping=None, overrides=None, **kw) -> EventLog:
    """Dispatch on ``fmt`` (or the file suffix) to the matching reader."""
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt == "xes":
        return load_xes(path, overrides=overrides, **kw)
    if fmt == "csv":
        if not column_mapping:
            raise SchemaError("CSV input requires a column mapping (case_id, activity, timestamp)")
        return load_csv(path, column_mapping, overrides=overrides, **kw)
    if fmt in ("jsonl", "json"):
        return load_jsonl(path, overrides=overrides, **kw)
    raise SchemaError(f"unsupported log format {fmt!r}")


# --- derived views ----------------------------------------------------------


def rename_activities(log: EventLog, mapping: Mapping[str, str]) -> EventLog:
    """Replace activity labels using ``mapping``; unmapped labels are kept."""
    traces = [
        Trace(t.case_id, [Event(mapping.get(e.activity, e.activity), e.timestamp, e.attributes) for e in t.events])
        for t in log.traces
    ]
    return EventLog(traces, log.schema, log.activity_key)


def log_stats(log: EventLog) -> LogStats:
    n_cases = len(log.traces)
    n_events = log.num_events
    avg = round(n_events / n_cases, 2) if n_cases else 0.0
    return LogStats(n_cases, n_events, len(log.activity_vocabulary), avg)


def enumerate_prefixes(trace: Trace) -> list[LabeledPrefix]:
    """One labeled prefix per event: the first k events paired with the next activity, or END after the last."""
    events = trace.events
    n = len(events)
    return [
        LabeledPrefix(events[:k], events[k].activity if k < n else END, trace.case_id, k)
        for k in range(1, n + 1)
    ]


def log_prefixes(log: EventLog) -> list[LabeledPrefix]:
    return [p for t in log.traces for p in enumerate_prefixes(t)]


def label_vocabulary(log: EventLog) -> list[str]:
    """Sorted class list: every activity plus :data:`END`."""
    return sorted(log.activity_vocabulary | {END})
