import json
import random
from datetime import datetime, timedelta

import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import synthetic
from snapstories.errors import DegenerateInputError, SchemaError
from snapstories.eventlog import AttributeDescriptor, AttributeKind, Event, EventLog, Trace, enumerate_prefixes, load_xes
from snapstories.featsel import (
    HISTORY,
    HISTORY_PREFIX,
    TEMPORAL_FEATURES,
    TIME_FROM_CASE_START,
    ImportanceReport,
    SelectedFeatures,
    derive_temporal_features,
    frequency_encode,
    rank_features,
    render_duration,
    select_features,
    value_frequencies,
)

T0 = datetime(2024, 5, 1, 12)


def trace(acts, attrs_list=None, case_id="c", gaps=None):
    gaps = gaps or [60] * len(acts)
    t, events = T0, []
    for i, a in enumerate(acts):
        if i:
            t += timedelta(seconds=gaps[i])
        events.append(Event(a, t, dict(attrs_list[i]) if attrs_list else {}))
    return Trace(case_id, events)


class TestTemporal:
    def test_single_event(self):
        (p,) = enumerate_prefixes(trace("A"))
        tf = derive_temporal_features(p)
        assert (tf.time_from_case_start, tf.time_from_previous) == (timedelta(0), timedelta(0))

    def test_arithmetic(self):
        p = enumerate_prefixes(trace("ABC", gaps=[0, 60, 3540]))[2]
        tf = derive_temporal_features(p)
        assert tf.time_from_case_start.total_seconds() == 3600
        assert tf.time_from_previous.total_seconds() == 3540

    def test_twelve_days(self):
        assert render_duration(timedelta(days=12, hours=5)) == "12 days"

    @pytest.mark.parametrize(
        "delta, text",
        [
            (timedelta(seconds=1), "1 second"),
            (timedelta(seconds=119), "119 seconds"),
            (timedelta(minutes=2), "2 minutes"),
            (timedelta(minutes=119, seconds=59), "119 minutes"),
            (timedelta(hours=2), "2 hours"),
            (timedelta(hours=47), "47 hours"),
            (timedelta(days=2), "2 days"),
            (timedelta(days=1, hours=1), "25 hours"),
            (timedelta(0), "0 seconds"),
        ],
    )
    def test_units(self, delta, text):
        assert render_duration(delta) == text


class TestEncoding:
    def test_frequency_quarter(self):
        attrs = [{"color": "red"}] * 50 + [{"color": "blue"}] * 150
        log = EventLog([trace(["A"] * 200, attrs)], [AttributeDescriptor("color", AttributeKind.CATEGORICAL)])
        assert value_frequencies(log, "color")["red"] == 0.25
        assert frequency_encode(log).frame["color"].iloc[0] == 0.25

    def test_history_counts(self):
        log = EventLog([trace("ABA"), trace("C", case_id="d")])
        row = frequency_encode(log).frame.iloc[2]
        assert [row[HISTORY_PREFIX + a] for a in "ABC"] == [2, 1, 0]

    def test_hand_built_table(self, data_dir):
        log = load_xes(data_dir / "three_cases.xes")
        tab = frequency_encode(log)
        front, back, private, business = 3 / 9, 6 / 9, 7 / 9, 2 / 9
        acts = ["Approve complete", "Reject complete", "Review complete", "Submit complete"]
        rows = [
            # org:group, customer type, amount, history counts, label
            (front, private, 1200, (0, 0, 0, 1), "Review complete"),
            (back, private, 1200, (0, 0, 1, 1), "Approve complete"),
            (back, private, 1200, (1, 0, 1, 1), "end"),
            (front, business, 800, (0, 0, 0, 1), "Reject complete"),
            (back, business, 800, (0, 1, 0, 1), "end"),
            (front, private, 50, (0, 0, 0, 1), "Review complete"),
            (back, private, 50, (0, 0, 1, 1), "Review complete"),
            (back, private, 50, (0, 0, 2, 1), "Approve complete"),
            (back, private, 50, (1, 0, 2, 1), "end"),
        ]
        cols = ["org:group", "customer type", "amount"] + [HISTORY_PREFIX + a for a in acts]
        expected = pd.DataFrame([[g, c, a, *h] for g, c, a, h, _ in rows], columns=cols, dtype=float)
        assert sorted(tab.frame.columns) == sorted(cols)
        pd.testing.assert_frame_equal(tab.frame[cols], expected)
        assert list(tab.target) == [r[-1] for r in rows]
        assert tab.sources["history::Reject complete"] == HISTORY

    def test_unseen_values_are_nan(self):
        schema = [AttributeDescriptor("color", AttributeKind.CATEGORICAL)]
        fit = EventLog([trace("AB", [{"color": "red"}, {"color": "red"}])], schema)
        new = EventLog([trace("AB", [{"color": "green"}, {}])], schema)
        frame = frequency_encode(new, fit_log=fit).frame
        assert frame["color"].isna().all()

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.sampled_from(["x", "y", "z", "w"]), min_size=2, max_size=40))
    def test_frequencies_form_a_distribution(self, values):
        log = EventLog(
            [trace(["A"] * len(values), [{"v": v} for v in values])], [AttributeDescriptor("v", AttributeKind.CATEGORICAL)]
        )
        freqs = value_frequencies(log, "v")
        assert all(0 < f <= 1 for f in freqs.values())
        assert all(freqs[v] == values.count(v) / len(values) for v in freqs)
        assert sum(freqs.values()) == pytest.approx(1.0)


def _copy_log_with_twin(seed=1):
    rng = random.Random(seed)
    cases = []
    for i in range(120):
        seq = [rng.choice("abcde") for _ in range(rng.randint(2, 6))]
        steps = []
        for j, a in enumerate(seq):
            nxt = seq[j + 1] if j + 1 < len(seq) else "end"
            steps.append((a, {"hint": "h_" + nxt, "twin": "t_" + nxt, "noise": rng.choice("xyz")}))
        cases.append((f"r{i}", steps))
    return synthetic.build_log(cases)


@pytest.fixture(scope="module")
def copy_report():
    return rank_features(frequency_encode(synthetic.label_copy_log()), seed=0)


class TestRanking:
    def test_label_copy_ranks_first(self, copy_report):
        ranked = copy_report.ranked()
        assert ranked[0][0] == "hint"
        assert ranked[0][1] > ranked[1][1]
        assert copy_report.scores["hint"] > copy_report.scores["noise"]

    def test_normalized(self, copy_report):
        assert sum(copy_report.scores.values()) == pytest.approx(1.0, abs=1e-9)
        assert all(v >= 0 for v in copy_report.scores.values())
        assert set(copy_report.scores) == {"hint", "noise", "dept", HISTORY}

    def test_identical_attributes_share_gain(self):
        rep = rank_features(frequency_encode(_copy_log_with_twin()), seed=0)
        assert rep.scores["hint"] == pytest.approx(rep.scores["twin"])
        assert min(rep.scores["hint"], rep.scores["twin"]) > rep.scores["noise"]

    def test_deterministic(self):
        tab = frequency_encode(synthetic.label_copy_log(n_cases=60))
        assert rank_features(tab, seed=3).scores == rank_features(tab, seed=3).scores

    def test_binary_target(self):
        log = EventLog([trace("A", case_id=f"c{i}") for i in range(3)] + [trace("AA", case_id="d")])
        rep = rank_features(frequency_encode(log))
        assert sum(rep.scores.values()) == pytest.approx(1.0)

    def test_single_class(self):
        log = EventLog([trace("A", case_id=f"c{i}") for i in range(4)])
        with pytest.raises(DegenerateInputError):
            rank_features(frequency_encode(log))

    def test_report_json_round_trip(self, copy_report):
        assert ImportanceReport.from_json(copy_report.to_json()) == copy_report


SCHEMA = [
    AttributeDescriptor("a", AttributeKind.CATEGORICAL),
    AttributeDescriptor("b", AttributeKind.NUMERIC),
    AttributeDescriptor("note", AttributeKind.FREE_TEXT),
]


class TestSelection:
    report = ImportanceReport(
        {"a": 0.30, "b": 0.01, HISTORY: 0.40, "c": 0.12, "d": 0.08, "e": 0.05, "f": 0.03, "g": 0.01}
    )

    def test_threshold_and_forced_text(self):
        sel = select_features(self.report, SCHEMA, threshold=0.05, activity="skill")
        assert sel.ranked == ["a", "c", "d", "e"]
        assert sel.forced_text == ["note"]
        assert sel.temporal == list(TEMPORAL_FEATURES)
        assert sel.names == ["a", "c", "d", "e", "note", "skill"]

    def test_threshold_zero_is_top_six(self):
        sel = select_features(self.report, SCHEMA, threshold=0.0)
        oracle = sorted((k for k in self.report.scores if k != HISTORY), key=lambda k: (-self.report.scores[k], k))[:6]
        assert sel.ranked == oracle

    def test_all_below_threshold(self):
        sel = select_features(self.report, SCHEMA, threshold=0.9)
        assert sel.ranked == [] and sel.forced_text == ["note"] and TIME_FROM_CASE_START in sel.temporal

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_monotone_in_threshold(self, t1, t2):
        lo, hi = sorted((t1, t2))
        small = select_features(self.report, SCHEMA, threshold=hi).ranked
        big = select_features(self.report, SCHEMA, threshold=lo).ranked
        assert set(small) <= set(big)

    def test_free_text_never_ranked(self):
        rep = ImportanceReport({"note": 0.9, "a": 0.1})
        sel = select_features(rep, SCHEMA)
        assert sel.ranked == ["a"] and sel.forced_text == ["note"]

    def test_overlap_rejected(self):
        with pytest.raises(SchemaError):
            SelectedFeatures(["x"], ["x"])

    def test_json_round_trip(self):
        sel = select_features(self.report, SCHEMA, activity="skill")
        assert SelectedFeatures.from_json(sel.to_json()) == sel
        assert json.loads(sel.to_json())["activity"] == "skill"


def test_utterance_log_selection_covers_mip_shape():
    log = synthetic.utterance_log(n_cases=80)
    rep = rank_features(frequency_encode(log))
    sel = select_features(rep, log.schema, activity=log.activity_key)
    assert "user utterance" in sel.forced_text
    assert "user utterance" not in rep.scores
