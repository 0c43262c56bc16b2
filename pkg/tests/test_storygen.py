from datetime import datetime, timedelta

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snapstories.errors import PromptBuildError, SchemaError, TemplateValidationError
from snapstories.eventlog import Event, EventLog, Trace, enumerate_prefixes
from snapstories.featsel import TEMPORAL_FEATURES, SelectedFeatures
from snapstories.storygen import (
    SEQUENCE_SLOT,
    MissingPolicy,
    RenderOptions,
    Story,
    StoryTemplate,
    build_template_prompt,
    default_template,
    exclude_features,
    generate_template_llm,
    normalize_template_text,
    number_activities,
    read_stories,
    render_list_of_values,
    render_story,
    validate_template,
    write_stories,
)

T0 = datetime(2024, 2, 1, 8)


class StubClient:
    def __init__(self, answer):
        self.answer = answer
        self.prompts = []

    def complete(self, prompt):
        self.prompts.append(prompt)
        return self.answer


def make_prefix(acts, attrs=None, k=None):
    events = [Event(a, T0 + timedelta(hours=i), dict(attrs or {})) for i, a in enumerate(acts)]
    return enumerate_prefixes(Trace("c", events))[(k or len(acts)) - 1]


class TestPrompt:
    def test_mip_features_verbatim(self, mip_features):
        prompt = build_template_prompt(mip_features)
        for name in ["role", "turn number", "session number", "user utterance", "chatbot response", "skill"]:
            assert name in prompt
        assert SEQUENCE_SLOT in prompt

    def test_minimal(self):
        prompt = build_template_prompt(["activity"])
        assert "Features: activity" in prompt and SEQUENCE_SLOT in prompt

    def test_names_with_spaces_kept(self):
        assert "Features: turn number, activity" in build_template_prompt(["turn number", "activity"])

    def test_errors(self):
        with pytest.raises(PromptBuildError):
            build_template_prompt([])
        with pytest.raises(PromptBuildError):
            build_template_prompt(["a"], shot_examples=[])


class TestLlmTemplate:
    def test_table_template_accepted(self, data_dir, mip_features):
        client = StubClient((data_dir / "llm_completion.txt").read_text())
        t = generate_template_llm("prompt", client, mip_features)
        assert t.source == "llm"
        assert t.body == (
            "⟨role⟩, wrote in turn ⟨turn number⟩ of session ⟨session number⟩ '⟨user utterance⟩' "
            "and received '⟨chatbot response⟩'. Sequence of skills: ⟨sequence⟩"
        )
        assert client.prompts == ["prompt"]

    def test_prose_rejected(self, mip_features):
        with pytest.raises(TemplateValidationError) as info:
            generate_template_llm("p", StubClient("A user talks to a bot."), mip_features)
        assert "missing sequence slot" in info.value.violations
        assert "uncovered feature: role" in info.value.violations

    @pytest.mark.parametrize(
        "raw, expected",
        [
            ("Template: <role> did ⟨Activity⟩.", "⟨role⟩ did ⟨sequence⟩."),
            ('"⟨ROLE⟩ then ⟨skill 1⟩ and ⟨skill 2⟩ …"', "⟨role⟩ then ⟨sequence⟩"),
            ("<b>bold</b> ⟨turn⟩", "<b>bold</b> ⟨turn number⟩"),
        ],
    )
    def test_normalization(self, raw, expected, mip_features):
        assert normalize_template_text(raw, mip_features) == expected


class TestDefaultTemplate:
    def test_role_and_turn(self):
        sel = SelectedFeatures(["role", "turn"])
        body = default_template(sel).body
        assert body.startswith("The role was ⟨role⟩. This happened on turn ⟨turn⟩")
        assert body.endswith("Sequence of recent activities: ⟨sequence⟩.")
        assert validate_template(default_template(sel), sel) == []

    def test_empty(self):
        sel = SelectedFeatures([], [], [])
        assert default_template(sel).body == "Sequence of recent activities: ⟨sequence⟩."

    def test_mip_mentions_each_once(self, mip_features):
        t = default_template(mip_features)
        found = t.placeholders()
        assert sorted(found) == sorted(mip_features.story_features + ["sequence"])
        assert "'⟨user utterance⟩'" in t.body


class TestValidation:
    def test_ok(self, mip_template, mip_features):
        assert validate_template(mip_template, mip_features) == []

    def test_uncovered(self, mip_template, mip_features):
        t = StoryTemplate(mip_template.body.replace("⟨role⟩", "person"))
        assert validate_template(t, mip_features) == ["uncovered feature: role"]

    def test_two_sequence_slots(self, mip_template, mip_features):
        t = StoryTemplate(mip_template.body + " Again: ⟨sequence⟩")
        assert validate_template(t, mip_features) == ["2 sequence slots; exactly one is allowed"]

    def test_unknown_and_repeated(self, mip_template, mip_features):
        t = StoryTemplate(mip_template.body + " ⟨mood⟩ ⟨role⟩")
        v = validate_template(t, mip_features)
        assert "unknown placeholder: mood" in v
        assert "feature placeholder repeated 2 times: role" in v


class TestRendering:
    def test_mip_golden(self, data_dir, mip_prefix, mip_template, mip_features):
        story = render_story(mip_prefix, mip_template, mip_features)
        assert story.text.encode("utf-8") == (data_dir / "golden_story.txt").read_bytes()
        assert story.label == "Report learning activities"
        assert (story.case_id, story.k) == ("session-3", 4)

    def test_list_of_values_golden(self, data_dir, mip_prefix, mip_features):
        story = render_list_of_values(mip_prefix, mip_features)
        assert story.text.encode("utf-8") == (data_dir / "golden_list_of_values.txt").read_bytes()

    def test_numbered_golden(self, data_dir, mip_log, mip_prefix, mip_template, mip_features):
        options = number_activities(mip_log).apply(RenderOptions())
        story = render_story(mip_prefix, mip_template, mip_features, options)
        assert story.text.encode("utf-8") == (data_dir / "golden_numbered.txt").read_bytes()
        assert story.label == "Report learning activities"

    def test_window(self):
        acts = [f"step{i:02d}" for i in range(12)]
        story = render_story(make_prefix(acts), StoryTemplate("Seq: ⟨sequence⟩"), SelectedFeatures([], [], []))
        assert story.text == "Seq: " + ", then ".join(acts[2:])

    def test_temporal_values(self):
        p = make_prefix("ABC")
        t = StoryTemplate("After ⟨time from case start⟩ (gap ⟨time from previous activity⟩). ⟨sequence⟩")
        text = render_story(p, t, SelectedFeatures([], [], list(TEMPORAL_FEATURES))).text
        assert text == "After 2 hours (gap 60 minutes). A, then B, then C"

    def test_missing_omit_clause(self):
        sel = SelectedFeatures(["role", "team"])
        t = StoryTemplate("The role was ⟨role⟩. The team was ⟨team⟩. Steps: ⟨sequence⟩.")
        text = render_story(make_prefix("AB", {"role": "clerk"}), t, sel).text
        assert text == "The role was clerk. Steps: A, then B."

    def test_missing_placeholder_token(self):
        sel = SelectedFeatures(["role", "team"])
        t = StoryTemplate("The role was ⟨role⟩. The team was ⟨team⟩. Steps: ⟨sequence⟩.")
        opts = RenderOptions(missing_policy=MissingPolicy.PLACEHOLDER_TOKEN)
        text = render_story(make_prefix("AB", {"role": "clerk"}), t, sel, opts).text
        assert text == "The role was clerk. The team was unknown. Steps: A, then B."

    def test_sequence_sentence_is_never_dropped(self):
        sel = SelectedFeatures(["team"])
        t = StoryTemplate("Team ⟨team⟩ did ⟨sequence⟩.")
        assert render_story(make_prefix("A"), t, sel).text == "Team unknown did A."

    def test_list_of_values_empty_features(self):
        sel = SelectedFeatures([], [], [])
        assert render_list_of_values(make_prefix("ABC"), sel).text == "A, B, C"

    def test_token_budget_drops_oldest_then_shortens_text(self):
        sel = SelectedFeatures([], ["note"], [])
        p = make_prefix("ABCDEF", {"note": "one two three four five six seven eight"})
        t = StoryTemplate("Note '⟨note⟩'. ⟨sequence⟩")
        full = render_story(p, t, sel).text
        assert render_story(p, t, sel, RenderOptions(max_tokens=100)).text == full
        cut = render_story(p, t, sel, RenderOptions(max_tokens=12)).text
        assert cut == "Note 'one two three four five six seven eight'. E, then F"
        cut = render_story(p, t, sel, RenderOptions(max_tokens=11)).text
        assert cut == "Note 'one two three four five six seven eight'. F"
        cut = render_story(p, t, sel, RenderOptions(max_tokens=7)).text
        assert cut == "Note 'one two three four'. F"


acts_st = st.lists(st.sampled_from(["open", "check", "close", "wait"]), min_size=1, max_size=15)


@settings(max_examples=60, deadline=None)
@given(acts_st, st.integers(1, 12))
def test_sequence_clause_length(acts, window):
    p = make_prefix(acts)
    text = render_story(p, StoryTemplate("⟨sequence⟩"), SelectedFeatures([], [], []), RenderOptions(window=window)).text
    assert len(text.split(", then ")) == min(len(acts), window)
    lov = render_list_of_values(p, SelectedFeatures([], [], []), RenderOptions(window=window))
    assert lov.label == render_story(p, StoryTemplate("⟨sequence⟩"), SelectedFeatures([], [], [])).label


@settings(max_examples=40, deadline=None)
@given(acts_st, st.text("abcxyz ", min_size=1, max_size=12).filter(str.strip))
def test_rendering_deterministic_and_values_once(acts, value):
    sel = SelectedFeatures(["colour"], [], [])
    t = StoryTemplate("Colour: <<⟨colour⟩>>. ⟨sequence⟩")
    p = make_prefix(acts, {"colour": value})
    a, b = render_story(p, t, sel), render_story(p, t, sel)
    assert a == b
    assert a.text.count(f"<<{value}>>") == 1


class TestNumbering:
    def test_sorted_codes(self):
        num = number_activities(["B", "A"])
        assert dict(num.codes) == {"A": 0, "B": 1}

    @given(st.sets(st.text(min_size=1, max_size=6), min_size=1, max_size=20))
    def test_bijection(self, names):
        num = number_activities(names)
        assert sorted(num.codes.values()) == list(range(len(names)))
        assert all(num.decode(num.encode(n)) == n for n in names)

    def test_labels_keep_names(self):
        log = EventLog([Trace("c", [Event("b", T0), Event("a", T0 + timedelta(1))])])
        p = enumerate_prefixes(log.traces[0])[0]
        story = render_story(p, StoryTemplate("⟨sequence⟩"), SelectedFeatures([], [], []), number_activities(log).apply(RenderOptions()))
        assert (story.text, story.label) == ("1", "a")


class TestExclusion:
    def test_drop_utterance(self, mip_features):
        reduced = exclude_features(mip_features, ["user utterance"])
        assert len(reduced.names) == 5
        assert "user utterance" not in reduced.names

    def test_identity_and_all(self, mip_features):
        assert exclude_features(mip_features, []) == mip_features
        everything = exclude_features(mip_features, mip_features.names)
        assert everything.story_features == []
        assert default_template(everything).body == "Sequence of recent activities: ⟨sequence⟩."

    def test_unknown(self, mip_features):
        with pytest.raises(SchemaError):
            exclude_features(mip_features, ["colour"])


def test_template_file_round_trip(tmp_path, mip_template):
    mip_template.save(tmp_path / "t.txt")
    assert StoryTemplate.load(tmp_path / "t.txt") == mip_template


def test_story_file_round_trip(tmp_path):
    stories = [Story("Sie schrieb 'grüß dich'", "end", "c1", 3), Story("x", "A", "c2", 1)]
    write_stories(stories, tmp_path / "s.jsonl")
    assert read_stories(tmp_path / "s.jsonl") == stories
    assert (tmp_path / "s.jsonl").read_text(encoding="utf-8").splitlines()[0].startswith('{"story": "Sie schrieb')
