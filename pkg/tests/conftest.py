from pathlib import Path

import pytest

from snapstories.eventlog import enumerate_prefixes, load_jsonl
from snapstories.featsel import SelectedFeatures
from snapstories.storygen import StoryTemplate

DATA = Path(__file__).parent / "data"


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def mip_log():
    return load_jsonl(DATA / "mip_case.jsonl", activity_key="skill")


@pytest.fixture
def mip_features():
    return SelectedFeatures(
        ["role", "turn number", "session number"], ["user utterance", "chatbot response"], [], "skill"
    )


@pytest.fixture
def mip_prefix(mip_log):
    # k=4: welcome .. report project assessments, next skill is "Report learning activities"
    return enumerate_prefixes(mip_log.traces[0])[3]


@pytest.fixture
def mip_template():
    return StoryTemplate.load(DATA / "mip_template.txt")
