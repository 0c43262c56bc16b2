"""Constructed event logs whose optimal next-activity predictor is known."""

import random
from datetime import datetime, timedelta

from snapstories.eventlog import END, Event, EventLog, Trace, apply_schema, infer_attribute_kinds

T0 = datetime(2024, 1, 1, 9, 0, 0)


def build_log(cases, overrides=None):
    """``cases`` is a list of (case_id, [(activity, attrs), ...]); events are spaced by seeded gaps."""
    rng = random.Random(len(cases))
    traces = []
    for case_id, steps in cases:
        t = T0 + timedelta(hours=rng.randint(0, 1000))
        events = []
        for activity, attrs in steps:
            t += timedelta(minutes=rng.randint(1, 240))
            events.append(Event(activity, t, dict(attrs)))
        traces.append(Trace(case_id, events))
    raw = EventLog(traces, (), "activity")
    return apply_schema(raw, infer_attribute_kinds(raw, overrides))


# two disjoint chains, each activity has exactly one successor
CHAINS = (
    ("register", "check", "approve", "pay", "archive"),
    ("intake", "triage", "treat", "discharge"),
)


def deterministic_log(n_cases=200, seed=0):
    rng = random.Random(seed)
    cases = []
    for i in range(n_cases):
        chain = CHAINS[rng.randrange(len(CHAINS))]
        office = rng.choice(["north", "south", "east"])
        cases.append((f"c{i:04d}", [(a, {"office": office}) for a in chain]))
    return build_log(cases)


INTENTS = {
    "check balance": ["how much money is left on my account", "show me the current balance please"],
    "transfer money": ["send some money over to my landlord", "i want to move funds to savings"],
    "block card": ["my card got stolen yesterday evening", "please freeze my debit card right now"],
    "open ticket": ["i have a complaint about the last fee", "something is wrong with my statement"],
}
FAREWELLS = ["that is all thank you goodbye", "nothing else for today bye"]


def _utterance(rng, phrases):
    return f"{rng.choice(phrases)} ref {rng.randint(1000, 99999)}"


def utterance_log(n_cases=150, seed=0, min_len=2, max_len=5):
    """Each user utterance announces the next skill; the last one says goodbye.

    The skill sequence itself is uniform random, so without the utterance
    the next activity is close to unpredictable.
    """
    rng = random.Random(seed)
    skills = sorted(INTENTS)
    cases = []
    for i in range(n_cases):
        n = rng.randint(min_len, max_len)
        acts = ["welcome"] + [rng.choice(skills) for _ in range(n - 1)]
        steps = []
        for j, act in enumerate(acts):
            nxt = acts[j + 1] if j + 1 < n else None
            text = _utterance(rng, INTENTS[nxt] if nxt else FAREWELLS)
            steps.append((act, {"role": rng.choice(["member", "guest"]), "user utterance": text}))
        cases.append((f"s{i:04d}", steps))
    return build_log(cases, overrides={"user utterance": "free_text"})


def label_copy_log(n_cases=120, seed=0):
    """Random walks with a ``hint`` attribute equal to the next activity plus two noise attributes."""
    rng = random.Random(seed)
    acts = ["a", "b", "c", "d", "e"]
    cases = []
    for i in range(n_cases):
        seq = [rng.choice(acts) for _ in range(rng.randint(2, 6))]
        steps = []
        for j, act in enumerate(seq):
            hint = seq[j + 1] if j + 1 < len(seq) else END
            steps.append(
                (act, {"hint": f"h_{hint}", "noise": rng.choice(["x", "y", "z"]), "dept": rng.choice(["p", "q"])})
            )
        cases.append((f"r{i:04d}", steps))
    return build_log(cases)


def shuffled_cases(n, seed=0):
    return [f"case{i}" for i in random.Random(seed).sample(range(n), n)]
