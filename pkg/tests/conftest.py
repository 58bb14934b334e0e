from pathlib import Path

import pytest

from tumorboard.charts import ChartStore, generate_synthetic_chart, random_profile, synthetic_rubric
from tumorboard.gateway import Gateway
from tumorboard.scripted import ScriptedModel

DATA = Path(__file__).parent / "data"


def build_corpus(n: int, seed: int = 7):
    charts, rubrics, profiles = [], {}, {}
    for i in range(n):
        s = seed * 1000 + i
        profile = random_profile(s)
        chart = generate_synthetic_chart(s, profile)
        charts.append(chart)
        rubrics[chart.patient_id] = synthetic_rubric(s, profile)
        profiles[chart.patient_id] = profile
    return charts, rubrics, profiles


@pytest.fixture(scope="session")
def corpus():
    """Five seeded synthetic charts with rubrics and profiles, keyed by patient id."""
    return build_corpus(5)


@pytest.fixture
def store(corpus):
    return ChartStore.from_charts(corpus[0])


@pytest.fixture
def recording_gateway(tmp_path):
    return Gateway("record", ScriptedModel(), tmp_path / "transcripts", sleep=lambda s: None)


@pytest.fixture
def data_dir():
    return DATA


WEEK_STARTS = ("2025-03-03", "2025-03-10", "2025-03-17", "2025-03-24", "2025-03-31")


def monitoring_ratings(week_sizes=(10, 10, 5, 6, 19), planted=None, seed=0):
    """Two raters per case on every domain, good scores except ``planted`` {case_id: (r1, r2)}.

    Returns (ratings, case_dates); case ``wK-cJ`` is reviewed in week K.
    """
    import random
    from datetime import date, timedelta

    from tumorboard.model import GenerationMethod
    from tumorboard.ratings import DOMAINS, RatingRecord

    rng = random.Random(seed)
    planted = planted or {}
    ratings, case_dates = [], {}
    for w, size in enumerate(week_sizes):
        start = date.fromisoformat(WEEK_STARTS[w])
        for j in range(size):
            case = f"w{w}-c{j:02d}"
            day = start + timedelta(days=j % 5)
            case_dates[case] = day
            for domain in DOMAINS:
                pair = planted.get(case) if domain == "Overall" else None
                scores = pair or (rng.randint(3, 5), rng.randint(3, 5))
                for rater, score in zip(("r1", "r2"), scores):
                    ratings.append(RatingRecord(case, GenerationMethod.MULTI_AGENT_LOW, rater, domain, score,
                                                day + timedelta(days=1)))
    return ratings, case_dates


def fact_score_fixture(n_cases=20, dominant=True, seed=0):
    """Fact scores for the baseline and every automated method.

    With ``dominant`` each automated method beats the baseline on every
    case, by a margin that grows with its position; otherwise all methods
    tie the baseline exactly.
    """
    import random

    from tumorboard.judge import FactScore, TypeScore
    from tumorboard.model import AUTOMATED_METHODS, GenerationMethod

    rng = random.Random(seed)
    out = []
    for c in range(n_cases):
        case = f"case{c:02d}"
        base = rng.randint(5, 12)
        for k, m in enumerate((GenerationMethod.SECUREGPT, *AUTOMATED_METHODS)):
            yes = base + (3 * k + rng.randint(0, 1) if dominant and k else 0)
            by_type = {"Biomarker": TypeScore(10, min(10, yes // 3), min(10, yes // 3 + 2)),
                       "Treatment": TypeScore(30, yes - min(10, yes // 3), yes - min(10, yes // 3) + 3)}
            out.append(FactScore(case, m, 40, yes, yes + 5, by_type))
    return out


def write_run_config(root, **extra):
    """A scripted-backend run config under ``root``; returns its path."""
    import json

    cfg = {"out": "work", "cases": "work/cases.json", "charts": "work/charts", "rubrics": "work/rubrics",
           "baseline_summaries": "work/baseline_summaries", "seed": 7, "n_reps": 2000,
           "gateway": {"backend": "scripted", "transcripts": "transcripts"}, **extra}
    path = root / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def recorded_workspace(root, n_cases=5):
    """Synthesize a corpus and record generate + judge transcripts under ``root``."""
    from tumorboard.cli import main

    config = str(write_run_config(root))
    assert main(["synthesize", "--config", config, "--n", str(n_cases)]) == 0
    assert main(["generate", "--config", config, "--mode", "record"]) == 0
    assert main(["judge", "--config", config, "--mode", "record"]) == 0
    return config


def replay_outputs(config, out):
    """Replay generate, judge, and compare into ``out``; returns {relative path: bytes}."""
    from tumorboard.cli import main

    for verb in ("generate", "judge", "compare"):
        assert main([verb, "--config", config, "--mode", "replay", "--out", str(out)]) == 0
    return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, after the normal report."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when == "call" and "test_acceptance.py::" in rep.nodeid:
                lines.append((rep.nodeid.split("::")[-1], "PASS" if outcome == "passed" else "FAIL"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, status in sorted(lines, key=lambda x: int(x[0].split("_")[1])):
            terminalreporter.write_line(f"{status}  {name}")
