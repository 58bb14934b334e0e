import json

import pytest

from conftest import fact_score_fixture, monitoring_ratings, recorded_workspace, replay_outputs, write_run_config
from tumorboard.charts import chart_to_fhir_bundle
from tumorboard.cli import main
from tumorboard.judge import write_fact_scores
from tumorboard.ratings import write_ratings_csv


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    return root, recorded_workspace(root, n_cases=3)


def test_replay_is_byte_identical(workspace, tmp_path):
    _, config = workspace
    a = replay_outputs(config, tmp_path / "a")
    b = replay_outputs(config, tmp_path / "b")
    assert a == b
    assert {"generate_manifest.json", "entailment.jsonl", "fact_scores.json", "compare/comparison.json"} <= set(a)
    manifest = json.loads(a["generate_manifest.json"])
    assert len(manifest["artifacts"]) == 3 * 5 and not manifest["failures"]


def test_judge_scores_baseline_and_generated(workspace, tmp_path):
    _, config = workspace
    replay_outputs(config, tmp_path)
    scores = json.loads((tmp_path / "fact_scores.json").read_text())["fact_scores"]
    methods = {s["method"] for s in scores}
    assert "SecureGPT" in methods and len(methods) == 6


def test_missing_case_is_partial(workspace, tmp_path):
    root, _ = workspace
    cases = json.loads((root / "work" / "cases.json").read_text())["cases"]
    cases.append({"case_id": "ghost", "patient_id": "ghost", "as_of": "2025-06-02"})
    config = write_run_config(tmp_path, cases=cases, charts=str(root / "work" / "charts"),
                              strategies=["SingleNote"], gateway={"backend": "scripted"})
    assert main(["generate", "--config", str(config), "--mode", "live"]) == 1
    manifest = json.loads((tmp_path / "work" / "generate_manifest.json").read_text())
    assert [f["case_id"] for f in manifest["failures"]] == ["ghost"]
    assert "PatientNotFound" in manifest["failures"][0]["error"]
    assert len(manifest["artifacts"]) == 3


def test_replay_miss_is_partial(workspace, tmp_path):
    root, _ = workspace
    config = write_run_config(tmp_path, cases=str(root / "work" / "cases.json"), charts=str(root / "work" / "charts"),
                              strategies=["SingleNote"], model_id="some-other-model")
    assert main(["generate", "--config", str(config)]) == 1


@pytest.mark.parametrize("argv", [
    ["generate", "--config", "does-not-exist.json"],
    ["synthesize"],
])
def test_config_errors(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_bad_strategy_is_config_error(tmp_path):
    config = write_run_config(tmp_path, strategies=["Physician"])
    assert main(["generate", "--config", str(config)]) == 2


def test_ingest_charts(corpus, tmp_path):
    good = tmp_path / "good.json"
    good.write_text(json.dumps(chart_to_fhir_bundle(corpus[0][0])))
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    config = write_run_config(tmp_path)
    assert main(["ingest-charts", "--config", str(config), str(good)]) == 0
    assert main(["ingest-charts", "--config", str(config), str(good), str(bad)]) == 1
    report = json.loads((tmp_path / "work" / "ingest_report.json").read_text())
    assert "error" in report["bundles"][1]


def test_compare_and_monitor(tmp_path):
    write_fact_scores(tmp_path / "fs.csv", tmp_path / "fs.json", fact_score_fixture())
    ratings, dates = monitoring_ratings(planted={"w4-c03": (2, 2)})
    write_ratings_csv(tmp_path / "ratings.csv", ratings)
    config = write_run_config(tmp_path, fact_scores="fs.json", ratings="ratings.csv", n_reps=500,
                              case_dates={k: v.isoformat() for k, v in dates.items()},
                              week_boundaries=["2025-03-03", "2025-03-10", "2025-03-17", "2025-03-24", "2025-03-31"])
    assert main(["compare", "--config", str(config)]) == 0
    rows = (tmp_path / "work" / "compare" / "comparisons.csv").read_text().splitlines()
    assert len(rows) == 11 and all(r.endswith(",*") for r in rows[1:])
    assert main(["monitor", "--config", str(config)]) == 0
    monitor = json.loads((tmp_path / "work" / "monitor" / "monitor.json").read_text())
    flagged = [r for r in monitor["rows"] if r["flags"]["any_case_below"]]
    assert [r["cases_below"] for r in flagged] == [["w4-c03"]]


def test_agreement(tmp_path):
    labels = tmp_path / "labels.csv"
    lines = ["case_id,method,attribute_id,rater_id,entailment"]
    for c in range(4):
        for a in range(5):
            for rater in ("p1", "p2"):
                lab = ("Yes", "No", "Partial")[(c + a + (rater == "p2" and a == 0)) % 3]
                lines.append(f"c{c},SingleStep,{a + 1},{rater},{lab}")
    labels.write_text("\n".join(lines) + "\n")
    config = write_run_config(tmp_path, labels="labels.csv", n_reps=200)
    assert main(["agreement", "--config", str(config)]) == 0
    report = json.loads((tmp_path / "work" / "agreement" / "agreement.json").read_text())
    assert report["raters"] == ["p1", "p2"]
    assert main(["agreement", "--config", str(write_run_config(tmp_path))]) == 2
