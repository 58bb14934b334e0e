import json

import pytest
from hypothesis import given, strategies as st

from tumorboard.errors import JudgeSchemaViolation, MissingRecords
from tumorboard.gateway import ChatResponse, Gateway
from tumorboard.judge import (
    ENTAILMENT_LABELS,
    EntailmentRecord,
    build_judge_request,
    judge_attribute,
    judge_summary,
    parse_judge_reply,
    read_entailment_jsonl,
    read_fact_scores,
    score_summary,
    serialize_attribute,
    write_entailment_jsonl,
    write_fact_scores,
)
from tumorboard.model import Attribute, GenerationMethod, Rubric
from tumorboard.scripted import ScriptedModel


@pytest.fixture
def golden(data_dir):
    d = data_dir / "golden_judge"
    attr = Attribute.from_dict(json.loads((d / "attribute.json").read_text()))
    return attr, (d / "summary.txt").read_text(), (d / "reply.txt").read_text(), d / "transcripts"


def fixed(reply):
    calls = []

    def backend(request):
        calls.append(request)
        return ChatResponse(reply(len(calls)) if callable(reply) else reply)

    return Gateway("live", backend), calls


GOLDEN_RECORDS = [
    {"attribute_id": "4", "entailment": "Partial", "error_type": "Missing"},
    {"attribute_id": "4a", "entailment": "Yes"},
    {"attribute_id": "4b", "entailment": "No", "error_type": "Missing"},
]


class TestGolden:
    def test_replay(self, golden):
        attr, summary, _, transcripts = golden
        records = judge_attribute(attr, summary, Gateway("replay", transcripts=transcripts))
        assert [r.to_dict() for r in records] == GOLDEN_RECORDS

    def test_serialization_matches_fixture(self, golden, data_dir):
        attr = golden[0]
        on_disk = json.loads((data_dir / "golden_judge" / "attribute.json").read_text())
        assert json.loads(serialize_attribute(attr)) == on_disk

    def test_request_parameters(self, golden):
        attr, summary, _, _ = golden
        r = build_judge_request(attr, summary)
        assert r.model_id == "gpt-5" and r.temperature is None and r.reasoning_effort == "medium"
        assert serialize_attribute(attr) in r.messages[0]["content"]
        assert summary in r.messages[0]["content"]

    def test_parse_fenced_reply(self, golden):
        attr, _, reply, _ = golden
        assert [r.to_dict() for r in parse_judge_reply(reply, attr)] == GOLDEN_RECORDS


class TestSchema:
    def attr(self):
        return Attribute("4", "Surg_tx", "Resection 2021", "Critical", (
            Attribute("4a", "Surg_tx_attribute", "Resection", "Critical"),
            Attribute("4b", "Surg_tx_attribute", "2021", "Medium"),
        ))

    def test_missing_child_exhausts_reasks(self):
        bad = json.dumps(GOLDEN_RECORDS[:2])
        gw, calls = fixed(bad)
        with pytest.raises(JudgeSchemaViolation):
            judge_attribute(self.attr(), "summary", gw)
        assert len(calls) == 3

    def test_yes_with_error_type(self):
        bad = [dict(GOLDEN_RECORDS[0]), {"attribute_id": "4a", "entailment": "Yes", "error_type": "Missing"},
               GOLDEN_RECORDS[2]]
        with pytest.raises(ValueError):
            parse_judge_reply(json.dumps(bad), self.attr())
        gw, _ = fixed(json.dumps(bad))
        with pytest.raises(JudgeSchemaViolation):
            judge_attribute(self.attr(), "summary", gw)

    def test_reask_recovers(self):
        gw, calls = fixed(lambda n: "not json" if n == 1 else json.dumps(GOLDEN_RECORDS))
        records = judge_attribute(self.attr(), "summary", gw)
        assert len(records) == 3 and len(calls) == 2
        assert "rejected" in calls[1].messages[-1]["content"]

    def test_out_of_order_reply_is_reordered(self):
        reply = json.dumps(list(reversed(GOLDEN_RECORDS)))
        assert [r.attribute_id for r in parse_judge_reply(reply, self.attr())] == ["4", "4a", "4b"]

    @pytest.mark.parametrize("reply", [
        "", "{}", "[]", "[1, 2, 3]",
        json.dumps(GOLDEN_RECORDS + [{"attribute_id": "4c", "entailment": "Yes"}]),
        json.dumps([GOLDEN_RECORDS[0], GOLDEN_RECORDS[1], GOLDEN_RECORDS[1]]),
        json.dumps([GOLDEN_RECORDS[0], GOLDEN_RECORDS[1], {"attribute_id": "4b", "entailment": "Maybe",
                                                           "error_type": "Other"}]),
        json.dumps([GOLDEN_RECORDS[0], GOLDEN_RECORDS[1], {"attribute_id": "4b", "entailment": "No"}]),
        json.dumps([GOLDEN_RECORDS[0], GOLDEN_RECORDS[1], {**GOLDEN_RECORDS[2], "confidence": 0.9}]),
        json.dumps([GOLDEN_RECORDS[0], GOLDEN_RECORDS[1], {"attribute_id": 4, "entailment": "Yes"}]),
    ])
    def test_malformed_rejected(self, reply):
        with pytest.raises(ValueError):
            parse_judge_reply(reply, self.attr())

    @given(st.text(max_size=200))
    def test_fuzz_never_crashes_unexpectedly(self, reply):
        try:
            records = parse_judge_reply(reply, self.attr())
        except ValueError:
            return
        assert [r.attribute_id for r in records] == ["4", "4a", "4b"]

    @given(st.lists(st.tuples(st.sampled_from(ENTAILMENT_LABELS), st.sampled_from(["Missing", "Incorrect"])),
                    min_size=3, max_size=3))
    def test_round_trip(self, labels):
        recs = [EntailmentRecord(aid, lab, None if lab == "Yes" else err)
                for aid, (lab, err) in zip(["4", "4a", "4b"], labels)]
        assert parse_judge_reply(json.dumps([r.to_dict() for r in recs]), self.attr()) == recs

    def test_empty_summary(self):
        gw, _ = fixed("[]")
        with pytest.raises(ValueError):
            judge_attribute(self.attr(), "  ", gw)


def nine_item_rubric():
    """Six attributes, three of which carry two children: nine scored items."""
    attrs = []
    for i in range(1, 7):
        subs = None
        if i % 2 == 0:
            subs = (Attribute(f"{i}a", "Stage", "x"), Attribute(f"{i}b", "Stage", "y"))
        attrs.append(Attribute(str(i), "Stage" if subs else "Biomarker", "v", subattributes=subs))
    return Rubric("P", tuple(attrs))


def label(aid, lab):
    return EntailmentRecord(aid, lab, None if lab == "Yes" else "Missing")


class TestScoring:
    LEAVES = {"1": "Yes", "2a": "Yes", "2b": "Partial", "3": "No", "4a": "Yes", "4b": "Partial",
              "5": "No", "6a": "No", "6b": "No"}

    def records(self, parent_label="No"):
        recs = [label(k, v) for k, v in self.LEAVES.items()]
        return recs + [label(p, parent_label) for p in ("2", "4", "6")]

    def test_nine_items(self):
        s = score_summary(nine_item_rubric(), self.records(), "P", "SingleStep")
        assert s.n_items == 9
        assert s.fully_present == pytest.approx(3 / 9)
        assert s.fully_or_partial == pytest.approx(5 / 9)
        assert s.method is GenerationMethod.SINGLE_STEP

    @given(st.lists(st.sampled_from(ENTAILMENT_LABELS), min_size=3, max_size=3))
    def test_parent_labels_do_not_count(self, parents):
        recs = [label(k, v) for k, v in self.LEAVES.items()]
        recs += [label(p, lab) for p, lab in zip(("2", "4", "6"), parents)]
        s = score_summary(nine_item_rubric(), recs)
        assert (s.n_yes, s.n_yes_or_partial) == (3, 5)

    def test_by_type_recount(self):
        s = score_summary(nine_item_rubric(), self.records())
        # Stage children: 2a 2b 4a 4b 6a 6b; Biomarker leaves: 1 3 5
        assert s.by_type["Stage"].to_dict()["n_items"] == 6
        assert (s.by_type["Stage"].n_yes, s.by_type["Stage"].n_yes_or_partial) == (2, 4)
        assert (s.by_type["Biomarker"].n_yes, s.by_type["Biomarker"].n_yes_or_partial) == (1, 1)
        assert sum(t.n_items for t in s.by_type.values()) == s.n_items

    def test_missing_records(self):
        recs = [r for r in self.records() if r.attribute_id != "4b"]
        with pytest.raises(MissingRecords):
            score_summary(nine_item_rubric(), recs)

    def test_conflicting_duplicates(self):
        with pytest.raises(ValueError):
            score_summary(nine_item_rubric(), self.records() + [label("1", "No")])


class TestWholeSummary:
    def test_judge_summary_scripted(self, corpus):
        charts, rubrics, _ = corpus
        rubric = rubrics[charts[0].patient_id]
        gw = Gateway("live", ScriptedModel())
        summary = "ID: [X]\n\nBiomarkers/NGS: none\n\nPrior therapy: none"
        serial = judge_summary(rubric, summary, gw)
        parallel = judge_summary(rubric, summary, gw, max_workers=4)
        assert serial == parallel
        assert [r.attribute_id for r in serial] == rubric.all_ids
        score_summary(rubric, serial)

    def test_files_round_trip(self, tmp_path):
        recs = TestScoring().records()
        rows = [("P", GenerationMethod.MULTI_STEP, r) for r in recs]
        write_entailment_jsonl(tmp_path / "e.jsonl", rows)
        assert list(read_entailment_jsonl(tmp_path / "e.jsonl")) == rows
        score = score_summary(nine_item_rubric(), recs, "P", GenerationMethod.MULTI_STEP)
        write_fact_scores(tmp_path / "f.csv", tmp_path / "f.json", [score])
        assert read_fact_scores(tmp_path / "f.json") == [score]
        assert (tmp_path / "f.csv").read_text().splitlines()[0].startswith("case_id,method,n_items")
