"""LLM-as-judge fact scoring against a rubric.

Each rubric attribute is judged with its own prompt. The reply must be a
JSON array with one record for the attribute and one per subattribute;
anything else is re-asked a bounded number of times, then rejected.
Scores use the highest-granularity items only, so a parent label never
counts when the parent has subattributes.
"""

from __future__ import annotations

import csv
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

from .errors import JudgeSchemaViolation, MissingRecords
from .gateway import ChatRequest, Gateway
from .model import (
    SCHEMA_VERSION,
    Attribute,
    GenerationMethod,
    Rubric,
    dump_json,
    items_at_highest_granularity,
    write_text_atomic,
)
from .prompts import load_prompt

ENTAILMENT_LABELS = ("Yes", "Partial", "No")
ERROR_TYPES = ("Missing", "Incorrect", "Ambiguous", "Other")
JUDGE_MODEL = "gpt-5"
_RECORD_KEYS = {"attribute_id", "entailment", "error_type"}
_FENCE_RE = re.compile(r"^```[A-Za-z]*\s*\n?(.*?)\n?```\s*$", re.DOTALL)


@dataclass(frozen=True)
class EntailmentRecord:
    attribute_id: str
    entailment: str
    error_type: str | None = None

    def __post_init__(self):
        if self.entailment not in ENTAILMENT_LABELS:
            raise ValueError(f"entailment must be one of {ENTAILMENT_LABELS}, got {self.entailment!r}")
        if self.entailment == "Yes":
            if self.error_type is not None:
                raise ValueError(f"{self.attribute_id}: error_type must be absent when entailment is Yes")
        elif self.error_type not in ERROR_TYPES:
            raise ValueError(f"{self.attribute_id}: {self.entailment} needs an error_type in {ERROR_TYPES}")

    def to_dict(self) -> dict[str, Any]:
        d = {"attribute_id": self.attribute_id, "entailment": self.entailment}
        if self.error_type is not None:
            d["error_type"] = self.error_type
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EntailmentRecord":
        return cls(str(d["attribute_id"]), d["entailment"], d.get("error_type"))


def serialize_attribute(attr: Attribute) -> str:
    """Attribute as the pretty JSON object the judge prompt embeds."""
    return json.dumps(attr.to_dict(), indent=2, ensure_ascii=False)


def build_judge_request(attr: Attribute, summary_text: str, model_id: str = JUDGE_MODEL) -> ChatRequest:
    prompt = load_prompt("judge").render(attribute_json=serialize_attribute(attr), patient_summary=summary_text)
    return ChatRequest(model_id, ({"role": "user", "content": prompt},), temperature=None, reasoning_effort="medium")


def parse_judge_reply(text: str, attr: Attribute) -> list[EntailmentRecord]:
    """Validate a judge reply against the expected id set; raises ValueError."""
    body = text.strip()
    m = _FENCE_RE.match(body)
    if m:
        body = m.group(1).strip()
    try:
        data = json.loads(body)
    except json.JSONDecodeError as exc:
        raise ValueError(f"reply is not valid JSON ({exc.msg})") from None
    if not isinstance(data, list):
        raise ValueError("reply must be a JSON array")
    expected = attr.expected_ids
    if len(data) != len(expected):
        raise ValueError(f"expected {len(expected)} records, got {len(data)}")
    records = []
    for obj in data:
        if not isinstance(obj, dict):
            raise ValueError("every array element must be an object")
        extra = set(obj) - _RECORD_KEYS
        if extra:
            raise ValueError(f"unexpected keys {sorted(extra)}")
        if not isinstance(obj.get("attribute_id"), str):
            raise ValueError("attribute_id must be a string")
        try:
            records.append(EntailmentRecord.from_dict(obj))
        except (KeyError, ValueError) as exc:
            raise ValueError(str(exc).strip("'")) from None
    ids = [r.attribute_id for r in records]
    if len(set(ids)) != len(ids) or set(ids) != set(expected):
        raise ValueError(f"attribute ids {sorted(ids)} do not match the expected set {sorted(expected)}")
    order = {aid: i for i, aid in enumerate(expected)}
    return sorted(records, key=lambda r: order[r.attribute_id])


def judge_attribute(attr: Attribute, summary_text: str, gateway: Gateway, model_id: str = JUDGE_MODEL,
                    max_reasks: int = 2) -> list[EntailmentRecord]:
    if not summary_text.strip():
        raise ValueError("summary_text must be nonempty")
    request = build_judge_request(attr, summary_text, model_id)
    messages = list(request.messages)
    problem = ""
    for attempt in range(max_reasks + 1):
        reply = gateway.complete(ChatRequest(model_id, tuple(messages), temperature=None,
                                             reasoning_effort="medium")).content or ""
        try:
            return parse_judge_reply(reply, attr)
        except ValueError as exc:
            problem = str(exc)
        messages += [
            {"role": "assistant", "content": reply},
            {"role": "user", "content": f"Your response was rejected: {problem}. Reply with only the JSON array, "
                                        f"one object per id in {attr.expected_ids}."},
        ]
    raise JudgeSchemaViolation(f"attribute {attr.attribute_id}: {problem} (after {max_reasks} re-asks)")


def judge_summary(rubric: Rubric, summary_text: str, gateway: Gateway, model_id: str = JUDGE_MODEL,
                  max_workers: int = 1) -> list[EntailmentRecord]:
    """Judge every rubric attribute; records come back in rubric order."""
    def one(attr: Attribute) -> list[EntailmentRecord]:
        return judge_attribute(attr, summary_text, gateway, model_id)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers) as pool:
            batches = list(pool.map(one, rubric.attributes))
    else:
        batches = [one(a) for a in rubric.attributes]
    return [r for batch in batches for r in batch]


# ---------------------------------------------------------------------------
# aggregation


@dataclass(frozen=True)
class TypeScore:
    n_items: int
    n_yes: int
    n_yes_or_partial: int

    @property
    def fully_present(self) -> float:
        return self.n_yes / self.n_items

    @property
    def fully_or_partial(self) -> float:
        return self.n_yes_or_partial / self.n_items

    def to_dict(self) -> dict[str, Any]:
        return {"n_items": self.n_items, "n_yes": self.n_yes, "n_yes_or_partial": self.n_yes_or_partial,
                "fully_present": self.fully_present, "fully_or_partial": self.fully_or_partial}


@dataclass(frozen=True)
class FactScore:
    case_id: str
    method: GenerationMethod | None
    n_items: int
    n_yes: int
    n_yes_or_partial: int
    by_type: Mapping[str, TypeScore] = field(default_factory=dict)

    @property
    def fully_present(self) -> float:
        return self.n_yes / self.n_items

    @property
    def fully_or_partial(self) -> float:
        return self.n_yes_or_partial / self.n_items

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "method": self.method.value if self.method else None,
            "n_items": self.n_items,
            "n_yes": self.n_yes,
            "n_yes_or_partial": self.n_yes_or_partial,
            "fully_present": self.fully_present,
            "fully_or_partial": self.fully_or_partial,
            "by_type": {k: v.to_dict() for k, v in self.by_type.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FactScore":
        return cls(
            case_id=d["case_id"],
            method=GenerationMethod.parse(d["method"]) if d.get("method") else None,
            n_items=d["n_items"],
            n_yes=d["n_yes"],
            n_yes_or_partial=d["n_yes_or_partial"],
            by_type={k: TypeScore(v["n_items"], v["n_yes"], v["n_yes_or_partial"])
                     for k, v in d.get("by_type", {}).items()},
        )


def score_summary(rubric: Rubric, records: Iterable[EntailmentRecord], case_id: str = "",
                  method: "GenerationMethod | str | None" = None) -> FactScore:
    by_id: dict[str, EntailmentRecord] = {}
    for r in records:
        if r.attribute_id in by_id and by_id[r.attribute_id] != r:
            raise ValueError(f"conflicting records for attribute {r.attribute_id}")
        by_id[r.attribute_id] = r
    missing = [i for i in rubric.all_ids if i not in by_id]
    if missing:
        raise MissingRecords(missing)

    counts: dict[str, list[int]] = {}
    for item in items_at_highest_granularity(rubric):
        label = by_id[item.item_id].entailment
        c = counts.setdefault(item.attribute_type, [0, 0, 0])
        c[0] += 1
        c[1] += label == "Yes"
        c[2] += label in ("Yes", "Partial")
    by_type = {t: TypeScore(*c) for t, c in counts.items()}
    return FactScore(
        case_id=case_id,
        method=GenerationMethod.parse(method) if method is not None else None,
        n_items=sum(c[0] for c in counts.values()),
        n_yes=sum(c[1] for c in counts.values()),
        n_yes_or_partial=sum(c[2] for c in counts.values()),
        by_type=by_type,
    )


# ---------------------------------------------------------------------------
# files


def write_entailment_jsonl(path: "str | Path", rows: Iterable[tuple[str, GenerationMethod, EntailmentRecord]]) -> None:
    lines = [
        json.dumps({"case_id": case_id, "method": GenerationMethod.parse(method).value, **rec.to_dict()},
                   sort_keys=True, ensure_ascii=False)
        for case_id, method, rec in rows
    ]
    write_text_atomic(Path(path), "".join(line + "\n" for line in lines))


def read_entailment_jsonl(path: "str | Path") -> Iterator[tuple[str, GenerationMethod, EntailmentRecord]]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                yield d["case_id"], GenerationMethod.parse(d["method"]), EntailmentRecord.from_dict(d)


FACT_SCORE_COLUMNS = ("case_id", "method", "n_items", "n_yes", "n_yes_or_partial", "fully_present", "fully_or_partial")


def write_fact_scores(csv_path: "str | Path", json_path: "str | Path", scores: Sequence[FactScore]) -> None:
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FACT_SCORE_COLUMNS)
        for s in scores:
            d = s.to_dict()
            w.writerow([repr(d[c]) if isinstance(d[c], float) else d[c] for c in FACT_SCORE_COLUMNS])
    write_text_atomic(Path(json_path), dump_json({"schema_version": SCHEMA_VERSION,
                                                 "fact_scores": [s.to_dict() for s in scores]}))


def read_fact_scores(json_path: "str | Path") -> list[FactScore]:
    data = json.loads(Path(json_path).read_text(encoding="utf-8"))
    return [FactScore.from_dict(d) for d in data["fact_scores"]]
