"""Deterministic rule-based chat backend.

``ScriptedModel`` stands in for a hosted model when recording transcripts
for tests and demos. It recognizes each prompt template and agent system
prompt, reads facts from labeled lines (``Patient:``, ``NGS result:``,
``Prior therapy:`` ...), and answers in the shape the caller expects. Its
output depends only on the request, so recorded transcripts are stable.

It is not a summarizer: it only knows the line formats produced by the
synthetic chart generator and by its own extracts.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .gateway import ChatRequest, ChatResponse
from .model import CHARACTER_LIMIT
from .prompts import load_prompt

_AGENT_ASSETS = {
    f"{level}_{role}": (level, role)
    for level in ("low", "high")
    for role in ("data_loader", "fhir", "curator", "summarizer")
}
_HIGH_LOOKBACKS = (180, 365, 730, 1095)
_NO_INFO = "Note does not include any relevant information."


def _prefix(template_id: str) -> str:
    t = load_prompt(template_id)
    cut = min((t.text.index("{" + p + "}") for p in t.placeholders), default=len(t.text))
    return t.text[:cut]


@dataclass
class Facts:
    """Facts gathered from labeled lines, each remembered with its source line."""

    last_name: str | None = None
    age_sex: str | None = None
    diagnosis: str | None = None
    smoking: str | None = None
    biomarkers: list[str] = field(default_factory=list)
    therapies: list[str] = field(default_factory=list)
    note_date: str | None = None
    sources: dict[str, tuple[str, str]] = field(default_factory=dict)  # fact -> (note_id, line)

    @property
    def empty(self) -> bool:
        return not (self.last_name or self.age_sex or self.diagnosis or self.biomarkers or self.therapies)

    def _add(self, bucket: list[str], value: str, source: tuple[str, str] | None) -> None:
        value = value.strip().rstrip(".").strip()
        if value and value.lower() not in ("unknown", "none") and value not in bucket:
            bucket.append(value)
            if source:
                self.sources.setdefault(value, source)


_SEX = {"male": "M", "female": "F"}


def _items(value: str) -> list[str]:
    return [v.strip() for v in value.rstrip(".").split(";") if v.strip()]


def read_facts(text: str, facts: Facts | None = None, note_id: str = "") -> Facts:
    """Merge the facts stated on labeled lines of ``text`` into ``facts``."""
    f = facts or Facts()
    age = None
    for raw in text.splitlines():
        line = raw.strip()
        label, sep, value = line.partition(":")
        if not sep:
            continue
        value = value.strip()
        src = (note_id, line) if note_id else None
        if label in ("Date of service", "Note Date"):
            f.note_date = value
        elif label == "Patient":
            m = re.match(r"([A-Z][A-Z'\- ]*), age (\d+), (male|female)", value)
            if m:
                f.last_name, f.age_sex = m.group(1), f"{m.group(2)}{_SEX[m.group(3)]}"
                if src:
                    f.sources.setdefault("ID", src)
        elif label == "Last name" and value:
            f.last_name = f.last_name or value
        elif label == "Age" and value.isdigit():
            age = value
        elif label == "Sex" and value in ("M", "F") and age and not f.age_sex:
            f.age_sex = age + value
        elif label == "Diagnosis":
            f.diagnosis = value.rstrip(".")
            if src:
                f.sources.setdefault(f.diagnosis, src)
        elif label == "Smoking history":
            f.smoking = value.rstrip(".")
        elif label in ("Biomarkers", "NGS result", "Biomarkers/NGS"):
            for v in _items(value):
                f._add(f.biomarkers, v, src)
        elif label in ("Treatment history", "Prior therapy"):
            for v in _items(value):
                f._add(f.therapies, v, src)
        elif label in ("Radiation", "Procedure"):
            f._add(f.therapies, value, src)
        elif label == "ID":
            # extract format: "NAME 65M - diagnosis; smoking"
            m = re.match(r"(?:\[?([A-Z][A-Z'\- ]*?)\]?\s+)?(\d+[MF])\s*[-,]\s*(.*)$", value)
            if m:
                f.last_name = f.last_name or m.group(1)
                f.age_sex = f.age_sex or m.group(2)
                diag, _, smoke = m.group(3).partition(";")
                f.diagnosis = f.diagnosis or diag.strip().rstrip(".") or None
                f.smoking = f.smoking or smoke.strip().rstrip(".") or None
    f.therapies.sort(key=lambda t: (t[:10], t))
    return f


def render_summary_text(f: Facts, limit: int = CHARACTER_LIMIT) -> str:
    name = f"[{f.last_name}] " if f.last_name else ""
    id_parts = [p for p in (f.age_sex, f.diagnosis) if p]
    id_line = name + (", ".join(id_parts) if id_parts else "Unknown")
    if f.smoking:
        id_line += f"; {f.smoking}"
    therapies = list(f.therapies)
    while True:
        text = (f"ID: {id_line}.\n\nBiomarkers/NGS: {'; '.join(f.biomarkers) or 'Unknown'}.\n\n"
                f"Prior therapy: {'; '.join(therapies) or 'Unknown'}.")
        if len(text) <= limit or not therapies:
            return text[:limit]
        therapies.pop(0)


def render_extract(f: Facts) -> str:
    if f.empty:
        return _NO_INFO
    lines = [f"Note Date: {f.note_date or 'Unknown'}"]
    if f.age_sex or f.diagnosis:
        who = " ".join(p for p in (f.last_name, f.age_sex) if p)
        lines.append(f"ID: {who} - {f.diagnosis or 'Unknown'}" + (f"; {f.smoking}" if f.smoking else ""))
    if f.biomarkers:
        lines.append("Biomarkers/NGS: " + "; ".join(f.biomarkers))
    if f.therapies:
        lines.append("Prior therapy: " + "; ".join(f.therapies))
    return "\n".join(lines)


def _judge_labels(attribute: Mapping[str, Any], summary: str) -> list[dict[str, Any]]:
    hay = summary.casefold()

    def present(value: str) -> bool:
        return value.casefold() in hay

    subs = attribute.get("subattributes") or []
    out = []
    if subs:
        flags = [present(s["value"]) for s in subs]
        label = "Yes" if all(flags) else ("Partial" if any(flags) else "No")
    else:
        flags = []
        label = "Yes" if present(attribute["value"]) else "No"
    out.append({"attribute_id": attribute["attribute_id"], "entailment": label,
                "error_type": None if label == "Yes" else "Missing"})
    for s, ok in zip(subs, flags):
        out.append({"attribute_id": s["attribute_id"], "entailment": "Yes" if ok else "No",
                    "error_type": None if ok else "Missing"})
    return out


def _call(name: str, args: Mapping[str, Any], n: int) -> dict[str, Any]:
    return {"id": f"call_{name}_{n}", "type": "function",
            "function": {"name": name, "arguments": json.dumps(args, sort_keys=True)}}


def _tool_results(messages: Sequence[Mapping[str, Any]]) -> list[Any]:
    out = []
    for m in messages:
        if m.get("role") == "tool":
            try:
                out.append(json.loads(m.get("content") or "null"))
            except ValueError:
                out.append(m.get("content"))
    return out


_PID_RE = re.compile(r"patient ID (\S+?)\.?$")


class ScriptedModel:
    """Rule-based stand-in for a chat-completions model.

    ``overflow_summaries`` makes the first N summary drafts in a
    conversation exceed the character limit, to exercise regeneration.
    """

    def __init__(self, overflow_summaries: int = 0, limit: int = CHARACTER_LIMIT):
        self.overflow_summaries = overflow_summaries
        self.limit = limit
        self._system = {load_prompt(a).text: a for a in _AGENT_ASSETS}
        self._prefixes = {t: _prefix(t) for t in
                          ("judge", "curator_filter_item", "multistep_extract", "multistep_synthesis", "single_step")}
        judge = load_prompt("judge").text
        a, rest = judge.split("{attribute_json}")
        mid, tail = rest.split("{patient_summary}")
        self._judge_parts = (a, mid, tail)

    def __call__(self, request: ChatRequest) -> ChatResponse:
        msgs = request.messages
        first = msgs[0].get("content") or ""
        if msgs[0].get("role") == "system" and first in self._system:
            level, role = _AGENT_ASSETS[self._system[first]]
            if len(msgs) > 1 and (msgs[1].get("content") or "").startswith(self._prefixes["curator_filter_item"]):
                return self._filter_verdict(level, msgs[1]["content"])
            return getattr(self, f"_agent_{role}")(level, msgs)
        if first.startswith(self._prefixes["judge"]):
            return self._judge(first)
        if first.startswith(self._prefixes["multistep_extract"]):
            return ChatResponse(render_extract(read_facts(first[len(self._prefixes["multistep_extract"]):])))
        for t in ("multistep_synthesis", "single_step"):
            if first.startswith(self._prefixes[t]):
                return ChatResponse(self._draft(read_facts(first[len(self._prefixes[t]):]), msgs))
        return ChatResponse("I can only answer the prompts this pipeline sends.")

    # -- summaries

    def _corrections(self, msgs: Sequence[Mapping[str, Any]]) -> int:
        return sum(1 for m in msgs if m.get("role") == "assistant" and not m.get("tool_calls"))

    def _draft(self, facts: Facts, msgs: Sequence[Mapping[str, Any]]) -> str:
        text = render_summary_text(facts, self.limit)
        if self._corrections(msgs) < self.overflow_summaries:
            text += "\n\nOther: " + "details " * (self.limit // 8 + 1)
        return text

    # -- judge

    def _judge(self, prompt: str) -> ChatResponse:
        head, mid, tail = self._judge_parts
        body = prompt[len(head):]
        attr_json, _, rest = body.partition(mid)
        summary = rest[: len(rest) - len(tail)] if rest.endswith(tail) else rest
        labels = _judge_labels(json.loads(attr_json), summary)
        for rec in labels:
            if rec["error_type"] is None:
                del rec["error_type"]
        return ChatResponse(json.dumps(labels))

    # -- agents

    def _agent_data_loader(self, level: str, msgs) -> ChatResponse:
        results = _tool_results(msgs)
        if not results:
            pid = _PID_RE.search(msgs[1]["content"]).group(1)
            return ChatResponse(None, (_call("FhirAgent", {"patient_id": pid}, 0),), "tool_calls")
        last = results[-1]
        if isinstance(last, dict) and "error" in last:
            return ChatResponse(last["error"])
        return ChatResponse("Patient data loaded into the workspace.")

    def _agent_fhir(self, level: str, msgs) -> ChatResponse:
        pid = _PID_RE.search(msgs[1]["content"]).group(1)
        results = [r for r in _tool_results(msgs) if isinstance(r, dict)]
        ok = [r for r in results if "records_loaded" in r]
        if level == "low":
            if not ok:
                return ChatResponse(None, (_call("load_patient_data", {"patient_id": pid}, 0),), "tool_calls")
        else:
            last = ok[-1] if ok else None
            if last is None or (last["records_loaded"] < last["total_records_available"]
                                and last["lookback_days"] < _HIGH_LOOKBACKS[-1]):
                nxt = next(d for d in _HIGH_LOOKBACKS if last is None or d > last["lookback_days"])
                return ChatResponse(None, (_call("load_patient_data", {"patient_id": pid, "lookback_days": nxt},
                                                 len(ok)),), "tool_calls")
        last = ok[-1]
        return ChatResponse(f"Loaded {last['records_loaded']} records over {last['lookback_days']} days; "
                            f"total records available: {last['total_records_available']}.")

    def _agent_curator(self, level: str, msgs) -> ChatResponse:
        results = _tool_results(msgs)
        if not results:
            criteria = ("kept notes stating diagnosis, stage, biomarkers, or oncologic therapy"
                        + ("; kept imaging with findings" if level == "high" else ""))
            return ChatResponse(None, (_call("filter_items", {"folder": "PatientData",
                                                              "criteria_summary": criteria}, 0),), "tool_calls")
        audit = results[-1]
        kept = ", ".join(audit.get("kept", [])) or "none"
        removed = ", ".join(r["item_id"] for r in audit.get("removed", [])) or "none"
        return ChatResponse(f"Kept: {kept}. Deleted: {removed}. Criteria: {audit.get('criteria_summary', '')}")

    def _filter_verdict(self, level: str, content: str) -> ChatResponse:
        facts = read_facts(content, note_id="item")
        keep = not facts.empty or (level == "high" and "Findings:" in content)
        rationale = ("states tumor-board facts" if not facts.empty
                     else "imaging findings" if keep else "no diagnosis, biomarker, or therapy content")
        return ChatResponse(json.dumps({"keep": keep, "rationale": rationale}))

    def _agent_summarizer(self, level: str, msgs) -> ChatResponse:
        results = [r for r in _tool_results(msgs) if isinstance(r, dict)]
        loaded = next((r for r in results if "items" in r), None)
        if loaded is None:
            return ChatResponse(None, (_call("load_workspace_items",
                                             {"folders": ["Demographics", "PatientData"]}, 0),), "tool_calls")
        if results and results[-1].get("status") == "stored":
            return ChatResponse(f"Summary stored as {results[-1]['record_id']}.")
        facts = Facts()
        for item in loaded["items"]:
            read_facts(item["text"], facts, note_id=item["id"] if item["folder"] == "PatientData" else "")
        attempts = sum(1 for r in results if "error" in r)
        summary = render_summary_text(facts, self.limit)
        if attempts < self.overflow_summaries:
            summary += "\n\nOther: " + "details " * (self.limit // 8 + 1)
        citations = [{"note_id": nid, "snippet": line} for nid, line in
                     sorted(set(facts.sources.values()))]
        args = {"artifact_name": "TumorBoardSummary", "summary": summary, "citations": citations}
        return ChatResponse(None, (_call("store_summary", args, attempts),), "tool_calls")
