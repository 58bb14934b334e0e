"""Summary-generation strategies and the sequential multi-agent workflow.

Five generatable strategies share one gateway and one chart store:

* SingleNote   one call over the most recent oncology note
* SingleStep   one call over every note in the fixed lookback window
* MultiStep    one extract call per windowed note, then one synthesis call
* MultiAgentLow / MultiAgentHigh
               DataLoader -> Fhir -> Curator -> Summarizer, run strictly in
               sequence over a private, ephemeral workspace

Agents talk to tools through chat-completion tool calls. Each agent may
only invoke the tools its :class:`AgentSpec` grants; anything else raises
:class:`ToolPermissionViolation` before the tool runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, replace
from datetime import date
from pathlib import Path
from typing import Any, Mapping, Sequence

from .charts import CLINICAL_NOTE, ChartStore, NoteQuery
from .errors import (
    CharacterLimitViolation,
    DuplicateSection,
    ExtractFormatViolation,
    MissingSection,
    OrchestrationError,
    PatientNotFound,
    RetrievalBudgetExceeded,
    SectionParseFailure,
    StorageUnavailable,
    NoteSetTooLarge,
    ToolPermissionViolation,
)
from .gateway import ChatRequest, ChatResponse, Gateway, canonical_digest, digest_of_digests
from .model import (
    ARTIFACT_NAME,
    CHARACTER_LIMIT,
    SCHEMA_VERSION,
    Citation,
    ClinicalNote,
    GenerationMethod,
    SummaryArtifact,
    dump_json,
    enforce_character_limit,
    parse_date,
    parse_summary_sections,
    write_text_atomic,
)
from .prompts import load_prompt, template_versions

log = logging.getLogger(__name__)

NO_RELEVANT_INFO = "Note does not include any relevant information."
EXTRACT_LABELS = ("Note Date", "ID", "Biomarkers/NGS", "Prior therapy", "Other")
HIGH_LOOKBACK_RANGE = (30, 1095)

LIMIT_CORRECTION = (
    "The summary above is {count} characters long. Rewrite it to {limit} characters or fewer "
    "including spaces, keeping the ID, Biomarkers/NGS, and Prior therapy headings."
)
FORMAT_CORRECTION = (
    "The summary above is missing required structure ({problem}). Rewrite it with exactly one "
    "ID:, one Biomarkers/NGS:, and one Prior therapy: line."
)
EXTRACT_CORRECTION = (
    "Your extract violated the output format: {problem}. Return at most 5 lines starting with "
    "\"Note Date: <YYYY-MM-DD or Unknown>\", or exactly: " + NO_RELEVANT_INFO
)
FILTER_CORRECTION = 'Respond with a JSON object only: {"keep": true or false, "rationale": "<one sentence>"}'


# ---------------------------------------------------------------------------
# citations and persistence


def resolve_citation(note_text: str, snippet: str) -> tuple[int, int] | None:
    """Code-point offsets of the first exact occurrence of ``snippet``.

    Returns None when the snippet does not occur; callers keep the citation
    with ``resolved=False``.
    """
    if not snippet:
        raise ValueError("snippet must be nonempty")
    start = note_text.find(snippet)
    if start < 0:
        return None
    return start, start + len(snippet)


def cite(notes_by_id: Mapping[str, str], note_id: str, snippet: str) -> Citation:
    text = notes_by_id.get(note_id)
    span = resolve_citation(text, snippet) if text is not None and snippet else None
    if span is None:
        return Citation(note_id=note_id, snippet=snippet, resolved=False)
    return Citation(note_id=note_id, snippet=snippet, start_offset=span[0], end_offset=span[1], resolved=True)


def workflow_instance_id(case_id: str, method: GenerationMethod, as_of: str) -> str:
    h = hashlib.sha256(f"{case_id}|{method.value}|{as_of}".encode("utf-8")).hexdigest()
    return f"wf-{h[:20]}"


class SummaryStorage:
    """Durable JSON records of summary artifacts, one file per workflow instance."""

    def __init__(self, root: "str | Path"):
        self.root = Path(root)

    def record_for(self, artifact: SummaryArtifact) -> dict[str, Any]:
        record_id = workflow_instance_id(artifact.case_id, artifact.method, artifact.as_of)
        return {
            "schema_version": SCHEMA_VERSION,
            "record_id": record_id,
            "workflow_instance_id": record_id,
            "artifact_name": ARTIFACT_NAME,
            **artifact.to_dict(),
        }

    def store(self, artifact: SummaryArtifact) -> str:
        record = self.record_for(artifact)
        path = self.root / f"{record['record_id']}.json"
        text = dump_json(record)
        try:
            if path.exists() and path.read_text(encoding="utf-8") == text:
                return record["record_id"]
            write_text_atomic(path, text)
        except OSError as exc:
            raise StorageUnavailable(f"cannot write summary record under {self.root}: {exc}") from exc
        return record["record_id"]

    def load(self, record_id: str) -> dict[str, Any]:
        return json.loads((self.root / f"{record_id}.json").read_text(encoding="utf-8"))

    def load_artifact(self, record_id: str) -> SummaryArtifact:
        return SummaryArtifact.from_dict(self.load(record_id))

    def record_ids(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("wf-*.json"))


def store_summary(artifact: SummaryArtifact, storage: SummaryStorage) -> str:
    return storage.store(artifact)


# ---------------------------------------------------------------------------
# workspace and agents


@dataclass(frozen=True)
class WorkspaceItem:
    item_id: str
    timestamp: str
    text: str


class Workspace:
    """Run-private folders of timestamped text items plus an audit log.

    Every mutation and tool call appends to ``audit_log``. Closing the
    workspace drops all items; the audit log survives as provenance.
    """

    def __init__(self, run_id: str):
        self.run_id = run_id
        self.folders: dict[str, list[WorkspaceItem]] = {}
        self.audit_log: list[dict[str, Any]] = []
        self.closed = False

    def __enter__(self) -> "Workspace":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        self.folders.clear()
        self.closed = True

    def _check(self) -> None:
        if self.closed:
            raise OrchestrationError(f"workspace {self.run_id} is closed")

    def _audit(self, entry: dict[str, Any]) -> None:
        self.audit_log.append({"seq": len(self.audit_log), **entry})

    def items(self, folder: str) -> list[WorkspaceItem]:
        self._check()
        return list(self.folders.get(folder, ()))

    def write_items(self, folder: str, items: Sequence[WorkspaceItem], agent: str) -> None:
        self._check()
        merged = {i.item_id: i for i in self.folders.get(folder, ())}
        merged.update({i.item_id: i for i in items})
        self.folders[folder] = sorted(merged.values(), key=lambda i: (i.timestamp, i.item_id))
        self._audit({"agent": agent, "action": "write_items", "folder": folder,
                     "item_ids": [i.item_id for i in items]})

    def remove_items(self, folder: str, removed: Mapping[str, str], agent: str) -> None:
        self._check()
        self.folders[folder] = [i for i in self.folders.get(folder, ()) if i.item_id not in removed]
        self._audit({"agent": agent, "action": "remove_items", "folder": folder,
                     "removed": [{"item_id": k, "rationale": v} for k, v in removed.items()]})

    def log_tool_call(self, agent: str, tool: str, arguments: Mapping[str, Any], outcome: str, **extra: Any) -> None:
        self._audit({"agent": agent, "action": "tool_call", "tool": tool,
                     "arguments": dict(arguments), "outcome": outcome, **extra})


TOOL_FHIR_AGENT = "FhirAgent"
TOOL_LOAD_PATIENT_DATA = "load_patient_data"
TOOL_FILTER_ITEMS = "filter_items"
TOOL_LOAD_WORKSPACE = "load_workspace_items"
TOOL_STORE_SUMMARY = "store_summary"


@dataclass(frozen=True)
class AgentSpec:
    name: str
    system_prompt_asset: str
    allowed_tools: frozenset[str]


def _roster(prefix: str) -> dict[str, AgentSpec]:
    return {
        "DataLoader": AgentSpec("DataLoader", f"{prefix}_data_loader", frozenset({TOOL_FHIR_AGENT})),
        "Fhir": AgentSpec("Fhir", f"{prefix}_fhir", frozenset({TOOL_LOAD_PATIENT_DATA})),
        "Curator": AgentSpec("Curator", f"{prefix}_curator", frozenset({TOOL_FILTER_ITEMS})),
        "Summarizer": AgentSpec("Summarizer", f"{prefix}_summarizer",
                                frozenset({TOOL_LOAD_WORKSPACE, TOOL_STORE_SUMMARY})),
    }


ROSTERS = {
    GenerationMethod.MULTI_AGENT_LOW: _roster("low"),
    GenerationMethod.MULTI_AGENT_HIGH: _roster("high"),
}
PERMISSIONS = {name: spec.allowed_tools for name, spec in ROSTERS[GenerationMethod.MULTI_AGENT_LOW].items()}


def _fn(name: str, description: str, properties: dict, required: Sequence[str]) -> dict[str, Any]:
    return {"type": "function", "function": {
        "name": name, "description": description,
        "parameters": {"type": "object", "properties": properties, "required": list(required)},
    }}


def tool_schemas(high_autonomy: bool) -> dict[str, dict[str, Any]]:
    load_props: dict[str, Any] = {"patient_id": {"type": "string"}}
    load_required = ["patient_id"]
    if high_autonomy:
        lo, hi = HIGH_LOOKBACK_RANGE
        load_props["lookback_days"] = {"type": "integer", "minimum": lo, "maximum": hi}
        load_required.append("lookback_days")
    return {
        TOOL_FHIR_AGENT: _fn(TOOL_FHIR_AGENT, "Hand off EHR retrieval to the FHIR agent.",
                             {"patient_id": {"type": "string"}}, ["patient_id"]),
        TOOL_LOAD_PATIENT_DATA: _fn(
            TOOL_LOAD_PATIENT_DATA,
            "Load DocumentReference clinical notes for a patient into the PatientData workspace folder.",
            load_props, load_required),
        TOOL_FILTER_ITEMS: _fn(
            TOOL_FILTER_ITEMS, "Evaluate each item in a workspace folder and remove nonrelevant items in place.",
            {"folder": {"type": "string"}, "criteria_summary": {"type": "string"}}, ["folder"]),
        TOOL_LOAD_WORKSPACE: _fn(
            TOOL_LOAD_WORKSPACE, "Load all items from the named workspace folders.",
            {"folders": {"type": "array", "items": {"type": "string"}}}, ["folders"]),
        TOOL_STORE_SUMMARY: _fn(
            TOOL_STORE_SUMMARY, "Save the summary and its citations to persistent storage.",
            {"artifact_name": {"type": "string"}, "summary": {"type": "string"},
             "citations": {"type": "array", "items": {"type": "object", "properties": {
                 "note_id": {"type": "string"}, "snippet": {"type": "string"}}}}},
            ["artifact_name", "summary", "citations"]),
    }


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class StrategyConfig:
    strategy: GenerationMethod
    model_id: str = "gpt-4.1"
    lookback_days: int = 180
    max_retrieval_iterations: int = 5
    lookback_range: tuple[int, int] = HIGH_LOOKBACK_RANGE
    max_regenerations: int = 2
    max_reasks: int = 2
    max_agent_turns: int = 8
    max_prompt_chars: int = 400_000
    character_limit: int = CHARACTER_LIMIT
    oncology_specialty: str = "oncology"

    def __post_init__(self):
        object.__setattr__(self, "strategy", GenerationMethod.parse(self.strategy))
        if not self.strategy.generatable:
            raise ValueError(f"{self.strategy.value} summaries are ingested, not generated")
        object.__setattr__(self, "lookback_range", tuple(self.lookback_range))
        if self.max_retrieval_iterations < 1:
            raise ValueError("max_retrieval_iterations must be >= 1")

    @property
    def retrieval_cap(self) -> int:
        if self.strategy is GenerationMethod.MULTI_AGENT_HIGH:
            return self.max_retrieval_iterations
        return 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy": self.strategy.value,
            "model_id": self.model_id,
            "lookback_days": self.lookback_days,
            "max_retrieval_iterations": self.retrieval_cap,
            "lookback_range": list(self.lookback_range),
            "max_regenerations": self.max_regenerations,
            "max_reasks": self.max_reasks,
            "max_agent_turns": self.max_agent_turns,
            "character_limit": self.character_limit,
            "prompt_versions": template_versions(),
        }


class _Calls:
    """Gateway wrapper that remembers the digest of every request it sends."""

    def __init__(self, gateway: Gateway, model_id: str):
        self.gateway = gateway
        self.model_id = model_id
        self.digests: list[str] = []

    def __call__(self, messages: Sequence[Mapping[str, Any]], tools: Sequence[Mapping[str, Any]] | None = None,
                 temperature: float | None = 0.0) -> ChatResponse:
        request = ChatRequest(self.model_id, tuple(messages), temperature=temperature,
                              tools=tuple(tools) if tools else None)
        self.digests.append(canonical_digest(request))
        return self.gateway.complete(request)


def _calls(gateway: "Gateway | _Calls", model_id: str) -> _Calls:
    return gateway if isinstance(gateway, _Calls) else _Calls(gateway, model_id)


def format_notes(notes: Sequence[ClinicalNote]) -> str:
    """Chronological concatenation with one boundary header per note."""
    ordered = sorted(notes, key=lambda n: n.sort_key)
    return "\n\n".join(
        f"=== Note {n.note_id} ({n.timestamp.date().isoformat()}) ===\n{n.text.strip()}" for n in ordered
    )


# ---------------------------------------------------------------------------
# per-note extraction and curation


@dataclass(frozen=True)
class NoteExtract:
    note_id: str
    text: str
    relevant: bool
    note_date: str | None = None


_NOTE_DATE_RE = re.compile(r"^Note Date:\s*(\d{4}-\d{2}-\d{2}|Unknown)\s*$")


def validate_extract(text: str) -> tuple[bool, str | None]:
    """Check an extract reply; returns (relevant, note_date) or raises ValueError."""
    stripped = text.strip()
    if stripped == NO_RELEVANT_INFO:
        return False, None
    lines = [ln.strip() for ln in stripped.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty extract")
    if len(lines) > 5:
        raise ValueError(f"{len(lines)} lines, at most 5 allowed")
    m = _NOTE_DATE_RE.match(lines[0])
    if not m:
        raise ValueError('first line must be "Note Date: <YYYY-MM-DD or Unknown>"')
    if m.group(1) != "Unknown":
        date.fromisoformat(m.group(1))
    seen = set()
    for ln in lines:
        label = ln.split(":", 1)[0]
        if ":" not in ln or label not in EXTRACT_LABELS:
            raise ValueError(f"line {ln[:40]!r} does not start with an allowed label")
        if label in seen:
            raise ValueError(f"label {label!r} repeated")
        seen.add(label)
    return True, m.group(1)


def extract_note_facts(note: ClinicalNote, gateway: "Gateway | _Calls", model_id: str = "gpt-4.1",
                       max_reasks: int = 2) -> NoteExtract:
    if not note.text.strip():
        raise ValueError(f"note {note.note_id} has empty text")
    calls = _calls(gateway, model_id)
    messages: list[dict[str, Any]] = [
        {"role": "user", "content": load_prompt("multistep_extract").render(note=note.text)}
    ]
    problem = ""
    for attempt in range(max_reasks + 1):
        reply = (calls(messages).content or "").strip()
        try:
            relevant, note_date = validate_extract(reply)
        except ValueError as exc:
            problem = str(exc)
            messages += [{"role": "assistant", "content": reply},
                         {"role": "user", "content": EXTRACT_CORRECTION.format(problem=problem)}]
            continue
        return NoteExtract(note.note_id, reply, relevant, note_date)
    raise ExtractFormatViolation(f"note {note.note_id}: {problem} (after {max_reasks} re-asks)")


@dataclass(frozen=True)
class FilterAudit:
    kept: tuple[str, ...]
    removed: tuple[Mapping[str, str], ...]
    criteria_summary: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"kept": list(self.kept), "removed": [dict(r) for r in self.removed],
                "criteria_summary": self.criteria_summary}


def _parse_verdict(text: str) -> tuple[bool, str]:
    body = text.strip()
    if body.startswith("```"):
        body = body.strip("`").removeprefix("json").strip()
    obj = json.loads(body)
    if not isinstance(obj, dict) or not isinstance(obj.get("keep"), bool):
        raise ValueError("verdict must be an object with a boolean 'keep'")
    return obj["keep"], str(obj.get("rationale", ""))


def filter_workspace(workspace: Workspace, folder: str, agent: AgentSpec, gateway: "Gateway | _Calls",
                     model_id: str = "gpt-4.1", criteria_summary: str = "", max_reasks: int = 2) -> FilterAudit:
    """Judge each item in ``folder`` for relevance and remove the rest in place."""
    if TOOL_FILTER_ITEMS not in agent.allowed_tools:
        raise ToolPermissionViolation(agent.name, TOOL_FILTER_ITEMS)
    calls = _calls(gateway, model_id)
    system = load_prompt(agent.system_prompt_asset).text
    template = load_prompt("curator_filter_item")
    kept, removed = [], {}
    for item in workspace.items(folder):
        messages: list[dict[str, Any]] = [
            {"role": "system", "content": system},
            {"role": "user", "content": template.render(item_id=item.item_id, timestamp=item.timestamp,
                                                        text=item.text)},
        ]
        for attempt in range(max_reasks + 1):
            reply = calls(messages).content or ""
            try:
                keep, rationale = _parse_verdict(reply)
                break
            except (ValueError, json.JSONDecodeError):
                messages += [{"role": "assistant", "content": reply}, {"role": "user", "content": FILTER_CORRECTION}]
        else:
            raise OrchestrationError(f"curation verdict for item {item.item_id} unparseable")
        if keep:
            kept.append(item.item_id)
        else:
            removed[item.item_id] = rationale or "judged not relevant"
    if removed:
        workspace.remove_items(folder, removed, agent.name)
    audit = FilterAudit(tuple(kept), tuple({"item_id": k, "rationale": v} for k, v in removed.items()),
                        criteria_summary)
    workspace._audit({"agent": agent.name, "action": "filter_audit", "folder": folder, **audit.to_dict()})
    return audit


# ---------------------------------------------------------------------------
# single-call strategies


def _parse_sections(body: str):
    try:
        return parse_summary_sections(body)
    except (MissingSection, DuplicateSection) as exc:
        raise SectionParseFailure(str(exc)) from exc


def _generate_body(calls: _Calls, prompt: str, config: StrategyConfig) -> str:
    messages: list[dict[str, Any]] = [{"role": "user", "content": prompt}]
    count = 0
    for attempt in range(config.max_regenerations + 1):
        body = (calls(messages).content or "").strip()
        verdict = enforce_character_limit(body, config.character_limit)
        if not verdict.ok:
            count = verdict.count
            correction = LIMIT_CORRECTION.format(count=verdict.count, limit=config.character_limit)
        else:
            try:
                _parse_sections(body)
                return body
            except SectionParseFailure as exc:
                if attempt == config.max_regenerations:
                    raise
                correction = FORMAT_CORRECTION.format(problem=exc)
        messages += [{"role": "assistant", "content": body}, {"role": "user", "content": correction}]
    raise CharacterLimitViolation(count, config.character_limit, config.max_regenerations + 1)


def _check_size(text: str, config: StrategyConfig) -> None:
    if len(text) > config.max_prompt_chars:
        raise NoteSetTooLarge(len(text), config.max_prompt_chars)


def _window(store: ChartStore, patient_id: str, as_of: date, config: StrategyConfig):
    return store.retrieve_notes(NoteQuery(patient_id, as_of, config.lookback_days, (CLINICAL_NOTE,)))


# ---------------------------------------------------------------------------
# multi-agent workflow


class _AgentRun:
    def __init__(self, config: StrategyConfig, patient_id: str, as_of: date, calls: _Calls, store: ChartStore,
                 storage: SummaryStorage | None, case_id: str, created_at: str, workspace: Workspace):
        self.config = config
        self.patient_id = patient_id
        self.as_of = as_of
        self.calls = calls
        self.store = store
        self.storage = storage
        self.case_id = case_id
        self.created_at = created_at
        self.ws = workspace
        self.roster = ROSTERS[config.strategy]
        self.high = config.strategy is GenerationMethod.MULTI_AGENT_HIGH
        self.schemas = tool_schemas(self.high)
        self.retrievals = 0
        self.store_attempts = 0
        self.artifact: SummaryArtifact | None = None
        self.record_id: str | None = None

    def run(self) -> SummaryArtifact:
        pid = self.patient_id
        self.run_agent("DataLoader", f"Load patient data for patient ID {pid}.")
        if self.retrievals == 0:
            raise OrchestrationError("the FHIR agent never retrieved notes")
        self.run_agent("Curator", f"Filter the notes in the PatientData folder for patient ID {pid}.")
        self.run_agent("Summarizer", f"Generate and save the tumor board summary for patient ID {pid}.")
        if self.artifact is None:
            raise OrchestrationError("the summarization agent did not store a summary")
        return self.artifact

    def run_agent(self, name: str, task: str) -> str:
        spec = self.roster[name]
        messages: list[dict[str, Any]] = [
            {"role": "system", "content": load_prompt(spec.system_prompt_asset).text},
            {"role": "user", "content": task},
        ]
        tools = [self.schemas[t] for t in sorted(spec.allowed_tools)]
        for _ in range(self.config.max_agent_turns):
            resp = self.calls(messages, tools)
            if not resp.tool_calls:
                return resp.content or ""
            messages.append({"role": "assistant", "content": resp.content or "",
                             "tool_calls": [dict(c) for c in resp.tool_calls]})
            for call in resp.tool_calls:
                fn = call.get("function") or {}
                tool = fn.get("name", "")
                if tool not in spec.allowed_tools:
                    raise ToolPermissionViolation(spec.name, tool)
                try:
                    args = json.loads(fn.get("arguments") or "{}")
                    if not isinstance(args, dict):
                        raise ValueError("arguments must be a JSON object")
                except ValueError as exc:
                    result = json.dumps({"error": f"invalid arguments: {exc}"})
                    self.ws.log_tool_call(spec.name, tool, {}, "error")
                else:
                    result = self.dispatch(spec, tool, args)
                messages.append({"role": "tool", "tool_call_id": call.get("id", ""), "content": result})
        raise OrchestrationError(f"agent {name} did not finish within {self.config.max_agent_turns} turns")

    def dispatch(self, spec: AgentSpec, tool: str, args: dict[str, Any]) -> str:
        handler = {
            TOOL_FHIR_AGENT: self.tool_fhir_agent,
            TOOL_LOAD_PATIENT_DATA: self.tool_load_patient_data,
            TOOL_FILTER_ITEMS: self.tool_filter_items,
            TOOL_LOAD_WORKSPACE: self.tool_load_workspace,
            TOOL_STORE_SUMMARY: self.tool_store_summary,
        }[tool]
        return handler(spec, args)

    def _error(self, spec: AgentSpec, tool: str, args: Mapping[str, Any], message: str) -> str:
        self.ws.log_tool_call(spec.name, tool, args, "error", error=message)
        return json.dumps({"error": message})

    def tool_fhir_agent(self, spec: AgentSpec, args: dict[str, Any]) -> str:
        pid = str(args.get("patient_id", ""))
        if pid not in self.store:
            return self._error(spec, TOOL_FHIR_AGENT, args, f"Patient {pid} does not exist.")
        self.ws.log_tool_call(spec.name, TOOL_FHIR_AGENT, args, "ok")
        reply = self.run_agent("Fhir", f"Load patient data for patient ID {pid}.")
        return json.dumps({"fhir_agent_reply": reply})

    def tool_load_patient_data(self, spec: AgentSpec, args: dict[str, Any]) -> str:
        pid = str(args.get("patient_id", ""))
        if pid != self.patient_id:
            return self._error(spec, TOOL_LOAD_PATIENT_DATA, args,
                               f"patient_id {pid!r} does not match the scheduled case")
        if self.high:
            lo, hi = self.config.lookback_range
            days = args.get("lookback_days")
            if not isinstance(days, int) or isinstance(days, bool) or not lo <= days <= hi:
                return self._error(spec, TOOL_LOAD_PATIENT_DATA, args,
                                   f"lookback_days must be an integer in [{lo}, {hi}]")
        else:
            days = self.config.lookback_days
        if self.retrievals >= self.config.retrieval_cap:
            raise RetrievalBudgetExceeded(
                f"{self.config.strategy.value} allows {self.config.retrieval_cap} retrieval call(s)")
        self.retrievals += 1
        result = self.store.retrieve_notes(NoteQuery(pid, self.as_of, days, (CLINICAL_NOTE,)))
        items = [WorkspaceItem(n.note_id, n.timestamp.isoformat(), n.text) for n in result.notes]
        self.ws.write_items("PatientData", items, spec.name)
        if not self.ws.items("Demographics"):
            demo = self.store.get(pid).demographics
            self.ws.write_items("Demographics", [WorkspaceItem(
                f"{pid}-demographics", "",
                f"Last name: {demo.last_name}\nAge: {demo.age}\nSex: {demo.sex}")], spec.name)
        self.ws.log_tool_call(spec.name, TOOL_LOAD_PATIENT_DATA, args, "ok", lookback_days=days,
                              records_loaded=result.count)
        return json.dumps({
            "records_loaded": result.count,
            "lookback_days": days,
            "total_records_available": result.total_available,
            "items": [{"id": n.note_id, "date": n.timestamp.date().isoformat(),
                       "author_specialty": n.author_specialty} for n in result.notes],
        })

    def tool_filter_items(self, spec: AgentSpec, args: dict[str, Any]) -> str:
        folder = str(args.get("folder", "PatientData"))
        if folder not in self.ws.folders:
            return self._error(spec, TOOL_FILTER_ITEMS, args, f"no workspace folder {folder!r}")
        audit = filter_workspace(self.ws, folder, spec, self.calls, self.config.model_id,
                                 str(args.get("criteria_summary", "")), self.config.max_reasks)
        self.ws.log_tool_call(spec.name, TOOL_FILTER_ITEMS, args, "ok")
        return json.dumps(audit.to_dict())

    def tool_load_workspace(self, spec: AgentSpec, args: dict[str, Any]) -> str:
        folders = args.get("folders") or ["Demographics", "PatientData"]
        out = [{"folder": f, "id": i.item_id, "timestamp": i.timestamp, "text": i.text}
               for f in folders for i in self.ws.items(str(f))]
        self.ws.log_tool_call(spec.name, TOOL_LOAD_WORKSPACE, args, "ok", items_loaded=len(out))
        return json.dumps({"items": out})

    def tool_store_summary(self, spec: AgentSpec, args: dict[str, Any]) -> str:
        logged = {k: v for k, v in args.items() if k != "summary"}
        if args.get("artifact_name") != ARTIFACT_NAME:
            return self._error(spec, TOOL_STORE_SUMMARY, logged, f'artifact_name must be "{ARTIFACT_NAME}"')
        body = str(args.get("summary", "")).strip()
        verdict = enforce_character_limit(body, self.config.character_limit)
        problem = None
        if not verdict.ok:
            problem = LIMIT_CORRECTION.format(count=verdict.count, limit=self.config.character_limit)
        else:
            try:
                structured = _parse_sections(body)
            except SectionParseFailure as exc:
                problem = FORMAT_CORRECTION.format(problem=exc)
        if problem is not None:
            self.store_attempts += 1
            if self.store_attempts > self.config.max_regenerations:
                if not verdict.ok:
                    raise CharacterLimitViolation(verdict.count, verdict.limit, self.store_attempts)
                raise SectionParseFailure(problem)
            return self._error(spec, TOOL_STORE_SUMMARY, logged, problem)

        chart = self.store.get(self.patient_id)
        texts = {n.note_id: n.text for n in chart.notes}
        citations = []
        for c in args.get("citations") or []:
            if isinstance(c, Mapping) and c.get("snippet"):
                citations.append(cite(texts, str(c.get("note_id", "")), str(c["snippet"])))
        self.artifact = _artifact(self.config, self.case_id, self.patient_id, self.as_of, body, structured,
                                  tuple(citations), self.calls, self.created_at, tuple(self.ws.audit_log))
        rid = workflow_instance_id(self.case_id, self.config.strategy, self.as_of.isoformat())
        if self.storage is not None:
            rid = self.storage.store(self.artifact)
        self.record_id = rid
        self.ws.log_tool_call(spec.name, TOOL_STORE_SUMMARY, logged, "ok", record_id=rid,
                              resolved=sum(c.resolved for c in citations), cited=len(citations))
        return json.dumps({"status": "stored", "record_id": rid, "artifact_name": ARTIFACT_NAME})


def _artifact(config, case_id, patient_id, as_of, body, structured, citations, calls, created_at, audit):
    return SummaryArtifact(
        case_id=case_id,
        method=config.strategy,
        body=body,
        structured=structured,
        citations=citations,
        transcript_ref=digest_of_digests(calls.digests),
        created_at=created_at,
        patient_id=patient_id,
        as_of=as_of.isoformat(),
        transcript_digests=tuple(calls.digests),
        audit_log=audit,
        config=config.to_dict(),
    )


def run_strategy(
    config: StrategyConfig,
    patient_id: str,
    as_of: "date | str",
    gateway: Gateway,
    store: ChartStore,
    storage: SummaryStorage | None = None,
    case_id: str | None = None,
    created_at: str | None = None,
) -> SummaryArtifact:
    """Produce (and, with ``storage``, persist) one summary for a case.

    ``created_at`` defaults to midnight UTC of the board date so replayed
    runs stay byte-identical.
    """
    as_of = parse_date(as_of)
    case_id = case_id or patient_id
    created_at = created_at or f"{as_of.isoformat()}T00:00:00+00:00"
    store.get(patient_id)  # PatientNotFound surfaces before any model call
    calls = _Calls(gateway, config.model_id)
    method = config.strategy

    if method in ROSTERS:
        run_id = workflow_instance_id(case_id, method, as_of.isoformat())
        with Workspace(run_id) as ws:
            artifact = _AgentRun(config, patient_id, as_of, calls, store, storage, case_id, created_at, ws).run()
        # audit entries added after the store call (agent wrap-up) belong in the record too
        artifact = replace(artifact, audit_log=tuple(ws.audit_log), transcript_digests=tuple(calls.digests),
                           transcript_ref=digest_of_digests(calls.digests))
        if storage is not None:
            storage.store(artifact)
        return artifact

    if method is GenerationMethod.SINGLE_NOTE:
        note = store.most_recent_note(patient_id, as_of, config.oncology_specialty)
        notes_text = format_notes([note])
        _check_size(notes_text, config)
        body = _generate_body(calls, load_prompt("single_note").render(notes=notes_text), config)
        audit = ({"seq": 0, "agent": "pipeline", "action": "select_note", "item_ids": [note.note_id]},)
    elif method is GenerationMethod.SINGLE_STEP:
        window = _window(store, patient_id, as_of, config)
        notes_text = format_notes(window.notes)
        _check_size(notes_text, config)
        body = _generate_body(calls, load_prompt("single_step").render(notes=notes_text), config)
        audit = ({"seq": 0, "agent": "pipeline", "action": "retrieve_notes", "lookback_days": config.lookback_days,
                  "item_ids": [n.note_id for n in window.notes]},)
    elif method is GenerationMethod.MULTI_STEP:
        window = _window(store, patient_id, as_of, config)
        extracts = [extract_note_facts(n, calls, config.model_id, config.max_reasks)
                    for n in window.notes if n.text.strip()]
        joined = "\n\n".join(e.text for e in extracts if e.relevant)
        _check_size(joined, config)
        body = _generate_body(calls, load_prompt("multistep_synthesis").render(concatenated_summaries=joined), config)
        audit = ({"seq": 0, "agent": "pipeline", "action": "retrieve_notes", "lookback_days": config.lookback_days,
                  "item_ids": [n.note_id for n in window.notes]},
                 {"seq": 1, "agent": "pipeline", "action": "extract_notes",
                  "relevant": [e.note_id for e in extracts if e.relevant],
                  "no_relevant_info": [e.note_id for e in extracts if not e.relevant]})
    else:  # pragma: no cover - guarded by StrategyConfig
        raise ValueError(method)

    artifact = _artifact(config, case_id, patient_id, as_of, body, _parse_sections(body), (), calls, created_at, audit)
    if storage is not None:
        storage.store(artifact)
    return artifact
