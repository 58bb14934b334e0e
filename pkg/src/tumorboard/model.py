"""Shared domain types, summary format handling, and rubric expansion."""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import DuplicateSection, MissingSection, RubricError

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CHARACTER_LIMIT = 999
ARTIFACT_NAME = "TumorBoardSummary"

ATTRIBUTE_TYPES = (
    "Demographics",
    "Stage",
    "Pathology",
    "Molecular",
    "Medical Treatment",
    "Radiation Treatment",
    "Surgical Treatment",
)
IMPORTANCE_LEVELS = ("Critical", "High", "Medium", "Low")

# soft descriptive ranges observed in the reference cohort
ATTRIBUTE_COUNT_RANGE = (2, 12)
SUBATTRIBUTE_COUNT_RANGE = (0, 16)


class GenerationMethod(str, enum.Enum):
    PHYSICIAN = "Physician"
    SECUREGPT = "SecureGPT"
    SINGLE_NOTE = "SingleNote"
    SINGLE_STEP = "SingleStep"
    MULTI_STEP = "MultiStep"
    MULTI_AGENT_LOW = "MultiAgentLow"
    MULTI_AGENT_HIGH = "MultiAgentHigh"

    @property
    def generatable(self) -> bool:
        return self not in (GenerationMethod.PHYSICIAN, GenerationMethod.SECUREGPT)

    @classmethod
    def parse(cls, value: "str | GenerationMethod") -> "GenerationMethod":
        if isinstance(value, cls):
            return value
        for m in cls:
            if value in (m.value, m.name) or str(value).lower() == m.value.lower():
                return m
        raise ValueError(f"unknown generation method {value!r}")

    def __str__(self) -> str:
        return self.value


AUTOMATED_METHODS = tuple(m for m in GenerationMethod if m.generatable)


def parse_timestamp(value: "str | datetime | date") -> datetime:
    """Parse an ISO-8601 value and normalize it to an aware UTC datetime.

    Naive values and bare dates are taken as UTC.
    """
    if isinstance(value, datetime):
        dt = value
    elif isinstance(value, date):
        dt = datetime(value.year, value.month, value.day)
    else:
        text = str(value).strip()
        if text.endswith("Z"):
            text = text[:-1] + "+00:00"
        try:
            dt = datetime.fromisoformat(text)
        except ValueError:
            dt = datetime.combine(date.fromisoformat(text), datetime.min.time())
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def parse_date(value: "str | date | datetime") -> date:
    if isinstance(value, datetime):
        return parse_timestamp(value).date()
    if isinstance(value, date):
        return value
    return date.fromisoformat(str(value).strip()[:10])


def format_timestamp(dt: datetime) -> str:
    return parse_timestamp(dt).isoformat()


@dataclass(frozen=True)
class ClinicalNote:
    note_id: str
    patient_id: str
    timestamp: datetime
    category: str = "clinical-note"
    author_specialty: str = ""
    text: str = ""

    def __post_init__(self):
        object.__setattr__(self, "timestamp", parse_timestamp(self.timestamp))
        if self.text is None:
            raise ValueError(f"note {self.note_id} has no text")

    @property
    def sort_key(self) -> tuple[datetime, str]:
        return (self.timestamp, self.note_id)

    def to_dict(self) -> dict[str, Any]:
        return {
            "note_id": self.note_id,
            "patient_id": self.patient_id,
            "timestamp": format_timestamp(self.timestamp),
            "category": self.category,
            "author_specialty": self.author_specialty,
            "text": self.text,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ClinicalNote":
        return cls(
            note_id=str(d["note_id"]),
            patient_id=str(d["patient_id"]),
            timestamp=d["timestamp"],
            category=d.get("category", "clinical-note"),
            author_specialty=d.get("author_specialty", ""),
            text=d.get("text", ""),
        )


@dataclass(frozen=True)
class Demographics:
    last_name: str = ""
    age: int | None = None
    sex: str | None = None

    def __post_init__(self):
        if self.sex is not None and self.sex not in ("M", "F"):
            raise ValueError(f"sex must be 'M' or 'F', got {self.sex!r}")


@dataclass(frozen=True)
class PatientChart:
    patient_id: str
    demographics: Demographics = Demographics()
    notes: tuple[ClinicalNote, ...] = ()

    def __post_init__(self):
        notes = tuple(sorted(self.notes, key=lambda n: n.sort_key))
        seen: set[str] = set()
        for n in notes:
            if n.patient_id != self.patient_id:
                raise ValueError(f"note {n.note_id} belongs to {n.patient_id}, not {self.patient_id}")
            if n.note_id in seen:
                raise ValueError(f"duplicate note_id {n.note_id} in chart {self.patient_id}")
            seen.add(n.note_id)
        object.__setattr__(self, "notes", notes)

    def note(self, note_id: str) -> ClinicalNote:
        for n in self.notes:
            if n.note_id == note_id:
                return n
        raise KeyError(note_id)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "patient_id": self.patient_id,
            "demographics": {
                "last_name": self.demographics.last_name,
                "age": self.demographics.age,
                "sex": self.demographics.sex,
            },
            "notes": [n.to_dict() for n in self.notes],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PatientChart":
        demo = d.get("demographics") or {}
        return cls(
            patient_id=str(d["patient_id"]),
            demographics=Demographics(
                last_name=demo.get("last_name", "") or "",
                age=demo.get("age"),
                sex=demo.get("sex"),
            ),
            notes=tuple(ClinicalNote.from_dict(n) for n in d.get("notes", [])),
        )

    def to_json(self) -> str:
        return dump_json(self.to_dict())


# ---------------------------------------------------------------------------
# rubric


@dataclass(frozen=True)
class Attribute:
    attribute_id: str
    attribute_type: str
    value: str
    importance: str = "Medium"
    subattributes: tuple["Attribute", ...] | None = None

    def __post_init__(self):
        if self.subattributes is not None:
            subs = tuple(self.subattributes)
            if not subs:
                raise RubricError(f"attribute {self.attribute_id}: subattributes must be null or nonempty")
            for s in subs:
                if s.subattributes is not None:
                    raise RubricError(f"attribute {s.attribute_id}: nesting deeper than one level")
                if not s.attribute_id.startswith(self.attribute_id):
                    raise RubricError(
                        f"subattribute id {s.attribute_id!r} is not prefixed by parent {self.attribute_id!r}"
                    )
            object.__setattr__(self, "subattributes", subs)

    @property
    def expected_ids(self) -> list[str]:
        """Ids a judge must label for this attribute: itself plus every child."""
        return [self.attribute_id] + [s.attribute_id for s in self.subattributes or ()]

    def to_dict(self) -> dict[str, Any]:
        return {
            "attribute_id": self.attribute_id,
            "attribute_type": self.attribute_type,
            "value": self.value,
            "importance": self.importance,
            "subattributes": None if self.subattributes is None else [s.to_dict() for s in self.subattributes],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Attribute":
        subs = d.get("subattributes")
        return cls(
            attribute_id=str(d["attribute_id"]),
            attribute_type=str(d["attribute_type"]),
            value=str(d["value"]),
            importance=str(d.get("importance", "Medium")),
            subattributes=None if subs is None else tuple(cls.from_dict(s) for s in subs),
        )


@dataclass(frozen=True)
class Rubric:
    patient_id: str
    attributes: tuple[Attribute, ...]

    def __post_init__(self):
        attrs = tuple(self.attributes)
        if not attrs:
            raise RubricError(f"rubric for {self.patient_id} is empty")
        ids = [i for a in attrs for i in a.expected_ids]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise RubricError(f"duplicate attribute ids {dupes} in rubric {self.patient_id}")
        object.__setattr__(self, "attributes", attrs)

    def warnings(self) -> list[str]:
        out = []
        n_attr = len(self.attributes)
        n_sub = sum(len(a.subattributes or ()) for a in self.attributes)
        lo, hi = ATTRIBUTE_COUNT_RANGE
        if not lo <= n_attr <= hi:
            out.append(f"{n_attr} attributes outside the typical range {lo}-{hi}")
        lo, hi = SUBATTRIBUTE_COUNT_RANGE
        if not lo <= n_sub <= hi:
            out.append(f"{n_sub} subattributes outside the typical range {lo}-{hi}")
        for a in self.attributes:
            for x in (a, *(a.subattributes or ())):
                if x.importance not in IMPORTANCE_LEVELS:
                    out.append(f"attribute {x.attribute_id} has nonstandard importance {x.importance!r}")
        return out

    def attribute(self, attribute_id: str) -> Attribute:
        for a in self.attributes:
            if a.attribute_id == attribute_id:
                return a
        raise KeyError(attribute_id)

    @property
    def all_ids(self) -> list[str]:
        return [i for a in self.attributes for i in a.expected_ids]

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "patient_id": self.patient_id,
            "attributes": [a.to_dict() for a in self.attributes],
        }

    @classmethod
    def from_dict(cls, d: "Mapping[str, Any] | Sequence[Mapping[str, Any]]", patient_id: str = "") -> "Rubric":
        if isinstance(d, Mapping):
            patient_id = str(d.get("patient_id", patient_id))
            attrs = d["attributes"]
        else:
            attrs = d
        rubric = cls(patient_id=patient_id, attributes=tuple(Attribute.from_dict(a) for a in attrs))
        for w in rubric.warnings():
            log.warning("rubric %s: %s", patient_id, w)
        return rubric


def load_rubric(path: "str | Path") -> Rubric:
    path = Path(path)
    return Rubric.from_dict(json.loads(path.read_text(encoding="utf-8")), patient_id=path.stem)


@dataclass(frozen=True)
class RubricItem:
    item_id: str
    attribute_type: str
    value: str
    importance: str
    parent_id: str | None = None


def items_at_highest_granularity(rubric: Rubric) -> list[RubricItem]:
    """Expand a rubric into scorable items.

    Attributes without subattributes count as one item; attributes with
    subattributes contribute only their children, so the parent is never
    scored twice.
    """
    items = []
    for a in rubric.attributes:
        if a.subattributes:
            items.extend(
                RubricItem(s.attribute_id, s.attribute_type, s.value, s.importance, parent_id=a.attribute_id)
                for s in a.subattributes
            )
        else:
            items.append(RubricItem(a.attribute_id, a.attribute_type, a.value, a.importance))
    return items


# ---------------------------------------------------------------------------
# summaries

SECTION_LABELS = ("ID", "Biomarkers/NGS", "Prior therapy")
_HEADING_RE = re.compile(r"^[ \t]*(ID|Biomarkers/NGS|Prior therapy):", re.MULTILINE)
_LAST_NAME_RE = re.compile(r"\[([A-Z][A-Z'\- ]*[A-Z]|[A-Z])\]")


@dataclass(frozen=True)
class LimitVerdict:
    ok: bool
    count: int
    limit: int

    def __bool__(self) -> bool:
        return self.ok


def enforce_character_limit(text: str, limit: int = CHARACTER_LIMIT) -> LimitVerdict:
    """Count code points (whitespace included) against the limit.

    The caller strips citations first; they never count toward the limit.
    """
    n = len(text)
    return LimitVerdict(ok=n <= limit, count=n, limit=limit)


@dataclass(frozen=True)
class StructuredSummary:
    id_section: str
    biomarkers_section: str
    prior_therapy_section: str
    last_name_bracketed: str | None = None

    def section(self, label: str) -> str:
        return {
            "ID": self.id_section,
            "Biomarkers/NGS": self.biomarkers_section,
            "Prior therapy": self.prior_therapy_section,
        }[label]

    def to_dict(self) -> dict[str, Any]:
        return {
            "ID": self.id_section,
            "Biomarkers/NGS": self.biomarkers_section,
            "Prior therapy": self.prior_therapy_section,
            "last_name": self.last_name_bracketed,
        }


def parse_summary_sections(text: str) -> StructuredSummary:
    """Split a summary into its three labeled sections, in any order."""
    if not text or not text.strip():
        raise MissingSection(SECTION_LABELS[0])
    matches = list(_HEADING_RE.finditer(text))
    found: dict[str, str] = {}
    for i, m in enumerate(matches):
        label = m.group(1)
        if label in found:
            raise DuplicateSection(label)
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        found[label] = text[m.end():end].strip()
    for label in SECTION_LABELS:
        if label not in found:
            raise MissingSection(label)
    name = _LAST_NAME_RE.search(found["ID"])
    return StructuredSummary(
        id_section=found["ID"],
        biomarkers_section=found["Biomarkers/NGS"],
        prior_therapy_section=found["Prior therapy"],
        last_name_bracketed=name.group(1) if name else None,
    )


def render_summary(summary: StructuredSummary) -> str:
    """Canonical rendering: one section per line, a blank line between sections."""
    return "\n\n".join(f"{label}: {summary.section(label)}" for label in SECTION_LABELS)


@dataclass(frozen=True)
class Citation:
    note_id: str
    snippet: str
    start_offset: int | None = None
    end_offset: int | None = None
    resolved: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "note_id": self.note_id,
            "snippet": self.snippet,
            "start_offset": self.start_offset,
            "end_offset": self.end_offset,
            "resolved": self.resolved,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Citation":
        return cls(
            note_id=str(d["note_id"]),
            snippet=str(d["snippet"]),
            start_offset=d.get("start_offset"),
            end_offset=d.get("end_offset"),
            resolved=bool(d.get("resolved", False)),
        )


@dataclass(frozen=True)
class SummaryArtifact:
    case_id: str
    method: GenerationMethod
    body: str
    structured: StructuredSummary | None
    citations: tuple[Citation, ...] = ()
    transcript_ref: str = ""
    created_at: str = ""
    patient_id: str = ""
    as_of: str = ""
    transcript_digests: tuple[str, ...] = ()
    audit_log: tuple[Mapping[str, Any], ...] = ()
    config: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "patient_id": self.patient_id,
            "as_of": self.as_of,
            "method": self.method.value,
            "body": self.body,
            "sections": None if self.structured is None else self.structured.to_dict(),
            "citations": [c.to_dict() for c in self.citations],
            "transcript_ref": self.transcript_ref,
            "transcript_digests": list(self.transcript_digests),
            "audit_log": [dict(a) for a in self.audit_log],
            "strategy_config": dict(self.config),
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SummaryArtifact":
        sections = d.get("sections")
        structured = None
        if sections:
            structured = StructuredSummary(
                sections["ID"], sections["Biomarkers/NGS"], sections["Prior therapy"], sections.get("last_name")
            )
        return cls(
            case_id=str(d["case_id"]),
            method=GenerationMethod.parse(d["method"]),
            body=d["body"],
            structured=structured,
            citations=tuple(Citation.from_dict(c) for c in d.get("citations", [])),
            transcript_ref=d.get("transcript_ref", ""),
            created_at=d.get("created_at", ""),
            patient_id=d.get("patient_id", ""),
            as_of=d.get("as_of", ""),
            transcript_digests=tuple(d.get("transcript_digests", [])),
            audit_log=tuple(d.get("audit_log", [])),
            config=d.get("strategy_config", {}),
        )


def dump_json(obj: Any, indent: int | None = 2) -> str:
    """Deterministic JSON text (sorted keys, trailing newline)."""
    return json.dumps(obj, indent=indent, sort_keys=True, ensure_ascii=False) + "\n"


def write_text_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def unique(seq: Iterable[Any]) -> list[Any]:
    seen = set()
    out = []
    for x in seq:
        if x not in seen:
            seen.add(x)
            out.append(x)
    return out
