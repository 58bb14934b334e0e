"""Longitudinal note store, FHIR DocumentReference ingestion, and synthetic charts."""

from __future__ import annotations

import base64
import json
import logging
import random
import threading
import urllib.parse
from dataclasses import dataclass, field, replace
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import MalformedBundle, NoMatchingNote, PatientNotFound
from .model import (
    Attribute,
    ClinicalNote,
    Demographics,
    PatientChart,
    Rubric,
    dump_json,
    parse_date,
    parse_timestamp,
    write_text_atomic,
)

log = logging.getLogger(__name__)

DEFAULT_LOOKBACK_DAYS = 180
CLINICAL_NOTE = "clinical-note"


@dataclass(frozen=True)
class NoteQuery:
    patient_id: str
    as_of: date
    lookback_days: int | None = DEFAULT_LOOKBACK_DAYS
    categories: tuple[str, ...] = (CLINICAL_NOTE,)

    def __post_init__(self):
        object.__setattr__(self, "as_of", parse_date(self.as_of))
        if self.lookback_days is not None and self.lookback_days < 1:
            raise ValueError("lookback_days must be >= 1")
        cats = tuple(self.categories)
        if not cats:
            raise ValueError("categories must be nonempty")
        object.__setattr__(self, "categories", cats)

    @property
    def window_start(self) -> date | None:
        if self.lookback_days is None:
            return None
        return self.as_of - timedelta(days=self.lookback_days)


@dataclass(frozen=True)
class RetrievalResult:
    notes: tuple[ClinicalNote, ...]
    # matching-category notes on or before as_of, regardless of window
    total_available: int

    @property
    def count(self) -> int:
        return len(self.notes)


def filter_window(chart: PatientChart, query: NoteQuery) -> RetrievalResult:
    """Notes of the requested categories dated within [as_of - lookback, as_of].

    Both ends are inclusive and compared on the UTC calendar date.
    """
    start = query.window_start
    eligible = [n for n in chart.notes if n.category in query.categories and n.timestamp.date() <= query.as_of]
    notes = [n for n in eligible if start is None or n.timestamp.date() >= start]
    notes.sort(key=lambda n: n.sort_key)
    return RetrievalResult(notes=tuple(notes), total_available=len(eligible))


class ChartStore:
    """File-backed chart store: one ``<patient_id>.json`` per chart.

    Reads are lock-free over immutable charts; writes to one patient are
    serialized by a per-patient lock.
    """

    def __init__(self, root: "str | Path | None" = None):
        self.root = Path(root) if root is not None else None
        self._charts: dict[str, PatientChart] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    @classmethod
    def from_charts(cls, charts: Iterable[PatientChart], root: "str | Path | None" = None) -> "ChartStore":
        store = cls(root)
        for c in charts:
            store.put(c)
        return store

    def _path(self, patient_id: str) -> Path:
        assert self.root is not None
        safe = urllib.parse.quote(patient_id, safe="")
        return self.root / f"{safe}.json"

    def _lock(self, patient_id: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(patient_id, threading.Lock())

    def patient_ids(self) -> list[str]:
        ids = set(self._charts)
        if self.root is not None:
            ids.update(urllib.parse.unquote(p.stem) for p in self.root.glob("*.json"))
        return sorted(ids)

    def __contains__(self, patient_id: str) -> bool:
        try:
            self.get(patient_id)
        except PatientNotFound:
            return False
        return True

    def get(self, patient_id: str) -> PatientChart:
        chart = self._charts.get(patient_id)
        if chart is not None:
            return chart
        if self.root is not None:
            path = self._path(patient_id)
            if path.exists():
                chart = PatientChart.from_dict(json.loads(path.read_text(encoding="utf-8")))
                self._charts[patient_id] = chart
                return chart
        raise PatientNotFound(patient_id)

    def put(self, chart: PatientChart) -> None:
        with self._lock(chart.patient_id):
            if self.root is not None:
                write_text_atomic(self._path(chart.patient_id), chart.to_json())
            self._charts[chart.patient_id] = chart

    def retrieve_notes(self, query: NoteQuery) -> RetrievalResult:
        return filter_window(self.get(query.patient_id), query)

    def most_recent_note(self, patient_id: str, as_of: "date | str", author_specialty: str = "oncology") -> ClinicalNote:
        """Latest note on or before ``as_of`` by the given specialty (case-insensitive).

        Equal timestamps resolve to the larger note_id.
        """
        as_of = parse_date(as_of)
        want = author_specialty.strip().lower()
        chart = self.get(patient_id)
        candidates = [
            n for n in chart.notes if n.author_specialty.strip().lower() == want and n.timestamp.date() <= as_of
        ]
        if not candidates:
            raise NoMatchingNote(f"no {author_specialty} note for {patient_id} on or before {as_of}")
        return max(candidates, key=lambda n: (n.timestamp, n.note_id))

    def ingest_bundle(self, bundle: "Mapping[str, Any] | str | bytes") -> "IngestionReport":
        report = ingest_fhir_bundle(bundle)
        by_patient: dict[str, list[ClinicalNote]] = {}
        for note in report.notes:
            by_patient.setdefault(note.patient_id, []).append(note)
        for pid in sorted(set(by_patient) | set(report.demographics)):
            with self._lock(pid):
                try:
                    current = self.get(pid)
                except PatientNotFound:
                    current = PatientChart(patient_id=pid)
                merged = {n.note_id: n for n in current.notes}
                merged.update({n.note_id: n for n in by_patient.get(pid, [])})
                demo = report.demographics.get(pid, current.demographics)
                chart = PatientChart(patient_id=pid, demographics=demo, notes=tuple(merged.values()))
                if self.root is not None:
                    write_text_atomic(self._path(pid), chart.to_json())
                self._charts[pid] = chart
        return report


def load_chart(path: "str | Path") -> PatientChart:
    return PatientChart.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_chart(chart: PatientChart, path: "str | Path") -> None:
    write_text_atomic(Path(path), chart.to_json())


# ---------------------------------------------------------------------------
# FHIR subset


@dataclass
class IngestionReport:
    accepted: int = 0
    skipped: int = 0
    errors: list[dict[str, Any]] = field(default_factory=list)
    notes: list[ClinicalNote] = field(default_factory=list)
    demographics: dict[str, Demographics] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"accepted": self.accepted, "skipped": self.skipped, "errors": list(self.errors)}


class _EntryError(Exception):
    pass


def _decode_attachment(att: Mapping[str, Any]) -> str:
    if att.get("data") is not None:
        try:
            return base64.b64decode(att["data"], validate=True).decode("utf-8")
        except (ValueError, UnicodeDecodeError) as exc:
            raise _EntryError(f"undecodable attachment data: {exc}") from None
    url = att.get("url")
    if isinstance(url, str) and url.startswith("data:"):
        header, _, payload = url[5:].partition(",")
        if header.endswith(";base64"):
            return base64.b64decode(payload).decode("utf-8")
        return urllib.parse.unquote(payload)
    raise _EntryError("missing attachment text")


def _first_code(concepts: Any) -> str | None:
    if isinstance(concepts, Mapping):
        concepts = [concepts]
    for c in concepts or []:
        for coding in c.get("coding", []) or []:
            if coding.get("code"):
                return str(coding["code"])
        if c.get("text"):
            return str(c["text"])
    return None


def _specialty(resource: Mapping[str, Any]) -> str:
    setting = (resource.get("context") or {}).get("practiceSetting") or {}
    for coding in setting.get("coding", []) or []:
        if coding.get("display"):
            return str(coding["display"])
    return str(setting.get("text", ""))


def _reference_id(ref: str | None) -> str | None:
    if not ref:
        return None
    return ref.rsplit("/", 1)[-1]


def _parse_document_reference(resource: Mapping[str, Any]) -> ClinicalNote:
    note_id = resource.get("id")
    if not note_id:
        raise _EntryError("missing id")
    patient_id = _reference_id((resource.get("subject") or {}).get("reference"))
    if not patient_id:
        raise _EntryError("missing subject")
    when = resource.get("date")
    if not when:
        raise _EntryError("missing date")
    try:
        ts = parse_timestamp(when)
    except ValueError:
        raise _EntryError(f"unparseable date {when!r}") from None
    contents = resource.get("content") or []
    if not contents or "attachment" not in contents[0]:
        raise _EntryError("missing attachment")
    text = _decode_attachment(contents[0]["attachment"])
    return ClinicalNote(
        note_id=str(note_id),
        patient_id=patient_id,
        timestamp=ts,
        category=_first_code(resource.get("category")) or CLINICAL_NOTE,
        author_specialty=_specialty(resource),
        text=text,
    )


def _parse_patient(resource: Mapping[str, Any], ref_date: date | None) -> tuple[str, Demographics] | None:
    pid = resource.get("id")
    if not pid:
        return None
    names = resource.get("name") or [{}]
    family = str(names[0].get("family", "")).upper()
    sex = {"male": "M", "female": "F"}.get(str(resource.get("gender", "")).lower())
    age = None
    if resource.get("birthDate") and ref_date is not None:
        born = parse_date(resource["birthDate"])
        age = ref_date.year - born.year - ((ref_date.month, ref_date.day) < (born.month, born.day))
    return str(pid), Demographics(last_name=family, age=age, sex=sex)


def ingest_fhir_bundle(bundle: "Mapping[str, Any] | str | bytes") -> IngestionReport:
    """Parse DocumentReference entries of a FHIR bundle into notes.

    Entries of other resource types are counted as skipped (Patient
    resources still contribute demographics). Per-entry problems are
    collected in ``errors`` without aborting the bundle.
    """
    if isinstance(bundle, (str, bytes)):
        try:
            bundle = json.loads(bundle)
        except json.JSONDecodeError as exc:
            raise MalformedBundle(f"bundle is not JSON: {exc}") from None
    if not isinstance(bundle, Mapping) or not isinstance(bundle.get("entry"), list):
        raise MalformedBundle("bundle must be a JSON object with an 'entry' array")

    report = IngestionReport()
    patients = []
    for i, entry in enumerate(bundle["entry"]):
        resource = entry.get("resource") if isinstance(entry, Mapping) else None
        if not isinstance(resource, Mapping):
            report.errors.append({"index": i, "error": "entry has no resource"})
            continue
        rtype = resource.get("resourceType")
        if rtype != "DocumentReference":
            report.skipped += 1
            if rtype == "Patient":
                patients.append(resource)
            continue
        try:
            note = _parse_document_reference(resource)
        except _EntryError as exc:
            report.errors.append({"index": i, "id": resource.get("id"), "error": str(exc)})
            continue
        report.notes.append(note)
        report.accepted += 1

    for resource in patients:
        own = [n.timestamp.date() for n in report.notes if n.patient_id == resource.get("id")]
        parsed = _parse_patient(resource, max(own) if own else None)
        if parsed:
            report.demographics[parsed[0]] = parsed[1]
    return report


def chart_to_fhir_bundle(chart: PatientChart, base64_text: bool = True) -> dict[str, Any]:
    """Export a chart as a collection bundle of DocumentReference resources."""
    entries = []
    for n in chart.notes:
        if base64_text:
            att = {"contentType": "text/plain", "data": base64.b64encode(n.text.encode("utf-8")).decode("ascii")}
        else:
            att = {"contentType": "text/plain", "url": "data:text/plain," + urllib.parse.quote(n.text)}
        entries.append(
            {
                "resource": {
                    "resourceType": "DocumentReference",
                    "id": n.note_id,
                    "status": "current",
                    "subject": {"reference": f"Patient/{n.patient_id}"},
                    "date": n.timestamp.isoformat(),
                    "category": [{"coding": [{"code": n.category}]}],
                    "context": {"practiceSetting": {"text": n.author_specialty}},
                    "content": [{"attachment": att}],
                }
            }
        )
    return {"resourceType": "Bundle", "type": "collection", "entry": entries}


# ---------------------------------------------------------------------------
# synthetic charts

MODALITIES = ("medical", "surgical", "radiation")


@dataclass(frozen=True)
class TherapyEvent:
    date: date
    modality: str
    description: str

    def __post_init__(self):
        object.__setattr__(self, "date", parse_date(self.date))
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}")


@dataclass(frozen=True)
class StagingEvent:
    date: date
    stage: str

    def __post_init__(self):
        object.__setattr__(self, "date", parse_date(self.date))


@dataclass(frozen=True)
class SyntheticProfile:
    cancer_type: str = "lung adenocarcinoma"
    has_ngs_report: bool = True
    n_notes: int = 8
    therapy_events: tuple[TherapyEvent, ...] = ()
    staging_history: tuple[StagingEvent, ...] = ()
    board_date: date = date(2025, 6, 2)
    patient_id: str | None = None

    def __post_init__(self):
        if self.n_notes < 1:
            raise ValueError("n_notes must be >= 1")
        object.__setattr__(self, "board_date", parse_date(self.board_date))
        object.__setattr__(
            self,
            "therapy_events",
            tuple(sorted((e if isinstance(e, TherapyEvent) else TherapyEvent(*e) for e in self.therapy_events),
                         key=lambda e: (e.date, e.modality, e.description))),
        )
        object.__setattr__(
            self,
            "staging_history",
            tuple(sorted((s if isinstance(s, StagingEvent) else StagingEvent(*s) for s in self.staging_history),
                         key=lambda s: s.date)),
        )
        for e in (*self.therapy_events, *self.staging_history):
            if e.date >= self.board_date:
                raise ValueError(f"event on {e.date} is not before the board date {self.board_date}")


_LAST_NAMES = ("DOE", "GARCIA", "NGUYEN", "PATEL", "KOWALSKI", "OKAFOR", "LINDQVIST", "TANAKA", "ROSSI", "MURPHY")
_NGS_RESULTS = {
    "lung": ("KRAS G12C", "EGFR exon 19 deletion", "ALK fusion", "EGFR L858R", "MET exon 14 skipping"),
    "thymoma": ("no actionable alterations",),
    "mesothelioma": ("BAP1 loss",),
    "neuroendocrine": ("MEN1 mutation",),
}
_PDL1 = ("TPS 0%", "TPS 5%", "TPS 30%", "TPS 60%", "TPS 90%")
_RADIOLOGY = (
    "Stable postsurgical changes; no new pulmonary nodules.",
    "Interval decrease in the dominant lesion.",
    "Mild interval enlargement of a mediastinal node.",
    "No evidence of metastatic disease.",
)


def _cancer_family(cancer_type: str) -> str:
    low = cancer_type.lower()
    for key in ("thymoma", "mesothelioma", "neuroendocrine"):
        if key in low:
            return key
    return "lung"


@dataclass(frozen=True)
class SyntheticFacts:
    """Ground truth a synthetic chart embeds verbatim."""

    patient_id: str
    last_name: str
    age: int
    sex: str
    cancer_type: str
    dx_year: int
    stage: str | None
    smoking: str | None
    ngs_result: str | None
    pdl1: str | None
    therapy_events: tuple[TherapyEvent, ...]

    @property
    def age_sex(self) -> str:
        return f"{self.age}{self.sex}"


def _draw_facts(seed: int, profile: SyntheticProfile) -> SyntheticFacts:
    rng = random.Random(seed)
    family = _cancer_family(profile.cancer_type)
    last = rng.choice(_LAST_NAMES)
    age = rng.randint(45, 84)
    sex = rng.choice("MF")
    smoking = rng.choice(("never smoker", "former smoker, 20 pack-years", "current smoker, 40 pack-years"))
    ngs = rng.choice(_NGS_RESULTS[family])
    pdl1 = rng.choice(_PDL1)
    first_event = min([e.date for e in (*profile.therapy_events, *profile.staging_history)], default=None)
    dx_year = (first_event or profile.board_date - timedelta(days=rng.randint(200, 900))).year
    stage = profile.staging_history[-1].stage if profile.staging_history else None
    return SyntheticFacts(
        patient_id=profile.patient_id or f"SYN{seed:05d}",
        last_name=last,
        age=age,
        sex=sex,
        cancer_type=profile.cancer_type,
        dx_year=dx_year,
        stage=stage,
        smoking=smoking if family == "lung" else None,
        ngs_result=ngs if profile.has_ngs_report else None,
        pdl1=pdl1 if family == "lung" else None,
        therapy_events=profile.therapy_events,
    )


def synthetic_facts(seed: int, profile: SyntheticProfile) -> SyntheticFacts:
    return _draw_facts(seed, profile)


def _at(d: date, hour: int) -> datetime:
    return datetime.combine(d, time(hour, 0), tzinfo=timezone.utc)


def _stage_on(profile: SyntheticProfile, d: date) -> str | None:
    current = None
    for s in profile.staging_history:
        if s.date <= d:
            current = s.stage
    return current


def generate_synthetic_chart(seed: int, profile: SyntheticProfile) -> PatientChart:
    """Build a deterministic chart whose notes embed the profile's facts.

    The latest note is a medical oncology progress note. Radiation events,
    surgeries, and the NGS report get their own notes when ``n_notes``
    allows; otherwise they are folded into the oncology note so every fact
    still appears verbatim somewhere in the chart.
    """
    facts = _draw_facts(seed, profile)
    rng = random.Random(seed * 7919 + 17)
    board = profile.board_date
    final_date = board - timedelta(days=rng.randint(1, 7))
    last_event = max([e.date for e in (*profile.therapy_events, *profile.staging_history)], default=None)
    if last_event is not None and last_event > final_date:
        final_date = last_event

    slots: list[tuple[str, Any]] = []
    if facts.ngs_result:
        slots.append(("ngs", None))
    slots += [("radiation", e) for e in profile.therapy_events if e.modality == "radiation"]
    slots += [("surgical", e) for e in profile.therapy_events if e.modality == "surgical"]
    n_dedicated = min(len(slots), profile.n_notes - 1)
    dedicated, folded = slots[:n_dedicated], slots[n_dedicated:]

    specs: list[tuple[date, str, str, str]] = []  # (date, specialty, kind, text)
    span_start = min([final_date - timedelta(days=400)] + ([last_event] if last_event else []))
    first_event = min([e.date for e in (*profile.therapy_events, *profile.staging_history)], default=None)
    if first_event is not None:
        span_start = min(span_start, first_event)

    for kind, ev in dedicated:
        if kind == "ngs":
            anchor = first_event or final_date - timedelta(days=90)
            d = min(anchor + timedelta(days=rng.randint(5, 40)), final_date - timedelta(days=1))
            d = max(d, span_start)
            specs.append((d, "pathology", "ngs",
                          f"MOLECULAR PATHOLOGY REPORT\nDate of service: {d.isoformat()}\n"
                          f"Specimen: {facts.cancer_type}.\nNGS result: {facts.ngs_result}.\n"))
        elif kind == "radiation":
            specs.append((ev.date, "radiation oncology", "radiation",
                          f"RADIATION ONCOLOGY NOTE\nDate of service: {ev.date.isoformat()}\n"
                          f"Radiation: {ev.date.isoformat()} {ev.description}.\n"))
        else:
            specs.append((ev.date, "thoracic surgery", "surgical",
                          f"OPERATIVE NOTE\nDate of service: {ev.date.isoformat()}\n"
                          f"Procedure: {ev.date.isoformat()} {ev.description}.\n"))

    n_filler = profile.n_notes - 1 - len(dedicated)
    span_days = max((final_date - span_start).days - 1, 1)
    for i in range(n_filler):
        d = span_start + timedelta(days=rng.randint(0, span_days - 1) if span_days > 1 else 0)
        if rng.random() < 0.6:
            specs.append((d, "radiology", "radiology",
                          f"CT CHEST\nDate of service: {d.isoformat()}\nFindings: {rng.choice(_RADIOLOGY)}\n"))
        else:
            specs.append((d, "scheduling", "scheduling",
                          f"SCHEDULING NOTE\nDate of service: {d.isoformat()}\n"
                          "Patient called to confirm an upcoming appointment. No clinical content.\n"))

    # the oncology note documents medical and surgical history up to its date
    history = [e for e in profile.therapy_events if e.modality != "radiation" and e.date <= final_date]
    history += [ev for kind, ev in folded if kind == "radiation"]
    history.sort(key=lambda e: (e.date, e.modality, e.description))
    stage = _stage_on(profile, final_date)
    lines = [
        "MEDICAL ONCOLOGY PROGRESS NOTE",
        f"Date of service: {final_date.isoformat()}",
        f"Patient: {facts.last_name}, age {facts.age}, {'male' if facts.sex == 'M' else 'female'}.",
        f"Diagnosis: {stage + ' ' if stage else ''}{facts.cancer_type}, diagnosed {facts.dx_year}.",
    ]
    if len(profile.staging_history) > 1:
        lines.append("Staging history: " + "; ".join(f"{s.date.isoformat()} {s.stage}" for s in profile.staging_history) + ".")
    if facts.smoking:
        lines.append(f"Smoking history: {facts.smoking}.")
    markers = []
    if facts.pdl1:
        markers.append(f"PD-L1 {facts.pdl1}")
    if any(kind == "ngs" for kind, _ in folded):
        markers.append(facts.ngs_result)
    if markers:
        lines.append(f"Biomarkers: {'; '.join(markers)}.")
    if history:
        lines.append("Treatment history: " + "; ".join(f"{e.date.isoformat()} {e.description}" for e in history) + ".")
    lines.append("Assessment: Seen in clinic for follow-up. Tolerating treatment.")
    lines.append("Plan: Present at thoracic tumor board.")
    specs.append((final_date, "oncology", "oncology", "\n".join(lines) + "\n"))

    specs.sort(key=lambda s: (s[0], s[2]))
    notes = []
    for i, (d, specialty, kind, text) in enumerate(specs):
        hour = 17 if kind == "oncology" else 8 + (i % 8)
        notes.append(
            ClinicalNote(
                note_id=f"{facts.patient_id}-N{i + 1:03d}",
                patient_id=facts.patient_id,
                timestamp=_at(d, hour),
                category=CLINICAL_NOTE,
                author_specialty=specialty,
                text=text,
            )
        )
    return PatientChart(
        patient_id=facts.patient_id,
        demographics=Demographics(last_name=facts.last_name, age=facts.age, sex=facts.sex),
        notes=tuple(notes),
    )


_TYPE_BY_MODALITY = {"medical": "Medical Treatment", "surgical": "Surgical Treatment", "radiation": "Radiation Treatment"}


def synthetic_rubric(seed: int, profile: SyntheticProfile) -> Rubric:
    """Rubric whose every value occurs verbatim in the synthetic chart."""
    f = _draw_facts(seed, profile)
    attrs = [
        Attribute("1", "Demographics", f.age_sex, "High"),
        Attribute("2", "Pathology", f.cancer_type, "Critical"),
    ]
    if f.stage:
        attrs.append(Attribute("3", "Stage", f.stage, "Critical"))
    molecular = [v for v in (f.ngs_result, f.pdl1 and f"PD-L1 {f.pdl1}") if v]
    if len(molecular) == 2:
        attrs.append(Attribute("4", "Molecular", "; ".join(molecular), "Critical", (
            Attribute("4a", "Molecular", molecular[0], "Critical"),
            Attribute("4b", "Molecular", molecular[1], "High"),
        )))
    elif molecular:
        attrs.append(Attribute("4", "Molecular", molecular[0], "Critical"))
    for i, e in enumerate(f.therapy_events, start=5):
        kind = _TYPE_BY_MODALITY[e.modality]
        aid = str(i)
        attrs.append(Attribute(aid, kind, f"{e.description} {e.date.year}", "Critical", (
            Attribute(aid + "a", kind, e.description, "Critical"),
            Attribute(aid + "b", kind, str(e.date.year), "Medium"),
        )))
    return Rubric(patient_id=f.patient_id, attributes=tuple(attrs))


_MEDICAL = ("carboplatin/pemetrexed", "osimertinib", "pembrolizumab", "durvalumab consolidation",
            "sotorasib", "docetaxel", "carboplatin/etoposide")
_SURGICAL = ("right upper lobe lobectomy", "left lower lobe wedge resection", "pneumonectomy",
             "mediastinal lymph node dissection")
_RADIATION = ("SBRT 50 Gy in 5 fractions", "chemoradiation 60 Gy in 30 fractions", "palliative RT 30 Gy in 10 fractions")
_STAGES = ("Stage IA", "Stage IB", "Stage IIA", "Stage IIB", "Stage IIIA", "Stage IIIB", "Stage IVA")


def random_profile(seed: int, board_date: "date | str" = date(2025, 6, 2), n_notes: int | None = None) -> SyntheticProfile:
    """A plausible seeded profile for building desk-scale corpora."""
    rng = random.Random(seed * 104729 + 3)
    board = parse_date(board_date)
    dx = board - timedelta(days=rng.randint(150, 700))
    stages = [StagingEvent(dx, rng.choice(_STAGES))]
    events = []
    d = dx + timedelta(days=rng.randint(10, 40))
    for modality, pool in (("surgical", _SURGICAL), ("medical", _MEDICAL), ("radiation", _RADIATION), ("medical", _MEDICAL)):
        if d >= board - timedelta(days=8) or rng.random() < 0.25:
            continue
        events.append(TherapyEvent(d, modality, rng.choice(pool)))
        d += timedelta(days=rng.randint(30, 120))
    if rng.random() < 0.4 and events:
        restage = events[-1].date + timedelta(days=5)
        if restage < board - timedelta(days=8):
            stages.append(StagingEvent(restage, rng.choice(_STAGES)))
    seen = set()
    events = [e for e in events if not (e.description in seen or seen.add(e.description))]
    return SyntheticProfile(
        cancer_type="lung adenocarcinoma" if rng.random() < 0.8 else "lung squamous cell carcinoma",
        has_ngs_report=rng.random() < 0.85,
        n_notes=n_notes if n_notes is not None else rng.randint(6, 12),
        therapy_events=tuple(events),
        staging_history=tuple(stages),
        board_date=board,
        patient_id=f"SYN{seed:05d}",
    )


def with_patient_id(profile: SyntheticProfile, patient_id: str) -> SyntheticProfile:
    return replace(profile, patient_id=patient_id)


def chart_json(chart: PatientChart) -> str:
    return dump_json(chart.to_dict())
