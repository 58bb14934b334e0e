"""``tumorboard`` command line: synthesize, ingest, generate, judge, compare, agreement, monitor.

Every verb reads an optional JSON run config (``--config``); paths inside it
are relative to the config file. ``--seed``, ``--mode`` and ``--out``
override the config. Exit codes: 0 success, 1 partial failure, 2 config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Callable, Sequence

from .charts import ChartStore, generate_synthetic_chart, random_profile, synthetic_rubric
from .errors import ConfigError, TumorBoardError
from .gateway import Gateway, GatewayConfig, build_gateway
from .judge import (
    JUDGE_MODEL,
    EntailmentRecord,
    judge_summary,
    read_entailment_jsonl,
    read_fact_scores,
    score_summary,
    write_entailment_jsonl,
    write_fact_scores,
)
from .model import (
    AUTOMATED_METHODS,
    SCHEMA_VERSION,
    GenerationMethod,
    SummaryArtifact,
    dump_json,
    load_rubric,
    parse_date,
    parse_summary_sections,
    write_text_atomic,
)
from .orchestrator import StrategyConfig, SummaryStorage, run_strategy
from .ratings import read_ratings_csv, weekly_monitor
from .reports import (
    MACHINE_RATER,
    agreement_report,
    comparison_report,
    write_agreement_report,
    write_comparison_report,
    write_monitor_report,
)
from .scripted import Facts, read_facts, render_summary_text
from .stats import LabeledItem

log = logging.getLogger("tumorboard")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


@dataclass
class Case:
    case_id: str
    patient_id: str
    as_of: date

    def to_dict(self) -> dict[str, Any]:
        return {"case_id": self.case_id, "patient_id": self.patient_id, "as_of": self.as_of.isoformat()}


@dataclass
class RunConfig:
    base: Path = Path(".")
    out: Path = Path("out")
    charts: Path | None = None
    cases: list[Case] = field(default_factory=list)
    rubrics: Path | None = None
    summaries: Path | None = None
    baseline_summaries: Path | None = None
    strategies: list[GenerationMethod] = field(default_factory=lambda: list(AUTOMATED_METHODS))
    baseline: GenerationMethod = GenerationMethod.SECUREGPT
    seed: int | None = None
    workers: int = 4
    n_reps: int = 10_000
    model_id: str = "gpt-4.1"
    judge_model: str = JUDGE_MODEL
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    fact_scores: Path | None = None
    ratings: Path | None = None
    labels: Path | None = None
    judge_records: Path | None = None
    case_dates: dict[str, date] = field(default_factory=dict)
    week_boundaries: list[date] = field(default_factory=list)

    @property
    def charts_dir(self) -> Path:
        return self.charts or self.out / "charts"

    @property
    def rubrics_dir(self) -> Path:
        return self.rubrics or self.out / "rubrics"

    @property
    def summaries_dir(self) -> Path:
        return self.summaries or self.out / "summaries"

    @property
    def baseline_summaries_dir(self) -> Path:
        return self.baseline_summaries or self.out / "baseline_summaries"

    def snapshot(self) -> dict[str, Any]:
        """Config fields that shape outputs; excludes locations so reruns elsewhere match."""
        return {
            "strategies": [m.value for m in self.strategies],
            "baseline": self.baseline.value,
            "seed": self.seed,
            "n_reps": self.n_reps,
            "model_id": self.model_id,
            "judge_model": self.judge_model,
            "mode": self.gateway.mode,
            "cases": [c.to_dict() for c in self.cases],
        }


def _path(base: Path, value: Any) -> Path | None:
    if value in (None, ""):
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def _load_cases(value: Any, base: Path) -> list[Case]:
    if isinstance(value, (str, Path)):
        path = _path(base, value)
        if not path.exists():
            return []  # not synthesized yet; verbs that need cases say so
        data = json.loads(path.read_text(encoding="utf-8"))
        value = data["cases"] if isinstance(data, dict) else data
    return [Case(str(c["case_id"]), str(c.get("patient_id", c["case_id"])), parse_date(c["as_of"])) for c in value]


def load_config(path: str | None, seed: int | None, mode: str | None, out: str | None) -> RunConfig:
    raw: dict[str, Any] = {}
    base = Path(".")
    if path:
        p = Path(path)
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        base = p.resolve().parent
    try:
        gw_raw = dict(raw.get("gateway") or {})
        gw = GatewayConfig(
            mode=mode or gw_raw.pop("mode", "replay"),
            transcript_dir=str(_path(base, gw_raw.pop("transcripts", None) or "transcripts")),
            **{k: v for k, v in gw_raw.items() if k in GatewayConfig.__dataclass_fields__ and k != "mode"},
        )
        cfg = RunConfig(
            base=base,
            out=Path(out) if out else _path(base, raw.get("out", "out")),
            charts=_path(base, raw.get("charts")),
            cases=_load_cases(raw["cases"], base) if raw.get("cases") else [],
            rubrics=_path(base, raw.get("rubrics")),
            summaries=_path(base, raw.get("summaries")),
            baseline_summaries=_path(base, raw.get("baseline_summaries")),
            strategies=[GenerationMethod.parse(s) for s in raw.get("strategies", [m.value for m in AUTOMATED_METHODS])],
            baseline=GenerationMethod.parse(raw.get("baseline", "SecureGPT")),
            seed=seed if seed is not None else raw.get("seed"),
            workers=int(raw.get("workers", 4)),
            n_reps=int(raw.get("n_reps", 10_000)),
            model_id=raw.get("model_id", "gpt-4.1"),
            judge_model=raw.get("judge_model", JUDGE_MODEL),
            gateway=gw,
            fact_scores=_path(base, raw.get("fact_scores")),
            ratings=_path(base, raw.get("ratings")),
            labels=_path(base, raw.get("labels")),
            judge_records=_path(base, raw.get("judge_records")),
            case_dates={k: parse_date(v) for k, v in (raw.get("case_dates") or {}).items()},
            week_boundaries=[parse_date(d) for d in raw.get("week_boundaries") or []],
        )
    except (KeyError, TypeError, ValueError, OSError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    for m in cfg.strategies:
        if not m.generatable:
            raise ConfigError(f"strategy {m.value} cannot be generated")
    if cfg.gateway.mode not in ("live", "record", "replay"):
        raise ConfigError(f"unknown mode {cfg.gateway.mode!r}")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    return cfg


def _require_seed(cfg: RunConfig) -> int:
    if cfg.seed is None:
        raise ConfigError("this command needs a seed (--seed or \"seed\" in the config)")
    return int(cfg.seed)


def _gateway(cfg: RunConfig) -> Gateway:
    if cfg.gateway.mode != "replay" and cfg.seed is None:
        raise ConfigError("live and record runs need a seed")
    return build_gateway(cfg.gateway)


def _parallel(fn: Callable[[Any], Any], items: Sequence[Any], workers: int) -> list[Any]:
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# verbs


def baseline_artifact(case: Case, store: ChartStore) -> SummaryArtifact:
    """A stand-in manual-workflow summary for synthetic corpora.

    It reads every note but keeps only the two most recent therapies,
    the kind of trimming a busy clinician does by hand.
    """
    facts = Facts()
    for note in store.get(case.patient_id).notes:
        read_facts(note.text, facts)
    facts.therapies = facts.therapies[-2:]
    body = render_summary_text(facts)
    return SummaryArtifact(case.case_id, GenerationMethod.SECUREGPT, body, parse_summary_sections(body),
                           created_at=f"{case.as_of.isoformat()}T00:00:00+00:00", patient_id=case.patient_id,
                           as_of=case.as_of.isoformat())


def cmd_synthesize(cfg: RunConfig, args: argparse.Namespace) -> int:
    seed = _require_seed(cfg)
    store = ChartStore(cfg.charts_dir)
    cases = []
    for i in range(args.n):
        s = seed * 1000 + i
        profile = random_profile(s, board_date=args.board_date, n_notes=args.n_notes)
        chart = generate_synthetic_chart(s, profile)
        store.put(chart)
        rubric = synthetic_rubric(s, profile)
        write_text_atomic(cfg.rubrics_dir / f"{chart.patient_id}.json", dump_json(rubric.to_dict()))
        cases.append(Case(chart.patient_id, chart.patient_id, profile.board_date))
    write_text_atomic(cfg.out / "cases.json", dump_json({"schema_version": SCHEMA_VERSION,
                                                        "cases": [c.to_dict() for c in cases]}))
    storage = SummaryStorage(cfg.baseline_summaries_dir)
    for c in cases:
        storage.store(baseline_artifact(c, store))
    print(f"wrote {len(cases)} synthetic cases under {cfg.out}")
    return EXIT_OK


def cmd_ingest_charts(cfg: RunConfig, args: argparse.Namespace) -> int:
    store = ChartStore(cfg.charts_dir)
    summary, status = [], EXIT_OK
    for path in args.bundles:
        try:
            report = store.ingest_bundle(Path(path).read_bytes())
        except (OSError, TumorBoardError) as exc:
            summary.append({"bundle": Path(path).name, "error": str(exc)})
            status = EXIT_PARTIAL
            continue
        if report.errors:
            status = EXIT_PARTIAL
        summary.append({"bundle": Path(path).name, "accepted": report.accepted, "skipped": report.skipped,
                        "errors": [dict(e) if isinstance(e, dict) else str(e) for e in report.errors]})
    write_text_atomic(cfg.out / "ingest_report.json", dump_json({"schema_version": SCHEMA_VERSION,
                                                                 "bundles": summary}))
    print(f"ingested {len(args.bundles)} bundle(s) into {cfg.charts_dir}")
    return status


def cmd_generate(cfg: RunConfig, args: argparse.Namespace) -> int:
    if not cfg.cases:
        raise ConfigError("generate needs cases in the config")
    gateway = _gateway(cfg)
    store = ChartStore(cfg.charts_dir)
    storage = SummaryStorage(cfg.summaries_dir)
    jobs = [(c, m) for c in cfg.cases for m in cfg.strategies]

    def run(job):
        case, method = job
        try:
            art = run_strategy(StrategyConfig(method, model_id=cfg.model_id), case.patient_id, case.as_of,
                               gateway, store, storage, case_id=case.case_id)
        except TumorBoardError as exc:
            log.error("case %s / %s failed: %s", case.case_id, method.value, exc)
            return {"case_id": case.case_id, "method": method.value, "error": f"{type(exc).__name__}: {exc}"}
        record = storage.record_for(art)
        return {"case_id": case.case_id, "method": method.value, "record_id": record["record_id"],
                "transcript_ref": art.transcript_ref, "n_characters": len(art.body)}

    results = _parallel(run, jobs, cfg.workers)
    failures = [r for r in results if "error" in r]
    manifest = {"schema_version": SCHEMA_VERSION, "command": "generate", "config": cfg.snapshot(),
                "artifacts": [r for r in results if "error" not in r], "failures": failures}
    write_text_atomic(cfg.out / "generate_manifest.json", dump_json(manifest))
    print(f"generated {len(results) - len(failures)} of {len(results)} summaries")
    return EXIT_PARTIAL if failures else EXIT_OK


def _load_summaries(cfg: RunConfig) -> list[SummaryArtifact]:
    """Generated summaries plus ingested baseline summaries, in case then method order."""
    arts = []
    for root in (cfg.baseline_summaries_dir, cfg.summaries_dir):
        storage = SummaryStorage(root)
        arts += [storage.load_artifact(rid) for rid in storage.record_ids()]
    order = list(GenerationMethod)
    return sorted(arts, key=lambda a: (a.case_id, order.index(a.method)))


def cmd_judge(cfg: RunConfig, args: argparse.Namespace) -> int:
    gateway = _gateway(cfg)
    arts = _load_summaries(cfg)
    if not arts:
        raise ConfigError(f"no summary records under {cfg.summaries_dir}")

    def run(art: SummaryArtifact):
        try:
            rubric = load_rubric(cfg.rubrics_dir / f"{art.case_id}.json")
        except OSError:
            return art, None, "RubricMissing: no rubric for this case"
        try:
            records = judge_summary(rubric, art.body, gateway, cfg.judge_model)
            return art, (records, score_summary(rubric, records, art.case_id, art.method)), None
        except TumorBoardError as exc:
            return art, None, f"{type(exc).__name__}: {exc}"

    results = _parallel(run, arts, cfg.workers)
    rows, scores, failures = [], [], []
    for art, ok, err in results:
        if err:
            failures.append({"case_id": art.case_id, "method": art.method.value, "error": err})
            continue
        records, score = ok
        rows += [(art.case_id, art.method, r) for r in records]
        scores.append(score)
    write_entailment_jsonl(cfg.out / "entailment.jsonl", rows)
    write_fact_scores(cfg.out / "fact_scores.csv", cfg.out / "fact_scores.json", scores)
    write_text_atomic(cfg.out / "judge_manifest.json", dump_json({
        "schema_version": SCHEMA_VERSION, "command": "judge", "config": cfg.snapshot(),
        "scored": [{"case_id": s.case_id, "method": s.method.value} for s in scores], "failures": failures}))
    print(f"judged {len(scores)} of {len(arts)} summaries")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_compare(cfg: RunConfig, args: argparse.Namespace) -> int:
    scores = read_fact_scores(cfg.fact_scores or cfg.out / "fact_scores.json")
    ratings = read_ratings_csv(cfg.ratings) if cfg.ratings else None
    report = comparison_report(scores, ratings, cfg.baseline)
    write_comparison_report(report, cfg.out / "compare")
    marks = sum(c.significant for c in report.comparisons)
    print(f"compared {len(report.methods)} method(s) with {report.baseline.value}; {marks} significant")
    return EXIT_OK


def read_labels_csv(path: Path) -> list[tuple[str, str, str, str, str]]:
    """Human entailment labels: case_id, method, attribute_id, rater_id, entailment."""
    with open(path, newline="", encoding="utf-8") as fh:
        return [(r["case_id"], r["method"], r["attribute_id"], r["rater_id"], r["entailment"])
                for r in csv.DictReader(fh)]


def labeled_items(labels: Sequence[tuple[str, str, str, str, str]],
                  judge_rows: Sequence[tuple[str, GenerationMethod, EntailmentRecord]] = ()) -> list[LabeledItem]:
    grouped: dict[tuple[str, str, str], dict[str, str]] = {}
    for case_id, method, attr_id, rater, label in labels:
        key = (case_id, GenerationMethod.parse(method).value, attr_id)
        grouped.setdefault(key, {})[rater] = label
    for case_id, method, rec in judge_rows:
        key = (case_id, method.value, rec.attribute_id)
        if key in grouped:
            grouped[key][MACHINE_RATER] = rec.entailment
    return [LabeledItem(c, f"{c}/{m}/{a}", labels, stratum=m) for (c, m, a), labels in sorted(grouped.items())]


def cmd_agreement(cfg: RunConfig, args: argparse.Namespace) -> int:
    if not cfg.labels:
        raise ConfigError("agreement needs \"labels\" (human label CSV) in the config")
    seed = _require_seed(cfg)
    judge_rows = list(read_entailment_jsonl(cfg.judge_records)) if cfg.judge_records else []
    items = labeled_items(read_labels_csv(cfg.labels), judge_rows)
    report = agreement_report(items, n_reps=cfg.n_reps, seed=seed)
    write_agreement_report(report, cfg.out / "agreement")
    print(f"agreement over {len(items)} items and {len(report['raters'])} raters")
    return EXIT_OK


def cmd_monitor(cfg: RunConfig, args: argparse.Namespace) -> int:
    if not cfg.ratings:
        raise ConfigError("monitor needs \"ratings\" (ratings CSV) in the config")
    seed = _require_seed(cfg)
    rows = weekly_monitor(read_ratings_csv(cfg.ratings), cfg.week_boundaries or None, n_reps=cfg.n_reps, seed=seed,
                          case_dates=cfg.case_dates or None)
    write_monitor_report(rows, cfg.out / "monitor", {"n_reps": cfg.n_reps, "seed": seed})
    flagged = sum(r.any_case_below or r.mean_below for r in rows)
    print(f"{len(rows)} week/domain rows; {flagged} flagged")
    return EXIT_OK


VERBS = {
    "synthesize": cmd_synthesize,
    "ingest-charts": cmd_ingest_charts,
    "generate": cmd_generate,
    "judge": cmd_judge,
    "compare": cmd_compare,
    "agreement": cmd_agreement,
    "monitor": cmd_monitor,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, help="master seed for bootstrap and synthetic data")
    common.add_argument("--mode", choices=("live", "record", "replay"), help="model gateway mode")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="tumorboard", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    syn = sub.add_parser("synthesize", parents=[common], help="write a seeded synthetic corpus")
    syn.add_argument("--n", type=int, default=5, help="number of cases")
    syn.add_argument("--n-notes", type=int, default=None)
    syn.add_argument("--board-date", type=parse_date, default=date(2025, 6, 2))
    ing = sub.add_parser("ingest-charts", parents=[common], help="load FHIR bundles into the chart store")
    ing.add_argument("bundles", nargs="+")
    for verb, text in (("generate", "run summary strategies over the configured cases"),
                       ("judge", "score stored summaries against rubrics"),
                       ("compare", "method-vs-baseline comparison report"),
                       ("agreement", "inter-rater agreement report"),
                       ("monitor", "weekly post-deployment rating monitor")):
        sub.add_parser(verb, parents=[common], help=text)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.mode, args.out)
        return VERBS[args.verb](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TumorBoardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
