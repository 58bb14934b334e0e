"""Method-vs-baseline comparison reports and inter-rater agreement tables.

Multiple-comparison families are declared in each report's metadata:
for fact scores, each score definition is one family across the automated
methods; for physician ratings, each rating domain is one family.
"""

from __future__ import annotations

import csv
import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import AllZeroDifferences, InsufficientOverlap, NoCompleteCases
from .judge import ENTAILMENT_LABELS, FactScore
from .model import SCHEMA_VERSION, GenerationMethod, dump_json, write_text_atomic
from .ratings import DOMAINS, RatingRecord, combine_ratings
from .stats import (
    LabeledItem,
    TestResult,
    bh_adjust,
    fleiss_counts,
    fleiss_kappa_ci,
    friedman_test,
    pair_agreement_ci,
    wilcoxon_signed_rank,
)

DEFINITIONS = ("fully_present", "fully_or_partial")
ALPHA = 0.05
MACHINE_RATER = "judge"


def _method_order(methods: Iterable[GenerationMethod]) -> list[GenerationMethod]:
    order = list(GenerationMethod)
    return sorted(set(methods), key=order.index)


@dataclass(frozen=True)
class Comparison:
    family: str
    method: GenerationMethod
    baseline: GenerationMethod
    n: int
    median_difference: float
    test: TestResult | None
    p_adjusted: float

    @property
    def significant(self) -> bool:
        return self.p_adjusted < ALPHA

    def to_dict(self) -> dict[str, Any]:
        return {
            "family": self.family,
            "method": self.method.value,
            "baseline": self.baseline.value,
            "n": self.n,
            "median_difference": self.median_difference,
            "V": self.test.statistic if self.test else None,
            "p_raw": self.test.p_value if self.test else 1.0,
            "p_adjusted": self.p_adjusted,
            "method_detail": dict(self.test.method_detail) if self.test else {"all_differences_zero": True},
            "significance_mark": "*" if self.significant else "",
        }


def _compare_family(family: str, values: Mapping[tuple[str, GenerationMethod], float],
                    methods: Sequence[GenerationMethod], baseline: GenerationMethod) -> list[Comparison]:
    cases = sorted({c for c, _ in values})
    raw = []
    for m in methods:
        paired = [(values[(c, m)], values[(c, baseline)]) for c in cases
                  if (c, m) in values and (c, baseline) in values]
        diffs = sorted(a - b for a, b in paired)
        median = (diffs[(len(diffs) - 1) // 2] + diffs[len(diffs) // 2]) / 2 if diffs else 0.0
        try:
            test = wilcoxon_signed_rank(paired) if paired else None
        except AllZeroDifferences:
            test = None
        raw.append((m, len(paired), median, test))
    adjusted = bh_adjust([t.p_value if t else 1.0 for _, _, _, t in raw]) if raw else []
    return [Comparison(family, m, baseline, n, med, t, p) for (m, n, med, t), p in zip(raw, adjusted)]


@dataclass
class ComparisonReport:
    baseline: GenerationMethod
    methods: list[GenerationMethod]
    case_rows: list[dict[str, Any]]
    friedman: dict[str, dict[str, Any]]
    comparisons: list[Comparison]
    by_type: list[dict[str, Any]]
    likert: list[dict[str, Any]] = field(default_factory=list)
    exclusions: list[dict[str, Any]] = field(default_factory=list)
    families: dict[str, list[str]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "baseline": self.baseline.value,
            "methods": [m.value for m in self.methods],
            "bh_families": self.families,
            "friedman": self.friedman,
            "comparisons": [c.to_dict() for c in self.comparisons],
            "by_type": self.by_type,
            "likert": self.likert,
            "exclusions": self.exclusions,
            "case_scores": self.case_rows,
        }


def comparison_report(
    fact_scores: Iterable[FactScore],
    ratings: Iterable[RatingRecord] | None = None,
    baseline: "GenerationMethod | str" = GenerationMethod.SECUREGPT,
    methods: Sequence["GenerationMethod | str"] | None = None,
) -> ComparisonReport:
    """Compare each automated method with the baseline on fact scores and ratings.

    Wilcoxon comparisons are pairwise complete. The Friedman test uses cases
    scored under every compared method; dropped cases go to the exclusion log.
    """
    baseline = GenerationMethod.parse(baseline)
    scores = [s for s in fact_scores if s.method is not GenerationMethod.PHYSICIAN]
    by_key = {}
    for s in scores:
        if (s.case_id, s.method) in by_key:
            raise ValueError(f"duplicate fact score for {s.case_id}/{s.method.value}")
        by_key[(s.case_id, s.method)] = s
    present = {m for _, m in by_key}
    if baseline not in present:
        raise NoCompleteCases(f"no fact scores for the baseline {baseline.value}")
    if methods is None:
        compared = _method_order(m for m in present if m is not baseline)
    else:
        compared = _method_order(GenerationMethod.parse(m) for m in methods)
    if not compared:
        raise NoCompleteCases("no methods to compare with the baseline")

    cases = sorted({c for c, _ in by_key})
    all_methods = [baseline, *compared]
    complete = [c for c in cases if all((c, m) in by_key for m in all_methods)]
    exclusions = [
        {"case_id": c, "missing_methods": [m.value for m in all_methods if (c, m) not in by_key],
         "excluded_from": "friedman; wilcoxon comparisons involving the missing methods"}
        for c in cases if c not in complete
    ]
    if len(complete) < 2:
        raise NoCompleteCases(f"only {len(complete)} case(s) scored under every compared method")

    case_rows = [
        {"case_id": c, "method": m.value, "n_items": by_key[(c, m)].n_items,
         "fully_present": by_key[(c, m)].fully_present, "fully_or_partial": by_key[(c, m)].fully_or_partial}
        for c in cases for m in all_methods if (c, m) in by_key
    ]

    friedman = {}
    comparisons: list[Comparison] = []
    families: dict[str, list[str]] = {}
    for definition in DEFINITIONS:
        values = {k: getattr(s, definition) for k, s in by_key.items()}
        matrix = [[values[(c, m)] for m in all_methods] for c in complete]
        friedman[definition] = {**friedman_test(matrix).to_dict(), "methods": [m.value for m in all_methods]}
        comparisons += _compare_family(definition, values, compared, baseline)
        families[definition] = [m.value for m in compared]

    by_type = _by_type_matrix(scores, all_methods)

    likert: list[dict[str, Any]] = []
    if ratings is not None:
        ratings = list(ratings)
        combined = combine_ratings(ratings)
        for domain in DOMAINS:
            values = {(c.case_id, c.method): float(c.final_score) for c in combined if c.domain == domain}
            if not values:
                continue
            rated = _method_order(m for _, m in values)
            if baseline not in rated:
                continue
            fam = f"rating:{domain}"
            comparisons += _compare_family(fam, values, [m for m in compared if m in rated], baseline)
            families[fam] = [m.value for m in compared if m in rated]
        likert = _likert_table(ratings)

    return ComparisonReport(baseline, compared, case_rows, friedman, comparisons, by_type, likert, exclusions, families)


def _by_type_matrix(scores: Sequence[FactScore], methods: Sequence[GenerationMethod]) -> list[dict[str, Any]]:
    """Item-level proportions per attribute type and method, pooled over cases."""
    pooled: dict[tuple[str, GenerationMethod], list[int]] = defaultdict(lambda: [0, 0, 0])
    for s in scores:
        if s.method not in methods:
            continue
        for t, ts in s.by_type.items():
            acc = pooled[(t, s.method)]
            acc[0] += ts.n_items
            acc[1] += ts.n_yes
            acc[2] += ts.n_yes_or_partial
    rows = []
    for (t, m) in sorted(pooled, key=lambda k: (k[0], methods.index(k[1]))):
        n, yes, yp = pooled[(t, m)]
        rows.append({"attribute_type": t, "method": m.value, "n_items": n, "n_yes": yes, "n_yes_or_partial": yp,
                     "fully_present": yes / n, "fully_or_partial": yp / n})
    return rows


def _likert_table(ratings: Sequence[RatingRecord]) -> list[dict[str, Any]]:
    """Distribution of raw rater scores per method and domain."""
    counts: dict[tuple[GenerationMethod, str], list[int]] = defaultdict(lambda: [0] * 5)
    for r in ratings:
        counts[(r.method, r.domain)][r.score - 1] += 1
    order = list(GenerationMethod)
    rows = []
    for (m, d) in sorted(counts, key=lambda k: (order.index(k[0]), DOMAINS.index(k[1]))):
        c = counts[(m, d)]
        total = sum(c)
        for score in range(1, 6):
            rows.append({"method": m.value, "domain": d, "score": score, "count": c[score - 1],
                         "proportion": c[score - 1] / total})
    return rows


def _write_csv(path: Path, rows: Sequence[Mapping[str, Any]], columns: Sequence[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow(["" if row.get(c) is None else repr(row[c]) if isinstance(row[c], float) else row[c]
                        for c in columns])


def write_comparison_report(report: ComparisonReport, out_dir: "str | Path") -> list[Path]:
    out = Path(out_dir)
    files = {
        "comparison.json": None,
        "case_scores.csv": (report.case_rows, ("case_id", "method", "n_items", "fully_present", "fully_or_partial")),
        "comparisons.csv": ([c.to_dict() for c in report.comparisons],
                            ("family", "method", "baseline", "n", "median_difference", "V", "p_raw", "p_adjusted",
                             "significance_mark")),
        "by_type.csv": (report.by_type, ("attribute_type", "method", "n_items", "n_yes", "n_yes_or_partial",
                                         "fully_present", "fully_or_partial")),
        "likert.csv": (report.likert, ("method", "domain", "score", "count", "proportion")),
        "exclusions.csv": ([{**e, "missing_methods": ";".join(e["missing_methods"])} for e in report.exclusions],
                           ("case_id", "missing_methods", "excluded_from")),
    }
    write_text_atomic(out / "comparison.json", dump_json(report.to_dict()))
    for name, spec in files.items():
        if spec is not None:
            _write_csv(out / name, *spec)
    return [out / name for name in files]


# ---------------------------------------------------------------------------
# agreement


def agreement_report(
    items: Iterable[LabeledItem],
    machine_rater: str | None = MACHINE_RATER,
    alphabet: Sequence[str] = ENTAILMENT_LABELS,
    n_reps: int = 10_000,
    seed: int = 0,
) -> dict[str, Any]:
    """Pairwise and multi-rater agreement per stratum and overall, with clustered CIs."""
    items = list(items)
    raters = sorted({r for it in items for r in it.labels})
    if len(raters) < 2:
        raise InsufficientOverlap(f"need at least two raters, found {raters}")
    for a, b in itertools.combinations(raters, 2):
        if not any(a in it.labels and b in it.labels for it in items):
            raise InsufficientOverlap(f"raters {a} and {b} share no rated items")

    strata = sorted({it.stratum for it in items if it.stratum})
    pair_rows: list[dict[str, Any]] = []
    fleiss_rows: list[dict[str, Any]] = []
    humans = [r for r in raters if r != machine_rater]
    rater_sets = [("all_raters", raters)]
    if machine_rater in raters and len(humans) >= 2:
        rater_sets.append(("without_" + machine_rater, humans))

    for stratum in [*strata, "Overall"]:
        subset = items if stratum == "Overall" else [it for it in items if it.stratum == stratum]
        for a, b in itertools.combinations(raters, 2):
            by_cluster: dict[str, list[tuple[str, str]]] = defaultdict(list)
            for it in subset:
                if a in it.labels and b in it.labels:
                    by_cluster[it.cluster_id].append((it.labels[a], it.labels[b]))
            row: dict[str, Any] = {"stratum": stratum, "rater_a": a, "rater_b": b,
                                   "n_items": sum(len(v) for v in by_cluster.values()), "n_clusters": len(by_cluster)}
            clusters = [by_cluster[k] for k in sorted(by_cluster)]
            for coef in ("exact", "cohen_kappa", "gwet_ac1"):
                res = pair_agreement_ci(clusters, coef, alphabet, n_reps, seed) if clusters else None
                row[coef] = res.to_dict() if res else None
            pair_rows.append(row)
        for label, group in rater_sets:
            by_cluster_rows: dict[str, list[list[str]]] = defaultdict(list)
            for it in subset:
                if all(r in it.labels for r in group):
                    by_cluster_rows[it.cluster_id].append([it.labels[r] for r in group])
            res = None
            if by_cluster_rows:
                mats = [fleiss_counts(by_cluster_rows[k], alphabet) for k in sorted(by_cluster_rows)]
                res = fleiss_kappa_ci(mats, n_reps, seed)
            fleiss_rows.append({"stratum": stratum, "raters": label, "rater_ids": list(group),
                                "n_items": sum(len(v) for v in by_cluster_rows.values()),
                                "fleiss_kappa": res.to_dict() if res else None})
    return {"schema_version": SCHEMA_VERSION, "alphabet": list(alphabet), "raters": raters,
            "machine_rater": machine_rater if machine_rater in raters else None,
            "n_reps": n_reps, "seed": seed, "pairwise": pair_rows, "fleiss": fleiss_rows}


def write_agreement_report(report: Mapping[str, Any], out_dir: "str | Path") -> list[Path]:
    out = Path(out_dir)
    write_text_atomic(out / "agreement.json", dump_json(report))
    rows = []
    for r in report["pairwise"]:
        for coef in ("exact", "cohen_kappa", "gwet_ac1"):
            res = r[coef] or {}
            rows.append({"stratum": r["stratum"], "rater_a": r["rater_a"], "rater_b": r["rater_b"],
                         "coefficient": coef, "n_items": r["n_items"], "estimate": res.get("estimate"),
                         "ci_low": res.get("ci_low"), "ci_high": res.get("ci_high"),
                         "degenerate": res.get("degenerate", False)})
    for r in report["fleiss"]:
        res = r["fleiss_kappa"] or {}
        rows.append({"stratum": r["stratum"], "rater_a": r["raters"], "rater_b": "",
                     "coefficient": "fleiss_kappa", "n_items": r["n_items"], "estimate": res.get("estimate"),
                     "ci_low": res.get("ci_low"), "ci_high": res.get("ci_high"),
                     "degenerate": res.get("degenerate", False)})
    cols = ("stratum", "rater_a", "rater_b", "coefficient", "n_items", "estimate", "ci_low", "ci_high", "degenerate")
    _write_csv(out / "agreement.csv", rows, cols)
    return [out / "agreement.json", out / "agreement.csv"]


def write_monitor_report(rows: Sequence[Any], out_dir: "str | Path", meta: Mapping[str, Any] | None = None) -> list[Path]:
    out = Path(out_dir)
    dicts = [r.to_dict() for r in rows]
    write_text_atomic(out / "monitor.json", dump_json({"schema_version": SCHEMA_VERSION, **(meta or {}),
                                                       "rows": dicts}))
    flat = [{**{k: v for k, v in d.items() if k not in ("flags", "cases_below")}, **d["flags"],
             "cases_below": ";".join(d["cases_below"])} for d in dicts]
    cols = ("week", "domain", "n", "mean", "ci_low", "ci_high", "mean_below", "ci_low_below", "any_case_below",
            "cases_below")
    _write_csv(out / "monitor.csv", flat, cols)
    return [out / "monitor.json", out / "monitor.csv"]
