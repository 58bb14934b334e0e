"""Physician ratings: two-rater combination and weekly post-deployment monitoring."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import IncompletePair, OutOfRange
from .model import GenerationMethod, parse_date
from .stats import cluster_bootstrap_ci

DOMAINS = ("Overall", "Style", "Accuracy", "Relevance")
ACCEPTABLE = 3
RATING_COLUMNS = ("case_id", "method", "rater_id", "domain", "score", "rated_at")


@dataclass(frozen=True)
class RatingRecord:
    case_id: str
    method: GenerationMethod
    rater_id: str
    domain: str
    score: int
    rated_at: date

    def __post_init__(self):
        object.__setattr__(self, "method", GenerationMethod.parse(self.method))
        object.__setattr__(self, "rated_at", parse_date(self.rated_at))
        if self.domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}, got {self.domain!r}")
        if isinstance(self.score, bool) or self.score not in (1, 2, 3, 4, 5):
            raise OutOfRange(f"score must be an integer 1-5, got {self.score!r}")


@dataclass(frozen=True)
class CombinedRating:
    case_id: str
    method: GenerationMethod
    domain: str
    final_score: int
    raw_mean: float

    @property
    def acceptable(self) -> bool:
        return is_acceptable(self.final_score)


def is_acceptable(final_score: int) -> bool:
    return final_score >= ACCEPTABLE


def combine_pair(r1: int, r2: int) -> tuple[float, int]:
    """Mean of two 1-5 scores and its final category, rounding halves down."""
    for r in (r1, r2):
        if isinstance(r, bool) or r not in (1, 2, 3, 4, 5):
            raise OutOfRange(f"score must be an integer 1-5, got {r!r}")
    raw = (r1 + r2) / 2
    return raw, math.floor(raw)


def combine_ratings(ratings: Iterable[RatingRecord]) -> list[CombinedRating]:
    """One combined rating per (case, method, domain); requires exactly two raters."""
    groups: dict[tuple[str, GenerationMethod, str], dict[str, int]] = defaultdict(dict)
    for r in ratings:
        scores = groups[(r.case_id, r.method, r.domain)]
        if r.rater_id in scores:
            raise ValueError(f"duplicate rating by {r.rater_id} for {r.case_id}/{r.method.value}/{r.domain}")
        scores[r.rater_id] = r.score
    out = []
    for (case_id, method, domain), scores in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1].value, kv[0][2])):
        if len(scores) < 2:
            raise IncompletePair(case_id, domain)
        if len(scores) > 2:
            raise ValueError(f"{case_id}/{domain}: expected two raters, got {sorted(scores)}")
        raw, final = combine_pair(*(scores[k] for k in sorted(scores)))
        out.append(CombinedRating(case_id, method, domain, final, raw))
    return out


def iso_week(d: date) -> str:
    year, week, _ = d.isocalendar()
    return f"{year}-W{week:02d}"


def _week_of(d: date, boundaries: Sequence[date] | None) -> str:
    if not boundaries:
        return iso_week(d)
    label = None
    for b in boundaries:
        if d >= b:
            label = b.isoformat()
    if label is None:
        raise ValueError(f"date {d} falls before the first week boundary {boundaries[0]}")
    return label


@dataclass(frozen=True)
class MonitorRow:
    week: str
    domain: str
    n: int
    mean: float
    ci_low: float
    ci_high: float
    mean_below: bool
    ci_low_below: bool
    any_case_below: bool
    cases_below: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "week": self.week, "domain": self.domain, "n": self.n, "mean": self.mean,
            "ci_low": self.ci_low, "ci_high": self.ci_high,
            "flags": {"mean_below": self.mean_below, "ci_low_below": self.ci_low_below,
                      "any_case_below": self.any_case_below},
            "cases_below": list(self.cases_below),
        }


def weekly_monitor(
    ratings: Iterable[RatingRecord],
    week_boundaries: Sequence["date | str"] | None = None,
    threshold: int = ACCEPTABLE,
    n_reps: int = 10_000,
    seed: int = 0,
    case_dates: Mapping[str, "date | str"] | None = None,
) -> list[MonitorRow]:
    """Per-(week, domain) mean of combined scores with case-clustered bootstrap CIs.

    Cases are bucketed by their tumor-board date from ``case_dates``,
    falling back to the earliest ``rated_at`` of the case. Without
    ``week_boundaries`` buckets are ISO weeks; with them, each bucket runs
    from one boundary up to the next.
    """
    ratings = list(ratings)
    bounds = sorted(parse_date(b) for b in week_boundaries) if week_boundaries else None
    board: dict[str, date] = {k: parse_date(v) for k, v in (case_dates or {}).items()}
    for r in ratings:
        if r.case_id not in (case_dates or {}):
            board[r.case_id] = min(board.get(r.case_id, r.rated_at), r.rated_at)

    buckets: dict[tuple[str, str], list[CombinedRating]] = defaultdict(list)
    for c in combine_ratings(ratings):
        buckets[(_week_of(board[c.case_id], bounds), c.domain)].append(c)

    rows = []
    for (week, domain) in sorted(buckets, key=lambda k: (k[0], DOMAINS.index(k[1]))):
        combined = sorted(buckets[(week, domain)], key=lambda c: (c.case_id, c.method.value))
        items = [(c.case_id, float(c.final_score)) for c in combined]
        ci = cluster_bootstrap_ci(items, "mean", n_reps=n_reps, seed=seed)
        below = tuple(c.case_id for c in combined if c.final_score < threshold)
        rows.append(MonitorRow(week, domain, len(combined), ci.estimate, ci.ci_low, ci.ci_high,
                               ci.estimate < threshold, ci.ci_low < threshold, bool(below), below))
    return rows


# ---------------------------------------------------------------------------
# files


def read_ratings_csv(path: "str | Path") -> list[RatingRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(RATING_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"ratings file {path} lacks columns {sorted(missing)}")
        return [
            RatingRecord(row["case_id"], row["method"], row["rater_id"], row["domain"], int(row["score"]),
                         row["rated_at"])
            for row in reader
        ]


def write_ratings_csv(path: "str | Path", ratings: Iterable[RatingRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RATING_COLUMNS)
        for r in ratings:
            w.writerow([r.case_id, r.method.value, r.rater_id, r.domain, r.score, r.rated_at.isoformat()])
