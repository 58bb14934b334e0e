"""Agreement coefficients, paired rank tests, FDR adjustment, and cluster bootstrap.

Conventions worth knowing before reading the numbers:

* Wilcoxon drops zero differences, ranks ties by their average, and
  reports V as the sum of ranks of positive ``a - b`` differences. Up to
  ``exact_max_n`` nonzero pairs the p-value is exact (conditional on the
  observed tie pattern); above that it uses the normal approximation with
  tie and continuity corrections.
* A chance-corrected coefficient whose chance agreement is 1 has no value;
  it comes back with ``estimate=None`` and ``degenerate_flag=True``.
* The bootstrap draws the whole ``n_reps x n_clusters`` index matrix from
  one generator seeded with ``seed`` before evaluating any replicate, so
  results do not depend on how replicates are scheduled.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as sps

from .errors import (
    AllZeroDifferences,
    DegenerateVariance,
    EmptyInput,
    IncompleteMatrix,
    MetricFailure,
    OutOfRange,
    RaggedRaterCounts,
)

# ---------------------------------------------------------------------------
# agreement


@dataclass(frozen=True)
class LabeledItem:
    """One rated item; ``labels`` maps rater id to that rater's category."""

    cluster_id: str
    item_id: str
    labels: Mapping[str, Hashable]
    stratum: str = ""


@dataclass(frozen=True)
class AgreementResult:
    coefficient_name: str
    estimate: float | None
    ci_low: float | None = None
    ci_high: float | None = None
    degenerate_flag: bool = False
    n: int = 0

    def with_ci(self, low: float | None, high: float | None) -> "AgreementResult":
        return AgreementResult(self.coefficient_name, self.estimate, low, high, self.degenerate_flag, self.n)

    def to_dict(self) -> dict[str, Any]:
        return {"coefficient": self.coefficient_name, "estimate": self.estimate, "ci_low": self.ci_low,
                "ci_high": self.ci_high, "degenerate": self.degenerate_flag, "n": self.n}


def _check_pairs(pairs: Sequence[tuple[Hashable, Hashable]]) -> list[tuple[Hashable, Hashable]]:
    pairs = list(pairs)
    if not pairs:
        raise EmptyInput("no rating pairs")
    return pairs


def exact_agreement(pairs: Sequence[tuple[Hashable, Hashable]]) -> float:
    pairs = _check_pairs(pairs)
    return sum(a == b for a, b in pairs) / len(pairs)


def cohen_kappa(pairs: Sequence[tuple[Hashable, Hashable]]) -> AgreementResult:
    pairs = _check_pairs(pairs)
    n = len(pairs)
    ca = Counter(a for a, _ in pairs)
    cb = Counter(b for _, b in pairs)
    agree = sum(a == b for a, b in pairs)
    chance = sum(ca[k] * cb[k] for k in ca)  # p_e scaled by n**2
    if chance == n * n:
        return AgreementResult("cohen_kappa", None, degenerate_flag=True, n=n)
    p_o, p_e = agree / n, chance / (n * n)
    return AgreementResult("cohen_kappa", (p_o - p_e) / (1 - p_e), n=n)


def gwet_ac1(pairs: Sequence[tuple[Hashable, Hashable]], alphabet: Sequence[Hashable] | None = None) -> AgreementResult:
    """Gwet's AC1 for two raters.

    ``K`` is ``len(alphabet)`` when an alphabet is declared, else the number
    of observed categories. Data using a single category is degenerate
    either way.
    """
    pairs = _check_pairs(pairs)
    n = len(pairs)
    counts = Counter(a for a, _ in pairs) + Counter(b for _, b in pairs)
    if alphabet is not None:
        unknown = set(counts) - set(alphabet)
        if unknown:
            raise ValueError(f"labels {sorted(map(str, unknown))} are outside the declared alphabet")
    k = len(alphabet) if alphabet is not None else len(counts)
    if len(counts) < 2 or k < 2:
        return AgreementResult("gwet_ac1", None, degenerate_flag=True, n=n)
    p_o = sum(a == b for a, b in pairs) / n
    pis = [c / (2 * n) for c in counts.values()]
    p_e = sum(p * (1 - p) for p in pis) / (k - 1)
    return AgreementResult("gwet_ac1", (p_o - p_e) / (1 - p_e), n=n)


def fleiss_counts(label_rows: Iterable[Sequence[Hashable]], alphabet: Sequence[Hashable]) -> np.ndarray:
    """Per-item category counts from per-item label lists."""
    index = {c: j for j, c in enumerate(alphabet)}
    rows = [list(r) for r in label_rows]
    out = np.zeros((len(rows), len(alphabet)), dtype=np.int64)
    for i, row in enumerate(rows):
        for label in row:
            out[i, index[label]] += 1
    return out


def fleiss_kappa(items: "Sequence[Sequence[int]] | np.ndarray") -> AgreementResult:
    counts = np.asarray(items, dtype=np.int64)
    if counts.size == 0:
        raise EmptyInput("no items")
    if counts.ndim != 2:
        raise ValueError("items must be an n_items x n_categories count matrix")
    m = counts.sum(axis=1)
    if np.any(m != m[0]):
        raise RaggedRaterCounts(f"raters per item vary: {sorted(set(m.tolist()))}")
    m = int(m[0])
    if m < 2:
        raise RaggedRaterCounts("Fleiss' kappa needs at least 2 raters per item")
    n = counts.shape[0]
    col = counts.sum(axis=0)
    if np.count_nonzero(col) < 2:
        return AgreementResult("fleiss_kappa", None, degenerate_flag=True, n=n)
    p_i = ((counts * counts).sum(axis=1) - m) / (m * (m - 1))
    p_bar = p_i.mean()
    p_j = col / (n * m)
    p_e = float((p_j * p_j).sum())
    return AgreementResult("fleiss_kappa", float((p_bar - p_e) / (1 - p_e)), n=n)


# ---------------------------------------------------------------------------
# paired tests


@dataclass(frozen=True)
class TestResult:
    statistic_name: str
    statistic: float
    p_value: float
    n_effective: int
    method_detail: Mapping[str, Any] = field(default_factory=dict)

    __test__ = False  # keep pytest from collecting this class

    def to_dict(self) -> dict[str, Any]:
        return {"statistic_name": self.statistic_name, "statistic": self.statistic, "p_value": self.p_value,
                "n_effective": self.n_effective, "method_detail": dict(self.method_detail)}


def _signed_rank_null(doubled_ranks: Sequence[int]) -> np.ndarray:
    """Null distribution of 2V: counts of sign assignments per doubled sum."""
    total = int(sum(doubled_ranks))
    dist = np.zeros(total + 1, dtype=np.float64)
    dist[0] = 1.0
    for r in doubled_ranks:
        shifted = np.zeros_like(dist)
        shifted[r:] = dist[: total + 1 - r]
        dist = dist + shifted
    return dist / 2.0 ** len(doubled_ranks)


def wilcoxon_signed_rank(paired_values: Sequence[tuple[float, float]], exact_max_n: int = 25) -> TestResult:
    """Two-sided Wilcoxon signed-rank test of ``a - b``."""
    d = np.array([a - b for a, b in paired_values], dtype=float)
    n_zero = int(np.count_nonzero(d == 0))
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise AllZeroDifferences(f"all {n_zero} paired differences are zero")
    ranks = sps.rankdata(np.abs(d))
    v = float(ranks[d > 0].sum())
    _, tie_sizes = np.unique(np.abs(d), return_counts=True)
    n_ties = int((tie_sizes > 1).sum())
    detail: dict[str, Any] = {"zeros_dropped": n_zero, "tie_groups": n_ties}

    if n <= exact_max_n:
        doubled = np.rint(ranks * 2).astype(int)
        dist = _signed_rank_null(doubled)
        cdf = np.cumsum(dist)
        k = int(round(2 * v))
        lower = cdf[k]
        upper = 1.0 - (cdf[k - 1] if k > 0 else 0.0)
        p = min(1.0, 2.0 * min(lower, upper))
        detail["method"] = "exact"
    else:
        mean = n * (n + 1) / 4
        var = n * (n + 1) * (2 * n + 1) / 24 - float(((tie_sizes ** 3) - tie_sizes).sum()) / 48
        z = v - mean
        z = (z - 0.5 * np.sign(z)) / math.sqrt(var)
        p = min(1.0, 2.0 * min(sps.norm.cdf(z), sps.norm.sf(z)))
        detail["method"] = "normal approximation, tie and continuity corrected"
    return TestResult("V", v, float(p), n, detail)


def friedman_test(matrix: "Sequence[Sequence[float]] | np.ndarray") -> TestResult:
    """Friedman rank-sum test over rows (cases) and columns (treatments)."""
    try:
        x = np.asarray(matrix, dtype=float)
    except ValueError:
        raise IncompleteMatrix("rows have different lengths") from None
    if x.ndim != 2:
        raise IncompleteMatrix("matrix must be two-dimensional")
    if np.isnan(x).any():
        raise IncompleteMatrix("matrix has missing values")
    n, k = x.shape
    if n < 2 or k < 2:
        raise IncompleteMatrix(f"need at least 2 cases and 2 treatments, got {n}x{k}")
    ranks = np.apply_along_axis(sps.rankdata, 1, x)
    col = ranks.sum(axis=0)
    numerator = 12.0 * float(((col - n * (k + 1) / 2.0) ** 2).sum())
    tie_term = 0.0
    for row in x:
        _, t = np.unique(row, return_counts=True)
        tie_term += float((t ** 3 - t).sum())
    denominator = n * k * (k + 1) - tie_term / (k - 1)
    detail = {"method": "chi-squared approximation, tie corrected", "df": k - 1, "n_cases": n}
    if numerator == 0.0 or denominator <= 0:
        return TestResult("chi_squared", 0.0, 1.0, n, detail)
    stat = numerator / denominator
    return TestResult("chi_squared", stat, float(sps.chi2.sf(stat, k - 1)), n, detail)


def bh_adjust(p_values: Sequence[float]) -> list[float]:
    """Benjamini-Hochberg step-up adjustment, returned in input order."""
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        return []
    if np.isnan(p).any() or (p < 0).any() or (p > 1).any():
        raise OutOfRange("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    adjusted = np.minimum(1.0, np.minimum.accumulate(scaled[::-1])[::-1])
    out = np.empty(m)
    out[order] = adjusted
    return out.tolist()


# ---------------------------------------------------------------------------
# bootstrap


@dataclass(frozen=True)
class BootstrapCI:
    estimate: float
    ci_low: float
    ci_high: float
    n_reps: int
    n_clusters: int
    n_dropped: int = 0

    def __iter__(self):
        return iter((self.estimate, self.ci_low, self.ci_high))


def _default_cluster_key(item: Any) -> Hashable:
    if isinstance(item, Mapping):
        return item["cluster_id"]
    if hasattr(item, "cluster_id"):
        return item.cluster_id
    return item[0]


def _clusters(items: Sequence[Any], cluster_key: Callable[[Any], Hashable]) -> list[list[Any]]:
    groups: dict[Hashable, list[Any]] = {}
    for it in items:
        groups.setdefault(cluster_key(it), []).append(it)
    if not groups:
        raise EmptyInput("no clusters to resample")
    return list(groups.values())


def bootstrap_indices(n_clusters: int, n_reps: int, seed: int) -> np.ndarray:
    """The ``n_reps x n_clusters`` resampling plan for a seed."""
    return np.random.default_rng(seed).integers(0, n_clusters, size=(n_reps, n_clusters))


def _interval(values: np.ndarray, level: float) -> tuple[float, float]:
    alpha = 1.0 - level
    lo, hi = np.quantile(values, [alpha / 2, 1 - alpha / 2])
    return float(lo), float(hi)


def cluster_bootstrap_ci(
    items: Sequence[Any],
    metric: "Callable[[list[Any]], float] | str" = "mean",
    n_reps: int = 10_000,
    seed: int = 0,
    level: float = 0.95,
    cluster_key: Callable[[Any], Hashable] = _default_cluster_key,
    value_key: Callable[[Any], float] | None = None,
    on_nonfinite: str = "raise",
) -> BootstrapCI:
    """Percentile interval from resampling whole clusters with replacement.

    ``metric="mean"`` takes a vectorized path over per-cluster sums; items
    are then numbers via ``value_key`` (default: the item's last element or
    its ``value``). Otherwise ``metric`` receives the flat list of items in
    each resample.
    """
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    if on_nonfinite not in ("raise", "drop"):
        raise ValueError("on_nonfinite must be 'raise' or 'drop'")
    groups = _clusters(items, cluster_key)
    idx = bootstrap_indices(len(groups), n_reps, seed)

    if metric == "mean":
        vk = value_key or _default_value
        sums = np.array([sum(float(vk(i)) for i in g) for g in groups])
        counts = np.array([len(g) for g in groups], dtype=float)
        estimate = float(sums.sum() / counts.sum())
        values = sums[idx].sum(axis=1) / counts[idx].sum(axis=1)
    else:
        estimate = float(metric([i for g in groups for i in g]))
        values = np.empty(n_reps)
        for r in range(n_reps):
            sample = [i for c in idx[r] for i in groups[c]]
            try:
                values[r] = metric(sample)
            except Exception as exc:
                raise MetricFailure(r, exc) from exc

    finite = np.isfinite(values)
    n_dropped = int((~finite).sum())
    if n_dropped:
        if on_nonfinite == "raise":
            raise MetricFailure(int(np.argmin(finite)), ValueError("metric returned a non-finite value"))
        values = values[finite]
        if values.size == 0:
            raise MetricFailure(0, ValueError("every replicate was non-finite"))
    lo, hi = _interval(values, level)
    return BootstrapCI(estimate, lo, hi, n_reps, len(groups), n_dropped)


def _default_value(item: Any) -> float:
    if isinstance(item, Mapping):
        return item["value"]
    if hasattr(item, "value"):
        return item.value
    return item[-1]


def _pair_tables(pairs_by_cluster: Sequence[Sequence[tuple[Hashable, Hashable]]],
                 alphabet: Sequence[Hashable]) -> np.ndarray:
    index = {c: j for j, c in enumerate(alphabet)}
    k = len(alphabet)
    tables = np.zeros((len(pairs_by_cluster), k, k))
    for c, pairs in enumerate(pairs_by_cluster):
        for a, b in pairs:
            tables[c, index[a], index[b]] += 1
    return tables


def _coefficient_from_tables(tables: np.ndarray, coefficient: str, k_declared: int) -> np.ndarray:
    """Vectorized exact/kappa/AC1 over a stack of K x K contingency tables; NaN where degenerate."""
    n = tables.sum(axis=(1, 2))
    diag = np.trace(tables, axis1=1, axis2=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        p_o = diag / n
        if coefficient == "exact":
            return p_o
        row = tables.sum(axis=2) / n[:, None]
        col = tables.sum(axis=1) / n[:, None]
        if coefficient == "cohen_kappa":
            p_e = (row * col).sum(axis=1)
        elif coefficient == "gwet_ac1":
            pi = (row + col) / 2
            p_e = (pi * (1 - pi)).sum(axis=1) / (k_declared - 1)
            p_e = np.where((pi > 0).sum(axis=1) < 2, 1.0, p_e)
        else:
            raise ValueError(f"unknown pair coefficient {coefficient!r}")
        out = (p_o - p_e) / (1 - p_e)
    return np.where(np.isclose(p_e, 1.0, rtol=0, atol=1e-12), np.nan, out)


def pair_agreement_ci(
    pairs_by_cluster: Sequence[Sequence[tuple[Hashable, Hashable]]],
    coefficient: str,
    alphabet: Sequence[Hashable],
    n_reps: int = 10_000,
    seed: int = 0,
    level: float = 0.95,
) -> AgreementResult:
    """Point estimate plus cluster-bootstrap CI for a two-rater coefficient.

    Replicates where the coefficient is degenerate are dropped from the
    interval; a degenerate point estimate gets no interval.
    """
    all_pairs = [p for ps in pairs_by_cluster for p in ps]
    if coefficient == "exact":
        point = AgreementResult("exact", exact_agreement(all_pairs), n=len(all_pairs))
    elif coefficient == "cohen_kappa":
        point = cohen_kappa(all_pairs)
    elif coefficient == "gwet_ac1":
        point = gwet_ac1(all_pairs, alphabet)
    else:
        raise ValueError(f"unknown pair coefficient {coefficient!r}")
    if point.degenerate_flag:
        return point
    tables = _pair_tables(pairs_by_cluster, alphabet)
    idx = bootstrap_indices(len(pairs_by_cluster), n_reps, seed)
    values = _coefficient_from_tables(tables[idx].sum(axis=1), coefficient, len(alphabet))
    values = values[np.isfinite(values)]
    if values.size == 0:
        return point
    return point.with_ci(*_interval(values, level))


def fleiss_kappa_ci(
    counts_by_cluster: Sequence["np.ndarray | Sequence[Sequence[int]]"],
    n_reps: int = 10_000,
    seed: int = 0,
    level: float = 0.95,
) -> AgreementResult:
    """Fleiss' kappa with a cluster-bootstrap CI from per-cluster count matrices."""
    mats = [np.asarray(c, dtype=np.int64) for c in counts_by_cluster]
    point = fleiss_kappa(np.vstack(mats))
    if point.degenerate_flag:
        return point
    m = int(mats[0].sum(axis=1)[0])
    # per-cluster additive pieces: sum of P_i, item count, category totals
    sum_p = np.array([(((c * c).sum(axis=1) - m) / (m * (m - 1))).sum() for c in mats])
    n_items = np.array([c.shape[0] for c in mats], dtype=float)
    col = np.array([c.sum(axis=0) for c in mats], dtype=float)
    idx = bootstrap_indices(len(mats), n_reps, seed)
    n_rep = n_items[idx].sum(axis=1)
    p_bar = sum_p[idx].sum(axis=1) / n_rep
    p_j = col[idx].sum(axis=1) / (n_rep * m)[:, None]
    p_e = (p_j * p_j).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(np.isclose(p_e, 1.0, rtol=0, atol=1e-12), np.nan, (p_bar - p_e) / (1 - p_e))
    values = values[np.isfinite(values)]
    if values.size == 0:
        return point
    return point.with_ci(*_interval(values, level))


# ---------------------------------------------------------------------------
# correlation


def correlation(x: Sequence[float], y: Sequence[float], method: str = "pearson") -> float:
    xa, ya = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise ValueError("x and y must be 1-D and the same length")
    if xa.size < 2:
        raise EmptyInput("correlation needs at least 2 points")
    if method == "spearman":
        xa, ya = sps.rankdata(xa), sps.rankdata(ya)
    elif method != "pearson":
        raise ValueError("method must be 'pearson' or 'spearman'")
    xc, yc = xa - xa.mean(), ya - ya.mean()
    sxx, syy = float((xc * xc).sum()), float((yc * yc).sum())
    if sxx == 0 or syy == 0:
        raise DegenerateVariance("one of the inputs has zero variance")
    r = float((xc * yc).sum() / math.sqrt(sxx * syy))
    return max(-1.0, min(1.0, r))
