import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy import stats as sps

from tumorboard.errors import (
    AllZeroDifferences,
    DegenerateVariance,
    EmptyInput,
    IncompleteMatrix,
    MetricFailure,
    OutOfRange,
    RaggedRaterCounts,
)
from tumorboard.stats import (
    bh_adjust,
    bootstrap_indices,
    cluster_bootstrap_ci,
    cohen_kappa,
    correlation,
    exact_agreement,
    fleiss_counts,
    fleiss_kappa,
    fleiss_kappa_ci,
    friedman_test,
    gwet_ac1,
    pair_agreement_ci,
    wilcoxon_signed_rank,
)


def brute_wilcoxon(pairs):
    """Enumerate every sign assignment of the average ranks; exact fractions throughout."""
    d = [Fraction(a).limit_denominator(10**9) - Fraction(b).limit_denominator(10**9) for a, b in pairs]
    d = [x for x in d if x != 0]
    mags = sorted(abs(x) for x in d)
    rank = {}
    i = 0
    while i < len(mags):
        j = i
        while j < len(mags) and mags[j] == mags[i]:
            j += 1
        rank[mags[i]] = Fraction(i + 1 + j, 2)
        i = j
    ranks = [rank[abs(x)] for x in d]
    v = sum(r for r, x in zip(ranks, d) if x > 0)
    total = 2 ** len(d)
    le = ge = 0
    for signs in itertools.product((0, 1), repeat=len(d)):
        s = sum(r for r, on in zip(ranks, signs) if on)
        le += s <= v
        ge += s >= v
    return float(v), min(1.0, 2 * min(le, ge) / total)


def brute_kappa(pairs):
    cats = sorted({x for p in pairs for x in p})
    n = len(pairs)
    po = sum(a == b for a, b in pairs) / n
    pe = sum((sum(a == c for a, _ in pairs) / n) * (sum(b == c for _, b in pairs) / n) for c in cats)
    return (po - pe) / (1 - pe)


def brute_ac1(pairs, k):
    n = len(pairs)
    po = sum(a == b for a, b in pairs) / n
    cats = {x for p in pairs for x in p}
    pe = sum(((sum(a == c for a, _ in pairs) + sum(b == c for _, b in pairs)) / (2 * n))
             * (1 - (sum(a == c for a, _ in pairs) + sum(b == c for _, b in pairs)) / (2 * n)) for c in cats) / (k - 1)
    return (po - pe) / (1 - pe)


def brute_fleiss(rows):
    n, m = len(rows), sum(rows[0])
    k = len(rows[0])
    p_i = [(sum(c * c for c in r) - m) / (m * (m - 1)) for r in rows]
    p_j = [sum(r[j] for r in rows) / (n * m) for j in range(k)]
    pbar, pe = sum(p_i) / n, sum(p * p for p in p_j)
    return (pbar - pe) / (1 - pe)


LABELS = ("Yes", "Partial", "No")
pair_lists = st.lists(st.tuples(st.sampled_from(LABELS), st.sampled_from(LABELS)), min_size=2, max_size=40)


class TestWilcoxon:
    def test_worked_fixture(self):
        r = wilcoxon_signed_rank([(1, 0), (2, 0), (3, 0)])
        assert r.statistic == 6 and r.p_value == pytest.approx(0.25, abs=1e-12)
        assert r.n_effective == 3 and r.method_detail["method"] == "exact"

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=10))
    def test_matches_sign_enumeration(self, pairs):
        assume(any(a != b for a, b in pairs))
        v, p = brute_wilcoxon(pairs)
        r = wilcoxon_signed_rank(pairs)
        assert r.statistic == v
        assert r.p_value == pytest.approx(p, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-10, 10, allow_nan=False).filter(lambda x: abs(x) > 1e-3), min_size=3, max_size=15,
                    unique_by=abs))
    def test_matches_scipy_without_ties(self, diffs):
        pairs = [(x, 0.0) for x in diffs]
        r = wilcoxon_signed_rank(pairs)
        ref = sps.wilcoxon(diffs, method="exact")
        assert r.p_value == pytest.approx(ref.pvalue, abs=1e-12)
        n = len(diffs)
        assert min(r.statistic, n * (n + 1) / 2 - r.statistic) == ref.statistic

    def test_zeros_dropped_and_ties_reported(self):
        r = wilcoxon_signed_rank([(1, 1), (2, 1), (3, 2), (0, 2)])
        assert r.n_effective == 3
        assert r.method_detail["zeros_dropped"] == 1 and r.method_detail["tie_groups"] == 1

    def test_all_zero(self):
        with pytest.raises(AllZeroDifferences):
            wilcoxon_signed_rank([(1, 1), (2, 2)])

    def test_large_sample_uses_normal_approximation(self):
        rng = np.random.default_rng(1)
        d = rng.normal(0.3, 1, 60)
        r = wilcoxon_signed_rank([(x, 0) for x in d])
        assert r.method_detail["method"].startswith("normal")
        ref = sps.wilcoxon(d, method="approx", correction=True)
        assert r.p_value == pytest.approx(ref.pvalue, rel=1e-9)

    @given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=1, max_size=12))
    def test_swapping_sides_keeps_p(self, pairs):
        assume(any(a != b for a, b in pairs))
        a = wilcoxon_signed_rank(pairs)
        b = wilcoxon_signed_rank([(y, x) for x, y in pairs])
        assert a.p_value == pytest.approx(b.p_value, abs=1e-12)
        assert 0 <= a.p_value <= 1


class TestPairAgreement:
    FIXTURE = [("Yes", "Yes")] * 5 + [("Yes", "No"), ("No", "Yes")] + [("No", "No")] * 2 + [("Partial", "No")]

    def test_hand_values(self):
        # 10 pairs, 7 agreements; margins A: Y6 N3 P1, B: Y6 N4
        assert cohen_kappa(self.FIXTURE).estimate == pytest.approx((0.7 - 0.48) / 0.52, abs=1e-12)
        pi = {"Yes": 12 / 20, "No": 7 / 20, "Partial": 1 / 20}
        pe = sum(p * (1 - p) for p in pi.values()) / 2
        assert gwet_ac1(self.FIXTURE).estimate == pytest.approx((0.7 - pe) / (1 - pe), abs=1e-12)

    @given(pair_lists)
    def test_kappa_oracle(self, pairs):
        r = cohen_kappa(pairs)
        a, b = zip(*pairs)
        if len(set(a)) == 1 and set(a) == set(b):
            assert r.degenerate_flag and r.estimate is None
        else:
            assert r.estimate == pytest.approx(brute_kappa(pairs), abs=1e-12)

    @given(pair_lists)
    def test_ac1_oracle(self, pairs):
        r = gwet_ac1(pairs, LABELS)
        if len({x for p in pairs for x in p}) < 2:
            assert r.degenerate_flag
        else:
            assert r.estimate == pytest.approx(brute_ac1(pairs, 3), abs=1e-12)

    @given(pair_lists, st.permutations(LABELS))
    def test_label_permutation_invariance(self, pairs, perm):
        mapping = dict(zip(LABELS, perm))
        renamed = [(mapping[a], mapping[b]) for a, b in pairs]
        for f in (cohen_kappa, lambda p: gwet_ac1(p, LABELS)):
            x, y = f(pairs), f(renamed)
            assert x.degenerate_flag == y.degenerate_flag
            if not x.degenerate_flag:
                assert x.estimate == pytest.approx(y.estimate, abs=1e-12)

    def test_perfect_agreement(self):
        pairs = [("Yes", "Yes"), ("No", "No"), ("Partial", "Partial")]
        assert cohen_kappa(pairs).estimate == 1.0
        assert gwet_ac1(pairs).estimate == 1.0
        assert exact_agreement(pairs) == 1.0

    def test_single_category_degenerate(self):
        pairs = [("Yes", "Yes")] * 4
        assert cohen_kappa(pairs).degenerate_flag
        assert gwet_ac1(pairs).degenerate_flag and gwet_ac1(pairs, LABELS).degenerate_flag
        assert exact_agreement(pairs) == 1.0

    def test_empty_and_unknown(self):
        with pytest.raises(EmptyInput):
            cohen_kappa([])
        with pytest.raises(ValueError):
            gwet_ac1([("Yes", "Maybe")], LABELS)

    def test_ci_brackets_estimate(self):
        rng = np.random.default_rng(3)
        clusters = [[(LABELS[rng.integers(3)], LABELS[rng.integers(3)]) for _ in range(8)] for _ in range(15)]
        for coef in ("exact", "cohen_kappa", "gwet_ac1"):
            r = pair_agreement_ci(clusters, coef, LABELS, n_reps=500, seed=1)
            assert r.ci_low <= r.estimate <= r.ci_high
            assert r == pair_agreement_ci(clusters, coef, LABELS, n_reps=500, seed=1)

    def test_ci_matches_per_replicate_recomputation(self):
        rng = np.random.default_rng(5)
        clusters = [[(LABELS[rng.integers(3)], LABELS[rng.integers(3)]) for _ in range(4)] for _ in range(6)]
        idx = bootstrap_indices(6, 200, 9)
        reps = [cohen_kappa([p for c in row for p in clusters[c]]) for row in idx]
        vals = np.array([r.estimate for r in reps if not r.degenerate_flag])
        lo, hi = np.quantile(vals, [0.025, 0.975])
        r = pair_agreement_ci(clusters, "cohen_kappa", LABELS, n_reps=200, seed=9)
        assert (r.ci_low, r.ci_high) == pytest.approx((lo, hi), abs=1e-12)


class TestFleiss:
    # ten subjects, fourteen raters, five categories
    CLASSIC = [[0, 0, 0, 0, 14], [0, 2, 6, 4, 2], [0, 0, 3, 5, 6], [0, 3, 9, 2, 0], [2, 2, 8, 1, 1],
               [7, 7, 0, 0, 0], [3, 2, 6, 3, 0], [2, 5, 3, 2, 2], [6, 5, 2, 1, 0], [0, 2, 2, 3, 7]]

    def test_classic_table(self):
        assert fleiss_kappa(self.CLASSIC).estimate == pytest.approx(0.20993, abs=1e-5)

    @given(st.lists(st.lists(st.sampled_from(LABELS), min_size=3, max_size=3), min_size=1, max_size=20))
    def test_oracle(self, rows):
        counts = fleiss_counts(rows, LABELS)
        r = fleiss_kappa(counts)
        if np.count_nonzero(counts.sum(axis=0)) < 2:
            assert r.degenerate_flag
        else:
            assert r.estimate == pytest.approx(brute_fleiss(counts.tolist()), abs=1e-12)

    def test_ragged(self):
        with pytest.raises(RaggedRaterCounts):
            fleiss_kappa([[2, 1, 0], [1, 1, 0]])

    def test_one_category(self):
        assert fleiss_kappa([[3, 0, 0], [3, 0, 0]]).degenerate_flag

    def test_ci(self):
        rng = np.random.default_rng(2)
        clusters = [fleiss_counts([[LABELS[rng.integers(3)] for _ in range(3)] for _ in range(5)], LABELS)
                    for _ in range(12)]
        r = fleiss_kappa_ci(clusters, n_reps=500, seed=4)
        assert r.ci_low <= r.estimate <= r.ci_high


class TestBH:
    def test_hand_values(self):
        assert bh_adjust([0.01, 0.02, 0.03, 0.04]) == pytest.approx([0.04] * 4, abs=1e-15)
        assert bh_adjust([0.04, 0.01, 0.5]) == pytest.approx([0.06, 0.03, 0.5])

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
    def test_matches_scipy(self, ps):
        assert bh_adjust(ps) == pytest.approx(sps.false_discovery_control(ps).tolist(), abs=1e-12)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
    def test_properties(self, ps):
        adj = bh_adjust(ps)
        assert all(a >= p - 1e-15 and a <= 1 for a, p in zip(adj, ps))
        order = np.argsort(ps, kind="stable")
        assert all(adj[order[i]] <= adj[order[i + 1]] + 1e-15 for i in range(len(ps) - 1))

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            bh_adjust([0.5, 1.2])
        assert bh_adjust([]) == []


class TestFriedman:
    def test_hand_three_by_three(self):
        # each row ranks the columns 1, 2, 3: rank sums 3, 6, 9; chi2 = 12/(3*3*4) * (9+36+81) - 3*3*4 = 6
        r = friedman_test([[1, 2, 3], [4, 5, 6], [7, 8, 9]])
        assert r.statistic == pytest.approx(6.0, abs=1e-12)
        assert r.p_value == pytest.approx(math.exp(-3), abs=1e-12)

    @given(st.lists(st.lists(st.integers(0, 4), min_size=4, max_size=4), min_size=2, max_size=12))
    def test_matches_scipy(self, rows):
        x = np.array(rows, dtype=float)
        assume(not all(len(set(r)) == 1 for r in rows))
        ref = sps.friedmanchisquare(*x.T)
        r = friedman_test(rows)
        if np.isnan(ref.statistic):
            return
        assert r.statistic == pytest.approx(ref.statistic, abs=1e-9)
        assert r.p_value == pytest.approx(ref.pvalue, abs=1e-9)

    @given(st.lists(st.lists(st.integers(0, 9), min_size=4, max_size=4), min_size=2, max_size=10), st.permutations(range(4)))
    def test_column_permutation(self, rows, perm):
        a = friedman_test(rows)
        b = friedman_test([[r[j] for j in perm] for r in rows])
        assert a.statistic == pytest.approx(b.statistic, abs=1e-9) and a.p_value == pytest.approx(b.p_value, abs=1e-9)

    def test_identical_columns(self):
        r = friedman_test([[1, 1, 1], [2, 2, 2]])
        assert (r.statistic, r.p_value) == (0.0, 1.0)

    def test_incomplete(self):
        with pytest.raises(IncompleteMatrix):
            friedman_test([[1, 2, 3], [1, 2]])
        with pytest.raises(IncompleteMatrix):
            friedman_test([[1, float("nan")], [1, 2]])
        with pytest.raises(IncompleteMatrix):
            friedman_test([[1, 2, 3]])


class TestBootstrap:
    def items(self, n=30, seed=0):
        rng = np.random.default_rng(seed)
        return [(f"c{i % 10}", float(rng.normal())) for i in range(n)]

    def test_deterministic(self):
        a = cluster_bootstrap_ci(self.items(), n_reps=1000, seed=11)
        b = cluster_bootstrap_ci(self.items(), n_reps=1000, seed=11)
        assert a == b
        assert cluster_bootstrap_ci(self.items(), n_reps=1000, seed=12) != a

    def test_identical_values_zero_width(self):
        ci = cluster_bootstrap_ci([(f"c{i}", 0.7) for i in range(12)], n_reps=500, seed=1)
        assert ci.ci_low == ci.ci_high == pytest.approx(0.7)

    def test_singletons_equal_plain_bootstrap(self):
        values = np.random.default_rng(8).normal(size=25)
        ci = cluster_bootstrap_ci([(i, v) for i, v in enumerate(values)], n_reps=2000, seed=3)
        idx = np.random.default_rng(3).integers(0, 25, size=(2000, 25))
        lo, hi = np.quantile(values[idx].mean(axis=1), [0.025, 0.975])
        assert (ci.ci_low, ci.ci_high) == pytest.approx((lo, hi), abs=1e-12)

    def test_callable_metric_matches_mean_path(self):
        items = self.items()
        fast = cluster_bootstrap_ci(items, n_reps=300, seed=2)
        slow = cluster_bootstrap_ci(items, lambda s: float(np.mean([v for _, v in s])), n_reps=300, seed=2)
        assert tuple(fast) == pytest.approx(tuple(slow), abs=1e-12)

    def test_metric_failure_names_replicate(self):
        def metric(sample):
            if len({c for c, _ in sample}) < 3:
                raise ZeroDivisionError
            return 0.0

        with pytest.raises(MetricFailure) as exc:
            cluster_bootstrap_ci([("a", 1), ("b", 2), ("c", 3)], metric, n_reps=200, seed=0)
        assert isinstance(exc.value.replicate, int)

    def test_nonfinite_drop(self):
        def metric(sample):
            return float("nan") if len({c for c, _ in sample}) == 1 else 1.0

        items = [("a", 1), ("b", 2)]
        with pytest.raises(MetricFailure):
            cluster_bootstrap_ci(items, metric, n_reps=100, seed=0)
        ci = cluster_bootstrap_ci(items, metric, n_reps=100, seed=0, on_nonfinite="drop")
        assert ci.n_dropped > 0 and ci.ci_low == ci.ci_high == 1.0

    def test_indices_shape(self):
        idx = bootstrap_indices(7, 50, 0)
        assert idx.shape == (50, 7) and idx.min() >= 0 and idx.max() < 7

    def test_empty(self):
        with pytest.raises(EmptyInput):
            cluster_bootstrap_ci([], n_reps=10)


class TestCorrelation:
    def test_cubic_monotone(self):
        x = [-2, -1, 0, 1, 2]
        y = [v ** 3 for v in x]
        assert correlation(x, y, "spearman") == pytest.approx(1.0)
        assert correlation(x, y) == pytest.approx(sps.pearsonr(x, y)[0], abs=1e-12)
        assert correlation(x, y) < 1

    def test_constant(self):
        with pytest.raises(DegenerateVariance):
            correlation([1, 2, 3], [4, 4, 4])

    @given(st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=3, max_size=20))
    def test_matches_scipy_spearman(self, pts):
        x, y = zip(*pts)
        assume(len(set(x)) > 1 and len(set(y)) > 1)
        assert correlation(x, y, "spearman") == pytest.approx(sps.spearmanr(x, y)[0], abs=1e-9)
