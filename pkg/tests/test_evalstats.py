import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (brute_auroc, brute_aupr, brute_mann_whitney_p, brute_mann_whitney_u,
                     brute_spearman, midranks_by_counting)
from pertvi.evalstats import (UndefinedMetricError, aupr, auroc, mann_whitney_one_sided,
                              mann_whitney_u, midranks, relative_change, spearman_rho)


def random_scored_labels(rng, max_n=20):
    """Scores with frequent ties and labels containing both classes."""
    n = int(rng.integers(2, max_n + 1))
    y = rng.integers(0, 2, n)
    y[0], y[1] = 0, 1
    rng.shuffle(y)
    levels = int(rng.integers(1, n + 1))
    s = rng.integers(0, levels, n) / max(levels, 1) + (0 if rng.random() < 0.5 else rng.normal(size=n))
    return s, y


class TestMidranks:
    def test_example(self):
        assert midranks([3.0, 1.0, 3.0, 2.0]).tolist() == [3.5, 1.0, 3.5, 2.0]

    def test_matches_counting(self, rng):
        for _ in range(200):
            x = rng.integers(0, 5, int(rng.integers(1, 20))).astype(float)
            assert np.array_equal(midranks(x), midranks_by_counting(x))


class TestAgainstOracles:
    def test_auroc_and_u(self, rng):
        for _ in range(1000):
            s, y = random_scored_labels(rng)
            u = mann_whitney_u(s[y == 0], s[y == 1])
            assert abs(u - brute_mann_whitney_u(s[y == 0], s[y == 1])) < 1e-12
            a = auroc(s, y)
            assert abs(a - brute_auroc(s, y)) < 1e-12
            assert abs(a - u / ((y == 1).sum() * (y == 0).sum())) < 1e-12

    def test_aupr(self, rng):
        for _ in range(1000):
            s, y = random_scored_labels(rng)
            assert abs(aupr(s, y) - brute_aupr(s.tolist(), y.tolist())) < 1e-12

    def test_spearman(self, rng):
        done = 0
        while done < 1000:
            n = int(rng.integers(3, 21))
            a = rng.integers(0, 6, n).astype(float)
            b = a * rng.normal() + rng.integers(0, 4, n)
            if np.ptp(a) == 0 or np.ptp(b) == 0:
                continue
            assert abs(spearman_rho(a, b) - brute_spearman(a, b)) < 1e-12
            done += 1

    def test_exact_p_value(self, rng):
        for _ in range(300):
            na, nb = int(rng.integers(1, 6)), int(rng.integers(1, 6))
            a = rng.integers(0, 4, na).astype(float)
            b = rng.integers(0, 4, nb).astype(float)
            assert abs(mann_whitney_one_sided(a, b) - brute_mann_whitney_p(a, b)) < 1e-12


class TestExamples:
    def test_perfect_separation(self):
        assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert aupr([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_single_positive_last(self):
        n = 7
        assert aupr(np.arange(n, 0, -1.0), [0] * (n - 1) + [1]) == pytest.approx(1 / n, abs=1e-15)

    def test_random_scores_aupr_near_prevalence(self, rng):
        n, prevalence = 500, 0.3
        y = (np.arange(n) < prevalence * n).astype(int)
        vals = np.array([aupr(rng.random(n), y) for _ in range(1000)])
        assert abs(vals.mean() - prevalence) < 0.05
        assert np.mean(np.abs(vals - prevalence) <= 0.05) >= 0.95
        assert aupr(y.astype(float), y) >= prevalence

    def test_all_tied(self):
        s, y = np.zeros(10), np.array([1] * 3 + [0] * 7)
        assert auroc(s, y) == 0.5
        assert aupr(s, y) == pytest.approx(0.3)

    def test_reversed_ranking(self):
        assert auroc([0.9, 0.8, 0.1], [0, 0, 1]) == 0.0

    def test_extreme_p_value(self):
        # 5 vs 5 with complete separation: one of C(10, 5) = 252 arrangements
        assert mann_whitney_one_sided(np.arange(5.0), np.arange(5.0) + 10) == pytest.approx(1 / 252)

    def test_identical_samples_p_near_half(self):
        for n in (5, 12):  # exact branch and normal approximation
            x = np.arange(float(n))
            assert 0.5 <= mann_whitney_one_sided(x, x) < 0.65

    def test_all_tied_samples(self):
        assert mann_whitney_one_sided(np.ones(4), np.ones(4)) == 1.0

    def test_normal_approximation_large_sample(self, rng):
        a, b = rng.normal(size=50), rng.normal(size=50) + 1.0
        assert mann_whitney_one_sided(a, b) < 1e-3
        assert mann_whitney_one_sided(b, a) > 0.99

    def test_spearman_examples(self):
        assert spearman_rho([1, 2, 3], [10, 20, 30]) == 1.0
        assert spearman_rho([1, 2, 3], [3, 2, 1]) == -1.0

    def test_relative_change(self):
        assert relative_change(0.6, 0.5) == pytest.approx(20.0)
        assert relative_change(0.5, 0.5) == 0.0


class TestUndefined:
    def test_single_class(self):
        with pytest.raises(UndefinedMetricError):
            auroc([0.1, 0.2], [1, 1])
        with pytest.raises(UndefinedMetricError):
            aupr([0.1, 0.2], [0, 0])

    def test_non_binary_labels(self):
        with pytest.raises(UndefinedMetricError):
            auroc([0.1, 0.2, 0.3], [0, 1, 2])

    def test_constant_spearman(self):
        with pytest.raises(UndefinedMetricError):
            spearman_rho([1, 1, 1], [1, 2, 3])

    def test_short_spearman(self):
        with pytest.raises(UndefinedMetricError):
            spearman_rho([1, 2], [1, 2])


class TestProperties:
    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=15), st.randoms(use_true_random=False))
    @settings(max_examples=100, deadline=None)
    def test_auroc_complement_under_negation(self, scores, r):
        y = [r.randint(0, 1) for _ in scores]
        y[0], y[1] = 0, 1
        assert auroc(scores, y) + auroc([-s for s in scores], y) == pytest.approx(1.0, abs=1e-12)

    @given(st.lists(st.integers(-30, 30), min_size=2, max_size=15), st.randoms(use_true_random=False))
    @settings(max_examples=100, deadline=None)
    def test_ranking_metrics_monotone_invariant(self, xs, r):
        y = [r.randint(0, 1) for _ in xs]
        y[0], y[1] = 0, 1
        s = np.asarray(xs, dtype=float)
        assert auroc(s, y) == auroc(np.exp(s) + 3.0, y)
        assert aupr(s, y) == aupr(np.exp(s) + 3.0, y)

    @given(st.lists(st.integers(-30, 30), min_size=3, max_size=15))
    @settings(max_examples=100, deadline=None)
    def test_monotone_transform_invariance(self, xs):
        # integer inputs keep exp strictly increasing in floating point
        y = np.arange(len(xs), dtype=float)
        if np.ptp(xs) == 0:
            return
        a = spearman_rho(xs, y)
        b = spearman_rho(np.exp(np.asarray(xs, dtype=float)), y)
        assert a == pytest.approx(b, abs=1e-12)

    @given(st.lists(st.integers(0, 3), min_size=1, max_size=6),
           st.lists(st.integers(0, 3), min_size=1, max_size=6))
    @settings(max_examples=100, deadline=None)
    def test_p_value_in_unit_interval_and_u_symmetry(self, a, b):
        p = mann_whitney_one_sided(a, b)
        assert 0 < p <= 1
        assert mann_whitney_u(a, b) + mann_whitney_u(b, a) == pytest.approx(len(a) * len(b))
        assert math.isfinite(p)
