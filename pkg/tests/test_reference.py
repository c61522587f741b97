import math

import numpy as np
import pytest
from scipy import stats

from polarpnq.geometry import PolarPoint, distances
from polarpnq.pnq import ProbabilityFn
from polarpnq.reference import (
    FrequencyTable,
    PointSet,
    binomial_z,
    bonferroni_z,
    frequency_compare,
    low_power,
    marginal_check,
    pdp_batch,
    pdp_query,
    sample_frequencies,
    two_proportion_z,
)


def random_points(n, rmax, seed=0):
    rng = np.random.default_rng(seed)
    return rng.random(n) * 2 * math.pi, rng.random(n) * rmax


@pytest.mark.parametrize("g", ["euclidean", "hyperbolic"])
def test_constant_functions(g):
    pts = random_points(100, 5.0)
    q = PolarPoint(1.0, 1.0)
    rng = np.random.default_rng(0)
    assert pdp_query(pts, g, q, ProbabilityFn.constant(0.0), rng).size == 0
    assert pdp_query(pts, g, q, ProbabilityFn.constant(1.0), rng).tolist() == list(range(100))
    assert pdp_query(pts, g, q, ProbabilityFn.constant(1.0), rng, start=60).tolist() == list(range(60, 100))


@pytest.mark.parametrize("g", ["euclidean", "hyperbolic"])
def test_step_function_returns_the_ball(g):
    pts = random_points(400, 6.0, seed=1)
    q = PolarPoint(2.0, 3.0)
    truth = np.flatnonzero(distances(g, q, *pts) <= 2.5)
    got = pdp_query(pts, g, q, ProbabilityFn.step(2.5), np.random.default_rng(0))
    assert got.tolist() == truth.tolist()


def test_point_set_accepts_point_lists():
    pts = [PolarPoint(0.1 * i, 0.5 * i) for i in range(10)]
    a = PointSet.of(pts, "hyperbolic")
    b = PointSet.of((a.phi, a.r), "hyperbolic")
    assert PointSet.of(a, "hyperbolic") is a
    assert np.array_equal(a.phi, b.phi) and len(b) == 10


def test_marginals_match_probability_function():
    phi, r = random_points(120, 7.0, seed=2)
    q = PolarPoint(0.7, 2.0)
    f = ProbabilityFn.logistic(7.0, 1.0)
    trials = 20_000
    batch = pdp_batch((phi, r), "hyperbolic", np.full(trials, q.phi), np.full(trials, q.r), f, seed=3)
    table = FrequencyTable(np.full(120, trials), np.bincount(batch.ids, minlength=120))
    assert marginal_check(table, f(distances("hyperbolic", q, phi, r))).ok


def test_batch_matches_single_queries_and_thread_count():
    pts = random_points(300, 6.0, seed=4)
    f = ProbabilityFn.logistic(4.0, 0.5)
    qphi, qr = np.tile(pts[0], 2), np.tile(pts[1], 2)
    starts = np.arange(600) % 300 + 1
    a = pdp_batch(pts, "euclidean", qphi, qr, f, seed=5, starts=starts, threads=1)
    b = pdp_batch(pts, "euclidean", qphi, qr, f, seed=5, starts=starts, threads=3)
    assert np.array_equal(a.ids, b.ids) and np.array_equal(a.ends, b.ends)
    for k in range(600):
        assert np.all(a.neighbors(k) >= starts[k])


# -- frequency statistics ----------------------------------------------------


def test_frequency_table_validation_and_merge():
    with pytest.raises(ValueError):
        FrequencyTable([3, 3], [4, 0])
    with pytest.raises(ValueError):
        FrequencyTable([3, 3], [1])
    t = FrequencyTable.empty(4)
    t.record([0, 2])
    t.record([2])
    merged = t.merge(t)
    assert merged.hits.tolist() == [2, 0, 4, 0] and merged.trials.tolist() == [4] * 4
    assert merged.frequencies.tolist() == [0.5, 0.0, 1.0, 0.0]


def test_bonferroni_threshold():
    assert bonferroni_z(1) == pytest.approx(4.0, abs=1e-9)
    assert bonferroni_z(200) == pytest.approx(5.113, abs=1e-3)
    assert bonferroni_z(10**6) > bonferroni_z(10**3) > 4.0


def test_identical_tables_compare_clean():
    t = FrequencyTable(np.full(50, 1000), np.arange(50) * 20)
    report = frequency_compare(t, t)
    assert report.ok and report.max_z == 0.0


def test_compare_rejects_mismatched_tables():
    a = FrequencyTable(np.full(5, 10), np.zeros(5))
    with pytest.raises(ValueError):
        frequency_compare(a, FrequencyTable(np.full(6, 10), np.zeros(6)))
    with pytest.raises(ValueError):
        frequency_compare(a, FrequencyTable(np.full(5, 11), np.zeros(5)))


def test_compare_flags_injected_bias():
    rng = np.random.default_rng(6)
    p = rng.uniform(0.1, 0.7, 200)
    trials = 10_000
    a = FrequencyTable(np.full(200, trials), rng.binomial(trials, p))
    b = FrequencyTable(np.full(200, trials), rng.binomial(trials, p))
    assert frequency_compare(a, b).ok
    biased = p.copy()
    biased[17] += 0.2
    c = FrequencyTable(np.full(200, trials), rng.binomial(trials, biased))
    report = frequency_compare(a, c)
    assert report.failures == [17]


def test_two_proportion_z_against_textbook():
    a = FrequencyTable([400], [120])
    b = FrequencyTable([400], [100])
    pooled = 220 / 800
    z = (0.3 - 0.25) / math.sqrt(pooled * (1 - pooled) * (2 / 400))
    assert two_proportion_z(a, b)[0] == pytest.approx(z, rel=1e-12)


def test_binomial_z_degenerate_probabilities():
    t = FrequencyTable([10, 10, 10], [0, 10, 3])
    z = binomial_z(t, [0.0, 1.0, 0.0])
    assert z[0] == 0.0 and z[1] == 0.0 and math.isinf(z[2])
    assert marginal_check(t, [0.0, 1.0, 0.0]).failures == [2]


def test_low_power_flags():
    assert low_power(100, [0.01, 0.5, 0.99, 0.06]).tolist() == [True, False, True, False]


def test_sample_frequencies_tabulates():
    rng = np.random.default_rng(0)
    t = sample_frequencies(lambda: np.flatnonzero(rng.random(10) < 0.3), 10, 5000)
    assert t.trials.tolist() == [5000] * 10
    assert stats.binomtest(int(t.hits.sum()), 50_000, 0.3).pvalue > 1e-4
