import math

import numpy as np
import pytest
from scipy import stats

from polarpnq.geometry import TWO_PI, PolarPoint, distances
from polarpnq.pnq import (
    BoundViolation,
    ProbabilityFn,
    ProbabilityRangeError,
    maybe_get_kth_element,
    query_aggregated,
    query_baseline,
    query_batch,
    skip_delta,
)
from polarpnq.quadtree import RadialDensity, build
from polarpnq.reference import FrequencyTable, frequency_compare, marginal_check

HYP = RadialDensity.hyperbolic(1.0, 7.78)
F_FIG = ProbabilityFn.logistic(7.78, 1.0)


def hyperbolic_tree(n=300, capacity=8, seed=0):
    phi, r = HYP.sample(n, np.random.default_rng(seed))
    return build((phi, r), "hyperbolic", HYP, capacity)


def inclusion_matrix(batch, n):
    """Boolean (queries x points) matrix of returned neighbors."""
    m = len(batch)
    rows = np.repeat(np.arange(m), np.diff(np.concatenate([[0], batch.ends])))
    out = np.zeros((m, n), dtype=bool)
    out[rows, batch.ids] = True
    return out


# -- probability functions ---------------------------------------------------


def test_probability_function_shapes():
    assert ProbabilityFn.constant(0.3)(123.0) == 0.3
    assert ProbabilityFn.step(2.0)(2.0) == 1.0 and ProbabilityFn.step(2.0)(2.0001) == 0.0
    assert ProbabilityFn.logistic(5.0, 1.0)(5.0) == 0.5
    assert ProbabilityFn.logistic(5.0, 1.0)(1e6) == 0.0
    assert ProbabilityFn.inverse_distance(2.0)(4.0) == 0.5
    assert ProbabilityFn.inverse_distance(2.0)(0.0) == 1.0
    assert ProbabilityFn.inverse_distance(0.0)(0.0) == 0.0
    d = np.linspace(0, 50, 101)
    assert np.allclose(F_FIG(d), 1.0 / (np.exp(d - 7.78) + 1.0), rtol=1e-14)


def test_probability_outside_unit_interval_is_an_error():
    with pytest.raises(ProbabilityRangeError):
        ProbabilityFn.constant(1.2)
    with pytest.raises(ValueError):
        ProbabilityFn.logistic(1.0, 0.0)
    with pytest.raises(ValueError):
        ProbabilityFn.constant(0.5).scaled(2.0)


# -- skipping ----------------------------------------------------------------


def test_skip_limits_and_domain():
    rng = np.random.default_rng(0)
    assert all(skip_delta(1.0, rng) == 0 for _ in range(100))
    assert skip_delta(0.0, rng) is None
    for bad in (-0.1, 1.5, float("nan")):
        with pytest.raises(ValueError):
            skip_delta(bad, rng)


def test_skip_is_geometric():
    rng = np.random.default_rng(1)
    draws = np.array([skip_delta(0.3, rng) for _ in range(100_000)])
    top = 20
    observed = np.bincount(np.minimum(draws, top), minlength=top + 1)
    pmf = 0.7 ** np.arange(top) * 0.3
    expected = np.append(pmf, 0.7**top) * draws.size
    assert stats.chisquare(observed, expected).pvalue > 1e-3


# -- trivial functions -------------------------------------------------------


@pytest.mark.parametrize("query", [query_baseline, query_aggregated])
def test_zero_and_one(query):
    t = hyperbolic_tree()
    rng = np.random.default_rng(0)
    q = PolarPoint(0.5, 2.0)
    assert query(t, q, ProbabilityFn.constant(0.0), rng).neighbors.size == 0
    everything = query(t, q, ProbabilityFn.constant(1.0), rng)
    assert sorted(everything.neighbors.tolist()) == list(range(t.n))


def test_aggregated_zero_function_touches_only_root():
    t = hyperbolic_tree()
    out = query_aggregated(t, PolarPoint(0.5, 2.0), ProbabilityFn.constant(0.0), np.random.default_rng(0))
    assert out.stats.cells_examined == 1 and out.stats.virtual_leaves == 1


def test_baseline_examines_every_node():
    t = hyperbolic_tree(1000)
    rng = np.random.default_rng(3)
    for _ in range(20):
        q = PolarPoint(rng.random() * TWO_PI, rng.random() * 7.78)
        out = query_baseline(t, q, F_FIG, rng)
        assert out.stats.cells_examined == t.node_count
        assert out.stats.virtual_leaves == 0


def test_outcome_invariants_and_determinism():
    t = hyperbolic_tree(1000)
    q = PolarPoint(4.0, 3.0)
    for query in (query_baseline, query_aggregated):
        a = query(t, q, F_FIG, np.random.default_rng(42))
        b = query(t, q, F_FIG, np.random.default_rng(42))
        assert np.array_equal(a.neighbors, b.neighbors) and a.stats == b.stats
        assert a.stats.candidates_examined >= a.neighbors.size
        assert a.stats.cells_examined >= 1
        assert len(set(a.neighbors.tolist())) == a.neighbors.size


def test_step_function_is_exact_range_query():
    t = hyperbolic_tree(500)
    q = PolarPoint(1.0, 2.5)
    f = ProbabilityFn.step(6.0)
    truth = np.flatnonzero(distances("hyperbolic", q, t.phi, t.r) <= 6.0)
    for query in (query_baseline, query_aggregated):
        got = query(t, q, f, np.random.default_rng(0)).neighbors
        assert sorted(got.tolist()) == truth.tolist()


# -- distribution ------------------------------------------------------------


@pytest.mark.parametrize("method", ["baseline", "aggregated"])
def test_marginals_pairs_and_size(method):
    t = hyperbolic_tree(150, capacity=4, seed=8)
    q = PolarPoint(2.0, 2.5)
    trials = 20_000
    p = F_FIG(distances("hyperbolic", q, t.phi, t.r))
    batch = query_batch(t, np.full(trials, q.phi), np.full(trials, q.r), F_FIG, seed=5, method=method)
    hits = inclusion_matrix(batch, t.n)

    table = FrequencyTable(np.full(t.n, trials), hits.sum(axis=0))
    assert marginal_check(table, p).ok

    sizes = hits.sum(axis=1)
    sd = math.sqrt((p * (1 - p)).sum() / trials)
    assert abs(sizes.mean() - p.sum()) <= 4 * sd

    rng = np.random.default_rng(0)
    informative = np.flatnonzero((p > 0.05) & (p < 0.95))
    for _ in range(200):
        u, v = rng.choice(informative, 2, replace=False)
        joint = p[u] * p[v]
        observed = (hits[:, u] & hits[:, v]).mean()
        assert abs(observed - joint) <= 4 * math.sqrt(joint * (1 - joint) / trials)


def test_aggregated_matches_baseline_on_many_queries():
    n = 100_000
    d = RadialDensity.euclidean_uniform(math.sqrt(n / math.pi))
    phi, r = d.sample(n, np.random.default_rng(0))
    t = build((phi, r), "euclidean", d, 32)
    qphi, qr = d.sample(5000, np.random.default_rng(1))
    f = ProbabilityFn.inverse_distance(math.exp(7) / n)
    base = query_batch(t, qphi, qr, f, seed=2, method="baseline")
    aggr = query_batch(t, qphi, qr, f, seed=3, method="aggregated")
    tables = [FrequencyTable(np.full(n, 5000), np.bincount(b.ids, minlength=n)) for b in (base, aggr)]
    assert frequency_compare(*tables).ok
    assert aggr.stats.cells_examined < base.stats.cells_examined / 10

    # pooled view with real power: distribution of query-to-neighbor distances
    def neighbor_distances(b):
        owner = np.repeat(np.arange(5000), np.diff(np.concatenate([[0], b.ends])))
        dx = r[b.ids] * np.cos(phi[b.ids]) - qr[owner] * np.cos(qphi[owner])
        dy = r[b.ids] * np.sin(phi[b.ids]) - qr[owner] * np.sin(qphi[owner])
        return np.hypot(dx, dy)

    edges = np.quantile(neighbor_distances(base), np.linspace(0, 1, 21))
    edges[-1] = np.inf
    counts = [np.histogram(neighbor_distances(b), edges)[0] for b in (base, aggr)]
    assert stats.chi2_contingency(np.array(counts)).pvalue > 1e-3
    totals = np.array([b.ids.size for b in (base, aggr)])
    assert abs(totals[0] - totals[1]) <= 4 * math.sqrt(totals.sum())


def test_batch_independent_of_threads_and_filters_ids():
    t = hyperbolic_tree(2000, capacity=16)
    qphi, qr = t.phi[:700], t.r[:700]
    a = query_batch(t, qphi, qr, F_FIG, seed=9, threads=1, min_ids=np.arange(700))
    b = query_batch(t, qphi, qr, F_FIG, seed=9, threads=4, min_ids=np.arange(700))
    assert np.array_equal(a.ids, b.ids) and np.array_equal(a.ends, b.ends) and a.stats == b.stats
    for k in range(700):
        assert np.all(a.neighbors(k) > k)


def test_unknown_method_rejected():
    t = hyperbolic_tree(10)
    with pytest.raises(ValueError):
        query_batch(t, [0.0], [1.0], F_FIG, 0, method="magic")


# -- k-th element ------------------------------------------------------------


def flat_enumeration(node):
    if node.is_leaf:
        return list(node.point_ids)
    return [pid for c in node.children for pid in flat_enumeration(c)]


def test_kth_element_follows_flat_enumeration():
    rng = np.random.default_rng(4)
    always = ProbabilityFn.constant(1.0)
    for seed in range(5):
        t = hyperbolic_tree(int(rng.integers(50, 400)), capacity=int(rng.integers(1, 10)), seed=seed)
        for node in list(t.nodes())[:: max(1, t.node_count // 15)]:
            flat = flat_enumeration(node)
            got = [maybe_get_kth_element(node, PolarPoint(0, 0), always, k, 1.0, rng) for k in range(len(flat))]
            assert got == flat


def test_kth_element_in_small_leaf_accepts_at_bound():
    t = hyperbolic_tree(5, capacity=8)
    leaf = t.root
    assert leaf.is_leaf and leaf.subtree_size == 5
    q = PolarPoint(0.3, 1.0)
    p2 = leaf.point_ids[2]
    bound = F_FIG(distances("hyperbolic", q, [t.phi[p2]], [t.r[p2]])[0])
    rng = np.random.default_rng(0)
    assert all(maybe_get_kth_element(leaf, q, F_FIG, 2, bound, rng) == p2 for _ in range(200))
    with pytest.raises(IndexError):
        maybe_get_kth_element(leaf, q, F_FIG, 5, bound, rng)
    with pytest.raises(BoundViolation):
        maybe_get_kth_element(leaf, q, F_FIG, 2, 0.5 * bound, rng)


def test_kth_element_acceptance_rate():
    t = hyperbolic_tree(50)
    q = PolarPoint(0.0, 2.0)
    pid = flat_enumeration(t.root)[7]
    p = F_FIG(distances("hyperbolic", q, [t.phi[pid]], [t.r[pid]])[0])
    bound = min(1.0, 2 * p)
    rng = np.random.default_rng(1)
    hits = sum(maybe_get_kth_element(t.root, q, F_FIG, 7, bound, rng) is not None for _ in range(20_000))
    rate = p / bound
    assert abs(hits / 20_000 - rate) <= 4 * math.sqrt(rate * (1 - rate) / 20_000)
