"""Pairwise distance probing (PDP) and the statistics used to validate queries.

PDP tests every point on its own: one uniform draw per point, in id order.
It shares nothing with the quadtree traversal beyond the probability
function, which makes it the ground truth for the index-backed queries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import stats as sps

from .geometry import EUCLIDEAN, Geometry, PolarPoint
from .pnq import CHUNK_SIZE, BatchResult, ProbabilityFn, _append, _merge, chunk_rngs, prob, run_chunks

SIGMAS = 4.0


@numba.njit(cache=True, nogil=True)
def _pdp_into(gkind, phi, r, ax, ay, qphi, qr, fk, fa, fb, fg, rng, start, out, count):
    qx = qr * math.cos(qphi)
    qy = qr * math.sin(qphi)
    qsh = math.sinh(qr)
    for i in range(start, phi.shape[0]):
        if gkind == EUCLIDEAN:
            dx = ax[i] - qx
            dy = ay[i] - qy
            d = math.sqrt(dx * dx + dy * dy)
        else:
            s = math.sin(0.5 * (phi[i] - qphi))
            h = math.sinh(0.5 * (r[i] - qr))
            d = 2.0 * math.asinh(math.sqrt(h * h + ax[i] * qsh * s * s))
        if rng.random() < prob(fk, fa, fb, fg, d):
            out, count = _append(out, count, i)
    return out, count


@numba.njit(cache=True, nogil=True)
def _pdp_batch(gkind, phi, r, ax, ay, qphis, qrs, starts, fk, fa, fb, fg, rng, ends):
    out = np.empty(max(16, 4 * qphis.shape[0]), dtype=np.int64)
    count = 0
    for k in range(qphis.shape[0]):
        out, count = _pdp_into(gkind, phi, r, ax, ay, qphis[k], qrs[k], fk, fa, fb, fg, rng, starts[k], out, count)
        ends[k] = count
    return out[:count].copy()


class PointSet:
    """Points in id order with the per-point terms PDP needs precomputed."""

    def __init__(self, phi, r, g):
        self.geometry = Geometry.parse(g)
        self.phi = np.ascontiguousarray(phi, dtype=np.float64)
        self.r = np.ascontiguousarray(r, dtype=np.float64)
        if self.geometry == Geometry.EUCLIDEAN:
            self.ax = self.r * np.cos(self.phi)
            self.ay = self.r * np.sin(self.phi)
        else:
            self.ax = np.sinh(self.r)
            self.ay = np.zeros(0)

    @classmethod
    def of(cls, points, g) -> "PointSet":
        if isinstance(points, PointSet):
            return points
        if isinstance(points, tuple) and len(points) == 2 and not isinstance(points[0], PolarPoint):
            return cls(points[0], points[1], g)
        pts = list(points)
        return cls([p.phi for p in pts], [p.r for p in pts], g)

    def __len__(self):
        return self.phi.shape[0]


def pdp_query(points, g, q: PolarPoint, f: ProbabilityFn, rng: np.random.Generator, start: int = 0) -> np.ndarray:
    """Ids ``>= start`` included independently with probability ``f(dist(q, p))``."""
    P = PointSet.of(points, g)
    out, count = _pdp_into(
        int(P.geometry), P.phi, P.r, P.ax, P.ay, q.phi, q.r, *f.params, rng, start,
        np.empty(64, dtype=np.int64), 0,
    )
    return out[:count].copy()


def pdp_batch(points, g, qphi, qr, f: ProbabilityFn, seed, starts=None, threads: int = 1,
              chunk_size: int = CHUNK_SIZE) -> BatchResult:
    """PDP counterpart of :func:`polarpnq.pnq.query_batch` with identical stream chunking."""
    P = PointSet.of(points, g)
    qphi = np.ascontiguousarray(qphi, dtype=np.float64)
    qr = np.ascontiguousarray(qr, dtype=np.float64)
    m = qphi.shape[0]
    starts = np.zeros(m, dtype=np.int64) if starts is None else np.ascontiguousarray(starts, dtype=np.int64)
    gkind = int(P.geometry)

    def work(lo, hi, rng):
        ends = np.empty(hi - lo, dtype=np.int64)
        ids = _pdp_batch(gkind, P.phi, P.r, P.ax, P.ay, qphi[lo:hi], qr[lo:hi], starts[lo:hi], *f.params, rng, ends)
        return ids, ends, np.zeros(3, dtype=np.int64)

    return _merge(run_chunks(work, chunk_rngs(seed, m, chunk_size), threads), m)


# --------------------------------------------------------------------------
# frequency statistics


@dataclass
class FrequencyTable:
    trials: np.ndarray
    hits: np.ndarray

    def __post_init__(self):
        self.trials = np.asarray(self.trials, dtype=np.int64)
        self.hits = np.asarray(self.hits, dtype=np.int64)
        if self.trials.shape != self.hits.shape:
            raise ValueError("trials and hits differ in shape")
        if np.any(self.hits > self.trials) or np.any(self.hits < 0):
            raise ValueError("inclusion counts must lie in [0, trials]")

    @classmethod
    def empty(cls, n: int) -> "FrequencyTable":
        return cls(np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64))

    def record(self, neighbors):
        """Add one trial in which ``neighbors`` were returned."""
        self.trials += 1
        np.add.at(self.hits, np.asarray(neighbors, dtype=np.int64), 1)

    def merge(self, other: "FrequencyTable") -> "FrequencyTable":
        return FrequencyTable(self.trials + other.trials, self.hits + other.hits)

    @property
    def n(self) -> int:
        return self.trials.shape[0]

    @property
    def frequencies(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.trials > 0, self.hits / np.maximum(self.trials, 1), 0.0)


def bonferroni_z(m: int, sigmas: float = SIGMAS) -> float:
    """Two-sided z threshold keeping the family-wise rate of ``sigmas`` sigma over ``m`` tests."""
    alpha = 2.0 * sps.norm.sf(sigmas)
    return float(sps.norm.isf(alpha / (2.0 * max(m, 1))))


@dataclass
class FrequencyReport:
    z: np.ndarray
    threshold: float
    failures: list = field(default_factory=list)

    @property
    def max_z(self) -> float:
        return float(np.abs(self.z).max()) if self.z.size else 0.0

    @property
    def ok(self) -> bool:
        return not self.failures


def two_proportion_z(a: FrequencyTable, b: FrequencyTable) -> np.ndarray:
    pa, pb = a.frequencies, b.frequencies
    pooled = (a.hits + b.hits) / np.maximum(a.trials + b.trials, 1)
    var = pooled * (1.0 - pooled) * (1.0 / np.maximum(a.trials, 1) + 1.0 / np.maximum(b.trials, 1))
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(var > 0, (pa - pb) / np.sqrt(var), 0.0)
    return z


def frequency_compare(a: FrequencyTable, b: FrequencyTable, sigmas: float = SIGMAS) -> FrequencyReport:
    """Per-point two-proportion z test with Bonferroni correction across points."""
    if a.n != b.n:
        raise ValueError(f"point universes differ: {a.n} vs {b.n}")
    if not np.array_equal(a.trials, b.trials):
        raise ValueError("trial counts differ between tables")
    z = two_proportion_z(a, b)
    thr = bonferroni_z(a.n, sigmas)
    fails = [int(i) for i in np.flatnonzero(np.abs(z) > thr)]
    return FrequencyReport(z, thr, fails)


def binomial_z(table: FrequencyTable, expected) -> np.ndarray:
    """Deviation of observed frequencies from ``expected`` in binomial sigmas."""
    p = np.asarray(expected, dtype=np.float64)
    sigma = np.sqrt(p * (1.0 - p) / np.maximum(table.trials, 1))
    diff = table.frequencies - p
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(sigma > 0, diff / np.where(sigma > 0, sigma, 1.0), np.where(diff == 0, 0.0, np.inf))
    return z


def marginal_check(table: FrequencyTable, expected, sigmas: float = SIGMAS, bonferroni: bool = False) -> FrequencyReport:
    """Points whose inclusion frequency leaves ``sigmas`` binomial sigmas of ``expected``."""
    z = binomial_z(table, expected)
    thr = bonferroni_z(table.n, sigmas) if bonferroni else sigmas
    fails = [int(i) for i in np.flatnonzero(np.abs(z) > thr)]
    return FrequencyReport(z, thr, fails)


def low_power(trials: int, expected, min_events: float = 5.0) -> np.ndarray:
    """Flag points whose expected hit or miss count is too small for a normal approximation."""
    p = np.asarray(expected, dtype=np.float64)
    return trials * np.minimum(p, 1.0 - p) < min_events


def sample_frequencies(sampler, n_points: int, trials: int) -> FrequencyTable:
    """Run ``sampler()`` ``trials`` times and tabulate inclusion counts."""
    table = FrequencyTable.empty(n_points)
    hits = table.hits
    for _ in range(trials):
        ids = sampler()
        np.add.at(hits, ids, 1)
    table.trials += trials
    return table


# --------------------------------------------------------------------------
# SIR twin with PDP neighborhoods


def twin_sir(points, g, f: ProbabilityFn, recovery_rate: float, initial_infected: int, steps: int, seed):
    """Straightforward SIR rounds driven by per-query :func:`pdp_query` calls.

    Streams are derived exactly as :func:`polarpnq.spread.simulate` derives
    them, so with the PDP backend both produce the same series.  Rows are
    ``(step, S, I, R, new_infections)``.
    """
    from .pnq import child_seed

    P = PointSet.of(points, g)
    n = len(P)
    susceptible = set(range(n)) - {initial_infected}
    infected = {initial_infected}
    recovered: set[int] = set()
    rows = [(0, len(susceptible), 1, 0, 1)]
    for step in range(steps):
        if not infected:
            break
        order = sorted(infected)
        found: set[int] = set()
        for lo, hi, rng in chunk_rngs(child_seed(seed, step, 0), len(order)):
            for pid in order[lo:hi]:
                q = PolarPoint(P.phi[pid], P.r[pid])
                found.update(int(i) for i in pdp_query(P, g, q, f, rng))
        new = found & susceptible
        coins = np.random.default_rng(child_seed(seed, step, 1)).random(len(order))
        for pid, c in zip(order, coins):
            if c < recovery_rate:
                infected.discard(pid)
                recovered.add(pid)
        susceptible -= new
        infected |= new
        rows.append((step + 1, len(susceptible), len(infected), len(recovered), len(new)))
    return rows
