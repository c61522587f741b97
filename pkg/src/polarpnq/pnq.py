"""Probabilistic neighborhood queries over a :class:`~polarpnq.quadtree.PolarQuadtree`.

A query ``(q, f)`` returns a random subset of the stored points in which
every point ``p`` appears independently with probability ``f(dist(q, p))``.

Two traversals are provided.  :func:`query_baseline` descends to every leaf
and selects candidates inside each leaf by geometric skipping with the
leaf's probability bound.  :func:`query_aggregated` stops descending at any
subtree ``S`` with ``|S| * bound < 1`` and skips over the whole subtree as
one virtual leaf.  Both use the same acceptance step, so they sample the
same distribution; only the work differs.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .geometry import EUCLIDEAN, PolarPoint, cell_bounds, distance
from .quadtree import MAX_DEPTH, PolarQuadtree, QuadtreeNode

F_CONSTANT = 0
F_STEP = 1
F_LOGISTIC = 2
F_INVERSE = 3

# slack on f(dist) / bound before a violation is reported as a bug
BOUND_TOLERANCE = 1e-9
CHUNK_SIZE = 256


class ProbabilityRangeError(ValueError):
    pass


class BoundViolation(RuntimeError):
    """A point's inclusion probability exceeded its cell's upper bound."""


# --------------------------------------------------------------------------
# probability functions


@numba.njit(cache=True, nogil=True)
def prob(kind, a, b, gain, d):
    if kind == F_CONSTANT:
        p = a
    elif kind == F_STEP:
        p = 1.0 if d <= a else 0.0
    elif kind == F_LOGISTIC:
        x = (d - a) / b
        if x >= 0.0:
            e = math.exp(-x)
            p = e / (1.0 + e)
        else:
            p = 1.0 / (1.0 + math.exp(x))
    elif a == 0.0:
        p = 0.0
    else:
        p = 1.0 if d <= a else a / d
    p *= gain
    if not (0.0 <= p <= 1.0):
        raise ProbabilityRangeError("probability function left [0, 1]")
    return p


@numba.njit(cache=True, nogil=True)
def _prob_array(kind, a, b, gain, d, out):
    for i in range(d.shape[0]):
        out[i] = prob(kind, a, b, gain, d[i])
    return out


@dataclass(frozen=True)
class ProbabilityFn:
    """Monotonically non-increasing map from distance to probability.

    Build instances through the named constructors.  ``gain`` scales the
    whole function and exists for fault injection in validation runs.
    """

    kind: int
    a: float = 0.0
    b: float = 1.0
    gain: float = 1.0
    label: str = ""
    declared_monotone: bool = field(default=True, compare=False)

    def __post_init__(self):
        if self.kind not in (F_CONSTANT, F_STEP, F_LOGISTIC, F_INVERSE):
            raise ValueError(f"unknown probability function kind {self.kind}")
        if not 0.0 <= self.gain <= 1.0:
            raise ValueError(f"gain must lie in [0, 1], got {self.gain}")
        if self.kind == F_CONSTANT and not 0.0 <= self.a <= 1.0:
            raise ProbabilityRangeError(f"constant probability {self.a} outside [0, 1]")
        if self.kind == F_LOGISTIC and not self.b > 0.0:
            raise ValueError(f"logistic scale must be positive, got {self.b}")
        if self.kind == F_INVERSE and not self.a >= 0.0:
            raise ValueError(f"inverse-distance numerator must be >= 0, got {self.a}")
        if __debug__:
            self.spot_check()

    @classmethod
    def constant(cls, p: float) -> "ProbabilityFn":
        return cls(F_CONSTANT, float(p), label=f"const({p})")

    @classmethod
    def step(cls, tau: float) -> "ProbabilityFn":
        """1 within distance ``tau``, 0 beyond (a deterministic range query)."""
        return cls(F_STEP, float(tau), label=f"step({tau})")

    @classmethod
    def logistic(cls, midpoint: float, scale: float = 1.0) -> "ProbabilityFn":
        """``1 / (exp((d - midpoint) / scale) + 1)``."""
        return cls(F_LOGISTIC, float(midpoint), float(scale), label=f"logistic({midpoint}, {scale})")

    @classmethod
    def inverse_distance(cls, c: float) -> "ProbabilityFn":
        """``min(1, c / d)``; identically zero for ``c == 0``."""
        return cls(F_INVERSE, float(c), label=f"inverse({c})")

    def scaled(self, gain: float) -> "ProbabilityFn":
        return ProbabilityFn(self.kind, self.a, self.b, self.gain * gain, f"{self.label}*{gain}")

    @property
    def params(self):
        return self.kind, self.a, self.b, self.gain

    def __call__(self, d):
        if np.ndim(d) == 0:
            return float(prob(self.kind, self.a, self.b, self.gain, float(d)))
        d = np.ascontiguousarray(d, dtype=np.float64)
        return _prob_array(self.kind, self.a, self.b, self.gain, d.ravel(), np.empty(d.size)).reshape(d.shape)

    def spot_check(self, n: int = 64, scale: float = 100.0, seed: int = 0):
        """Reject observed increases on random distance pairs."""
        rng = np.random.default_rng(seed)
        d = np.sort(rng.random(n) * scale)
        p = self(d)
        if np.any(np.diff(p) > 1e-12):
            raise ValueError(f"{self.label or self.kind} is not monotonically non-increasing")


# --------------------------------------------------------------------------
# random streams


def random_source(seed=None) -> np.random.Generator:
    return np.random.default_rng(seed)


def child_seed(seed, *key: int) -> np.random.SeedSequence:
    """Seed for a sub-stream identified by ``key`` (e.g. step, chunk)."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(key))
    return np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))


def chunk_rngs(seed, count: int, chunk_size: int = CHUNK_SIZE):
    """One generator per fixed-size slice of ``count`` work items."""
    starts = range(0, count, chunk_size)
    return [
        (s, min(s + chunk_size, count), np.random.default_rng(child_seed(seed, k)))
        for k, s in enumerate(starts)
    ]


def run_chunks(fn, chunks, threads: int = 1):
    if threads <= 1 or len(chunks) <= 1:
        return [fn(*c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda c: fn(*c), chunks))


# --------------------------------------------------------------------------
# geometric skipping


@numba.njit(cache=True, nogil=True)
def _skip(log_keep, u):
    # ln(1 - u) / ln(1 - b), kept in floating point because it can be huge
    return math.floor(math.log1p(-u) / log_keep)


def skip_delta(b_bar: float, rng: np.random.Generator):
    """Number of points skipped before the next candidate.

    Geometrically distributed: ``Pr(delta = i) = (1 - b_bar)^i * b_bar``.
    Returns ``None`` for ``b_bar == 0``, meaning no point can be a candidate.
    """
    if not 0.0 <= b_bar <= 1.0:
        raise ValueError(f"b_bar must lie in [0, 1], got {b_bar}")
    if b_bar == 0.0:
        return None
    if b_bar == 1.0:
        return 0
    return int(_skip(math.log1p(-b_bar), rng.random()))


# --------------------------------------------------------------------------
# query kernels


@numba.njit(cache=True, nogil=True, inline="always")
def _dist_dfs(F, gkind, j, qphi, qr, qx, qy, qsh):
    if gkind == EUCLIDEAN:
        dx = F.ax[j] - qx
        dy = F.ay[j] - qy
        return math.sqrt(dx * dx + dy * dy)
    s = math.sin(0.5 * (F.phi[j] - qphi))
    h = math.sinh(0.5 * (F.r[j] - qr))
    return 2.0 * math.asinh(math.sqrt(h * h + F.ax[j] * qsh * s * s))


@numba.njit(cache=True, nogil=True)
def _append(out, count, value):
    if count >= out.shape[0]:
        bigger = np.empty(max(16, 2 * out.shape[0]), dtype=np.int64)
        bigger[:count] = out[:count]
        out = bigger
    out[count] = value
    return out, count + 1


@numba.njit(cache=True, nogil=True)
def _query_into(F, gkind, qphi, qr, fk, fa, fb, fg, rng, aggregated, min_id, out, count, stats):
    """Run one query, appending accepted ids ``> min_id`` to ``out``.

    ``stats`` accumulates (candidates, cells, virtual leaves).
    """
    qx = qr * math.cos(qphi)
    qy = qr * math.sin(qphi)
    qsh = math.sinh(qr) if gkind != EUCLIDEAN else 0.0
    stack = np.empty(4 * MAX_DEPTH + 16, dtype=np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        s = F.size[node]
        stats[1] += 1
        lo, _hi = cell_bounds(gkind, F.min_phi[node], F.max_phi[node], F.min_r[node], F.max_r[node], qphi, qr)
        bbar = prob(fk, fa, fb, fg, lo)
        c = F.child[node]
        if c >= 0:
            if not aggregated or s * bbar >= 1.0:
                for k in range(3, -1, -1):
                    stack[top] = c + k
                    top += 1
                continue
            stats[2] += 1
        if s == 0 or bbar <= 0.0:
            continue
        base = F.offset[node]
        log_keep = math.log1p(-bbar) if bbar < 1.0 else 0.0
        i = 0
        while i < s:
            if bbar < 1.0:
                delta = _skip(log_keep, rng.random())
                if delta >= s - i:
                    break
                i += int(delta)
            stats[0] += 1
            j = base + i
            d = _dist_dfs(F, gkind, j, qphi, qr, qx, qy, qsh)
            acc = prob(fk, fa, fb, fg, d) / bbar
            if acc > 1.0 + BOUND_TOLERANCE:
                raise BoundViolation("f(dist) exceeds the cell bound; distance bound is unsound")
            if rng.random() < acc:
                pid = F.order[j]
                if pid > min_id:
                    out, count = _append(out, count, pid)
            i += 1
    return out, count


@numba.njit(cache=True, nogil=True)
def _query_batch(F, gkind, qphis, qrs, min_ids, fk, fa, fb, fg, rng, aggregated, ends, stats):
    out = np.empty(max(16, 4 * qphis.shape[0]), dtype=np.int64)
    count = 0
    for k in range(qphis.shape[0]):
        out, count = _query_into(F, gkind, qphis[k], qrs[k], fk, fa, fb, fg, rng, aggregated, min_ids[k], out, count, stats)
        ends[k] = count
    return out[:count].copy()


# --------------------------------------------------------------------------
# public API


@dataclass
class QueryStats:
    candidates_examined: int = 0
    cells_examined: int = 0
    virtual_leaves: int = 0

    def __iadd__(self, other: "QueryStats"):
        self.candidates_examined += other.candidates_examined
        self.cells_examined += other.cells_examined
        self.virtual_leaves += other.virtual_leaves
        return self


@dataclass
class QueryOutcome:
    neighbors: np.ndarray  # point ids
    stats: QueryStats


def _stats(arr) -> QueryStats:
    return QueryStats(int(arr[0]), int(arr[1]), int(arr[2]))


def _query(t: PolarQuadtree, q: PolarPoint, f: ProbabilityFn, rng, aggregated: bool) -> QueryOutcome:
    F = t.frozen()
    stats = np.zeros(3, dtype=np.int64)
    out, count = _query_into(
        F, int(t.geometry), q.phi, q.r, *f.params, rng, aggregated, -1,
        np.empty(64, dtype=np.int64), 0, stats,
    )
    return QueryOutcome(out[:count].copy(), _stats(stats))


def query_baseline(t: PolarQuadtree, q: PolarPoint, f: ProbabilityFn, rng: np.random.Generator) -> QueryOutcome:
    """Probabilistic neighborhood of ``q``, visiting every node of ``t``."""
    return _query(t, q, f, rng, False)


def query_aggregated(t: PolarQuadtree, q: PolarPoint, f: ProbabilityFn, rng: np.random.Generator) -> QueryOutcome:
    """Probabilistic neighborhood of ``q`` with subtree aggregation.

    Same distribution as :func:`query_baseline`, in
    ``O((|N| + sqrt(n)) log n)`` time for trees fitted to their density.
    """
    return _query(t, q, f, rng, True)


@dataclass
class BatchResult:
    ids: np.ndarray
    ends: np.ndarray  # ids of query k are ids[ends[k-1]:ends[k]]
    stats: QueryStats

    def neighbors(self, k: int) -> np.ndarray:
        start = self.ends[k - 1] if k > 0 else 0
        return self.ids[start : self.ends[k]]

    def __len__(self):
        return len(self.ends)


def query_batch(
    t: PolarQuadtree,
    qphi,
    qr,
    f: ProbabilityFn,
    seed,
    method: str = "aggregated",
    min_ids=None,
    threads: int = 1,
    chunk_size: int = CHUNK_SIZE,
) -> BatchResult:
    """Run many queries; query ``k`` draws from the stream of its chunk.

    Chunking is fixed by ``chunk_size`` so the result does not depend on
    ``threads``.  ``min_ids[k]`` drops neighbors with id ``<= min_ids[k]``.
    """
    if method not in ("aggregated", "baseline"):
        raise ValueError(f"unknown query method {method!r}")
    qphi = np.ascontiguousarray(qphi, dtype=np.float64)
    qr = np.ascontiguousarray(qr, dtype=np.float64)
    m = qphi.shape[0]
    if min_ids is None:
        min_ids = np.full(m, -1, dtype=np.int64)
    min_ids = np.ascontiguousarray(min_ids, dtype=np.int64)
    F = t.frozen()
    gkind = int(t.geometry)
    aggregated = method == "aggregated"

    def work(lo, hi, rng):
        ends = np.empty(hi - lo, dtype=np.int64)
        stats = np.zeros(3, dtype=np.int64)
        ids = _query_batch(F, gkind, qphi[lo:hi], qr[lo:hi], min_ids[lo:hi], *f.params, rng, aggregated, ends, stats)
        return ids, ends, stats

    parts = run_chunks(work, chunk_rngs(seed, m, chunk_size), threads)
    return _merge(parts, m)


def _merge(parts, m) -> BatchResult:
    ids_list, ends_list, stats = [], [], np.zeros(3, dtype=np.int64)
    shift = 0
    for ids, ends, st in parts:
        ids_list.append(ids)
        ends_list.append(ends + shift)
        shift += ids.shape[0]
        stats += st
    ids = np.concatenate(ids_list) if ids_list else np.empty(0, dtype=np.int64)
    ends = np.concatenate(ends_list) if ends_list else np.empty(0, dtype=np.int64)
    assert ends.shape[0] == m
    return BatchResult(ids, ends, _stats(stats))


def maybe_get_kth_element(
    S: QuadtreeNode,
    q: PolarPoint,
    f: ProbabilityFn,
    k: int,
    b_bar: float,
    rng: np.random.Generator,
):
    """Locate the k-th point of subtree ``S`` and accept it with probability ``f(dist) / b_bar``.

    Points are enumerated depth-first, children in storage order.  Returns
    the point id or ``None``.
    """
    if not 0 <= k < S.subtree_size:
        raise IndexError(f"k={k} outside subtree of size {S.subtree_size}")
    node = S
    while not node.is_leaf:
        offset = 0
        for child in node.children:
            if k - offset < child.subtree_size:
                k -= offset
                node = child
                break
            offset += child.subtree_size
    pid = node.point_ids[k]
    tree = S.tree
    p = f(distance(tree.geometry, q, tree.point(pid)))
    if b_bar > 0.0:
        acc = p / b_bar
    else:
        acc = 0.0 if p == 0.0 else math.inf
    if acc > 1.0 + BOUND_TOLERANCE:
        raise BoundViolation(f"f(dist)={p} exceeds bound {b_bar} for point {pid}")
    if 1.0 - rng.random() < acc:
        return pid
    return None
