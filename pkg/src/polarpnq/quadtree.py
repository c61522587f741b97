"""Polar region quadtree with probability-mass balanced splitting.

Nodes live in flat, growable numpy arrays so insertion and the query kernels
can run under numba.  Children of an inner node are stored consecutively in
the order (low phi, low r), (low phi, high r), (high phi, low r),
(high phi, high r); that order is also the depth-first order used for the
"k-th point of a subtree" lookups.  Leaves keep their points as singly linked
lists threaded through a per-point ``next`` array.

Queries do not read the linked lists.  They use a frozen layout built on
demand (and rebuilt after further inserts) in which every subtree owns a
contiguous slice of a point permutation.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numba
import numpy as np

from .geometry import (
    TWO_PI,
    CellBounds,
    Geometry,
    PolarPoint,
    wrap_angles,
)

DEFAULT_CAPACITY = 32
# splits are refused below this depth; the leaf overflows instead
MAX_DEPTH = 96
_RESERVE = 4 * (MAX_DEPTH + 2)

DENSITY_EUCLIDEAN = 0
DENSITY_HYPERBOLIC = 1
DENSITY_EMPIRICAL = 2


class DegenerateCellError(ValueError):
    """A cell cannot be split (zero extent or identical points)."""


class PointsFileError(ValueError):
    pass


# --------------------------------------------------------------------------
# radial densities


@dataclass(frozen=True)
class RadialDensity:
    """Rotationally invariant point density on a disk of radius ``R``.

    ``kind`` is one of ``"euclidean_uniform"`` (J(r) = r^2 / R^2),
    ``"hyperbolic"`` (J(r) = (cosh(alpha r) - 1) / (cosh(alpha R) - 1)) or
    ``"empirical"``, which has no CDF and makes the tree split radially at the
    median radius of the points being split.  An empirical density may leave
    ``R`` unset; :func:`build` then fits it to the points.
    """

    kind: str
    R: float | None
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ("euclidean_uniform", "hyperbolic", "empirical"):
            raise ValueError(f"unknown density kind {self.kind!r}")
        if self.R is not None and not (self.R > 0.0 and math.isfinite(self.R)):
            raise ValueError(f"empty density domain: R={self.R}")
        if self.kind != "empirical" and self.R is None:
            raise ValueError(f"{self.kind} density needs a radius")
        if self.kind == "hyperbolic" and not self.alpha > 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    @classmethod
    def euclidean_uniform(cls, R: float = 1.0) -> "RadialDensity":
        return cls("euclidean_uniform", float(R))

    @classmethod
    def hyperbolic(cls, alpha: float, R: float) -> "RadialDensity":
        return cls("hyperbolic", float(R), float(alpha))

    @classmethod
    def empirical(cls, R: float | None = None) -> "RadialDensity":
        return cls("empirical", None if R is None else float(R))

    @property
    def code(self) -> int:
        return {
            "euclidean_uniform": DENSITY_EUCLIDEAN,
            "hyperbolic": DENSITY_HYPERBOLIC,
            "empirical": DENSITY_EMPIRICAL,
        }[self.kind]

    @property
    def has_cdf(self) -> bool:
        return self.kind != "empirical"

    def cdf(self, r):
        r = np.asarray(r, dtype=np.float64)
        if self.kind == "euclidean_uniform":
            return (r / self.R) ** 2
        if self.kind == "hyperbolic":
            # cosh(x) - 1 = 2 sinh^2(x / 2), no cancellation near r = 0
            a = self.alpha
            return np.sinh(0.5 * a * r) ** 2 / np.sinh(0.5 * a * self.R) ** 2
        raise TypeError("empirical density has no CDF")

    def inverse_cdf(self, u):
        u = np.asarray(u, dtype=np.float64)
        if self.kind == "euclidean_uniform":
            return self.R * np.sqrt(u)
        if self.kind == "hyperbolic":
            a = self.alpha
            return (2.0 / a) * np.arcsinh(np.sqrt(u) * np.sinh(0.5 * a * self.R))
        raise TypeError("empirical density has no CDF")

    def sample(self, n: int, rng: np.random.Generator):
        """Draw ``n`` points; returns ``(phi, r)`` arrays with r < R."""
        phi = rng.random(n) * TWO_PI
        r = self.inverse_cdf(rng.random(n))
        return phi, np.minimum(r, np.nextafter(self.R, 0.0))


@numba.njit(cache=True, nogil=True)
def _split_radius(dkind, alpha, min_r, max_r, radii, m):
    if dkind == DENSITY_EUCLIDEAN:
        return math.sqrt(0.5 * (min_r * min_r + max_r * max_r))
    if dkind == DENSITY_HYPERBOLIC:
        a = math.sinh(0.5 * alpha * min_r)
        b = math.sinh(0.5 * alpha * max_r)
        return (2.0 / alpha) * math.asinh(math.sqrt(0.5 * (a * a + b * b)))
    if m == 0:
        return 0.5 * (min_r + max_r)
    return np.median(radii[:m])


def split_cell(c: CellBounds, density: RadialDensity, points_in_cell: Sequence[PolarPoint] = ()):
    """Return ``(mid_phi, mid_r)`` splitting ``c`` into four equal-mass children.

    For empirical densities ``mid_r`` is the median radius of
    ``points_in_cell``, falling back to the arithmetic midpoint when the median
    sits on the lower edge.  Raises :class:`DegenerateCellError` when no split
    strictly inside the cell exists.
    """
    radii = np.array([p.r for p in points_in_cell], dtype=np.float64)
    if density.kind == "empirical" and radii.size == 0:
        raise ValueError("median split needs the cell's points")
    mid_phi = 0.5 * (c.min_phi + c.max_phi)
    mid_r = _split_radius(density.code, density.alpha, c.min_r, c.max_r, radii, radii.size)
    if density.kind == "empirical" and not (c.min_r < mid_r < c.max_r):
        mid_r = 0.5 * (c.min_r + c.max_r)
    if not (c.min_phi < mid_phi < c.max_phi and c.min_r < mid_r < c.max_r):
        raise DegenerateCellError(f"cannot split {c}")
    return mid_phi, float(mid_r)


# --------------------------------------------------------------------------
# numba storage kernels


class _Nodes(NamedTuple):
    min_phi: np.ndarray
    max_phi: np.ndarray
    min_r: np.ndarray
    max_r: np.ndarray
    mid_phi: np.ndarray
    mid_r: np.ndarray
    child: np.ndarray
    size: np.ndarray
    depth: np.ndarray
    head: np.ndarray


def _alloc_nodes(cap: int) -> _Nodes:
    f = [np.zeros(cap, dtype=np.float64) for _ in range(6)]
    child = np.full(cap, -1, dtype=np.int64)
    size = np.zeros(cap, dtype=np.int64)
    depth = np.zeros(cap, dtype=np.int64)
    head = np.full(cap, -1, dtype=np.int64)
    return _Nodes(*f, child, size, depth, head)


def _grow_nodes(nodes: _Nodes, used: int, cap: int) -> _Nodes:
    new = _alloc_nodes(cap)
    for old_arr, new_arr in zip(nodes, new):
        new_arr[:used] = old_arr[:used]
    return new


@numba.njit(cache=True, nogil=True, inline="always")
def _quadrant(phi, r, mid_phi, mid_r):
    q = 0
    if phi >= mid_phi:
        q += 2
    if r >= mid_r:
        q += 1
    return q


@numba.njit(cache=True, nogil=True)
def _try_split(T, node, n_nodes, phis, rs, nxt, dkind, alpha, tmp_r, tmp_id):
    """Split leaf ``node``; returns the new node count (unchanged if refused)."""
    if T.depth[node] >= MAX_DEPTH:
        return n_nodes
    m = 0
    p = T.head[node]
    same = True
    while p >= 0:
        if m >= tmp_id.shape[0]:
            return n_nodes
        tmp_id[m] = p
        tmp_r[m] = rs[p]
        if m > 0 and (rs[p] != rs[tmp_id[0]] or phis[p] != phis[tmp_id[0]]):
            same = False
        m += 1
        p = nxt[p]
    if same and m > 1:
        return n_nodes

    lo_phi = T.min_phi[node]
    hi_phi = T.max_phi[node]
    lo_r = T.min_r[node]
    hi_r = T.max_r[node]
    mid_phi = 0.5 * (lo_phi + hi_phi)
    mid_r = _split_radius(dkind, alpha, lo_r, hi_r, tmp_r, m)
    if dkind == DENSITY_EMPIRICAL and not (lo_r < mid_r < hi_r):
        mid_r = 0.5 * (lo_r + hi_r)
    if not (lo_phi < mid_phi < hi_phi and lo_r < mid_r < hi_r):
        return n_nodes

    first = n_nodes
    T.mid_phi[node] = mid_phi
    T.mid_r[node] = mid_r
    T.child[node] = first
    T.head[node] = -1
    for k in range(4):
        c = first + k
        if k < 2:
            T.min_phi[c] = lo_phi
            T.max_phi[c] = mid_phi
        else:
            T.min_phi[c] = mid_phi
            T.max_phi[c] = hi_phi
        if k % 2 == 0:
            T.min_r[c] = lo_r
            T.max_r[c] = mid_r
        else:
            T.min_r[c] = mid_r
            T.max_r[c] = hi_r
        T.child[c] = -1
        T.size[c] = 0
        T.depth[c] = T.depth[node] + 1
        T.head[c] = -1
    for j in range(m):
        p = tmp_id[j]
        c = first + _quadrant(phis[p], rs[p], mid_phi, mid_r)
        nxt[p] = T.head[c]
        T.head[c] = p
        T.size[c] += 1
    return n_nodes + 4


@numba.njit(cache=True, nogil=True)
def _insert_range(T, n_nodes, phis, rs, nxt, start, stop, capacity, dkind, alpha, tmp_r, tmp_id):
    """Insert points ``start..stop-1``; stops early when node storage runs low.

    Returns ``(n_nodes, next_point)``.
    """
    cap_nodes = T.child.shape[0]
    stack = np.empty(4 * MAX_DEPTH + 16, dtype=np.int64)
    for pid in range(start, stop):
        if n_nodes + 4 * (MAX_DEPTH + 2) > cap_nodes:
            return n_nodes, pid
        phi = phis[pid]
        r = rs[pid]
        node = 0
        while True:
            T.size[node] += 1
            c = T.child[node]
            if c < 0:
                break
            node = c + _quadrant(phi, r, T.mid_phi[node], T.mid_r[node])
        nxt[pid] = T.head[node]
        T.head[node] = pid
        if T.size[node] <= capacity:
            continue
        # cascade: only an overfull child can need another split
        top = 0
        stack[top] = node
        top += 1
        while top > 0:
            top -= 1
            leaf = stack[top]
            if T.size[leaf] <= capacity:
                continue
            before = n_nodes
            n_nodes = _try_split(T, leaf, n_nodes, phis, rs, nxt, dkind, alpha, tmp_r, tmp_id)
            if n_nodes == before:
                continue
            for k in range(4):
                c = before + k
                if T.size[c] > capacity and top < stack.shape[0]:
                    stack[top] = c
                    top += 1
    return n_nodes, stop


@numba.njit(cache=True, nogil=True)
def _freeze(T, n_nodes, n_points, nxt):
    """Depth-first layout: each node owns ``order[offset : offset + size]``."""
    offset = np.zeros(n_nodes, dtype=np.int64)
    order = np.empty(n_points, dtype=np.int64)
    stack = np.empty(4 * MAX_DEPTH + 16, dtype=np.int64)
    top = 0
    stack[top] = 0
    top += 1
    pos = 0
    while top > 0:
        top -= 1
        node = stack[top]
        offset[node] = pos
        c = T.child[node]
        if c < 0:
            p = T.head[node]
            while p >= 0:
                order[pos] = p
                pos += 1
                p = nxt[p]
        else:
            for k in range(3, -1, -1):
                stack[top] = c + k
                top += 1
    return offset, order


@numba.njit(cache=True, nogil=True)
def _locate_depth(T, phis, rs, depth, first_index, counts):
    """Count points per depth-``depth`` node; returns -1 or the first point whose leaf is too shallow."""
    for i in range(phis.shape[0]):
        node = 0
        d = 0
        while d < depth:
            c = T.child[node]
            if c < 0:
                return i
            node = c + _quadrant(phis[i], rs[i], T.mid_phi[node], T.mid_r[node])
            d += 1
        counts[first_index[node]] += 1
    return -1


class Frozen(NamedTuple):
    """Read-only arrays consumed by the query kernels."""

    min_phi: np.ndarray
    max_phi: np.ndarray
    min_r: np.ndarray
    max_r: np.ndarray
    child: np.ndarray
    size: np.ndarray
    offset: np.ndarray
    order: np.ndarray
    phi: np.ndarray  # coordinates permuted into DFS order
    r: np.ndarray
    ax: np.ndarray  # Euclidean: x; hyperbolic: sinh r
    ay: np.ndarray  # Euclidean: y; hyperbolic: unused


# --------------------------------------------------------------------------
# public tree


class QuadtreeNode:
    """Lightweight view of one node of a :class:`PolarQuadtree`."""

    __slots__ = ("tree", "index")

    def __init__(self, tree: "PolarQuadtree", index: int):
        self.tree = tree
        self.index = index

    def __repr__(self):
        kind = "leaf" if self.is_leaf else "inner"
        return f"QuadtreeNode({self.index}, {kind}, size={self.subtree_size}, {self.bounds})"

    def __eq__(self, other):
        return isinstance(other, QuadtreeNode) and other.tree is self.tree and other.index == self.index

    def __hash__(self):
        return hash((id(self.tree), self.index))

    @property
    def bounds(self) -> CellBounds:
        T, i = self.tree._nodes, self.index
        return CellBounds(
            float(T.min_phi[i]), float(T.max_phi[i]), float(T.min_r[i]), float(T.max_r[i])
        )

    @property
    def is_leaf(self) -> bool:
        return bool(self.tree._nodes.child[self.index] < 0)

    @property
    def children(self) -> list["QuadtreeNode"]:
        c = int(self.tree._nodes.child[self.index])
        if c < 0:
            return []
        return [QuadtreeNode(self.tree, c + k) for k in range(4)]

    @property
    def subtree_size(self) -> int:
        return int(self.tree._nodes.size[self.index])

    @property
    def depth(self) -> int:
        return int(self.tree._nodes.depth[self.index])

    @property
    def split(self) -> tuple[float, float] | None:
        if self.is_leaf:
            return None
        T, i = self.tree._nodes, self.index
        return float(T.mid_phi[i]), float(T.mid_r[i])

    @property
    def point_ids(self) -> list[int]:
        """Ids stored in this leaf, in the order queries enumerate them."""
        if not self.is_leaf:
            raise TypeError("inner nodes hold no points")
        out = []
        p = int(self.tree._nodes.head[self.index])
        nxt = self.tree._next
        while p >= 0:
            out.append(p)
            p = int(nxt[p])
        return out


class PolarQuadtree:
    """Polar quadtree over points in the Euclidean or hyperbolic disk of radius R.

    Points get stable integer ids in insertion order.  The tree is append-only;
    construction and insertion need exclusive access, queries only read.
    """

    def __init__(self, geometry, density: RadialDensity, capacity: int = DEFAULT_CAPACITY):
        if int(capacity) < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        if density.R is None:
            raise ValueError("density radius unset; use build() to fit an empirical radius")
        self.geometry = Geometry.parse(geometry)
        self.density = density
        self.capacity = int(capacity)
        self.R = float(density.R)
        self._clamp_r = np.nextafter(self.R, 0.0)

        self._nodes = _alloc_nodes(1024)
        self._n_nodes = 1
        T = self._nodes
        T.max_phi[0] = TWO_PI
        T.max_r[0] = self.R

        self._phi = np.zeros(1024, dtype=np.float64)
        self._r = np.zeros(1024, dtype=np.float64)
        self._next = np.full(1024, -1, dtype=np.int64)
        self._n = 0
        self._tmp_r = np.empty(0, dtype=np.float64)
        self._tmp_id = np.empty(0, dtype=np.int64)
        self._frozen: Frozen | None = None

    # -- size and structure -------------------------------------------------

    @property
    def n(self) -> int:
        return self._n

    def __len__(self) -> int:
        return self._n

    @property
    def root(self) -> QuadtreeNode:
        return QuadtreeNode(self, 0)

    @property
    def node_count(self) -> int:
        return self._n_nodes

    def node(self, index: int) -> QuadtreeNode:
        if not 0 <= index < self._n_nodes:
            raise IndexError(index)
        return QuadtreeNode(self, index)

    def nodes(self) -> Iterable[QuadtreeNode]:
        """All nodes in depth-first order."""
        stack = [0]
        child = self._nodes.child
        while stack:
            i = stack.pop()
            yield QuadtreeNode(self, i)
            c = int(child[i])
            if c >= 0:
                stack.extend(range(c + 3, c - 1, -1))

    def height(self) -> int:
        used = self._n_nodes
        leaf = self._nodes.child[:used] < 0
        return int(self._nodes.depth[:used][leaf].max())

    def point(self, pid: int) -> PolarPoint:
        if not 0 <= pid < self._n:
            raise IndexError(pid)
        return PolarPoint(float(self._phi[pid]), float(self._r[pid]))

    @property
    def phi(self) -> np.ndarray:
        return self._phi[: self._n]

    @property
    def r(self) -> np.ndarray:
        return self._r[: self._n]

    # -- insertion ----------------------------------------------------------

    def _checked(self, phi: np.ndarray, r: np.ndarray):
        phi = wrap_angles(phi)
        r = np.asarray(r, dtype=np.float64).copy()
        bad = ~np.isfinite(r) | (r < 0.0) | ~np.isfinite(phi)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValueError(f"invalid point #{i}: ({phi[i]}, {r[i]})")
        over = r > self.R
        if over.any():
            i = int(np.flatnonzero(over)[0])
            raise ValueError(f"point #{i} ({phi[i]}, {r[i]}) lies outside the disk of radius {self.R}")
        # half-open cells would orphan points on the rim
        r[r == self.R] = self._clamp_r
        return phi, r

    def _reserve_points(self, extra: int):
        need = self._n + extra
        if need <= self._phi.shape[0]:
            return
        cap = max(need, 2 * self._phi.shape[0])
        for name in ("_phi", "_r"):
            old = getattr(self, name)
            new = np.zeros(cap, dtype=np.float64)
            new[: self._n] = old[: self._n]
            setattr(self, name, new)
        nxt = np.full(cap, -1, dtype=np.int64)
        nxt[: self._n] = self._next[: self._n]
        self._next = nxt

    def insert_many(self, phi, r) -> np.ndarray:
        """Insert points given as coordinate arrays; returns their ids."""
        phi, r = self._checked(np.atleast_1d(phi), np.atleast_1d(r))
        m = phi.shape[0]
        start = self._n
        self._reserve_points(m)
        self._phi[start : start + m] = phi
        self._r[start : start + m] = r
        total = start + m + 1
        if self._tmp_id.shape[0] < total:
            # a split gathers one leaf, which can hold at most every point
            size = max(2 * self._tmp_id.shape[0], total)
            self._tmp_r = np.empty(size, dtype=np.float64)
            self._tmp_id = np.empty(size, dtype=np.int64)

        pos, stop = start, start + m
        while pos < stop:
            if self._n_nodes + _RESERVE > self._nodes.child.shape[0]:
                cap = max(2 * self._nodes.child.shape[0], self._n_nodes + 2 * _RESERVE)
                self._nodes = _grow_nodes(self._nodes, self._n_nodes, cap)
            self._n_nodes, pos = _insert_range(
                self._nodes, self._n_nodes, self._phi, self._r, self._next,
                pos, stop, self.capacity, self.density.code, self.density.alpha,
                self._tmp_r, self._tmp_id,
            )
        self._n = stop
        self._frozen = None
        return np.arange(start, stop, dtype=np.int64)

    def insert(self, p: PolarPoint) -> int:
        return int(self.insert_many(np.array([p.phi]), np.array([p.r]))[0])

    # -- query support ------------------------------------------------------

    def frozen(self) -> Frozen:
        if self._frozen is None:
            used, n = self._n_nodes, self._n
            T = self._nodes
            offset, order = _freeze(T, used, n, self._next)
            phi = np.ascontiguousarray(self._phi[:n][order])
            r = np.ascontiguousarray(self._r[:n][order])
            if self.geometry == Geometry.EUCLIDEAN:
                ax, ay = r * np.cos(phi), r * np.sin(phi)
            else:
                ax, ay = np.sinh(r), np.zeros(0)
            self._frozen = Frozen(
                T.min_phi[:used].copy(), T.max_phi[:used].copy(),
                T.min_r[:used].copy(), T.max_r[:used].copy(),
                T.child[:used].copy(), T.size[:used].copy(),
                offset, order, phi, r, ax, ay,
            )
        return self._frozen

    def leaf_order(self) -> np.ndarray:
        """Point ids in depth-first leaf order (the k-th element enumeration)."""
        return self.frozen().order

    # -- diagnostics --------------------------------------------------------

    def structure(self):
        """Canonical nested description: bounds plus sorted leaf contents."""

        def walk(node: QuadtreeNode):
            b = node.bounds
            key = (b.min_phi, b.max_phi, b.min_r, b.max_r)
            if node.is_leaf:
                return (key, tuple(sorted(node.point_ids)))
            return (key, tuple(walk(c) for c in node.children))

        return walk(self.root)

    def check_invariants(self):
        """Full recount of the structural invariants; raises AssertionError on violation."""
        seen = np.zeros(self._n, dtype=np.int64)
        for node in self.nodes():
            b = node.bounds
            if node.is_leaf:
                ids = node.point_ids
                assert len(ids) == node.subtree_size, f"leaf size mismatch at {node}"
                for pid in ids:
                    seen[pid] += 1
                    p = self.point(pid)
                    assert b.contains(p), f"point {pid} {p} outside {b}"
            else:
                kids = node.children
                assert sum(k.subtree_size for k in kids) == node.subtree_size
                mid_phi, mid_r = node.split
                assert b.min_phi < mid_phi < b.max_phi and b.min_r < mid_r < b.max_r
                for k in kids:
                    kb = k.bounds
                    assert b.min_phi <= kb.min_phi <= kb.max_phi <= b.max_phi
                    assert b.min_r <= kb.min_r <= kb.max_r <= b.max_r
        assert (seen == 1).all(), "every point must sit in exactly one leaf"
        assert self.root.subtree_size == self._n


def build(points, g, density: RadialDensity, capacity: int = DEFAULT_CAPACITY) -> PolarQuadtree:
    """Build a tree by sequential insertion.

    ``points`` is a sequence of :class:`PolarPoint` or a ``(phi, r)`` pair of
    arrays.  An empirical density without radius is fitted to the largest
    point radius.
    """
    phi, r = _as_arrays(points)
    if density.R is None:
        rmax = float(r.max()) if r.size else 0.0
        density = RadialDensity.empirical(rmax if rmax > 0.0 else 1.0)
    tree = PolarQuadtree(g, density, capacity)
    if phi.size:
        tree.insert_many(phi, r)
    return tree


def _as_arrays(points):
    if isinstance(points, tuple) and len(points) == 2 and not isinstance(points[0], PolarPoint):
        phi = np.asarray(points[0], dtype=np.float64)
        r = np.asarray(points[1], dtype=np.float64)
        if phi.shape != r.shape:
            raise ValueError("phi and r arrays differ in shape")
        return phi, r
    pts = list(points)
    phi = np.array([p.phi for p in pts], dtype=np.float64)
    r = np.array([p.r for p in pts], dtype=np.float64)
    return phi, r


@dataclass
class MassCheck:
    depth: int
    counts: np.ndarray  # per depth-`depth` cell, depth-first order
    expected_fraction: float
    chi2: float

    @property
    def fractions(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    def max_abs_z(self) -> float:
        n = self.counts.sum()
        p = self.expected_fraction
        sigma = math.sqrt(n * p * (1.0 - p)) if 0.0 < p < 1.0 else 1.0
        return float(np.abs(self.counts - n * p).max() / sigma)


def node_mass_fraction_check(t: PolarQuadtree, depth: int, sample_phi, sample_r) -> MassCheck:
    """Occupancy of the depth-``depth`` cells by an i.i.d. sample from the density.

    Every cell at that depth carries mass ``4**-depth`` when splits follow the
    CDF, so the chi-square statistic against the uniform expectation should be
    unremarkable.  The probed region must be expanded to ``depth``.
    """
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    if depth > t.height():
        raise ValueError(f"depth {depth} exceeds tree height {t.height()}")
    at_depth = [n.index for n in t.nodes() if n.depth == depth]
    first_index = np.full(t.node_count, -1, dtype=np.int64)
    first_index[at_depth] = np.arange(len(at_depth))
    counts = np.zeros(len(at_depth), dtype=np.int64)
    phi = wrap_angles(sample_phi)
    r = np.minimum(np.asarray(sample_r, dtype=np.float64), t._clamp_r)
    bad = _locate_depth(t._nodes, phi, r, depth, first_index, counts)
    if bad >= 0:
        raise ValueError(f"tree is not expanded to depth {depth} around sample point #{bad}")
    p = 4.0 ** -depth
    expected = counts.sum() * p
    chi2 = float(((counts - expected) ** 2 / expected).sum()) if expected > 0 else 0.0
    return MassCheck(depth, counts, p, chi2)


# --------------------------------------------------------------------------
# points file


def write_points_csv(path, phi, r):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["phi", "r"])
        for a, b in zip(np.asarray(phi), np.asarray(r)):
            w.writerow([repr(float(a)), repr(float(b))])


def read_points_csv(path):
    """Read a ``phi,r`` CSV; returns ``(phi, r)`` arrays."""
    phis, rs = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["phi", "r"]:
            raise PointsFileError(f"{path}:1: expected header 'phi,r', got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise PointsFileError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            try:
                a, b = float(row[0]), float(row[1])
            except ValueError:
                raise PointsFileError(f"{path}:{lineno}: non-numeric value in {row!r}") from None
            if not (math.isfinite(a) and math.isfinite(b)) or b < 0:
                raise PointsFileError(f"{path}:{lineno}: invalid point {row!r}")
            phis.append(a)
            rs.append(b)
    return np.array(phis, dtype=np.float64), np.array(rs, dtype=np.float64)
