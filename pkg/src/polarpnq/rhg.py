"""Random hyperbolic graphs generated with one neighborhood query per node.

Nodes are points in a hyperbolic disk of radius ``R`` with radial density
``alpha sinh(alpha r) / (cosh(alpha R) - 1)`` and uniform angles.  A pair at
distance ``d`` is joined with probability ``1 / (exp((d - R) / (2 T)) + 1)``.
Querying node ``u`` with that function and keeping only neighbors ``v > u``
tests every unordered pair exactly once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import sparse

from .geometry import Geometry
from .pnq import F_LOGISTIC, ProbabilityFn, child_seed, prob, query_batch
from .quadtree import DEFAULT_CAPACITY, RadialDensity, build
from .reference import pdp_batch


class CalibrationError(RuntimeError):
    pass


class EdgeListError(ValueError):
    pass


@dataclass(frozen=True)
class RhgParams:
    n: int
    alpha: float
    temperature: float
    R: float | None = None
    target_avg_degree: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not self.alpha > 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.temperature < 0.0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if (self.R is None) == (self.target_avg_degree is None):
            raise ValueError("give exactly one of R and target_avg_degree")
        if self.R is not None and not self.R > 0.0:
            raise ValueError(f"R must be positive, got {self.R}")


@dataclass(frozen=True)
class EdgeList:
    """A simple undirected graph as sorted pairs ``u < v``."""

    n: int
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.ascontiguousarray(self.u, dtype=np.int64)
        v = np.ascontiguousarray(self.v, dtype=np.int64)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        if u.shape != v.shape:
            raise ValueError("endpoint arrays differ in length")
        if u.size:
            if u.min() < 0 or v.max() >= self.n:
                raise ValueError("edge endpoint outside [0, n)")
            if np.any(u >= v):
                raise ValueError("edges must satisfy u < v (no self-loops)")
            key = u * self.n + v
            if np.any(np.diff(key) <= 0):
                raise ValueError("edges must be sorted and unique")

    @classmethod
    def from_pairs(cls, n: int, u, v) -> "EdgeList":
        """Normalise arbitrary pairs: orient, drop self-loops and duplicates, sort."""
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        a, b = np.minimum(u, v), np.maximum(u, v)
        keep = a != b
        key = np.unique(a[keep] * n + b[keep])
        return cls(n, key // n, key % n)

    def __len__(self) -> int:
        return self.u.shape[0]

    def degrees(self) -> np.ndarray:
        return np.bincount(np.concatenate([self.u, self.v]), minlength=self.n)

    def pairs(self):
        return zip(self.u.tolist(), self.v.tolist())


# --------------------------------------------------------------------------
# model pieces


def sample_points(n: int, alpha: float, R: float, rng: np.random.Generator):
    """``(phi, r)`` arrays of ``n`` nodes: uniform angles, radii by inverse CDF."""
    return RadialDensity.hyperbolic(alpha, R).sample(n, rng)


def connection_function(R: float, temperature: float) -> ProbabilityFn:
    if temperature == 0.0:
        raise ValueError(
            "temperature 0 is the threshold model; pass ProbabilityFn.step(R) to the query layer instead"
        )
    if temperature < 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    fn = ProbabilityFn.logistic(R, 2.0 * temperature)
    return ProbabilityFn(fn.kind, fn.a, fn.b, fn.gain, f"rhg(R={R}, T={temperature})")


def connection_probability(d, R: float, temperature: float):
    """Edge probability for nodes at hyperbolic distance ``d``."""
    return connection_function(R, temperature)(d)


# --------------------------------------------------------------------------
# generation


def edges_for_points(phi, r, R: float, temperature: float, seed, method: str = "aggregated",
                     threads: int = 1, capacity: int = DEFAULT_CAPACITY, pair_once: bool = True,
                     alpha: float = 1.0) -> EdgeList:
    """Sample edges among fixed nodes.

    ``method`` is ``"aggregated"``, ``"baseline"`` or ``"pdp"``.  With
    ``pair_once=False`` every node keeps all its neighbors and the union is
    taken, which tests each pair twice; it exists only to demonstrate the bias
    that the default avoids.
    """
    return sample_edges(phi, r, R, temperature, seed, method, threads, capacity, pair_once, alpha)[0]


def sample_edges(phi, r, R: float, temperature: float, seed, method: str = "aggregated", threads: int = 1,
                 capacity: int = DEFAULT_CAPACITY, pair_once: bool = True, alpha: float = 1.0):
    """:func:`edges_for_points` that also returns the summed :class:`QueryStats`."""
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    r = np.ascontiguousarray(r, dtype=np.float64)
    n = phi.shape[0]
    f = connection_function(R, temperature)
    ids = np.arange(n, dtype=np.int64)
    if method == "pdp":
        starts = ids + 1 if pair_once else None
        batch = pdp_batch((phi, r), Geometry.HYPERBOLIC, phi, r, f, seed, starts=starts, threads=threads)
    else:
        tree = build((phi, r), Geometry.HYPERBOLIC, RadialDensity.hyperbolic(alpha, R), capacity)
        min_ids = ids if pair_once else None
        batch = query_batch(tree, phi, r, f, seed, method=method, min_ids=min_ids, threads=threads)
    counts = np.diff(np.concatenate([[0], batch.ends]))
    src = np.repeat(ids, counts)
    if pair_once:
        key = np.sort(src * n + batch.ids)
        return EdgeList(n, key // n, key % n), batch.stats
    return EdgeList.from_pairs(n, src, batch.ids), batch.stats


def generate(params: RhgParams, seed, threads: int = 1, method: str = "aggregated",
             capacity: int = DEFAULT_CAPACITY) -> EdgeList:
    """Sample a random hyperbolic graph; reproducible for a fixed seed at any thread count."""
    R = params.R
    if R is None:
        R = calibrate_radius(params.n, params.alpha, params.temperature, params.target_avg_degree,
                             seed=child_seed(seed, 2)).R
    phi, r = sample_points(params.n, params.alpha, R, np.random.default_rng(child_seed(seed, 0)))
    return edges_for_points(phi, r, R, params.temperature, child_seed(seed, 1), method=method,
                            threads=threads, capacity=capacity, alpha=params.alpha)


# --------------------------------------------------------------------------
# radius calibration


@numba.njit(cache=True, nogil=True)
def _pair_probability_sum(phi, r, a, b):
    n = phi.shape[0]
    sh = np.sinh(r)
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            s = math.sin(0.5 * (phi[i] - phi[j]))
            h = math.sinh(0.5 * (r[i] - r[j]))
            d = 2.0 * math.asinh(math.sqrt(h * h + sh[i] * sh[j] * s * s))
            total += prob(F_LOGISTIC, a, b, 1.0, d)
    return total


@dataclass
class Calibration:
    R: float
    estimate: float  # expected average degree at R
    stderr: float
    iterations: int


def expected_degree(n: int, alpha: float, temperature: float, R: float, u_phi, u_r):
    """Monte-Carlo expected average degree at radius ``R``.

    ``u_phi`` and ``u_r`` are uniform arrays of shape ``(replicates, m)``;
    each row is an independent node sample whose pair average of the edge
    probability estimates the mean over two random nodes.  Returns
    ``(mean, standard error)``.
    """
    density = RadialDensity.hyperbolic(alpha, R)
    f = connection_function(R, temperature)
    est = []
    for uphi, ur in zip(u_phi, u_r):
        m = uphi.shape[0]
        r = np.minimum(density.inverse_cdf(ur), R)
        mean_p = _pair_probability_sum(uphi * 2.0 * math.pi, r, f.a, f.b) / (m * (m - 1) / 2)
        est.append((n - 1) * mean_p)
    est = np.array(est)
    err = est.std(ddof=1) / math.sqrt(est.size) if est.size > 1 else float("nan")
    return float(est.mean()), float(err)


def calibrate_radius(n: int, alpha: float, temperature: float, target_k: float, seed=0,
                     sample_size: int = 2048, replicates: int = 4, bracket=None,
                     rel_tol: float = 1e-3, max_iter: int = 100) -> Calibration:
    """Bisect on ``R`` until the Monte-Carlo expected degree matches ``target_k``.

    The same uniforms are reused at every ``R`` so the estimate is a smooth
    function of ``R``.
    """
    if not 0.0 < target_k < n - 1:
        raise ValueError(f"target degree must lie in (0, n-1) = (0, {n - 1}), got {target_k}")
    connection_function(1.0, temperature)  # validates T
    m = max(2, min(n, sample_size))
    rng = np.random.default_rng(seed)
    u_phi = rng.random((replicates, m))
    # one radius per quantile stratum; the rare small radii dominate the variance
    u_r = (np.array([rng.permutation(m) for _ in range(replicates)]) + rng.random((replicates, m))) / m
    lo, hi = bracket if bracket is not None else (0.01, 8.0 * math.log(max(n, 2)) / min(alpha, 1.0) + 40.0)
    k_lo, _ = expected_degree(n, alpha, temperature, lo, u_phi, u_r)
    k_hi, _ = expected_degree(n, alpha, temperature, hi, u_phi, u_r)
    if not k_hi <= target_k <= k_lo:
        raise CalibrationError(
            f"radius bracket [{lo}, {hi}] gives expected degrees [{k_hi:.4g}, {k_lo:.4g}], "
            f"which does not contain the target {target_k}"
        )
    it = 0
    mid, k_mid, err = lo, k_lo, float("nan")
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        k_mid, err = expected_degree(n, alpha, temperature, mid, u_phi, u_r)
        if abs(k_mid - target_k) <= rel_tol * target_k or hi - lo < 1e-9:
            break
        if k_mid > target_k:
            lo = mid
        else:
            hi = mid
    return Calibration(float(mid), k_mid, err, it)


# --------------------------------------------------------------------------
# metrics


@dataclass
class GraphMetrics:
    avg_degree: float
    clustering_coefficient: float
    degree_assortativity: float
    degree_histogram: np.ndarray  # index = degree


def graph_metrics(e: EdgeList) -> GraphMetrics:
    """Average degree, global clustering (transitivity), degree assortativity, degree histogram."""
    deg = e.degrees()
    avg = 2.0 * len(e) / e.n if e.n else 0.0
    hist = np.bincount(deg) if deg.size else np.zeros(1, dtype=np.int64)

    triads = float((deg * (deg - 1)).sum())  # twice the number of connected triples
    if triads > 0:
        ones = np.ones(len(e), dtype=np.float64)
        A = sparse.coo_matrix((ones, (e.u, e.v)), shape=(e.n, e.n)).tocsr()
        A = A + A.T
        closed = float((A @ A).multiply(A).sum())  # six times the triangle count
        clustering = closed / triads
    else:
        clustering = 0.0

    if len(e):
        x = np.concatenate([deg[e.u], deg[e.v]]).astype(np.float64)
        y = np.concatenate([deg[e.v], deg[e.u]]).astype(np.float64)
        sx, sy = x.std(), y.std()
        assort = float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy)) if sx > 0 and sy > 0 else float("nan")
    else:
        assort = float("nan")
    return GraphMetrics(avg, clustering, assort, hist)


# --------------------------------------------------------------------------
# edge-list file


def write_edge_list(path, e: EdgeList, header: bool = True):
    with open(path, "w", newline="\n") as fh:
        if header:
            fh.write(f"# nodes={e.n}\n")
        fh.writelines(f"{a}\t{b}\n" for a, b in e.pairs())


def read_edge_list(path, n: int | None = None) -> EdgeList:
    us, vs = [], []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("nodes="):
                    try:
                        n = int(body[len("nodes="):])
                    except ValueError:
                        raise EdgeListError(f"{path}:{lineno}: bad node-count header {line!r}") from None
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise EdgeListError(f"{path}:{lineno}: expected 'u<TAB>v', got {line!r}")
            try:
                a, b = int(parts[0]), int(parts[1])
            except ValueError:
                raise EdgeListError(f"{path}:{lineno}: non-integer id in {line!r}") from None
            us.append(a)
            vs.append(b)
    if n is None:
        n = max(max(us, default=-1), max(vs, default=-1)) + 1
    try:
        return EdgeList(n, np.array(us, dtype=np.int64), np.array(vs, dtype=np.int64))
    except ValueError as exc:
        raise EdgeListError(f"{path}: {exc}") from None
