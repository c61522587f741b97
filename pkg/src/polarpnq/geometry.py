"""Polar points, distances and point-to-cell distance bounds.

Both geometries share the same polar coordinates ``(phi, r)``.  Distances are
evaluated with the half-angle forms of the law of cosines,

    Euclidean:   d^2        = (r1 - r2)^2 + 4 r1 r2 sin^2(dphi / 2)
    hyperbolic:  sinh^2(d/2) = sinh^2((r1 - r2) / 2) + sinh r1 sinh r2 sin^2(dphi / 2)

which agree with the textbook forms but keep full relative precision for
nearby points at large radii, where ``cosh r1 cosh r2 - sinh r1 sinh r2 cos dphi``
cancels badly.  Hyperbolic radii are valid up to roughly 350 (``sinh``
overflow).

The scalar kernels are compiled with numba so the quadtree queries can call
them from their inner loops; the Python-facing wrappers accept
:class:`PolarPoint` / :class:`CellBounds` objects.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np

TWO_PI = 2.0 * math.pi

EUCLIDEAN = 0
HYPERBOLIC = 1


class Geometry(enum.IntEnum):
    EUCLIDEAN = EUCLIDEAN
    HYPERBOLIC = HYPERBOLIC

    @classmethod
    def parse(cls, value: "Geometry | str | int") -> "Geometry":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            try:
                return cls[value.strip().upper()]
            except KeyError:
                raise ValueError(f"unknown geometry {value!r}") from None
        return cls(int(value))


def wrap_angle(phi: float) -> float:
    """Map an angle to [0, 2pi)."""
    phi = math.fmod(phi, TWO_PI)
    if phi < 0.0:
        phi += TWO_PI
    # fmod of a tiny negative value can round back up to exactly 2pi
    if phi >= TWO_PI:
        phi = 0.0
    return phi


def wrap_angles(phi: np.ndarray) -> np.ndarray:
    out = np.mod(np.asarray(phi, dtype=np.float64), TWO_PI)
    out[out >= TWO_PI] = 0.0
    return out


@dataclass(frozen=True)
class PolarPoint:
    phi: float
    r: float

    def __post_init__(self):
        phi = float(self.phi)
        r = float(self.r)
        if not (math.isfinite(phi) and math.isfinite(r)):
            raise ValueError(f"non-finite coordinates ({self.phi}, {self.r})")
        if r < 0.0:
            raise ValueError(f"negative radius r={r}")
        object.__setattr__(self, "phi", wrap_angle(phi))
        object.__setattr__(self, "r", r)


@dataclass(frozen=True)
class CellBounds:
    """Polar cell ``[min_phi, max_phi) x [min_r, max_r)``."""

    min_phi: float
    max_phi: float
    min_r: float
    max_r: float

    def __post_init__(self):
        if not (0.0 <= self.min_phi <= self.max_phi <= TWO_PI):
            raise ValueError(
                f"angular range [{self.min_phi}, {self.max_phi}] outside [0, 2pi]"
            )
        if not (0.0 <= self.min_r <= self.max_r):
            raise ValueError(f"radial range [{self.min_r}, {self.max_r}] invalid")

    def contains(self, p: PolarPoint) -> bool:
        return (self.min_phi <= p.phi < self.max_phi) and (self.min_r <= p.r < self.max_r)


class DistanceBounds(NamedTuple):
    infimum: float
    supremum: float


@numba.njit(cache=True, nogil=True)
def point_distance(kind, phi1, r1, phi2, r2):
    s = math.sin(0.5 * (phi1 - phi2))
    if kind == HYPERBOLIC:
        h = math.sinh(0.5 * (r1 - r2))
        return 2.0 * math.asinh(math.sqrt(h * h + math.sinh(r1) * math.sinh(r2) * s * s))
    dr = r1 - r2
    return math.sqrt(dr * dr + 4.0 * r1 * r2 * s * s)


@numba.njit(cache=True, nogil=True)
def _angular_boundary_extremum(kind, phi_a, phi_q, r_q):
    # radius at which the distance along the ray phi = phi_a is extremal
    c = math.cos(phi_q - phi_a)
    if kind == EUCLIDEAN:
        return r_q * c
    # 1/2 ln((a+b)/(a-b)), a = cosh r_q, b = sinh r_q cos(dphi); both factors
    # written as sums of nonnegative terms so nothing cancels at large r_q
    ch = math.cosh(r_q)
    if c >= 0.0:
        s = math.sin(0.5 * (phi_q - phi_a))
        num = ch + math.sinh(r_q) * c
        den = 2.0 * ch * s * s + math.exp(-r_q) * c
    else:
        h = math.cos(0.5 * (phi_q - phi_a))
        num = 2.0 * ch * h * h - math.exp(-r_q) * c
        den = ch - math.sinh(r_q) * c
    if den <= 0.0 or num <= 0.0:
        return -1.0
    return 0.5 * (math.log(num) - math.log(den))


@numba.njit(cache=True, nogil=True)
def cell_bounds(kind, min_phi, max_phi, min_r, max_r, phi_q, r_q):
    """Infimum and supremum of the distance from ``q`` to the polar cell."""
    lo = np.inf
    hi = 0.0
    for k in range(4):
        phi = min_phi if k < 2 else max_phi
        r = min_r if (k % 2) == 0 else max_r
        d = point_distance(kind, phi, r, phi_q, r_q)
        lo = min(lo, d)
        hi = max(hi, d)

    for k in range(2):
        phi_a = min_phi if k == 0 else max_phi
        ext = _angular_boundary_extremum(kind, phi_a, phi_q, r_q)
        if min_r < ext < max_r:
            d = point_distance(kind, phi_a, ext, phi_q, r_q)
            lo = min(lo, d)
            hi = max(hi, d)

    mirrored = phi_q + math.pi if phi_q < math.pi else phi_q - math.pi
    for k in range(2):
        phi_b = phi_q if k == 0 else mirrored
        if min_phi < phi_b < max_phi:
            d = point_distance(kind, phi_b, min_r, phi_q, r_q)
            lo = min(lo, d)
            hi = max(hi, d)
            d = point_distance(kind, phi_b, max_r, phi_q, r_q)
            lo = min(lo, d)
            hi = max(hi, d)

    if min_phi <= phi_q < max_phi and min_r <= r_q < max_r:
        lo = 0.0
    return lo, hi


@numba.njit(cache=True, nogil=True)
def _distances_to(kind, phi_q, r_q, phis, rs, out):
    for i in range(phis.shape[0]):
        out[i] = point_distance(kind, phis[i], rs[i], phi_q, r_q)
    return out


def distance(g: Geometry | str, p1: PolarPoint, p2: PolarPoint) -> float:
    return float(point_distance(int(Geometry.parse(g)), p1.phi, p1.r, p2.phi, p2.r))


def distances(g: Geometry | str, q: PolarPoint, phis, rs) -> np.ndarray:
    """Distances from ``q`` to many points given as coordinate arrays."""
    phis = np.ascontiguousarray(phis, dtype=np.float64)
    rs = np.ascontiguousarray(rs, dtype=np.float64)
    out = np.empty(phis.shape[0], dtype=np.float64)
    return _distances_to(int(Geometry.parse(g)), q.phi, q.r, phis, rs, out)


def cell_distance_bounds(g: Geometry | str, c: CellBounds, q: PolarPoint) -> DistanceBounds:
    lo, hi = cell_bounds(
        int(Geometry.parse(g)), c.min_phi, c.max_phi, c.min_r, c.max_r, q.phi, q.r
    )
    return DistanceBounds(float(lo), float(hi))


def to_cartesian(phi, r):
    """Euclidean embedding of polar coordinates as ``(x, y)`` arrays."""
    phi = np.asarray(phi, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    return r * np.cos(phi), r * np.sin(phi)
