"""SIR spreading over points synthesised from a population raster.

Every round each infected point runs one neighborhood query; susceptible
points in the union of the results become infected for the next round, and
each infected point recovers with a fixed probability at the end of the
round.  Recovered points stay recovered.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geometry import Geometry, wrap_angles
from .pnq import ProbabilityFn, child_seed, query_batch
from .quadtree import DEFAULT_CAPACITY, RadialDensity, build
from .reference import pdp_batch

BACKENDS = ("aggregated", "baseline", "pdp")
SERIES_HEADER = ["step", "susceptible", "infected", "recovered", "new_infections"]
_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize")


class RasterFormatError(ValueError):
    pass


@dataclass
class RasterGrid:
    """Population counts on a regular grid; row 0 is the northernmost row."""

    ncols: int
    nrows: int
    cell_size: float
    origin: tuple[float, float]  # lower-left corner
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.float64)
        if self.ncols < 1 or self.nrows < 1:
            raise ValueError(f"raster dimensions must be positive, got {self.nrows}x{self.ncols}")
        if self.counts.shape != (self.nrows, self.ncols):
            raise ValueError(f"counts shape {self.counts.shape} does not match {self.nrows}x{self.ncols}")
        if not self.cell_size > 0.0:
            raise ValueError(f"cell size must be positive, got {self.cell_size}")
        if not np.all(np.isfinite(self.counts)) or np.any(self.counts < 0):
            raise ValueError("raster counts must be finite and nonnegative")

    @property
    def centroid(self) -> tuple[float, float]:
        x0, y0 = self.origin
        return x0 + 0.5 * self.ncols * self.cell_size, y0 + 0.5 * self.nrows * self.cell_size


def read_raster(path) -> RasterGrid:
    header: dict[str, float] = {}
    rows: list[list[float]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            key = parts[0].lower()
            if len(header) < len(_HEADER_KEYS) and not rows:
                if key not in _HEADER_KEYS:
                    raise RasterFormatError(f"{path}:{lineno}: expected one of {_HEADER_KEYS}, got {parts[0]!r}")
                if key in header or len(parts) != 2:
                    raise RasterFormatError(f"{path}:{lineno}: malformed header line {line.strip()!r}")
                try:
                    header[key] = int(parts[1]) if key in ("ncols", "nrows") else float(parts[1])
                except ValueError:
                    raise RasterFormatError(f"{path}:{lineno}: bad value for {key}: {parts[1]!r}") from None
                continue
            ncols = int(header["ncols"])
            if len(parts) != ncols:
                raise RasterFormatError(f"{path}:{lineno}: expected {ncols} values, got {len(parts)}")
            try:
                vals = [float(x) for x in parts]
            except ValueError:
                raise RasterFormatError(f"{path}:{lineno}: non-numeric count in row") from None
            if any(not math.isfinite(v) or v < 0 for v in vals):
                raise RasterFormatError(f"{path}:{lineno}: counts must be finite and nonnegative")
            rows.append(vals)
            if len(rows) > header["nrows"]:
                raise RasterFormatError(f"{path}:{lineno}: more than nrows={int(header['nrows'])} rows")
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise RasterFormatError(f"{path}: header lacks {', '.join(missing)}")
    if len(rows) != header["nrows"]:
        raise RasterFormatError(f"{path}: expected {int(header['nrows'])} rows, found {len(rows)}")
    try:
        return RasterGrid(int(header["ncols"]), int(header["nrows"]), header["cellsize"],
                          (header["xllcorner"], header["yllcorner"]), np.array(rows))
    except ValueError as exc:
        raise RasterFormatError(f"{path}: {exc}") from None


def write_raster(path, grid: RasterGrid):
    with open(path, "w", newline="\n") as fh:
        fh.write(f"ncols {grid.ncols}\nnrows {grid.nrows}\n")
        fh.write(f"xllcorner {grid.origin[0]!r}\nyllcorner {grid.origin[1]!r}\ncellsize {grid.cell_size!r}\n")
        for row in grid.counts:
            fh.write(" ".join(f"{v:g}" for v in row) + "\n")


def synthetic_raster(nrows: int, ncols: int, population: int, seed=0, clusters: int = 6,
                     background: float = 0.1, cell_size: float = 1.0) -> RasterGrid:
    """Clustered population: Gaussian settlements over a thin uniform background."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:nrows, 0:ncols]
    weight = np.full((nrows, ncols), background / (nrows * ncols))
    cx = rng.random(clusters) * ncols
    cy = rng.random(clusters) * nrows
    spread = (0.03 + 0.07 * rng.random(clusters)) * min(nrows, ncols)
    mass = rng.dirichlet(np.ones(clusters)) * (1.0 - background)
    for x, y, s, m in zip(cx, cy, spread, mass):
        g = np.exp(-((xx - x) ** 2 + (yy - y) ** 2) / (2.0 * s * s))
        weight += m * g / g.sum()
    counts = rng.multinomial(population, (weight / weight.sum()).ravel()).reshape(nrows, ncols)
    return RasterGrid(ncols, nrows, float(cell_size), (0.0, 0.0), counts)


def raster_to_points(grid: RasterGrid, fraction: float, rng: np.random.Generator):
    """Scatter ``count * fraction`` points (stochastically rounded) uniformly in each cell.

    Returns polar ``(phi, r)`` arrays about the raster centroid.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    target = grid.counts.ravel() * fraction
    base = np.floor(target)
    per_cell = (base + (rng.random(target.size) < target - base)).astype(np.int64)
    cell = np.repeat(np.arange(target.size), per_cell)
    row, col = np.divmod(cell, grid.ncols)
    x0, y0 = grid.origin
    x = x0 + (col + rng.random(cell.size)) * grid.cell_size
    y = y0 + (grid.nrows - 1 - row + rng.random(cell.size)) * grid.cell_size
    cx, cy = grid.centroid
    dx, dy = x - cx, y - cy
    return wrap_angles(np.arctan2(dy, dx)), np.hypot(dx, dy)


# --------------------------------------------------------------------------
# simulation


class Status(enum.IntEnum):
    SUSCEPTIBLE = 0
    INFECTED = 1
    RECOVERED = 2


@dataclass
class SirState:
    status: np.ndarray  # int8 per point
    step: int = 0

    @classmethod
    def initial(cls, n: int, infected: int) -> "SirState":
        if not 0 <= infected < n:
            raise IndexError(f"initial infected id {infected} outside [0, {n})")
        status = np.zeros(n, dtype=np.int8)
        status[infected] = Status.INFECTED
        return cls(status)

    def counts(self) -> tuple[int, int, int]:
        c = np.bincount(self.status, minlength=3)
        return int(c[0]), int(c[1]), int(c[2])


@dataclass(frozen=True)
class SpreadParams:
    f: ProbabilityFn
    initial_infected: int = 0
    steps: int = 100
    recovery_rate: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.recovery_rate <= 1.0:
            raise ValueError(f"recovery rate must lie in [0, 1], got {self.recovery_rate}")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")


class SeriesRow(NamedTuple):
    step: int
    susceptible: int
    infected: int
    recovered: int
    new_infections: int


@dataclass
class SpreadResult:
    rows: list[SeriesRow]
    queries: int


def simulate(points, g, params: SpreadParams, seed, backend: str = "aggregated",
             threads: int = 1, capacity: int = DEFAULT_CAPACITY) -> SpreadResult:
    """Run SIR rounds until ``params.steps`` rounds pass or nobody is infected.

    Round ``k`` draws its queries from ``child_seed(seed, k, 0)`` (chunked by
    sorted infected id) and its recoveries from ``child_seed(seed, k, 1)``.
    """
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")
    phi, r = (np.asarray(a, dtype=np.float64) for a in points)
    n = phi.shape[0]
    if n == 0:
        raise ValueError("empty point set")
    state = SirState.initial(n, params.initial_infected)
    g = Geometry.parse(g)
    tree = None if backend == "pdp" else build((phi, r), g, RadialDensity.empirical(), capacity)

    s, i, rec = state.counts()
    rows = [SeriesRow(0, s, i, rec, 1)]
    queries = 0
    for step in range(params.steps):
        infected = np.flatnonzero(state.status == Status.INFECTED)
        if infected.size == 0:
            break
        qseed = child_seed(seed, step, 0)
        if tree is None:
            batch = pdp_batch((phi, r), g, phi[infected], r[infected], params.f, qseed, threads=threads)
        else:
            batch = query_batch(tree, phi[infected], r[infected], params.f, qseed, method=backend, threads=threads)
        queries += infected.size
        hit = np.unique(batch.ids)
        new = hit[state.status[hit] == Status.SUSCEPTIBLE]
        coins = np.random.default_rng(child_seed(seed, step, 1)).random(infected.size)
        state.status[infected[coins < params.recovery_rate]] = Status.RECOVERED
        state.status[new] = Status.INFECTED
        state.step = step + 1
        s, i, rec = state.counts()
        rows.append(SeriesRow(step + 1, s, i, rec, int(new.size)))
    return SpreadResult(rows, queries)


def write_series(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_HEADER)
        w.writerows(rows)


def read_series(path) -> list[SeriesRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SERIES_HEADER:
            raise ValueError(f"{path}:1: expected header {','.join(SERIES_HEADER)}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(SeriesRow(*(int(v) for v in row)))
            except (TypeError, ValueError):
                raise ValueError(f"{path}:{lineno}: malformed row {row!r}") from None
        return out
