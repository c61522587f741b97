"""Command-line entry point: ``polarpnq {generate,spread,validate,bench}``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import math
import re
import statistics
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import rhg, spread
from .geometry import Geometry, PolarPoint, distances
from .pnq import ProbabilityFn, child_seed, query_batch
from .quadtree import DEFAULT_CAPACITY, RadialDensity, build
from .reference import FrequencyTable, bonferroni_z, frequency_compare, low_power, marginal_check, pdp_batch

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_USAGE = 2
EXIT_INPUT = 3

VALIDATE_COLUMNS = [
    "point_id", "distance", "expected_p", "freq_pdp", "freq_baseline", "freq_aggregated",
    "z_base", "z_aggr", "warning",
]


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


# --------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    if args.temperature == 0.0:
        raise UsageError("--temperature 0 is the threshold model, which this generator does not cover; use T > 0")
    try:
        params = rhg.RhgParams(args.n, args.alpha, args.temperature, R=args.radius, target_avg_degree=args.avg_degree)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    R = params.R
    if R is None:
        try:
            R = rhg.calibrate_radius(params.n, params.alpha, params.temperature, params.target_avg_degree,
                                     seed=child_seed(args.seed, 2)).R
        except (ValueError, rhg.CalibrationError) as exc:
            raise UsageError(str(exc)) from None
    params = dataclasses.replace(params, R=R, target_avg_degree=None)
    edges = rhg.generate(params, args.seed, threads=args.threads, method=args.method, capacity=args.capacity)
    try:
        rhg.write_edge_list(args.out, edges)
    except OSError as exc:
        raise InputError(f"cannot write {args.out}: {exc}") from None
    m = rhg.graph_metrics(edges)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["n", "edges", "radius", "avg_degree", "clustering", "assortativity"])
    w.writerow([edges.n, len(edges), f"{R:.10g}", f"{m.avg_degree:.6g}", f"{m.clustering_coefficient:.6g}",
                f"{m.degree_assortativity:.6g}"])
    return EXIT_OK


# --------------------------------------------------------------------------
# spread


def _parse_shape(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", text)
    if not m:
        raise argparse.ArgumentTypeError(f"expected ROWSxCOLS, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def spread_points(args):
    if args.raster:
        try:
            grid = spread.read_raster(args.raster)
        except OSError as exc:
            raise InputError(f"cannot read {args.raster}: {exc}") from None
        except spread.RasterFormatError as exc:
            raise InputError(str(exc)) from None
    else:
        rows, cols = args.synthetic
        grid = spread.synthetic_raster(rows, cols, args.population, seed=child_seed(args.seed, 1))
    return spread.raster_to_points(grid, args.fraction, np.random.default_rng(child_seed(args.seed, 0)))


def cmd_spread(args) -> int:
    if not 0.0 < args.fraction <= 1.0:
        raise UsageError("--fraction must lie in (0, 1]")
    if not 0.0 <= args.recovery <= 1.0:
        raise UsageError("--recovery must lie in [0, 1]")
    if args.f_scale < 0.0:
        raise UsageError("--f-scale must be nonnegative")
    phi, r = spread_points(args)
    n = phi.shape[0]
    if n == 0:
        raise InputError("empty point set")
    if not 0 <= args.initial < n:
        raise UsageError(f"--initial {args.initial} outside [0, {n})")
    f = ProbabilityFn.inverse_distance(args.f_scale * math.exp(7.0) / n)
    params = spread.SpreadParams(f, args.initial, args.steps, args.recovery)
    result = spread.simulate((phi, r), Geometry.EUCLIDEAN, params, child_seed(args.seed, 2),
                             backend=args.backend, threads=args.threads, capacity=args.capacity)
    try:
        spread.write_series(args.out, result.rows)
    except OSError as exc:
        raise InputError(f"cannot write {args.out}: {exc}") from None
    print(f"points={n} steps={len(result.rows) - 1} queries={result.queries}")
    return EXIT_OK


# --------------------------------------------------------------------------
# validate


@dataclass
class ValidationSetup:
    geometry: Geometry
    phi: np.ndarray
    r: np.ndarray
    density: RadialDensity
    query: PolarPoint
    f: ProbabilityFn


def validation_setup(geometry, n: int, seed) -> ValidationSetup:
    """Fixed-query configuration used by the validation run.

    Hyperbolic: disk of radius 7.78 with alpha = 1 and edge function
    ``1 / (exp(d - 7.78) + 1)``.  Euclidean: unit-density disk with a
    logistic function whose midpoint is half the disk radius.
    """
    g = Geometry.parse(geometry)
    rng = np.random.default_rng(child_seed(seed, 0))
    if g == Geometry.HYPERBOLIC:
        density = RadialDensity.hyperbolic(1.0, 7.78)
        f = ProbabilityFn.logistic(7.78, 1.0)
        q = PolarPoint(1.0, 3.0)
    else:
        R = math.sqrt(n / math.pi)
        density = RadialDensity.euclidean_uniform(R)
        f = ProbabilityFn.logistic(0.5 * R, 0.1 * R)
        q = PolarPoint(1.0, 0.3 * R)
    phi, r = density.sample(n, rng)
    return ValidationSetup(g, phi, r, density, q, f)


@dataclass
class ValidationReport:
    distance: np.ndarray
    expected: np.ndarray
    pdp: FrequencyTable
    baseline: FrequencyTable
    aggregated: FrequencyTable
    z_base: np.ndarray
    z_aggr: np.ndarray
    underpowered: np.ndarray
    failures: list  # (method, point id) pairs

    @property
    def ok(self) -> bool:
        return not self.failures


def repeated_query_table(method, setup: ValidationSetup, tree, f, trials, seed, threads=1) -> FrequencyTable:
    n = setup.phi.shape[0]
    qphi = np.full(trials, setup.query.phi)
    qr = np.full(trials, setup.query.r)
    if method == "pdp":
        batch = pdp_batch((setup.phi, setup.r), setup.geometry, qphi, qr, f, seed, threads=threads)
    else:
        batch = query_batch(tree, qphi, qr, f, seed, method=method, threads=threads)
    return FrequencyTable(np.full(n, trials), np.bincount(batch.ids, minlength=n))


def run_validation(setup: ValidationSetup, trials: int, seed, capacity: int = 8, bias: float | None = None,
                   threads: int = 1) -> ValidationReport:
    """Three-way frequency comparison; ``bias`` scales f inside the aggregated query only."""
    tree = build((setup.phi, setup.r), setup.geometry, setup.density, capacity)
    d = distances(setup.geometry, setup.query, setup.phi, setup.r)
    expected = setup.f(d)
    f_aggr = setup.f if bias is None else setup.f.scaled(bias)
    pdp = repeated_query_table("pdp", setup, tree, setup.f, trials, child_seed(seed, 1), threads)
    base = repeated_query_table("baseline", setup, tree, setup.f, trials, child_seed(seed, 2), threads)
    aggr = repeated_query_table("aggregated", setup, tree, f_aggr, trials, child_seed(seed, 3), threads)
    cmp_base = frequency_compare(pdp, base)
    cmp_aggr = frequency_compare(pdp, aggr)
    weak = low_power(trials, expected)
    failures = [("baseline", i) for i in cmp_base.failures] + [("aggregated", i) for i in cmp_aggr.failures]
    for name, table in (("pdp", pdp), ("baseline", base), ("aggregated", aggr)):
        rep = marginal_check(table, expected, bonferroni=True)
        failures += [(name + "-vs-expected", i) for i in rep.failures if not weak[i]]
    return ValidationReport(d, expected, pdp, base, aggr, cmp_base.z, cmp_aggr.z, weak, failures)


def write_validation_csv(path, rep: ValidationReport):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VALIDATE_COLUMNS)
        fp, fb, fa = rep.pdp.frequencies, rep.baseline.frequencies, rep.aggregated.frequencies
        for i in range(rep.expected.shape[0]):
            w.writerow([
                i, f"{rep.distance[i]:.12g}", f"{rep.expected[i]:.12g}", f"{fp[i]:.8g}", f"{fb[i]:.8g}",
                f"{fa[i]:.8g}", f"{rep.z_base[i]:.6g}", f"{rep.z_aggr[i]:.6g}",
                "insufficient power" if rep.underpowered[i] else "",
            ])


def cmd_validate(args) -> int:
    if args.n < 1 or args.trials < 1:
        raise UsageError("--n and --trials must be positive")
    if args.inject_bias is not None and not 0.0 <= args.inject_bias <= 1.0:
        raise UsageError("--inject-bias gain must lie in [0, 1]")
    setup = validation_setup(args.geometry, args.n, args.seed)
    rep = run_validation(setup, args.trials, args.seed, capacity=args.capacity, bias=args.inject_bias,
                         threads=args.threads)
    if args.out:
        try:
            write_validation_csv(args.out, rep)
        except OSError as exc:
            raise InputError(f"cannot write {args.out}: {exc}") from None
    print(f"points={args.n} trials={args.trials} threshold_z={bonferroni_z(args.n):.3f} "
          f"underpowered={int(rep.underpowered.sum())} failures={len(rep.failures)}")
    for name, pid in rep.failures[:20]:
        print(f"FAIL {name} point {pid}")
    return EXIT_OK if rep.ok else EXIT_VALIDATION


# --------------------------------------------------------------------------
# bench


@dataclass
class BenchRecord:
    scenario: str
    n: int
    capacity: int
    queries: int
    threads: int
    build_s: float
    pdp_s: float
    baseline_s: float
    aggregated_s: float
    mean_neighbors: float
    mean_candidates: float
    mean_cells: float
    mean_baseline_cells: float

    def __post_init__(self):
        if self.queries < 1:
            raise ValueError("a bench record needs at least one query")


def _median_time(fn, reps):
    times, out = [], None
    for _ in range(reps):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def unit_density_disk(n: int) -> RadialDensity:
    """Uniform Euclidean disk holding one point per unit area."""
    return RadialDensity.euclidean_uniform(math.sqrt(max(n, 1) / math.pi))


def bench_pnq(n: int, queries: int, seed, capacity: int = DEFAULT_CAPACITY, reps: int = 3, threads: int = 1,
              f: ProbabilityFn | None = None, with_pdp: bool = True, with_baseline: bool = True) -> BenchRecord:
    """Time ``queries`` random queries over ``n`` uniform points with ``f(x) = e^7 / (n x)``."""
    density = unit_density_disk(n)
    phi, r = density.sample(n, np.random.default_rng(child_seed(seed, n, 0)))
    qphi, qr = density.sample(queries, np.random.default_rng(child_seed(seed, n, 1)))
    f = f or ProbabilityFn.inverse_distance(math.exp(7.0) / n)
    g = Geometry.EUCLIDEAN
    build_s, tree = _median_time(lambda: build((phi, r), g, density, capacity), reps)
    tree.frozen()
    qseed = child_seed(seed, n, 2)
    aggr_s, aggr = _median_time(lambda: query_batch(tree, qphi, qr, f, qseed, threads=threads), reps)
    base_s, base = float("nan"), None
    if with_baseline:
        base_s, base = _median_time(lambda: query_batch(tree, qphi, qr, f, qseed, "baseline", threads=threads), reps)
    pdp_s = float("nan")
    if with_pdp:
        pdp_s, _ = _median_time(lambda: pdp_batch((phi, r), g, qphi, qr, f, qseed, threads=threads), reps)
    return BenchRecord(
        "pnq", n, capacity, queries, threads, build_s, pdp_s, base_s, aggr_s,
        aggr.ids.shape[0] / queries, aggr.stats.candidates_examined / queries,
        aggr.stats.cells_examined / queries,
        base.stats.cells_examined / queries if base is not None else float("nan"),
    )


def bench_rhg(n: int, seed, capacity: int = DEFAULT_CAPACITY, reps: int = 3, threads: int = 1, alpha: float = 1.0,
              temperature: float = 0.5, avg_degree: float = 6.0, radius: float | None = None,
              with_pdp: bool = True, with_baseline: bool = False) -> BenchRecord:
    """Time one graph generation (``n`` queries) per method; the radius is calibrated outside the timing."""
    R = radius or rhg.calibrate_radius(n, alpha, temperature, avg_degree, seed=child_seed(seed, n, 3)).R
    phi, r = rhg.sample_points(n, alpha, R, np.random.default_rng(child_seed(seed, n, 0)))
    qseed = child_seed(seed, n, 1)

    def run(method):
        t0 = time.perf_counter()
        out = rhg.sample_edges(phi, r, R, temperature, qseed, method=method, threads=threads,
                               capacity=capacity, alpha=alpha)
        return time.perf_counter() - t0, out

    aggr_s, (edges, aggr) = _median_run(run, "aggregated", reps)
    pdp_s = _median_run(run, "pdp", reps)[0] if with_pdp else float("nan")
    base_s, base = float("nan"), None
    if with_baseline:
        base_s, (_, base) = _median_run(run, "baseline", reps)
    build_s, _ = _median_time(lambda: build((phi, r), Geometry.HYPERBOLIC, RadialDensity.hyperbolic(alpha, R),
                                            capacity), reps)
    return BenchRecord("rhg", n, capacity, n, threads, build_s, pdp_s, base_s, aggr_s,
                       2.0 * len(edges) / n, aggr.candidates_examined / n, aggr.cells_examined / n,
                       base.cells_examined / n if base is not None else float("nan"))


def _median_run(run, method, reps):
    results = [run(method) for _ in range(reps)]
    return statistics.median(t for t, _ in results), results[0][1]


def warm_up():
    """Load or compile every kernel once so timings exclude JIT work."""
    bench_pnq(64, 4, 0, reps=1)
    bench_rhg(64, 0, reps=1, radius=5.0, with_baseline=True)


def _parse_sizes(text: str) -> list[int]:
    m = re.fullmatch(r"\s*2\^(\d+)\s*\.\.\s*2\^(\d+)\s*", text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if lo > hi:
            raise argparse.ArgumentTypeError(f"empty size range {text!r}")
        return [2 ** k for k in range(lo, hi + 1)]
    out = []
    for part in text.split(","):
        part = part.strip()
        try:
            out.append(2 ** int(part[2:]) if part.startswith("2^") else int(part))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad size {part!r}") from None
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError(f"sizes must be positive, got {text!r}")
    return out


def _parse_int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return vals


def cmd_bench(args) -> int:
    capacities = args.capacity_sweep or [args.capacity]
    warm_up()
    records = []
    for n in args.sizes:
        for cap in capacities:
            if args.scenario == "pnq":
                rec = bench_pnq(n, args.queries, args.seed, cap, args.reps, args.threads,
                                with_pdp=not args.no_pdp)
            else:
                rec = bench_rhg(n, args.seed, cap, args.reps, args.threads, with_pdp=not args.no_pdp,
                                with_baseline=args.with_baseline)
            records.append(rec)
            print(f"{rec.scenario} n={rec.n} capacity={rec.capacity} aggregated={rec.aggregated_s:.4f}s "
                  f"baseline={rec.baseline_s:.4f}s pdp={rec.pdp_s:.4f}s", file=sys.stderr)
    fields = [f.name for f in dataclasses.fields(BenchRecord)]
    try:
        fh = open(args.out, "w", newline="") if args.out else sys.stdout
    except OSError as exc:
        raise InputError(f"cannot write {args.out}: {exc}") from None
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for rec in records:
            w.writerow([getattr(rec, k) for k in fields])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def read_bench_csv(path) -> list[BenchRecord]:
    types = {f.name: f.type for f in dataclasses.fields(BenchRecord)}
    conv = {"str": str, "int": int, "float": float}
    with open(path, newline="") as fh:
        return [BenchRecord(**{k: conv[types[k]](v) for k, v in row.items()}) for row in csv.DictReader(fh)]


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polarpnq", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="random hyperbolic graph to an edge-list file")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--alpha", type=float, default=1.0)
    g.add_argument("--temperature", type=float, default=0.5)
    which = g.add_mutually_exclusive_group(required=True)
    which.add_argument("--radius", type=float)
    which.add_argument("--avg-degree", type=float)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--method", choices=("aggregated", "baseline", "pdp"), default="aggregated")
    g.add_argument("--capacity", type=int, default=DEFAULT_CAPACITY)
    g.add_argument("--threads", type=int, default=1)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("spread", help="SIR simulation over raster-derived points")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--raster", help="ESRI-ASCII-like population raster")
    src.add_argument("--synthetic", type=_parse_shape, metavar="ROWSxCOLS",
                     help="generate a clustered raster instead of reading one")
    s.add_argument("--population", type=int, default=200_000, help="total population of a synthetic raster")
    s.add_argument("--fraction", type=float, default=0.05)
    s.add_argument("--steps", type=int, default=100)
    s.add_argument("--recovery", type=float, default=0.8)
    s.add_argument("--f-scale", type=float, default=1.0, help="f(x) = scale * e^7 / (n x), capped at 1")
    s.add_argument("--initial", type=int, default=0, help="id of the first infected point")
    s.add_argument("--backend", choices=spread.BACKENDS, default="aggregated")
    s.add_argument("--capacity", type=int, default=DEFAULT_CAPACITY)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_spread)

    v = sub.add_parser("validate", help="compare query frequencies against pairwise probing")
    v.add_argument("--geometry", choices=("hyperbolic", "euclidean"), default="hyperbolic")
    v.add_argument("--n", type=int, default=200)
    v.add_argument("--trials", type=int, default=20_000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--capacity", type=int, default=8)
    v.add_argument("--out")
    v.add_argument("--inject-bias", type=float, nargs="?", const=0.8, default=None, metavar="GAIN",
                   help="scale f by GAIN inside the aggregated query (fault injection)")
    v.add_argument("--threads", type=int, default=1)
    v.set_defaults(func=cmd_validate)

    b = sub.add_parser("bench", help="timing records as CSV")
    b.add_argument("--scenario", choices=("pnq", "rhg"), default="pnq")
    b.add_argument("--sizes", type=_parse_sizes, default=_parse_sizes("2^10..2^18"))
    b.add_argument("--queries", type=int, default=5000)
    b.add_argument("--capacity", type=int, default=DEFAULT_CAPACITY)
    b.add_argument("--capacity-sweep", type=_parse_int_list, nargs="?", const=[8, 32, 128, 1024], default=None)
    b.add_argument("--reps", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--no-pdp", action="store_true", help="skip the pairwise-probing timings")
    b.add_argument("--with-baseline", action="store_true", help="also time baseline generation (rhg)")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("threads", "capacity", "reps", "queries", "steps"):
        if getattr(args, name, 1) is not None and getattr(args, name, 1) < (0 if name == "steps" else 1):
            parser.error(f"--{name} must be positive")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except InputError as exc:
        print(f"polarpnq: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
