import math

import numpy as np
import pytest

from polarpnq.pnq import ProbabilityFn
from polarpnq.reference import twin_sir
from polarpnq.spread import (
    RasterFormatError,
    RasterGrid,
    SeriesRow,
    SirState,
    SpreadParams,
    raster_to_points,
    read_raster,
    read_series,
    simulate,
    synthetic_raster,
    write_raster,
    write_series,
)

RASTER = """ncols 3
nrows 2
xllcorner 10.0
yllcorner -5.5
cellsize 2.0
1 0 4
0 2.5 7
"""


def clustered_points(n_target=2000, seed=0):
    grid = synthetic_raster(60, 60, n_target * 20, seed=seed)
    return raster_to_points(grid, 0.05, np.random.default_rng(seed + 1))


def assert_series_laws(rows, n):
    for a, b in zip(rows, rows[1:]):
        assert b.recovered >= a.recovered and b.susceptible <= a.susceptible
        assert a.susceptible - b.susceptible == b.new_infections
    for row in rows:
        assert row.susceptible + row.infected + row.recovered == n


# -- rasters -----------------------------------------------------------------


def test_raster_parse(tmp_path):
    path = tmp_path / "a.asc"
    path.write_text(RASTER)
    g = read_raster(path)
    assert (g.ncols, g.nrows, g.cell_size, g.origin) == (3, 2, 2.0, (10.0, -5.5))
    assert g.counts.tolist() == [[1, 0, 4], [0, 2.5, 7]]
    assert g.centroid == (13.0, -3.5)


def test_raster_roundtrip(tmp_path):
    g = synthetic_raster(7, 9, 5000, seed=3, cell_size=0.5)
    write_raster(tmp_path / "r.asc", g)
    back = read_raster(tmp_path / "r.asc")
    assert np.array_equal(back.counts, g.counts) and back.cell_size == 0.5 and back.origin == g.origin


@pytest.mark.parametrize(
    "text,fragment",
    [
        (RASTER.replace("ncols 3", "columns 3"), ":1:"),
        (RASTER.replace("1 0 4", "1 0"), ":6:"),
        (RASTER.replace("0 2.5 7", "0 x 7"), ":7:"),
        (RASTER.replace("0 2.5 7", "0 -1 7"), ":7:"),
        (RASTER.replace("0 2.5 7\n", ""), "expected 2 rows"),
        (RASTER.replace("cellsize 2.0\n", ""), "cellsize"),
        (RASTER.replace("cellsize 2.0", "cellsize 0"), "cell size"),
    ],
)
def test_raster_errors_name_the_line(tmp_path, text, fragment):
    path = tmp_path / "bad.asc"
    path.write_text(text)
    with pytest.raises(RasterFormatError, match=fragment):
        read_raster(path)


def test_grid_validation():
    with pytest.raises(ValueError):
        RasterGrid(2, 2, 1.0, (0, 0), np.ones((2, 3)))
    with pytest.raises(ValueError):
        RasterGrid(1, 1, 1.0, (0, 0), [[np.nan]])


# -- point synthesis ---------------------------------------------------------


def test_count_forty_at_one_twentieth_gives_two_points_inside():
    g = RasterGrid(1, 1, 3.0, (5.0, 7.0), [[40]])
    for seed in range(50):
        phi, r = raster_to_points(g, 1 / 20, np.random.default_rng(seed))
        assert phi.size == 2
        x, y = 6.5 + r * np.cos(phi), 8.5 + r * np.sin(phi)
        assert np.all((5.0 <= x) & (x <= 8.0) & (7.0 <= y) & (y <= 10.0))


def test_fractional_counts_round_stochastically():
    g = RasterGrid(1, 1, 1.0, (0.0, 0.0), [[50]])
    trials = 10_000
    rng = np.random.default_rng(0)
    sizes = np.array([raster_to_points(g, 0.05, rng)[0].size for _ in range(trials)])
    assert set(sizes.tolist()) == {2, 3}
    assert abs((sizes == 3).mean() - 0.5) <= 4 * math.sqrt(0.25 / trials)


def test_points_land_in_their_cells():
    g = RasterGrid(2, 2, 1.0, (0.0, 0.0), [[0, 20], [0, 0]])  # only the north-east cell is populated
    phi, r = raster_to_points(g, 1.0, np.random.default_rng(1))
    x, y = 1.0 + r * np.cos(phi), 1.0 + r * np.sin(phi)
    assert phi.size == 20 and np.all(x >= 1.0 - 1e-12) and np.all(y >= 1.0 - 1e-12)


def test_fraction_domain():
    g = RasterGrid(1, 1, 1.0, (0, 0), [[1]])
    for bad in (0.0, 1.5):
        with pytest.raises(ValueError):
            raster_to_points(g, bad, np.random.default_rng(0))


def test_zero_raster_yields_empty_point_set_error():
    g = RasterGrid(4, 4, 1.0, (0, 0), np.zeros((4, 4)))
    pts = raster_to_points(g, 0.05, np.random.default_rng(0))
    assert pts[0].size == 0
    with pytest.raises(ValueError, match="empty point set"):
        simulate(pts, "euclidean", SpreadParams(ProbabilityFn.constant(0.5)), seed=0)


# -- simulation --------------------------------------------------------------


def test_bad_initial_id():
    with pytest.raises(IndexError):
        SirState.initial(10, 10)
    pts = clustered_points(200)
    with pytest.raises(IndexError):
        simulate(pts, "euclidean", SpreadParams(ProbabilityFn.constant(0.5), initial_infected=-1), seed=0)


def test_params_validation():
    with pytest.raises(ValueError):
        SpreadParams(ProbabilityFn.constant(0.5), recovery_rate=1.2)
    with pytest.raises(ValueError):
        simulate(clustered_points(100), "euclidean", SpreadParams(ProbabilityFn.constant(0.5)), 0, backend="x")


@pytest.mark.parametrize("backend", ["aggregated", "baseline", "pdp"])
def test_nothing_spreads_with_zero_function(backend):
    pts = clustered_points(300)
    n = pts[0].size
    res = simulate(pts, "euclidean", SpreadParams(ProbabilityFn.constant(0.0), recovery_rate=1.0), 0, backend=backend)
    assert res.rows == [SeriesRow(0, n - 1, 1, 0, 1), SeriesRow(1, n - 1, 0, 1, 0)]
    assert res.queries == 1


def test_everyone_infected_with_unit_function():
    pts = clustered_points(300)
    n = pts[0].size
    res = simulate(pts, "euclidean", SpreadParams(ProbabilityFn.constant(1.0), recovery_rate=1.0), 0)
    assert res.rows == [SeriesRow(0, n - 1, 1, 0, 1), SeriesRow(1, 0, n - 1, 1, n - 1), SeriesRow(2, 0, 0, n, 0)]

    stay = simulate(pts, "euclidean", SpreadParams(ProbabilityFn.constant(1.0), recovery_rate=0.0, steps=4), 0)
    assert all(row.infected == n for row in stay.rows[1:]) and len(stay.rows) == 5


def test_series_laws_on_clustered_points():
    pts = clustered_points(3000)
    n = pts[0].size
    f = ProbabilityFn.inverse_distance(math.exp(7) / n)
    res = simulate(pts, "euclidean", SpreadParams(f, steps=200), seed=4)
    assert_series_laws(res.rows, n)
    assert res.queries == sum(row.infected for row in res.rows[:-1])


def test_pdp_backend_equals_independent_twin():
    pts = clustered_points(1500, seed=2)
    n = pts[0].size
    f = ProbabilityFn.inverse_distance(math.exp(7) / n)
    res = simulate(pts, "euclidean", SpreadParams(f, initial_infected=17, steps=30), seed=8, backend="pdp")
    twin = twin_sir(pts, "euclidean", f, 0.8, 17, 30, seed=8)
    assert [tuple(row) for row in res.rows] == twin
    assert len(twin) > 3


def test_first_round_size_matches_probability_mass():
    # new infections after round one are a sum of independent Bernoullis
    pts = clustered_points(1500, seed=5)
    phi, r = pts
    n = phi.size
    f = ProbabilityFn.inverse_distance(30 / n)
    x, y = r * np.cos(phi), r * np.sin(phi)
    p = f(np.hypot(x - x[0], y - y[0]))
    p[0] = 0.0
    firsts = np.array([
        simulate(pts, "euclidean", SpreadParams(f, steps=1), seed=s).rows[1].new_infections for s in range(400)
    ])
    sd = math.sqrt((p * (1 - p)).sum() / firsts.size)
    assert abs(firsts.mean() - p.sum()) <= 4 * sd


def test_thread_count_does_not_change_series():
    pts = clustered_points(2000, seed=6)
    f = ProbabilityFn.inverse_distance(math.exp(7) / pts[0].size)
    a = simulate(pts, "euclidean", SpreadParams(f), seed=3, threads=1)
    b = simulate(pts, "euclidean", SpreadParams(f), seed=3, threads=4)
    assert a.rows == b.rows and a.queries == b.queries


def test_series_roundtrip(tmp_path):
    rows = [SeriesRow(0, 9, 1, 0, 1), SeriesRow(1, 7, 2, 1, 2)]
    write_series(tmp_path / "s.csv", rows)
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "step,susceptible,infected,recovered,new_infections"
    assert read_series(tmp_path / "s.csv") == rows
    (tmp_path / "t.csv").write_text("step,susceptible,infected,recovered,new_infections\n0,1,x,0,1\n")
    with pytest.raises(ValueError, match=":2:"):
        read_series(tmp_path / "t.csv")
