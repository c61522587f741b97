"""Probabilistic neighborhood queries on polar quadtrees."""
from .geometry import CellBounds, DistanceBounds, Geometry, PolarPoint, cell_distance_bounds, distance
from .pnq import (
    BoundViolation,
    ProbabilityFn,
    QueryOutcome,
    QueryStats,
    maybe_get_kth_element,
    query_aggregated,
    query_baseline,
    query_batch,
    skip_delta,
)
from .quadtree import PolarQuadtree, QuadtreeNode, RadialDensity, build, split_cell
from .reference import FrequencyTable, frequency_compare, pdp_query

__all__ = [
    "BoundViolation",
    "CellBounds",
    "DistanceBounds",
    "FrequencyTable",
    "Geometry",
    "PolarPoint",
    "PolarQuadtree",
    "ProbabilityFn",
    "QuadtreeNode",
    "QueryOutcome",
    "QueryStats",
    "RadialDensity",
    "build",
    "cell_distance_bounds",
    "distance",
    "frequency_compare",
    "maybe_get_kth_element",
    "pdp_query",
    "query_aggregated",
    "query_baseline",
    "query_batch",
    "skip_delta",
    "split_cell",
]
