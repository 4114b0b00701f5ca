"""Navigation graph construction: sampling, greedy node placement, edges, coverage."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..scene.types import NavGraph, NavigabilityField
from .geodesic import GeodesicGrid
from .visibility import visibility_check


@dataclass(frozen=True)
class GraphParams:
    sample_count: int = 20_000
    min_node_spacing: float = 2.0
    max_edge_geodesic: float = 3.0
    min_visibility_depth: float = 2.0
    coverage_radius: float = 2.0
    visibility_window_deg: float = 20.0
    visibility_samples: int = 9
    symmetric_visibility: bool = True

    def __post_init__(self):
        for name in ("sample_count", "min_node_spacing", "max_edge_geodesic", "min_visibility_depth",
                     "coverage_radius", "visibility_window_deg", "visibility_samples"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.min_node_spacing > self.max_edge_geodesic:
            raise ValueError("min_node_spacing must not exceed max_edge_geodesic")

    def to_dict(self) -> dict:
        return asdict(self)


def sample_navigable(field: NavigabilityField, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` camera-height positions uniform over navigable area (cell, then jitter in cell)."""
    cells, sizes, heights, origins = [], [], [], []
    for fl in field.floors:
        c = np.argwhere(fl.navigable)
        cells.append(c)
        sizes.append(np.full(len(c), fl.cell_size))
        heights.append(np.full(len(c), fl.height + field.camera_height))
        origins.append(np.tile(fl.origin, (len(c), 1)))
    cells = np.vstack(cells)
    sizes = np.concatenate(sizes)
    heights = np.concatenate(heights)
    origins = np.vstack(origins)
    weights = sizes ** 2
    pick = rng.choice(len(cells), size=n, p=weights / weights.sum())
    jitter = rng.random((n, 2))
    x = origins[pick, 0] + (cells[pick, 1] + jitter[:, 0]) * sizes[pick]
    y = origins[pick, 1] + (cells[pick, 0] + jitter[:, 1]) * sizes[pick]
    return np.stack([x, y, heights[pick]], axis=1)


def navigable_centroid(field: NavigabilityField) -> np.ndarray:
    return field.navigable_points().mean(axis=0)


def build_nodes(candidates: np.ndarray, params: GraphParams = GraphParams(), seed_point=None) -> np.ndarray:
    """Greedy node placement; returns node positions in insertion order.

    The first node is the candidate nearest ``seed_point`` (candidate 0 when
    omitted). Each round drops candidates closer than ``min_node_spacing`` to
    any node and adds the survivor nearest to the current node set, lowest
    candidate index first on ties.
    """
    cand = np.asarray(candidates, np.float64).reshape(-1, 3)
    if len(cand) == 0:
        raise ValueError("no candidates")
    if seed_point is None:
        idx = 0
    else:
        idx = int(np.argmin(np.linalg.norm(cand - np.asarray(seed_point), axis=1)))
    dmin = np.full(len(cand), np.inf)
    alive = np.ones(len(cand), bool)
    order = []
    while True:
        order.append(idx)
        dmin = np.minimum(dmin, np.linalg.norm(cand - cand[idx], axis=1))
        alive &= dmin >= params.min_node_spacing
        if not alive.any():
            break
        idx = int(np.argmin(np.where(alive, dmin, np.inf)))
    return cand[order]


def connect_edges(nodes: np.ndarray, field: NavigabilityField, source, params: GraphParams = GraphParams(),
                  grid: GeodesicGrid | None = None, ids=None) -> NavGraph:
    """Edge (i, j) iff grid geodesic < ``max_edge_geodesic`` and the visibility test passes."""
    nodes = np.asarray(nodes, np.float64).reshape(-1, 3)
    ids = list(range(len(nodes))) if ids is None else [int(i) for i in ids]
    graph = NavGraph({i: p for i, p in zip(ids, nodes)}, {})
    if len(nodes) < 2:
        return graph
    grid = grid or GeodesicGrid(field)
    cells = [grid.snap(p) for p in nodes]
    dist = grid.distances_from(cells, limit=params.max_edge_geodesic)
    edges = {}
    for a in range(len(nodes)):
        for b in range(a + 1, len(nodes)):
            g = float(dist[a, cells[b]])
            if not g < params.max_edge_geodesic:
                continue
            if visibility_check(source, nodes[a], nodes[b], params.min_visibility_depth,
                                params.visibility_window_deg, params.visibility_samples,
                                params.symmetric_visibility):
                edges[(ids[a], ids[b])] = g
    return NavGraph(graph.nodes, edges)


def coverage(graph: NavGraph, field: NavigabilityField, radius: float = 2.0) -> float:
    """Fraction of navigable cells whose center lies within ``radius`` of a node on the same floor."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    total = covered = 0
    by_floor: dict[int, list[np.ndarray]] = {}
    for p in graph.nodes.values():
        by_floor.setdefault(field.floor_of(p[2]), []).append(p[:2])
    for f, fl in enumerate(field.floors):
        centers = fl.cell_centers(np.argwhere(fl.navigable))
        total += len(centers)
        pts = by_floor.get(f)
        if not pts:
            continue
        pts = np.array(pts)
        hit = np.zeros(len(centers), bool)
        for chunk in range(0, len(pts), 64):
            d2 = ((centers[:, None, :] - pts[None, chunk:chunk + 64, :]) ** 2).sum(-1)
            hit |= (d2 <= radius * radius).any(axis=1)
        covered += int(hit.sum())
    return covered / total if total else 0.0


def build_graph(field: NavigabilityField, source, params: GraphParams = GraphParams(),
                rng: np.random.Generator | None = None) -> NavGraph:
    """Sample candidates, place nodes greedily from the navigable centroid, connect edges."""
    rng = rng if rng is not None else np.random.default_rng(0)
    candidates = sample_navigable(field, params.sample_count, rng)
    nodes = build_nodes(candidates, params, seed_point=navigable_centroid(field))
    return connect_edges(nodes, field, source, params)
