"""Shortest paths on the navigable occupancy grid.

8-connected moves; a diagonal step costs sqrt(2) cells and is only allowed
when both orthogonally adjacent cells are navigable (no corner cutting).
Floors connect only through declared stair links.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from ..scene.types import NavigabilityField

UNREACHABLE = math.inf


class DomainError(ValueError):
    """Position outside the navigability field."""


class GeodesicGrid:
    """Sparse graph over all navigable cells of a field."""

    def __init__(self, field: NavigabilityField):
        self.field = field
        self.offsets = []
        self.cell_index = []
        rows, cols, weights = [], [], []
        base = 0
        for fl in field.floors:
            nav = fl.navigable
            idx = np.full(nav.shape, -1, np.int64)
            cells = np.argwhere(nav)
            idx[cells[:, 0], cells[:, 1]] = base + np.arange(len(cells))
            self.cell_index.append(idx)
            self.offsets.append(base)
            h, w = nav.shape
            cs = fl.cell_size
            for dy, dx, cost in ((0, 1, cs), (1, 0, cs), (1, 1, cs * math.sqrt(2)), (1, -1, cs * math.sqrt(2))):
                y0, y1 = 0, h - dy
                x0, x1 = max(0, -dx), w - max(0, dx)
                a = idx[y0:y1, x0:x1]
                b = idx[y0 + dy:y1 + dy, x0 + dx:x1 + dx]
                ok = (a >= 0) & (b >= 0)
                if dy and dx:
                    # both orthogonal neighbours of a diagonal move must be free
                    ok &= (idx[y0 + dy:y1 + dy, x0:x1] >= 0) & (idx[y0:y1, x0 + dx:x1 + dx] >= 0)
                rows.append(a[ok])
                cols.append(b[ok])
                weights.append(np.full(int(ok.sum()), cost))
            base += len(cells)
        for s in field.stairs:
            a = self.cell_index[s.floor_a][s.cell_a]
            b = self.cell_index[s.floor_b][s.cell_b]
            if a >= 0 and b >= 0:
                rows.append(np.array([a]))
                cols.append(np.array([b]))
                weights.append(np.array([float(s.length)]))
        self.n = base
        r = np.concatenate(rows) if rows else np.zeros(0, np.int64)
        c = np.concatenate(cols) if cols else np.zeros(0, np.int64)
        wgt = np.concatenate(weights) if weights else np.zeros(0)
        self.matrix = coo_matrix((wgt, (r, c)), shape=(self.n, self.n)).tocsr()

    def snap(self, position) -> int:
        """Index of the navigable cell nearest to ``position`` on its floor."""
        x, y, z = (float(v) for v in position)
        f = self.field.floor_of(z)
        fl = self.field.floors[f]
        if not fl.in_bounds(x, y):
            raise DomainError(f"position ({x:.3f}, {y:.3f}) outside floor {f} bounds")
        iy, ix = fl.cell_of(x, y)
        k = self.cell_index[f][iy, ix]
        if k >= 0:
            return int(k)
        cells = np.argwhere(fl.navigable)
        centers = fl.cell_centers(cells)
        d2 = (centers[:, 0] - x) ** 2 + (centers[:, 1] - y) ** 2
        best = cells[int(np.argmin(d2))]
        return int(self.cell_index[f][best[0], best[1]])

    def distances_from(self, sources: list[int], limit: float = np.inf) -> np.ndarray:
        """Shortest-path lengths from each source cell to every cell (inf beyond ``limit``)."""
        return dijkstra(self.matrix, directed=False, indices=sources, limit=limit)

    def distance(self, a, b) -> float:
        ia, ib = self.snap(a), self.snap(b)
        if ia == ib:
            return 0.0
        d = float(self.distances_from([ia])[0, ib])
        return d if np.isfinite(d) else UNREACHABLE


def geodesic_distance(field: NavigabilityField, a, b, grid: GeodesicGrid | None = None) -> float:
    """Grid shortest-path length between the cells nearest ``a`` and ``b``; ``inf`` if disconnected."""
    grid = grid or GeodesicGrid(field)
    return grid.distance(a, b)
