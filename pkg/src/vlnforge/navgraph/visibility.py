"""Depth-based line-of-sight test between two graph locations."""
from __future__ import annotations

import math

import numpy as np

from ..scene.geometry import project_points
from ..scene.types import PanoramaNode
from ..synth.render import Renderer, window_directions
from ..synth.truth import SceneTruth


class TruthDepthSource:
    """Renders depth patches directly from synthetic ground truth."""

    def __init__(self, truth: SceneTruth, max_depth: float = 10.0):
        self.renderer = Renderer(truth)
        self.max_depth = max_depth

    def depth_patch(self, a, b, window: float, n: int) -> np.ndarray:
        a = np.asarray(a, np.float64)
        dirs = window_directions(np.asarray(b, np.float64) - a, window, n)
        t, _ = self.renderer.cast(a, dirs)
        return np.minimum(t, self.max_depth)


class PanoramaDepthSource:
    """Samples depth patches from stored panoramas captured at the query points."""

    def __init__(self, panoramas: list[PanoramaNode], tol: float = 1e-3):
        self.panoramas = list(panoramas)
        self.positions = np.array([p.position for p in self.panoramas]).reshape(-1, 3)
        self.tol = tol

    def _node_at(self, a) -> PanoramaNode:
        d = np.linalg.norm(self.positions - np.asarray(a), axis=1)
        k = int(np.argmin(d))
        if d[k] > self.tol:
            raise KeyError(f"no stored panorama at {a}")
        return self.panoramas[k]

    def depth_patch(self, a, b, window: float, n: int) -> np.ndarray:
        node = self._node_at(a)
        a = node.position
        axis = np.asarray(b, np.float64) - a
        axis /= np.linalg.norm(axis)
        dirs = window_directions(axis, window, n)
        forwards = np.array([v.pose.axes()[0] for v in node.views])
        unit = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        best = np.argmax(unit @ forwards.T, axis=1)
        out = np.empty(len(dirs))
        for k in np.unique(best):
            sel = best == k
            view = node.views[k]
            u, v, _ = project_points(a + dirs[sel], view.intrinsics, view.pose)
            col = np.clip(np.floor(u).astype(int), 0, view.intrinsics.width - 1)
            row = np.clip(np.floor(v).astype(int), 0, view.intrinsics.height - 1)
            dv = view.depth[row, col].astype(np.float64)
            # convert the view's planar depth to depth along the patch axis
            fwd = view.pose.axes()[0]
            ray_t = dv / (unit[sel] @ fwd)
            out[sel] = ray_t * (unit[sel] @ axis)
        return out


def mean_patch_depth(source, a, b, window_deg: float = 20.0, samples: int = 9) -> float:
    return float(np.mean(source.depth_patch(a, b, math.radians(window_deg), samples)))


def visibility_check(source, a, b, min_depth: float = 2.0, window_deg: float = 20.0, samples: int = 9,
                     symmetric: bool = True) -> bool:
    """True if the mean depth of the patch looking from ``a`` toward ``b`` exceeds ``min_depth``.

    With ``symmetric`` the test must also pass looking from ``b`` toward ``a``.
    """
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if np.allclose(a, b):
        raise ValueError("visibility needs two distinct points")
    if mean_patch_depth(source, a, b, window_deg, samples) <= min_depth:
        return False
    return not symmetric or mean_patch_depth(source, b, a, window_deg, samples) > min_depth
