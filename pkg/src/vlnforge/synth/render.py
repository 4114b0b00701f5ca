"""Exact ray casting against axis-aligned boxes.

Every surface in a synthetic scene is an axis-aligned box, so the nearest
intersection along each pixel ray has a closed form (slab method). Boxes
outside a view's frustum are culled before casting.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from ..scene.geometry import pixel_rays
from ..scene.types import (
    VIEWS_PER_NODE,
    CameraIntrinsics,
    PanoramaNode,
    Pose,
    ViewObservation,
    view_angles,
)
from ..scene.vocab import VOID
from .noise import NoiseSpec, apply_noise
from .truth import SceneTruth

EPS = 1e-9


class PlacementError(ValueError):
    pass


@njit(cache=True)
def _cast_kernel(origin, dirs, mins, maxs, out_t, out_k):
    for r in range(dirs.shape[0]):
        best = np.inf
        best_k = -1
        for b in range(mins.shape[0]):
            near = -np.inf
            far = np.inf
            miss = False
            for a in range(3):
                d = dirs[r, a]
                lo = mins[b, a] - origin[a]
                hi = maxs[b, a] - origin[a]
                if d == 0.0:
                    # ray parallel to this slab: inside it or never
                    if lo > 0.0 or hi < 0.0:
                        miss = True
                        break
                    continue
                t1 = lo / d
                t2 = hi / d
                if t1 > t2:
                    t1, t2 = t2, t1
                if t1 > near:
                    near = t1
                if t2 < far:
                    far = t2
                if near > far or near >= best:
                    miss = True
                    break
            if not miss and near <= far and near > EPS and near < best:
                best = near
                best_k = b
        out_t[r] = best
        out_k[r] = best_k


def cast_rays(origin: np.ndarray, dirs: np.ndarray, mins: np.ndarray, maxs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest entry parameter ``t`` of rays ``origin + t * dirs`` into any box.

    Returns ``(t, box_index)`` with ``t = inf`` and index -1 for misses. Boxes
    containing the origin are ignored; on equal ``t`` the lower box index wins.
    """
    dirs = np.ascontiguousarray(np.asarray(dirs, np.float64).reshape(-1, 3))
    n = len(dirs)
    t = np.full(n, np.inf)
    k = np.full(n, -1, np.int64)
    if len(mins) == 0 or n == 0:
        return t, k
    _cast_kernel(np.asarray(origin, np.float64).reshape(3), dirs,
                 np.ascontiguousarray(mins, np.float64), np.ascontiguousarray(maxs, np.float64), t, k)
    return t, k


def _box_corners(mins: np.ndarray, maxs: np.ndarray) -> np.ndarray:
    sel = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)])
    lo_hi = np.stack([mins, maxs], axis=1)  # (B, 2, 3)
    return np.stack([lo_hi[:, sel[:, a], a] for a in range(3)], axis=-1)  # (B, 8, 3)


def frustum_cull(corners: np.ndarray, pose: Pose, tan_h: float, tan_v: float) -> np.ndarray:
    """Indices of boxes that may intersect the view frustum (conservative)."""
    if len(corners) == 0:
        return np.zeros(0, np.int64)
    f, r, up = pose.axes()
    p = corners - pose.position
    d, x, y = p @ f, p @ r, p @ up
    outside = (
        np.all(d <= 0, axis=1)
        | np.all(d * tan_h - x < 0, axis=1)
        | np.all(d * tan_h + x < 0, axis=1)
        | np.all(d * tan_v - y < 0, axis=1)
        | np.all(d * tan_v + y < 0, axis=1)
    )
    return np.nonzero(~outside)[0]


class Renderer:
    """Caches the box arrays of one ``SceneTruth`` for repeated casting."""

    def __init__(self, truth: SceneTruth):
        self.truth = truth
        self.mins, self.maxs, self.cls, self.inst = truth.surfaces()
        self.corners = _box_corners(self.mins, self.maxs)

    def cast(self, origin, dirs, candidates=None):
        if candidates is None:
            return cast_rays(origin, dirs, self.mins, self.maxs)
        t, k = cast_rays(origin, dirs, self.mins[candidates], self.maxs[candidates])
        if len(candidates) == 0:
            return t, k
        return t, np.where(k >= 0, candidates[np.maximum(k, 0)], -1)

    def render_truth(self, pose: Pose, intrinsics: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Noise-free (depth, class labels, instance ids) for one view."""
        h, w = intrinsics.height, intrinsics.width
        rays = pixel_rays(intrinsics, pose).reshape(-1, 3)
        tan_h = (w / 2) / intrinsics.focal * 1.001
        tan_v = (h / 2) / intrinsics.focal * 1.001
        cand = frustum_cull(self.corners, pose, tan_h, tan_v)
        t, k = self.cast(pose.position, rays, cand)
        miss = (k < 0) | (t >= intrinsics.max_depth)
        if len(self.cls) == 0:
            k = np.zeros_like(k)
            cls, inst_ids = np.zeros(1, np.int64), np.zeros(1, np.int64)
        else:
            cls, inst_ids = self.cls, self.inst
        depth = np.where(miss, intrinsics.max_depth, t)
        labels = np.where(miss, VOID, cls[np.maximum(k, 0)])
        inst = np.where(miss, 0, inst_ids[np.maximum(k, 0)])
        return (depth.reshape(h, w).astype(np.float32), labels.reshape(h, w).astype(np.int64),
                inst.reshape(h, w).astype(np.int32))

    def render(self, pose: Pose, intrinsics: CameraIntrinsics, noise: NoiseSpec | None,
               rng: np.random.Generator | None) -> ViewObservation:
        depth, labels, inst = self.render_truth(pose, intrinsics)
        n = len(self.truth.vocabulary)
        if noise is None or noise.is_identity:
            return ViewObservation.from_labels(pose, intrinsics, depth, labels, n, inst)
        index, value, inst = apply_noise(labels, inst, noise, rng)
        return ViewObservation(pose, intrinsics, depth, index, value, n, inst)


def render_views(truth: SceneTruth, pose: Pose, intrinsics: CameraIntrinsics,
                 noise: NoiseSpec | None = None, rng: np.random.Generator | None = None,
                 renderer: Renderer | None = None) -> ViewObservation:
    """Render one view of ``truth``; beyond-range pixels are clamped to max depth and labeled void."""
    renderer = renderer or Renderer(truth)
    return renderer.render(pose, intrinsics, noise, rng)


def _check_placement(truth: SceneTruth, position: np.ndarray, field) -> None:
    x, y, z = (float(c) for c in position)
    if field is not None:
        fl = field.floors[field.floor_of(z)]
        if not fl.in_bounds(x, y) or not fl.navigable[fl.cell_of(x, y)]:
            raise PlacementError(f"position {position} is not navigable")
        return
    if truth.room_of(x, y, z) is None:
        raise PlacementError(f"position {position} is outside every room")
    mins, maxs, _, _ = truth.surfaces()
    inside = np.all((mins <= position) & (position <= maxs), axis=1)
    if inside.any():
        raise PlacementError(f"position {position} is inside an obstacle")


def build_panoramas(truth: SceneTruth, positions, intrinsics: CameraIntrinsics, noise: NoiseSpec | None,
                    rng: np.random.Generator | None, ids=None, field=None) -> list[PanoramaNode]:
    """Render the 36-view panorama at each position (ids default to 0..n-1)."""
    renderer = Renderer(truth)
    positions = [np.asarray(p, np.float64) for p in positions]
    ids = list(range(len(positions))) if ids is None else list(ids)
    nodes = []
    for nid, pos in zip(ids, positions):
        _check_placement(truth, pos, field)
        views = tuple(
            renderer.render(Pose(pos, *view_angles(k)), intrinsics, noise, rng) for k in range(VIEWS_PER_NODE)
        )
        nodes.append(PanoramaNode(int(nid), pos, views))
    return nodes


def window_directions(forward: np.ndarray, window: float, n: int) -> np.ndarray:
    """Directions of an ``n`` x ``n`` pixel patch spanning ``window`` radians, centered on ``forward``.

    Directions have unit forward component, so ray ``t`` is planar depth.
    """
    f = np.asarray(forward, np.float64)
    f = f / np.linalg.norm(f)
    horiz = math.hypot(f[0], f[1])
    heading = math.atan2(f[1], f[0]) if horiz > 1e-12 else 0.0
    pose = Pose(np.zeros(3), heading, math.atan2(f[2], horiz))
    return pixel_rays(CameraIntrinsics(n, n, window), pose).reshape(-1, 3)
