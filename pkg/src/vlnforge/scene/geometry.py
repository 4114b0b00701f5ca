"""Camera geometry: back-projection, projection and view lifting.

Depth is planar (distance along the optical axis), never ray length.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import CameraIntrinsics, Pose, ViewObservation


class InvalidDepthError(ValueError):
    pass


def pixel_to_point(u: float, v: float, depth: float, intrinsics: CameraIntrinsics, pose: Pose) -> np.ndarray:
    """World-frame point seen at continuous pixel ``(u, v)`` with planar ``depth``."""
    if not depth > 0:
        raise InvalidDepthError(f"depth must be positive, got {depth}")
    if not (0 <= u < intrinsics.width and 0 <= v < intrinsics.height):
        raise ValueError(f"pixel ({u}, {v}) outside image")
    f, r, up = pose.axes()
    x = (u - intrinsics.cx) / intrinsics.focal
    y = -(v - intrinsics.cy) / intrinsics.focal
    return pose.position + depth * (f + x * r + y * up)


def project_points(points: np.ndarray, intrinsics: CameraIntrinsics, pose: Pose) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project world points; returns continuous (u, v) and planar depth.

    Points behind the camera get depth <= 0; callers must mask them.
    """
    p = np.atleast_2d(np.asarray(points, np.float64)) - pose.position
    f, r, up = pose.axes()
    d = p @ f
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.cx + intrinsics.focal * (p @ r) / d
        v = intrinsics.cy - intrinsics.focal * (p @ up) / d
    return u, v, d


def pixel_rays(intrinsics: CameraIntrinsics, pose: Pose, stride: int = 1) -> np.ndarray:
    """Ray directions through pixel centers, scaled so the forward component is 1.

    With this scaling the ray parameter ``t`` equals planar depth. Shape (H', W', 3).
    """
    f, r, up = pose.axes()
    us = (np.arange(0, intrinsics.width, stride) + 0.5 - intrinsics.cx) / intrinsics.focal
    vs = -(np.arange(0, intrinsics.height, stride) + 0.5 - intrinsics.cy) / intrinsics.focal
    return f + us[None, :, None] * r + vs[:, None, None] * up


@dataclass(frozen=True)
class LabeledCloud:
    """Points lifted from one view with their sparse class probabilities."""

    points: np.ndarray        # (N, 3)
    prob_index: np.ndarray    # (N, k) uint16
    prob_value: np.ndarray    # (N, k) float32
    instance_ids: np.ndarray  # (N,) int32, 0 = no instance
    pixels: np.ndarray        # (N, 2) int (row, col)
    n_classes: int

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls, n_classes: int, k: int = 1) -> "LabeledCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, k), np.uint16), np.zeros((0, k), np.float32),
                   np.zeros(0, np.int32), np.zeros((0, 2), np.int64), n_classes)

    def dense_probs(self) -> np.ndarray:
        from .vocab import VOID
        out = np.zeros((len(self), self.n_classes))
        rows = np.arange(len(self))[:, None]
        np.add.at(out, (rows, self.prob_index.astype(np.intp)), self.prob_value)
        out[:, VOID] += np.clip(1.0 - out.sum(axis=1), 0.0, None)
        return out


def lift_view(view: ViewObservation, stride: int = 2) -> LabeledCloud:
    """Back-project every ``stride``-th valid-depth pixel of ``view``."""
    intr = view.intrinsics
    rows = np.arange(0, intr.height, stride)
    cols = np.arange(0, intr.width, stride)
    depth = view.depth[np.ix_(rows, cols)].astype(np.float64)
    valid = view.valid[np.ix_(rows, cols)]
    if not valid.any():
        return LabeledCloud.empty(view.n_classes, view.prob_index.shape[-1])
    rays = pixel_rays(intr, view.pose, stride)
    pts = view.pose.position + rays[valid] * depth[valid][:, None]
    rr, cc = np.nonzero(valid)
    pr, pc = rows[rr], cols[cc]
    inst = view.instance_ids[pr, pc] if view.instance_ids is not None else np.zeros(len(pr), np.int32)
    return LabeledCloud(pts, view.prob_index[pr, pc], view.prob_value[pr, pc],
                        inst.astype(np.int32), np.stack([pr, pc], axis=1), view.n_classes)
