"""Sparse semantic voxel grid accumulating per-point class probabilities."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ..scene.geometry import LabeledCloud
from ..scene.vocab import VOID

# Packed voxel keys: 20 bits per axis, offset so negative indices pack too.
_BITS = 20
_OFF = 1 << (_BITS - 1)
_MASK = (1 << _BITS) - 1

# Floors sit at multiples of 0.1 m; shifting z by half a voxel keeps floor
# surfaces inside a voxel instead of on a voxel boundary.
DEFAULT_ORIGIN = (0.0, 0.0, -0.05)


def pack(idx: np.ndarray) -> np.ndarray:
    idx = np.asarray(idx, np.int64).reshape(-1, 3) + _OFF
    if np.any(idx < 0) or np.any(idx > _MASK):
        raise OverflowError("voxel index outside packable range")
    return (idx[:, 0] << (2 * _BITS)) | (idx[:, 1] << _BITS) | idx[:, 2]


def unpack(keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, np.int64)
    return np.stack([(keys >> (2 * _BITS)) & _MASK, (keys >> _BITS) & _MASK, keys & _MASK], axis=1) - _OFF


def pack_offset(d) -> int:
    """Key delta of a voxel offset; valid because packing is linear inside the range."""
    dx, dy, dz = (int(v) for v in d)
    return (dx << (2 * _BITS)) + (dy << _BITS) + dz


def voxel_index(points: np.ndarray, voxel_size: float, origin=DEFAULT_ORIGIN) -> np.ndarray:
    return np.floor((np.asarray(points, np.float64) - np.asarray(origin)) / voxel_size).astype(np.int64)


@dataclass(frozen=True)
class SemanticVoxelGrid:
    """Sparse map voxel -> (class probability sum, point count); ``keys`` sorted."""

    voxel_size: float
    n_classes: int
    origin: tuple[float, float, float] = DEFAULT_ORIGIN
    keys: np.ndarray = None
    sums: np.ndarray = None
    counts: np.ndarray = None

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise ValueError("voxel size must be positive")
        if self.keys is None:
            object.__setattr__(self, "keys", np.zeros(0, np.int64))
            object.__setattr__(self, "sums", np.zeros((0, self.n_classes)))
            object.__setattr__(self, "counts", np.zeros(0, np.int64))
        for name in ("keys", "sums", "counts"):
            getattr(self, name).setflags(write=False)
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def indices(self) -> np.ndarray:
        return unpack(self.keys)

    def means(self) -> np.ndarray:
        return self.sums / self.counts[:, None]

    def centers(self) -> np.ndarray:
        return (self.indices + 0.5) * self.voxel_size + np.asarray(self.origin)


def _contributions(clouds: list[LabeledCloud], grid: SemanticVoxelGrid):
    point_keys, keys, cls, w = [], [], [], []
    for cloud in clouds:
        if len(cloud) == 0:
            continue
        if cloud.n_classes != grid.n_classes:
            raise ValueError("cloud and grid disagree on the class count")
        k = pack(voxel_index(cloud.points, grid.voxel_size, grid.origin))
        point_keys.append(k)
        keys.append(np.repeat(k, cloud.prob_index.shape[1] + 1))
        # top-k storage drops the tail; the leftover mass goes to void
        residual = np.clip(1.0 - cloud.prob_value.astype(np.float64).sum(axis=1), 0.0, None)
        cls.append(np.hstack([cloud.prob_index.astype(np.int64), np.full((len(k), 1), VOID)]).ravel())
        w.append(np.hstack([cloud.prob_value.astype(np.float64), residual[:, None]]).ravel())
    if not keys:
        return None
    return np.concatenate(keys), np.concatenate(cls), np.concatenate(w), np.concatenate(point_keys)


def accumulate_many(grid: SemanticVoxelGrid, clouds: Iterable[LabeledCloud]) -> SemanticVoxelGrid:
    """Add every point's probability vector to its voxel; returns a new grid."""
    clouds = list(clouds)
    contrib = _contributions(clouds, grid)
    if contrib is None:
        return grid
    keys, cls, w, point_keys = contrib
    c = grid.n_classes
    uniq, inv = np.unique(np.concatenate([grid.keys, point_keys]), return_inverse=True)
    old_pos = inv[:len(grid.keys)]
    pos = np.searchsorted(uniq, keys)
    sums = np.bincount(pos * c + cls, weights=w, minlength=len(uniq) * c).reshape(len(uniq), c)
    counts = np.bincount(inv[len(grid.keys):], minlength=len(uniq)).astype(np.int64)
    sums[old_pos] += grid.sums
    counts[old_pos] += grid.counts
    return SemanticVoxelGrid(grid.voxel_size, c, grid.origin, uniq, sums, counts)


def accumulate(grid: SemanticVoxelGrid, cloud: LabeledCloud) -> SemanticVoxelGrid:
    return accumulate_many(grid, [cloud])


def merge_grids(a: SemanticVoxelGrid, b: SemanticVoxelGrid) -> SemanticVoxelGrid:
    """Sum two partial grids built over disjoint point sets."""
    if (a.voxel_size, a.origin, a.n_classes) != (b.voxel_size, b.origin, b.n_classes):
        raise ValueError("grids are not compatible")
    uniq, inv = np.unique(np.concatenate([a.keys, b.keys]), return_inverse=True)
    sums = np.zeros((len(uniq), a.n_classes))
    counts = np.zeros(len(uniq), np.int64)
    np.add.at(sums, inv[:len(a)], a.sums)
    np.add.at(sums, inv[len(a):], b.sums)
    np.add.at(counts, inv[:len(a)], a.counts)
    np.add.at(counts, inv[len(a):], b.counts)
    return SemanticVoxelGrid(a.voxel_size, a.n_classes, a.origin, uniq, sums, counts)


@dataclass(frozen=True)
class LabeledVoxels:
    keys: np.ndarray
    labels: np.ndarray
    voxel_size: float
    origin: tuple[float, float, float]

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def indices(self) -> np.ndarray:
        return unpack(self.keys)

    def centers(self) -> np.ndarray:
        return (self.indices + 0.5) * self.voxel_size + np.asarray(self.origin)


def finalize_labels(grid: SemanticVoxelGrid, drop_void: bool = True) -> LabeledVoxels:
    """Argmax of each voxel's mean probabilities; ties go to the lowest class index."""
    if len(grid) == 0:
        raise ValueError("cannot finalize an empty grid")
    labels = np.argmax(grid.means(), axis=1)
    keep = labels != VOID if drop_void else np.ones(len(labels), bool)
    return LabeledVoxels(grid.keys[keep], labels[keep].astype(np.int64), grid.voxel_size, grid.origin)
