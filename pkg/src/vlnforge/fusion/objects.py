"""3D object instances from labeled voxels, plus the single-view baseline."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..scene.geometry import lift_view
from ..scene.types import ViewObservation
from ..scene.vocab import VOID, stuff_indices
from .voxels import DEFAULT_ORIGIN, LabeledVoxels, pack, pack_offset, unpack, voxel_index

MIN_VOXELS = 5


@dataclass(frozen=True)
class Object3D:
    """A labeled 3D instance; the box spans the full extent of its member voxels."""

    id: int
    class_index: int
    center: np.ndarray
    extent: np.ndarray
    voxels: np.ndarray          # (M, 3) integer voxel indices
    centroid: np.ndarray
    # view reference -> {2D instance id -> number of overlapping lifted points}
    support: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if np.any(np.asarray(self.extent) <= 0):
            raise ValueError("object extent must be positive")

    @property
    def min(self) -> np.ndarray:
        return self.center - self.extent / 2

    @property
    def max(self) -> np.ndarray:
        return self.center + self.extent / 2

    @property
    def n_voxels(self) -> int:
        return len(self.voxels)

    def to_dict(self, vocabulary=None) -> dict:
        d = {"id": int(self.id), "class_index": int(self.class_index),
             "center": [round(float(v), 6) for v in self.center],
             "extent": [round(float(v), 6) for v in self.extent],
             "centroid": [round(float(v), 6) for v in self.centroid],
             "n_voxels": self.n_voxels}
        if vocabulary is not None:
            d["class"] = vocabulary[self.class_index]
        return d


def neighbor_offsets(connectivity: int) -> list[tuple[int, int, int]]:
    """Half of the neighbor offsets (one of each +/- pair) for 6, 18 or 26 connectivity."""
    if connectivity not in (6, 18, 26):
        raise ValueError("connectivity must be 6, 18 or 26")
    limit = {6: 1, 18: 2, 26: 3}[connectivity]
    out = []
    for d in product((-1, 0, 1), repeat=3):
        nz = sum(1 for v in d if v)
        if 0 < nz <= limit and d > (0, 0, 0):
            out.append(d)
    return out


def _make_object(oid: int, cls: int, idx: np.ndarray, voxel_size: float, origin) -> Object3D:
    origin = np.asarray(origin, np.float64)
    lo = idx.min(axis=0) * voxel_size + origin
    hi = (idx.max(axis=0) + 1) * voxel_size + origin
    centroid = (idx.mean(axis=0) + 0.5) * voxel_size + origin
    return Object3D(oid, int(cls), (lo + hi) / 2, hi - lo, idx, centroid)


def component_labels(labeled: LabeledVoxels, connectivity: int = 26) -> np.ndarray:
    """Component id per voxel; neighbors join only when they share a class."""
    keys, labels = labeled.keys, labeled.labels
    n = len(keys)
    idx = unpack(keys)
    rows, cols = [], []
    for d in neighbor_offsets(connectivity):
        nk = keys + pack_offset(d)
        pos = np.searchsorted(keys, nk)
        pos_c = np.minimum(pos, n - 1)
        hit = (pos < n) & (keys[pos_c] == nk)
        # guard against wrap-around at the edge of the packable range
        hit &= np.all(idx[pos_c] - idx == np.asarray(d), axis=1)
        hit &= labels[pos_c] == labels
        src = np.nonzero(hit)[0]
        rows.append(src)
        cols.append(pos_c[src])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    adj = coo_matrix((np.ones(len(r), np.int8), (r, c)), shape=(n, n))
    _, comp = connected_components(adj, directed=False)
    return comp


def extract_instances(labeled: LabeledVoxels, connectivity: int = 26, min_voxels: int = MIN_VOXELS,
                      exclude=None) -> list[Object3D]:
    """Group same-class neighboring voxels into objects.

    ``exclude`` lists class indices never grouped (void and stuff by default).
    Objects are ordered by (class, smallest member key) and numbered from 0.
    """
    exclude = set(stuff_indices()) | {VOID} if exclude is None else set(exclude)
    keep = ~np.isin(labeled.labels, list(exclude))
    sub = LabeledVoxels(labeled.keys[keep], labeled.labels[keep], labeled.voxel_size, labeled.origin)
    if len(sub) == 0:
        return []
    comp = component_labels(sub, connectivity)
    order = np.argsort(comp, kind="stable")
    bounds = np.flatnonzero(np.diff(comp[order])) + 1
    groups = [g for g in np.split(order, bounds) if len(g) >= min_voxels]
    # keys are sorted, so g[0] is each component's smallest key
    groups.sort(key=lambda g: (int(sub.labels[g[0]]), int(sub.keys[g[0]])))
    idx = sub.indices
    return [_make_object(i, sub.labels[g[0]], idx[g], sub.voxel_size, sub.origin) for i, g in enumerate(groups)]


def single_view_objects(view: ViewObservation, voxel_size: float = 0.1, origin=DEFAULT_ORIGIN, stride: int = 2,
                        min_voxels: int = 1, start_id: int = 0, exclude=None, view_ref=None) -> list[Object3D]:
    """One object per 2D instance mask of a single view, without cross-view merging.

    Each instance's class is the plurality of its pixels' argmax labels and its
    box spans the voxels its lifted points fall in.
    """
    exclude = set(stuff_indices()) | {VOID} if exclude is None else set(exclude)
    if view.instance_ids is None:
        return []
    cloud = lift_view(view, stride)
    if len(cloud) == 0:
        return []
    labels = cloud.prob_index[:, 0].astype(np.int64)
    out = []
    for iid in np.unique(cloud.instance_ids):
        if iid == 0:
            continue
        sel = cloud.instance_ids == iid
        counts = np.bincount(labels[sel], minlength=cloud.n_classes)
        cls = int(np.argmax(counts))
        if cls in exclude:
            continue
        idx = np.unique(voxel_index(cloud.points[sel], voxel_size, origin), axis=0)
        if len(idx) < min_voxels:
            continue
        obj = _make_object(start_id + len(out), cls, idx, voxel_size, origin)
        if view_ref is not None:
            obj = replace(obj, support={view_ref: {int(iid): int(sel.sum())}})
        out.append(obj)
    return out


@dataclass(frozen=True)
class ViewMap:
    """2D instance -> 3D object association for a set of views."""

    mapping: dict        # view reference -> {2D instance id -> object id or None}
    objects: list        # objects with ``support`` filled in

    def to_dict(self) -> dict:
        return {str(ref): {str(k): v for k, v in m.items()} for ref, m in self.mapping.items()}


def map_2d_to_3d(views, objects: list[Object3D], voxel_size: float = 0.1, origin=DEFAULT_ORIGIN,
                 stride: int = 2, threshold: float = 0.3) -> ViewMap:
    """Associate every 2D instance of ``views`` (pairs of reference, view) with a fused object.

    A 2D instance maps to the object owning the plurality of its lifted
    points' voxels when that object holds at least ``threshold`` of the
    points; otherwise it is unmapped (None). Points in no object voxel count
    toward the denominator.
    """
    if not 0 <= threshold <= 1:
        raise ValueError("threshold must lie in [0, 1]")
    if objects:
        okeys = np.concatenate([pack(o.voxels) for o in objects])
        oid = np.concatenate([np.full(o.n_voxels, i) for i, o in enumerate(objects)])
        order = np.argsort(okeys)
        okeys, oid = okeys[order], oid[order]
    else:
        okeys, oid = np.zeros(0, np.int64), np.zeros(0, np.int64)
    support: list[dict] = [dict() for _ in objects]
    mapping = {}
    for ref, view in views:
        m = {}
        if view.instance_ids is not None:
            cloud = lift_view(view, stride)
            if len(cloud):
                keys = pack(voxel_index(cloud.points, voxel_size, origin))
                pos = np.minimum(np.searchsorted(okeys, keys), max(len(okeys) - 1, 0))
                owner = np.where((len(okeys) > 0) & (okeys[pos] == keys), oid[pos] if len(oid) else -1, -1)
            else:
                owner = np.zeros(0, np.int64)
            for iid in np.unique(view.instance_ids):
                if iid == 0:
                    continue
                sel = cloud.instance_ids == iid if len(cloud) else np.zeros(0, bool)
                total = int(sel.sum())
                if total == 0:
                    m[int(iid)] = None
                    continue
                hits = owner[sel]
                hits = hits[hits >= 0]
                if len(hits) == 0:
                    m[int(iid)] = None
                    continue
                counts = np.bincount(hits, minlength=len(objects))
                best = int(np.argmax(counts))
                for k in np.flatnonzero(counts):
                    support[k].setdefault(ref, {})[int(iid)] = int(counts[k])
                m[int(iid)] = objects[best].id if counts[best] >= threshold * total else None
        mapping[ref] = m
    objs = [replace(o, support=s) for o, s in zip(objects, support)]
    return ViewMap(mapping, objs)
