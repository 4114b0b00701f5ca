"""Core scene types: poses, cameras, views, panoramas, navigability, graphs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterator

import numpy as np

from .vocab import VOID

TWO_PI = 2.0 * math.pi
N_HEADINGS = 12
ELEVATIONS = (-math.pi / 6, 0.0, math.pi / 6)
VIEWS_PER_NODE = N_HEADINGS * len(ELEVATIONS)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def normalize_heading(h: float) -> float:
    h = math.fmod(float(h), TWO_PI)
    if h < 0:
        h += TWO_PI
    # fmod of values just below 2*pi can round up to exactly 2*pi
    return 0.0 if h >= TWO_PI else h


@dataclass(frozen=True)
class Pose:
    """Camera pose in a z-up right-handed world; heading 0 looks along +x."""

    position: np.ndarray
    heading: float = 0.0
    elevation: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(pos)):
            raise ValueError(f"non-finite pose position {pos}")
        if not -math.pi / 2 <= self.elevation <= math.pi / 2:
            raise ValueError(f"elevation {self.elevation} outside [-pi/2, pi/2]")
        object.__setattr__(self, "position", _frozen(pos))
        object.__setattr__(self, "heading", normalize_heading(self.heading))
        object.__setattr__(self, "elevation", float(self.elevation))

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (forward, right, up) unit vectors of the camera frame."""
        ch, sh = math.cos(self.heading), math.sin(self.heading)
        ce, se = math.cos(self.elevation), math.sin(self.elevation)
        forward = np.array([ce * ch, ce * sh, se])
        right = np.array([sh, -ch, 0.0])
        up = np.array([-se * ch, -se * sh, ce])
        return forward, right, up


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera with square pixels and the principal point at the image center.

    Pixel coordinates are continuous: pixel ``(i, j)`` covers ``[i, i+1) x [j, j+1)``
    and its center is ``(i + 0.5, j + 0.5)``.
    """

    width: int
    height: int
    hfov: float
    max_depth: float = 10.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if not 0 < self.hfov < math.pi:
            raise ValueError(f"hfov {self.hfov} outside (0, pi)")
        if self.max_depth <= 0:
            raise ValueError("max_depth must be positive")

    @property
    def focal(self) -> float:
        return (self.width / 2.0) / math.tan(self.hfov / 2.0)

    @property
    def cx(self) -> float:
        return self.width / 2.0

    @property
    def cy(self) -> float:
        return self.height / 2.0

    @property
    def vfov(self) -> float:
        return 2.0 * math.atan((self.height / 2.0) / self.focal)

    def to_dict(self) -> dict[str, Any]:
        return {"width": self.width, "height": self.height, "hfov": self.hfov,
                "max_depth": self.max_depth}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CameraIntrinsics":
        return cls(int(d["width"]), int(d["height"]), float(d["hfov"]),
                   float(d.get("max_depth", 10.0)))


DEFAULT_INTRINSICS = CameraIntrinsics(width=48, height=48, hfov=math.pi / 6)


@dataclass(frozen=True)
class ViewObservation:
    """One RGB-D-like view: planar depth plus sparse top-k class probabilities.

    ``prob_index``/``prob_value`` hold the k most likely classes per pixel; any
    probability mass they do not cover belongs to the void class. The dense
    ``class_probs`` array is materialized on demand.
    """

    pose: Pose
    intrinsics: CameraIntrinsics
    depth: np.ndarray
    prob_index: np.ndarray
    prob_value: np.ndarray
    n_classes: int
    instance_ids: np.ndarray | None = None

    def __post_init__(self):
        h, w = self.intrinsics.height, self.intrinsics.width
        depth = np.asarray(self.depth, dtype=np.float32)
        if depth.shape != (h, w):
            raise ValueError(f"depth shape {depth.shape} != {(h, w)}")
        if np.any(depth < 0) or not np.all(np.isfinite(depth)):
            raise ValueError("depth must be finite and >= 0")
        idx = np.asarray(self.prob_index, dtype=np.uint16)
        val = np.asarray(self.prob_value, dtype=np.float32)
        if idx.ndim == 2:
            idx, val = idx[..., None], val[..., None]
        if idx.shape != val.shape or idx.shape[:2] != (h, w):
            raise ValueError("probability arrays must be H x W x k")
        if idx.size and int(idx.max()) >= self.n_classes:
            raise ValueError("class index outside vocabulary")
        object.__setattr__(self, "depth", _frozen(depth))
        object.__setattr__(self, "prob_index", _frozen(idx))
        object.__setattr__(self, "prob_value", _frozen(val))
        if self.instance_ids is not None:
            inst = np.asarray(self.instance_ids, dtype=np.int32)
            if inst.shape != (h, w):
                raise ValueError("instance id map must be H x W")
            object.__setattr__(self, "instance_ids", _frozen(inst))

    @classmethod
    def from_labels(cls, pose, intrinsics, depth, labels, n_classes, instance_ids=None):
        """Build a view whose class probabilities are one-hot on ``labels``."""
        labels = np.asarray(labels)
        return cls(pose, intrinsics, depth, labels.astype(np.uint16)[..., None],
                   np.ones(labels.shape + (1,), np.float32), n_classes, instance_ids)

    @classmethod
    def from_dense(cls, pose, intrinsics, depth, class_probs, k: int = 5, instance_ids=None):
        probs = np.asarray(class_probs, dtype=np.float64)
        k = min(k, probs.shape[-1])
        # stable descending order keeps the lowest class index first on ties
        order = np.argsort(-probs, axis=-1, kind="stable")[..., :k]
        vals = np.take_along_axis(probs, order, axis=-1)
        return cls(pose, intrinsics, depth, order.astype(np.uint16), vals.astype(np.float32),
                   probs.shape[-1], instance_ids)

    @property
    def class_probs(self) -> np.ndarray:
        h, w, k = self.prob_index.shape
        dense = np.zeros((h, w, self.n_classes), dtype=np.float32)
        rows = np.arange(h)[:, None, None]
        cols = np.arange(w)[None, :, None]
        np.add.at(dense, (rows, cols, self.prob_index.astype(np.intp)), self.prob_value)
        residual = 1.0 - dense.sum(axis=-1)
        dense[..., VOID] += np.clip(residual, 0.0, None)
        return dense

    @property
    def labels(self) -> np.ndarray:
        """Per-pixel argmax class (lowest index wins ties)."""
        return np.argmax(self.class_probs, axis=-1)

    @property
    def valid(self) -> np.ndarray:
        """Pixels with a usable depth: non-zero and not clamped at max range."""
        return (self.depth > 0) & (self.depth < self.intrinsics.max_depth)


@dataclass(frozen=True)
class PanoramaNode:
    id: int
    position: np.ndarray
    views: tuple[ViewObservation, ...]

    def __post_init__(self):
        object.__setattr__(self, "position", _frozen(np.asarray(self.position, np.float64).reshape(3)))
        views = tuple(self.views)
        if len(views) != VIEWS_PER_NODE:
            raise ValueError(f"panorama needs {VIEWS_PER_NODE} views, got {len(views)}")
        for k, v in enumerate(views):
            h, e = view_angles(k)
            if abs(v.pose.heading - h) > 1e-9 or abs(v.pose.elevation - e) > 1e-9:
                raise ValueError(f"view {k} pose does not match canonical grid")
        object.__setattr__(self, "views", views)


def view_angles(k: int) -> tuple[float, float]:
    """Canonical (heading, elevation) of panorama view ``k``.

    Views are ordered elevation-major: 0-11 look down, 12-23 level, 24-35 up.
    """
    if not 0 <= k < VIEWS_PER_NODE:
        raise IndexError(k)
    e_idx, h_idx = divmod(k, N_HEADINGS)
    return h_idx * TWO_PI / N_HEADINGS, ELEVATIONS[e_idx]


def panorama_poses(position) -> list[Pose]:
    return [Pose(position, *view_angles(k)) for k in range(VIEWS_PER_NODE)]


@dataclass(frozen=True)
class FloorGrid:
    """Occupancy grid of one floor. ``navigable[iy, ix]``; cell centers at origin + (i + 0.5) * cell."""

    cell_size: float
    origin: tuple[float, float]
    navigable: np.ndarray
    height: float

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell size must be positive")
        nav = np.asarray(self.navigable, dtype=bool)
        if nav.ndim != 2:
            raise ValueError("navigable mask must be 2-D")
        if not nav.any():
            raise ValueError("floor has no navigable cell")
        object.__setattr__(self, "navigable", _frozen(nav))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def shape(self) -> tuple[int, int]:
        return self.navigable.shape

    def cell_centers(self, cells: np.ndarray) -> np.ndarray:
        """(iy, ix) rows -> (x, y) centers."""
        cells = np.asarray(cells)
        x = self.origin[0] + (cells[:, 1] + 0.5) * self.cell_size
        y = self.origin[1] + (cells[:, 0] + 0.5) * self.cell_size
        return np.stack([x, y], axis=1)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        ix = int(math.floor((x - self.origin[0]) / self.cell_size))
        iy = int(math.floor((y - self.origin[1]) / self.cell_size))
        return iy, ix

    def in_bounds(self, x: float, y: float) -> bool:
        iy, ix = self.cell_of(x, y)
        return 0 <= iy < self.shape[0] and 0 <= ix < self.shape[1]


@dataclass(frozen=True)
class StairLink:
    """Declared traversable connection between cells on two floors."""

    floor_a: int
    cell_a: tuple[int, int]
    floor_b: int
    cell_b: tuple[int, int]
    length: float


@dataclass(frozen=True)
class NavigabilityField:
    floors: tuple[FloorGrid, ...]
    camera_height: float = 1.5
    stairs: tuple[StairLink, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "floors", tuple(self.floors))
        object.__setattr__(self, "stairs", tuple(self.stairs))
        if not self.floors:
            raise ValueError("navigability field needs at least one floor")

    def floor_of(self, z: float) -> int:
        """Floor whose camera plane is closest to ``z``."""
        hs = np.array([f.height + self.camera_height for f in self.floors])
        return int(np.argmin(np.abs(hs - z)))

    def navigable_points(self) -> np.ndarray:
        """Camera-height positions of all navigable cell centers, floors concatenated."""
        out = []
        for f in self.floors:
            cells = np.argwhere(f.navigable)
            xy = f.cell_centers(cells)
            z = np.full((len(xy), 1), f.height + self.camera_height)
            out.append(np.hstack([xy, z]))
        return np.vstack(out)

    def navigable_area(self) -> float:
        return float(sum(f.navigable.sum() * f.cell_size ** 2 for f in self.floors))


@dataclass(frozen=True)
class SceneBundle:
    scene_id: str
    field: NavigabilityField
    nodes: tuple[PanoramaNode, ...]
    class_vocabulary: tuple[str, ...]
    ground_truth: Any = None  # synth.SceneTruth
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "class_vocabulary", tuple(self.class_vocabulary))
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node ids")
        c = len(self.class_vocabulary)
        for n in self.nodes:
            for v in n.views:
                if v.n_classes != c:
                    raise ValueError("view class count differs from bundle vocabulary")


@dataclass
class NavGraph:
    """Undirected weighted graph over panorama node positions."""

    nodes: dict[int, np.ndarray] = field(default_factory=dict)
    edges: dict[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = {int(k): np.asarray(v, np.float64).reshape(3) for k, v in self.nodes.items()}
        edges = {}
        for (i, j), w in self.edges.items():
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop on node {i}")
            if i not in self.nodes or j not in self.nodes:
                raise ValueError(f"edge ({i}, {j}) references unknown node")
            edges[(min(i, j), max(i, j))] = float(w)
        self.edges = edges
        self._adj: dict[int, dict[int, float]] | None = None

    @property
    def adjacency(self) -> dict[int, dict[int, float]]:
        if self._adj is None:
            adj: dict[int, dict[int, float]] = {i: {} for i in self.nodes}
            for (i, j), w in self.edges.items():
                adj[i][j] = w
                adj[j][i] = w
            self._adj = adj
        return self._adj

    def neighbors(self, i: int) -> list[int]:
        return sorted(self.adjacency[i])

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    def weight(self, i: int, j: int) -> float:
        return self.edges[(min(i, j), max(i, j))]

    def node_ids(self) -> list[int]:
        return sorted(self.nodes)

    def position(self, i: int) -> np.ndarray:
        return self.nodes[i]

    def iter_edges(self) -> Iterator[tuple[int, int, float]]:
        for (i, j) in sorted(self.edges):
            yield i, j, self.edges[(i, j)]

    def components(self) -> list[list[int]]:
        seen: set[int] = set()
        comps = []
        for s in self.node_ids():
            if s in seen:
                continue
            stack, comp = [s], []
            seen.add(s)
            while stack:
                u = stack.pop()
                comp.append(u)
                for v in self.adjacency[u]:
                    if v not in seen:
                        seen.add(v)
                        stack.append(v)
            comps.append(sorted(comp))
        return comps

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": i, "xyz": [float(c) for c in self.nodes[i]]} for i in self.node_ids()],
            "edges": [[i, j, w] for i, j, w in self.iter_edges()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NavGraph":
        nodes = {int(n["id"]): np.asarray(n["xyz"], np.float64) for n in d["nodes"]}
        edges = {(int(e[0]), int(e[1])): float(e[2]) for e in d["edges"]}
        return cls(nodes, edges)
