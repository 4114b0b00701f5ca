"""Object-trajectory-instruction triplets: goal sets, start sampling, expert paths."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from ..fusion.objects import Object3D
from ..fusion.voxels import DEFAULT_ORIGIN, pack, voxel_index
from ..scene.geometry import lift_view, project_points
from ..scene.types import NavGraph, PanoramaNode
from ..scene.vocab import CLASSES
from .text import make_instruction

MIN_HOPS = 4
MAX_HOPS = 9
N_HEADINGS = 12
MIN_BOX_FILL = 0.5  # share of a target box's pixels that must land on the object


class UnreachableError(ValueError):
    """No path between the start node and the goal set."""


@dataclass(frozen=True)
class VlnTriplet:
    scene_id: str
    instruction: str
    start_node: int
    start_heading: float
    expert_path: tuple[int, ...]
    goal_nodes: tuple[int, ...]
    target_object: int
    # goal node -> {"view": k, "box": [col0, row0, col1, row1]} (exclusive upper bounds)
    target_bbox_2d: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["expert_path"] = list(self.expert_path)
        d["goal_nodes"] = list(self.goal_nodes)
        d["target_bbox_2d"] = {str(k): v for k, v in self.target_bbox_2d.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VlnTriplet":
        return cls(str(d["scene_id"]), str(d["instruction"]), int(d["start_node"]), float(d["start_heading"]),
                   tuple(int(i) for i in d["expert_path"]), tuple(int(i) for i in d["goal_nodes"]),
                   int(d["target_object"]),
                   {int(k): {"view": int(v["view"]), "box": [int(b) for b in v["box"]]}
                    for k, v in d.get("target_bbox_2d", {}).items()},
                   dict(d.get("meta", {})))

    @property
    def hops(self) -> int:
        return len(self.expert_path) - 1


def triplet_violations(t: VlnTriplet, graph: NavGraph) -> list[str]:
    """Every broken invariant of ``t`` against ``graph`` (empty when valid)."""
    out = []
    path = t.expert_path
    if not path or path[0] != t.start_node:
        out.append("path does not start at start_node")
    if path and path[-1] not in t.goal_nodes:
        out.append("path does not end in the goal set")
    for a, b in zip(path, path[1:]):
        if a not in graph.nodes or b not in graph.nodes or not graph.has_edge(a, b):
            out.append(f"nodes {a} and {b} are not adjacent")
    if not MIN_HOPS <= len(path) - 1 <= MAX_HOPS:
        out.append(f"hop length {len(path) - 1} outside [{MIN_HOPS}, {MAX_HOPS}]")
    return out


class PixelOwners:
    """Which fused object each full-resolution pixel of each view lands in.

    ``owners(node_id)`` is a (36, H, W) array of object list positions, -1 for
    pixels that hit no object voxel (or have no valid depth).
    """

    def __init__(self, panoramas: list[PanoramaNode], objects: list[Object3D], voxel_size: float = 0.1,
                 origin=DEFAULT_ORIGIN):
        self.panoramas = {p.id: p for p in panoramas}
        self.objects = list(objects)
        self.voxel_size = voxel_size
        self.origin = origin
        if self.objects:
            keys = np.concatenate([pack(o.voxels) for o in self.objects])
            owner = np.concatenate([np.full(o.n_voxels, i) for i, o in enumerate(self.objects)])
            order = np.argsort(keys, kind="stable")
            self._keys, self._owner = keys[order], owner[order]
        else:
            self._keys = np.zeros(0, np.int64)
            self._owner = np.zeros(0, np.int64)
        self._cache: dict[int, np.ndarray] = {}

    def owners(self, node_id: int) -> np.ndarray:
        if node_id not in self._cache:
            node = self.panoramas[node_id]
            intr = node.views[0].intrinsics
            out = np.full((len(node.views), intr.height, intr.width), -1, np.int64)
            if len(self._keys):
                for k, view in enumerate(node.views):
                    cloud = lift_view(view, stride=1)
                    if not len(cloud):
                        continue
                    keys = pack(voxel_index(cloud.points, self.voxel_size, self.origin))
                    pos = np.minimum(np.searchsorted(self._keys, keys), len(self._keys) - 1)
                    hit = self._keys[pos] == keys
                    out[k, cloud.pixels[hit, 0], cloud.pixels[hit, 1]] = self._owner[pos[hit]]
            self._cache[node_id] = out
        return self._cache[node_id]

    def visible_objects(self, node_id: int, min_pixels: int = 1) -> dict[int, int]:
        """Object list position -> number of owned pixels at this node."""
        own = self.owners(node_id)
        counts = np.bincount(own[own >= 0].ravel(), minlength=len(self.objects))
        return {int(i): int(c) for i, c in enumerate(counts) if c >= min_pixels}

    def box(self, node_id: int, obj_pos: int, min_fill: float = MIN_BOX_FILL):
        """(view, [col0, row0, col1, row1]) for the object at this node, else None.

        Only views whose box has at least ``min_fill`` of its pixels on the
        object qualify; among those the view with the most object pixels wins.
        """
        own = self.owners(node_id) == obj_pos
        best = None
        for k in range(len(own)):
            n = int(own[k].sum())
            if n == 0 or (best is not None and n <= best[0]):
                continue
            rows, cols = np.nonzero(own[k])
            box = [int(cols.min()), int(rows.min()), int(cols.max()) + 1, int(rows.max()) + 1]
            if n >= min_fill * (box[2] - box[0]) * (box[3] - box[1]):
                best = (n, k, box)
        return None if best is None else (best[1], best[2])


def centroid_visible(obj: Object3D, node: PanoramaNode, ratio: float = 0.9) -> bool:
    """Centroid projects into a view whose depth there is >= ``ratio`` x the centroid depth."""
    for view in node.views:
        u, v, d = project_points(obj.centroid, view.intrinsics, view.pose)
        u, v, d = float(u[0]), float(v[0]), float(d[0])
        if not (d > 0 and 0 <= u < view.intrinsics.width and 0 <= v < view.intrinsics.height):
            continue
        if float(view.depth[int(v), int(u)]) >= ratio * d:
            return True
    return False


def object_distance(obj: Object3D, point, to: str = "centroid") -> float:
    p = np.asarray(point, np.float64)
    if to == "centroid":
        return float(np.linalg.norm(p - obj.centroid))
    if to == "aabb":
        return float(np.linalg.norm(p - np.clip(p, obj.min, obj.max)))
    raise ValueError(f"unknown distance reference {to!r}")


def goal_nodes(obj: Object3D, graph: NavGraph, owners: PixelOwners, d_o: float = 2.0,
               occlusion: str = "surface", distance_to: str = "centroid") -> dict[int, tuple]:
    """Goal nodes of ``obj`` mapped to their 2D target box.

    A node qualifies when it lies within ``d_o`` of the object and the object
    is visible from it. ``occlusion="surface"`` counts the object visible when
    at least one pixel lands in its voxels; ``"centroid"`` additionally
    requires the centroid depth test. Nodes where no view gives a 2D box that
    is at least half covered by the object (see ``PixelOwners.box``) are never
    goals.
    """
    if d_o <= 0:
        raise ValueError("d_o must be positive")
    if occlusion not in ("surface", "centroid"):
        raise ValueError(f"unknown occlusion test {occlusion!r}")
    pos = next((i for i, o in enumerate(owners.objects) if o.id == obj.id), None)
    if pos is None:
        raise KeyError(f"object {obj.id} is not in the pixel-owner table")
    out = {}
    for n in graph.node_ids():
        if object_distance(obj, graph.nodes[n], distance_to) > d_o:
            continue
        if occlusion == "centroid" and not centroid_visible(obj, owners.panoramas[n]):
            continue
        box = owners.box(n, pos)
        if box is not None:
            out[n] = box
    return out


def hop_distances(graph: NavGraph, sources) -> dict[int, int]:
    """Unweighted multi-source BFS distances."""
    dist = {int(s): 0 for s in sources}
    queue = deque(sorted(dist))
    adj = graph.adjacency
    while queue:
        u = queue.popleft()
        for v in sorted(adj[u]):
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def eligible_starts(graph: NavGraph, goals, min_hops: int = MIN_HOPS, max_hops: int = MAX_HOPS) -> list[int]:
    hops = hop_distances(graph, goals)
    return sorted(n for n, h in hops.items() if min_hops <= h <= max_hops)


def sample_start(graph: NavGraph, goals, rng: np.random.Generator, min_hops: int = MIN_HOPS,
                 max_hops: int = MAX_HOPS) -> int | None:
    """Uniform draw over nodes ``min_hops``..``max_hops`` hops from the goal set; None if there are none."""
    if not goals:
        raise ValueError("goal set is empty")
    cands = eligible_starts(graph, goals, min_hops, max_hops)
    if not cands:
        return None
    return cands[int(rng.integers(len(cands)))]


def expert_path(graph: NavGraph, start: int, goals, tol: float = 1e-9) -> list[int]:
    """Fewest-hop path from ``start`` to the goal set.

    Among fewest-hop paths the smaller total edge weight wins (weights within
    ``tol`` count as equal), then the lexicographically smaller id sequence.
    """
    goals = {int(g) for g in goals}
    if not goals:
        raise ValueError("goal set is empty")
    hops = hop_distances(graph, goals)
    if start not in hops:
        raise UnreachableError(f"node {start} cannot reach the goal set")
    adj = graph.adjacency
    h0 = hops[start]
    # best[n] = (weight, path from n to a goal) over nodes with hop <= h0
    best: dict[int, tuple[float, list[int]]] = {g: (0.0, [g]) for g in goals}
    for h in range(1, h0 + 1):
        nxt = sorted(n for n, d in hops.items() if d == h)
        for n in nxt:
            cand = None
            for m in sorted(adj[n]):
                if hops.get(m) != h - 1:
                    continue
                w = adj[n][m] + best[m][0]
                p = [n] + best[m][1]
                if (cand is None or w < cand[0] - tol
                        or (abs(w - cand[0]) <= tol and p < cand[1])):
                    cand = (w, p)
            best[n] = cand
    return best[start][1]


@dataclass(frozen=True)
class TripletParams:
    d_o: float = 2.0
    mode: str = "template-sent"
    starts_per_object: int = 1
    min_hops: int = MIN_HOPS
    max_hops: int = MAX_HOPS
    occlusion: str = "surface"
    distance_to: str = "centroid"

    def __post_init__(self):
        if not self.d_o > 0:
            raise ValueError("d_o must be positive")
        if self.mode not in ("template-obj", "template-sent"):
            raise ValueError(f"unknown instruction mode {self.mode!r}")
        if self.starts_per_object < 1:
            raise ValueError("starts_per_object must be >= 1")
        if not 1 <= self.min_hops <= self.max_hops:
            raise ValueError("need 1 <= min_hops <= max_hops")

    def to_dict(self) -> dict:
        return asdict(self)


def generate_triplets(scene_id: str, graph: NavGraph, owners: PixelOwners, rng: np.random.Generator,
                      params: TripletParams = TripletParams(), room_of=None, vocabulary=CLASSES) -> list[VlnTriplet]:
    """All triplets of one scene, objects in list order.

    ``room_of(xyz)`` returns a room label for template-sent instructions
    (``"room"`` when absent or unknown).
    """
    out = []
    for obj in owners.objects:
        goals = goal_nodes(obj, graph, owners, params.d_o, params.occlusion, params.distance_to)
        if not goals:
            continue
        cands = eligible_starts(graph, goals, params.min_hops, params.max_hops)
        if not cands:
            continue
        room = room_of(obj.centroid) if room_of is not None else None
        for _ in range(params.starts_per_object):
            start = cands[int(rng.integers(len(cands)))]
            heading = (2 * math.pi / N_HEADINGS) * int(rng.integers(N_HEADINGS))
            path = expert_path(graph, start, goals)
            text = make_instruction(params.mode, obj.class_index, room, rng, vocabulary)
            out.append(VlnTriplet(scene_id, text, start, heading, tuple(path), tuple(sorted(goals)), obj.id,
                                  {n: {"view": k, "box": b} for n, (k, b) in sorted(goals.items())},
                                  {"class": vocabulary[obj.class_index], "d_o": params.d_o}))
    return out
