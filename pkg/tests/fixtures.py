"""Small hand-built scenes and graphs shared by the tests."""
import math

import numpy as np

from vlnforge.scene.types import FloorGrid, NavGraph, NavigabilityField
from vlnforge.scene.vocab import class_index
from vlnforge.synth.truth import Room, SceneTruth, Slab, TruthObject

WALL = class_index("wall")
FLOOR = class_index("floor")
CEILING = class_index("ceiling")


def room_truth(x1=10.0, y1=10.0, objects=(), height=2.7, inner_walls=(), walls=True):
    """One closed rectangular room [0, x1] x [0, y1] with floor, ceiling and optional inner walls."""
    t = 0.1
    slabs = [Slab((0, 0, -0.1), (x1, y1, 0.0), FLOOR), Slab((0, 0, height), (x1, y1, height + 0.1), CEILING)]
    ws = []
    if walls:
        ws = [Slab((-t, -t, 0), (x1 + t, 0, height), WALL), Slab((-t, y1, 0), (x1 + t, y1 + t, height), WALL),
              Slab((-t, 0, 0), (0, y1, height), WALL), Slab((x1, 0, 0), (x1 + t, y1, height), WALL)]
    ws += [Slab(tuple(lo), tuple(hi), WALL) for lo, hi in inner_walls]
    objs = []
    for i, (name, center, extent) in enumerate(objects):
        objs.append(TruthObject(i, class_index(name), tuple(center), tuple(extent), 0))
    return SceneTruth([Room(0, 0, 0.0, 0.0, x1, y1, "bedroom")], objs, ws, [0.0], height, slabs=slabs)


def open_field(nx=50, ny=50, cell=0.1, blocked=None, height=0.0, camera=1.5):
    nav = np.ones((ny, nx), bool)
    if blocked is not None:
        nav &= ~blocked
    return NavigabilityField((FloorGrid(cell, (0.0, 0.0), nav, height),), camera)


def path_graph(n, spacing=2.5):
    nodes = {i: np.array([i * spacing, 0.0, 1.5]) for i in range(n)}
    edges = {(i, i + 1): spacing for i in range(n - 1)}
    return NavGraph(nodes, edges)


def grid_graph(nx, ny, spacing=2.5, jitter=0.0, rng=None):
    """Lattice graph; with ``jitter`` node positions move randomly and edge weights follow."""
    rng = rng or np.random.default_rng(0)
    nodes = {}
    for j in range(ny):
        for i in range(nx):
            p = np.array([i * spacing, j * spacing, 1.5])
            if jitter:
                p[:2] += rng.uniform(-jitter, jitter, 2)
            nodes[j * nx + i] = p
    edges = {}
    for j in range(ny):
        for i in range(nx):
            a = j * nx + i
            for b in ([a + 1] if i + 1 < nx else []) + ([a + nx] if j + 1 < ny else []):
                edges[(a, b)] = float(np.linalg.norm(nodes[a] - nodes[b]))
    return NavGraph(nodes, edges)


def random_graph(n, p, rng, extent=30.0):
    """Erdos-Renyi graph over random planar positions with Euclidean weights."""
    pos = {i: np.array([*rng.uniform(0, extent, 2), 1.5]) for i in range(n)}
    edges = {}
    for a in range(n):
        for b in range(a + 1, n):
            if rng.random() < p:
                edges[(a, b)] = float(np.linalg.norm(pos[a] - pos[b])) + 1e-3
    return NavGraph(pos, edges)


def heading_to(src, dst):
    return math.atan2(dst[1] - src[1], dst[0] - src[0])


def oracle_depth(origin, direction, mins, maxs, max_depth):
    """Scalar slab-method ray caster; returns (t, box index) of the first hit."""
    best_t, best_k = math.inf, -1
    for k in range(len(mins)):
        t0, t1 = 0.0, math.inf
        for a in range(3):
            if abs(direction[a]) < 1e-15:
                if origin[a] < mins[k][a] or origin[a] > maxs[k][a]:
                    t0, t1 = 1.0, 0.0
                    break
                continue
            ta = (mins[k][a] - origin[a]) / direction[a]
            tb = (maxs[k][a] - origin[a]) / direction[a]
            t0, t1 = max(t0, min(ta, tb)), min(t1, max(ta, tb))
        if t0 <= t1 and t0 < best_t:
            best_t, best_k = t0, k
    if best_t >= max_depth:
        return max_depth, -1
    return best_t, best_k


FURNITURE = ("cabinet", "table", "sofa", "bed", "dresser", "chair", "stove", "toilet", "bathtub", "shelf")


def furnished_room(n_objects=20, seed=0):
    """A 12 m x 10 m room with floor furniture on a jittered lattice and panorama spots between them."""
    rng = np.random.default_rng(seed)
    objects = []
    for k in range(n_objects):
        i, j = k % 5, k // 5
        ex, ey, ez = rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0), rng.uniform(0.5, 1.1)
        cx, cy = 1.2 + 2.4 * i + rng.uniform(-0.2, 0.2), 1.25 + 2.5 * j + rng.uniform(-0.2, 0.2)
        objects.append((FURNITURE[k % len(FURNITURE)], (cx, cy, ez / 2), (ex, ey, ez)))
    truth = room_truth(12.0, 10.0, objects)
    spots = [np.array([2.4 * i, 2.5 * j, 1.5]) for i in range(1, 5) for j in range(1, 4)]
    spots += [np.array([2.4 * i + 1.2, 0.35, 1.5]) for i in range(4)]
    return truth, spots


def truth_classes_per_voxel(centers, voxel, truth, eps=1e-4):
    """Classes of every ground-truth surface box touching each voxel cube."""
    mins, maxs, cls, _ = truth.surfaces()
    out = []
    for k in range(0, len(centers), 4096):
        c = centers[k:k + 4096]
        lo, hi = c - voxel / 2 - eps, c + voxel / 2 + eps
        touch = np.all((lo[:, None] <= maxs[None]) & (mins[None] <= hi[:, None]), axis=-1)
        out += [set(cls[row].tolist()) for row in touch]
    return out


def reference_scores(graph, triplet, walk, grounded, radius=3.0):
    """Per-episode metrics written from the metric definitions alone."""
    w = {}
    for (a, b), d in graph.edges.items():
        w[(a, b)] = w[(b, a)] = d
    length = lambda seq: sum(w[(seq[i], seq[i + 1])] for i in range(len(seq) - 1))
    near = lambda n: any(math.dist(graph.nodes[n], graph.nodes[g]) <= radius for g in triplet.goal_nodes)
    s = 1.0 if near(walk[-1]) else 0.0
    os_ = 1.0 if any(near(n) for n in walk) else 0.0
    l, p = length(triplet.expert_path), length(walk)
    if s and p == 0:
        p = l
    ratio = 1.0 if max(p, l) == 0 else l / max(p, l)
    g = 1.0 if s and grounded == triplet.target_object else 0.0
    return {"SR": s, "OSR": os_, "SPL": s * ratio, "RGS": g, "RGSPL": g * ratio}


def window_rays(a, b, window, n):
    """Patch ray directions with unit forward component, built from a look-at frame."""
    f = (b - a) / np.linalg.norm(b - a)
    right = np.cross(f, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    up = np.cross(right, f)
    half = math.tan(window / 2)
    offs = (np.arange(n) + 0.5) / n * 2 - 1
    return np.array([f + half * (ox * right - oy * up) for oy in offs for ox in offs])


def oracle_depths(origin, dirs, mins, maxs, max_depth):
    """Vectorized slab test of many rays against every box; returns first-hit distances."""
    o = np.asarray(origin, float)
    d = np.asarray(dirs, float)[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (mins[None] - o) / d
        tb = (maxs[None] - o) / d
    parallel = np.abs(d) < 1e-15
    outside = parallel & ((o < mins[None]) | (o > maxs[None]))
    lo = np.where(parallel, -np.inf, np.minimum(ta, tb))
    hi = np.where(parallel, np.inf, np.maximum(ta, tb))
    t0 = np.maximum(lo.max(axis=-1), 0.0)
    t1 = hi.min(axis=-1)
    hit = (t0 <= t1) & ~outside.any(axis=-1)
    t = np.where(hit, t0, np.inf).min(axis=1)
    return np.minimum(t, max_depth)
