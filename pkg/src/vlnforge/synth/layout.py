"""Deterministic generator of multi-room synthetic buildings."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..scene.types import FloorGrid, NavigabilityField, SceneBundle
from ..scene.vocab import CLASSES, class_index
from .truth import Room, SceneTruth, Slab, TruthObject

# (length along wall, depth, height) in meters, and mount point
OBJECT_SIZES: dict[str, tuple[tuple[float, float, float], str]] = {
    "bed": ((1.6, 2.0, 0.6), "floor"),
    "chair": ((0.5, 0.5, 0.9), "floor"),
    "sofa": ((2.0, 0.9, 0.85), "floor"),
    "table": ((1.4, 0.9, 0.75), "floor"),
    "desk": ((1.2, 0.6, 0.75), "floor"),
    "cabinet": ((1.0, 0.5, 0.9), "floor"),
    "wardrobe": ((1.2, 0.6, 2.0), "floor"),
    "shelf": ((1.0, 0.35, 1.8), "floor"),
    "dresser": ((1.2, 0.5, 0.8), "floor"),
    "nightstand": ((0.5, 0.45, 0.55), "floor"),
    "toilet": ((0.45, 0.7, 0.8), "floor"),
    "sink": ((0.6, 0.5, 0.9), "floor"),
    "bathtub": ((1.7, 0.75, 0.6), "floor"),
    "shower": ((0.9, 0.9, 2.0), "floor"),
    "mirror": ((0.6, 0.05, 0.9), "wall"),
    "window": ((1.2, 0.05, 1.2), "wall"),
    "picture": ((0.7, 0.05, 0.5), "wall"),
    "television": ((1.1, 0.08, 0.65), "wall"),
    "lamp": ((0.4, 0.4, 1.5), "floor"),
    "plant": ((0.5, 0.5, 1.0), "floor"),
    "refrigerator": ((0.8, 0.7, 1.8), "floor"),
    "stove": ((0.7, 0.6, 0.9), "floor"),
    "microwave": ((0.55, 0.45, 0.4), "floor"),
    "dishwasher": ((0.6, 0.6, 0.85), "floor"),
    "washing machine": ((0.6, 0.6, 0.85), "floor"),
    "counter": ((1.8, 0.6, 0.9), "floor"),
    "stool": ((0.4, 0.4, 0.65), "floor"),
    "bench": ((1.4, 0.45, 0.45), "floor"),
    "armchair": ((0.85, 0.85, 0.9), "floor"),
    "swivel chair": ((0.6, 0.6, 1.0), "floor"),
    "ottoman": ((0.6, 0.6, 0.45), "floor"),
    "fireplace": ((1.4, 0.5, 1.1), "floor"),
    "piano": ((1.5, 0.6, 1.2), "floor"),
    "chandelier": ((0.7, 0.7, 0.5), "ceiling"),
    "curtain": ((1.4, 0.1, 2.2), "wall"),
    "clock": ((0.35, 0.05, 0.35), "wall"),
    "box": ((0.5, 0.5, 0.5), "floor"),
}

# vertical center of wall-mounted objects
WALL_Z = {"mirror": 1.5, "window": 1.5, "picture": 1.6, "television": 1.3, "curtain": 1.35, "clock": 2.0}

ROOM_CONTENTS: dict[str, tuple[str, ...]] = {
    "bedroom": ("bed", "nightstand", "wardrobe", "dresser", "lamp", "mirror", "window", "picture",
                "curtain", "chair", "chandelier"),
    "kitchen": ("refrigerator", "stove", "microwave", "dishwasher", "counter", "stool", "table",
                "window", "cabinet", "clock"),
    "living room": ("sofa", "armchair", "table", "television", "shelf", "plant", "lamp", "fireplace",
                    "piano", "picture", "window", "ottoman", "chandelier", "curtain"),
    "bathroom": ("toilet", "sink", "bathtub", "shower", "mirror", "cabinet", "window", "box"),
    "office": ("desk", "swivel chair", "shelf", "cabinet", "lamp", "plant", "picture", "window",
               "clock", "box"),
    "dining room": ("table", "chair", "cabinet", "picture", "chandelier", "window", "plant", "dresser"),
    "hallway": ("bench", "plant", "picture", "mirror", "shelf", "box", "clock"),
    "laundry room": ("washing machine", "cabinet", "shelf", "sink", "box", "window"),
}

OBJECT_GAP = 0.3
DOOR_CLEARANCE = 0.9
BLOCKING_HEIGHT = 1.8
PLACEMENT_ATTEMPTS = 400
PLACEMENT_RESTARTS = 8


class GenerationError(ValueError):
    pass


@dataclass(frozen=True)
class SceneParams:
    room_count: tuple[int, int] = (8, 12)
    objects_per_room: tuple[int, int] = (4, 7)
    room_size: tuple[float, float] = (3.5, 5.5)
    floors: int = 1
    ceiling_height: float = 2.7
    floor_spacing: float = 3.0
    wall_thickness: float = 0.1
    door_width: float = 1.6
    extra_door_prob: float = 0.5
    agent_radius: float = 0.2
    cell_size: float = 0.1
    camera_height: float = 1.5

    def validate(self) -> None:
        for name in ("room_count", "objects_per_room", "room_size"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise GenerationError(f"{name} range is empty: {lo} > {hi}")
        if self.room_count[0] < 1:
            raise GenerationError("need at least one room")
        if self.objects_per_room[0] < 0:
            raise GenerationError("object count cannot be negative")
        if self.floors < 1:
            raise GenerationError("need at least one floor")
        if self.room_size[0] < self.door_width + 1.0 or self.room_size[0] < 2 * (self.agent_radius + self.cell_size) + 1.0:
            raise GenerationError(f"rooms of {self.room_size[0]} m cannot fit a doorway and free floor")
        if self.camera_height >= self.ceiling_height:
            raise GenerationError("camera above ceiling")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["room_count"] = list(self.room_count)
        d["objects_per_room"] = list(self.objects_per_room)
        d["room_size"] = list(self.room_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneParams":
        d = dict(d)
        for k in ("room_count", "objects_per_room", "room_size"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class _Door:
    axis: str       # "x": wall runs along x (boundary at fixed y); "y": along y
    fixed: float    # boundary coordinate
    lo: float
    hi: float


def _room_grid(rng: np.random.Generator, p: SceneParams):
    n = int(rng.integers(p.room_count[0], p.room_count[1] + 1))
    cols = int(math.ceil(math.sqrt(n)))
    rows = int(math.ceil(n / cols))
    widths = rng.uniform(*p.room_size, size=cols)
    depths = rng.uniform(*p.room_size, size=rows)
    xs = np.concatenate([[0.0], np.cumsum(widths)])
    ys = np.concatenate([[0.0], np.cumsum(depths)])
    cells = [(r, c) for r in range(rows) for c in range(cols)][:n]
    return cells, xs, ys


def _doors(rng, cells, xs, ys, p: SceneParams) -> dict[tuple, _Door]:
    present = set(cells)
    adj = []
    for (r, c) in cells:
        if (r, c + 1) in present:
            adj.append(((r, c), (r, c + 1)))
        if (r + 1, c) in present:
            adj.append(((r, c), (r + 1, c)))
    # random spanning tree keeps every room reachable
    order = rng.permutation(len(adj))
    parent = {cell: cell for cell in cells}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    chosen = []
    for k in order:
        a, b = adj[k]
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            chosen.append(adj[k])
        elif rng.random() < p.extra_door_prob:
            chosen.append(adj[k])
    doors = {}
    margin = 0.3 + p.wall_thickness
    for a, b in sorted(chosen):
        (r, c), (r2, c2) = a, b
        if r == r2:  # east-west neighbours share a wall along y at x = xs[c+1]
            lo, hi, axis, fixed = ys[r], ys[r + 1], "y", xs[c + 1]
        else:
            lo, hi, axis, fixed = xs[c], xs[c + 1], "x", ys[r + 1]
        center = rng.uniform(lo + margin + p.door_width / 2, hi - margin - p.door_width / 2)
        doors[(a, b)] = _Door(axis, float(fixed), float(center - p.door_width / 2), float(center + p.door_width / 2))
    return doors


def _wall_slabs(axis, fixed, lo, hi, gaps, z0, z1, t, wall_cls) -> list[Slab]:
    """Slabs along one room side, split around door gaps."""
    pieces = []
    start = lo - t / 2
    for g0, g1 in sorted(gaps):
        pieces.append((start, g0))
        start = g1
    pieces.append((start, hi + t / 2))
    out = []
    for a, b in pieces:
        if b - a <= 1e-9:
            continue
        if axis == "x":
            out.append(Slab((a, fixed - t / 2, z0), (b, fixed + t / 2, z1), wall_cls))
        else:
            out.append(Slab((fixed - t / 2, a, z0), (fixed + t / 2, b, z1), wall_cls))
    return out


def _separated(lo, hi, boxes, gap) -> bool:
    for blo, bhi in boxes:
        if np.all(lo < bhi + gap) and np.all(blo < hi + gap):
            return False
    return True


def _place_objects(rng, room: Room, n_obj: int, z_floor: float, p: SceneParams, door_zones, next_id: int,
                   wall_gaps) -> list[TruthObject]:
    t = p.wall_thickness
    ix0, iy0, ix1, iy1 = room.x0 + t / 2, room.y0 + t / 2, room.x1 - t / 2, room.y1 - t / 2
    ceil = z_floor + p.ceiling_height
    choices = ROOM_CONTENTS[room.type]
    placed: list[TruthObject] = []
    boxes: list[tuple[np.ndarray, np.ndarray]] = []
    attempts = restarts = 0
    while len(placed) < n_obj:
        attempts += 1
        if attempts > PLACEMENT_ATTEMPTS:
            # an unlucky early placement can block the rest; start the room over
            restarts += 1
            if restarts > PLACEMENT_RESTARTS:
                raise GenerationError(f"could not place {n_obj} objects in room {room.id}")
            placed, boxes, attempts = [], [], 0
        name = choices[int(rng.integers(len(choices)))]
        (along, depth, height), mount = OBJECT_SIZES[name]
        scale = rng.uniform(0.9, 1.1)
        along, depth = along * scale, depth * scale
        if mount != "wall":
            height *= scale
        side = int(rng.integers(4))  # 0: y-low wall, 1: x-high, 2: y-high, 3: x-low
        if mount == "ceiling":
            cx, cy = rng.uniform(ix0 + 0.6, ix1 - 0.6), rng.uniform(iy0 + 0.6, iy1 - 0.6)
            ex, ey = along, depth
            z0 = ceil - 0.1 - height
        elif mount == "wall" or rng.random() < 0.6:
            span_lo, span_hi = (ix0, ix1) if side in (0, 2) else (iy0, iy1)
            if span_hi - span_lo < along + 0.2:
                continue
            s = rng.uniform(span_lo + 0.1 + along / 2, span_hi - 0.1 - along / 2)
            off = 0.0 if mount == "wall" else 0.05
            if side == 0:
                cx, cy, ex, ey = s, iy0 + off + depth / 2, along, depth
            elif side == 2:
                cx, cy, ex, ey = s, iy1 - off - depth / 2, along, depth
            elif side == 1:
                cx, cy, ex, ey = ix1 - off - depth / 2, s, depth, along
            else:
                cx, cy, ex, ey = ix0 + off + depth / 2, s, depth, along
            z0 = z_floor + (WALL_Z[name] - height / 2 if mount == "wall" else 0.0)
            if mount == "wall":
                # wall-mounted objects must not cover a doorway on that side
                g_lo, g_hi = s - along / 2 - 0.2, s + along / 2 + 0.2
                if any(g0 < g_hi and g_lo < g1 for g0, g1 in wall_gaps[side]):
                    continue
        else:
            if rng.random() < 0.5:
                along, depth = depth, along
            ex, ey = along, depth
            if ix1 - ix0 < ex + 1.2 or iy1 - iy0 < ey + 1.2:
                continue
            cx = rng.uniform(ix0 + 0.6 + ex / 2, ix1 - 0.6 - ex / 2)
            cy = rng.uniform(iy0 + 0.6 + ey / 2, iy1 - 0.6 - ey / 2)
            z0 = z_floor
        lo = np.array([cx - ex / 2, cy - ey / 2, z0])
        hi = np.array([cx + ex / 2, cy + ey / 2, z0 + height])
        if lo[0] < ix0 - 1e-9 or hi[0] > ix1 + 1e-9 or lo[1] < iy0 - 1e-9 or hi[1] > iy1 + 1e-9:
            continue
        if not _separated(lo, hi, boxes, OBJECT_GAP):
            continue
        if mount == "floor" and not _separated(lo, hi, door_zones, 0.0):
            continue
        boxes.append((lo, hi))
        center = tuple(float(v) for v in (lo + hi) / 2)
        extent = tuple(float(v) for v in hi - lo)
        placed.append(TruthObject(next_id + len(placed), class_index(name), center, extent, room.id, mount))
    return placed


def _navigability(rooms_xy, walls: list[Slab], objects: list[TruthObject], xs, ys, z_floor, p: SceneParams) -> FloorGrid:
    cs = p.cell_size
    origin = (-p.wall_thickness, -p.wall_thickness)
    nx = int(math.ceil((xs[-1] + 2 * p.wall_thickness) / cs))
    ny = int(math.ceil((ys[-1] + 2 * p.wall_thickness) / cs))
    cx = origin[0] + (np.arange(nx) + 0.5) * cs
    cy = origin[1] + (np.arange(ny) + 0.5) * cs
    inside = np.zeros((ny, nx), bool)
    for x0, y0, x1, y1 in rooms_xy:
        inside |= (cx[None, :] >= x0) & (cx[None, :] <= x1) & (cy[:, None] >= y0) & (cy[:, None] <= y1)
    free = inside.copy()
    r = p.agent_radius
    obstacles = [(s.min, s.max) for s in walls]
    obstacles += [(o.min, o.max) for o in objects if o.min[2] - z_floor < BLOCKING_HEIGHT]
    for lo, hi in obstacles:
        blocked = ((cx[None, :] > lo[0] - r) & (cx[None, :] < hi[0] + r)
                   & (cy[:, None] > lo[1] - r) & (cy[:, None] < hi[1] + r))
        free &= ~blocked
    return FloorGrid(cs, origin, free, z_floor)


def generate_scene(seed: int, params: SceneParams | None = None, scene_id: str | None = None) -> SceneBundle:
    """Build a synthetic building bundle (no panoramas) with its ``SceneTruth``."""
    p = params or SceneParams()
    p.validate()
    rng = np.random.default_rng(seed)
    cells, xs, ys = _room_grid(rng, p)
    doors = _doors(rng, cells, xs, ys, p)
    wall_cls, floor_cls, ceil_cls = class_index("wall"), class_index("floor"), class_index("ceiling")
    t = p.wall_thickness
    room_types = tuple(ROOM_CONTENTS)

    rooms: list[Room] = []
    objects: list[TruthObject] = []
    walls: list[Slab] = []
    slabs: list[Slab] = []
    grids: list[FloorGrid] = []
    floor_heights = [round(f * p.floor_spacing, 10) for f in range(p.floors)]
    present = set(cells)
    for f, zf in enumerate(floor_heights):
        z1 = zf + p.ceiling_height
        floor_walls: list[Slab] = []
        floor_rooms: list[Room] = []
        door_zones = []
        for (r, c) in cells:
            room = Room(len(rooms) + len(floor_rooms), f, float(xs[c]), float(ys[r]), float(xs[c + 1]),
                        float(ys[r + 1]), room_types[int(rng.integers(len(room_types)))])
            floor_rooms.append(room)
        for (r, c), room in zip(cells, floor_rooms):
            # each interior wall is emitted once, by the room on its low side
            sides = {
                0: ((r - 1, c), "x", room.y0, room.x0, room.x1),
                1: ((r, c + 1), "y", room.x1, room.y0, room.y1),
                2: ((r + 1, c), "x", room.y1, room.x0, room.x1),
                3: ((r, c - 1), "y", room.x0, room.y0, room.y1),
            }
            for side, (nb, axis, fixed, lo, hi) in sides.items():
                key = tuple(sorted([(r, c), nb]))
                door = doors.get(key)
                gaps = [(door.lo, door.hi)] if door else []
                if nb in present and side in (0, 3):
                    continue
                floor_walls += _wall_slabs(axis, fixed, lo, hi, gaps, zf, z1, t, wall_cls)
        for d in doors.values():
            if d.axis == "x":
                door_zones.append((np.array([d.lo, d.fixed - DOOR_CLEARANCE, zf]),
                                   np.array([d.hi, d.fixed + DOOR_CLEARANCE, z1])))
            else:
                door_zones.append((np.array([d.fixed - DOOR_CLEARANCE, d.lo, zf]),
                                   np.array([d.fixed + DOOR_CLEARANCE, d.hi, z1])))
        floor_objects: list[TruthObject] = []
        for (r, c), room in zip(cells, floor_rooms):
            wall_gaps = {k: [] for k in range(4)}
            for key, d in doors.items():
                if (r, c) not in key:
                    continue
                other = key[0] if key[1] == (r, c) else key[1]
                side = {(r - 1, c): 0, (r, c + 1): 1, (r + 1, c): 2, (r, c - 1): 3}[other]
                wall_gaps[side].append((d.lo, d.hi))
            n_obj = int(rng.integers(p.objects_per_room[0], p.objects_per_room[1] + 1))
            floor_objects += _place_objects(rng, room, n_obj, zf, p, door_zones,
                                            len(objects) + len(floor_objects), wall_gaps)
        lo_x, hi_x = -t / 2, float(xs[-1]) + t / 2
        lo_y, hi_y = -t / 2, float(ys[-1]) + t / 2
        slabs.append(Slab((lo_x, lo_y, zf - 0.1), (hi_x, hi_y, zf), floor_cls))
        slabs.append(Slab((lo_x, lo_y, z1), (hi_x, hi_y, z1 + 0.1), ceil_cls))
        rooms_xy = [(rm.x0, rm.y0, rm.x1, rm.y1) for rm in floor_rooms]
        grids.append(_navigability(rooms_xy, floor_walls, floor_objects, xs, ys, zf, p))
        rooms += floor_rooms
        walls += floor_walls
        objects += floor_objects

    truth = SceneTruth(rooms, objects, walls, floor_heights, p.ceiling_height, CLASSES, slabs)
    field = NavigabilityField(tuple(grids), p.camera_height)
    return SceneBundle(scene_id or f"synth-{seed}", field, (), CLASSES, truth,
                       {"seed": int(seed), "params": p.to_dict()})
