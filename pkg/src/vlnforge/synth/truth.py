"""Ground-truth geometry of a synthetic building."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..scene.vocab import CLASSES, class_index


@dataclass(frozen=True)
class Room:
    id: int
    floor: int
    x0: float
    y0: float
    x1: float
    y1: float
    type: str

    def contains(self, x: float, y: float, margin: float = 0.0) -> bool:
        return self.x0 + margin <= x <= self.x1 - margin and self.y0 + margin <= y <= self.y1 - margin


@dataclass(frozen=True)
class TruthObject:
    id: int
    class_index: int
    center: tuple[float, float, float]
    extent: tuple[float, float, float]
    room_id: int
    mount: str = "floor"

    @property
    def min(self) -> np.ndarray:
        return np.asarray(self.center) - np.asarray(self.extent) / 2

    @property
    def max(self) -> np.ndarray:
        return np.asarray(self.center) + np.asarray(self.extent) / 2


@dataclass(frozen=True)
class Slab:
    min: tuple[float, float, float]
    max: tuple[float, float, float]
    class_index: int


@dataclass
class SceneTruth:
    """Rooms, objects and structural slabs (walls, floors, ceilings)."""

    rooms: list[Room]
    objects: list[TruthObject]
    walls: list[Slab]
    floors: list[float]
    ceiling_height: float = 2.7
    vocabulary: tuple[str, ...] = CLASSES
    slabs: list[Slab] = field(default_factory=list)  # floor and ceiling plates

    def __post_init__(self):
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError("object ids must be unique")
        rooms = {r.id: r for r in self.rooms}
        for o in self.objects:
            if min(o.extent) <= 0:
                raise ValueError(f"object {o.id} has non-positive extent")
            r = rooms[o.room_id]
            lo, hi = o.min, o.max
            if lo[0] < r.x0 - 1e-9 or hi[0] > r.x1 + 1e-9 or lo[1] < r.y0 - 1e-9 or hi[1] > r.y1 + 1e-9:
                raise ValueError(f"object {o.id} leaves room {r.id}")
        self._arrays = None

    def object(self, oid: int) -> TruthObject:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    def room_of(self, x: float, y: float, z: float | None = None) -> Room | None:
        for r in self.rooms:
            if z is not None and self.floor_index(z) != r.floor:
                continue
            if r.contains(x, y):
                return r
        return None

    def floor_index(self, z: float) -> int:
        hs = np.asarray(self.floors)
        below = np.nonzero(hs <= z + 1e-9)[0]
        return int(below[-1]) if len(below) else 0

    def surfaces(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """All renderable boxes as (mins, maxs, class, instance) arrays.

        Instance ids are object id + 1 for objects and 0 for structure.
        """
        if self._arrays is None:
            boxes = [(s.min, s.max, s.class_index, 0) for s in self.walls + self.slabs]
            boxes += [(tuple(o.min), tuple(o.max), o.class_index, o.id + 1) for o in self.objects]
            if boxes:
                mins = np.array([b[0] for b in boxes], np.float64)
                maxs = np.array([b[1] for b in boxes], np.float64)
                cls = np.array([b[2] for b in boxes], np.int64)
                inst = np.array([b[3] for b in boxes], np.int64)
            else:
                mins = maxs = np.zeros((0, 3))
                cls = inst = np.zeros(0, np.int64)
            self._arrays = (mins, maxs, cls, inst)
        return self._arrays

    def class_name(self, idx: int) -> str:
        return self.vocabulary[idx]

    def to_dict(self) -> dict:
        return {
            "rooms": [r.__dict__ for r in self.rooms],
            "objects": [
                {"id": o.id, "class": self.vocabulary[o.class_index], "class_index": o.class_index,
                 "center": list(o.center), "extent": list(o.extent), "room_id": o.room_id, "mount": o.mount}
                for o in self.objects
            ],
            "walls": [{"min": list(s.min), "max": list(s.max), "class_index": s.class_index} for s in self.walls],
            "slabs": [{"min": list(s.min), "max": list(s.max), "class_index": s.class_index} for s in self.slabs],
            "floors": list(self.floors),
            "ceiling_height": self.ceiling_height,
            "vocabulary": list(self.vocabulary),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneTruth":
        vocab = tuple(d.get("vocabulary", CLASSES))
        objects = [
            TruthObject(int(o["id"]),
                        int(o["class_index"]) if "class_index" in o else class_index(o["class"], vocab),
                        tuple(o["center"]), tuple(o["extent"]), int(o["room_id"]), o.get("mount", "floor"))
            for o in d["objects"]
        ]

        def slabs(key):
            return [Slab(tuple(s["min"]), tuple(s["max"]), int(s["class_index"])) for s in d.get(key, [])]

        return cls([Room(**r) for r in d["rooms"]], objects, slabs("walls"), list(d["floors"]),
                   float(d.get("ceiling_height", 2.7)), vocab, slabs("slabs"))
