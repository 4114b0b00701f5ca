"""Speaker prompts: object and view tokens an external instruction generator consumes."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..scene.types import view_angles
from ..scene.vocab import CLASSES
from .forge import VlnTriplet

VIEWS = 36


def to_node_frame(vec, heading: float) -> np.ndarray:
    """Rotate a world vector about z so the node heading becomes +x (left is +y)."""
    c, s = math.cos(heading), math.sin(heading)
    x, y, z = (float(v) for v in vec)
    return np.array([c * x + s * y, -s * x + c * y, z])


def node_heading(path, positions) -> float:
    """Direction of the last path edge; 0 for single-node paths."""
    if len(path) < 2:
        return 0.0
    d = np.asarray(positions[path[-1]]) - np.asarray(positions[path[-2]])
    return math.atan2(d[1], d[0])


@dataclass(frozen=True)
class ObjectToken:
    label: str
    location: tuple[float, float, float]
    size: tuple[float, float, float]
    feature: str


@dataclass(frozen=True)
class ViewToken:
    heading: float
    elevation: float
    feature: str


@dataclass(frozen=True)
class SpeakerPrompt:
    scene_id: str
    node: int
    frame_heading: float
    target_token: ObjectToken
    other_tokens: tuple[ObjectToken, ...] = field(default_factory=tuple)
    view_tokens: tuple[ViewToken, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["other_tokens"] = [asdict(t) for t in self.other_tokens]
        d["view_tokens"] = [asdict(t) for t in self.view_tokens]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SpeakerPrompt":
        def obj(t):
            return ObjectToken(t["label"], tuple(t["location"]), tuple(t["size"]), t["feature"])
        return cls(d["scene_id"], int(d["node"]), float(d["frame_heading"]), obj(d["target_token"]),
                   tuple(obj(t) for t in d["other_tokens"]),
                   tuple(ViewToken(float(v["heading"]), float(v["elevation"]), v["feature"]) for v in d["view_tokens"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _token(obj, origin, heading, scene_id, vocabulary) -> ObjectToken:
    loc = to_node_frame(np.asarray(obj.centroid) - np.asarray(origin), heading)
    return ObjectToken(vocabulary[obj.class_index], tuple(round(float(v), 6) for v in loc),
                       tuple(round(float(v), 6) for v in obj.extent), f"obj/{scene_id}/{obj.id}")


def build_prompt(t: VlnTriplet, objects: dict, positions: dict, visible: dict, max_other: int = 20,
                 vocabulary=CLASSES) -> SpeakerPrompt:
    """Prompt at the final path node.

    ``objects`` maps object id to object, ``positions`` node id to position and
    ``visible`` node id to the ids of objects seen from it. Other objects are
    the visible ones nearest the node first, at most ``max_other``.
    """
    node = t.expert_path[-1]
    origin = np.asarray(positions[node])
    heading = node_heading(t.expert_path, positions)
    target = _token(objects[t.target_object], origin, heading, t.scene_id, vocabulary)
    others = [objects[i] for i in sorted(visible.get(node, ())) if i != t.target_object and i in objects]
    others.sort(key=lambda o: (float(np.linalg.norm(np.asarray(o.centroid) - origin)), o.id))
    other_tokens = tuple(_token(o, origin, heading, t.scene_id, vocabulary) for o in others[:max_other])
    views = tuple(ViewToken(*view_angles(k), f"view/{t.scene_id}/{node}/{k}") for k in range(VIEWS))
    return SpeakerPrompt(t.scene_id, node, heading, target, other_tokens, views)


def export_prompts(triplets, objects: dict, positions: dict, visible: dict, path=None,
                   max_other: int = 20) -> list[SpeakerPrompt]:
    """One prompt per triplet, optionally written as JSON lines to ``path``."""
    prompts = [build_prompt(t, objects, positions, visible, max_other) for t in triplets]
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            for p in prompts:
                fh.write(p.to_json() + "\n")
    return prompts
