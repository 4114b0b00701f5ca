"""JSON artifacts shared by the CLI stages: graphs and fused objects."""
from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .fusion.objects import Object3D
from .scene.types import NavGraph
from .scene.vocab import CLASSES


def dump_json(path, obj, indent: int | None = 1) -> None:
    Path(path).write_text(json.dumps(obj, indent=indent, sort_keys=True) + "\n", encoding="utf-8")


def load_json(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing file: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: invalid JSON ({e.msg})") from None


def graph_to_dict(graph: NavGraph, scene_id: str = "", meta: dict | None = None) -> dict:
    d = graph.to_dict()
    d["scene_id"] = scene_id
    if meta:
        d["meta"] = meta
    return d


def save_graph(path, graph: NavGraph, scene_id: str = "", meta: dict | None = None) -> None:
    dump_json(path, graph_to_dict(graph, scene_id, meta))


def load_graph(path) -> tuple[str, NavGraph]:
    d = load_json(path)
    return d.get("scene_id", ""), NavGraph.from_dict(d)


def _encode_voxels(idx: np.ndarray) -> str:
    return base64.b64encode(np.asarray(idx, "<i4").tobytes()).decode("ascii")


def _decode_voxels(s: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), "<i4").reshape(-1, 3).astype(np.int64)


def objects_to_dict(scene_id: str, objects, voxel_size: float, origin, view_map=None, visibility=None,
                    vocabulary=CLASSES) -> dict:
    """objects.json payload; member voxels are base64 little-endian int32 (x, y, z) triples."""
    objs = []
    for o in objects:
        d = o.to_dict(vocabulary)
        d["voxels"] = _encode_voxels(o.voxels)
        objs.append(d)
    out = {"scene_id": scene_id, "voxel_size": voxel_size, "origin": list(origin), "objects": objs,
           "view_map": view_map.to_dict() if view_map is not None else {},
           "visibility": {str(n): sorted(int(i) for i in ids) for n, ids in sorted((visibility or {}).items())}}
    return out


def save_objects(path, *args, **kwargs) -> None:
    dump_json(path, objects_to_dict(*args, **kwargs), indent=None)


def load_objects(path):
    """(scene_id, objects, voxel_size, origin, visibility, view_map)."""
    d = load_json(path)
    objects = []
    for o in d["objects"]:
        idx = _decode_voxels(o["voxels"]) if "voxels" in o else np.zeros((0, 3), np.int64)
        objects.append(Object3D(int(o["id"]), int(o["class_index"]), np.asarray(o["center"], float),
                                np.asarray(o["extent"], float), idx, np.asarray(o["centroid"], float)))
    visibility = {int(k): [int(i) for i in v] for k, v in d.get("visibility", {}).items()}
    return (d.get("scene_id", ""), objects, float(d.get("voxel_size", 0.1)), tuple(d.get("origin", (0, 0, -0.05))),
            visibility, d.get("view_map", {}))
