"""Reading and writing scene bundle directories (see format.md)."""
from __future__ import annotations

import hashlib
import json
import os
import shutil
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np
from PIL import Image

from .types import (
    CameraIntrinsics,
    FloorGrid,
    NavigabilityField,
    PanoramaNode,
    Pose,
    SceneBundle,
    StairLink,
    ViewObservation,
)

FORMAT_VERSION = 1
NODE_MAGIC = b"PNV1"
_NODE_HEADER = struct.Struct("<4sHHHHH")  # magic, views, height, width, k, classes
Q = 65535
ZLIB_LEVEL = 6


class BundleError(Exception):
    pass


class BundleMissingError(BundleError, FileNotFoundError):
    pass


class BundleVersionError(BundleError):
    """Manifest unreadable or written by an incompatible format version."""


class BundleChecksumError(BundleError):
    pass


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _topk(view: ViewObservation, k: int) -> tuple[np.ndarray, np.ndarray]:
    h, w, kk = view.prob_index.shape
    idx = np.zeros((h, w, k), np.uint16)
    val = np.zeros((h, w, k), np.uint16)
    if kk > k:
        # keep the k largest entries; the rest becomes void residual
        order = np.argsort(-view.prob_value, axis=-1, kind="stable")[..., :k]
        src_i = np.take_along_axis(view.prob_index, order, -1)
        src_v = np.take_along_axis(view.prob_value, order, -1)
    else:
        src_i, src_v = view.prob_index, view.prob_value
    take = min(k, kk)
    idx[..., :take] = src_i[..., :take]
    val[..., :take] = np.clip(np.rint(src_v[..., :take].astype(np.float64) * Q), 0, Q)
    return idx, val


def encode_node(node: PanoramaNode, k: int) -> bytes:
    """All views of one node as a single zlib-compressed blob."""
    v0 = node.views[0]
    h, w = v0.intrinsics.height, v0.intrinsics.width
    parts = [_NODE_HEADER.pack(NODE_MAGIC, len(node.views), h, w, k, v0.n_classes)]
    for view in node.views:
        if (view.intrinsics.height, view.intrinsics.width) != (h, w):
            raise BundleError("all views of a node must share one image size")
        idx, val = _topk(view, k)
        inst = view.instance_ids if view.instance_ids is not None else np.zeros((h, w), np.int32)
        parts += [view.depth.astype("<f4").tobytes(), idx.astype("<u2").tobytes(),
                  val.astype("<u2").tobytes(), inst.astype("<i4").tobytes()]
    return zlib.compress(b"".join(parts), ZLIB_LEVEL)


def decode_node(blob: bytes):
    """Inverse of ``encode_node``: header tuple and per-view (depth, idx, val, inst) arrays."""
    try:
        data = zlib.decompress(blob)
    except zlib.error as e:
        raise BundleVersionError(f"corrupt node file: {e}") from None
    if len(data) < _NODE_HEADER.size:
        raise BundleVersionError("truncated node file")
    magic, n, h, w, k, c = _NODE_HEADER.unpack_from(data)
    if magic != NODE_MAGIC:
        raise BundleVersionError(f"bad node file magic {magic!r}")
    px = h * w
    per_view = px * 4 + 2 * px * k * 2 + px * 4
    if len(data) != _NODE_HEADER.size + n * per_view:
        raise BundleVersionError("node file size mismatch")
    views = []
    off = _NODE_HEADER.size
    for _ in range(n):
        depth = np.frombuffer(data, "<f4", px, off).reshape(h, w)
        off += px * 4
        idx = np.frombuffer(data, "<u2", px * k, off).reshape(h, w, k).astype(np.uint16)
        off += px * k * 2
        val = (np.frombuffer(data, "<u2", px * k, off).reshape(h, w, k) / Q).astype(np.float32)
        off += px * k * 2
        inst = np.frombuffer(data, "<i4", px, off).reshape(h, w).astype(np.int32)
        off += px * 4
        views.append((depth.astype(np.float32), idx, val, inst))
    return (n, h, w, k, c), views


def write_field(field: NavigabilityField, root: Path, subdir: str = "field") -> tuple[list[str], list[dict]]:
    """Write floor masks (8-bit PNG, 255 = navigable) and their metadata under ``root/subdir``."""
    (root / subdir).mkdir(parents=True, exist_ok=True)
    files, floors = [], []
    for i, fl in enumerate(field.floors):
        png = f"{subdir}/floor{i}.png"
        meta = f"{subdir}/floor{i}.json"
        Image.fromarray(fl.navigable.astype(np.uint8) * 255, mode="L").save(root / png, optimize=False)
        _dump_json(root / meta, {"cell_size": fl.cell_size, "origin": list(fl.origin), "height": fl.height})
        files += [png, meta]
        floors.append({"mask": png, "meta": meta})
    return files, floors


def field_entry(field: NavigabilityField, floors: list[dict]) -> dict:
    return {
        "camera_height": field.camera_height,
        "floors": floors,
        "stairs": [
            {"floor_a": s.floor_a, "cell_a": list(s.cell_a), "floor_b": s.floor_b,
             "cell_b": list(s.cell_b), "length": s.length}
            for s in field.stairs
        ],
    }


def read_field(root: Path, entry: dict) -> NavigabilityField:
    floors = []
    for fl in entry["floors"]:
        if not (root / fl["meta"]).is_file() or not (root / fl["mask"]).is_file():
            raise BundleMissingError(f"navigability files missing under {root}")
        meta = json.loads((root / fl["meta"]).read_text())
        mask = np.asarray(Image.open(root / fl["mask"])) > 127
        floors.append(FloorGrid(float(meta["cell_size"]), tuple(meta["origin"]), mask, float(meta["height"])))
    stairs = tuple(
        StairLink(s["floor_a"], tuple(s["cell_a"]), s["floor_b"], tuple(s["cell_b"]), s["length"])
        for s in entry.get("stairs", [])
    )
    return NavigabilityField(tuple(floors), float(entry.get("camera_height", 1.5)), stairs)


def save_bundle(bundle: SceneBundle, path, k: int = 5) -> Path:
    """Write ``bundle`` to directory ``path`` (replaced atomically if it exists)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        _write_bundle(bundle, tmp, k)
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def _write_bundle(bundle: SceneBundle, root: Path, k: int) -> None:
    files, floors = write_field(bundle.field, root)
    nodes = []
    if bundle.nodes:
        (root / "nodes").mkdir()
    for node in bundle.nodes:
        rel = f"nodes/{node.id}.bin"
        (root / rel).write_bytes(encode_node(node, k))
        files.append(rel)
        views = [{"k": vk, "heading": v.pose.heading, "elevation": v.pose.elevation,
                  "intrinsics": v.intrinsics.to_dict(), "instances": v.instance_ids is not None}
                 for vk, v in enumerate(node.views)]
        nodes.append({"id": node.id, "position": [float(c) for c in node.position], "data": rel,
                      "views": views})
    if bundle.ground_truth is not None:
        _dump_json(root / "truth.json", bundle.ground_truth.to_dict())
        files.append("truth.json")
    manifest = {
        "format_version": FORMAT_VERSION,
        "scene_id": bundle.scene_id,
        "class_vocabulary": list(bundle.class_vocabulary),
        **field_entry(bundle.field, floors),
        "nodes": nodes,
        "topk": k,
        "meta": bundle.meta,
        "checksums": {f: sha256_file(root / f) for f in sorted(files)},
    }
    _dump_json(root / "manifest.json", manifest)


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def load_bundle(path, verify: bool = True) -> SceneBundle:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise BundleMissingError(f"no manifest.json in {path}")
    try:
        manifest = json.loads(mpath.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise BundleVersionError(f"unparseable manifest: {e}") from e
    if not isinstance(manifest, dict) or manifest.get("format_version") != FORMAT_VERSION:
        raise BundleVersionError(
            f"unsupported bundle format version {manifest.get('format_version') if isinstance(manifest, dict) else None!r}")
    checksums = manifest.get("checksums", {})
    for rel, digest in checksums.items():
        f = path / rel
        if not f.is_file():
            raise BundleMissingError(f"bundle file missing: {rel}")
        if verify and sha256_file(f) != digest:
            raise BundleChecksumError(f"checksum mismatch for {rel}")

    vocab = tuple(manifest["class_vocabulary"])
    field = read_field(path, manifest)
    nodes = []
    for n in manifest["nodes"]:
        (count, h, w, _, c), arrays = decode_node((path / n["data"]).read_bytes())
        entries = sorted(n["views"], key=lambda e: e["k"])
        if count != len(entries):
            raise BundleVersionError(f"node {n['id']}: {count} stored views, {len(entries)} listed")
        if c != len(vocab):
            raise BundleVersionError("node file class count differs from vocabulary")
        views = []
        for entry, (depth, idx, val, inst) in zip(entries, arrays):
            intr = CameraIntrinsics.from_dict(entry["intrinsics"])
            if (intr.height, intr.width) != (h, w):
                raise BundleVersionError(f"node {n['id']}: image size differs from intrinsics")
            pose = Pose(n["position"], entry["heading"], entry["elevation"])
            views.append(ViewObservation(pose, intr, depth, idx, val, c, inst if entry["instances"] else None))
        nodes.append(PanoramaNode(int(n["id"]), n["position"], tuple(views)))

    truth = None
    if (path / "truth.json").is_file():
        from ..synth.truth import SceneTruth

        truth = SceneTruth.from_dict(json.loads((path / "truth.json").read_text()))
    return SceneBundle(manifest["scene_id"], field, tuple(nodes), vocab, truth, manifest.get("meta", {}))
