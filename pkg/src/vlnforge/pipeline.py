"""End-to-end orchestration: scenes -> graphs -> fused objects -> triplets -> dataset directory.

Each scene runs independently with seeds derived from (config seed, scene
index, stage), so the output does not depend on how many worker processes
are used. Layout of a dataset directory::

    config.yaml  manifest.json  stats.json  triplets.jsonl  prompts.jsonl
    scenes/<scene id>/{graph.json, objects.json, triplets.jsonl, prompts.jsonl,
                       truth.json, field.json, field/, bundle/}
    quarantine/<scene id>/   partial outputs of a failed scene
"""
from __future__ import annotations

import hashlib
import logging
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import artifacts
from .config import PipelineConfig, derive_seed
from .fusion import fuse_panoramas, label_accuracy
from .fusion.voxels import DEFAULT_ORIGIN
from .navgraph.geodesic import GeodesicGrid
from .navgraph.graph import build_graph, connect_edges, coverage
from .navgraph.visibility import PanoramaDepthSource, TruthDepthSource, visibility_check
from .scene.bundle_io import field_entry, load_bundle, read_field, save_bundle, sha256_file, write_field
from .scene.types import NavGraph, SceneBundle
from .synth.layout import generate_scene
from .synth.noise import noise_from_profile
from .synth.render import build_panoramas
from .synth.truth import SceneTruth
from .triplets.dataset import dataset_stats, read_triplets, write_jsonl
from .triplets.forge import PixelOwners, generate_triplets, goal_nodes, triplet_violations
from .triplets.prompts import export_prompts

log = logging.getLogger(__name__)

STAGES = ("synth", "graph", "render", "label", "triplets", "prompts")


class StageError(RuntimeError):
    """A pipeline stage failed for one scene."""

    def __init__(self, stage: str, scene: str, cause: str):
        super().__init__(f"stage {stage!r} failed for scene {scene}: {cause}")
        self.stage, self.scene, self.cause = stage, scene, cause

    def __reduce__(self):
        return StageError, (self.stage, self.scene, self.cause)


def scene_id_for(index: int) -> str:
    return f"scene-{index:04d}"


def room_labeler(truth: SceneTruth | None):
    """xyz -> room type of the containing room ("room" outside every room or without truth)."""
    def label(xyz):
        if truth is None:
            return "room"
        room = truth.room_of(*(float(c) for c in xyz))
        return room.type if room is not None else "room"
    return label


def scene_graph(bundle: SceneBundle, config: PipelineConfig, rng: np.random.Generator) -> NavGraph:
    """Build the graph from ground truth, or connect the bundle's stored panorama nodes."""
    if bundle.ground_truth is not None:
        source = TruthDepthSource(bundle.ground_truth, config.intrinsics.max_depth)
        return build_graph(bundle.field, source, config.graph, rng)
    if not bundle.nodes:
        raise ValueError("bundle has neither ground truth nor stored panoramas")
    positions = np.array([n.position for n in bundle.nodes])
    return connect_edges(positions, bundle.field, PanoramaDepthSource(list(bundle.nodes)), config.graph,
                         ids=[n.id for n in bundle.nodes])


def scene_panoramas(bundle: SceneBundle, graph: NavGraph, intrinsics, noise, rng):
    """Render panoramas at the graph nodes, or reuse the stored ones of a truth-less bundle."""
    if bundle.ground_truth is not None:
        ids = graph.node_ids()
        return build_panoramas(bundle.ground_truth, [graph.nodes[i] for i in ids], intrinsics, noise, rng,
                               ids=ids, field=bundle.field)
    by_id = {n.id: n for n in bundle.nodes}
    missing = [i for i in graph.node_ids() if i not in by_id]
    if missing:
        raise ValueError(f"graph nodes {missing[:5]} have no stored panorama")
    return [by_id[i] for i in graph.node_ids()]


def visibility_map(owners: PixelOwners, view_map, node_ids) -> dict[int, list[int]]:
    """Objects seen from each node: pixel owners united with mapped 2D instances."""
    out = {n: {owners.objects[p].id for p in owners.visible_objects(n)} for n in node_ids}
    for ref, m in view_map.mapping.items():
        node = int(str(ref).split(":")[0])
        if node in out:
            out[node].update(int(o) for o in m.values() if o is not None)
    return {n: sorted(v) for n, v in out.items()}


@dataclass
class SceneResult:
    index: int
    scene_id: str
    summary: dict
    timings: dict = field(default_factory=dict)


def _load_source(config: PipelineConfig, index: int) -> SceneBundle:
    if config.bundles:
        return load_bundle(config.bundles[index])
    return generate_scene(derive_seed(config.seed, index, "synth"), config.synth, scene_id_for(index))


def process_scene(config: PipelineConfig, index: int, root) -> SceneResult:
    """Run every stage for one scene, writing to ``root/scenes/<id>``.

    On failure the partial scene directory moves to ``root/quarantine`` and a
    ``StageError`` naming the stage is raised.
    """
    root = Path(root)
    stage = "synth"
    scene_id = config.bundles[index] if config.bundles else scene_id_for(index)
    out = None
    timings = {}
    clock = time.perf_counter()

    def lap(name):
        nonlocal clock
        now = time.perf_counter()
        timings[name] = round(now - clock, 4)
        clock = now

    try:
        bundle = _load_source(config, index)
        scene_id = bundle.scene_id
        out = root / "scenes" / scene_id
        if out.exists():
            shutil.rmtree(out)
        out.mkdir(parents=True)
        truth = bundle.ground_truth
        vocab = bundle.class_vocabulary
        _, floors = write_field(bundle.field, out)
        artifacts.dump_json(out / "field.json", field_entry(bundle.field, floors))
        if truth is not None:
            artifacts.dump_json(out / "truth.json", truth.to_dict())
        lap("synth")

        stage = "graph"
        graph = scene_graph(bundle, config, np.random.default_rng(derive_seed(config.seed, index, "graph")))
        artifacts.save_graph(out / "graph.json", graph, scene_id)
        lap("graph")

        stage = "render"
        noise = noise_from_profile(config.noise, vocab, config.noise_profiles)
        pans = scene_panoramas(bundle, graph, config.intrinsics, noise,
                               np.random.default_rng(derive_seed(config.seed, index, "render")))
        if config.output.save_bundles:
            save_bundle(SceneBundle(scene_id, bundle.field, pans, vocab, truth, bundle.meta), out / "bundle",
                        k=config.output.bundle_topk)
        lap("render")

        stage = "label"
        fp = config.fusion
        fused = fuse_panoramas(pans, fp, len(vocab))
        owners = PixelOwners(pans, fused.objects, fp.voxel_size, DEFAULT_ORIGIN)
        visible = visibility_map(owners, fused.view_map, graph.node_ids())
        artifacts.save_objects(out / "objects.json", scene_id, fused.objects, fp.voxel_size, DEFAULT_ORIGIN,
                               fused.view_map, visible, vocab)
        lap("label")

        stage = "triplets"
        rng = np.random.default_rng(derive_seed(config.seed, index, "triplets"))
        triplets = generate_triplets(scene_id, graph, owners, rng, config.triplets, room_labeler(truth), vocab)
        write_jsonl(out / "triplets.jsonl", [t.to_dict() for t in triplets])
        lap("triplets")

        stage = "prompts"
        if config.output.prompts:
            export_prompts(triplets, {o.id: o for o in fused.objects}, graph.nodes, visible,
                           out / "prompts.jsonl", config.output.max_other_tokens)
        lap("prompts")
    except Exception as e:
        if out is not None and out.exists():
            q = root / "quarantine" / scene_id
            if q.exists():
                shutil.rmtree(q)
            q.parent.mkdir(parents=True, exist_ok=True)
            shutil.move(str(out), str(q))
        raise StageError(stage, str(scene_id), f"{type(e).__name__}: {e}") from e

    summary = {
        "scene_id": scene_id,
        "nodes": len(graph.nodes),
        "edges": len(graph.edges),
        "components": len(graph.components()),
        "coverage": round(coverage(graph, bundle.field, config.graph.coverage_radius), 6),
        "objects": len(fused.objects),
        "triplets": len(triplets),
    }
    if truth is not None:
        acc = label_accuracy(fused.objects, truth)
        summary["truth_objects"] = len(truth.objects)
        summary["label_accuracy"] = round(acc.accuracy, 6) if acc.defined else None
    return SceneResult(index, scene_id, summary, timings)


def _file_checksums(root: Path) -> dict[str, str]:
    out = {}
    for f in sorted(root.rglob("*")):
        rel = f.relative_to(root).as_posix()
        if f.is_file() and rel != "manifest.json" and not rel.startswith("quarantine/"):
            out[rel] = sha256_file(f)
    return out


def dataset_digest(checksums: dict[str, str]) -> str:
    h = hashlib.sha256()
    for rel, digest in sorted(checksums.items()):
        h.update(f"{rel}\0{digest}\n".encode())
    return h.hexdigest()


def _concat(parts, dest: Path) -> None:
    with open(dest, "wb") as fh:
        for p in parts:
            if p.is_file():
                fh.write(p.read_bytes())


def run_pipeline(config: PipelineConfig, out, jobs: int = 1, overwrite: bool = False) -> dict:
    """Generate a full dataset directory and return its manifest."""
    root = Path(out)
    if root.exists() and any(root.iterdir()):
        if not overwrite:
            raise FileExistsError(f"output directory {root} is not empty")
        shutil.rmtree(root)
    root.mkdir(parents=True, exist_ok=True)
    for p in config.bundles:
        if not (Path(p) / "manifest.json").is_file():
            raise StageError("synth", str(p), f"FileNotFoundError: no scene bundle at {p}")
    (root / "config.yaml").write_text(config.to_yaml(), encoding="utf-8")

    n = config.scene_count
    t0 = time.perf_counter()
    results: list[SceneResult] = []
    failure: StageError | None = None
    if jobs > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, n)) as pool:
            futures = [pool.submit(process_scene, config, i, root) for i in range(n)]
            for fut in futures:
                try:
                    results.append(fut.result())
                except StageError as e:
                    failure = failure or e
                    for f in futures:
                        f.cancel()
    else:
        for i in range(n):
            try:
                results.append(process_scene(config, i, root))
            except StageError as e:
                failure = e
                break
    for r in results:
        log.info("%s: %d nodes, %d objects, %d triplets", r.scene_id, r.summary["nodes"], r.summary["objects"],
                 r.summary["triplets"])

    manifest = {
        "config_digest": config.digest(),
        "scenes": [r.summary for r in results],
        "timings": {"total": round(time.perf_counter() - t0, 3), "scenes": {r.scene_id: r.timings for r in results}},
        "quarantine": sorted(p.name for p in (root / "quarantine").iterdir()) if (root / "quarantine").exists() else [],
    }
    if failure is not None:
        manifest["status"] = "failed"
        manifest["error"] = {"stage": failure.stage, "scene": failure.scene, "cause": failure.cause}
        artifacts.dump_json(root / "manifest.json", manifest)
        raise failure

    scene_dirs = [root / "scenes" / r.scene_id for r in results]
    _concat([d / "triplets.jsonl" for d in scene_dirs], root / "triplets.jsonl")
    if config.output.prompts:
        _concat([d / "prompts.jsonl" for d in scene_dirs], root / "prompts.jsonl")
    stats = dataset_stats(read_triplets(root / "triplets.jsonl"))
    covs = [r.summary["coverage"] for r in results]
    stats["mean_coverage"] = round(float(np.mean(covs)), 6) if covs else 0.0
    stats["scenes"] = [r.summary for r in results]
    artifacts.dump_json(root / "stats.json", stats)

    checksums = _file_checksums(root)
    manifest.update(status="ok", checksums=checksums, dataset_digest=dataset_digest(checksums))
    artifacts.dump_json(root / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------- validation

@dataclass
class ValidationReport:
    checks: dict = field(default_factory=dict)       # name -> {"checked": int, "violations": [str]}
    structural: list = field(default_factory=list)

    def add(self, name: str, checked: int = 0, violations=()):
        c = self.checks.setdefault(name, {"checked": 0, "violations": []})
        c["checked"] += checked
        c["violations"].extend(violations)

    @property
    def n_violations(self) -> int:
        return len(self.structural) + sum(len(c["violations"]) for c in self.checks.values())

    @property
    def ok(self) -> bool:
        return self.n_violations == 0

    def to_dict(self) -> dict:
        return {"ok": self.ok, "violations": self.n_violations, "structural": list(self.structural),
                "checks": {k: {"checked": v["checked"], "violations": len(v["violations"]),
                               "details": v["violations"]} for k, v in sorted(self.checks.items())}}

    def lines(self) -> list[str]:
        out = [f"structure: {'FAIL' if self.structural else 'ok'} {'; '.join(self.structural)}".rstrip()]
        for k, v in sorted(self.checks.items()):
            status = "ok" if not v["violations"] else "FAIL"
            out.append(f"{k}: {status} ({v['checked']} checked, {len(v['violations'])} violations)")
        return out


def _check_graph(name: str, graph: NavGraph, field, source, params, report: ValidationReport) -> None:
    ids = graph.node_ids()
    pos = np.array([graph.nodes[i] for i in ids]).reshape(-1, 3)
    bad = []
    for a in range(len(ids)):
        d = np.linalg.norm(pos[a + 1:] - pos[a], axis=1)
        bad.extend(f"{name}: nodes {ids[a]} and {ids[a + 1 + j]} are {d[j]:.3f} m apart"
                   for j in np.flatnonzero(d < params.min_node_spacing))
    report.add("spacing", len(ids) * (len(ids) - 1) // 2, bad)

    grid = GeodesicGrid(field)
    bad = []
    edges = list(graph.iter_edges())
    for a, b, w in edges:
        reasons = []
        geo = grid.distance(graph.nodes[a], graph.nodes[b])
        if not w < params.max_edge_geodesic:
            reasons.append(f"stored length {w:.3f} >= {params.max_edge_geodesic}")
        if not geo < params.max_edge_geodesic:
            reasons.append(f"geodesic {geo:.3f} >= {params.max_edge_geodesic}")
        elif abs(geo - w) > 1e-6:
            reasons.append(f"stored length {w:.6f} differs from geodesic {geo:.6f}")
        if source is not None and not visibility_check(
                source, graph.nodes[a], graph.nodes[b], params.min_visibility_depth, params.visibility_window_deg,
                params.visibility_samples, params.symmetric_visibility):
            reasons.append("visibility test fails")
        if reasons:
            bad.append(f"{name}: edge ({a}, {b}): " + "; ".join(reasons))
    report.add("edge_soundness", len(edges), bad)


def validate_dataset(path, min_coverage: float = 0.85) -> ValidationReport:
    """Recheck every invariant of a dataset directory.

    Checks: node spacing, edge soundness (geodesic and visibility, one entry
    per bad edge), triplet validity, goal soundness (goal sets and 2D boxes
    recomputed from re-rendered depth), object grounding at the final node,
    and per-scene coverage against ``min_coverage``.
    """
    root = Path(path)
    report = ValidationReport()
    if not root.is_dir():
        report.structural.append(f"{root} is not a directory")
        return report
    for f in ("config.yaml", "manifest.json", "triplets.jsonl"):
        if not (root / f).is_file():
            report.structural.append(f"missing {f}")
    scenes_dir = root / "scenes"
    scene_dirs = sorted(p for p in scenes_dir.iterdir() if p.is_dir()) if scenes_dir.is_dir() else []
    if not scene_dirs:
        report.structural.append("no scenes/ directories")
    if report.structural:
        return report

    config = PipelineConfig.from_yaml((root / "config.yaml").read_text(encoding="utf-8"))
    manifest = artifacts.load_json(root / "manifest.json")
    bad = [rel for rel, digest in manifest.get("checksums", {}).items()
           if not (root / rel).is_file() or sha256_file(root / rel) != digest]
    report.add("checksums", len(manifest.get("checksums", {})), [f"checksum mismatch: {r}" for r in bad])

    gp = config.graph
    for sd in scene_dirs:
        name = sd.name
        try:
            _, graph = artifacts.load_graph(sd / "graph.json")
            _, objects, vsize, origin, visible, _ = artifacts.load_objects(sd / "objects.json")
            field = read_field(sd, artifacts.load_json(sd / "field.json"))
            triplets = read_triplets(sd / "triplets.jsonl")
        except (FileNotFoundError, ValueError, KeyError) as e:
            report.structural.append(f"{name}: {e}")
            continue
        truth = SceneTruth.from_dict(artifacts.load_json(sd / "truth.json")) if (sd / "truth.json").is_file() else None
        source = TruthDepthSource(truth, config.intrinsics.max_depth) if truth is not None else None
        _check_graph(name, graph, field, source, gp, report)

        cov = coverage(graph, field, gp.coverage_radius)
        report.add("coverage", 1, [] if cov >= min_coverage else [f"{name}: coverage {cov:.3f} < {min_coverage}"])

        bad = []
        by_id = {o.id: o for o in objects}
        tp = config.triplets
        for i, t in enumerate(triplets):
            errs = [] if all(n in graph.nodes for n in t.expert_path) else ["path leaves the graph"]
            errs += triplet_violations(t, graph) if not errs else []
            hops = len(t.expert_path) - 1
            if not tp.min_hops <= hops <= tp.max_hops:
                errs.append(f"hop length {hops} outside [{tp.min_hops}, {tp.max_hops}]")
            if t.target_object not in by_id:
                errs.append(f"unknown target object {t.target_object}")
            if t.start_node in t.goal_nodes:
                errs.append("start node is a goal")
            bad.extend(f"{name} triplet {i}: {e}" for e in errs)
        report.add("triplet_validity", len(triplets), bad)

        bad = []
        for i, t in enumerate(triplets):
            vis = visible.get(t.expert_path[-1], [])
            if t.target_object not in vis:
                bad.append(f"{name} triplet {i}: target {t.target_object} not visible at the final node")
        report.add("grounding", len(triplets), bad)

        if truth is None:
            report.add("goal_soundness", 0, [])
            continue
        ids = graph.node_ids()
        pans = build_panoramas(truth, [graph.nodes[n] for n in ids], config.intrinsics, None, None, ids=ids)
        owners = PixelOwners(pans, objects, vsize, origin)
        pos_of = {o.id: p for p, o in enumerate(objects)}
        bad = []
        for i, t in enumerate(triplets):
            obj = by_id.get(t.target_object)
            if obj is None:
                continue
            d_o = float(t.meta.get("d_o", tp.d_o))
            goals = goal_nodes(obj, graph, owners, d_o, tp.occlusion, tp.distance_to)
            if sorted(goals) != sorted(t.goal_nodes):
                bad.append(f"{name} triplet {i}: goal set differs from the recomputed one")
                continue
            for n in t.goal_nodes:
                entry = t.target_bbox_2d.get(n)
                if entry is None:
                    bad.append(f"{name} triplet {i}: no 2D box at goal node {n}")
                    continue
                c0, r0, c1, r1 = entry["box"]
                own = owners.owners(n)[entry["view"], r0:r1, c0:c1]
                if own.size == 0 or (own == pos_of[obj.id]).mean() < 0.5:
                    bad.append(f"{name} triplet {i}: box at node {n} is under half covered by the target")
        report.add("goal_soundness", len(triplets), bad)
    return report
