"""``forge`` command line: pipeline stages, evaluation and dataset checks.

Exit codes: 0 ok, 1 validation failures (or a failed stage), 2 usage or
configuration errors, 3 missing or unreadable files.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import artifacts
from .config import ConfigError, PipelineConfig, derive_seed, load_config
from .evaluation.episode import EvalSetup, OracleAgent, RandomAgent, ReplayAgent, aggregate, evaluate
from .evaluation.proxy import ConsistencyError, mlm_mask, og_sample, sap_samples
from .fusion import fuse_panoramas, label_accuracy, single_view_baseline
from .fusion.voxels import DEFAULT_ORIGIN
from .navgraph.graph import coverage
from .pipeline import (StageError, room_labeler, run_pipeline, scene_graph, scene_id_for, scene_panoramas,
                       validate_dataset, visibility_map)
from .plotting import environment_curve, plot_curves, write_curve_csv
from .scene.bundle_io import BundleError, load_bundle, save_bundle
from .scene.types import SceneBundle
from .synth.layout import GenerationError, generate_scene
from .synth.noise import noise_from_profile
from .triplets.dataset import dataset_stats, merge_instructions, read_jsonl, read_triplets, write_jsonl
from .triplets.forge import PixelOwners, generate_triplets
from .triplets.prompts import export_prompts

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("vlnforge")


class UsageError(Exception):
    pass


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _dump(obj, path=None) -> None:
    if path:
        artifacts.dump_json(path, obj)
    else:
        print(json.dumps(obj, indent=1, sort_keys=True))


# ------------------------------------------------------------------ stages

def cmd_synth(args) -> int:
    cfg = _config(args)
    if args.noise:
        cfg = cfg.replace(noise=args.noise)
    out = Path(args.out)
    n = args.scenes if args.scenes is not None else cfg.scenes
    noise = noise_from_profile(cfg.noise, profiles=cfg.noise_profiles)
    for i in range(n):
        bundle = generate_scene(derive_seed(cfg.seed, i, "synth"), cfg.synth, scene_id_for(i))
        if args.panoramas:
            graph = scene_graph(bundle, cfg, np.random.default_rng(derive_seed(cfg.seed, i, "graph")))
            pans = scene_panoramas(bundle, graph, cfg.intrinsics, noise,
                                   np.random.default_rng(derive_seed(cfg.seed, i, "render")))
            bundle = replace(bundle, nodes=tuple(pans), meta={**bundle.meta, "noise": cfg.noise})
        save_bundle(bundle, out / bundle.scene_id, k=cfg.output.bundle_topk)
        print(f"{bundle.scene_id}: {len(bundle.ground_truth.objects)} objects, {len(bundle.nodes)} panoramas")
    return EXIT_OK


def cmd_graph(args) -> int:
    cfg = _config(args)
    gp = cfg.graph
    changes = {k: v for k, v in (("sample_count", args.samples), ("min_node_spacing", args.spacing),
                                 ("max_edge_geodesic", args.edge), ("min_visibility_depth", args.visdepth))
               if v is not None}
    cfg = cfg.replace(graph=replace(gp, **changes))
    bundle = load_bundle(args.bundle)
    graph = scene_graph(bundle, cfg, np.random.default_rng(cfg.seed))
    cov = coverage(graph, bundle.field, cfg.graph.coverage_radius)
    artifacts.save_graph(args.out, graph, bundle.scene_id, {"coverage": round(cov, 6)})
    print(f"{bundle.scene_id}: {len(graph.nodes)} nodes, {len(graph.edges)} edges, "
          f"{len(graph.components())} components, coverage {cov:.4f}")
    return EXIT_OK


def _panoramas(bundle: SceneBundle, graph, cfg: PipelineConfig, noisy: bool = True):
    noise = noise_from_profile(cfg.noise, bundle.class_vocabulary, cfg.noise_profiles) if noisy else None
    return scene_panoramas(bundle, graph, cfg.intrinsics, noise, np.random.default_rng(cfg.seed))


def cmd_label(args) -> int:
    cfg = _config(args)
    if args.noise:
        cfg = cfg.replace(noise=args.noise)
    changes = {k: v for k, v in (("voxel_size", args.voxel), ("connectivity", args.connectivity),
                                 ("min_voxels", args.min_voxels), ("stride", args.stride)) if v is not None}
    fp = replace(cfg.fusion, **changes)
    bundle = load_bundle(args.bundle)
    _, graph = artifacts.load_graph(args.graph)
    pans = _panoramas(bundle, graph, cfg)
    if args.baseline == "single-view":
        objects = single_view_baseline(pans, fp)
        artifacts.save_objects(args.out, bundle.scene_id, objects, fp.voxel_size, DEFAULT_ORIGIN,
                               vocabulary=bundle.class_vocabulary)
    else:
        fused = fuse_panoramas(pans, fp, len(bundle.class_vocabulary))
        objects = fused.objects
        owners = PixelOwners(pans, objects, fp.voxel_size, DEFAULT_ORIGIN)
        visible = visibility_map(owners, fused.view_map, graph.node_ids())
        artifacts.save_objects(args.out, bundle.scene_id, objects, fp.voxel_size, DEFAULT_ORIGIN, fused.view_map,
                               visible, bundle.class_vocabulary)
    msg = f"{bundle.scene_id}: {len(objects)} objects"
    if bundle.ground_truth is not None:
        acc = label_accuracy(objects, bundle.ground_truth)
        msg += f", label accuracy {acc.accuracy:.4f} ({acc.n_correct}/{acc.n_matched} matched)"
    print(msg)
    return EXIT_OK


def cmd_triplets(args) -> int:
    cfg = _config(args)
    if args.from_triplets:
        triplets = read_triplets(args.from_triplets)
    else:
        if not (args.bundle and args.graph and args.objects):
            raise UsageError("--bundle, --graph and --objects are required unless --from-triplets is given")
        changes = {k: v for k, v in (("d_o", args.do), ("mode", args.mode), ("occlusion", args.occlusion),
                                     ("distance_to", args.distance_to)) if v is not None}
        tp = replace(cfg.triplets, **changes)
        bundle = load_bundle(args.bundle)
        _, graph = artifacts.load_graph(args.graph)
        scene_id, objects, vsize, origin, visible, _ = artifacts.load_objects(args.objects)
        # depth does not depend on label noise, so clean panoramas give the same pixel owners
        pans = _panoramas(bundle, graph, cfg, noisy=False)
        owners = PixelOwners(pans, objects, vsize, origin)
        rng = np.random.default_rng(cfg.seed)
        triplets = generate_triplets(scene_id or bundle.scene_id, graph, owners, rng, tp,
                                     room_labeler(bundle.ground_truth), bundle.class_vocabulary)
        if args.prompts:
            export_prompts(triplets, {o.id: o for o in objects}, graph.nodes, visible, args.prompts,
                           cfg.output.max_other_tokens)
    if args.instructions:
        lines = Path(args.instructions).read_text(encoding="utf-8").splitlines()
        triplets = merge_instructions(triplets, [s for s in lines if s.strip()])
    write_jsonl(args.out, [t.to_dict() for t in triplets])
    print(f"{len(triplets)} triplets -> {args.out}")
    return EXIT_OK


# -------------------------------------------------------------- evaluation

def _scene_tables(args):
    """Graphs, visibility and centroids keyed by scene id from --dataset / --graph / --objects."""
    graph_files = list(args.graph or [])
    object_files = list(getattr(args, "objects", None) or [])
    if getattr(args, "dataset", None):
        scenes = sorted(p for p in (Path(args.dataset) / "scenes").glob("*") if p.is_dir())
        if not scenes:
            raise FileNotFoundError(f"no scenes under {args.dataset}")
        graph_files += [p / "graph.json" for p in scenes]
        object_files += [p / "objects.json" for p in scenes]
    graphs, visible, centroids = {}, {}, {}
    for f in graph_files:
        sid, g = artifacts.load_graph(f)
        graphs[sid] = g
    for f in object_files:
        sid, objs, _, _, vis, _ = artifacts.load_objects(f)
        visible[sid] = vis
        centroids[sid] = {o.id: o.centroid for o in objs}
    return graphs, visible, centroids


def _triplet_file(args):
    if args.triplets:
        return args.triplets
    if getattr(args, "dataset", None):
        return Path(args.dataset) / "triplets.jsonl"
    raise UsageError("--triplets or --dataset is required")


def cmd_proxy(args) -> int:
    cfg = _config(args)
    triplets = read_triplets(_triplet_file(args))
    graphs, visible, _ = _scene_tables(args)
    rng = np.random.default_rng(cfg.seed)
    out = []
    errors = 0
    for i, t in enumerate(triplets):
        if args.task == "mlm":
            masked, targets = mlm_mask(t.instruction, rng, args.mask_prob)
            out.append({"triplet": i, "scene_id": t.scene_id, "tokens": masked, "targets": targets})
        elif args.task == "sap":
            if t.scene_id not in graphs:
                raise UsageError(f"no graph given for scene {t.scene_id}")
            for s in sap_samples(t, graphs[t.scene_id], rng, args.n_random, args.metric, args.neighbors_only):
                out.append({"triplet": i, "scene_id": t.scene_id, **s})
        else:
            if t.scene_id not in visible:
                raise UsageError(f"no objects file given for scene {t.scene_id}")
            try:
                out.append({"triplet": i, "scene_id": t.scene_id, **og_sample(t, visible[t.scene_id], rng)})
            except ConsistencyError as e:
                errors += 1
                log.error("%s", e)
    write_jsonl(args.out, out)
    print(f"{len(out)} {args.task} samples -> {args.out}" + (f", {errors} consistency errors" if errors else ""))
    return EXIT_INVALID if errors else EXIT_OK


def _read_replay(path) -> list[list[dict]]:
    logs = []
    for rec in read_jsonl(path):
        logs.append(rec["actions"] if isinstance(rec, dict) else rec)
    return logs


def cmd_eval(args) -> int:
    cfg = _config(args)
    triplets = read_triplets(_triplet_file(args))
    graphs, visible, centroids = _scene_tables(args)
    rng = np.random.default_rng(cfg.seed)
    if args.agent == "oracle":
        agent = OracleAgent()
    elif args.agent == "random":
        agent = RandomAgent(rng, args.steps)
    else:
        if not args.replay:
            raise UsageError("--agent replay needs --replay FILE")
        agent = ReplayAgent(_read_replay(args.replay))
    radius = args.radius if args.radius is not None else cfg.evaluation.success_radius
    strict = args.strict or cfg.evaluation.strict_goal
    results = evaluate(triplets, EvalSetup(graphs, visible, centroids), agent, radius, strict, args.max_steps)
    summary = aggregate(results, by_env=True)
    if args.out:
        artifacts.dump_json(args.out, {"aggregate": summary, "episodes": [r.to_dict() for r in results],
                                       "agent": args.agent, "radius": radius, "strict": strict})
    print(" ".join(f"{k} {summary[k]:.2f}" for k in ("SR", "OSR", "SPL", "RGS", "RGSPL")) +
          f" ({summary['episodes']} episodes)")
    if args.plot_data:
        rows = environment_curve(results, np.random.default_rng(cfg.seed))
        write_curve_csv(rows, args.plot_data)
        png = plot_curves(rows, Path(args.plot_data).with_suffix(".png"), title=f"{args.agent} agent")
        print(f"curve -> {args.plot_data}, {png}")
    return EXIT_OK


def cmd_stats(args) -> int:
    triplets = read_triplets(_triplet_file(args))
    _dump(dataset_stats(triplets), args.out)
    return EXIT_OK


def cmd_validate(args) -> int:
    report = validate_dataset(args.dataset, args.min_coverage)
    for line in report.lines():
        print(line)
    if args.out:
        artifacts.dump_json(args.out, report.to_dict())
    return EXIT_OK if report.ok else EXIT_INVALID


def cmd_run(args) -> int:
    cfg = _config(args)
    if args.scenes is not None:
        cfg = cfg.replace(scenes=args.scenes)
    if args.bundle:
        cfg = cfg.replace(bundles=tuple(args.bundle))
    manifest = run_pipeline(cfg, args.out, jobs=args.jobs, overwrite=args.force)
    n = sum(s["triplets"] for s in manifest["scenes"])
    print(f"{len(manifest['scenes'])} scenes, {n} triplets -> {args.out} "
          f"(digest {manifest['dataset_digest'][:12]}, {manifest['timings']['total']:.1f} s)")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (overrides the config)")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="parallel scene workers")
    common.add_argument("--config", default=argparse.SUPPRESS, help="YAML/JSON pipeline config file")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="forge", parents=[common],
                                description="Build navigation datasets from 3D scenes and evaluate agents on them.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate synthetic scene bundles")
    s.add_argument("--scenes", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--noise", help="named noise profile")
    s.add_argument("--panoramas", action="store_true", help="also build the graph and store rendered panoramas")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("graph", parents=[common], help="build a navigation graph")
    s.add_argument("--bundle", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--samples", type=int)
    s.add_argument("--spacing", type=float)
    s.add_argument("--edge", type=float)
    s.add_argument("--visdepth", type=float)
    s.set_defaults(func=cmd_graph)

    s = sub.add_parser("label", parents=[common], help="fuse 2D predictions into 3D objects")
    s.add_argument("--bundle", required=True)
    s.add_argument("--graph", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--voxel", type=float)
    s.add_argument("--connectivity", type=int, choices=(6, 18, 26))
    s.add_argument("--min-voxels", type=int)
    s.add_argument("--stride", type=int)
    s.add_argument("--noise", help="named noise profile")
    s.add_argument("--baseline", choices=("cross-view", "single-view"), default="cross-view")
    s.set_defaults(func=cmd_label)

    s = sub.add_parser("triplets", parents=[common], help="generate object-trajectory-instruction triplets")
    s.add_argument("--bundle")
    s.add_argument("--graph")
    s.add_argument("--objects")
    s.add_argument("--do", type=float, help="goal distance d_o in meters (inf allowed)")
    s.add_argument("--mode", choices=("template-obj", "template-sent"))
    s.add_argument("--occlusion", choices=("surface", "centroid"))
    s.add_argument("--distance-to", choices=("centroid", "aabb"))
    s.add_argument("--prompts", help="write speaker prompts (JSON lines) here")
    s.add_argument("--from-triplets", help="start from an existing triplets file instead of generating")
    s.add_argument("--instructions", help="text file, one generated instruction per triplet, to merge in")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_triplets)

    s = sub.add_parser("proxy", parents=[common], help="build proxy-task samples")
    s.add_argument("--task", choices=("sap", "mlm", "og"), required=True)
    s.add_argument("--triplets")
    s.add_argument("--dataset", help="dataset directory (supplies triplets, graphs and objects)")
    s.add_argument("--graph", nargs="*")
    s.add_argument("--objects", nargs="*")
    s.add_argument("--n-random", type=int, default=1)
    s.add_argument("--metric", choices=("geodesic", "hops"), default="geodesic")
    s.add_argument("--neighbors-only", action="store_true")
    s.add_argument("--mask-prob", type=float, default=0.15)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_proxy)

    s = sub.add_parser("eval", parents=[common], help="run an agent and score episodes")
    s.add_argument("--triplets")
    s.add_argument("--dataset", help="dataset directory (supplies triplets, graphs and objects)")
    s.add_argument("--graph", nargs="*")
    s.add_argument("--objects", nargs="*")
    s.add_argument("--agent", choices=("oracle", "random", "replay"), default="oracle")
    s.add_argument("--replay", help="JSON lines of logged actions, one episode per line")
    s.add_argument("--steps", type=int, default=20, help="random-walk length")
    s.add_argument("--max-steps", type=int, default=100)
    s.add_argument("--radius", type=float)
    s.add_argument("--strict", action="store_true", help="success only at goal nodes")
    s.add_argument("--plot-data", help="CSV of metrics vs number of environments (PNG written alongside)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("stats", parents=[common], help="dataset statistics")
    s.add_argument("--triplets")
    s.add_argument("--dataset")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("validate", parents=[common], help="recheck every invariant of a dataset directory")
    s.add_argument("dataset")
    s.add_argument("--min-coverage", type=float, default=0.85)
    s.add_argument("--out", help="write the report as JSON")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("run", parents=[common], help="end-to-end dataset generation")
    s.add_argument("--out", required=True)
    s.add_argument("--scenes", type=int)
    s.add_argument("--bundle", nargs="*", help="existing scene bundles instead of synthetic scenes")
    s.add_argument("--force", action="store_true", help="replace a non-empty output directory")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed = getattr(args, "seed", None)
    args.jobs = getattr(args, "jobs", 1)
    args.config = getattr(args, "config", None)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO if e.cause.startswith(("FileNotFoundError", "BundleMissingError")) else EXIT_INVALID
    except (UsageError, ConfigError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, FileExistsError, BundleError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, GenerationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
