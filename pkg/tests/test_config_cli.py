import csv
import hashlib
import json
import math
import shutil
from dataclasses import replace

import pytest
import yaml

from vlnforge import artifacts
from vlnforge.cli import EXIT_INVALID, EXIT_IO, EXIT_OK, EXIT_USAGE, main
from vlnforge.config import ConfigError, PipelineConfig, derive_seed, load_config
from vlnforge.pipeline import StageError, run_pipeline, validate_dataset
from vlnforge.synth.layout import SceneParams

SMALL = PipelineConfig(scenes=2, synth=SceneParams(room_count=(4, 5)))


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds") / "run"
    manifest = run_pipeline(SMALL, root)
    return root, manifest


# --- config ---------------------------------------------------------------

def test_defaults_are_the_reference_values():
    c = PipelineConfig()
    assert c.graph.sample_count == 20_000 and c.graph.min_node_spacing == 2.0
    assert c.graph.max_edge_geodesic == 3.0 and c.graph.coverage_radius == 2.0
    assert c.fusion.voxel_size == 0.1 and c.triplets.d_o == 2.0
    assert c.evaluation.success_radius == 3.0 and c.noise == "confusion30"


def test_config_round_trip_is_byte_identical(tmp_path):
    c = SMALL.replace(seed=17, noise_profiles={"mine": {"confusion_rate": 0.1}})
    text = c.to_yaml()
    assert PipelineConfig.from_yaml(text).to_yaml() == text
    (tmp_path / "c.yaml").write_text(text)
    assert load_config(tmp_path / "c.yaml") == c
    assert PipelineConfig.from_yaml(json.dumps(c.to_dict())).digest() == c.digest()


@pytest.mark.parametrize("text", [
    "sed: 1\n",
    "graph:\n  spacing: 2\n",
    "intrinsics:\n  fov: 1\n",
    "noise: nonexistent\n",
    "seed: one\n",
    "graph:\n  min_node_spacing: 5.0\n",
    "- a\n- b\n",
    "fusion: [1, 2\n",
])
def test_bad_configs_are_rejected(text):
    with pytest.raises(ConfigError):
        PipelineConfig.from_yaml(text)


def test_partial_config_fills_defaults():
    c = PipelineConfig.from_yaml("seed: 3\ntriplets:\n  d_o: 3\n")
    assert c.seed == 3 and c.triplets.d_o == 3.0 and c.graph == PipelineConfig().graph
    assert PipelineConfig.from_yaml("") == PipelineConfig()


def test_derived_seeds_follow_the_sha256_rule():
    want = int.from_bytes(hashlib.sha256(b"1/4/graph").digest()[:8], "little")
    assert derive_seed(1, 4, "graph") == want
    assert len({derive_seed(1, i, s) for i in range(10) for s in ("synth", "graph")}) == 20


# --- pipeline -------------------------------------------------------------

def test_manifest_records_hash_timings_and_checksums(dataset):
    root, m = dataset
    assert m["status"] == "ok" and m["config_digest"] == SMALL.digest()
    assert set(m["timings"]["scenes"]) == {"scene-0000", "scene-0001"}
    assert all(set(t) >= {"synth", "graph", "label", "triplets"} for t in m["timings"]["scenes"].values())
    assert "triplets.jsonl" in m["checksums"] and "scenes/scene-0000/graph.json" in m["checksums"]
    n = sum(1 for _ in open(root / "triplets.jsonl"))
    assert n == sum(s["triplets"] for s in m["scenes"]) > 0


def test_rerun_and_parallel_run_reproduce_checksums(dataset, tmp_path):
    _, m = dataset
    again = run_pipeline(SMALL, tmp_path / "a")
    par = run_pipeline(SMALL, tmp_path / "b", jobs=2)
    assert again["checksums"] == m["checksums"] == par["checksums"]
    assert again["dataset_digest"] == par["dataset_digest"]


def test_larger_goal_distance_never_loses_triplets(dataset, tmp_path):
    _, m2 = dataset
    m3 = run_pipeline(SMALL.replace(triplets=replace(SMALL.triplets, d_o=3.0)), tmp_path / "d3")
    assert sum(s["triplets"] for s in m3["scenes"]) >= sum(s["triplets"] for s in m2["scenes"])


def test_missing_bundle_names_the_stage(tmp_path):
    with pytest.raises(StageError) as e:
        run_pipeline(SMALL.replace(bundles=(str(tmp_path / "nope"),)), tmp_path / "out")
    assert e.value.stage == "synth" and "nope" in str(e.value)


def test_failed_scene_is_quarantined(tmp_path, monkeypatch):
    import vlnforge.pipeline as pl

    def boom(*a, **k):
        raise RuntimeError("renderer exploded")
    monkeypatch.setattr(pl, "fuse_panoramas", boom)
    with pytest.raises(StageError) as e:
        run_pipeline(SMALL.replace(scenes=1), tmp_path / "out")
    assert e.value.stage == "label" and "exploded" in e.value.cause
    assert (tmp_path / "out" / "quarantine" / "scene-0000" / "graph.json").is_file()
    assert json.loads((tmp_path / "out" / "manifest.json").read_text())["error"]["stage"] == "label"


def test_non_empty_output_needs_overwrite(dataset):
    root, _ = dataset
    with pytest.raises(FileExistsError):
        run_pipeline(SMALL, root)


# --- validation -----------------------------------------------------------

def test_fresh_dataset_validates_cleanly(dataset):
    report = validate_dataset(dataset[0])
    assert report.ok, report.lines()
    assert report.checks["edge_soundness"]["checked"] > 0 and report.checks["goal_soundness"]["checked"] > 0


def test_one_corrupted_edge_is_reported_once(dataset, tmp_path):
    root = tmp_path / "bad"
    shutil.copytree(dataset[0], root)
    gpath = root / "scenes" / "scene-0000" / "graph.json"
    g = json.loads(gpath.read_text())
    nodes = {n["id"]: n["xyz"] for n in g["nodes"]}
    ids = sorted(nodes)
    a, b = max(((i, j) for i in ids for j in ids if i < j), key=lambda p: math.dist(nodes[p[0]], nodes[p[1]]))
    g["edges"].append([a, b, 5.0])
    gpath.write_text(json.dumps(g))
    report = validate_dataset(root)
    bad = report.checks["edge_soundness"]["violations"]
    assert len(bad) == 1 and f"({a}, {b})" in bad[0]


def test_empty_directory_is_a_structural_failure(tmp_path):
    report = validate_dataset(tmp_path)
    assert not report.ok and report.structural
    assert not validate_dataset(tmp_path / "missing").ok


# --- command line ---------------------------------------------------------

def test_cli_exit_codes(dataset, tmp_path, capsys):
    root, _ = dataset
    assert main(["validate", str(root)]) == EXIT_OK
    assert main(["validate", str(tmp_path)]) == EXIT_INVALID
    assert main(["stats", "--triplets", str(tmp_path / "none.jsonl")]) == EXIT_IO
    (tmp_path / "bad.yaml").write_text("graph:\n  bogus: 1\n")
    assert main(["--config", str(tmp_path / "bad.yaml"), "run", "--out", str(tmp_path / "x")]) == EXIT_USAGE
    assert main(["run", "--out", str(tmp_path / "y"), "--bundle", str(tmp_path / "nope")]) == EXIT_IO
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == EXIT_USAGE


def test_cli_stats_and_proxy(dataset, tmp_path, capsys):
    root, _ = dataset
    assert main(["stats", "--dataset", str(root), "--out", str(tmp_path / "s.json")]) == EXIT_OK
    s = json.loads((tmp_path / "s.json").read_text())
    assert s["n_instructions"] == sum(1 for _ in open(root / "triplets.jsonl"))
    for task in ("sap", "mlm", "og"):
        out = tmp_path / f"{task}.jsonl"
        assert main(["proxy", "--task", task, "--dataset", str(root), "--out", str(out)]) == EXIT_OK
        assert out.stat().st_size > 0


def test_cli_eval_oracle_and_plot_data(dataset, tmp_path, capsys):
    root, _ = dataset
    csv_path = tmp_path / "curve.csv"
    res = tmp_path / "res.json"
    assert main(["eval", "--dataset", str(root), "--agent", "oracle", "--out", str(res),
                 "--plot-data", str(csv_path)]) == EXIT_OK
    agg = json.loads(res.read_text())["aggregate"]
    assert all(agg[m] == 100.0 for m in ("SR", "OSR", "SPL", "RGS", "RGSPL"))
    rows = list(csv.DictReader(open(csv_path)))
    assert [int(r["environments"]) for r in rows] == [1, 2]
    png = csv_path.with_suffix(".png")
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_cli_stage_by_stage(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"synth": {"room_count": [3, 3]}}))
    base = ["--config", str(cfg), "--seed", "5"]
    assert main(base + ["synth", "--scenes", "1", "--out", str(tmp_path / "b")]) == EXIT_OK
    bundle = tmp_path / "b" / "scene-0000"
    assert main(base + ["graph", "--bundle", str(bundle), "--out", str(tmp_path / "g.json")]) == EXIT_OK
    assert main(base + ["label", "--bundle", str(bundle), "--graph", str(tmp_path / "g.json"),
                        "--out", str(tmp_path / "o.json")]) == EXIT_OK
    assert main(base + ["triplets", "--bundle", str(bundle), "--graph", str(tmp_path / "g.json"),
                        "--objects", str(tmp_path / "o.json"), "--do", "inf",
                        "--out", str(tmp_path / "t.jsonl")]) == EXIT_OK
    assert "label accuracy" in capsys.readouterr().out
    sid, objs, *_ = artifacts.load_objects(tmp_path / "o.json")
    assert sid == "scene-0000" and objs
    assert main(base + ["triplets", "--out", str(tmp_path / "u.jsonl")]) == EXIT_USAGE
