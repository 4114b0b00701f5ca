import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fixtures import oracle_depth, room_truth
from vlnforge.scene.bundle_io import save_bundle
from vlnforge.scene.types import CameraIntrinsics, Pose, panorama_poses
from vlnforge.scene.vocab import CLASSES, CONFUSABLE_GROUPS, VOID, class_index, stuff_indices, thing_indices
from vlnforge.scene.geometry import pixel_to_point
from vlnforge.synth.layout import GenerationError, SceneParams, generate_scene
from vlnforge.synth.noise import NoiseSpec, apply_noise, group_confusion, noise_from_profile
from vlnforge.synth.truth import Room, SceneTruth
from vlnforge.synth.render import PlacementError, Renderer, build_panoramas, render_views


def test_same_seed_gives_byte_identical_bundles(tmp_path):
    save_bundle(generate_scene(7), tmp_path / "a")
    save_bundle(generate_scene(7), tmp_path / "b")
    for f in sorted((tmp_path / "a").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def test_single_empty_room():
    b = generate_scene(3, SceneParams(room_count=(1, 1), objects_per_room=(0, 0)))
    assert b.ground_truth.objects == [] and len(b.ground_truth.rooms) == 1
    assert b.field.floors[0].navigable.any()


def test_invalid_params_are_rejected():
    with pytest.raises(GenerationError):
        generate_scene(0, SceneParams(room_count=(3, 2)))
    with pytest.raises(GenerationError):
        generate_scene(0, SceneParams(room_size=(1.0, 2.0)))


def test_object_counts_and_placement_over_fifty_scenes():
    p = SceneParams()
    for seed in range(50):
        truth = generate_scene(seed, p).ground_truth
        assert p.room_count[0] <= len(truth.rooms) <= p.room_count[1]
        per_room = {r.id: 0 for r in truth.rooms}
        for o in truth.objects:
            per_room[o.room_id] += 1
            room = next(r for r in truth.rooms if r.id == o.room_id)
            assert room.x0 <= o.min[0] and o.max[0] <= room.x1 and room.y0 <= o.min[1] and o.max[1] <= room.y1
            assert min(o.extent) > 0
        assert all(p.objects_per_room[0] <= n <= p.objects_per_room[1] for n in per_room.values())
        assert len({o.id for o in truth.objects}) == len(truth.objects)


def test_two_floor_scene_has_a_grid_per_floor():
    b = generate_scene(2, SceneParams(floors=2, room_count=(2, 3)))
    assert len(b.field.floors) == 2
    assert b.field.floors[1].height == pytest.approx(3.0)
    assert {r.floor for r in b.ground_truth.rooms} == {0, 1}


def test_empty_space_renders_max_range_void():
    truth = SceneTruth([Room(0, 0, 0.0, 0.0, 10.0, 10.0, "hallway")], [], [], [0.0])
    v = render_views(truth, Pose(np.array([5.0, 5.0, 1.35])), CameraIntrinsics(8, 8, 0.3))
    assert np.all(v.depth == v.intrinsics.max_depth)
    assert np.all(v.labels == VOID)


def test_unit_box_three_metres_ahead():
    truth = room_truth(objects=[("cabinet", (3.0, 5.0, 1.5), (1.0, 1.0, 1.0))], walls=False)
    v = render_views(truth, Pose(np.array([0.0, 5.0, 1.5])), CameraIntrinsics(9, 9, 0.2))
    assert v.depth[4, 4] == pytest.approx(2.5, abs=1e-6)
    assert v.labels[4, 4] == class_index("cabinet")


def test_renderer_matches_scalar_oracle():
    truth = generate_scene(11).ground_truth
    mins, maxs, cls, _ = truth.surfaces()
    pts = generate_scene(11).field.navigable_points()
    rng = np.random.default_rng(3)
    intr = CameraIntrinsics(6, 5, 1.1)
    renderer = Renderer(truth)
    for _ in range(12):
        pos = pts[rng.integers(len(pts))]
        pose = Pose(pos, rng.uniform(0, 2 * math.pi), rng.uniform(-0.5, 0.5))
        depth, labels, _ = renderer.render_truth(pose, intr)
        for v in range(intr.height):
            for u in range(intr.width):
                d = pixel_to_point(u + 0.5, v + 0.5, 1.0, intr, pose) - pos
                t, k = oracle_depth(pos, d, mins, maxs, intr.max_depth)
                assert depth[v, u] == pytest.approx(t, abs=1e-4)
                # class is only compared off box edges where ties are ambiguous
                if k >= 0 and abs(depth[v, u] - t) < 1e-6:
                    hit = pos + t * d
                    inside = np.all((mins - 1e-6 <= hit) & (hit <= maxs + 1e-6), axis=1)
                    assert labels[v, u] in set(cls[inside].tolist())


def test_identity_noise_equals_clean_render():
    truth = generate_scene(4).ground_truth
    pos = generate_scene(4).field.navigable_points()[10]
    pose = Pose(pos, 1.0, 0.0)
    intr = CameraIntrinsics(16, 16, 1.0)
    clean = render_views(truth, pose, intr)
    ident = render_views(truth, pose, intr, NoiseSpec.identity(), np.random.default_rng(0))
    assert np.array_equal(clean.class_probs, ident.class_probs)
    assert noise_from_profile("clean").is_identity


def test_room_without_objects_shows_only_structure():
    truth = room_truth()
    pans = build_panoramas(truth, [[5.0, 5.0, 1.5]], CameraIntrinsics(8, 8, math.pi / 6), None, None)
    structure = set(stuff_indices())
    for v in pans[0].views:
        assert set(np.unique(v.labels).tolist()) <= structure
        assert np.all(v.instance_ids == 0)


def test_adjacent_object_is_seen_in_some_view():
    truth = room_truth(objects=[("lamp", (6.0, 5.0, 0.3), (0.4, 0.4, 0.6))])
    pos = np.array([5.0, 5.0, 1.5])
    pans = build_panoramas(truth, [pos], CameraIntrinsics(24, 24, math.pi / 6), None, None)
    seen = [k for k, v in enumerate(pans[0].views) if np.any(v.instance_ids == 1)]
    # analytic: the box center direction, cast against all boxes, hits the lamp first
    mins, maxs, _, inst = truth.surfaces()
    _, k = oracle_depth(pos, np.array([1.0, 0.0, -1.2]), mins, maxs, 10.0)
    assert inst[k] == 1
    assert seen


def test_panoramas_are_deterministic_and_check_placement():
    b = generate_scene(9)
    pts = b.field.navigable_points()[:2]
    noise = noise_from_profile("confusion30")
    intr = CameraIntrinsics(8, 8, math.pi / 6)
    a = build_panoramas(b.ground_truth, pts, intr, noise, np.random.default_rng(5), field=b.field)
    c = build_panoramas(b.ground_truth, pts, intr, noise, np.random.default_rng(5), field=b.field)
    for na, nc in zip(a, c):
        for va, vc in zip(na.views, nc.views):
            assert np.array_equal(va.prob_index, vc.prob_index) and np.array_equal(va.prob_value, vc.prob_value)
    with pytest.raises(PlacementError):
        build_panoramas(b.ground_truth, [[-50.0, -50.0, 1.5]], intr, None, None, field=b.field)


@settings(max_examples=30, deadline=None)
@given(rate=st.floats(0, 1))
def test_group_confusion_rows_are_distributions(rate):
    m = group_confusion(rate)
    assert np.all((m >= 0) & (m <= 1))
    np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-6)
    for c in stuff_indices():
        assert m[c, c] == 1.0


def test_every_thing_class_is_confusable():
    grouped = {c for g in CONFUSABLE_GROUPS for c in g}
    assert {CLASSES[i] for i in thing_indices()} <= grouped


def test_pixel_noise_marginals_follow_the_confusion_row():
    noise = noise_from_profile({"confusion_rate": 0.3, "granularity": "pixel"})
    c = class_index("window")
    labels = np.full((320, 320), c)  # 102,400 pixels
    index, value, _ = apply_noise(labels, np.zeros_like(labels, np.int32), noise, np.random.default_rng(0))
    top = index[..., 0].ravel()
    n = top.size
    row = noise.confusion[c]
    counts = np.bincount(top, minlength=len(row))
    for k in np.nonzero(row)[0]:
        sigma = math.sqrt(n * row[k] * (1 - row[k]))
        assert abs(counts[k] - n * row[k]) <= 3 * sigma + 1
    assert counts[row == 0].sum() == 0


def test_instance_noise_labels_whole_masks():
    noise = noise_from_profile({"confusion_rate": 0.3, "granularity": "instance", "confidence": [0.7, 1.0],
                                "error_confidence": [0.51, 0.7]})
    labels = np.full((10, 10), class_index("chair"))
    inst = np.zeros((10, 10), np.int32)
    inst[:, :5], inst[:, 5:] = 1, 2
    for seed in range(20):
        index, value, _ = apply_noise(labels, inst, noise, np.random.default_rng(seed))
        for i in (1, 2):
            assert len(np.unique(index[..., 0][inst == i])) == 1
        assert np.all(value[..., 0] > 0.5)
        np.testing.assert_allclose(value.sum(axis=-1), 1.0, atol=1e-6)


def test_void_pixels_stay_void_under_noise():
    labels = np.zeros((12, 12), int)
    labels[3:9, 3:9] = class_index("sofa")
    index, value, _ = apply_noise(labels, np.zeros((12, 12), np.int32), noise_from_profile(
        {"confusion_rate": 0.3, "dropout": 0.5, "granularity": "pixel"}), np.random.default_rng(1))
    assert np.all(index[labels == VOID] == VOID)
    assert np.all(value[..., 0][labels == VOID] == 1.0)


def test_bad_noise_specs_are_rejected():
    with pytest.raises(ValueError):
        NoiseSpec(np.ones((3, 3)))
    with pytest.raises(ValueError):
        NoiseSpec(np.eye(3), confidence=(0.4, 0.9))
    with pytest.raises(KeyError):
        noise_from_profile("nope")
    with pytest.raises(KeyError):
        noise_from_profile({"confusion": 0.1})


def test_panorama_poses_cover_all_views():
    poses = panorama_poses([0, 0, 1.5])
    assert len(poses) == 36
    assert len({(round(p.heading, 9), round(p.elevation, 9)) for p in poses}) == 36
