import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linear_sum_assignment

from fixtures import furnished_room, room_truth, truth_classes_per_voxel
from vlnforge.fusion import (FusionParams, SemanticVoxelGrid, accumulate, accumulate_many, box_iou, extract_instances,
                             finalize_labels, fuse_panoramas, label_accuracy, map_2d_to_3d, merge_grids,
                             single_view_baseline, single_view_objects)
from vlnforge.fusion.objects import Object3D, component_labels
from vlnforge.fusion.voxels import DEFAULT_ORIGIN, LabeledVoxels, pack, unpack
from vlnforge.scene.geometry import LabeledCloud, lift_view
from vlnforge.scene.types import DEFAULT_INTRINSICS, CameraIntrinsics, Pose, ViewObservation
from vlnforge.scene.vocab import class_index
from vlnforge.synth.noise import noise_from_profile
from vlnforge.synth.render import build_panoramas, render_views


def cloud(points, index, value, n_classes=3, instances=None):
    points = np.asarray(points, np.float64).reshape(-1, 3)
    n = len(points)
    index, value = np.asarray(index, np.uint16), np.asarray(value, np.float32)
    k = index.shape[-1] if index.ndim == 2 else max(index.size // max(n, 1), 1)
    return LabeledCloud(points, index.reshape(n, k), value.reshape(n, k),
                        np.zeros(n, np.int32) if instances is None else np.asarray(instances, np.int32),
                        np.zeros((n, 2), np.int64), n_classes)


def grid3():
    return SemanticVoxelGrid(0.1, 3, (0.0, 0.0, 0.0))


def labeled(idx, labels, voxel=0.1):
    idx = np.asarray(idx, np.int64).reshape(-1, 3)
    keys = pack(idx)
    order = np.argsort(keys)
    return LabeledVoxels(keys[order], np.asarray(labels, np.int64)[order], voxel, (0.0, 0.0, 0.0))


def bfs_components(cells, labels, connectivity):
    """Flood fill over a dict of voxels; neighbors by offset norm, same class only."""
    def near(d):
        nz = sum(1 for v in d if v)
        return max(abs(v) for v in d) == 1 and nz <= {6: 1, 18: 2, 26: 3}[connectivity]
    offs = [(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1) if near((a, b, c))]
    lab = dict(zip(cells, labels))
    seen, comps = set(), []
    for s in cells:
        if s in seen:
            continue
        comp, q = [], deque([s])
        seen.add(s)
        while q:
            c = q.popleft()
            comp.append(c)
            for d in offs:
                n = (c[0] + d[0], c[1] + d[1], c[2] + d[2])
                if n in lab and n not in seen and lab[n] == lab[c]:
                    seen.add(n)
                    q.append(n)
        comps.append(frozenset(comp))
    return set(comps)


# --- accumulation ---------------------------------------------------------

def test_empty_cloud_leaves_grid_unchanged():
    g = accumulate(grid3(), cloud(np.zeros((0, 3)), np.zeros((0, 1)), np.zeros((0, 1))))
    assert len(g) == 0


def test_single_point_mean():
    g = accumulate(grid3(), cloud([0.05, 0.05, 0.05], [1, 2], [0.6, 0.4]))
    np.testing.assert_allclose(g.means()[0], [0.0, 0.6, 0.4], atol=1e-7)


def test_two_point_mean_flips_the_label():
    c = cloud([[0.01, 0.01, 0.01], [0.09, 0.09, 0.09]], [[1, 2], [1, 2]], [[0.6, 0.4], [0.1, 0.9]])
    g = accumulate(grid3(), c)
    np.testing.assert_allclose(g.means()[0], [0.0, 0.35, 0.65], atol=1e-7)
    assert finalize_labels(g).labels.tolist() == [2]


def test_tie_goes_to_lower_class():
    g = accumulate(grid3(), cloud([0.05, 0.05, 0.05], [2, 1], [0.5, 0.5]))
    assert finalize_labels(g).labels.tolist() == [1]


def test_single_pixel_voxel_takes_its_argmax():
    depth = np.zeros((4, 4), np.float32)
    depth[1, 1] = 2.0
    probs = np.zeros((4, 4, 3))
    probs[..., 0] = 1.0
    probs[1, 1] = [0.1, 0.3, 0.6]
    view = ViewObservation.from_dense(Pose(np.zeros(3)), CameraIntrinsics(4, 4, 0.5), depth, probs)
    g = accumulate(grid3(), lift_view(view, stride=1))
    assert finalize_labels(g).labels.tolist() == [2]


def test_top_k_residual_goes_to_void():
    g = accumulate(grid3(), cloud([0.05, 0.05, 0.05], [1], [0.7]))
    np.testing.assert_allclose(g.means()[0], [0.3, 0.7, 0.0], atol=1e-7)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 60), split=st.integers(0, 60))
def test_accumulation_order_does_not_matter(seed, n, split):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 0.4, (n, 3))
    idx = np.stack([rng.permutation(3)[:2] for _ in range(n)])
    top = rng.uniform(0.5, 1.0, n)
    val = np.stack([top, 1 - top], axis=1)
    full = accumulate(grid3(), cloud(pts, idx, val))
    split = min(split, n)
    a = cloud(pts[:split], idx[:split], val[:split])
    b = cloud(pts[split:], idx[split:], val[split:])
    seq = accumulate(accumulate(grid3(), b), a)
    merged = merge_grids(accumulate(grid3(), a), accumulate(grid3(), b))
    for g in (seq, merged, accumulate_many(grid3(), [b, a])):
        assert np.array_equal(g.keys, full.keys) and np.array_equal(g.counts, full.counts)
        np.testing.assert_allclose(g.sums, full.sums, atol=1e-9)
    assert np.all(full.means().sum(axis=1) <= 1 + 1e-4)
    assert full.counts.sum() == n


def test_pack_round_trip_with_negatives():
    idx = np.array([[-5, 3, 0], [100, -200, 7], [0, 0, 0]])
    assert np.array_equal(unpack(pack(idx)), idx)
    with pytest.raises(OverflowError):
        pack([[1 << 21, 0, 0]])


def test_incompatible_grids_do_not_merge():
    with pytest.raises(ValueError):
        merge_grids(grid3(), SemanticVoxelGrid(0.2, 3, (0.0, 0.0, 0.0)))


# --- instances ------------------------------------------------------------

def test_face_neighbors_form_one_instance():
    objs = extract_instances(labeled([[0, 0, 0], [1, 0, 0]], [5, 5]), min_voxels=1, exclude=())
    assert len(objs) == 1
    np.testing.assert_allclose(objs[0].extent, [0.2, 0.1, 0.1])


def test_gap_splits_instances():
    objs = extract_instances(labeled([[0, 0, 0], [3, 0, 0]], [5, 5]), min_voxels=1, exclude=())
    assert len(objs) == 2


def test_touching_voxels_of_different_classes_stay_apart():
    objs = extract_instances(labeled([[0, 0, 0], [1, 0, 0]], [5, 6]), min_voxels=1, exclude=())
    assert sorted(o.class_index for o in objs) == [5, 6]


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), conn=st.sampled_from([6, 18, 26]))
def test_components_match_flood_fill(seed, conn):
    rng = np.random.default_rng(seed)
    cells = {tuple(int(v) for v in c) for c in rng.integers(-4, 5, (80, 3))}
    cells = sorted(cells)
    labels = rng.integers(4, 6, len(cells))
    lv = labeled(cells, labels)
    comp = component_labels(lv, conn)
    idx = [tuple(int(v) for v in r) for r in lv.indices]
    got = {frozenset(c for c, k in zip(idx, comp) if k == g) for g in set(comp.tolist())}
    assert got == bfs_components(cells, labels.tolist(), conn)


def test_min_voxels_drops_specks_and_default_excludes_structure():
    wall = class_index("wall")
    lv = labeled([[0, 0, 0], [1, 0, 0], [5, 5, 5]], [wall, wall, 9])
    assert [o.class_index for o in extract_instances(lv, min_voxels=1)] == [9]
    assert extract_instances(lv, min_voxels=2) == []


def test_object_extent_must_be_positive():
    with pytest.raises(ValueError):
        Object3D(0, 1, np.zeros(3), np.array([0.1, 0.0, 0.1]), np.zeros((1, 3), int), np.zeros(3))


# --- single-view baseline and 2D/3D mapping -------------------------------

def _box_view(objects, pose, intr=CameraIntrinsics(32, 32, math.pi / 3)):
    truth = room_truth(objects=objects)
    return truth, render_views(truth, pose, intr)


def test_one_mask_gives_one_object_from_its_pixels():
    truth, view = _box_view([("sofa", (5.0, 5.0, 0.5), (0.8, 0.8, 1.0))], Pose(np.array([3.0, 5.0, 1.0])))
    objs = single_view_objects(view, stride=1)
    assert len(objs) == 1 and objs[0].class_index == class_index("sofa")
    c = lift_view(view, stride=1)
    pts = c.points[c.instance_ids == 1]
    assert np.all(pts >= objs[0].min - 1e-9) and np.all(pts <= objs[0].max + 1e-9)
    outside = c.points[c.instance_ids != 1]
    inside = np.all((outside > objs[0].min + 1e-6) & (outside < objs[0].max - 1e-6), axis=1)
    assert not inside.any()


def test_empty_instance_map_gives_no_objects():
    _, view = _box_view([], Pose(np.array([3.0, 5.0, 1.5])))
    assert single_view_objects(view) == []


def test_object_straddling_two_views():
    truth = room_truth(objects=[("wardrobe", (6.0, 5.0, 1.0), (1.0, 3.0, 2.0))])  # taller than the camera
    pos = np.array([4.0, 5.0, 1.2])
    intr = CameraIntrinsics(64, 64, math.pi / 4)
    views = [render_views(truth, Pose(pos, h, 0.0), intr) for h in (math.pi / 8, -math.pi / 8)]
    singles = [o for v in views for o in single_view_objects(v, stride=1)]
    assert len(singles) == 2
    g = accumulate_many(SemanticVoxelGrid(0.1, len(truth.vocabulary), DEFAULT_ORIGIN),
                        [lift_view(v, stride=1) for v in views])
    fused = extract_instances(finalize_labels(g))
    assert len(fused) == 1


def test_mask_inside_object_maps_and_void_mask_does_not():
    truth, view = _box_view([("sofa", (5.0, 5.0, 0.5), (0.8, 0.8, 1.0))], Pose(np.array([3.0, 5.0, 1.0])))
    objs = single_view_objects(view, min_voxels=1)
    vm = map_2d_to_3d([("v", view)], objs)
    assert vm.mapping["v"] == {1: objs[0].id}
    depth = np.zeros((8, 8), np.float32)
    ghost = ViewObservation.from_labels(Pose(np.zeros(3)), CameraIntrinsics(8, 8, 1.0), depth,
                                        np.full((8, 8), class_index("sofa")), len(truth.vocabulary),
                                        np.full((8, 8), 3, np.int32))
    assert map_2d_to_3d([("g", ghost)], objs).mapping["g"] == {3: None}
    with pytest.raises(ValueError):
        map_2d_to_3d([("v", view)], objs, threshold=1.5)


@pytest.fixture(scope="module")
def furnished_clean():
    truth, spots = furnished_room()
    pans = build_panoramas(truth, spots, DEFAULT_INTRINSICS, None, None)
    return truth, pans, fuse_panoramas(pans)


def test_clean_voxel_labels_match_touching_surfaces(furnished_clean):
    truth, _, fr = furnished_clean
    allowed = truth_classes_per_voxel(fr.labeled.centers(), fr.labeled.voxel_size, truth)
    bad = [i for i, (lab, ok) in enumerate(zip(fr.labeled.labels, allowed)) if lab not in ok]
    assert bad == []


def test_clean_instances_match_truth_boxes(furnished_clean):
    truth, _, fr = furnished_clean
    n_gt = len(truth.objects)
    assert abs(len(fr.objects) - n_gt) <= 0.1 * n_gt
    iou = box_iou(np.array([o.min for o in fr.objects]), np.array([o.max for o in fr.objects]),
                  np.array([o.min for o in truth.objects]), np.array([o.max for o in truth.objects]))
    r, c = linear_sum_assignment(-iou)
    assert np.all(iou[r, c] >= 0.3)
    assert all(fr.objects[i].class_index == truth.objects[j].class_index for i, j in zip(r, c))


def test_view_mapping_agrees_with_rendered_instances(furnished_clean):
    truth, pans, fr = furnished_clean
    assert len(truth.objects) == 20 and all(len(p.views) == 36 for p in pans)
    iou = box_iou(np.array([o.min for o in fr.objects]), np.array([o.max for o in fr.objects]),
                  np.array([o.min for o in truth.objects]), np.array([o.max for o in truth.objects]))
    r, c = linear_sum_assignment(-iou)
    truth_of = {fr.objects[i].id: truth.objects[j].id for i, j in zip(r, c)}
    total = agree = 0
    for ref, m in fr.view_map.mapping.items():
        for iid, oid in m.items():
            total += 1
            agree += oid is not None and truth_of.get(oid) == iid - 1
    assert total > 0 and agree / total >= 0.95


# --- label accuracy -------------------------------------------------------

def _as_objects(truth, classes=None):
    out = []
    for k, o in enumerate(truth.objects):
        cls = o.class_index if classes is None else classes[k]
        out.append(Object3D(k, cls, np.asarray(o.center), np.asarray(o.extent), np.zeros((1, 3), int),
                            np.asarray(o.center)))
    return out


def test_accuracy_bounds():
    truth, _ = furnished_room()
    assert label_accuracy(_as_objects(truth), truth).accuracy == 1.0
    wrong = [class_index("piano")] * len(truth.objects)
    assert label_accuracy(_as_objects(truth, wrong), truth).accuracy == 0.0
    r = label_accuracy([], truth)
    assert not r.defined and r.accuracy == 0.0


def test_box_iou_known_values():
    iou = box_iou(np.zeros(3), np.ones(3), np.array([[0.5, 0, 0], [2, 2, 2]]), np.array([[1.5, 1, 1], [3, 3, 3]]))
    np.testing.assert_allclose(iou, [[1 / 3, 0.0]])


def test_cross_view_fusion_beats_single_views():
    truth, spots = furnished_room(seed=1)
    noise = noise_from_profile("confusion30")
    pans = build_panoramas(truth, spots, DEFAULT_INTRINSICS, noise, np.random.default_rng(0))
    fused = label_accuracy(fuse_panoramas(pans).objects, truth)
    single = label_accuracy(single_view_baseline(pans), truth)
    assert fused.accuracy - single.accuracy >= 0.15


def test_fusion_params_validation():
    with pytest.raises(ValueError):
        FusionParams(connectivity=8)
    with pytest.raises(ValueError):
        FusionParams(voxel_size=0)
