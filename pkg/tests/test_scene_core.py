import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fixtures import room_truth
from vlnforge.scene.bundle_io import (BundleChecksumError, BundleMissingError, BundleVersionError, load_bundle,
                                      save_bundle)
from vlnforge.scene.geometry import InvalidDepthError, lift_view, pixel_to_point, project_points
from vlnforge.scene.types import (DEFAULT_INTRINSICS, ELEVATIONS, CameraIntrinsics, NavGraph, PanoramaNode, Pose,
                                  SceneBundle, ViewObservation, panorama_poses, view_angles)
from vlnforge.synth.layout import generate_scene
from vlnforge.synth.noise import noise_from_profile
from vlnforge.synth.render import build_panoramas, render_views


def oracle_project(point, intr, heading, elevation, position):
    """Pinhole projection via explicit rotation matrices (camera x right, y down, z forward)."""
    ch, sh = math.cos(heading), math.sin(heading)
    ce, se = math.cos(elevation), math.sin(elevation)
    rz = np.array([[ch, -sh, 0], [sh, ch, 0], [0, 0, 1]])
    ry = np.array([[ce, 0, -se], [0, 1, 0], [se, 0, ce]])   # pitch up about the camera's left axis
    world_from_body = rz @ ry                                # body: x forward, y left, z up
    body = world_from_body.T @ (np.asarray(point) - position)
    x_cam, y_cam, z_cam = -body[1], -body[2], body[0]
    f = (intr.width / 2) / math.tan(intr.hfov / 2)
    return intr.width / 2 + f * x_cam / z_cam, intr.height / 2 + f * y_cam / z_cam, z_cam


def test_principal_point_lies_on_the_optical_axis():
    p = pixel_to_point(24.0, 24.0, 2.0, DEFAULT_INTRINSICS, Pose(np.zeros(3)))
    np.testing.assert_allclose(p, [2.0, 0.0, 0.0], atol=1e-12)


def test_left_edge_offset_is_tan_of_half_fov():
    intr = CameraIntrinsics(64, 64, math.pi / 2)
    p = pixel_to_point(0.0, 32.0, 1.0, intr, Pose(np.zeros(3)))
    # heading 0 looks along +x, so the left of the image is +y
    np.testing.assert_allclose(p, [1.0, 1.0, 0.0], atol=1e-12)


def test_non_positive_depth_is_rejected():
    with pytest.raises(InvalidDepthError):
        pixel_to_point(1, 1, 0.0, DEFAULT_INTRINSICS, Pose(np.zeros(3)))


def test_backprojection_matches_independent_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        intr = CameraIntrinsics(int(rng.integers(8, 97)), int(rng.integers(8, 97)), rng.uniform(0.2, 2.8))
        pose = Pose(rng.uniform(-5, 5, 3), rng.uniform(0, 2 * math.pi), rng.uniform(-1.4, 1.4))
        u, v = rng.uniform(0, intr.width), rng.uniform(0, intr.height)
        d = rng.uniform(0.1, 10)
        p = pixel_to_point(u, v, d, intr, pose)
        ou, ov, od = oracle_project(p, intr, pose.heading, pose.elevation, pose.position)
        assert abs(ou - u) < 1e-6 and abs(ov - v) < 1e-6 and abs(od - d) < 1e-6


@settings(max_examples=200, deadline=None)
@given(u=st.floats(0, 47.999), v=st.floats(0, 47.999), d=st.floats(0.05, 20),
       heading=st.floats(0, 6.28), elevation=st.floats(-1.5, 1.5),
       pos=st.tuples(*[st.floats(-50, 50)] * 3))
def test_project_backproject_round_trip(u, v, d, heading, elevation, pos):
    pose = Pose(np.array(pos), heading, elevation)
    p = pixel_to_point(u, v, d, DEFAULT_INTRINSICS, pose)
    pu, pv, pd = project_points(p, DEFAULT_INTRINSICS, pose)
    assert abs(pu[0] - u) < 0.5 and abs(pv[0] - v) < 0.5
    assert abs(pd[0] - d) < 1e-5


def _view(depth, labels=None, n_classes=3):
    h, w = depth.shape
    labels = np.ones((h, w), int) if labels is None else labels
    return ViewObservation.from_labels(Pose(np.zeros(3)), CameraIntrinsics(w, h, math.pi / 3), depth, labels,
                                       n_classes, np.zeros((h, w), np.int32))


def test_lift_of_all_invalid_depth_is_empty():
    assert len(lift_view(_view(np.zeros((6, 6))), stride=1)) == 0


def test_lift_of_single_pixel_delegates_to_pixel_to_point():
    depth = np.zeros((6, 6))
    depth[2, 4] = 3.0
    view = _view(depth)
    cloud = lift_view(view, stride=1)
    assert len(cloud) == 1
    np.testing.assert_allclose(cloud.points[0], pixel_to_point(4.5, 2.5, 3.0, view.intrinsics, view.pose),
                               atol=1e-12)


def test_lifted_box_face_is_planar():
    truth = room_truth(objects=[("cabinet", (5.5, 5.0, 1.5), (1.0, 6.0, 3.0))], walls=False)
    view = render_views(truth, Pose(np.array([3.0, 5.0, 1.5])), CameraIntrinsics(32, 32, math.pi / 4))
    cloud = lift_view(view, stride=1)
    hit = cloud.instance_ids == 1
    assert hit.all()
    np.testing.assert_allclose(cloud.points[:, 0], 5.0, atol=1e-4)


def test_panorama_headings_partition_the_circle():
    hs = sorted({view_angles(k)[0] for k in range(36)})
    assert len(hs) == 12
    np.testing.assert_allclose(np.diff(hs + [hs[0] + 2 * math.pi]), math.pi / 6, atol=1e-12)
    assert {view_angles(k)[1] for k in range(36)} == set(ELEVATIONS)


def test_panorama_rejects_wrong_view_count():
    views = [render_views(room_truth(), p, CameraIntrinsics(4, 4, 1.0)) for p in panorama_poses([1, 1, 1.5])]
    with pytest.raises(ValueError):
        PanoramaNode(0, np.array([1, 1, 1.5]), tuple(views[:35]))


def test_navgraph_rejects_self_loops_and_unknown_nodes():
    with pytest.raises(ValueError):
        NavGraph({0: [0, 0, 0]}, {(0, 0): 1.0})
    with pytest.raises(ValueError):
        NavGraph({0: [0, 0, 0]}, {(0, 1): 1.0})


@pytest.fixture(scope="module")
def small_bundle():
    b = generate_scene(5)
    pts = b.field.navigable_points()
    pos = [pts[len(pts) // 3], pts[2 * len(pts) // 3]]
    pans = build_panoramas(b.ground_truth, pos, CameraIntrinsics(12, 10, math.pi / 5), noise_from_profile("confusion30"),
                           np.random.default_rng(0), field=b.field)
    return SceneBundle(b.scene_id, b.field, pans, b.class_vocabulary, b.ground_truth, {"note": "test"})


def test_bundle_round_trip(tmp_path, small_bundle):
    save_bundle(small_bundle, tmp_path / "b", k=5)
    back = load_bundle(tmp_path / "b")
    assert back.scene_id == small_bundle.scene_id and back.meta == {"note": "test"}
    assert back.class_vocabulary == small_bundle.class_vocabulary
    assert back.ground_truth.to_dict() == small_bundle.ground_truth.to_dict()
    for fa, fb in zip(back.field.floors, small_bundle.field.floors):
        assert np.array_equal(fa.navigable, fb.navigable) and fa.origin == fb.origin and fa.height == fb.height
    for na, nb in zip(back.nodes, small_bundle.nodes):
        assert na.id == nb.id and np.array_equal(na.position, nb.position)
        for va, vb in zip(na.views, nb.views):
            assert np.array_equal(va.depth, vb.depth)
            assert np.array_equal(va.instance_ids, vb.instance_ids)
            assert np.abs(va.class_probs - vb.class_probs).max() <= 1 / 65535 + 1e-6
            sums = va.class_probs.sum(axis=-1)
            assert np.abs(sums - 1).max() <= 1e-3


def test_bundle_with_single_class_vocabulary(tmp_path):
    b = generate_scene(1)
    pose = Pose(b.field.navigable_points()[0], 0.0, 0.0)
    intr = CameraIntrinsics(4, 4, 1.0)
    views = []
    for p in panorama_poses(pose.position):
        v = render_views(b.ground_truth, p, intr)
        views.append(ViewObservation.from_labels(p, intr, v.depth, np.zeros((4, 4), int), 1))
    bundle = SceneBundle("one", b.field, [PanoramaNode(0, pose.position, views)], ("void",))
    save_bundle(bundle, tmp_path / "one")
    back = load_bundle(tmp_path / "one")
    for v in back.nodes[0].views:
        assert np.all(v.class_probs == 1.0)


def test_truncated_manifest_is_a_version_error(tmp_path, small_bundle):
    save_bundle(small_bundle, tmp_path / "b")
    m = tmp_path / "b" / "manifest.json"
    m.write_text(m.read_text()[: len(m.read_text()) // 2])
    with pytest.raises(BundleVersionError):
        load_bundle(tmp_path / "b")


def test_bundle_error_kinds_are_distinct(tmp_path, small_bundle):
    with pytest.raises(BundleMissingError):
        load_bundle(tmp_path / "nothing")
    save_bundle(small_bundle, tmp_path / "b")
    m = tmp_path / "b" / "manifest.json"
    d = json.loads(m.read_text())
    d["format_version"] = 99
    m.write_text(json.dumps(d))
    with pytest.raises(BundleVersionError):
        load_bundle(tmp_path / "b")
    save_bundle(small_bundle, tmp_path / "c")
    node_file = tmp_path / "c" / "nodes" / f"{small_bundle.nodes[0].id}.bin"
    node_file.write_bytes(node_file.read_bytes()[:-3] + b"xyz")
    with pytest.raises(BundleChecksumError):
        load_bundle(tmp_path / "c")
    node_file.unlink()
    with pytest.raises(BundleMissingError):
        load_bundle(tmp_path / "c")
