import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fastgrasp.errors import ConfigError, EmptyRegion, OneSidedContact
from fastgrasp.geometry import sample_surface
from fastgrasp.gripper import (GraspPose, GripperConfig, check_collision, collision_mask,
                               contact_points, extract_closing_region, gripper_from_mapping,
                               read_config)
from fastgrasp.primitives import box, icosphere

from conftest import cloud_of, frame


def hand_boxes(pose, g):
    """World-frame oriented boxes (center, axes, half extents) of fingers and palm."""
    a, c, m = pose.approach, pose.closing, pose.minor
    p = pose.point
    W, L, T, H = g.max_width, g.finger_length, g.finger_thickness, g.finger_height
    axes = np.column_stack([a, c, m])
    finger_half = np.array([L / 2, T / 2, H / 2])
    boxes = [(p + s * (W / 2 + T / 2) * c, axes, finger_half) for s in (-1.0, 1.0)]
    boxes.append((p - (L / 2 + T / 2) * a, axes, np.array([T / 2, W / 2 + T, H / 2])))
    return boxes


def oracle_collides(pose, points, g, margin=1e-9):
    """Strict interior containment in any hand box."""
    hit = np.zeros(len(points), bool)
    for center, axes, half in hand_boxes(pose, g):
        local = (points - center) @ axes
        hit |= np.all(np.abs(local) < half - margin, axis=1)
    return hit


def test_config_validation():
    with pytest.raises(ConfigError):
        GripperConfig(max_width=-1.0)
    with pytest.raises(ConfigError):
        GripperConfig(friction_mu=2.5)


def test_read_config(tmp_path):
    path = tmp_path / "g.cfg"
    path.write_text("max_width = 0.1  # metres\nfriction_mu = 0.4\nname = panda\n")
    values = read_config(path)
    assert values == {"max_width": 0.1, "friction_mu": 0.4, "name": "panda"}
    g = gripper_from_mapping(values)
    assert g.max_width == 0.1 and g.friction_mu == 0.4


def test_read_config_missing(tmp_path):
    with pytest.raises(ConfigError):
        read_config(tmp_path / "absent.cfg")


def test_wide_gripper_clears_unit_cube():
    g = GripperConfig(max_width=1.2, finger_length=1.2, finger_thickness=0.1, finger_height=1.2)
    cloud = sample_surface(box((1.0, 1.0, 1.0)), 3000, seed=0)
    pose = frame([0, 0, 1], [1, 0, 0])
    assert not oracle_collides(pose, cloud.points, g).any()
    assert check_collision(pose, cloud, g) is False


def test_finger_on_cube_corner():
    g = GripperConfig(max_width=1.2, finger_length=1.2, finger_thickness=0.1, finger_height=1.2)
    cloud = sample_surface(box((1.0, 1.0, 1.0)), 3000, seed=0)
    # put the right finger box around the corner region x near 0.5
    pose = frame([0, 0, 1], [1, 0, 0], point=[-0.15, 0.0, 0.0])
    assert oracle_collides(pose, cloud.points, g).any()
    assert check_collision(pose, cloud, g) is True


def test_empty_cloud_never_collides(gripper):
    empty = cloud_of(np.zeros((0, 3)))
    assert check_collision(frame([0, 0, 1], [1, 0, 0]), empty, gripper) is False


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_collision_matches_box_oracle(seed):
    rng = np.random.default_rng(seed)
    g = GripperConfig()
    a, c = rng.normal(size=3), rng.normal(size=3)
    pose = frame(a, c, point=rng.normal(scale=0.01, size=3))
    pts = pose.point + rng.uniform(-0.07, 0.07, size=(2000, 3))
    local = pose.to_local(pts)
    # stay off box faces so open and closed boxes agree
    W2, L2, T, H2 = g.max_width / 2, g.finger_length / 2, g.finger_thickness, g.finger_height / 2
    planes = [(0, L2), (0, -L2), (0, -L2 - T), (1, W2), (1, -W2), (1, W2 + T), (1, -W2 - T),
              (2, H2), (2, -H2)]
    keep = np.all([np.abs(local[:, ax] - v) > 1e-7 for ax, v in planes], axis=0)
    pts = pts[keep]
    assert np.array_equal(collision_mask(pose, pts, g), oracle_collides(pose, pts, g))


def test_sphere_fully_between_jaws():
    g = GripperConfig(finger_length=0.08, finger_height=0.08)
    cloud = sample_surface(icosphere(0.03), 3000, seed=1)
    region = extract_closing_region(frame([0, 0, 1], [1, 0, 0]), cloud, g)
    assert np.array_equal(np.sort(region.indices), np.arange(len(cloud)))
    nl, nr = len(region.left), len(region.right)
    assert abs(nl - nr) / len(cloud) < 0.10
    assert np.array_equal(np.sort(np.concatenate([region.left, region.right])), region.indices)


def test_region_far_away_is_empty(sphere_cloud, gripper):
    with pytest.raises(EmptyRegion):
        extract_closing_region(frame([0, 0, 1], [1, 0, 0], point=[1, 1, 1]), sphere_cloud, gripper)


def test_slab_split_balanced():
    g = GripperConfig(max_width=1.2, finger_length=1.2, finger_height=1.2)
    n = 4000
    cloud = sample_surface(box((1.0, 1.0, 1.0)), n, seed=7)
    region = extract_closing_region(frame([0, 0, 1], [1, 0, 0]), cloud, g)
    k = len(region.indices)
    sigma = np.sqrt(k * 0.25)
    assert abs(len(region.left) - len(region.right)) < 3 * 2 * sigma


def test_region_points_inside_box(sphere_cloud, gripper):
    pose = frame([0, 1, 0], [0, 0, 1])
    region = extract_closing_region(pose, sphere_cloud, gripper)
    local = pose.to_local(sphere_cloud.points[region.indices])
    half = np.array([gripper.finger_length, gripper.max_width, gripper.finger_height]) / 2
    assert np.all(np.abs(local) <= half + 1e-9)
    assert np.all(local[np.isin(region.indices, region.left), 1] < 0)


def test_centered_sphere_gaps(sphere_cloud, gripper):
    pose = frame([0, 0, 1], [1, 0, 0])
    region = extract_closing_region(pose, sphere_cloud, gripper)
    c = contact_points(pose, region, sphere_cloud, gripper)
    assert c.d1 == pytest.approx(0.01, abs=0.002)
    assert c.d2 == pytest.approx(0.01, abs=0.002)


def test_offset_sphere_gap_difference(sphere_cloud, gripper):
    pose = frame([0, 0, 1], [1, 0, 0])
    moved = sphere_cloud.transformed(np.eye(3), 0.005 * pose.closing)
    c = contact_points(pose, extract_closing_region(pose, moved, gripper), moved, gripper)
    assert c.d1 - c.d2 == pytest.approx(0.01, abs=0.004)


def test_slab_touching_left_jaw():
    g = GripperConfig()
    pts = np.array([[0.0, -0.04, 0.0], [0.0, 0.01, 0.0], [0.01, -0.02, 0.0]])
    cloud = cloud_of(pts)
    pose = GraspPose(np.zeros(3), np.eye(3))
    c = contact_points(pose, extract_closing_region(pose, cloud, g), cloud, g)
    assert c.d1 == 0.0
    assert c.left_index == 0 and c.right_index == 1
    assert c.d2 == pytest.approx(0.03, abs=1e-15)


def test_one_sided_region():
    g = GripperConfig()
    cloud = cloud_of([[0.0, 0.01, 0.0], [0.0, 0.02, 0.0]])
    pose = GraspPose(np.zeros(3), np.eye(3))
    with pytest.raises(OneSidedContact):
        contact_points(pose, extract_closing_region(pose, cloud, g), cloud, g)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-0.004, 0.004))
def test_translation_shifts_gaps(seed, delta):
    g = GripperConfig()
    rng = np.random.default_rng(seed)
    pts = rng.uniform([-0.02, -0.03, -0.009], [0.02, 0.03, 0.009], size=(300, 3))
    pose = GraspPose(np.zeros(3), np.eye(3))
    base = cloud_of(pts)
    moved = cloud_of(pts + [0.0, delta, 0.0])
    c0 = contact_points(pose, extract_closing_region(pose, base, g), base, g)
    c1 = contact_points(pose, extract_closing_region(pose, moved, g), moved, g)
    if (np.sign(pts[c0.left_index, 1]) == np.sign(pts[c0.left_index, 1] + delta)
            and np.sign(pts[c0.right_index, 1]) == np.sign(pts[c0.right_index, 1] + delta)):
        assert (c1.d1 - c1.d2) - (c0.d1 - c0.d2) == pytest.approx(2 * delta, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_mirror_swaps_gaps(seed):
    g = GripperConfig()
    rng = np.random.default_rng(seed)
    pts = rng.uniform([-0.02, -0.035, -0.009], [0.02, 0.035, 0.009], size=(200, 3))
    pose = GraspPose(np.zeros(3), np.eye(3))
    cloud = cloud_of(pts)
    mirrored = cloud_of(pts * [1.0, -1.0, 1.0])
    r0 = extract_closing_region(pose, cloud, g)
    r1 = extract_closing_region(pose, mirrored, g)
    assert np.array_equal(np.sort(r0.left), np.sort(r1.right))
    c0 = contact_points(pose, r0, cloud, g)
    c1 = contact_points(pose, r1, mirrored, g)
    assert (c0.d1, c0.d2) == (c1.d2, c1.d1)
    assert (c0.left_index, c0.right_index) == (c1.right_index, c1.left_index)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_pose_quaternion_round_trip(seed):
    rng = np.random.default_rng(seed)
    pose = frame(rng.normal(size=3), rng.normal(size=3), point=rng.normal(size=3))
    back = GraspPose.from_quaternion(pose.point, pose.quaternion)
    assert np.abs(back.rotation - pose.rotation).max() < 1e-12
    assert abs(np.linalg.norm(pose.quaternion) - 1.0) < 1e-12
    assert pose.quaternion[0] >= 0
    flip = pose.flipped()
    assert np.allclose(flip.closing, -pose.closing) and np.allclose(flip.approach, pose.approach)
