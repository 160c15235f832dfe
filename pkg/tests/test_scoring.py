import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fastgrasp.errors import BenchTimeout, DegenerateContacts
from fastgrasp.generator import CandidateGrasp, GenOptions, dedup, sample_orientations
from fastgrasp.geometry import sample_surface
from fastgrasp.gripper import Contacts, GripperConfig, check_collision
from fastgrasp.primitives import icosphere
from fastgrasp.scoring import (MU_LADDER, antipodal_generate, bench_compare, force_closure_at,
                               histogram, histogram_distance, pose_from_contacts, score)


def contacts(p1, n1, p2, n2):
    return Contacts(0, 1, np.asarray(p1, float), np.asarray(n1, float), np.asarray(p2, float),
                    np.asarray(n2, float), 0.0, 0.0)


def brute_mu_star(c):
    """Linear ladder scan with the cone test written out from scratch."""
    line = c.right_point - c.left_point
    line = line / np.linalg.norm(line)
    a1 = np.degrees(np.arccos(np.clip(np.dot(-line, c.left_normal), -1, 1)))
    a2 = np.degrees(np.arccos(np.clip(np.dot(line, c.right_normal), -1, 1)))
    for mu in MU_LADDER:
        if max(a1, a2) <= np.degrees(np.arctan(mu)):
            return mu
    return math.inf


CUBE = contacts([-0.025, 0, 0], [-1, 0, 0], [0.025, 0, 0], [1, 0, 0])


def wedge(deg=20.0):
    t = math.radians(deg)
    return contacts([-0.02, 0, 0], [-math.cos(t), math.sin(t), 0],
                    [0.02, 0, 0], [math.cos(t), math.sin(t), 0])


def test_cube_faces_close_at_low_friction():
    assert force_closure_at(CUBE, 0.1)
    q = score(CUBE)
    assert q.fc_mu_star == 0.05 and q.score == 1.0


def test_sphere_contacts_always_close():
    p = np.array([0.3, -0.4, 0.5])
    p /= np.linalg.norm(p)
    c = contacts(-0.03 * p, -p, 0.03 * p, p)
    assert all(force_closure_at(c, mu) for mu in (1e-6, 0.05, 0.5))


def test_wedge_cases():
    c = wedge(20.0)
    assert not force_closure_at(c, 0.3)
    assert force_closure_at(c, 1.0)
    q = score(c)
    assert q.fc_mu_star == 0.40
    assert math.degrees(math.atan(0.35)) < 20.0 <= math.degrees(math.atan(0.40))
    assert q.score == pytest.approx((1.00 - 0.40) / 0.95, abs=1e-12)


def test_tangential_contact_never_closes():
    c = contacts([-0.02, 0, 0], [0, 1, 0], [0.02, 0, 0], [0, 1, 0])
    q = score(c)
    assert q.fc_mu_star == math.inf and q.score == 0.0


def test_coincident_contacts_rejected():
    with pytest.raises(DegenerateContacts):
        score(contacts([0, 0, 0], [1, 0, 0], [0, 0, 0], [-1, 0, 0]))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ladder_matches_linear_scan(seed):
    rng = np.random.default_rng(seed)
    p1, p2 = rng.normal(size=3), rng.normal(size=3)
    n1, n2 = rng.normal(size=3), rng.normal(size=3)
    c = contacts(p1, n1 / np.linalg.norm(n1), p2, n2 / np.linalg.norm(n2))
    assert score(c).fc_mu_star == brute_mu_star(c)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_score_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    n1, n2 = rng.normal(size=3), rng.normal(size=3)
    p1, p2 = rng.normal(size=3), rng.normal(size=3)
    c = contacts(p1, n1 / np.linalg.norm(n1), p2, n2 / np.linalg.norm(n2))
    swapped = contacts(c.right_point, c.right_normal, c.left_point, c.left_normal)
    assert score(c) == score(swapped)
    assert 0.0 <= score(c).score <= 1.0


def test_swapped_contacts_give_twin_pose():
    p1, p2 = np.array([0.01, 0.02, -0.01]), np.array([-0.02, 0.0, 0.015])
    a = pose_from_contacts(p1, p2, 0.7)
    b = pose_from_contacts(p2, p1, 0.7)
    assert np.array_equal(a.point, b.point)
    assert np.allclose(a.approach, b.approach, atol=1e-15)
    assert np.allclose(a.closing, -b.closing, atol=1e-15)


def _worst_axis_offset(cands):
    worst = 0.0
    for c in cands:
        r = -c.pose.point
        worst = max(worst, float(np.linalg.norm(r - (r @ c.pose.closing) * c.pose.closing)))
    return worst


def _facet_tilt(cloud):
    """Largest angle between a sampled normal and the radial direction."""
    u = cloud.points / np.linalg.norm(cloud.points, axis=1, keepdims=True)
    return float(np.arccos(np.clip(np.einsum("ij,ij->i", u, cloud.normals), -1, 1)).max())


def test_baseline_sphere_axes_near_center(sphere_cloud, gripper):
    cands = antipodal_generate(sphere_cloud, gripper, 20, seed=1)
    assert len(cands) > 0
    # a chord at angle t to both radial directions sits r*sin(t) from the center, and
    # t <= atan(mu) plus the facet tilt of the sampled normals
    t = math.atan(gripper.friction_mu) + _facet_tilt(sphere_cloud)
    assert _worst_axis_offset(cands) <= 0.03 * math.sin(t)
    for c in cands[:50]:
        assert not check_collision(c.pose, sphere_cloud, gripper)


def test_baseline_sphere_axes_within_centimeter():
    g = GripperConfig(friction_mu=0.3)
    cloud = sample_surface(icosphere(0.03, subdivisions=5), 5000, seed=0)
    assert 0.03 * math.sin(math.atan(0.3) + _facet_tilt(cloud)) < 0.01
    cands = antipodal_generate(cloud, g, 20, seed=1)
    assert len(cands) > 0
    assert _worst_axis_offset(cands) <= 0.01


def test_baseline_reversed_pairs_share_midpoint(sphere_cloud):
    P = sphere_cloud.points
    i, j = 0, int(np.argmax(np.linalg.norm(P - P[0], axis=1)))
    assert np.array_equal(pose_from_contacts(P[i], P[j], 1.1).point,
                          pose_from_contacts(P[j], P[i], 1.1).point)


def test_baseline_duplicates_collapse(sphere_cloud, gripper):
    p1 = sphere_cloud.points[0]
    far = np.argmax(np.linalg.norm(sphere_cloud.points - p1, axis=1))
    p2 = sphere_cloud.points[far]
    a = CandidateGrasp(pose_from_contacts(p1, p2, 0.3), CUBE, (0, 1))
    b = CandidateGrasp(pose_from_contacts(p2, p1, 0.3), CUBE, (1, 0))
    assert len(dedup([a, b], 0.008, math.radians(10))) == 1


def test_baseline_zero_samples(sphere_cloud, gripper):
    assert antipodal_generate(sphere_cloud, gripper, 0) == []


def test_baseline_deterministic(sphere_cloud, gripper):
    a = antipodal_generate(sphere_cloud, gripper, 5, seed=11)
    b = antipodal_generate(sphere_cloud, gripper, 5, seed=11)
    assert [(c.order, c.pose.rotation.tobytes()) for c in a] == \
        [(c.order, c.pose.rotation.tobytes()) for c in b]


def test_histogram_distance_properties():
    h = histogram(np.linspace(0, 1, 101))
    assert h.sum() == 101
    assert histogram_distance(h, h) == 0.0
    a, b = np.zeros(20), np.zeros(20)
    a[0], b[19] = 5, 7
    assert histogram_distance(a, b) == 1.0
    assert math.isnan(histogram_distance(np.zeros(20), h))


def test_reference_per_grasp_time_ratio():
    assert 7.2 / 1.2 == pytest.approx(6.0)


def test_bench_zero_target(sphere_cloud, gripper):
    report = bench_compare(sphere_cloud, gripper, 0)
    assert math.isnan(report.speedup)
    assert report.ours_seconds == 0.0 and report.baseline_seconds == 0.0


def test_bench_small_run(sphere_cloud, gripper):
    report = bench_compare(sphere_cloud, gripper, 20, opts=GenOptions())
    assert report.ours_count == 20 and report.baseline_count == 20
    assert report.speedup > 0
    assert report.ours_hist.sum() == 20
    assert "speedup = " in report.to_text()
    assert report.hist_csv().splitlines()[0] == "bin_low,bin_high,count_ours,count_baseline"


def test_bench_timeout(sphere_cloud, gripper):
    with pytest.raises(BenchTimeout):
        bench_compare(sphere_cloud, gripper, 10**6, orients=sample_orientations(4, 2),
                      timeout_sec=5.0)
