"""Closed-form jaw-closing model used to rescore grasps.

Jaws close symmetrically at equal speed. The jaw with the smaller gap
touches first and pushes the object rigidly along the closing axis until
the other jaw arrives, so the object moves by ``|d1 - d2| / 2``. A grasp is
dropped when that push is too large, when the push leaves the object on one
side of the hand, or when the friction torque at the pads cannot hold the
object against gravity about the contact line.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyRegion, OneSidedContact
from .geometry import PointCloud
from .gripper import (ClosingRegion, GraspPose, GripperConfig, _pick_contacts, _region_local)
from .scoring import N_BINS, histogram, histogram_csv, score

GRAVITY = 9.81


@dataclass(frozen=True)
class MirrorOperator:
    """Reflection ``I - 2 u u^T`` across the plane normal to ``u``.

    The default ``u`` is the closing axis of the grasp frame, which is the
    second column of a grasp rotation in this package.
    """

    u: tuple = (0.0, 1.0, 0.0)

    def __post_init__(self):
        u = np.asarray(self.u, float).reshape(3)
        if abs(float(u @ u) - 1.0) > 1e-12:
            raise ValueError("mirror axis must be a unit vector")
        object.__setattr__(self, "u", tuple(float(x) for x in u))

    @property
    def matrix(self) -> np.ndarray:
        u = np.asarray(self.u)
        return np.eye(3) - 2.0 * np.outer(u, u)

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, float) @ self.matrix.T


@dataclass(frozen=True)
class StabilityVerdict:
    symmetric: bool
    d1: float
    d2: float
    displacement: float
    weight: float
    torque_ok: bool
    final_score: float
    removed: bool
    escaped: bool = False


class Thresholds(NamedTuple):
    displacement: float
    symmetry: float
    r_patch: float


def default_thresholds(g: GripperConfig, displacement=None, symmetry=None,
                       r_patch=None) -> Thresholds:
    """Fill unset thresholds: W/4 push, W/20 mirror tolerance, H/4 pad radius."""
    return Thresholds(g.max_width / 4 if displacement is None else float(displacement),
                      g.max_width / 20 if symmetry is None else float(symmetry),
                      g.finger_height / 4 if r_patch is None else float(r_patch))


def closing_weight(d1: float, d2: float, width: float) -> float:
    """Weight in ``[0, 0.5]``, maximal when both jaws touch at once."""
    w = (1.0 - abs(d1 - d2) / width) / 2.0
    return min(0.5, max(0.0, w))


def mirror_chamfer(left_local, right_local, mirror: MirrorOperator | None = None) -> float:
    """Mean distance from each reflected left point to its nearest right point."""
    mirror = MirrorOperator() if mirror is None else mirror
    left_local = np.asarray(left_local, float).reshape(-1, 3)
    right_local = np.asarray(right_local, float).reshape(-1, 3)
    if len(left_local) == 0 or len(right_local) == 0:
        raise OneSidedContact("closing region is empty on one side")
    dist, _ = cKDTree(right_local).query(mirror.apply(left_local))
    return float(np.mean(dist))


def symmetry_test(region: ClosingRegion, cloud: PointCloud, tol: float | None = None,
                  g: GripperConfig | None = None) -> bool:
    """Whether the left half of the region mirrors onto the right half.

    Both halves are taken in the grasp frame and the left half is reflected
    across the jaw mid-plane. ``tol`` defaults to ``max_width / 20``.
    """
    if tol is None:
        tol = (g or GripperConfig()).max_width / 20
    pose = region.frame
    return mirror_chamfer(pose.to_local(cloud.points[region.left]),
                          pose.to_local(cloud.points[region.right])) <= tol


def gravity_lever(p1, p2, com, closing=None) -> float:
    """Perpendicular distance from ``com`` to the line through the contacts."""
    p1, p2, com = (np.asarray(x, float) for x in (p1, p2, com))
    axis = p2 - p1
    n = float(np.linalg.norm(axis))
    if n < 1e-12:
        if closing is None:
            return float(np.linalg.norm(com - p1))
        axis, n = np.asarray(closing, float), 1.0
    r = com - p1
    return float(np.linalg.norm(np.cross(r, axis / n)))


def torque_capacity(g: GripperConfig, r_patch: float | None = None) -> float:
    """Largest friction torque two pads can resist: ``2 mu F r``."""
    r = g.finger_height / 4 if r_patch is None else r_patch
    return 2.0 * g.friction_mu * g.max_contact_force * r


def _torque_ok(p1, p2, closing, cloud, g, r_patch) -> bool:
    lever = gravity_lever(p1, p2, cloud.com, closing)
    return cloud.mass_kg * GRAVITY * lever <= torque_capacity(g, r_patch)


def torque_filter(grasp, cloud: PointCloud, g: GripperConfig,
                  r_patch: float | None = None) -> bool:
    """True iff pad friction can balance the worst-case gravity torque.

    Gravity is taken perpendicular to the lever arm, so the torque is
    ``m * 9.81 * lever`` with the lever measured from the contact line to
    the center of mass.
    """
    c = grasp.contacts
    return _torque_ok(c.left_point, c.right_point, grasp.pose.closing, cloud, g, r_patch)


def _escapes(pose: GraspPose, cloud: PointCloud, g: GripperConfig, d1: float, d2: float) -> bool:
    # Push the object toward the jaw with the larger gap and re-extract.
    shift = (d2 - d1) / 2.0
    local = pose.to_local(cloud.points)
    local[:, 1] += shift
    try:
        region = _region_local(pose, local, g)
    except EmptyRegion:
        return True
    return len(region.left) == 0 or len(region.right) == 0


def _assess(pose, d1, d2, p1, p2, region, original, cloud, g, th: Thresholds) -> StabilityVerdict:
    displacement = abs(d1 - d2) / 2.0
    weight = closing_weight(d1, d2, g.max_width)
    symmetric = symmetry_test(region, cloud, th.symmetry)
    escaped = _escapes(pose, cloud, g, d1, d2)
    torque_ok = _torque_ok(p1, p2, pose.closing, cloud, g, th.r_patch)
    final = original * 2.0 * weight if torque_ok else 0.0
    removed = displacement > th.displacement or escaped or not torque_ok
    return StabilityVerdict(bool(symmetric), float(d1), float(d2), displacement, weight,
                            bool(torque_ok), min(final, original), bool(removed), bool(escaped))


def simulate_close(grasp, cloud: PointCloud, g: GripperConfig, *, original_score=None,
                   displacement_threshold=None, symmetry_tol=None,
                   r_patch=None) -> StabilityVerdict:
    """Quasi-static closing verdict for one candidate grasp.

    Parameters
    ----------
    grasp : CandidateGrasp
        Pose and jaw contacts.
    original_score : float, optional
        Score to reweight. Computed from the contacts when omitted.
    displacement_threshold, symmetry_tol, r_patch : float, optional
        Default to ``W/4``, ``W/20`` and ``H/4``.
    """
    th = default_thresholds(g, displacement_threshold, symmetry_tol, r_patch)
    c = grasp.contacts
    region = _region_local(grasp.pose, grasp.pose.to_local(cloud.points), g)
    original = score(c).score if original_score is None else float(original_score)
    return _assess(grasp.pose, c.d1, c.d2, c.left_point, c.right_point, region, original,
                   cloud, g, th)


@dataclass
class RescoreStats:
    n_in: int = 0
    n_removed: int = 0
    before_hist: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(N_BINS, int))
    after_hist: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(N_BINS, int))
    kept_indices: list = dataclasses.field(default_factory=list)

    @property
    def removed_fraction(self) -> float:
        return self.n_removed / self.n_in if self.n_in else 0.0

    def summary(self) -> str:
        return f"removed_fraction = {self.removed_fraction!r}\n"

    def hist_csv(self) -> str:
        return histogram_csv(self.before_hist, self.after_hist, ("count_score", "count_final_score"))


def rescore_record(record, cloud: PointCloud, g: GripperConfig, th: Thresholds):
    """Verdict for one stored record, or None when its region is one-sided.

    Weight and displacement use the stored ``d1``/``d2``. Contact points for
    the torque check are recovered from the pose, which the stored gaps
    already describe.
    """
    pose = record.pose
    local = pose.to_local(cloud.points)
    try:
        region = _region_local(pose, local, g)
        c = _pick_contacts(region, local[region.left, 1], local[region.right, 1], cloud, g)
    except (EmptyRegion, OneSidedContact):
        return None
    return _assess(pose, record.d1, record.d2, c.left_point, c.right_point, region,
                   record.score, cloud, g, th)


def rescore_dataset(records, cloud: PointCloud, g: GripperConfig, *, displacement_threshold=None,
                    symmetry_tol=None, r_patch=None):
    """Rescore records and drop the removed ones.

    Returns ``(survivors, stats)``. Survivors are copies with ``weight``,
    ``final_score`` and flags updated. Running it again on the survivors
    changes nothing, because every quantity derives from the pose, the
    stored gaps and the original score.
    """
    th = default_thresholds(g, displacement_threshold, symmetry_tol, r_patch)
    records = list(records)
    stats = RescoreStats(n_in=len(records))
    stats.before_hist = histogram([r.score for r in records])
    survivors = []
    for i, rec in enumerate(records):
        v = rescore_record(rec, cloud, g, th)
        if v is None or v.removed:
            stats.n_removed += 1
            continue
        flags = set(rec.flags) - {"symmetric", "torque_ok", "removed"}
        if v.symmetric:
            flags.add("symmetric")
        if v.torque_ok:
            flags.add("torque_ok")
        stats.kept_indices.append(i)
        survivors.append(dataclasses.replace(rec, weight=v.weight, final_score=v.final_score,
                                             flags=frozenset(flags)))
    stats.after_hist = histogram([r.final_score for r in survivors])
    return survivors, stats
