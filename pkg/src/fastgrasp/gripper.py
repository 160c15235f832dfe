"""Parallel-jaw gripper model: collision boxes, closing region, jaw contacts.

Grasp frame conventions. A grasp rotation has columns ``(approach, closing,
minor)``. Local coordinates of a point ``x`` are ``(x - p) @ R`` giving
``(a, c, m)``. The closing region is the closed box
``|a| <= L/2, |c| <= W/2, |m| <= H/2`` where ``L = finger_length``,
``W = max_width`` and ``H = finger_height``. The fingers occupy
``W/2 < |c| <= W/2 + T`` over the same ``a``/``m`` span and the palm sits
behind the region at ``-L/2 - T <= a < -L/2`` across the full hand width.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ConfigError, EmptyRegion, OneSidedContact
from .geometry import PointCloud

PROVENANCES = ("orientation_sampled", "antipodal_baseline")
# Points within this distance of an inner face of the hand count as between
# the jaws, so rounding cannot push a point lying on a face into a finger.
BOUNDARY_TOL = 1e-9


@dataclass(frozen=True)
class GripperConfig:
    max_width: float = 0.08
    finger_length: float = 0.05
    finger_thickness: float = 0.01
    finger_height: float = 0.02
    max_contact_force: float = 25.0
    friction_mu: float = 0.5
    close_speed: float = 0.05

    def __post_init__(self):
        for name in ("max_width", "finger_length", "finger_thickness", "finger_height"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.max_contact_force > 0:
            raise ConfigError("max_contact_force must be positive")
        if not 0 < self.friction_mu < 2:
            raise ConfigError("friction_mu must lie in (0, 2)")


def read_config(path) -> dict:
    """Read a flat ``key = value`` file into a dict of floats/ints/strings.

    Blank lines and ``#`` comments are ignored. Sections are not used.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        text = Path(path).read_text()
        parser.read_string("[config]\n" + text)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    out = {}
    for key, raw in parser["config"].items():
        for cast in (int, float):
            try:
                out[key] = cast(raw)
                break
            except ValueError:
                continue
        else:
            out[key] = raw.strip()
    return out


def gripper_from_mapping(values: dict) -> GripperConfig:
    known = {f.name for f in fields(GripperConfig)}
    return GripperConfig(**{k: float(v) for k, v in values.items() if k in known})


@dataclass(frozen=True, eq=False)
class GraspPose:
    """Grasp ``G = [p, r]``: center point and rotation (approach, closing, minor)."""

    point: np.ndarray
    rotation: np.ndarray
    provenance: str = "orientation_sampled"

    def __post_init__(self):
        p = np.array(self.point, float).reshape(3)
        R = np.array(self.rotation, float).reshape(3, 3)
        if abs(np.linalg.det(R) - 1.0) > 1e-9 or np.abs(R.T @ R - np.eye(3)).max() > 1e-9:
            raise ValueError("grasp rotation must be orthonormal with det 1")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        p.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "point", p)
        object.__setattr__(self, "rotation", R)

    @property
    def approach(self):
        return self.rotation[:, 0]

    @property
    def closing(self):
        return self.rotation[:, 1]

    @property
    def minor(self):
        return self.rotation[:, 2]

    def to_local(self, pts) -> np.ndarray:
        return (np.asarray(pts, float) - self.point) @ self.rotation

    def to_world(self, local) -> np.ndarray:
        return np.asarray(local, float) @ self.rotation.T + self.point

    @cached_property
    def quaternion(self) -> np.ndarray:
        """Unit quaternion ``(w, x, y, z)`` with ``w >= 0``."""
        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        q = np.array([w, x, y, z])
        return -q if w < 0 else q

    @classmethod
    def from_quaternion(cls, point, quat_wxyz, provenance="orientation_sampled"):
        w, x, y, z = quat_wxyz
        R = Rotation.from_quat([x, y, z, w]).as_matrix()
        return cls(point, R, provenance)

    def flipped(self) -> "GraspPose":
        """Same physical grasp rolled by pi about the approach axis."""
        R = self.rotation.copy()
        R[:, 1:] = -R[:, 1:]
        return GraspPose(self.point, R, self.provenance)

    def transformed(self, rotation, translation) -> "GraspPose":
        Q = np.asarray(rotation, float)
        return GraspPose(Q @ self.point + np.asarray(translation, float), Q @ self.rotation,
                         self.provenance)


class ClosingRegion(NamedTuple):
    indices: np.ndarray
    left: np.ndarray
    right: np.ndarray
    frame: GraspPose


class Contacts(NamedTuple):
    left_index: int
    right_index: int
    left_point: np.ndarray
    left_normal: np.ndarray
    right_point: np.ndarray
    right_normal: np.ndarray
    d1: float
    d2: float


def _collision_local(local, g: GripperConfig) -> np.ndarray:
    W2, L2, H2, T = g.max_width / 2, g.finger_length / 2, g.finger_height / 2, g.finger_thickness
    Wi, Li = W2 + BOUNDARY_TOL, L2 + BOUNDARY_TOL
    a, c, m = local[:, 0], np.abs(local[:, 1]), local[:, 2]
    fingers = (a >= -Li) & (a <= Li) & (c > Wi)
    palm = (a >= -L2 - T) & (a < -Li)
    return (fingers | palm) & (c <= W2 + T) & (m >= -H2) & (m <= H2)


def collision_mask(pose: GraspPose, points, g: GripperConfig) -> np.ndarray:
    """Per-point flag: inside a finger or the palm."""
    return _collision_local(pose.to_local(points).reshape(-1, 3), g)


def check_collision(pose: GraspPose, cloud: PointCloud, g: GripperConfig) -> bool:
    """True iff any cloud point lies inside either finger or the palm."""
    if len(cloud) == 0:
        return False
    return bool(collision_mask(pose, cloud.points, g).any())


def region_mask(local, g: GripperConfig) -> np.ndarray:
    W2, L2, H2 = g.max_width / 2, g.finger_length / 2, g.finger_height / 2
    return ((np.abs(local[:, 0]) <= L2 + BOUNDARY_TOL) & (np.abs(local[:, 1]) <= W2 + BOUNDARY_TOL)
            & (np.abs(local[:, 2]) <= H2))


def _region_local(pose, local, g) -> ClosingRegion:
    idx = np.flatnonzero(region_mask(local, g))
    if len(idx) == 0:
        raise EmptyRegion("no points between the jaws")
    left = local[idx, 1] < -BOUNDARY_TOL
    return ClosingRegion(idx, idx[left], idx[~left], pose)


def extract_closing_region(pose: GraspPose, cloud: PointCloud, g: GripperConfig) -> ClosingRegion:
    """Indices of cloud points between the jaws, split by the closing coordinate."""
    local = pose.to_local(cloud.points) if len(cloud) else np.zeros((0, 3))
    return _region_local(pose, local, g)


def _pick_contacts(region, cl, cr, cloud, g) -> Contacts:
    # cl, cr: closing coordinates of region.left / region.right
    if len(region.left) == 0 or len(region.right) == 0:
        raise OneSidedContact("closing region is empty on one side")
    W2 = g.max_width / 2
    kl, kr = int(np.argmin(cl)), int(np.argmax(cr))
    il, ir = int(region.left[kl]), int(region.right[kr])
    d1 = float(cl[kl] + W2)
    d2 = float(W2 - cr[kr])
    return Contacts(il, ir, cloud.points[il], cloud.normals[il], cloud.points[ir],
                    cloud.normals[ir], max(d1, 0.0), max(d2, 0.0))


def contact_points(pose: GraspPose, region: ClosingRegion, cloud: PointCloud,
                   g: GripperConfig) -> Contacts:
    """First points each jaw meets while closing, with their jaw gaps.

    ``d1`` is the gap between the left jaw face (``c = -W/2``) and the
    left-most region point; ``d2`` mirrors it on the right.
    """
    if len(region.left) == 0 or len(region.right) == 0:
        raise OneSidedContact("closing region is empty on one side")
    cl = pose.to_local(cloud.points[region.left])[:, 1]
    cr = pose.to_local(cloud.points[region.right])[:, 1]
    return _pick_contacts(region, cl, cr, cloud, g)
