import numpy as np
import pytest

from fastgrasp.geometry import PointCloud, sample_surface
from fastgrasp.gripper import GraspPose, GripperConfig
from fastgrasp.primitives import box, icosphere


def frame(approach, closing, point=(0.0, 0.0, 0.0), provenance="orientation_sampled"):
    """Grasp pose from an approach and a closing direction."""
    a = np.asarray(approach, float)
    a = a / np.linalg.norm(a)
    c = np.asarray(closing, float)
    c = c - (c @ a) * a
    c = c / np.linalg.norm(c)
    return GraspPose(point, np.column_stack([a, c, np.cross(a, c)]), provenance)


def cloud_of(points, normals=None, mass=1.0, com=(0.0, 0.0, 0.0)):
    points = np.asarray(points, float).reshape(-1, 3)
    if normals is None:
        normals = np.tile([0.0, 0.0, 1.0], (len(points), 1))
    return PointCloud(points, normals, mass, com)


@pytest.fixture(scope="session")
def gripper():
    return GripperConfig()


@pytest.fixture(scope="session")
def sphere_cloud():
    return sample_surface(icosphere(0.03), 5000, seed=0)


@pytest.fixture(scope="session")
def cube_cloud():
    return sample_surface(box((0.05, 0.05, 0.05)), 3000, seed=0)
