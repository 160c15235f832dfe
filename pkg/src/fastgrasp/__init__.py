"""Fast 6-DoF parallel-jaw grasp dataset generation from point clouds."""
from .errors import (BenchTimeout, ConfigError, DegenerateContacts, EmptyMesh, EmptyRegion,
                     GraspError, NoGraspsFound, OneSidedContact, ParseError, ValidationError)
from .geometry import PointCloud, TriangleMesh, load_cloud, load_mesh, sample_surface
from .gripper import GraspPose, GripperConfig
from .generator import GenOptions, dedup, generate, sample_orientations
from .scoring import antipodal_generate, bench_compare, score
from .stability import rescore_dataset, simulate_close, torque_filter

__version__ = "0.1.0"
