"""Orientation-sampled grasp generation.

A fixed set of gripper orientations is swept over every surface point.
Each (point, orientation) pose is kept when the jaws clear the object, both
halves of the closing region are occupied and both jaw contacts sit inside
the widened friction cone. Near-identical poses are then collapsed by
:func:`dedup`.
"""
from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy.spatial.transform import Rotation

from . import _sweep
from .errors import NoGraspsFound
from .geometry import PointCloud
from .gripper import ClosingRegion, Contacts, GraspPose, GripperConfig, extract_closing_region

logger = logging.getLogger(__name__)

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


@dataclass(frozen=True, eq=False)
class OrientationSet:
    rotations: np.ndarray
    n_dirs: int
    n_rolls: int

    def __len__(self):
        return len(self.rotations)


@dataclass(frozen=True)
class GenOptions:
    n_dirs: int = 64
    n_rolls: int = 8
    eps_p: float | None = None  # defaults to max_width / 10
    eps_r: float = math.radians(10.0)
    normal_slack_deg: float = 5.0
    seed: int = 0
    jobs: int = 1
    chunk_orients: int = 8
    standoff: float | None = None  # defaults to finger_length / 2

    def resolved_standoff(self, g: GripperConfig) -> float:
        return self.standoff if self.standoff is not None else g.finger_length / 2.0

    def resolved_eps_p(self, g: GripperConfig) -> float:
        return self.eps_p if self.eps_p is not None else g.max_width / 10.0


def fibonacci_directions(n: int) -> np.ndarray:
    """Unit vectors on the offset Fibonacci lattice, ``z_i = 1 - (2i + 1) / n``."""
    i = np.arange(n)
    z = 1.0 - (2.0 * i + 1.0) / n
    rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = i * GOLDEN_ANGLE
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


def _reference_perpendicular(d):
    ref = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    c = np.cross(d, ref)
    return c / np.linalg.norm(c)


def sample_orientations(n_dirs: int = 64, n_rolls: int = 8) -> OrientationSet:
    """Fibonacci approach directions times ``n_rolls`` rolls in ``[0, pi)``.

    Rolls stop short of pi because a parallel jaw looks the same after a half
    turn. Columns of each rotation are (approach, closing, minor).
    """
    if n_dirs < 1 or n_rolls < 1:
        raise ValueError("n_dirs and n_rolls must be positive")
    out = np.empty((n_dirs * n_rolls, 3, 3))
    for i, a in enumerate(fibonacci_directions(n_dirs)):
        c0 = _reference_perpendicular(a)
        m0 = np.cross(a, c0)
        for k in range(n_rolls):
            t = math.pi * k / n_rolls
            c = math.cos(t) * c0 + math.sin(t) * m0
            c /= np.linalg.norm(c)
            m = np.cross(a, c)
            out[i * n_rolls + k] = np.stack([a, c, m], axis=1)
    out.setflags(write=False)
    return OrientationSet(out, n_dirs, n_rolls)


def _trusted_pose(point, rotation, provenance) -> GraspPose:
    # skips orthonormality validation for rotations that were checked upstream
    pose = object.__new__(GraspPose)
    object.__setattr__(pose, "point", point)
    object.__setattr__(pose, "rotation", rotation)
    object.__setattr__(pose, "provenance", provenance)
    return pose


@dataclass(eq=False)
class CandidateGrasp:
    """A collision-free grasp with its jaw contacts.

    ``order`` is the (point index, orientation index) pair for the sampler,
    or (sample iteration, partner index) for the antipodal baseline; it fixes
    output order and dedup precedence.
    """

    pose: GraspPose
    contacts: Contacts
    order: tuple
    canon_key: int | None = None
    _source: tuple | None = field(default=None, repr=False)
    _region: ClosingRegion | None = field(default=None, repr=False)

    @property
    def region(self) -> ClosingRegion:
        if self._region is None:
            cloud, g = self._source
            self._region = extract_closing_region(self.pose, cloud, g)
        return self._region


def normal_filter(pose: GraspPose, contacts: Contacts, mu: float,
                  slack_deg: float = 5.0) -> bool:
    """Quick friction-cone screen on the jaw contacts.

    Each jaw pushes along the closing axis into the object; keep the grasp
    when both contact normals lie within ``atan(mu) + slack`` of that push.
    """
    limit = math.atan(mu) + math.radians(slack_deg)
    c = pose.closing
    left = math.acos(float(np.clip(-np.dot(contacts.left_normal, c), -1.0, 1.0)))
    right = math.acos(float(np.clip(np.dot(contacts.right_normal, c), -1.0, 1.0)))
    return left <= limit and right <= limit


def _run_sweep(cloud, g, rotations, query, standoff, cos_thr):
    cap = len(query) * len(rotations)
    outs = (np.empty(cap, np.int64), np.empty(cap, np.int64), np.empty(cap, np.int64),
            np.empty(cap, np.int64), np.empty(cap), np.empty(cap))
    counts = np.zeros(5, np.int64)
    n = _sweep.sweep(np.ascontiguousarray(cloud.points), np.ascontiguousarray(cloud.normals),
                     np.ascontiguousarray(rotations), query, g.max_width, g.finger_length,
                     g.finger_thickness, g.finger_height, standoff, cos_thr, counts, *outs)
    return tuple(o[:n] for o in outs), counts


def _sweep_arrays(cloud, g, orients, opts, query):
    """Run the compiled sweep; returns sorted result columns and status counts."""
    cos_thr = math.cos(math.atan(g.friction_mu) + math.radians(opts.normal_slack_deg))
    R = orients.rotations
    # orientation blocks bound the output buffers; grids are built once per orientation
    block = max(1, min(len(R), (1 << 22) // max(1, len(query))))
    bounds = list(range(0, len(R), block)) + [len(R)]
    spans = list(zip(bounds[:-1], bounds[1:]))
    jobs = max(1, int(opts.jobs))
    s = opts.resolved_standoff(g)
    if jobs == 1 or len(R) < 2:
        parts = [(lo, _run_sweep(cloud, g, R[lo:hi], query, s, cos_thr)) for lo, hi in spans]
    else:
        if len(spans) < jobs:
            edges = np.linspace(0, len(R), jobs + 1).astype(int)
            spans = [(lo, hi) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]
        with ThreadPoolExecutor(jobs) as pool:
            futs = [(lo, pool.submit(_run_sweep, cloud, g, R[lo:hi], query, s, cos_thr))
                    for lo, hi in spans]
            parts = [(lo, f.result()) for lo, f in futs]
    counts = sum(res[1] for _, res in parts)
    # orientation ids are block-local; shift them back by the block offset
    cols = [np.concatenate([res[0][i] + (lo if i == 1 else 0) for lo, res in parts])
            for i in range(6)]
    order = np.lexsort((cols[1], cols[0]))
    return [c[order] for c in cols], counts


def _to_candidates(cloud, g, orients, opts, cols) -> list[CandidateGrasp]:
    P, N, R = cloud.points, cloud.normals, orients.rotations
    s = opts.resolved_standoff(g)
    out = []
    for k, o, a, b, d1, d2 in zip(*(c.tolist() for c in cols)):
        pose = _trusted_pose(P[k] + s * R[o][:, 0], R[o], "orientation_sampled")
        contacts = Contacts(a, b, P[a], N[a], P[b], N[b], d1, d2)
        out.append(CandidateGrasp(pose, contacts, (k, o), _source=(cloud, g)))
    return out


def _tally(stats, counts):
    if stats is not None:
        for name, v in zip(("accepted", "normal", "collision", "empty", "one_sided"), counts):
            stats[name] = stats.get(name, 0) + int(v)


def iter_generate(cloud: PointCloud, g: GripperConfig, orients: OrientationSet,
                  opts: GenOptions = GenOptions(), stats: dict | None = None
                  ) -> Iterator[list[CandidateGrasp]]:
    """Yield candidate batches, one block of ``opts.chunk_orients`` orientations each.

    Every block covers all points, so a consumer that stops early has paid
    the per-orientation setup only for the blocks it saw. Each batch is
    sorted by (point index, orientation index); together the batches hold
    exactly the :func:`generate` output.
    """
    n_or = len(orients)
    step = max(1, int(opts.chunk_orients))
    query = np.arange(len(cloud), dtype=np.int64)
    for lo in range(0, n_or, step):
        block = OrientationSet(orients.rotations[lo:lo + step], orients.n_dirs, orients.n_rolls)
        cols, counts = _sweep_arrays(cloud, g, block, opts, query)
        _tally(stats, counts)
        cols[1] = cols[1] + lo
        yield _to_candidates(cloud, g, orients, opts, cols)


def generate(cloud: PointCloud, g: GripperConfig, orients: OrientationSet,
             opts: GenOptions = GenOptions(), stats: dict | None = None) -> list[CandidateGrasp]:
    """Sweep every orientation over every surface point.

    The grasp center sits ``opts.standoff`` (default ``finger_length / 2``)
    beyond the surface point along the approach axis, which puts the surface
    point flush with the palm. Output is sorted by (point index, orientation
    index).

    Raises
    ------
    NoGraspsFound
        If every pose is rejected.
    """
    if len(orients) == 0:
        raise ValueError("empty orientation set")
    cols, counts = _sweep_arrays(cloud, g, orients, opts, np.arange(len(cloud), dtype=np.int64))
    _tally(stats, counts)
    if len(cols[0]) == 0:
        raise NoGraspsFound("every (point, orientation) pose was rejected")
    return _to_candidates(cloud, g, orients, opts, cols)


# ------------------------------------------------------------------ dedup


def _lex_sign(q):
    """Flip quaternions so w >= 0 (first nonzero component positive on ties)."""
    nz = q != 0
    first = np.argmax(nz, axis=1)
    lead = q[np.arange(len(q)), first]
    return q * np.where(lead < 0, -1.0, 1.0)[:, None]


def canonical_rotations(rotations) -> tuple[np.ndarray, np.ndarray]:
    """Pick, per grasp, whichever of r and its half-roll twin has the smaller quaternion.

    Returns the chosen rotations and their ``(w, x, y, z)`` quaternions.
    """
    R = np.asarray(rotations, float).reshape(-1, 3, 3)
    q = Rotation.from_matrix(R).as_quat(scalar_first=True)
    w, x, y, z = q.T
    # rolling by pi about the local approach (x) axis: q * (0, 1, 0, 0)
    qa = _lex_sign(q)
    qb = _lex_sign(np.stack([-x, w, z, -y], axis=1))
    take_b = np.zeros(len(R), bool)
    decided = np.zeros(len(R), bool)
    for k in range(4):
        lt = ~decided & (qb[:, k] < qa[:, k])
        gt = ~decided & (qb[:, k] > qa[:, k])
        take_b |= lt
        decided |= lt | gt
    F = R.copy()
    F[:, :, 1:] = -F[:, :, 1:]
    return np.where(take_b[:, None, None], F, R), np.where(take_b[:, None], qb, qa)


def _rotvec(q):
    """Rotation vectors of ``(w, x, y, z)`` quaternions."""
    v = q[:, 1:]
    s = np.linalg.norm(v, axis=1)
    angle = 2.0 * np.arctan2(s, q[:, 0])
    scale = np.where(s > 1e-12, angle / np.where(s > 1e-12, s, 1.0), 2.0)
    return v * scale[:, None]


def canonical_cells(points, rotations, eps_p: float, eps_r: float) -> np.ndarray:
    """Integer (position voxel, rotation-vector bin) rows, one per grasp."""
    _, q = canonical_rotations(rotations)
    vox = np.floor(np.asarray(points, float).reshape(-1, 3) / eps_p)
    ang = np.floor(_rotvec(q) / eps_r)
    return np.hstack([vox, ang]).astype(np.int64)


def cell_key(row) -> int:
    """Stable 64-bit hash of one canonical cell row."""
    digest = hashlib.blake2b(np.asarray(row, "<i8").tobytes(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def dedup(candidates: list[CandidateGrasp], eps_p: float, eps_r: float) -> list[CandidateGrasp]:
    """Collapse grasps that share a canonical position/rotation cell.

    The survivor of each cell is the candidate with the lowest ``order``.
    Every returned candidate has ``canon_key`` set.
    """
    if not candidates:
        return []
    ranked = sorted(range(len(candidates)), key=lambda i: candidates[i].order)
    cand = [candidates[i] for i in ranked]
    rows = canonical_cells(np.array([c.pose.point for c in cand]),
                           np.array([c.pose.rotation for c in cand]), eps_p, eps_r)
    _, first = np.unique(rows, axis=0, return_index=True)
    out = []
    for i in np.sort(first):
        c = cand[i]
        c.canon_key = cell_key(rows[i])
        out.append(c)
    return out


class Deduplicator:
    """Incremental :func:`dedup` for batches that arrive in ``order``."""

    def __init__(self, eps_p: float, eps_r: float):
        self.eps_p, self.eps_r = eps_p, eps_r
        self.seen: set = set()

    def feed(self, batch: list[CandidateGrasp]) -> list[CandidateGrasp]:
        if not batch:
            return []
        batch = sorted(batch, key=lambda c: c.order)
        rows = canonical_cells(np.array([c.pose.point for c in batch]),
                               np.array([c.pose.rotation for c in batch]), self.eps_p, self.eps_r)
        out = []
        for c, row in zip(batch, map(tuple, rows.tolist())):
            if row not in self.seen:
                self.seen.add(row)
                c.canon_key = cell_key(row)
                out.append(c)
        return out
