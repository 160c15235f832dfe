"""Force-closure quality and the antipodal baseline generator.

A two-contact parallel-jaw grasp is force closure at friction ``mu`` when
the line joining the contacts lies inside both friction cones (half-angle
``atan(mu)``). Quality is read off the smallest rung of a friction ladder at
which that holds.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .errors import BenchTimeout, DegenerateContacts, GraspError
from .generator import (CandidateGrasp, Deduplicator, GenOptions, OrientationSet, _sweep_arrays,
                        _trusted_pose, iter_generate, sample_orientations)
from .geometry import PointCloud
from .gripper import (GraspPose, GripperConfig, _collision_local, _pick_contacts, _region_local,
                      check_collision, contact_points, extract_closing_region)

MU_MIN, MU_MAX = 0.05, 1.00
MU_LADDER = tuple(round(0.05 * k, 2) for k in range(1, 21))
N_BINS = 20


class QualityScore(NamedTuple):
    score: float
    fc_mu_star: float


def contact_angles(p1, n1, p2, n2) -> tuple[float, float]:
    """Angles between the contact line and each inward normal (radians)."""
    p1, n1, p2, n2 = (np.asarray(v, float) for v in (p1, n1, p2, n2))
    d = p2 - p1
    dist = math.sqrt(float(d @ d))
    if dist <= 1e-9:
        raise DegenerateContacts("contact points coincide")
    u = d / dist
    a1 = math.acos(min(1.0, max(-1.0, -float(u @ n1))))
    a2 = math.acos(min(1.0, max(-1.0, float(u @ n2))))
    return a1, a2


def _angles(contacts):
    return contact_angles(contacts.left_point, contacts.left_normal,
                          contacts.right_point, contacts.right_normal)


def force_closure_at(contacts, mu: float) -> bool:
    """Two-contact force closure: contact line inside both friction cones."""
    return max(_angles(contacts)) <= math.atan(mu)


def score(contacts) -> QualityScore:
    """Ladder quality: binary search for the smallest closing friction rung."""
    worst = max(_angles(contacts))
    lo, hi = 0, len(MU_LADDER)
    while lo < hi:
        mid = (lo + hi) // 2
        if worst <= math.atan(MU_LADDER[mid]):
            hi = mid
        else:
            lo = mid + 1
    if lo == len(MU_LADDER):
        return QualityScore(0.0, math.inf)
    mu_star = MU_LADDER[lo]
    s = (MU_MAX - mu_star) / (MU_MAX - MU_MIN)
    return QualityScore(min(1.0, max(0.0, s)), mu_star)


# ------------------------------------------------------------- baseline


def _frames_from_contacts(p1, p2, rolls):
    """Vectorized baseline frames: rotations ``(k, 3, 3)`` for contact pairs.

    ``p1`` is one point or ``(k, 3)``; ``p2`` is ``(k, 3)``; ``rolls`` is ``(k,)``.
    """
    c = p2 - p1
    c = c / np.linalg.norm(c, axis=1, keepdims=True)
    lead = c[np.arange(len(c)), np.argmax(c != 0.0, axis=1)]
    u = np.where((lead > 0)[:, None], c, -c)
    ref = np.where((np.abs(u[:, 0]) < 0.9)[:, None], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    a0 = np.cross(u, ref)
    a0 /= np.linalg.norm(a0, axis=1, keepdims=True)
    b0 = np.cross(u, a0)
    a = np.cos(rolls)[:, None] * a0 + np.sin(rolls)[:, None] * b0
    # re-orthogonalize against c to keep the frame exact to rounding
    a -= np.einsum("ij,ij->i", a, c)[:, None] * c
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    m = np.cross(a, c)
    return np.stack([a, c, m], axis=2)


def pose_from_contacts(p1, p2, roll: float) -> GraspPose:
    """Baseline grasp centered between two contacts, closing from p1 to p2.

    The approach axis depends only on the unsigned contact line and ``roll``,
    so swapping the contacts yields the same approach with the closing axis
    negated, the half-roll twin of the same grasp.
    """
    p1, p2 = np.asarray(p1, float), np.asarray(p2, float)
    R = _frames_from_contacts(p1[None], p2[None], np.array([float(roll)]))[0]
    return GraspPose((p1 + p2) / 2.0, R, "antipodal_baseline")


def iter_antipodal(cloud: PointCloud, g: GripperConfig, seed: int = 0
                   ) -> Iterator[list[CandidateGrasp]]:
    """Endless stream of per-sample baseline batches.

    Every sample scans all cloud points for antipodal partners, then builds,
    collision-checks and closes the jaws on one grasp per partner, each
    check scanning the whole cloud. Duplicates are kept.
    """
    rng = np.random.default_rng(seed)
    P, N = cloud.points, cloud.normals
    cos_mu = math.cos(math.atan(g.friction_mu))
    it = 0
    while True:
        i = int(rng.integers(len(P)))
        d = P - P[i]
        dist = np.sqrt(np.einsum("ij,ij->i", d, d))
        near = (dist <= g.max_width) & (dist > 1e-9)
        u = d[near] / dist[near, None]
        ok = (-(u @ N[i]) >= cos_mu) & (np.einsum("ij,ij->i", u, N[near]) >= cos_mu)
        partners = np.flatnonzero(near)[ok]
        rolls = rng.uniform(0.0, 2.0 * math.pi, size=len(partners))
        frames = _frames_from_contacts(P[i], P[partners], rolls)
        centers = (P[i] + P[partners]) / 2.0
        batch = []
        for j, p, R in zip(partners.tolist(), centers, frames):
            local = (P - p) @ R
            if _collision_local(local, g).any():
                continue
            pose = _trusted_pose(p, R, "antipodal_baseline")
            region = _region_local(pose, local, g)
            contacts = _pick_contacts(region, local[region.left, 1], local[region.right, 1],
                                      cloud, g)
            batch.append(CandidateGrasp(pose, contacts, (it, j), _source=(cloud, g),
                                        _region=region))
        yield batch
        it += 1


def antipodal_generate(cloud: PointCloud, g: GripperConfig, n_samples: int,
                       seed: int = 0) -> list[CandidateGrasp]:
    """O(n^2) antipodal sampler; see :func:`iter_antipodal`."""
    out = []
    if n_samples <= 0 or len(cloud) == 0:
        return out
    stream = iter_antipodal(cloud, g, seed)
    for _ in range(n_samples):
        out.extend(next(stream))
    return out


# ------------------------------------------------------------- benchmark


def histogram(scores, bins: int = N_BINS) -> np.ndarray:
    counts, _ = np.histogram(np.asarray(scores, float), bins=bins, range=(0.0, 1.0))
    return counts


def histogram_distance(h1, h2) -> float:
    """Total-variation distance of two histograms after normalizing each to 1."""
    h1, h2 = np.asarray(h1, float), np.asarray(h2, float)
    if h1.sum() == 0 or h2.sum() == 0:
        return math.nan
    return 0.5 * float(np.abs(h1 / h1.sum() - h2 / h2.sum()).sum())


@dataclass
class BenchReport:
    target_count: int
    jobs: int
    ours_count: int = 0
    baseline_count: int = 0
    ours_raw: int = 0
    baseline_raw: int = 0
    ours_seconds: float = 0.0
    baseline_seconds: float = 0.0
    ours_hist: np.ndarray = field(default_factory=lambda: np.zeros(N_BINS, int))
    baseline_hist: np.ndarray = field(default_factory=lambda: np.zeros(N_BINS, int))

    @property
    def ours_rate(self) -> float:
        return self.ours_count / self.ours_seconds if self.ours_seconds > 0 else math.nan

    @property
    def baseline_rate(self) -> float:
        return (self.baseline_count / self.baseline_seconds
                if self.baseline_seconds > 0 else math.nan)

    @property
    def speedup(self) -> float:
        if self.target_count == 0:
            return math.nan
        return self.ours_rate / self.baseline_rate

    @property
    def hist_distance(self) -> float:
        return histogram_distance(self.ours_hist, self.baseline_hist)

    def to_text(self) -> str:
        rows = [("target_count", self.target_count), ("jobs", self.jobs),
                ("ours_grasps", self.ours_count), ("baseline_grasps", self.baseline_count),
                ("ours_candidates", self.ours_raw), ("baseline_candidates", self.baseline_raw),
                ("ours_seconds", self.ours_seconds), ("baseline_seconds", self.baseline_seconds),
                ("ours_grasps_per_sec", self.ours_rate),
                ("baseline_grasps_per_sec", self.baseline_rate),
                ("speedup", self.speedup), ("hist_distance", self.hist_distance)]
        return "".join(f"{k} = {v}\n" for k, v in rows)

    def hist_csv(self) -> str:
        return histogram_csv(self.ours_hist, self.baseline_hist,
                             ("count_ours", "count_baseline"))


def histogram_csv(h1, h2, names=("count_ours", "count_baseline")) -> str:
    edges = np.linspace(0.0, 1.0, len(h1) + 1)
    lines = [f"bin_low,bin_high,{names[0]},{names[1]}"]
    for k in range(len(h1)):
        lines.append(f"{edges[k]:.2f},{edges[k + 1]:.2f},{int(h1[k])},{int(h2[k])}")
    return "\n".join(lines) + "\n"


def _collect(stream, target, dd, deadline, label):
    """Pull batches until ``target`` distinct force-closure grasps are scored."""
    scores, raw = [], 0
    for batch in stream:
        raw += len(batch)
        for c in dd.feed(batch):
            q = score(c.contacts)
            if q.score > 0:
                scores.append(q.score)
                if len(scores) >= target:
                    return scores, raw
        if deadline is not None and time.perf_counter() > deadline:
            raise BenchTimeout(f"{label} did not reach {target} grasps in time")
    return scores, raw


def _warm_up(cloud, g, orients, opts):
    """Exercise both code paths once so compile and import costs stay untimed."""
    one = OrientationSet(orients.rotations[:1], orients.n_dirs, orients.n_rolls)
    _sweep_arrays(cloud, g, one, opts, np.zeros(1, np.int64))
    P = cloud.points
    pose = pose_from_contacts(P[0], P[0] + np.array([g.max_width / 2, 0.0, 0.0]), 0.0)
    check_collision(pose, cloud, g)
    try:
        region = extract_closing_region(pose, cloud, g)
        contact_points(pose, region, cloud, g)
    except GraspError:
        pass


def bench_compare(cloud: PointCloud, g: GripperConfig, target_count: int,
                  orients: OrientationSet | None = None, opts: GenOptions = GenOptions(),
                  timeout_sec: float | None = 600.0, seed: int = 0) -> BenchReport:
    """Time both generators until each yields ``target_count`` scored grasps.

    A grasp counts once it survives dedup (same ``eps_p``/``eps_r`` for both
    generators) and has nonzero force-closure quality. Both run on one
    thread unless ``opts.jobs`` says otherwise for the sampler. Both code
    paths are run once untimed first, so JIT compilation is not counted.
    """
    report = BenchReport(target_count, int(opts.jobs))
    if target_count <= 0:
        return report
    orients = orients or sample_orientations(opts.n_dirs, opts.n_rolls)
    eps_p = opts.resolved_eps_p(g)
    _warm_up(cloud, g, orients, opts)

    def deadline():
        return None if timeout_sec is None else time.perf_counter() + timeout_sec

    t0 = time.perf_counter()
    ours, report.ours_raw = _collect(iter_generate(cloud, g, orients, opts), target_count,
                                     Deduplicator(eps_p, opts.eps_r), deadline(), "sampler")
    report.ours_seconds = time.perf_counter() - t0
    if len(ours) < target_count:
        raise BenchTimeout(f"sampler exhausted the cloud with {len(ours)} grasps")
    t0 = time.perf_counter()
    base, report.baseline_raw = _collect(iter_antipodal(cloud, g, seed), target_count,
                                         Deduplicator(eps_p, opts.eps_r), deadline(), "baseline")
    report.baseline_seconds = time.perf_counter() - t0
    report.ours_count, report.baseline_count = len(ours), len(base)
    report.ours_hist, report.baseline_hist = histogram(ours), histogram(base)
    return report
