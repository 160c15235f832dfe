"""Object models: mesh loading, surface sampling and normal orientation.

All lengths are meters. Meshes come from Wavefront OBJ (``v``/``f`` records)
or ASCII PLY files; point clouds are drawn area-weighted from the mesh
surface and carry one unit normal per point.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, cKDTree

from .errors import EmptyMesh, ParseError

logger = logging.getLogger(__name__)

DEFAULT_DENSITY = 500.0  # kg/m^3
MERGE_TOL = 1e-9
MIN_TRIANGLE_AREA = 1e-12
# Shell thickness used for mass when the mesh encloses no volume.
SHELL_THICKNESS = 1e-3


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = _frozen(self.vertices).reshape(-1, 3)
        t = _frozen(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise ParseError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @cached_property
    def _cross(self):
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return np.cross(b - a, c - a)

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._cross, axis=1)

    @cached_property
    def face_normals(self) -> np.ndarray:
        n = self._cross / (2.0 * self.areas[:, None])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    @property
    def bounds(self) -> np.ndarray:
        return np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    @property
    def diagonal(self) -> float:
        lo, hi = self.bounds
        return float(np.linalg.norm(hi - lo))

    def mass_properties(self, density: float = DEFAULT_DENSITY):
        """Return ``(mass_kg, com)`` assuming uniform density.

        Closed meshes use the signed-tetrahedron volume integral. Open or flat
        meshes fall back to a thin shell of ``SHELL_THICKNESS``.
        """
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        vol_i = np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0
        vol = vol_i.sum()
        scale = max(self.diagonal, 1e-12) ** 3
        if abs(vol) > 1e-9 * scale:
            com = (vol_i[:, None] * (a + b + c)).sum(axis=0) / (4.0 * vol)
            return float(density * abs(vol)), com
        w = self.areas
        com = (w[:, None] * (a + b + c) / 3.0).sum(axis=0) / w.sum()
        return float(density * w.sum() * SHELL_THICKNESS), com


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Surface samples with outward normals plus the object's inertial data.

    ``face_index`` is the source triangle per point when the cloud was
    sampled from a mesh, else ``None``.
    """

    points: np.ndarray
    normals: np.ndarray
    mass_kg: float
    com: np.ndarray
    face_index: np.ndarray | None = field(default=None)

    def __post_init__(self):
        p = _frozen(self.points).reshape(-1, 3)
        n = _frozen(self.normals).reshape(-1, 3)
        if len(p) != len(n):
            raise ValueError("points and normals differ in length")
        if not self.mass_kg > 0:
            raise ValueError("mass_kg must be positive")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "normals", n)
        object.__setattr__(self, "com", _frozen(self.com).reshape(3))
        if self.face_index is not None:
            object.__setattr__(self, "face_index", _frozen(self.face_index, np.int64))

    def __len__(self):
        return len(self.points)

    @cached_property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0) if len(self) else np.zeros(3)

    @cached_property
    def kdtree(self) -> cKDTree:
        return cKDTree(self.points)

    def with_normals(self, normals) -> "PointCloud":
        return PointCloud(self.points, normals, self.mass_kg, self.com, self.face_index)

    def transformed(self, rotation, translation) -> "PointCloud":
        """Rigidly move the cloud: ``x -> rotation @ x + translation``."""
        R = np.asarray(rotation, float)
        t = np.asarray(translation, float)
        return PointCloud(self.points @ R.T + t, self.normals @ R.T, self.mass_kg,
                          R @ self.com + t, self.face_index)


@dataclass(frozen=True, eq=False)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _frozen(self.rotation).reshape(3, 3)
        if abs(np.linalg.det(R) - 1.0) > 1e-9 or np.abs(R.T @ R - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", _frozen(self.translation).reshape(3))

    def apply(self, pts):
        return np.asarray(pts) @ self.rotation.T + self.translation

    def inverse_apply(self, pts):
        return (np.asarray(pts) - self.translation) @ self.rotation


# --------------------------------------------------------------------- loading


def _clean(vertices, triangles) -> TriangleMesh:
    v = np.asarray(vertices, float).reshape(-1, 3)
    t = np.asarray(triangles, np.int64).reshape(-1, 3)
    if len(t) and (t.min() < 0 or t.max() >= len(v)):
        raise ParseError("face references a missing vertex")
    # merge vertices that coincide within MERGE_TOL
    keys = np.round(v / MERGE_TOL).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    v = v[first[order]]
    t = remap[inverse.reshape(-1)][t] if len(t) else t
    if len(t):
        distinct = (t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 0] != t[:, 2])
        t = t[distinct]
    if len(t):
        a, b, c = (v[t[:, i]] for i in range(3))
        area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
        t = t[area > MIN_TRIANGLE_AREA]
    if len(t) == 0:
        raise EmptyMesh("no triangles left after cleaning")
    used = np.unique(t)
    compact = np.full(len(v), -1, np.int64)
    compact[used] = np.arange(len(used))
    mesh = TriangleMesh(v[used], compact[t])
    if mesh.diagonal <= 0:
        raise EmptyMesh("mesh has zero extent")
    return mesh


def _parse_obj(text: str):
    verts, faces = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
                if len(verts[-1]) != 3:
                    raise ValueError
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                if len(idx) < 3:
                    raise ValueError
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                # fan triangulation for polygons
                faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
        except ValueError:
            raise ParseError(f"line {lineno}: malformed {parts[0]!r} record") from None
    return np.array(verts, float).reshape(-1, 3), np.array(faces, np.int64).reshape(-1, 3)


def _parse_ply(text: str):
    """Return ``(vertex_table, vertex_property_names, faces)`` of an ASCII PLY."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic")
    elements, current, i = [], None, 1
    fmt = None
    while True:
        if i >= len(lines):
            raise ParseError("unterminated PLY header")
        parts = lines[i].split()
        i += 1
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            current = {"name": parts[1], "count": int(parts[2]), "props": []}
            elements.append(current)
        elif parts[0] == "property":
            if current is None:
                raise ParseError("property before element")
            current["props"].append(parts[-1] if parts[1] != "list" else ("list", parts[-1]))
        elif parts[0] == "end_header":
            break
    if fmt != "ascii":
        raise ParseError(f"only ASCII PLY is supported, got {fmt!r}")
    body = [ln.split() for ln in lines[i:] if ln.strip()]
    pos = 0
    vtab, vprops, faces = np.zeros((0, 3)), ["x", "y", "z"], []
    try:
        for el in elements:
            rows = body[pos:pos + el["count"]]
            if len(rows) != el["count"]:
                raise ParseError(f"element {el['name']!r} truncated")
            pos += el["count"]
            if el["name"] == "vertex":
                vprops = el["props"]
                vtab = np.array([[float(x) for x in r[:len(vprops)]] for r in rows], float)
                vtab = vtab.reshape(-1, len(vprops))
            elif el["name"] == "face":
                for r in rows:
                    k = int(r[0])
                    idx = [int(x) for x in r[1:1 + k]]
                    if k < 3 or len(idx) != k:
                        raise ParseError("malformed face record")
                    faces.extend([idx[0], idx[j], idx[j + 1]] for j in range(1, k - 1))
    except ValueError as exc:
        raise ParseError(f"malformed PLY body: {exc}") from None
    for name in ("x", "y", "z"):
        if name not in vprops:
            raise ParseError(f"PLY vertex lacks {name!r}")
    return vtab, vprops, np.array(faces, np.int64).reshape(-1, 3)


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except UnicodeDecodeError:
        raise ParseError(f"{path}: not a text file") from None


def _infer_format(path, fmt):
    if fmt is None:
        fmt = Path(path).suffix.lower().lstrip(".")
    fmt = {"ply-ascii": "ply"}.get(fmt, fmt)
    if fmt not in ("obj", "ply"):
        raise ParseError(f"unsupported mesh format {fmt!r}")
    return fmt


def load_mesh(path, format: str | None = None) -> TriangleMesh:
    """Load and clean an OBJ or ASCII PLY mesh.

    Duplicate vertices within 1e-9 m are merged and zero-area triangles
    dropped. ``format`` is ``"obj"`` or ``"ply-ascii"``; inferred from the
    file suffix when omitted.
    """
    fmt = _infer_format(path, format)
    text = _read_text(path)
    if fmt == "obj":
        v, f = _parse_obj(text)
    else:
        vtab, props, f = _parse_ply(text)
        v = vtab[:, [props.index(k) for k in ("x", "y", "z")]] if len(vtab) else vtab
    return _clean(v, f)


def load_cloud(path, density: float = DEFAULT_DENSITY) -> PointCloud:
    """Load an ASCII PLY point cloud (``x y z [nx ny nz]``).

    Missing normals are estimated and oriented outward. Mass and center of mass come from the
    convex hull at ``density``.
    """
    vtab, props, _ = _parse_ply(_read_text(path))
    if len(vtab) < 4:
        raise EmptyMesh("point cloud needs at least 4 points")
    pts = vtab[:, [props.index(k) for k in ("x", "y", "z")]]
    hull = ConvexHull(pts)
    # tetrahedra fanned from an interior point; hull winding is not consistent
    inner = pts[hull.vertices].mean(axis=0)
    tri = pts[hull.simplices]
    vol = np.abs(np.einsum("ij,ij->i", tri[:, 0] - inner,
                           np.cross(tri[:, 1] - inner, tri[:, 2] - inner))) / 6.0
    com = (vol[:, None] * (tri.sum(axis=1) + inner)).sum(axis=0) / (4.0 * vol.sum())
    mass = density * float(hull.volume)
    if all(k in props for k in ("nx", "ny", "nz")):
        nrm = vtab[:, [props.index(k) for k in ("nx", "ny", "nz")]]
        nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
    else:
        return reorient_normals(PointCloud(pts, estimate_normals(pts), mass, com))
    return PointCloud(pts, nrm, mass, com)


def write_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write("v {!r} {!r} {!r}\n".format(*map(float, v)))
        for t in mesh.triangles:
            fh.write("f {} {} {}\n".format(*(int(i) + 1 for i in t)))


def write_ply(mesh_or_cloud, path) -> None:
    """Write a mesh (vertices + faces) or cloud (points + normals) as ASCII PLY."""
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        if isinstance(mesh_or_cloud, TriangleMesh):
            m = mesh_or_cloud
            fh.write(f"element vertex {len(m.vertices)}\n")
            fh.write("property float x\nproperty float y\nproperty float z\n")
            fh.write(f"element face {len(m.triangles)}\n")
            fh.write("property list uchar int vertex_indices\nend_header\n")
            for v in m.vertices:
                fh.write("{!r} {!r} {!r}\n".format(*map(float, v)))
            for t in m.triangles:
                fh.write("3 {} {} {}\n".format(*map(int, t)))
        else:
            c = mesh_or_cloud
            fh.write(f"element vertex {len(c)}\n")
            for k in ("x", "y", "z", "nx", "ny", "nz"):
                fh.write(f"property float {k}\n")
            fh.write("end_header\n")
            for p, n in zip(c.points, c.normals):
                fh.write(" ".join(repr(float(x)) for x in (*p, *n)) + "\n")


# -------------------------------------------------------------------- sampling


def sample_surface(mesh: TriangleMesh, n: int, seed: int = 0,
                   density: float = DEFAULT_DENSITY) -> PointCloud:
    """Draw ``n`` points area-weighted over the mesh triangles.

    Each point inherits its triangle's normal. Deterministic in ``seed``.
    """
    if n < 100:
        raise ValueError("n must be at least 100")
    if len(mesh.triangles) == 0:
        raise EmptyMesh("mesh has no triangles")
    rng = np.random.default_rng(seed)
    cum = np.cumsum(mesh.areas)
    face = np.searchsorted(cum, rng.random(n) * cum[-1], side="right")
    face = np.minimum(face, len(cum) - 1)
    uv = rng.random((n, 2))
    flip = uv.sum(axis=1) > 1.0
    uv[flip] = 1.0 - uv[flip]
    tri = mesh.vertices[mesh.triangles[face]]
    pts = tri[:, 0] + uv[:, :1] * (tri[:, 1] - tri[:, 0]) + uv[:, 1:] * (tri[:, 2] - tri[:, 0])
    mass, com = mesh.mass_properties(density)
    return PointCloud(pts, mesh.face_normals[face], mass, com, face)


def estimate_normals(points, k: int = 10) -> np.ndarray:
    """Unoriented PCA normals from the ``k`` nearest neighbors."""
    pts = np.asarray(points, float)
    k = min(k, len(pts))
    _, idx = cKDTree(pts).query(pts, k=k)
    nb = pts[idx] - pts[idx].mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", nb, nb)
    _, vecs = np.linalg.eigh(cov)
    return vecs[:, :, 0]


def _canonical_sign(n):
    """+1 where the first nonzero component of ``n`` is positive, else -1."""
    nz = n != 0
    first = np.argmax(nz, axis=1)
    val = n[np.arange(len(n)), first]
    return np.where(val < 0, -1.0, 1.0)


def _ray_side(cloud: PointCloud, n: np.ndarray, radius_factor: float = 2.0) -> np.ndarray:
    """Which way along each normal line leaves the object without crossing it.

    Marches from every point in both directions along its normal line and
    records whether the march passes within ``radius_factor`` times the median
    neighbor spacing of another point. Returns +1 when only the ``-n`` ray
    hits the surface, -1 when only the ``+n`` ray does, 0 when undecided.
    """
    pts, tree = cloud.points, cloud.kdtree
    d, _ = tree.query(pts, k=2)
    r = radius_factor * float(np.median(d[:, 1]))
    span = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    if not r > 0:
        return np.zeros(len(pts))
    steps = np.arange(2 * r, span + r, r)
    hit = np.zeros((2, len(pts)), bool)
    for k, s in enumerate((1.0, -1.0)):
        for t in steps:
            dist, _ = tree.query(pts + (s * t) * n, distance_upper_bound=r)
            hit[k] |= np.isfinite(dist)
    return np.where(~hit[0] & hit[1], 1.0, np.where(hit[0] & ~hit[1], -1.0, 0.0))


def reorient_normals(cloud: PointCloud, k: int = 10, passes: int = 2) -> PointCloud:
    """Orient normals outward.

    Three steps: point each normal away from the center of mass, overrule
    that where a ray test along the normal line is decisive (this fixes the
    inner faces of concave parts, which face the center of mass), then
    smooth by a neighbor vote over the ``k`` nearest points. Every step
    depends only on the normal lines, not on their incoming signs, so the
    operation is idempotent.
    """
    n = np.asarray(cloud.normals, float)
    n = n / np.linalg.norm(n, axis=1, keepdims=True)
    side = np.einsum("ij,ij->i", n, cloud.points - cloud.com)
    sign = np.where(side > 0, 1.0, np.where(side < 0, -1.0, _canonical_sign(n)))
    n = n * sign[:, None]
    if len(n) > 1:
        vis = _ray_side(cloud, n)
        n = np.where((vis < 0)[:, None], -n, n)
    if len(n) > 1 and passes > 0:
        kk = min(k + 1, len(n))
        _, idx = cloud.kdtree.query(cloud.points, k=kk)
        idx = idx[:, 1:]
        for _ in range(passes):
            agree = np.einsum("ij,ikj->i", n, n[idx])
            n = np.where((agree < 0)[:, None], -n, n)
    return cloud.with_normals(n)
