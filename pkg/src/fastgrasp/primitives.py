"""Closed synthetic meshes used for tests, benchmarks and demos."""
from __future__ import annotations

import numpy as np

from .geometry import TriangleMesh


def icosphere(radius: float = 1.0, subdivisions: int = 3, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Icosahedron refined ``subdivisions`` times (20 * 4**s faces)."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    v = np.array(verts) * radius + np.asarray(center, float)
    return TriangleMesh(v, np.array(faces))


def box(extents=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Axis-aligned box with outward winding, 8 vertices and 12 triangles."""
    e = np.asarray(extents, float) / 2.0
    v = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], float)
    v = v * e + np.asarray(center, float)
    f = [(0, 1, 3), (0, 3, 2), (4, 6, 7), (4, 7, 5),
         (0, 4, 5), (0, 5, 1), (2, 3, 7), (2, 7, 6),
         (0, 2, 6), (0, 6, 4), (1, 5, 7), (1, 7, 3)]
    return TriangleMesh(v, np.array(f))


def cylinder(radius: float = 0.5, height: float = 1.0, segments: int = 64) -> TriangleMesh:
    """Capped cylinder along z, centered at the origin."""
    return extrude(radius * np.stack([np.cos(a := np.linspace(0, 2 * np.pi, segments, endpoint=False)),
                                      np.sin(a)], axis=1), height)


def extrude(polygon, height: float) -> TriangleMesh:
    """Extrude a simple counter-clockwise polygon along z, centered on z=0.

    Caps are triangulated by ear clipping so concave outlines work.
    """
    poly = np.asarray(polygon, float)
    k = len(poly)
    z0, z1 = -height / 2.0, height / 2.0
    v = np.vstack([np.c_[poly, np.full(k, z0)], np.c_[poly, np.full(k, z1)]])
    faces = []
    for i in range(k):
        j = (i + 1) % k
        faces += [(i, j, k + j), (i, k + j, k + i)]
    for a, b, c in _ear_clip(poly):
        faces += [(a, c, b), (k + a, k + b, k + c)]
    return TriangleMesh(v, np.array(faces))


def l_bracket(arm: float = 0.06, thickness: float = 0.02, depth: float = 0.04) -> TriangleMesh:
    """L-shaped extrusion: two arms of length ``arm`` meeting at a right angle."""
    a, t = arm, thickness
    outline = [(0, 0), (a, 0), (a, t), (t, t), (t, a), (0, a)]
    return extrude(outline, depth)


def _ear_clip(poly):
    idx = list(range(len(poly)))
    tris = []

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    while len(idx) > 3:
        for n in range(len(idx)):
            i, j, l = idx[n - 1], idx[n], idx[(n + 1) % len(idx)]
            if cross(poly[i], poly[j], poly[l]) <= 0:
                continue
            inside = False
            for m in idx:
                if m in (i, j, l):
                    continue
                p = poly[m]
                if (cross(poly[i], poly[j], p) >= 0 and cross(poly[j], poly[l], p) >= 0
                        and cross(poly[l], poly[i], p) >= 0):
                    inside = True
                    break
            if not inside:
                tris.append((i, j, l))
                idx.pop(n)
                break
        else:
            raise ValueError("polygon is not simple or not counter-clockwise")
    tris.append(tuple(idx))
    return tris
