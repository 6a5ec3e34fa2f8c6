"""Closed triangle-mesh primitives (boxes, cylinders, spheres).

Every builder returns ``(triangles, tags)``: an (m, 3, 3) array of outward
oriented triangles and a list of m string tags naming the part each triangle
came from, so callers can derive patch labels.
"""
from __future__ import annotations

import numpy as np

from .geometry import Mesh, mesh_from_triangles


def _orient(tri: np.ndarray, outward: np.ndarray) -> np.ndarray:
    n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
    return tri if np.dot(n, outward) > 0 else tri[[0, 2, 1]]


def _grid_quads(u, v, make_point, outward, tag_of, tris, tags):
    for i in range(len(u) - 1):
        for j in range(len(v) - 1):
            p00 = make_point(u[i], v[j])
            p10 = make_point(u[i + 1], v[j])
            p11 = make_point(u[i + 1], v[j + 1])
            p01 = make_point(u[i], v[j + 1])
            tag = tag_of(0.5 * (u[i] + u[i + 1]), 0.5 * (v[j] + v[j + 1]))
            for t in (np.array([p00, p10, p11]), np.array([p00, p11, p01])):
                tris.append(_orient(t, outward))
                tags.append(tag)


def lattice_box(xs, ys, zs, tagger=None):
    """Axis-aligned box whose faces are tessellated on the given lattice lines.

    ``tagger(face, a, b)`` receives the face name (``+x``, ``-x``, ...) and the
    in-face centre coordinates of each quad; the default tags by face name.
    """
    xs, ys, zs = (np.asarray(a, dtype=np.float64) for a in (xs, ys, zs))
    tagger = tagger or (lambda face, a, b: face)
    tris: list[np.ndarray] = []
    tags: list[str] = []
    x0, x1, y0, y1, z0, z1 = xs[0], xs[-1], ys[0], ys[-1], zs[0], zs[-1]
    specs = [
        ("+x", ys, zs, lambda a, b: (x1, a, b), (1, 0, 0)),
        ("-x", ys, zs, lambda a, b: (x0, a, b), (-1, 0, 0)),
        ("+y", xs, zs, lambda a, b: (a, y1, b), (0, 1, 0)),
        ("-y", xs, zs, lambda a, b: (a, y0, b), (0, -1, 0)),
        ("+z", xs, ys, lambda a, b: (a, b, z1), (0, 0, 1)),
        ("-z", xs, ys, lambda a, b: (a, b, z0), (0, 0, -1)),
    ]
    for face, u, v, mk, out in specs:
        _grid_quads(u, v, lambda a, b, mk=mk: np.array(mk(a, b)), np.array(out, float),
                    lambda a, b, face=face: tagger(face, a, b), tris, tags)
    return np.array(tris), tags


def y_cylinder(center, radius, half_width, segments=24, tag="cylinder"):
    """Closed cylinder with its axis along Y; one rim vertex sits at the lowest point."""
    cx, cy, cz = center
    ang = 2 * np.pi * np.arange(segments) / segments - np.pi / 2
    ring = np.stack([cx + radius * np.cos(ang), cz + radius * np.sin(ang)], axis=1)
    lo, hi = cy - half_width, cy + half_width
    tris = []
    for k in range(segments):
        a, b = ring[k], ring[(k + 1) % segments]
        out = np.array([0.5 * (a[0] + b[0]) - cx, 0.0, 0.5 * (a[1] + b[1]) - cz])
        pa_lo, pb_lo = np.array([a[0], lo, a[1]]), np.array([b[0], lo, b[1]])
        pa_hi, pb_hi = np.array([a[0], hi, a[1]]), np.array([b[0], hi, b[1]])
        tris.append(_orient(np.array([pa_lo, pb_lo, pb_hi]), out))
        tris.append(_orient(np.array([pa_lo, pb_hi, pa_hi]), out))
        tris.append(_orient(np.array([[cx, hi, cz], pa_hi, pb_hi]), np.array([0, 1.0, 0])))
        tris.append(_orient(np.array([[cx, lo, cz], pa_lo, pb_lo]), np.array([0, -1.0, 0])))
    return np.array(tris), [tag] * len(tris)


def unit_cube() -> Mesh:
    tri, _ = lattice_box([0, 1], [0, 1], [0, 1])
    return mesh_from_triangles(tri)


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> Mesh:
    t = (1 + 5 ** 0.5) / 2
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in v]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(subdivisions):
        cache: dict = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    V = np.array(verts) * radius
    F = np.array(faces, dtype=np.int64)
    tri = V[F]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    flip = np.einsum("ij,ij->i", n, tri.mean(axis=1)) < 0
    F[flip] = F[flip][:, [0, 2, 1]]
    return Mesh(V, F)
