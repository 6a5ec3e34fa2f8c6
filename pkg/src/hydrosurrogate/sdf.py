"""Signed distance to a closed triangle mesh, on demand and on a regular grid.

Distances are exact point-triangle distances found through a bounding volume
hierarchy.  The sign comes from ray-parity along the three coordinate axes
(majority vote); a ray that grazes an edge, a vertex or lies in a face plane
is replaced by a fixed oblique ray.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np

from .geometry import Mesh, MeshError, validate_mesh

GRID_DIVISIONS = 64
DEFAULT_MARGIN = 0.5
_LEAF_SIZE = 4
_FALLBACK_DIRS = np.array([
    [0.5773502691896258, 0.6172133998483676, 0.5345224838248488],
    [-0.4364357804719847, 0.8164965809277261, 0.3779644730092272],
    [0.2672612419124244, -0.5345224838248488, 0.8017837257372732],
])


class OutOfDomainError(ValueError):
    pass


# ------------------------------------------------------------------- BVH

@dataclass(frozen=True)
class BVH:
    lo: np.ndarray
    hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    tris: np.ndarray  # triangles reordered so each leaf is a contiguous run


def build_bvh(triangles: np.ndarray, leaf_size: int = _LEAF_SIZE) -> BVH:
    tri = np.asarray(triangles, dtype=np.float64)
    cent = tri.mean(axis=1)
    tmin, tmax = tri.min(axis=1), tri.max(axis=1)
    order = np.arange(len(tri))
    lo, hi, left, right, start, count = [], [], [], [], [], []

    def new_node(idx):
        lo.append(tmin[idx].min(axis=0))
        hi.append(tmax[idx].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        return len(lo) - 1

    stack = [(new_node(order), 0, len(order))]
    while stack:
        node, s, e = stack.pop()
        idx = order[s:e]
        if e - s <= leaf_size:
            start[node], count[node] = s, e - s
            continue
        c = cent[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        idx = idx[np.argsort(c[:, axis], kind="stable")]
        order[s:e] = idx
        mid = s + (e - s) // 2
        ln = new_node(order[s:mid])
        rn = new_node(order[mid:e])
        left[node], right[node] = ln, rn
        stack.append((rn, mid, e))
        stack.append((ln, s, mid))
    return BVH(np.array(lo), np.array(hi), np.array(left, dtype=np.int64),
               np.array(right, dtype=np.int64), np.array(start, dtype=np.int64),
               np.array(count, dtype=np.int64), np.ascontiguousarray(tri[order]))


@nb.njit(cache=True)
def _closest_sq(px, py, pz, t):
    # closest point on triangle by Voronoi-region classification
    ax, ay, az = t[0, 0], t[0, 1], t[0, 2]
    abx, aby, abz = t[1, 0] - ax, t[1, 1] - ay, t[1, 2] - az
    acx, acy, acz = t[2, 0] - ax, t[2, 1] - ay, t[2, 2] - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        qx, qy, qz = ax, ay, az
    else:
        bpx, bpy, bpz = px - t[1, 0], py - t[1, 1], pz - t[1, 2]
        d3 = abx * bpx + aby * bpy + abz * bpz
        d4 = acx * bpx + acy * bpy + acz * bpz
        cpx, cpy, cpz = px - t[2, 0], py - t[2, 1], pz - t[2, 2]
        d5 = abx * cpx + aby * cpy + abz * cpz
        d6 = acx * cpx + acy * cpy + acz * cpz
        vc = d1 * d4 - d3 * d2
        vb = d5 * d2 - d1 * d6
        va = d3 * d6 - d5 * d4
        if d3 >= 0.0 and d4 <= d3:
            qx, qy, qz = t[1, 0], t[1, 1], t[1, 2]
        elif vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
            v = d1 / (d1 - d3)
            qx, qy, qz = ax + v * abx, ay + v * aby, az + v * abz
        elif d6 >= 0.0 and d5 <= d6:
            qx, qy, qz = t[2, 0], t[2, 1], t[2, 2]
        elif vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
            w = d2 / (d2 - d6)
            qx, qy, qz = ax + w * acx, ay + w * acy, az + w * acz
        elif va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
            w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
            qx = t[1, 0] + w * (t[2, 0] - t[1, 0])
            qy = t[1, 1] + w * (t[2, 1] - t[1, 1])
            qz = t[1, 2] + w * (t[2, 2] - t[1, 2])
        else:
            den = 1.0 / (va + vb + vc)
            v = vb * den
            w = vc * den
            qx = ax + abx * v + acx * w
            qy = ay + aby * v + acy * w
            qz = az + abz * v + acz * w
    dx, dy, dz = px - qx, py - qy, pz - qz
    return dx * dx + dy * dy + dz * dz


@nb.njit(cache=True)
def _unsigned_sq(px, py, pz, lo, hi, left, right, start, count, tris):
    best = np.inf
    stack = np.empty(128, dtype=np.int64)
    sp = 0
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        n = stack[sp]
        dd = 0.0
        for ax in range(3):
            p = px if ax == 0 else (py if ax == 1 else pz)
            if p < lo[n, ax]:
                dd += (lo[n, ax] - p) ** 2
            elif p > hi[n, ax]:
                dd += (p - hi[n, ax]) ** 2
        if dd >= best:
            continue
        if left[n] < 0:
            for i in range(start[n], start[n] + count[n]):
                d = _closest_sq(px, py, pz, tris[i])
                if d < best:
                    best = d
        else:
            stack[sp] = left[n]
            stack[sp + 1] = right[n]
            sp += 2
    return best


@nb.njit(cache=True)
def _ray_parity(ox, oy, oz, dx, dy, dz, lo, hi, left, right, start, count, tris):
    """Number of crossings along the ray, or -1 if any hit is degenerate."""
    eps = 1e-10
    hits = 0
    stack = np.empty(128, dtype=np.int64)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        n = stack[sp]
        tnear = -np.inf
        tfar = np.inf
        ok = True
        for ax in range(3):
            o = ox if ax == 0 else (oy if ax == 1 else oz)
            d = dx if ax == 0 else (dy if ax == 1 else dz)
            if abs(d) < 1e-300:
                if o < lo[n, ax] - eps or o > hi[n, ax] + eps:
                    ok = False
                    break
            else:
                t1 = (lo[n, ax] - eps - o) / d
                t2 = (hi[n, ax] + eps - o) / d
                if t1 > t2:
                    t1, t2 = t2, t1
                tnear = max(tnear, t1)
                tfar = min(tfar, t2)
                if tnear > tfar:
                    ok = False
                    break
        if not ok or tfar < -eps:
            continue
        if left[n] >= 0:
            stack[sp] = left[n]
            stack[sp + 1] = right[n]
            sp += 2
            continue
        for i in range(start[n], start[n] + count[n]):
            t = tris[i]
            e1x, e1y, e1z = t[1, 0] - t[0, 0], t[1, 1] - t[0, 1], t[1, 2] - t[0, 2]
            e2x, e2y, e2z = t[2, 0] - t[0, 0], t[2, 1] - t[0, 1], t[2, 2] - t[0, 2]
            px_ = dy * e2z - dz * e2y
            py_ = dz * e2x - dx * e2z
            pz_ = dx * e2y - dy * e2x
            det = e1x * px_ + e1y * py_ + e1z * pz_
            sx, sy, sz = ox - t[0, 0], oy - t[0, 1], oz - t[0, 2]
            nx = e1y * e2z - e1z * e2y
            ny = e1z * e2x - e1x * e2z
            nz = e1x * e2y - e1y * e2x
            nn = np.sqrt(nx * nx + ny * ny + nz * nz)
            if abs(det) <= 1e-12 * nn:
                # ray parallel to the face plane; coplanar rays are ambiguous
                if abs(sx * nx + sy * ny + sz * nz) <= 1e-12 * nn:
                    return -1
                continue
            inv = 1.0 / det
            u = (sx * px_ + sy * py_ + sz * pz_) * inv
            if u < -eps or u > 1.0 + eps:
                continue
            qx = sy * e1z - sz * e1y
            qy = sz * e1x - sx * e1z
            qz = sx * e1y - sy * e1x
            v = (dx * qx + dy * qy + dz * qz) * inv
            if v < -eps or u + v > 1.0 + eps:
                continue
            tt = (e2x * qx + e2y * qy + e2z * qz) * inv
            if tt < -eps:
                continue
            if tt <= eps or u <= eps or v <= eps or u + v >= 1.0 - eps:
                return -1
            hits += 1
    return hits


@nb.njit(cache=True)
def _inside(px, py, pz, lo, hi, left, right, start, count, tris, fallback):
    votes = 0
    for ax in range(3):
        dx = 1.0 if ax == 0 else 0.0
        dy = 1.0 if ax == 1 else 0.0
        dz = 1.0 if ax == 2 else 0.0
        h = _ray_parity(px, py, pz, dx, dy, dz, lo, hi, left, right, start, count, tris)
        k = 0
        while h < 0 and k < fallback.shape[0]:
            h = _ray_parity(px, py, pz, fallback[k, 0], fallback[k, 1], fallback[k, 2],
                            lo, hi, left, right, start, count, tris)
            k += 1
        if h > 0 and h % 2 == 1:
            votes += 1
    return votes >= 2


@nb.njit(cache=True)
def _signed_many(points, lo, hi, left, right, start, count, tris, fallback):
    out = np.empty(points.shape[0])
    for i in range(points.shape[0]):
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        d = np.sqrt(_unsigned_sq(px, py, pz, lo, hi, left, right, start, count, tris))
        if d > 0.0 and _inside(px, py, pz, lo, hi, left, right, start, count, tris, fallback):
            d = -d
        out[i] = d
    return out


@nb.njit(cache=True)
def _unsigned_many(points, lo, hi, left, right, start, count, tris):
    out = np.empty(points.shape[0])
    for i in range(points.shape[0]):
        out[i] = np.sqrt(_unsigned_sq(points[i, 0], points[i, 1], points[i, 2],
                                      lo, hi, left, right, start, count, tris))
    return out


class DistanceQuery:
    """Reusable BVH-backed distance queries against one mesh."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.bvh = build_bvh(mesh.triangles)

    def _args(self):
        b = self.bvh
        return b.lo, b.hi, b.left, b.right, b.start, b.count, b.tris

    def unsigned(self, points) -> np.ndarray:
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        return _unsigned_many(pts, *self._args())

    def signed(self, points) -> np.ndarray:
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        return _signed_many(pts, *self._args(), _FALLBACK_DIRS)


_QUERIES: dict[str, DistanceQuery] = {}


def _query_for(mesh: Mesh) -> DistanceQuery:
    key = mesh.content_hash()
    q = _QUERIES.get(key)
    if q is None:
        if len(_QUERIES) > 16:
            _QUERIES.clear()
        q = _QUERIES[key] = DistanceQuery(mesh)
    return q


def signed_distance(mesh: Mesh, point) -> float | np.ndarray:
    """Signed distance (negative inside) for one point or an (n, 3) array."""
    p = np.asarray(point, dtype=np.float64)
    out = _query_for(mesh).signed(p)
    return float(out[0]) if p.ndim == 1 else out


# ------------------------------------------------------------------ grid

@dataclass(frozen=True)
class SdfGrid:
    """Signed distances at the nodes ``bounds_min + (i, j, k) * spacing``.

    ``values`` is flat in C order over ``dims``: x index slowest, z fastest.
    """
    bounds_min: np.ndarray
    bounds_max: np.ndarray
    spacing: float
    dims: tuple[int, int, int]
    values: np.ndarray
    mesh_hash: str
    margin: float = DEFAULT_MARGIN

    @property
    def volume(self) -> np.ndarray:
        return self.values.reshape(self.dims)

    @property
    def near_hull_mask(self) -> np.ndarray:
        return np.abs(self.volume) < 2 * self.spacing

    def node_points(self, flat_index=None) -> np.ndarray:
        if flat_index is None:
            flat_index = np.arange(int(np.prod(self.dims)))
        ijk = np.stack(np.unravel_index(np.asarray(flat_index), self.dims), axis=-1)
        return self.bounds_min + ijk * self.spacing

    def sample(self, points) -> np.ndarray:
        """Trilinear interpolation; points are clamped to the node lattice."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        dims = np.array(self.dims)
        g = (p - self.bounds_min) / self.spacing
        i0 = np.clip(np.floor(g).astype(np.int64), 0, dims - 2)
        f = np.clip(g - i0, 0.0, 1.0)
        vol = self.volume
        out = np.zeros(len(p))
        for cx in (0, 1):
            wx = f[:, 0] if cx else 1 - f[:, 0]
            for cy in (0, 1):
                wy = f[:, 1] if cy else 1 - f[:, 1]
                for cz in (0, 1):
                    wz = f[:, 2] if cz else 1 - f[:, 2]
                    out += wx * wy * wz * vol[i0[:, 0] + cx, i0[:, 1] + cy, i0[:, 2] + cz]
        return out

    def gradient(self, point) -> np.ndarray:
        p = np.asarray(point, dtype=np.float64)
        h = self.spacing
        lo = self.bounds_min + h
        hi = self.bounds_min + (np.array(self.dims) - 2) * h
        if np.any(p < lo) or np.any(p > hi):
            raise OutOfDomainError(f"point {p.tolist()} outside the grid interior")
        offs = np.eye(3) * h
        vals = self.sample(np.concatenate([p + offs, p - offs]))
        return (vals[:3] - vals[3:]) / (2 * h)

    # byte layout (little endian):
    #   0  4s  magic b"SDFG"      4  H  version (1)     6  2s endianness tag b"LE"
    #   8  3I  dims               20 3d bounds_min     44 3d bounds_max
    #   68 d   spacing            76 d  margin         84 32s sha256 of source mesh
    #   116    float64 values, C order over dims
    _HEADER = struct.Struct("<4sH2s3I3d3ddd32s")

    def to_bytes(self) -> bytes:
        head = self._HEADER.pack(b"SDFG", 1, b"LE", *self.dims, *self.bounds_min,
                                 *self.bounds_max, self.spacing, self.margin,
                                 bytes.fromhex(self.mesh_hash))
        return head + np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "SdfGrid":
        h = cls._HEADER
        if len(data) < h.size:
            raise ValueError("truncated SDF grid file")
        f = h.unpack_from(data, 0)
        if f[0] != b"SDFG" or f[1] != 1 or f[2] != b"LE":
            raise ValueError("not a version-1 little-endian SDF grid file")
        dims = tuple(int(x) for x in f[3:6])
        n = int(np.prod(dims))
        if len(data) != h.size + 8 * n:
            raise ValueError("SDF grid file size does not match its header")
        values = np.frombuffer(data, dtype="<f8", count=n, offset=h.size).astype(np.float64)
        return cls(np.array(f[6:9]), np.array(f[9:12]), f[12], dims, values,
                   f[14].hex(), f[13])

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "SdfGrid":
        return cls.from_bytes(Path(path).read_bytes())


def grid_layout(mesh: Mesh, margin: float = DEFAULT_MARGIN):
    """Expanded bounds, spacing and node counts for ``mesh``."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    lo, hi = mesh.bounds
    bmin, bmax = lo - margin, hi + margin
    ext = bmax - bmin
    spacing = float(ext.max() / GRID_DIVISIONS)
    dims = tuple(int(np.floor(e / spacing + 1e-9)) + 1 for e in ext)
    return bmin, bmax, spacing, dims


def build_grid(mesh: Mesh, margin: float = DEFAULT_MARGIN) -> SdfGrid:
    try:
        validate_mesh(mesh)
    except MeshError as exc:
        raise MeshError(f"cannot sign distances: {exc}") from exc
    bmin, bmax, spacing, dims = grid_layout(mesh, margin)
    proto = SdfGrid(bmin, bmax, spacing, dims, np.empty(0), mesh.content_hash(), margin)
    values = _query_for(mesh).signed(proto.node_points())
    return SdfGrid(bmin, bmax, spacing, dims, values, proto.mesh_hash, margin)


def sdf_gradient(grid: SdfGrid, point) -> np.ndarray:
    return grid.gradient(point)

