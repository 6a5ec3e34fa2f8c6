"""Hull meshes, surface patches and per-patch depth samples.

The body frame used everywhere in this package is X forward, Y left, Z up.
"""
from __future__ import annotations

import hashlib
import json
import re
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SEMANTIC_TYPES = ("bottom", "front", "rear", "side", "wheel")
NORMAL_FALLBACK = np.array([1.0, 0.0, 0.0])
NORMAL_FALLBACK_TOL = 1e-6
DEFAULT_SAMPLE_COUNT = 2048
MIN_SAMPLE_COUNT = 100
_AREA_TOL = 1e-14


class MeshError(ValueError):
    """Raised for meshes that violate the watertight / non-degenerate contract."""


class LabelError(ValueError):
    """Raised for inconsistent patch labelings."""


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray
    frame: str = "body"

    @property
    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    @property
    def face_cross(self) -> np.ndarray:
        tri = self.triangles
        return np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])

    @property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross, axis=1)

    @property
    def face_normals(self) -> np.ndarray:
        c = self.face_cross
        return c / np.linalg.norm(c, axis=1, keepdims=True)

    @property
    def face_centroids(self) -> np.ndarray:
        return self.triangles.mean(axis=1)

    @property
    def area(self) -> float:
        return float(self.face_areas.sum())

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.faces, dtype="<i8").tobytes())
        return h.hexdigest()


def boundary_edges(faces: np.ndarray) -> np.ndarray:
    """Undirected edges not shared by exactly two faces."""
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    return uniq[counts != 2]


def validate_mesh(mesh: Mesh) -> None:
    if not np.all(np.isfinite(mesh.vertices)):
        raise MeshError("mesh has non-finite vertex coordinates")
    areas = mesh.face_areas
    bad = np.flatnonzero(~(areas > _AREA_TOL))
    if bad.size:
        raise MeshError(f"zero-area face(s) at index {', '.join(map(str, bad[:20]))}")
    open_edges = boundary_edges(mesh.faces)
    if open_edges.size:
        listed = ", ".join(f"({a},{b})" for a, b in open_edges[:20])
        raise MeshError(f"mesh is not watertight; {len(open_edges)} boundary edge(s): {listed}")


def mesh_from_triangles(triangles: np.ndarray, frame: str = "body") -> Mesh:
    """Weld a (m, 3, 3) triangle soup on exact coordinate equality."""
    tri = np.asarray(triangles, dtype=np.float64).reshape(-1, 3)
    verts, inverse = np.unique(tri, axis=0, return_inverse=True)
    faces = inverse.reshape(-1, 3).astype(np.int64)
    return Mesh(verts, faces, frame)


# ---------------------------------------------------------------- STL I/O

def _read_stl_triangles(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if len(data) >= 84:
        (n,) = struct.unpack_from("<I", data, 80)
        if 84 + 50 * n == len(data):
            rec = np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
            arr = np.frombuffer(data, dtype=rec, count=n, offset=84)
            return arr["v"].astype(np.float64)
    text = data.decode("ascii", errors="strict")
    if not text.lstrip().lower().startswith("solid"):
        raise OSError(f"{path}: not a recognisable STL file")
    nums = re.findall(r"vertex\s+(\S+)\s+(\S+)\s+(\S+)", text)
    if not nums or len(nums) % 3:
        raise OSError(f"{path}: malformed ASCII STL")
    return np.array(nums, dtype=np.float64).reshape(-1, 3, 3)


def write_stl(path: str | Path, mesh: Mesh, binary: bool = True) -> None:
    path = Path(path)
    tri = mesh.triangles
    normals = mesh.face_normals
    if binary:
        rec = np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
        arr = np.zeros(len(tri), dtype=rec)
        arr["n"] = normals
        arr["v"] = tri
        header = b"hydrosurrogate binary STL".ljust(80, b" ")
        path.write_bytes(header + struct.pack("<I", len(tri)) + arr.tobytes())
        return
    lines = ["solid hull"]
    for n, t in zip(normals, tri):
        lines.append(f"  facet normal {n[0]:.17g} {n[1]:.17g} {n[2]:.17g}")
        lines.append("    outer loop")
        for v in t:
            lines.append(f"      vertex {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}")
        lines.append("    endloop")
        lines.append("  endfacet")
    lines.append("endsolid hull")
    path.write_text("\n".join(lines) + "\n")


def load_mesh(path: str | Path, rotation=None, translation=None, frame: str = "body") -> Mesh:
    """Read an STL file and map it into the body frame via ``R @ v + t``.

    Vertices are welded on exact equality, then the result is checked to be
    watertight with strictly positive face areas.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    tri = _read_stl_triangles(path)
    R = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
    t = np.zeros(3) if translation is None else np.asarray(translation, dtype=np.float64)
    if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
        raise ValueError("rotation must be a proper 3x3 rotation matrix")
    mesh = mesh_from_triangles(tri)
    verts = mesh.vertices @ R.T + t
    mesh = Mesh(verts, mesh.faces, frame)
    validate_mesh(mesh)
    return mesh


# ------------------------------------------------------------ patch labels

@dataclass(frozen=True)
class PatchLabel:
    name: str
    semantic_type: str
    face_ids: tuple[int, ...]


def _format_ids(ids: Sequence[int]) -> str:
    ids = sorted(ids)
    out, i = [], 0
    while i < len(ids):
        j = i
        while j + 1 < len(ids) and ids[j + 1] == ids[j] + 1:
            j += 1
        out.append(str(ids[i]) if i == j else f"{ids[i]}-{ids[j]}")
        i = j + 1
    return " ".join(out)


def write_labels(path: str | Path, labels: Iterable[PatchLabel]) -> None:
    lines = ["# name type face-ids (ranges a-b are inclusive)"]
    for lab in labels:
        lines.append(f"{lab.name} {lab.semantic_type} {_format_ids(lab.face_ids)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_labels(path: str | Path) -> list[PatchLabel]:
    labels = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) < 3:
            raise LabelError(f"{path}:{lineno}: expected 'name type face-ids'")
        ids: list[int] = []
        for tok in parts[2:]:
            if "-" in tok:
                a, b = tok.split("-", 1)
                ids.extend(range(int(a), int(b) + 1))
            else:
                ids.append(int(tok))
        labels.append(PatchLabel(parts[0], parts[1], tuple(ids)))
    return labels


# ----------------------------------------------------------------- patches

@dataclass(frozen=True)
class SurfacePatch:
    name: str
    semantic_type: str
    face_ids: np.ndarray
    centroid: np.ndarray
    normal: np.ndarray
    area: float
    normal_fallback: bool = False
    depth_samples: np.ndarray | None = None
    sample_normals: np.ndarray | None = None
    sample_seed: int | None = None

    def descriptor(self) -> dict:
        return {
            "name": self.name,
            "type": self.semantic_type,
            "centroid": [float(x) for x in self.centroid],
            "normal": [float(x) for x in self.normal],
            "area": float(self.area),
            "normal_fallback": bool(self.normal_fallback),
            "n_faces": int(len(self.face_ids)),
        }


def decompose_patches(mesh: Mesh, labels: Sequence[PatchLabel]) -> list[SurfacePatch]:
    n_faces = len(mesh.faces)
    owner = np.full(n_faces, -1)
    names = set()
    for k, lab in enumerate(labels):
        if lab.semantic_type not in SEMANTIC_TYPES:
            raise LabelError(f"patch {lab.name!r}: unknown semantic type {lab.semantic_type!r}")
        if lab.name in names:
            raise LabelError(f"duplicate patch name {lab.name!r}")
        names.add(lab.name)
        ids = np.asarray(lab.face_ids, dtype=np.int64)
        if ids.size == 0:
            raise LabelError(f"patch {lab.name!r} has no faces")
        if ids.min() < 0 or ids.max() >= n_faces:
            raise LabelError(f"patch {lab.name!r} references faces outside the mesh")
        if len(np.unique(ids)) != len(ids):
            raise LabelError(f"patch {lab.name!r} lists a face more than once")
        taken = owner[ids] >= 0
        if taken.any():
            f = int(ids[taken][0])
            raise LabelError(
                f"face {f} assigned to both {labels[owner[f]].name!r} and {lab.name!r}")
        owner[ids] = k

    areas = mesh.face_areas
    normals = mesh.face_normals
    centroids = mesh.face_centroids
    patches = []
    for lab in labels:
        ids = np.asarray(lab.face_ids, dtype=np.int64)
        a = areas[ids]
        area = float(a.sum())
        centroid = (centroids[ids] * a[:, None]).sum(axis=0) / area
        mean_n = normals[ids].mean(axis=0)
        norm = np.linalg.norm(mean_n)
        fallback = bool(norm < NORMAL_FALLBACK_TOL)
        normal = NORMAL_FALLBACK.copy() if fallback else mean_n / norm
        patches.append(SurfacePatch(lab.name, lab.semantic_type, ids, centroid, normal,
                                    area, fallback))
    return patches


def sample_patch_depths(patch: SurfacePatch, mesh: Mesh, count: int = DEFAULT_SAMPLE_COUNT,
                        ground_z: float = -np.inf, seed: int | np.random.Generator = 0):
    """Area-proportionate surface samples of one patch.

    Returns ``(z, normals)`` for the samples at or above ``ground_z``.
    """
    if count < MIN_SAMPLE_COUNT:
        raise ValueError(f"count must be >= {MIN_SAMPLE_COUNT}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tri = mesh.triangles[patch.face_ids]
    areas = mesh.face_areas[patch.face_ids]
    which = rng.choice(len(tri), size=count, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    t = tri[which]
    pts = (1 - r1)[:, None] * t[:, 0] + (r1 * (1 - r2))[:, None] * t[:, 1] \
        + (r1 * r2)[:, None] * t[:, 2]
    nrm = mesh.face_normals[patch.face_ids][which]
    keep = pts[:, 2] >= ground_z
    if not keep.any():
        raise ValueError(f"patch {patch.name!r} entirely below ground plane")
    return pts[keep, 2].copy(), nrm[keep].copy()


def default_ground_z(patches: Sequence[SurfacePatch], mesh: Mesh) -> float:
    wheel_faces = [p.face_ids for p in patches if p.semantic_type == "wheel"]
    if not wheel_faces:
        return float(mesh.vertices[:, 2].min())
    ids = np.unique(mesh.faces[np.concatenate(wheel_faces)])
    return float(mesh.vertices[ids, 2].min())


def attach_depth_samples(patches: Sequence[SurfacePatch], mesh: Mesh,
                         count: int = DEFAULT_SAMPLE_COUNT, ground_z: float | None = None,
                         seed: int = 0) -> list[SurfacePatch]:
    """Sample every patch with an independent child stream of ``seed``."""
    if ground_z is None:
        ground_z = default_ground_z(patches, mesh)
    children = np.random.SeedSequence(seed).spawn(len(patches))
    out = []
    for p, ss in zip(patches, children):
        z, n = sample_patch_depths(p, mesh, count, ground_z, np.random.default_rng(ss))
        out.append(replace(p, depth_samples=z, sample_normals=n, sample_seed=seed))
    return out


def write_descriptors(path: str | Path, patches: Sequence[SurfacePatch], **extra) -> None:
    doc = dict(extra)
    doc["patches"] = [p.descriptor() for p in patches]
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def save_depth_samples(path: str | Path, patches: Sequence[SurfacePatch]) -> None:
    arrays = {}
    for p in patches:
        arrays[f"{p.name}/z"] = p.depth_samples
        arrays[f"{p.name}/normals"] = p.sample_normals
    np.savez(path, **arrays)


def load_depth_samples(path: str | Path, patches: Sequence[SurfacePatch]) -> list[SurfacePatch]:
    with np.load(path) as data:
        return [replace(p, depth_samples=data[f"{p.name}/z"],
                        sample_normals=data[f"{p.name}/normals"]) for p in patches]


# ------------------------------------------------------------ vehicle spec

@dataclass(frozen=True)
class VehicleSpec:
    name: str
    patch_names: tuple[str, ...]
    L_ref: float
    W_ref: float
    H_ref: float
    H_sub: float
    z_0: float
    mirror_pairs: tuple[tuple[str, str], ...] = ()
    swap_pairs: tuple[tuple[str, str], ...] = ()
    symmetry_plane_patches: tuple[str, ...] = ()
    transverse_plane_patches: tuple[str, ...] = ()
    ground_z: float | None = None
    mesh_file: str | None = None
    label_file: str | None = None
    rotation: tuple = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    translation: tuple = (0.0, 0.0, 0.0)
    extra: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.patch_names)

    def __post_init__(self):
        names = set(self.patch_names)
        if len(names) != len(self.patch_names):
            raise ValueError("duplicate patch names in vehicle spec")
        for pairs in (self.mirror_pairs, self.swap_pairs):
            for a, b in pairs:
                if a not in names or b not in names:
                    raise ValueError(f"pair ({a}, {b}) references unknown patch")
        for n in (*self.symmetry_plane_patches, *self.transverse_plane_patches):
            if n not in names:
                raise ValueError(f"unknown patch {n!r}")
        if not self.H_sub > 0:
            raise ValueError("H_sub must be positive")
        if min(self.L_ref, self.W_ref, self.H_ref) <= 0:
            raise ValueError("reference dimensions must be positive")

    def index(self, name: str) -> int:
        return self.patch_names.index(name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "patch_names": list(self.patch_names),
            "L_ref": self.L_ref, "W_ref": self.W_ref, "H_ref": self.H_ref,
            "H_sub": self.H_sub, "z_0": self.z_0, "ground_z": self.ground_z,
            "mirror_pairs": [list(p) for p in self.mirror_pairs],
            "swap_pairs": [list(p) for p in self.swap_pairs],
            "symmetry_plane_patches": list(self.symmetry_plane_patches),
            "transverse_plane_patches": list(self.transverse_plane_patches),
            "mesh_file": self.mesh_file, "label_file": self.label_file,
            "rotation": [list(r) for r in self.rotation],
            "translation": list(self.translation),
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VehicleSpec":
        return cls(
            name=d["name"],
            patch_names=tuple(d["patch_names"]),
            L_ref=float(d["L_ref"]), W_ref=float(d["W_ref"]), H_ref=float(d["H_ref"]),
            H_sub=float(d["H_sub"]), z_0=float(d["z_0"]),
            ground_z=None if d.get("ground_z") is None else float(d["ground_z"]),
            mirror_pairs=tuple(tuple(p) for p in d.get("mirror_pairs", ())),
            swap_pairs=tuple(tuple(p) for p in d.get("swap_pairs", ())),
            symmetry_plane_patches=tuple(d.get("symmetry_plane_patches", ())),
            transverse_plane_patches=tuple(d.get("transverse_plane_patches", ())),
            mesh_file=d.get("mesh_file"), label_file=d.get("label_file"),
            rotation=tuple(tuple(float(x) for x in r) for r in d.get("rotation", np.eye(3))),
            translation=tuple(float(x) for x in d.get("translation", (0, 0, 0))),
            extra=dict(d.get("extra", {})),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "VehicleSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))
