"""Toy vehicles shipped with the package and loading of vehicle directories.

``mini_husky``: box body with three depth bands on the front and rear faces
and four cylinder wheels (K=13).  ``mini_warthog``: wide flat slab with a
split underbody and four larger wheels (K=10).  Both are stored in a Y-up CAD
frame and mapped to the body frame by the transform in ``vehicle.json``.

Regenerate the shipped files with ``python -m hydrosurrogate.vehicles``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import (DEFAULT_SAMPLE_COUNT, Mesh, PatchLabel, SurfacePatch, VehicleSpec,
                       attach_depth_samples, decompose_patches, load_mesh, mesh_from_triangles,
                       read_labels, write_labels, write_stl)
from .shapes import lattice_box, y_cylinder

DATA_DIR = Path(__file__).parent / "data" / "vehicles"
TOY_VEHICLES = ("mini_husky", "mini_warthog")

# CAD frame: X forward, Y up, Z right.  body = R @ cad + t
CAD_TO_BODY = ((1.0, 0.0, 0.0), (0.0, 0.0, -1.0), (0.0, 1.0, 0.0))


def _wheels(x_c, y_c, radius, half_width, segments=24):
    tris, tags = [], []
    for name, sx, sy in (("wheel_fl", 1, 1), ("wheel_fr", 1, -1),
                         ("wheel_rl", -1, 1), ("wheel_rr", -1, -1)):
        t, g = y_cylinder((sx * x_c, sy * y_c, radius), radius, half_width, segments, name)
        tris.append(t)
        tags += g
    return np.concatenate(tris), tags


def _husky_parts():
    zs = [0.05, 0.10, 0.16, 0.37]
    bands = {0.075: "lower", 0.13: "mid", 0.265: "upper"}

    def tagger(face, a, b):
        if face == "+x":
            return "front_" + bands[round(b, 3)]
        if face == "-x":
            return "rear_" + bands[round(b, 3)]
        return {"+y": "side_left", "-y": "side_right", "-z": "bottom", "+z": "top"}[face]

    body, body_tags = lattice_box([-0.43, 0.43], [-0.25, 0.25], zs, tagger)
    wheels, wheel_tags = _wheels(0.26, 0.32, 0.165, 0.05)
    patches = ["front_lower", "front_mid", "front_upper", "rear_lower", "rear_mid",
               "rear_upper", "side_left", "side_right", "bottom",
               "wheel_fl", "wheel_fr", "wheel_rl", "wheel_rr"]
    types = {"front": "front", "rear": "rear", "side": "side", "bottom": "bottom",
             "wheel": "wheel"}
    sym = dict(
        mirror_pairs=(("side_left", "side_right"), ("wheel_fl", "wheel_fr"),
                      ("wheel_rl", "wheel_rr")),
        swap_pairs=(("front_lower", "rear_lower"), ("front_mid", "rear_mid"),
                    ("front_upper", "rear_upper"), ("wheel_fl", "wheel_rl"),
                    ("wheel_fr", "wheel_rr")),
        symmetry_plane_patches=("front_lower", "front_mid", "front_upper", "rear_lower",
                                "rear_mid", "rear_upper", "bottom"),
        transverse_plane_patches=("side_left", "side_right", "bottom"),
    )
    return (np.concatenate([body, wheels]), body_tags + wheel_tags, patches, types, sym,
            dict(H_sub=0.366, extra={"merge_groups": {
                "front": ["front_lower", "front_mid", "front_upper"],
                "rear": ["rear_lower", "rear_mid", "rear_upper"]}}))


def _warthog_parts():
    def tagger(face, a, b):
        if face == "-z":
            return "bottom_left" if b > 0 else "bottom_right"
        return {"+x": "front", "-x": "rear", "+y": "side_left", "-y": "side_right",
                "+z": "top"}[face]

    body, body_tags = lattice_box([-0.76, 0.76], [-0.55, 0.0, 0.55], [0.08, 0.60], tagger)
    wheels, wheel_tags = _wheels(0.45, 0.63, 0.29, 0.06)
    patches = ["front", "rear", "side_left", "side_right", "bottom_left", "bottom_right",
               "wheel_fl", "wheel_fr", "wheel_rl", "wheel_rr"]
    types = {"front": "front", "rear": "rear", "side": "side", "bottom": "bottom",
             "wheel": "wheel"}
    sym = dict(
        mirror_pairs=(("side_left", "side_right"), ("bottom_left", "bottom_right"),
                      ("wheel_fl", "wheel_fr"), ("wheel_rl", "wheel_rr")),
        swap_pairs=(("front", "rear"), ("wheel_fl", "wheel_rl"), ("wheel_fr", "wheel_rr")),
        symmetry_plane_patches=("front", "rear"),
        transverse_plane_patches=("side_left", "side_right", "bottom_left", "bottom_right"),
    )
    return (np.concatenate([body, wheels]), body_tags + wheel_tags, patches, types, sym,
            dict(H_sub=0.6, extra={}))


_BUILDERS = {"mini_husky": _husky_parts, "mini_warthog": _warthog_parts}


def build_toy_vehicle(name: str):
    """Return ``(body_mesh, labels, spec)`` built directly in the body frame."""
    tris, tags, patch_names, types, sym, misc = _BUILDERS[name]()
    ground = mesh_from_triangles(tris)
    lo, hi = ground.bounds
    center = 0.5 * (lo + hi)
    body = Mesh(ground.vertices - center, ground.faces)
    tag_arr = np.array(tags)
    labels = []
    for pname in patch_names:
        ids = np.flatnonzero(tag_arr == pname)
        labels.append(PatchLabel(pname, types[pname.split("_")[0]], tuple(int(i) for i in ids)))
    ext = hi - lo
    ground_z = float(-center[2])
    spec = VehicleSpec(
        name=name, patch_names=tuple(patch_names),
        L_ref=float(round(ext[0], 6)), W_ref=float(round(ext[1], 6)),
        H_ref=float(round(ext[2], 6)), H_sub=misc["H_sub"],
        z_0=ground_z, ground_z=ground_z,
        mesh_file="hull.stl", label_file="labels.txt",
        rotation=CAD_TO_BODY, translation=tuple(float(x) for x in -center),
        extra=misc["extra"], **sym)
    return body, labels, spec


def write_toy_vehicle(name: str, out_dir: str | Path = DATA_DIR) -> Path:
    body, labels, spec = build_toy_vehicle(name)
    d = Path(out_dir) / name
    d.mkdir(parents=True, exist_ok=True)
    R = np.array(spec.rotation)
    cad = Mesh((body.vertices - np.array(spec.translation)) @ R, body.faces)
    write_stl(d / spec.mesh_file, cad, binary=(name == "mini_husky"))
    write_labels(d / spec.label_file, labels)
    spec.save(d / "vehicle.json")
    return d


@dataclass
class Vehicle:
    """A vehicle loaded from disk: body-frame mesh, sampled patches and spec."""
    spec: VehicleSpec
    mesh: Mesh
    patches: list[SurfacePatch]
    root: Path | None = None


def vehicle_dir(name_or_path: str | Path) -> Path:
    p = Path(name_or_path)
    if p.is_dir():
        return p
    if str(name_or_path) in TOY_VEHICLES:
        return DATA_DIR / str(name_or_path)
    raise FileNotFoundError(f"no vehicle directory or toy vehicle named {name_or_path!r}")


def load_vehicle(name_or_path: str | Path, samples: int = DEFAULT_SAMPLE_COUNT,
                 seed: int = 0) -> Vehicle:
    root = vehicle_dir(name_or_path)
    spec = VehicleSpec.load(root / "vehicle.json")
    mesh = load_mesh(root / spec.mesh_file, spec.rotation, spec.translation)
    labels = read_labels(root / spec.label_file)
    if tuple(lab.name for lab in labels) != spec.patch_names:
        raise ValueError(f"{root}: label file patch order differs from vehicle.json")
    patches = decompose_patches(mesh, labels)
    patches = attach_depth_samples(patches, mesh, samples, spec.ground_z, seed)
    return Vehicle(spec, mesh, patches, root)


if __name__ == "__main__":
    for _name in TOY_VEHICLES:
        print(write_toy_vehicle(_name))
