"""Submergence metrics, dimensionless groups and network input features."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .geometry import SEMANTIC_TYPES, SurfacePatch, VehicleSpec

SCHEMA_VERSION = "hydro-features/1"
GLOBAL_FEATURES = ("speed", "rho", "depth", "vx", "vy", "vz", "Fr_L", "Fr_h", "Re_norm",
                   "L_ref", "W_ref", "H_ref")
SURFACE_FEATURES = ("type_bottom", "type_front", "type_rear", "type_side", "type_wheel",
                    "centroid_x_norm", "centroid_y_norm", "centroid_z_norm",
                    "normal_x", "normal_y", "normal_z", "area_norm",
                    "sub_frac", "sub_depth_norm", "a_proj_norm")
D_G = len(GLOBAL_FEATURES)
D_S = len(SURFACE_FEATURES)

MU_WATER = 1.002e-3
G_STANDARD = 9.81
FR_H_MAX = 10.0


def submergence_metrics(z_s, z_water: float, H_sub: float) -> tuple[float, float]:
    """Submerged fraction and mean submerged depth / H_sub of one patch."""
    z = np.asarray(z_s, dtype=np.float64)
    if z.size == 0:
        raise ValueError("depth samples are empty")
    if not H_sub > 0:
        raise ValueError("H_sub must be positive")
    wet = z_water >= z
    n_wet = np.count_nonzero(wet)
    if n_wet == 0:
        return 0.0, 0.0
    # exactly rounded sum, so the result does not depend on summation order
    depth = math.fsum(z_water - z[wet]) / n_wet
    return n_wet / z.size, depth / H_sub


def submergence_batch(z_s, z_water, H_sub: float) -> tuple[np.ndarray, np.ndarray]:
    """Metrics for many water levels at once via prefix sums over sorted samples.

    Agrees with ``submergence_metrics`` to round-off (the depth is formed as
    n * z_water - sum(z) instead of summing the individual depths).
    """
    z = np.asarray(z_s, dtype=np.float64)
    zw = np.atleast_1d(np.asarray(z_water, dtype=np.float64))
    sf = np.empty(zw.shape)
    sd = np.empty(zw.shape)
    zsort = np.sort(z)
    csum = np.concatenate([[0.0], np.cumsum(zsort)])
    # the wet set for a level is a prefix of the sorted samples
    n_wet = np.searchsorted(zsort, zw, side="right")
    for i, (level, n) in enumerate(zip(zw, n_wet)):
        if n == 0:
            sf[i] = sd[i] = 0.0
        else:
            sf[i] = n / z.size
            sd[i] = (n * level - csum[n]) / n / H_sub
    return sf, sd


def projected_area(normal, area: float, v) -> float:
    v = np.asarray(v, dtype=np.float64)
    speed = np.linalg.norm(v)
    if speed == 0.0:
        return 0.0
    return float(area * abs(np.dot(normal, v / speed)))


def global_features(v, rho: float, depth: float, spec: VehicleSpec, mu: float = MU_WATER,
                    g: float = G_STANDARD, fr_h_max: float = FR_H_MAX) -> np.ndarray:
    """The 12 global inputs in ``GLOBAL_FEATURES`` order.

    ``g`` may be a scalar or a gravity vector, in which case the magnitude of
    its vertical component is used.
    """
    v = np.asarray(v, dtype=np.float64)
    g_eff = abs(float(np.asarray(g)[2])) if np.ndim(g) else abs(float(g))
    speed = float(np.sqrt(v[0] ** 2 + v[1] ** 2 + v[2] ** 2))
    fr_l = speed / np.sqrt(g_eff * spec.L_ref)
    if depth > 0:
        fr_h = min(speed / np.sqrt(g_eff * depth), fr_h_max)
    else:
        fr_h = fr_h_max if speed > 0 else 0.0
    re_norm = rho * speed * spec.L_ref / mu * 1e-6
    return np.array([speed, rho, depth, v[0], v[1], v[2], fr_l, fr_h, re_norm,
                     spec.L_ref, spec.W_ref, spec.H_ref])


def global_features_batch(v, rho, depth, spec: VehicleSpec, gravity=None, mu: float = MU_WATER,
                          fr_h_max: float = FR_H_MAX) -> np.ndarray:
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    n = len(v)
    rho = np.broadcast_to(np.asarray(rho, dtype=np.float64), (n,))
    depth = np.broadcast_to(np.asarray(depth, dtype=np.float64), (n,))
    if gravity is None:
        g_eff = np.full(n, G_STANDARD)
    else:
        g_eff = np.abs(np.broadcast_to(np.asarray(gravity, dtype=np.float64), (n, 3))[:, 2])
    speed = np.sqrt(v[:, 0] ** 2 + v[:, 1] ** 2 + v[:, 2] ** 2)
    fr_l = speed / np.sqrt(g_eff * spec.L_ref)
    with np.errstate(divide="ignore", invalid="ignore"):
        fr_h = np.where(depth > 0, speed / np.sqrt(g_eff * np.where(depth > 0, depth, 1.0)),
                        np.where(speed > 0, fr_h_max, 0.0))
    fr_h = np.minimum(fr_h, fr_h_max)
    re_norm = rho * speed * spec.L_ref / mu * 1e-6
    dims = np.broadcast_to([spec.L_ref, spec.W_ref, spec.H_ref], (n, 3))
    return np.column_stack([speed, rho, depth, v, fr_l, fr_h, re_norm, dims])


def type_one_hot(semantic_type: str) -> np.ndarray:
    out = np.zeros(len(SEMANTIC_TYPES))
    out[SEMANTIC_TYPES.index(semantic_type)] = 1.0
    return out


def static_block(patches: Sequence[SurfacePatch], spec: VehicleSpec) -> np.ndarray:
    """(K, 12) static per-surface features."""
    dims = np.array([spec.L_ref, spec.W_ref, spec.H_ref])
    rows = []
    for p in patches:
        rows.append(np.concatenate([type_one_hot(p.semantic_type), p.centroid / dims,
                                    p.normal, [p.area / (spec.L_ref * spec.H_ref)]]))
    return np.array(rows)


def projected_area_batch(normals: np.ndarray, areas: np.ndarray, v: np.ndarray) -> np.ndarray:
    """(N, K) projected areas for velocities (N, 3); zero where the speed is zero."""
    v = np.atleast_2d(v)
    speed = np.linalg.norm(v, axis=1)
    safe = np.where(speed > 0, speed, 1.0)
    cos = np.abs(v @ normals.T) / safe[:, None]
    return np.where(speed[:, None] > 0, areas[None, :] * cos, 0.0)


def assemble_surface_features(patches: Sequence[SurfacePatch], spec: VehicleSpec,
                              z_water: float, v) -> np.ndarray:
    """(K, 15) per-surface feature rows for one sample."""
    sub = [submergence_metrics(p.depth_samples, z_water, spec.H_sub) for p in patches]
    return surface_features_from_state(patches, spec, np.array([s[0] for s in sub]),
                                       np.array([s[1] for s in sub]), v[None, :] if np.ndim(v) == 1 else v)[0]


def surface_features_from_state(patches: Sequence[SurfacePatch], spec: VehicleSpec,
                                sub_frac: np.ndarray, sub_depth_norm: np.ndarray,
                                v: np.ndarray, static: np.ndarray | None = None) -> np.ndarray:
    """(N, K, 15) features from given submergence state and velocities (N, 3)."""
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    sub_frac = np.atleast_2d(sub_frac)
    sub_depth_norm = np.atleast_2d(sub_depth_norm)
    n, k = sub_frac.shape
    if static is None:
        static = static_block(patches, spec)
    normals = np.array([p.normal for p in patches])
    areas = np.array([p.area for p in patches])
    a_proj = projected_area_batch(normals, areas, v) / (spec.L_ref * spec.H_ref)
    out = np.empty((n, k, D_S))
    out[:, :, :12] = static[None]
    out[:, :, 12] = sub_frac
    out[:, :, 13] = sub_depth_norm
    out[:, :, 14] = a_proj
    return out


def submergence_state(patches: Sequence[SurfacePatch], spec: VehicleSpec, z_water):
    """(N, K) sub_frac and sub_depth_norm for water levels (N,)."""
    zw = np.atleast_1d(np.asarray(z_water, dtype=np.float64))
    sf = np.empty((len(zw), len(patches)))
    sd = np.empty_like(sf)
    for k, p in enumerate(patches):
        sf[:, k], sd[:, k] = submergence_batch(p.depth_samples, zw, spec.H_sub)
    return sf, sd
