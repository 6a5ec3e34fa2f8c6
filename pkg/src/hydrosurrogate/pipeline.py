"""End-to-end inference: kinematic state -> per-surface forces in newtons."""
from __future__ import annotations

import numpy as np

from . import features as ft
from .dataset import DEFAULT_GRAVITY, feature_columns
from .model import SchemaError, SurrogateModel, _mlp


class InferencePipeline:
    """Precomputes everything static so a single call only does per-sample work.

    Submergence is evaluated against each patch's sorted depth samples with a
    prefix-sum, which gives the same values as the direct per-sample formula.
    """

    def __init__(self, model: SurrogateModel, vehicle, dtype=np.float64,
                 mu: float = ft.MU_WATER, fr_h_max: float = ft.FR_H_MAX):
        if model.stats is None:
            raise SchemaError("model has no normalization statistics attached")
        if model.d_s not in (0, ft.D_S):
            raise SchemaError(f"model surface width {model.d_s} is not {ft.D_S}")
        self.model = model
        self.vehicle = vehicle
        self.spec = vehicle.spec
        self.dtype = np.dtype(dtype)
        self.mu, self.fr_h_max = mu, fr_h_max
        self.columns = feature_columns(model.global_features)
        self.params = {k: v.astype(self.dtype) for k, v in model.params.items()}
        st = model.stats
        self.mu_G, self.sigma_G = st.mu_G, st.sigma_G
        self.live_G = ~st.constant_G
        self.mu_Y, self.sigma_Y = st.mu_Y.astype(self.dtype), st.sigma_Y.astype(self.dtype)
        patches = vehicle.patches
        self.K = len(patches) if model.d_s else 1
        self.static = ft.static_block(patches, self.spec)
        self.normals = np.array([p.normal for p in patches])
        self.areas = np.array([p.area for p in patches])
        self.area_scale = self.spec.L_ref * self.spec.H_ref
        self._sorted = [np.sort(p.depth_samples) for p in patches]
        self._csum = [np.concatenate([[0.0], np.cumsum(z)]) for z in self._sorted]

    def submergence(self, z_water: float) -> tuple[np.ndarray, np.ndarray]:
        K = len(self._sorted)
        sf, sd = np.zeros(K), np.zeros(K)
        H = self.spec.H_sub
        for k in range(K):
            z = self._sorted[k]
            n = int(np.searchsorted(z, z_water, side="right"))
            if n:
                sf[k] = n / z.size
                sd[k] = (n * z_water - self._csum[k][n]) / n / H
        return sf, sd

    def features(self, v, depth: float, rho: float, z_water: float | None = None,
                 gravity=DEFAULT_GRAVITY) -> tuple[np.ndarray, np.ndarray]:
        """(normalized global vector, surface feature matrix) for one state."""
        v = np.asarray(v, dtype=np.float64)
        if z_water is None:
            z_water = self.spec.z_0 + depth
        G = ft.global_features(v, rho, depth, self.spec, self.mu, gravity, self.fr_h_max)
        Gn = (G[self.columns] - self.mu_G) / self.sigma_G * self.live_G
        if not self.model.d_s:
            return Gn, np.zeros((1, 0))
        sf, sd = self.submergence(z_water)
        S = np.empty((len(sf), ft.D_S))
        S[:, :12] = self.static
        S[:, 12] = sf
        S[:, 13] = sd
        S[:, 14] = ft.projected_area_batch(self.normals, self.areas, v)[0] / self.area_scale
        return Gn, S

    def __call__(self, v, depth: float, rho: float, z_water: float | None = None,
                 gravity=DEFAULT_GRAVITY) -> np.ndarray:
        """Per-surface forces (K, 3) in newtons for one state."""
        Gn, S = self.features(v, depth, rho, z_water, gravity)
        X = np.empty((S.shape[0], S.shape[1] + Gn.size), dtype=self.dtype)
        X[:, :S.shape[1]] = S
        X[:, S.shape[1]:] = Gn
        out, _ = _mlp(self.params, X)
        return (out * self.sigma_Y + self.mu_Y) * rho

    def batch(self, v, depth, rho, z_water=None, gravity=DEFAULT_GRAVITY) -> np.ndarray:
        """Vectorised forces (N, K, 3) for many states."""
        v = np.atleast_2d(np.asarray(v, dtype=np.float64))
        n = len(v)
        depth = np.broadcast_to(np.asarray(depth, dtype=np.float64), (n,))
        rho = np.broadcast_to(np.asarray(rho, dtype=np.float64), (n,))
        zw = self.spec.z_0 + depth if z_water is None else np.broadcast_to(
            np.asarray(z_water, dtype=np.float64), (n,))
        G = ft.global_features_batch(v, rho, depth, self.spec, gravity, self.mu, self.fr_h_max)
        Gn = (G[:, self.columns] - self.mu_G) / self.sigma_G * self.live_G
        if self.model.d_s:
            sf, sd = ft.submergence_state(self.vehicle.patches, self.spec, zw)
            S = ft.surface_features_from_state(self.vehicle.patches, self.spec, sf, sd, v,
                                               self.static)
        else:
            S = np.zeros((n, 1, 0))
        K = S.shape[1]
        X = np.concatenate([S, np.broadcast_to(Gn[:, None, :], (n, K, Gn.shape[1]))], axis=2)
        out, _ = _mlp(self.params, X.reshape(n * K, -1).astype(self.dtype))
        Y = out.reshape(n, K, 3) * self.sigma_Y + self.mu_Y
        return Y * rho[:, None, None]
