"""Wading-trial validation harness.

Motion-capture traces are resampled to a uniform rate, differentiated with a
Savitzky-Golay filter, corrected to the centre of mass and cut into planar
sections.  The surrogate is driven with the measured kinematics only and its
section-mean forces are checked against quadratic drag scaling and linear
buoyancy-vs-depth scaling.

Quaternions are (w, x, y, z), Hamilton convention, rotating body to world.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .dataset import oracle_steady
from .defaults import load_defaults
from . import features as ft

INCH = 0.0254
R_CP = np.array([0.2, 0.0, -0.63])


class GapError(ValueError):
    pass


class DegenerateFitError(ValueError):
    pass


# -- quaternions ---------------------------------------------------------------

def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(np.asarray(a), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b), -1, 0)
    return np.stack([aw * bw - ax * bx - ay * by - az * bz,
                     aw * bx + ax * bw + ay * bz - az * by,
                     aw * by - ax * bz + ay * bw + az * bx,
                     aw * bz + ax * by - ay * bx + az * bw], axis=-1)


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.asarray(q) * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.moveaxis(np.asarray(q), -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


def quat_from_axis_angle(axis, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    angle = np.asarray(angle, dtype=np.float64)[..., None]
    return np.concatenate([np.cos(angle / 2), np.sin(angle / 2) * axis], axis=-1)


def align_hemisphere(q: np.ndarray) -> np.ndarray:
    """Flip signs so consecutive quaternions have a non-negative dot product."""
    q = np.array(q, dtype=np.float64)
    for i in range(1, len(q)):
        if np.dot(q[i], q[i - 1]) < 0:
            q[i] = -q[i]
    return q


def slerp(q0: np.ndarray, q1: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise shortest-arc spherical interpolation."""
    q0, q1 = np.atleast_2d(q0), np.atleast_2d(q1)
    u = np.asarray(u, dtype=np.float64)[:, None]
    dot = np.sum(q0 * q1, axis=1, keepdims=True)
    q1 = np.where(dot < 0, -q1, q1)
    dot = np.abs(dot)
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    s = np.sin(theta)
    near = s < 1e-9
    safe = np.where(near, 1.0, s)
    w0 = np.where(near, 1.0 - u, np.sin((1.0 - u) * theta) / safe)
    w1 = np.where(near, u, np.sin(u * theta) / safe)
    return w0 * q0 + w1 * q1


# -- traces --------------------------------------------------------------------

@dataclass
class TrialTrace:
    t: np.ndarray
    pos: np.ndarray      # (N, 3) marker position, world frame
    quat: np.ndarray     # (N, 4) body -> world
    depth: float
    direction: str = "ramp-in"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.pos = np.asarray(self.pos, dtype=np.float64)
        self.quat = np.asarray(self.quat, dtype=np.float64)
        if len(self.t) < 2 or np.any(np.diff(self.t) <= 0):
            raise ValueError("trace timestamps must be strictly increasing with >= 2 samples")
        if self.pos.shape != (len(self.t), 3) or self.quat.shape != (len(self.t), 4):
            raise ValueError("trace position/orientation shapes do not match timestamps")
        if np.any(np.abs(np.linalg.norm(self.quat, axis=1) - 1.0) > 1e-6):
            raise ValueError("trace quaternions must have unit norm within 1e-6")


def resample_uniform(trace: TrialTrace, rate: float = 111.0, gap_periods: float = 5.0
                     ) -> TrialTrace:
    """Linear positions and slerped, renormalized orientations on a uniform grid."""
    t = trace.t
    mean_dt = (t[-1] - t[0]) / (len(t) - 1)
    if 1.0 / mean_dt < rate:
        raise ValueError(f"average input rate {1 / mean_dt:.1f} Hz is below the target {rate} Hz")
    dts = np.diff(t)
    gaps = np.flatnonzero(dts > gap_periods * mean_dt)
    if gaps.size:
        spans = [(float(t[i]), float(t[i + 1])) for i in gaps]
        raise GapError(f"gaps longer than {gap_periods} input periods: {spans}")
    n = int(math.floor((t[-1] - t[0]) * rate + 1e-9)) + 1
    grid = t[0] + np.arange(n) / rate
    pos = np.column_stack([np.interp(grid, t, trace.pos[:, i]) for i in range(3)])
    q = align_hemisphere(trace.quat)
    j = np.clip(np.searchsorted(t, grid, side="right") - 1, 0, len(t) - 2)
    u = np.clip((grid - t[j]) / (t[j + 1] - t[j]), 0.0, 1.0)
    qi = slerp(q[j], q[j + 1], u)
    qi /= np.linalg.norm(qi, axis=1, keepdims=True)
    return TrialTrace(grid, pos, qi, trace.depth, trace.direction, dict(trace.meta))


# -- Savitzky-Golay --------------------------------------------------------------

def _sg_row(offsets: np.ndarray, order: int, deriv: int) -> np.ndarray:
    """Weights giving the ``deriv``-th derivative at offset 0 of the LSQ polynomial."""
    A = np.vander(offsets.astype(np.float64), order + 1, increasing=True)
    return math.factorial(deriv) * np.linalg.pinv(A)[deriv]


def savgol(y: np.ndarray, window: int = 9, polyorder: int = 2, deriv: int = 0,
           dt: float = 1.0) -> np.ndarray:
    """Savitzky-Golay smoothing/differentiation along axis 0.

    The first and last ``window // 2`` points use a truncated window (the fit
    covers only the samples that exist) instead of padding.
    """
    if window % 2 == 0:
        raise ValueError("window length must be odd")
    if polyorder >= window:
        raise ValueError("polyorder must be less than the window length")
    if deriv > polyorder:
        raise ValueError("derivative order exceeds the polynomial order")
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n < window:
        raise ValueError(f"series of length {n} is shorter than the window {window}")
    h = window // 2
    out = np.empty_like(y)
    w = _sg_row(np.arange(-h, h + 1), polyorder, deriv)
    # interior: out[i] = sum_k w[k] y[i - h + k]; derivative weights sum to zero, so
    # differencing against the centre sample first changes nothing but round-off
    # and makes constants map to exactly zero
    win = np.lib.stride_tricks.sliding_window_view(y, window, axis=0)
    if deriv:
        win = win - y[h:n - h][..., None]
    out[h:n - h] = np.tensordot(win, w, axes=([-1], [0]))
    for i in list(range(h)) + list(range(n - h, n)):
        lo, hi = max(0, i - h), min(n, i + h + 1)
        offs = np.arange(lo, hi) - i
        order = min(polyorder, len(offs) - 1)
        wi = _sg_row(offs, order, deriv) if deriv <= order else np.zeros(len(offs))
        seg = y[lo:hi] - y[i] if deriv else y[lo:hi]
        out[i] = np.tensordot(wi, seg, axes=([0], [0]))
    return out / dt ** deriv


def savgol_derivative(y, window: int = 9, polyorder: int = 2, dt: float = 1.0) -> np.ndarray:
    return savgol(y, window, polyorder, 1, dt)


# -- kinematics -------------------------------------------------------------------

def angular_velocity(q: np.ndarray, qdot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(world, body) angular velocity from orientation and its time derivative.

    World rate is the vector part of 2 qdot q*; the body rate is the same
    vector rotated into the body frame (equivalently 2 q* qdot).
    """
    w_world = 2.0 * quat_mul(qdot, quat_conj(q))[..., 1:]
    R = quat_to_matrix(q)
    w_body = np.einsum("nji,nj->ni", R, w_world)
    return w_world, w_body


def com_velocity(v_marker, omega, r_cp=R_CP) -> np.ndarray:
    """Velocity of a point offset by ``r_cp`` from the tracked marker (same frame for all)."""
    return np.asarray(v_marker) + np.cross(omega, r_cp)


@dataclass
class Kinematics:
    t: np.ndarray
    R: np.ndarray         # (N, 3, 3) body -> world
    v_body: np.ndarray    # COM velocity, body frame
    v_world: np.ndarray   # COM velocity, world frame
    omega_body: np.ndarray


def trace_kinematics(trace: TrialTrace, window: int = 9, polyorder: int = 2,
                     r_cp=R_CP) -> Kinematics:
    """Smoothed velocities at the centre of mass; ``trace`` must be uniformly sampled."""
    dt = float(np.mean(np.diff(trace.t)))
    q = align_hemisphere(trace.quat)
    v_marker = savgol(trace.pos, window, polyorder, 1, dt)
    qdot = savgol(q, window, polyorder, 1, dt)
    _, w_body = angular_velocity(q, qdot)
    R = quat_to_matrix(q)
    v_body = com_velocity(np.einsum("nji,nj->ni", R, v_marker), w_body, r_cp)
    v_world = np.einsum("nij,nj->ni", R, v_body)
    return Kinematics(trace.t, R, v_body, v_world, w_body)


def water_level_series(trace: TrialTrace, quiescent_depth: float, marker_to_origin=R_CP
                       ) -> np.ndarray:
    """Water surface height in the body frame, per step.

    The body origin altitude is the marker altitude plus the vertical part of
    the rotated marker-to-origin offset; the far-field level is the quiescent
    depth above the ground at world z = 0.
    """
    R = quat_to_matrix(trace.quat)
    origin_z = trace.pos[:, 2] + (R @ np.asarray(marker_to_origin, dtype=np.float64))[:, 2]
    return quiescent_depth - origin_z


# -- planar sections ----------------------------------------------------------------

@dataclass
class PlanarSection:
    start: int
    stop: int            # exclusive
    duration: float
    mean_speed: float
    mean_vz: float
    fx: np.ndarray | None = None
    fz: np.ndarray | None = None

    @property
    def mean_fx(self) -> float:
        return float(np.mean(self.fx))

    @property
    def mean_fz(self) -> float:
        return float(np.mean(self.fz))


def qualifying_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal [start, stop) runs of True."""
    m = np.concatenate([[False], np.asarray(mask, dtype=bool), [False]])
    d = np.diff(m.astype(np.int8))
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))


def extract_planar_sections(t: np.ndarray, v_world: np.ndarray, v_body: np.ndarray | None = None,
                            min_duration: float = 0.2, vz_limit: float = 0.05
                            ) -> list[PlanarSection]:
    """Maximal runs with |v_z| below the limit lasting longer than ``min_duration``."""
    v_world = np.asarray(v_world)
    v_body = v_world if v_body is None else np.asarray(v_body)
    out = []
    for a, b in qualifying_runs(np.abs(v_world[:, 2]) < vz_limit):
        dur = float(t[b - 1] - t[a])
        mean_vz = float(np.mean(v_world[a:b, 2]))
        if dur > min_duration and abs(mean_vz) < vz_limit:
            out.append(PlanarSection(int(a), int(b), dur,
                                     float(np.mean(np.linalg.norm(v_body[a:b], axis=1))), mean_vz))
    return out


# -- fits -----------------------------------------------------------------------------

@dataclass
class FitResult:
    coef: tuple
    r2: float
    n: int
    depth: float | None = None


def r_squared(y: np.ndarray, yhat: np.ndarray) -> float:
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else -np.inf
    return 1.0 - ss_res / ss_tot


def fit_drag(x, y, depth: float | None = None) -> FitResult:
    """Least squares ``y = C x`` through the origin; x = v^2, y = |F_x|."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2:
        raise DegenerateFitError("drag fit needs at least two points")
    sxx = float(np.dot(x, x))
    if sxx == 0:
        raise DegenerateFitError("all abscissae are zero")
    C = float(np.dot(x, y)) / sxx
    return FitResult((C,), r_squared(y, C * x), len(x), depth)


def fit_line(x, y, depth: float | None = None) -> FitResult:
    """Ordinary least squares ``y = a + b x``; coef = (a, b)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2:
        raise DegenerateFitError("line fit needs at least two points")
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0:
        raise DegenerateFitError("all abscissae are equal")
    b = float(np.sum((x - xm) * (y - ym))) / sxx
    a = float(ym - b * xm)
    return FitResult((a, b), r_squared(y, a + b * x), len(x), depth)


def physical_cd(c_eff: float, rho: float, width: float, depth: float) -> float:
    if depth <= 0:
        raise ValueError("depth must be positive to form a projected area")
    if c_eff <= 0 or rho <= 0 or width <= 0:
        raise ValueError("drag coefficient, density and width must be positive")
    return c_eff / (0.5 * rho * width * depth)


@dataclass
class TrialPoint:
    depth: float
    speed: float
    fx: float
    fz: float
    direction: str = ""


def matched_pair_check(points: Sequence[TrialPoint], fits: dict, speed_tol: float = 0.3,
                       min_speed: float = 0.6) -> list[dict]:
    """Per depth pair: mean ratio of per-trial drag coefficients vs the aggregate-fit ratio."""
    depths = sorted({p.depth for p in points})
    out = []
    for i, d1 in enumerate(depths):
        for d2 in depths[i + 1:]:
            a = [p for p in points if p.depth == d1 and p.speed >= min_speed]
            b = [p for p in points if p.depth == d2 and p.speed >= min_speed]
            ratios = [(abs(q.fx) / q.speed ** 2) / (abs(p.fx) / p.speed ** 2)
                      for p in a for q in b if abs(p.speed - q.speed) <= speed_tol]
            if not ratios:
                continue
            agg = fits[d2].coef[0] / fits[d1].coef[0]
            mean = float(np.mean(ratios))
            out.append({"depth_lo": d1, "depth_hi": d2, "n_pairs": len(ratios),
                        "mean_ratio": mean, "fit_ratio": agg,
                        "deviation_pct": 100.0 * abs(mean - agg) / abs(agg)})
    if not out:
        warnings.warn("no speed-matched trial pairs across depths", stacklevel=2)
    return out


@dataclass
class VerticalReport:
    fits: dict                       # depth -> FitResult (F_0, C_L)
    monotone_mean: bool | None = None
    f0_vs_depth: FitResult | None = None
    bin_ordering: bool | None = None
    bins_checked: int = 0


def fit_vertical(points: Sequence[TrialPoint], bin_width: float = 0.5) -> VerticalReport:
    """Per-depth ``F_z = F_0 + C_L v^2`` plus the cross-depth consistency checks."""
    depths = sorted({p.depth for p in points})
    fits = {}
    for d in depths:
        sel = [p for p in points if p.depth == d]
        fits[d] = fit_line([p.speed ** 2 for p in sel], [p.fz for p in sel], d)
    rep = VerticalReport(fits)
    if len(depths) < 2:
        warnings.warn("single depth: cross-depth checks skipped", stacklevel=2)
        return rep
    means = [np.mean([p.fz for p in points if p.depth == d]) for d in depths]
    rep.monotone_mean = bool(np.all(np.diff(means) > 0))
    rep.f0_vs_depth = fit_line(depths, [fits[d].coef[0] for d in depths])
    ok, n = True, 0
    bins = {}
    for p in points:
        bins.setdefault(int(p.speed // bin_width), {}).setdefault(p.depth, []).append(p.fz)
    for b in sorted(bins):
        per = bins[b]
        if len(per) < 2:
            continue
        n += 1
        vals = [np.mean(per[d]) for d in sorted(per)]
        ok &= bool(np.all(np.diff(vals) > 0))
    rep.bin_ordering, rep.bins_checked = (ok if n else None), n
    return rep


# -- predictors ----------------------------------------------------------------------

class Predictor(Protocol):
    def predict(self, v_body: np.ndarray, z_water: np.ndarray, depth: float,
                rho: float) -> np.ndarray:
        """Per-surface forces (N, K, 3) in newtons."""


class SurrogatePredictor:
    def __init__(self, pipeline):
        self.pipeline = pipeline

    def predict(self, v_body, z_water, depth, rho):
        return self.pipeline.batch(v_body, depth, rho, z_water)


class OraclePredictor:
    """Noise-free synthetic oracle; the reference the surrogate was trained against."""

    def __init__(self, vehicle):
        self.vehicle = vehicle

    def predict(self, v_body, z_water, depth, rho):
        spec, patches = self.vehicle.spec, self.vehicle.patches
        sf, sd = ft.submergence_state(patches, spec, z_water)
        out = np.empty((len(v_body), spec.K, 3))
        for i, v in enumerate(np.asarray(v_body)):
            d, b = oracle_steady(patches, spec, v, rho, sf[i], sd[i])
            out[i] = d + b
        return out


# -- synthetic trials -------------------------------------------------------------------

def synth_ramp_trace(depth: float, speed: float, ride_height: float, direction: str = "ramp-in",
                     slope_deg: float = 10.0, ramp_len: float = 2.0, flat_len: float = 3.0,
                     rate: float = 120.0, jitter: float = 0.002, seed=0,
                     marker_to_origin=R_CP) -> tuple[TrialTrace, tuple[float, float]]:
    """Ramp down, flat floor, ramp up at constant path speed.

    ``ride_height`` is the altitude of the body origin above the floor.
    Returns the trace (marker pose, jittered timestamps) and the flat-segment
    time interval.
    """
    a = np.radians(slope_deg)
    t1 = ramp_len / speed
    t2 = t1 + flat_len / speed
    t3 = t2 + ramp_len / speed
    n = int(t3 * rate) + 1
    rng = np.random.default_rng(seed)
    t = np.arange(n) / rate + rng.uniform(-jitter, jitter, n)
    t[0], t[-1] = 0.0, min(t3, (n - 1) / rate)
    t = np.sort(t)
    x, z, pitch = trajectory(t, speed, a, t1, t2, ramp_len, ride_height)
    q = quat_from_axis_angle([0.0, 1.0, 0.0], pitch)
    R = quat_to_matrix(q)
    origin = np.column_stack([x, np.zeros_like(x), z])
    marker = origin - R @ np.asarray(marker_to_origin, dtype=np.float64)
    meta = {"command_speed": speed, "slope_deg": slope_deg}
    return TrialTrace(t, marker, q, depth, direction, meta), (t1, t2)


def trajectory(t, speed, slope, t1, t2, ramp_len, ride_height):
    """Body-origin x, z and pitch (positive nose-down about +Y) along ramp-flat-ramp."""
    t = np.asarray(t, dtype=np.float64)
    drop = ramp_len * np.sin(slope)
    run = ramp_len * np.cos(slope)
    x = np.where(t < t1, speed * np.cos(slope) * t,
                 np.where(t < t2, run + speed * (t - t1),
                          run + speed * (t2 - t1) + speed * np.cos(slope) * (t - t2)))
    z = ride_height + np.where(t < t1, drop - speed * np.sin(slope) * t,
                               np.where(t < t2, 0.0, speed * np.sin(slope) * (t - t2)))
    pitch = np.where(t < t1, slope, np.where(t < t2, 0.0, -slope))
    return x, z, pitch


def trajectory_velocity(t, speed, slope, t1, t2):
    """Analytic world velocity of the body origin for ``trajectory``."""
    t = np.asarray(t, dtype=np.float64)
    vx = np.where((t >= t1) & (t < t2), speed, speed * np.cos(slope))
    vz = np.where(t < t1, -speed * np.sin(slope), np.where(t < t2, 0.0, speed * np.sin(slope)))
    return np.column_stack([vx, np.zeros_like(t), vz])


def synth_campaign(ride_height: float, depths_in=(4, 8, 10), speeds=None, seed: int = 0,
                   speed_jitter: float = 0.05, **kw) -> list[TrialTrace]:
    """Constant-depth trials at every speed for every depth, alternating ramp direction."""
    speeds = np.linspace(0.6, 3.6, 10) if speeds is None else np.asarray(speeds)
    rng = np.random.default_rng(seed)
    out = []
    for d in depths_in:
        for i, s in enumerate(speeds):
            s = float(s + rng.uniform(-speed_jitter, speed_jitter))
            tr, _ = synth_ramp_trace(d * INCH, s, ride_height,
                                     "ramp-in" if i % 2 == 0 else "ramp-out",
                                     seed=int(rng.integers(2**31)), **kw)
            out.append(tr)
    return out


def write_trace(path: str | Path, trace: TrialTrace) -> None:
    meta = {"depth": trace.depth, "direction": trace.direction, **trace.meta}
    lines = [f"# {k}={v}" for k, v in meta.items()] + ["t,x,y,z,qw,qx,qy,qz"]
    data = np.column_stack([trace.t, trace.pos, trace.quat])
    lines += [",".join(repr(float(x)) for x in row) for row in data]
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace(path: str | Path) -> TrialTrace:
    meta, rows = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k.strip()] = v.strip()
        elif line and not line.startswith("t,"):
            rows.append([float(x) for x in line.split(",")])
    if "depth" not in meta or not rows:
        raise ValueError(f"{path}: trace needs a depth header and data rows")
    data = np.array(rows)
    depth = float(meta.pop("depth"))
    direction = meta.pop("direction", "ramp-in")
    return TrialTrace(data[:, 0], data[:, 1:4], data[:, 4:8], depth, direction, meta)


# -- suite -------------------------------------------------------------------------

def process_trace(trace: TrialTrace, predictor: Predictor, rho: float, cfg: dict
                  ) -> list[PlanarSection]:
    tr = resample_uniform(trace, cfg["rate_hz"], cfg["gap_periods"])
    kin = trace_kinematics(tr, cfg["savgol_window"], cfg["savgol_order"], cfg["r_cp"])
    sections = extract_planar_sections(tr.t, kin.v_world, kin.v_body, cfg["min_duration"],
                                       cfg["vz_limit"])
    if not sections:
        return []
    zw = water_level_series(tr, tr.depth, cfg["r_cp"])
    F = predictor.predict(kin.v_body, zw, tr.depth, rho).sum(axis=1)
    return [replace(s, fx=F[s.start:s.stop, 0], fz=F[s.start:s.stop, 2]) for s in sections]


def run_validation_suite(predictor: Predictor, traces: Sequence[TrialTrace], spec,
                         rho: float = 1000.0, config: dict | None = None) -> dict:
    """Preprocess, predict, fit, and grade against the configured thresholds."""
    cfg = load_defaults()["validation"]
    cfg.update(config or {})
    points = []
    for tr in traces:
        for s in process_trace(tr, predictor, rho, cfg):
            points.append(TrialPoint(tr.depth, s.mean_speed, s.mean_fx, s.mean_fz, tr.direction))
    report = {"n_traces": len(traces), "n_sections": len(points), "rho": rho,
              "thresholds": {"drag_r2_min": cfg["drag_r2_min"],
                             "buoyancy_r2_min": cfg["buoyancy_r2_min"]},
              "drag": {"fits": [], "pairs": [], "monotone_cd_eff": None, "pass": False},
              "buoyancy": {"fits": [], "f0_vs_depth_r2": None, "monotone_mean": None,
                           "bin_ordering": None, "pass": False},
              "points": [p.__dict__ for p in points], "flags": []}
    if not points:
        report["flags"].append("no qualifying planar sections")
        return report
    depths = sorted({p.depth for p in points})
    fits = {}
    for d in depths:
        sel = [p for p in points if p.depth == d]
        try:
            fits[d] = fit_drag([p.speed ** 2 for p in sel], [abs(p.fx) for p in sel], d)
        except DegenerateFitError as e:
            report["flags"].append(f"drag fit at depth {d}: {e}")
            continue
        c = fits[d].coef[0]
        entry = {"depth": d, "c_eff": c, "r2": fits[d].r2, "n": fits[d].n}
        if c > 0:
            entry["cd"] = physical_cd(c, rho, spec.W_ref, d)
        else:
            report["flags"].append(f"degenerate drag at depth {d} (C_eff = {c})")
        report["drag"]["fits"].append(entry)
    drag_ok = len(fits) == len(depths) and all(f.r2 >= cfg["drag_r2_min"] and f.coef[0] > 0
                                               for f in fits.values())
    if len(fits) >= 2:
        cs = [fits[d].coef[0] for d in sorted(fits)]
        report["drag"]["monotone_cd_eff"] = bool(np.all(np.diff(cs) > 0))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report["drag"]["pairs"] = matched_pair_check(
                [p for p in points if p.depth in fits], fits, cfg["pair_speed_tol"],
                cfg["pair_min_speed"])
        drag_ok &= report["drag"]["monotone_cd_eff"]
    report["drag"]["pass"] = bool(drag_ok)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            vert = fit_vertical(points)
        except DegenerateFitError as e:
            report["flags"].append(f"vertical fit: {e}")
            return report
    report["buoyancy"]["fits"] = [{"depth": d, "f0": f.coef[0], "c_lift": f.coef[1], "r2": f.r2,
                                   "n": f.n} for d, f in vert.fits.items()]
    report["buoyancy"]["monotone_mean"] = vert.monotone_mean
    report["buoyancy"]["bin_ordering"] = vert.bin_ordering
    if vert.f0_vs_depth is not None:
        report["buoyancy"]["f0_vs_depth_r2"] = vert.f0_vs_depth.r2
        f0 = [vert.fits[d].coef[0] for d in depths]
        report["buoyancy"]["monotone_f0"] = bool(np.all(np.diff(f0) > 0))
        report["buoyancy"]["pass"] = bool(vert.f0_vs_depth.r2 >= cfg["buoyancy_r2_min"]
                                          and report["buoyancy"]["monotone_f0"])
    return report


def write_report(path: str | Path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True, default=float))
