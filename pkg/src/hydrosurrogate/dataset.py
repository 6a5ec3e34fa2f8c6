"""Case histories, sectioning, symmetry augmentation, normalization and splits.

Case records come either from the synthetic oracle campaign below or from
external CSV exports.  Records start in the solver frame (Z along the flow,
Y up) and are converted once to the vehicle body frame (X forward, Y left,
Z up) before sectioning.
"""
from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import qmc

from . import features as ft
from .defaults import load_defaults
from .geometry import SurfacePatch, VehicleSpec

SOLVER_FRAME = "solver"
VEHICLE_FRAME = "vehicle"
# vehicle = R @ solver; solver X -> -Y, solver Y (up) -> +Z, solver Z (flow) -> -X
SOLVER_TO_VEHICLE = np.array([[0.0, 0.0, -1.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
DEFAULT_GRAVITY = np.array([0.0, 0.0, -ft.G_STANDARD])

DRAG_COEFFS = {"bottom": 0.4, "front": 1.1, "rear": 0.9, "side": 0.7, "wheel": 1.0}
NOISE_LEVEL = 0.03
TRANSIENT_TAU = 0.2
T_END = 4.0
T_CUT = 2.0
N_SECTIONS = 20
SIGMA_FLOOR = 1e-8
PARAM_NAMES = ("speed", "angle_deg", "rho", "depth")
AUG_TAGS = ("none", "mirror", "reverse", "mirror+reverse")


class FrameError(ValueError):
    pass


class DataError(ValueError):
    pass


# -- records and samples -----------------------------------------------------

@dataclass
class CaseRecord:
    """Force history of one case: ``forces`` is (T, K, 3) sampled at ``dt``."""
    case_id: str
    vehicle: str
    speed: float
    angle_deg: float
    rho: float
    depth: float
    dt: float
    surface_names: tuple[str, ...]
    forces: np.ndarray
    frame: str = SOLVER_FRAME
    gravity: np.ndarray | None = None

    def __post_init__(self):
        self.forces = np.asarray(self.forces, dtype=np.float64)
        if self.forces.ndim != 3 or self.forces.shape[1:] != (len(self.surface_names), 3):
            raise DataError(f"{self.case_id}: forces shape {self.forces.shape} does not match "
                            f"{len(self.surface_names)} surfaces")
        if self.gravity is None:
            self.gravity = (SOLVER_TO_VEHICLE.T @ DEFAULT_GRAVITY if self.frame == SOLVER_FRAME
                            else DEFAULT_GRAVITY.copy())
        self.gravity = np.asarray(self.gravity, dtype=np.float64)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.forces)) * self.dt

    @property
    def velocity(self) -> np.ndarray:
        """Fluid velocity in the solver frame, vehicle velocity in the vehicle frame."""
        u = self.speed * np.array([np.cos(np.radians(self.angle_deg)), 0.0,
                                   np.sin(np.radians(self.angle_deg))])
        if self.frame == SOLVER_FRAME:
            return u
        return -SOLVER_TO_VEHICLE @ u

    def params(self) -> dict:
        return {k: getattr(self, k) for k in PARAM_NAMES}


def vehicle_velocity(speed: float, angle_deg: float) -> np.ndarray:
    """Vehicle velocity for fluid moving at ``angle_deg`` in the solver X-Z plane."""
    a = np.radians(angle_deg)
    return speed * np.array([np.sin(a), np.cos(a), 0.0])


@dataclass(frozen=True)
class Sample:
    """One section-averaged, vehicle-frame training sample.

    ``targets`` are per-surface forces divided by density (K, 3).
    """
    case_id: str
    vehicle: str
    section: int
    v: np.ndarray
    rho: float
    depth: float
    z_water: float
    gravity: np.ndarray
    sub_frac: np.ndarray
    sub_depth_norm: np.ndarray
    targets: np.ndarray
    mirrored: bool = False
    reversed: bool = False

    @property
    def tag(self) -> str:
        if self.mirrored and self.reversed:
            return "mirror+reverse"
        return "mirror" if self.mirrored else "reverse" if self.reversed else "none"

    @property
    def speed(self) -> float:
        return float(np.sqrt(self.v[0] ** 2 + self.v[1] ** 2 + self.v[2] ** 2))

    @property
    def forces(self) -> np.ndarray:
        return self.targets * self.rho


def to_vehicle_frame(record: CaseRecord) -> CaseRecord:
    if record.frame != SOLVER_FRAME:
        raise FrameError(f"{record.case_id}: record is already in the {record.frame} frame")
    R = SOLVER_TO_VEHICLE
    return replace(record, forces=record.forces @ R.T, gravity=R @ record.gravity,
                   frame=VEHICLE_FRAME)


def section_average(record: CaseRecord, spec: VehicleSpec, patches: Sequence[SurfacePatch],
                    t_cut: float = T_CUT, n_sections: int = N_SECTIONS) -> list[Sample]:
    """Drop steps with t <= t_cut and average the rest in equal windows."""
    if record.frame != VEHICLE_FRAME:
        raise FrameError(f"{record.case_id}: convert to the vehicle frame before sectioning")
    if tuple(record.surface_names) != spec.patch_names:
        raise DataError(f"{record.case_id}: surface names do not match vehicle {spec.name}")
    keep = record.times > t_cut + 1e-9 * record.dt
    tail = record.forces[keep]
    n = len(tail)
    if n < n_sections:
        raise DataError(f"{record.case_id}: only {n} steps after t_cut={t_cut}, "
                        f"need at least {n_sections}")
    if n % n_sections:
        raise DataError(f"{record.case_id}: {n} retained steps do not split into "
                        f"{n_sections} equal sections")
    means = tail.reshape(n_sections, n // n_sections, *tail.shape[1:]).mean(axis=1)
    z_water = spec.z_0 + record.depth
    sf, sd = ft.submergence_state(patches, spec, z_water)
    v = record.velocity
    return [Sample(record.case_id, record.vehicle, i, v.copy(), record.rho, record.depth,
                   z_water, record.gravity.copy(), sf[0].copy(), sd[0].copy(),
                   means[i] / record.rho)
            for i in range(n_sections)]


# -- symmetry augmentation ---------------------------------------------------

def _permutation(spec: VehicleSpec, pairs, fixed, what: str) -> np.ndarray:
    perm = -np.ones(spec.K, dtype=np.int64)
    for a, b in pairs:
        ia, ib = spec.index(a), spec.index(b)
        perm[ia], perm[ib] = ib, ia
    for name in fixed:
        perm[spec.index(name)] = spec.index(name)
    missing = [spec.patch_names[i] for i in np.flatnonzero(perm < 0)]
    if missing:
        raise DataError(f"{spec.name}: patches {missing} have no {what} partner and are not "
                        f"on the {what} plane")
    return perm


def mirror_permutation(spec: VehicleSpec) -> np.ndarray:
    return _permutation(spec, spec.mirror_pairs, spec.symmetry_plane_patches, "mirror")


def reverse_permutation(spec: VehicleSpec) -> np.ndarray:
    return _permutation(spec, spec.swap_pairs, spec.transverse_plane_patches, "reverse")


_FLIP_Y = np.array([1.0, -1.0, 1.0])
_FLIP_X = np.array([-1.0, 1.0, 1.0])


def _reflect(sample: Sample, perm: np.ndarray, flip: np.ndarray, **tags) -> Sample:
    return replace(sample, v=sample.v * flip, gravity=sample.gravity * flip,
                   sub_frac=sample.sub_frac[perm], sub_depth_norm=sample.sub_depth_norm[perm],
                   targets=sample.targets[perm] * flip, **tags)


def mirror_lateral(sample: Sample, spec: VehicleSpec) -> Sample:
    """Reflect across the longitudinal symmetry plane and swap left/right patches."""
    return _reflect(sample, mirror_permutation(spec), _FLIP_Y, mirrored=not sample.mirrored)


def reverse_longitudinal(sample: Sample, spec: VehicleSpec) -> Sample:
    """Reverse the direction of travel and swap front/rear patches."""
    return _reflect(sample, reverse_permutation(spec), _FLIP_X, reversed=not sample.reversed)


def augment(samples: Iterable[Sample], specs: dict[str, VehicleSpec]) -> list[Sample]:
    """Original, mirrored, reversed and mirrored+reversed copies of every sample."""
    out = []
    for s in samples:
        spec = specs[s.vehicle]
        m = mirror_lateral(s, spec)
        out += [s, m, reverse_longitudinal(s, spec), reverse_longitudinal(m, spec)]
    return out


# -- normalization -----------------------------------------------------------

@dataclass
class NormStats:
    mu_G: np.ndarray
    sigma_G: np.ndarray
    mu_Y: np.ndarray
    sigma_Y: np.ndarray
    global_features: tuple[str, ...] = ft.GLOBAL_FEATURES

    @classmethod
    def from_arrays(cls, G: np.ndarray, Y: Sequence[np.ndarray],
                    global_features: Sequence[str] = ft.GLOBAL_FEATURES,
                    floor: float = SIGMA_FLOOR) -> "NormStats":
        """``G`` is (N, D_g); ``Y`` is a list of (N_v, K_v, 3) target blocks pooled over surfaces."""
        G = np.asarray(G, dtype=np.float64)
        if len(G) == 0:
            raise DataError("cannot fit normalization statistics on an empty training split")
        Yf = np.concatenate([np.asarray(y).reshape(-1, 3) for y in Y])
        mu_G, sd_G = G.mean(axis=0), G.std(axis=0)
        mu_Y, sd_Y = Yf.mean(axis=0), Yf.std(axis=0)
        names = tuple(global_features) + ("Y_x", "Y_y", "Y_z")
        low = [n for n, s in zip(names, np.concatenate([sd_G, sd_Y])) if s < floor]
        if low:
            warnings.warn(f"near-constant columns {low}: standard deviation floored at {floor}",
                          stacklevel=2)
        return cls(mu_G, np.maximum(sd_G, floor), mu_Y, np.maximum(sd_Y, floor),
                   tuple(global_features))

    @property
    def constant_G(self) -> np.ndarray:
        """Columns that never varied in training (sigma at the floor)."""
        return self.sigma_G <= SIGMA_FLOOR

    def normalize_G(self, G):
        # a column constant in training only ever fed the network zeros, and its
        # input weights never received a gradient; keep it at zero off-support too
        return np.where(self.constant_G, 0.0, (G - self.mu_G) / self.sigma_G)

    def normalize_Y(self, Y):
        return (Y - self.mu_Y) / self.sigma_Y

    def denormalize_Y(self, Yn):
        return Yn * self.sigma_Y + self.mu_Y

    def to_dict(self) -> dict:
        return {"mu_G": self.mu_G.tolist(), "sigma_G": self.sigma_G.tolist(),
                "mu_Y": self.mu_Y.tolist(), "sigma_Y": self.sigma_Y.tolist(),
                "global_features": list(self.global_features)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.array(d["mu_G"], dtype=np.float64), np.array(d["sigma_G"], dtype=np.float64),
                   np.array(d["mu_Y"], dtype=np.float64), np.array(d["sigma_Y"], dtype=np.float64),
                   tuple(d["global_features"]))


def feature_columns(names: Sequence[str]) -> np.ndarray:
    unknown = [n for n in names if n not in ft.GLOBAL_FEATURES]
    if unknown:
        raise DataError(f"unknown global features {unknown}")
    return np.array([ft.GLOBAL_FEATURES.index(n) for n in names])


def sample_globals(samples: Sequence[Sample], spec: VehicleSpec,
                   names: Sequence[str] = ft.GLOBAL_FEATURES) -> np.ndarray:
    if not samples:
        return np.zeros((0, len(names)))
    G = ft.global_features_batch(np.array([s.v for s in samples]), [s.rho for s in samples],
                                 [s.depth for s in samples], spec,
                                 gravity=np.array([s.gravity for s in samples]))
    return G[:, feature_columns(names)]


def fit_norm_stats(train: Sequence[Sample], specs: dict[str, VehicleSpec],
                   global_features: Sequence[str] = ft.GLOBAL_FEATURES) -> NormStats:
    if not train:
        raise DataError("cannot fit normalization statistics on an empty training split")
    G, Y = [], []
    for name, group in group_by_vehicle(train).items():
        G.append(sample_globals(group, specs[name], global_features))
        Y.append(np.array([s.targets for s in group]))
    return NormStats.from_arrays(np.concatenate(G), Y, global_features)


def group_by_vehicle(samples: Iterable[Sample]) -> dict[str, list[Sample]]:
    out: dict[str, list[Sample]] = {}
    for s in samples:
        out.setdefault(s.vehicle, []).append(s)
    return out


def split_dataset(samples: Sequence[Sample], fraction: float = 0.8, seed: int = 0
                  ) -> tuple[list[Sample], list[Sample]]:
    """Seeded split grouped by case id so no case straddles train and val.

    Cases are split per vehicle so every vehicle with at least two cases has
    cases on both sides.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("split fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_ids = set()
    for name in sorted({s.vehicle for s in samples}):
        cases = sorted({s.case_id for s in samples if s.vehicle == name})
        n_train = int(round(fraction * len(cases)))
        if len(cases) >= 2:
            n_train = min(max(n_train, 1), len(cases) - 1)
        order = rng.permutation(len(cases))
        train_ids.update(cases[i] for i in order[:n_train])
    train = [s for s in samples if s.case_id in train_ids]
    val = [s for s in samples if s.case_id not in train_ids]
    return train, val


# -- tensors for the network -------------------------------------------------

@dataclass
class TensorSet:
    """Stacked arrays for one vehicle: raw surface features and normalized G and Y."""
    vehicle: str
    G: np.ndarray          # (N, D_g) normalized
    S: np.ndarray          # (N, K, D_s) physical units
    Y: np.ndarray          # (N, K, 3) normalized targets
    sub_frac: np.ndarray   # (N, K)
    rho: np.ndarray        # (N,)
    case_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=object))

    def __len__(self) -> int:
        return len(self.G)

    @property
    def K(self) -> int:
        return self.S.shape[1]

    def subset(self, idx) -> "TensorSet":
        return TensorSet(self.vehicle, self.G[idx], self.S[idx], self.Y[idx], self.sub_frac[idx],
                         self.rho[idx], self.case_ids[idx] if len(self.case_ids) else self.case_ids)


def build_tensors(samples: Sequence[Sample], spec: VehicleSpec, patches: Sequence[SurfacePatch],
                  stats: NormStats) -> TensorSet:
    if any(s.vehicle != spec.name for s in samples):
        raise DataError(f"samples for other vehicles passed to the {spec.name} tensor builder")
    G = sample_globals(samples, spec, stats.global_features)
    v = np.array([s.v for s in samples]).reshape(-1, 3)
    sf = np.array([s.sub_frac for s in samples]).reshape(-1, spec.K)
    sd = np.array([s.sub_depth_norm for s in samples]).reshape(-1, spec.K)
    S = ft.surface_features_from_state(patches, spec, sf, sd, v)
    Y = np.array([s.targets for s in samples]).reshape(-1, spec.K, 3)
    return TensorSet(spec.name, stats.normalize_G(G), S, stats.normalize_Y(Y), sf,
                     np.array([s.rho for s in samples], dtype=np.float64),
                     np.array([s.case_id for s in samples], dtype=object))


def build_tensor_sets(samples: Sequence[Sample], vehicles: dict, stats: NormStats
                      ) -> list[TensorSet]:
    """One TensorSet per vehicle; ``vehicles`` maps name -> object with ``spec`` and ``patches``."""
    return [build_tensors(group, vehicles[name].spec, vehicles[name].patches, stats)
            for name, group in sorted(group_by_vehicle(samples).items())]


# -- synthetic oracle --------------------------------------------------------

def oracle_steady(patches: Sequence[SurfacePatch], spec: VehicleSpec, v, rho: float,
                  sub_frac: np.ndarray, sub_depth_norm: np.ndarray, g=ft.G_STANDARD
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free per-surface drag and buoyancy (each (K, 3), newtons)."""
    v = np.asarray(v, dtype=np.float64)
    g_eff = abs(float(np.asarray(g)[2])) if np.ndim(g) else abs(float(g))
    speed = np.linalg.norm(v)
    c = np.array([DRAG_COEFFS[p.semantic_type] for p in patches])
    normals = np.array([p.normal for p in patches])
    areas = np.array([p.area for p in patches])
    a_proj = ft.projected_area_batch(normals, areas, v)[0]
    drag = (-0.5 * rho * c * a_proj * sub_frac * speed)[:, None] * v[None, :]
    buoy = np.zeros((len(patches), 3))
    buoy[:, 2] = rho * g_eff * areas * sub_frac * sub_depth_norm * spec.H_sub
    return drag, buoy


def oracle_forces(patches: Sequence[SurfacePatch], spec: VehicleSpec, v, rho: float,
                  z_water: float, g=ft.G_STANDARD, noise_seed=None,
                  noise: float = NOISE_LEVEL) -> np.ndarray:
    """Per-surface forces (K, 3) of the synthetic oracle; noise only if a seed is given."""
    sf, sd = ft.submergence_state(patches, spec, z_water)
    drag, buoy = oracle_steady(patches, spec, v, rho, sf[0], sd[0], g)
    F = drag + buoy
    if noise_seed is not None and noise > 0:
        rng = np.random.default_rng(noise_seed)
        F = F + noise * np.abs(F) * rng.standard_normal(F.shape)
    return F


def oracle_drag_coefficient(patches: Sequence[SurfacePatch], spec: VehicleSpec, z_water: float,
                            rho: float = 1000.0) -> float:
    """Closed-form |F_x| / v^2 for straight-ahead motion at a fixed water level."""
    sf, _ = ft.submergence_state(patches, spec, z_water)
    drag, _ = oracle_steady(patches, spec, np.array([1.0, 0.0, 0.0]), rho, sf[0],
                            np.zeros(spec.K))
    return float(abs(drag[:, 0].sum()))


def oracle_buoyancy(patches: Sequence[SurfacePatch], spec: VehicleSpec, z_water: float,
                    rho: float = 1000.0, g=ft.G_STANDARD) -> float:
    """Closed-form total vertical (hydrostatic) force at a fixed water level."""
    sf, sd = ft.submergence_state(patches, spec, z_water)
    _, buoy = oracle_steady(patches, spec, np.zeros(3), rho, sf[0], sd[0], g)
    return float(buoy[:, 2].sum())


def latin_hypercube(ranges: dict, n: int, seed) -> np.ndarray:
    """(n, len(PARAM_NAMES)) design, one point per stratum of every 1-D margin."""
    lo = np.array([ranges[k][0] for k in PARAM_NAMES], dtype=np.float64)
    hi = np.array([ranges[k][1] for k in PARAM_NAMES], dtype=np.float64)
    if np.any(hi < lo):
        bad = [k for k, a, b in zip(PARAM_NAMES, lo, hi) if b < a]
        raise ValueError(f"parameter ranges with min > max: {bad}")
    unit = qmc.LatinHypercube(d=len(PARAM_NAMES), seed=np.random.default_rng(seed)).random(n)
    return lo + unit * (hi - lo)


def campaign_ranges(vehicle: str) -> dict:
    return load_defaults()["campaign"]["ranges"][vehicle]


def synth_record(case_id: str, vehicle, params: dict, dt: float, seed,
                 t_end: float = T_END, noise: float = NOISE_LEVEL,
                 tau: float = TRANSIENT_TAU) -> CaseRecord:
    """Solver-frame history: steady oracle forces with a start-up ramp and per-step noise."""
    spec, patches = vehicle.spec, vehicle.patches
    v = vehicle_velocity(params["speed"], params["angle_deg"])
    F = oracle_forces(patches, spec, v, params["rho"], spec.z_0 + params["depth"])
    n_steps = int(round(t_end / dt)) + 1
    t = np.arange(n_steps) * dt
    ramp = 1.0 - np.exp(-t / tau)
    rng = np.random.default_rng(seed)
    hist = ramp[:, None, None] * F[None] + noise * np.abs(F)[None] * rng.standard_normal(
        (n_steps,) + F.shape)
    hist_solver = hist @ SOLVER_TO_VEHICLE  # row-wise R.T @ f
    return CaseRecord(case_id, spec.name, float(params["speed"]), float(params["angle_deg"]),
                      float(params["rho"]), float(params["depth"]), dt, spec.patch_names,
                      hist_solver)


def generate_campaign(vehicle, ranges: dict | None = None, n_cases: int = 175, seed: int = 0,
                      dt: float | None = None, t_end: float = T_END, noise: float = NOISE_LEVEL,
                      jobs: int = 1) -> list[CaseRecord]:
    """LHS campaign of oracle force histories (solver frame)."""
    spec = vehicle.spec
    defaults = load_defaults()["campaign"]
    ranges = ranges or defaults["ranges"][spec.name]
    dt = dt or defaults["dt"].get(spec.name, 0.02)
    design = latin_hypercube(ranges, n_cases, seed)
    seeds = np.random.SeedSequence(seed).spawn(n_cases)

    def one(i):
        params = dict(zip(PARAM_NAMES, design[i]))
        return synth_record(f"{spec.name}-s{seed}-{i:04d}", vehicle, params, dt, seeds[i],
                            t_end, noise)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(one, range(n_cases)))
    return [one(i) for i in range(n_cases)]


def records_to_samples(records: Sequence[CaseRecord], vehicle, t_cut: float = T_CUT,
                       n_sections: int = N_SECTIONS) -> list[Sample]:
    out = []
    for r in records:
        rv = to_vehicle_frame(r) if r.frame == SOLVER_FRAME else r
        out += section_average(rv, vehicle.spec, vehicle.patches, t_cut, n_sections)
    return out


# -- case files --------------------------------------------------------------

_META_KEYS = ("case_id", "vehicle", "speed", "angle_deg", "rho", "depth", "dt", "frame", "gravity")


def write_case(path: str | Path, record: CaseRecord) -> None:
    meta = {k: getattr(record, k) for k in _META_KEYS}
    meta["gravity"] = " ".join(repr(float(x)) for x in record.gravity)
    lines = [f"# {k}={v}" for k, v in meta.items()]
    cols = ["t"] + [f"{n}.F{c}" for n in record.surface_names for c in "xyz"]
    lines.append(",".join(cols))
    data = np.column_stack([record.times, record.forces.reshape(len(record.forces), -1)])
    lines += [",".join(repr(float(x)) for x in row) for row in data]
    Path(path).write_text("\n".join(lines) + "\n")


def read_case(path: str | Path) -> CaseRecord:
    meta, header, rows = {}, None, []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k.strip()] = v.strip()
        elif header is None:
            header = line.split(",")
        else:
            rows.append([float(x) for x in line.split(",")])
    missing = [k for k in _META_KEYS if k not in meta]
    if header is None or missing or header[0] != "t":
        raise DataError(f"{path}: malformed case file (missing {missing or 'header'})")
    names = []
    for col in header[1:]:
        name = col.rsplit(".", 1)[0]
        if name not in names:
            names.append(name)
    data = np.array(rows)
    if data.shape[1] != 1 + 3 * len(names):
        raise DataError(f"{path}: {data.shape[1]} columns for {len(names)} surfaces")
    dt = float(meta["dt"])
    if len(data) > 1 and not np.allclose(np.diff(data[:, 0]), dt, rtol=0, atol=1e-9):
        raise DataError(f"{path}: timestep is not uniform")
    return CaseRecord(meta["case_id"], meta["vehicle"], float(meta["speed"]),
                      float(meta["angle_deg"]), float(meta["rho"]), float(meta["depth"]), dt,
                      tuple(names), data[:, 1:].reshape(len(data), len(names), 3),
                      frame=meta["frame"],
                      gravity=np.array([float(x) for x in meta["gravity"].split()]))


# -- bundles -----------------------------------------------------------------

_SAMPLE_ARRAYS = ("v", "gravity", "sub_frac", "sub_depth_norm", "targets")
_SAMPLE_SCALARS = ("section", "rho", "depth", "z_water", "mirrored", "reversed")


def save_samples(path: str | Path, samples: Sequence[Sample]) -> None:
    arrays = {}
    for name, group in group_by_vehicle(samples).items():
        for f in _SAMPLE_ARRAYS + _SAMPLE_SCALARS:
            arrays[f"{name}/{f}"] = np.array([getattr(s, f) for s in group])
        arrays[f"{name}/case_id"] = np.array([s.case_id for s in group], dtype=str)
    np.savez(path, **arrays)


def load_samples(path: str | Path) -> list[Sample]:
    out = []
    with np.load(path) as z:
        vehicles = sorted({k.split("/")[0] for k in z.files})
        for name in vehicles:
            cols = {f: z[f"{name}/{f}"] for f in _SAMPLE_ARRAYS + _SAMPLE_SCALARS + ("case_id",)}
            for i in range(len(cols["case_id"])):
                out.append(Sample(str(cols["case_id"][i]), name, int(cols["section"][i]),
                                  cols["v"][i], float(cols["rho"][i]), float(cols["depth"][i]),
                                  float(cols["z_water"][i]), cols["gravity"][i],
                                  cols["sub_frac"][i], cols["sub_depth_norm"][i],
                                  cols["targets"][i], bool(cols["mirrored"][i]),
                                  bool(cols["reversed"][i])))
    return out


def save_bundle(root: str | Path, train: Sequence[Sample], val: Sequence[Sample],
                stats: NormStats, manifest: dict) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    save_samples(root / "train.npz", train)
    save_samples(root / "val.npz", val)
    (root / "norm_stats.json").write_text(json.dumps(stats.to_dict(), indent=2))
    (root / "manifest.json").write_text(json.dumps(
        {"schema": ft.SCHEMA_VERSION, **manifest}, indent=2, sort_keys=True))
    return root


def load_bundle(root: str | Path) -> tuple[list[Sample], list[Sample], NormStats, dict]:
    root = Path(root)
    if not (root / "manifest.json").exists():
        raise DataError(f"{root}: not a dataset bundle (manifest.json missing)")
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest.get("schema") != ft.SCHEMA_VERSION:
        raise DataError(f"{root}: feature schema {manifest.get('schema')!r}, "
                        f"expected {ft.SCHEMA_VERSION!r}")
    stats = NormStats.from_dict(json.loads((root / "norm_stats.json").read_text()))
    return load_samples(root / "train.npz"), load_samples(root / "val.npz"), stats, manifest


# -- patch merging (ablation) ------------------------------------------------

def merge_vehicle(vehicle, groups: dict[str, Sequence[str]]):
    """Vehicle with each group of patches collapsed into one patch named by the group key.

    Returns ``(merged_vehicle, index_groups)`` where ``index_groups[j]`` lists the
    original patch indices feeding merged patch ``j``.
    """
    from .vehicles import Vehicle

    spec, patches = vehicle.spec, vehicle.patches
    member = {m: g for g, ms in groups.items() for m in ms}
    new_names, index_groups = [], []
    for i, name in enumerate(spec.patch_names):
        g = member.get(name)
        if g is None:
            new_names.append(name)
            index_groups.append([i])
        elif g not in new_names:
            new_names.append(g)
            index_groups.append([spec.index(m) for m in groups[g]])
    new_patches = []
    for name, idx in zip(new_names, index_groups):
        parts = [patches[i] for i in idx]
        if len(parts) == 1:
            new_patches.append(parts[0])
            continue
        types = {p.semantic_type for p in parts}
        if len(types) != 1:
            raise DataError(f"merge group {name} mixes semantic types {sorted(types)}")
        a = np.array([p.area for p in parts])
        n = sum(w * p.normal for w, p in zip(a, parts))
        new_patches.append(SurfacePatch(
            name, parts[0].semantic_type, np.concatenate([p.face_ids for p in parts]),
            (a[:, None] * np.array([p.centroid for p in parts])).sum(0) / a.sum(),
            n / np.linalg.norm(n), float(a.sum()), any(p.normal_fallback for p in parts),
            np.concatenate([p.depth_samples for p in parts]),
            np.concatenate([p.sample_normals for p in parts]), parts[0].sample_seed))

    def rename(pairs):
        out = []
        for a, b in pairs:
            pa, pb = member.get(a, a), member.get(b, b)
            if (pa, pb) not in out:
                out.append((pa, pb))
        return tuple(out)

    def rename_set(names):
        return tuple(dict.fromkeys(member.get(n, n) for n in names))

    new_spec = replace(spec, name=spec.name, patch_names=tuple(new_names),
                       mirror_pairs=rename(spec.mirror_pairs), swap_pairs=rename(spec.swap_pairs),
                       symmetry_plane_patches=rename_set(spec.symmetry_plane_patches),
                       transverse_plane_patches=rename_set(spec.transverse_plane_patches),
                       extra={k: v for k, v in spec.extra.items() if k != "merge_groups"})
    return Vehicle(new_spec, vehicle.mesh, new_patches, vehicle.root), index_groups


def merge_samples(samples: Sequence[Sample], vehicle, index_groups) -> list[Sample]:
    """Area-weighted submergence and summed targets over each merge group."""
    areas = np.array([p.area for p in vehicle.patches])
    out = []
    for s in samples:
        sf, sd, tg = [], [], []
        for idx in index_groups:
            w = areas[idx] / areas[idx].sum()
            sf.append(float(w @ s.sub_frac[idx]))
            sd.append(float(w @ s.sub_depth_norm[idx]))
            tg.append(s.targets[idx].sum(axis=0))
        out.append(replace(s, sub_frac=np.array(sf), sub_depth_norm=np.array(sd),
                           targets=np.array(tg)))
    return out
