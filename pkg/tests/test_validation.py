import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import savgol_filter

from hydrosurrogate import validation as vl
from hydrosurrogate.defaults import load_defaults
from hydrosurrogate.vehicles import load_vehicle


def uniform_trace(n=240, rate=120.0, pos=None, quat=None, depth=0.1):
    t = np.arange(n) / rate
    pos = np.column_stack([0.5 * t, np.zeros(n), np.full(n, 0.3)]) if pos is None else pos
    quat = np.tile([1.0, 0, 0, 0], (n, 1)) if quat is None else quat
    return vl.TrialTrace(t, pos, quat, depth)


# -- quaternions -----------------------------------------------------------------

def test_quaternion_basics():
    q = vl.quat_from_axis_angle([0, 0, 1], np.pi / 2)
    assert np.allclose(vl.quat_to_matrix(q) @ [1, 0, 0], [0, 1, 0], atol=1e-15)
    assert np.allclose(vl.quat_mul(q, vl.quat_conj(q)), [1, 0, 0, 0], atol=1e-15)
    qs = np.array([[1, 0, 0, 0], [-1, 0, 0, 0.0]])
    assert np.array_equal(vl.align_hemisphere(qs)[1], [1, 0, 0, 0])


def test_slerp_midpoint():
    q0 = vl.quat_from_axis_angle([0, 1, 0], 0.0)
    q1 = vl.quat_from_axis_angle([0, 1, 0], 0.8)
    mid = vl.slerp(q0[None], q1[None], np.array([0.5]))[0]
    assert np.allclose(mid, vl.quat_from_axis_angle([0, 1, 0], 0.4), atol=1e-15)


# -- resampling --------------------------------------------------------------------

def test_resample_linear_exact():
    tr = vl.resample_uniform(uniform_trace(), 111.0)
    assert np.allclose(np.diff(tr.t), 1 / 111, rtol=0, atol=1e-12)
    assert np.allclose(tr.pos[:, 0], 0.5 * tr.t, rtol=0, atol=1e-14)
    assert np.allclose(tr.quat, [1, 0, 0, 0], atol=0)


def test_resample_jittered_grid():
    trace, _ = vl.synth_ramp_trace(0.1, 1.0, 0.3, seed=4)
    out = vl.resample_uniform(trace, 111.0)
    assert np.allclose(np.diff(out.t), 1 / 111, rtol=0, atol=1e-12)
    assert np.allclose(np.linalg.norm(out.quat, axis=1), 1.0, atol=1e-15)


def test_resample_idempotent():
    once = vl.resample_uniform(uniform_trace(300), 111.0)
    twice = vl.resample_uniform(once, 111.0)
    assert len(twice.t) == len(once.t)
    assert np.allclose(twice.pos, once.pos, atol=1e-12) and np.allclose(twice.quat, once.quat,
                                                                         atol=1e-12)


def test_resample_gap_and_rate():
    tr = uniform_trace(2400)
    t = tr.t.copy()
    t[100:] += 0.2
    with pytest.raises(vl.GapError, match="gaps"):
        vl.resample_uniform(vl.TrialTrace(t, tr.pos, tr.quat, 0.1), 111.0)
    slow = uniform_trace(rate=100.0)
    with pytest.raises(ValueError, match="below"):
        vl.resample_uniform(slow, 111.0)


def test_trace_validation():
    tr = uniform_trace(10)
    with pytest.raises(ValueError):
        vl.TrialTrace(tr.t[::-1], tr.pos, tr.quat, 0.1)
    with pytest.raises(ValueError):
        vl.TrialTrace(tr.t, tr.pos, tr.quat * 1.01, 0.1)


# -- Savitzky-Golay -------------------------------------------------------------------

def test_savgol_polynomials_exact():
    t = np.linspace(0, 3, 61)
    dt = t[1] - t[0]
    assert np.all(vl.savgol_derivative(np.full(61, 4.2), dt=dt) == 0.0)
    d = vl.savgol_derivative(1.5 - 0.7 * t, dt=dt)
    assert np.allclose(d, -0.7, rtol=0, atol=1e-12)
    d = vl.savgol_derivative(t ** 2, dt=dt)
    assert np.allclose(d[4:-4], 2 * t[4:-4], rtol=0, atol=1e-12)
    # the shrunken edge windows still reproduce a quadratic exactly
    assert np.allclose(d, 2 * t, rtol=0, atol=1e-10)


def test_savgol_matches_scipy_interior():
    y = np.random.default_rng(0).normal(size=80)
    for deriv in (0, 1):
        ours = vl.savgol(y, 9, 2, deriv, dt=0.01)
        ref = savgol_filter(y, 9, 2, deriv=deriv, delta=0.01)
        assert np.allclose(ours[4:-4], ref[4:-4], rtol=1e-12, atol=1e-12)


def test_savgol_errors():
    with pytest.raises(ValueError, match="odd"):
        vl.savgol(np.zeros(20), 8)
    with pytest.raises(ValueError):
        vl.savgol(np.zeros(5), 9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_savgol_quadratic_property(c):
    t = np.arange(40) * 0.05
    y = c[0] + c[1] * t + c[2] * t ** 2
    d = vl.savgol_derivative(y, dt=0.05)
    assert np.allclose(d[4:-4], c[1] + 2 * c[2] * t[4:-4], rtol=0, atol=1e-9)


# -- kinematics -----------------------------------------------------------------------

def test_com_examples():
    assert np.array_equal(vl.com_velocity([1.0, 2.0, 3.0], [0, 0, 0]), [1, 2, 3])
    assert np.allclose(vl.com_velocity([0, 0, 0], [0, 0, 1.0], [0.2, 0, -0.63]), [0, 0.2, 0])


def test_angular_velocity_constant_spin():
    w = np.array([0.1, -0.4, 0.7])
    t = np.linspace(0, 2, 201)
    ax = w / np.linalg.norm(w)
    q = np.array([vl.quat_from_axis_angle(ax, np.linalg.norm(w) * ti) for ti in t])
    qdot = np.array([0.5 * vl.quat_mul(np.concatenate([[0.0], w]), qi) for qi in q])
    ww, wb = vl.angular_velocity(q, qdot)
    assert np.allclose(ww, w, atol=1e-14) and np.allclose(wb, w, atol=1e-14)


def test_rigid_body_com_recovery():
    """Tracked marker on a spinning, translating body: COM velocity recovered in body axes."""
    rate, n = 120.0, 400
    t = np.arange(n) / rate
    v0 = np.array([0.8, 0.1, 0.0])
    wz = 0.6
    q = np.array([vl.quat_from_axis_angle([0, 0, 1], wz * ti) for ti in t])
    R = vl.quat_to_matrix(q)
    com = v0 * t[:, None]
    marker = com - R @ vl.R_CP
    kin = vl.trace_kinematics(vl.TrialTrace(t, marker, q, 0.1))
    true_body = np.einsum("nji,j->ni", R, v0)
    # marker path and orientation are smooth but not polynomial; interior only
    assert np.allclose(kin.v_body[10:-10], true_body[10:-10], atol=2e-4)
    assert np.allclose(kin.omega_body[10:-10], [0, 0, wz], atol=1e-4)


def test_rigid_body_exact_with_analytic_rates():
    rng = np.random.default_rng(2)
    for _ in range(20):
        w = rng.normal(size=3)
        q = vl.quat_from_axis_angle(rng.normal(size=3), rng.uniform(0, 3))
        R = vl.quat_to_matrix(q)
        v_com_world = rng.normal(size=3)
        # marker velocity = v_com - omega x (R r)
        v_marker = v_com_world - np.cross(w, R @ vl.R_CP)
        qdot = 0.5 * vl.quat_mul(np.concatenate([[0.0], w]), q)
        _, wb = vl.angular_velocity(q[None], qdot[None])
        got = vl.com_velocity(R.T @ v_marker, wb[0])
        assert np.allclose(got, R.T @ v_com_world, rtol=0, atol=1e-9)


def test_water_level():
    n = 50
    tr = uniform_trace(n, pos=np.tile([0.0, 0.0, 0.9], (n, 1)))
    # marker at 0.63 m above the origin (level) -> origin altitude 0.27
    assert np.allclose(vl.water_level_series(tr, 0.2), 0.2 - 0.27, atol=1e-15)
    theta = 0.1
    q = np.tile(vl.quat_from_axis_angle([0, 1, 0], theta), (n, 1))
    trp = vl.TrialTrace(tr.t, tr.pos, q, 0.2)
    delta = vl.water_level_series(trp, 0.2) - vl.water_level_series(tr, 0.2)
    # rotated offset (0.2, 0, -0.63): vertical part changes by -0.2 sin - 0.63 (cos - 1)
    expect = -(-0.2 * np.sin(theta) - 0.63 * np.cos(theta) + 0.63)
    assert np.allclose(delta, expect, atol=1e-15)
    assert np.all(vl.water_level_series(tr, 0.0) < 0)


# -- planar sections ----------------------------------------------------------------

def test_ramp_flat_ramp_isolates_flat():
    speed, rh = 1.2, 0.3
    trace, (t1, t2) = vl.synth_ramp_trace(0.1, speed, rh, jitter=0.0)
    tr = vl.resample_uniform(trace, 111.0)
    v = vl.trajectory_velocity(tr.t, speed, np.radians(10), t1, t2)
    secs = vl.extract_planar_sections(tr.t, v)
    assert len(secs) == 1
    flat = np.flatnonzero((tr.t >= t1) & (tr.t < t2))
    assert secs[0].start == flat[0] and secs[0].stop == flat[-1] + 1


def test_sections_from_processed_trace():
    trace, (t1, t2) = vl.synth_ramp_trace(0.1, 1.5, 0.3, seed=1)
    tr = vl.resample_uniform(trace, 111.0)
    kin = vl.trace_kinematics(tr)
    secs = vl.extract_planar_sections(tr.t, kin.v_world, kin.v_body)
    assert len(secs) == 1
    s = secs[0]
    assert abs(tr.t[s.start] - t1) < 0.05 and abs(tr.t[s.stop - 1] - t2) < 0.05
    assert s.mean_speed == pytest.approx(1.5, rel=1e-3)


def test_sections_rejections():
    t = np.arange(200) / 111
    v = np.zeros((200, 3))
    v[:, 2] = 0.1
    assert vl.extract_planar_sections(t, v) == []
    v[:, 2] = 0.1
    v[50:67, 2] = 0.0     # 17 samples, 0.144 s
    assert vl.extract_planar_sections(t, v) == []


@settings(max_examples=60, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=120))
def test_runs_are_maximal(mask):
    runs = vl.qualifying_runs(np.array(mask))
    m = np.array(mask)
    for a, b in runs:
        assert m[a:b].all()
        assert a == 0 or not m[a - 1]
        assert b == len(m) or not m[b]
    assert sum(b - a for a, b in runs) == m.sum()


# -- fits ----------------------------------------------------------------------------

def test_fit_drag_examples():
    f = vl.fit_drag([1, 4], [50, 200])
    assert f.coef[0] == 50.0 and f.r2 == 1.0
    with pytest.raises(vl.DegenerateFitError):
        vl.fit_drag([0, 0], [1, 2])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0.1, 10), st.floats(-50, 50)), min_size=3, max_size=30))
def test_drag_residual_orthogonal(pts):
    x = np.array([p[0] for p in pts])
    y = 20 * x + np.array([p[1] for p in pts])
    f = vl.fit_drag(x, y)
    r = y - f.coef[0] * x
    assert abs(np.dot(x, r)) <= 1e-9 * np.dot(x, np.abs(y)) + 1e-12


def test_fit_line_and_vertical_constant():
    f = vl.fit_line([1.0, 2.0, 3.0], [5.0, 5.0, 5.0])
    assert f.coef == (5.0, 0.0)
    pts = [vl.TrialPoint(0.1, s, 0, 300.0) for s in (1, 2, 3)]
    with pytest.warns(UserWarning, match="single depth"):
        rep = vl.fit_vertical(pts)
    assert rep.fits[0.1].coef[0] == pytest.approx(300) and rep.f0_vs_depth is None


def test_physical_cd():
    assert vl.physical_cd(0.5 * 1000 * 1.2 * 0.1, 1000, 1.2, 0.1) == pytest.approx(1.0, rel=1e-15)
    assert vl.physical_cd(10, 1000, 2.0, 0.1) == pytest.approx(0.5 * vl.physical_cd(10, 1000, 1.0, 0.1))
    with pytest.raises(ValueError):
        vl.physical_cd(10, 1000, 1.0, 0.0)


def test_matched_pairs():
    pts = [vl.TrialPoint(0.1, 1.0, 50.0, 0), vl.TrialPoint(0.2, 1.0, 100.0, 0),
           vl.TrialPoint(0.1, 0.5, 12.5, 0)]
    fits = {0.1: vl.FitResult((50.0,), 1, 2), 0.2: vl.FitResult((100.0,), 1, 1)}
    (r,) = vl.matched_pair_check(pts, fits)
    assert r["mean_ratio"] == 2.0 and r["n_pairs"] == 1 and r["deviation_pct"] == 0.0
    with pytest.warns(UserWarning):
        assert vl.matched_pair_check(pts[2:], fits) == []


# -- suite --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def warthog():
    return load_vehicle("mini_warthog")


def test_oracle_trials_recover_closed_form(warthog):
    from hydrosurrogate.dataset import oracle_buoyancy, oracle_drag_coefficient
    spec = warthog.spec
    traces = vl.synth_campaign(-spec.z_0, depths_in=(4, 8), speeds=np.linspace(0.8, 3.2, 6))
    rep = vl.run_validation_suite(vl.OraclePredictor(warthog), traces, spec)
    assert rep["n_sections"] == 12 and rep["drag"]["pass"]
    for f in rep["drag"]["fits"]:
        ref = oracle_drag_coefficient(warthog.patches, spec, spec.z_0 + f["depth"])
        assert f["c_eff"] == pytest.approx(ref, rel=0.05)
    for f in rep["buoyancy"]["fits"]:
        ref = oracle_buoyancy(warthog.patches, spec, spec.z_0 + f["depth"])
        assert f["f0"] == pytest.approx(ref, rel=0.05)
    # per-trial drag coefficient is nearly speed independent for the oracle
    cs = [abs(p["fx"]) / p["speed"] ** 2 for p in rep["points"] if p["depth"] == 4 * vl.INCH]
    assert np.ptp(cs) / np.mean(cs) < 0.01


def test_dry_traces_flagged(warthog):
    traces = vl.synth_campaign(-warthog.spec.z_0, depths_in=(0,), speeds=[1.0, 2.0])
    rep = vl.run_validation_suite(vl.OraclePredictor(warthog), traces, warthog.spec)
    assert not rep["drag"]["pass"]
    assert any("degenerate" in f for f in rep["flags"])


def test_report_layout(tmp_path, warthog):
    traces = vl.synth_campaign(-warthog.spec.z_0, speeds=[1.0, 2.5])
    rep = vl.run_validation_suite(vl.OraclePredictor(warthog), traces, warthog.spec)
    assert set(rep) == {"n_traces", "n_sections", "rho", "thresholds", "drag", "buoyancy",
                        "points", "flags"}
    assert rep["thresholds"] == {"drag_r2_min": 0.97, "buoyancy_r2_min": 0.97}
    vl.write_report(tmp_path / "r.json", rep)
    import json
    assert json.loads((tmp_path / "r.json").read_text())["n_traces"] == 6


def test_trace_roundtrip(tmp_path):
    trace, _ = vl.synth_ramp_trace(0.2, 1.0, 0.3, seed=3)
    vl.write_trace(tmp_path / "t.csv", trace)
    back = vl.read_trace(tmp_path / "t.csv")
    assert np.array_equal(back.t, trace.t) and np.array_equal(back.quat, trace.quat)
    assert back.depth == 0.2 and back.direction == trace.direction
    assert float(back.meta["command_speed"]) == 1.0


def test_defaults_thresholds():
    v = load_defaults()["validation"]
    assert v["rate_hz"] == 111 and v["savgol_window"] == 9 and v["savgol_order"] == 2
    assert v["min_duration"] == 0.2 and v["vz_limit"] == 0.05
    assert v["pair_speed_tol"] == 0.3 and v["pair_min_speed"] == 0.6
