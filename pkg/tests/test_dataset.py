import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hydrosurrogate import dataset as ds
from hydrosurrogate import features as ft
from hydrosurrogate.vehicles import load_vehicle


@pytest.fixture(scope="module")
def husky():
    return load_vehicle("mini_husky")


@pytest.fixture(scope="module")
def warthog():
    return load_vehicle("mini_warthog")


@pytest.fixture(scope="module")
def small_campaign(husky):
    recs = ds.generate_campaign(husky, n_cases=6, seed=3)
    return recs, ds.records_to_samples(recs, husky)


def test_rotation_is_proper():
    R = ds.SOLVER_TO_VEHICLE
    assert np.array_equal(R @ R.T, np.eye(3)) and np.linalg.det(R) == pytest.approx(1.0)


def test_frame_examples():
    R = ds.SOLVER_TO_VEHICLE
    # solver -z (drag against fluid moving along -z) is vehicle +x
    assert np.array_equal(R @ [0, 0, -1.0], [1, 0, 0])
    assert np.array_equal(R @ [0, -9.81, 0], [0, 0, -9.81])
    assert np.allclose(ds.vehicle_velocity(1.0, 90.0), [1, 0, 0], atol=1e-15)
    assert np.allclose(ds.vehicle_velocity(1.0, 0.0), [0, 1, 0], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 4), st.floats(0, 180))
def test_record_velocity_matches_vehicle_velocity(speed, angle):
    rec = ds.CaseRecord("c", "h", speed, angle, 1000, 0.1, 0.02, ("a",), np.zeros((3, 1, 3)))
    v = ds.to_vehicle_frame(rec).velocity
    assert np.allclose(v, ds.vehicle_velocity(speed, angle), atol=1e-12)


def test_double_conversion_rejected():
    rec = ds.CaseRecord("c", "h", 1, 45, 1000, 0.1, 0.02, ("a",), np.zeros((3, 1, 3)))
    with pytest.raises(ds.FrameError):
        ds.to_vehicle_frame(ds.to_vehicle_frame(rec))


def test_forces_shape_checked():
    with pytest.raises(ds.DataError):
        ds.CaseRecord("c", "h", 1, 45, 1000, 0.1, 0.02, ("a", "b"), np.zeros((3, 1, 3)))


def _vehicle_record(husky, forces, dt=0.02):
    rec = ds.CaseRecord("c", husky.spec.name, 0.5, 60, 1200, 0.1, dt, husky.spec.patch_names,
                        forces, frame=ds.VEHICLE_FRAME)
    return rec


def test_section_average_linear_history(husky):
    K = husky.spec.K
    t = np.arange(201) * 0.02
    F = np.broadcast_to(t[:, None, None], (201, K, 3)).copy()
    out = ds.section_average(_vehicle_record(husky, F), husky.spec, husky.patches)
    assert len(out) == 20
    # retained steps t = 2.02 .. 4.00, five per section; first section mean is t = 2.06
    assert out[0].targets[0, 0] * 1200 == pytest.approx(2.06, abs=1e-12)
    assert out[-1].targets[0, 0] * 1200 == pytest.approx(3.96, abs=1e-12)
    assert [s.section for s in out] == list(range(20))


def test_section_average_errors(husky):
    K = husky.spec.K
    with pytest.raises(ds.DataError, match="equal sections"):
        ds.section_average(_vehicle_record(husky, np.zeros((202, K, 3))), husky.spec,
                           husky.patches)
    with pytest.raises(ds.DataError, match="at least"):
        ds.section_average(_vehicle_record(husky, np.zeros((110, K, 3))), husky.spec,
                           husky.patches)
    rec = ds.CaseRecord("c", "h", 1, 45, 1000, 0.1, 0.02, husky.spec.patch_names,
                        np.zeros((201, K, 3)))
    with pytest.raises(ds.FrameError):
        ds.section_average(rec, husky.spec, husky.patches)


def test_campaign_sizes(husky, warthog, small_campaign):
    recs, samples = small_campaign
    assert len(recs) == 6 and len(samples) == 120
    assert recs[0].forces.shape == (201, 13, 3)
    w = ds.generate_campaign(warthog, n_cases=2, seed=0)
    assert w[0].forces.shape == (801, 10, 3)
    assert len(ds.records_to_samples(w, warthog)) == 40


def test_campaign_deterministic(husky):
    a = ds.generate_campaign(husky, n_cases=3, seed=5)
    b = ds.generate_campaign(husky, n_cases=3, seed=5, jobs=2)
    for r, s in zip(a, b):
        assert r.case_id == s.case_id and np.array_equal(r.forces, s.forces)


def test_lhs_stratified():
    ranges = ds.campaign_ranges("mini_husky")
    n = 175
    X = ds.latin_hypercube(ranges, n, seed=0)
    for j, k in enumerate(ds.PARAM_NAMES):
        lo, hi = ranges[k]
        bins = np.floor((X[:, j] - lo) / (hi - lo) * n).astype(int)
        assert np.array_equal(np.sort(bins), np.arange(n))


def test_lhs_bad_range():
    r = dict(ds.campaign_ranges("mini_husky"))
    r["speed"] = [1.0, 0.2]
    with pytest.raises(ValueError, match="speed"):
        ds.latin_hypercube(r, 5, 0)


def test_section_means_near_steady(husky, small_campaign):
    recs, samples = small_campaign
    r = recs[0]
    F = ds.oracle_forces(husky.patches, husky.spec, ds.vehicle_velocity(r.speed, r.angle_deg),
                         r.rho, husky.spec.z_0 + r.depth)
    got = np.array([s.forces for s in samples[:20]]).mean(axis=0)
    scale = np.abs(F).max()
    # ramp residual at t = 2 s is e^-10 and the noise averages over 100 steps
    assert np.max(np.abs(got - F)) < 0.02 * scale


def test_oracle_drag_linear_in_v_squared(husky):
    z = husky.spec.z_0 + 0.15
    c = ds.oracle_drag_coefficient(husky.patches, husky.spec, z)
    for speed in (0.3, 0.7, 1.1):
        F = ds.oracle_forces(husky.patches, husky.spec, [speed, 0, 0], 1000.0, z)
        sf, sd = ft.submergence_state(husky.patches, husky.spec, z)
        drag, _ = ds.oracle_steady(husky.patches, husky.spec, [speed, 0, 0], 1000.0, sf[0], sd[0])
        assert abs(drag[:, 0].sum()) == pytest.approx(c * speed**2, rel=1e-12)
        assert F[:, 0].sum() == pytest.approx(-c * speed**2, rel=1e-12)


def test_oracle_dry_is_zero(husky):
    F = ds.oracle_forces(husky.patches, husky.spec, [1, 0.2, 0], 1000.0, husky.spec.z_0 - 1)
    assert np.array_equal(F, np.zeros_like(F))


def test_mirror_and_reverse_involutions(husky, small_campaign):
    _, samples = small_campaign
    spec = husky.spec
    for s in samples[::17]:
        for op in (ds.mirror_lateral, ds.reverse_longitudinal):
            back = op(op(s, spec), spec)
            assert back.tag == s.tag
            for f in ("v", "gravity", "sub_frac", "sub_depth_norm", "targets"):
                assert np.array_equal(getattr(back, f), getattr(s, f))


def test_mirror_swaps_left_right(husky, small_campaign):
    _, samples = small_campaign
    spec = husky.spec
    s = samples[0]
    m = ds.mirror_lateral(s, spec)
    L, R = spec.index("side_left"), spec.index("side_right")
    assert np.array_equal(m.targets[R], s.targets[L] * [1, -1, 1])
    assert m.v[1] == -s.v[1] and m.v[0] == s.v[0]


def test_augment_four_copies(husky, small_campaign):
    _, samples = small_campaign
    aug = ds.augment(samples, {"mini_husky": husky.spec})
    assert len(aug) == 4 * len(samples)
    assert [a.tag for a in aug[:4]] == ["none", "mirror", "reverse", "mirror+reverse"]


def test_missing_partner_rejected(husky):
    from dataclasses import replace
    spec = replace(husky.spec, transverse_plane_patches=())
    with pytest.raises(ds.DataError, match="reverse"):
        ds.reverse_permutation(spec)


def test_split_no_leakage(small_campaign):
    _, samples = small_campaign
    train, val = ds.split_dataset(samples, 0.8, seed=1)
    assert {s.case_id for s in train}.isdisjoint({s.case_id for s in val})
    assert len(train) + len(val) == len(samples)
    assert len({s.case_id for s in train}) == 5
    again = ds.split_dataset(samples, 0.8, seed=1)
    assert [s.case_id for s in again[0]] == [s.case_id for s in train]


def test_norm_stats(husky, small_campaign):
    _, samples = small_campaign
    specs = {"mini_husky": husky.spec}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        stats = ds.fit_norm_stats(samples, specs)
    G = ds.sample_globals(samples, husky.spec)
    Gn = stats.normalize_G(G)
    live = stats.sigma_G > ds.SIGMA_FLOOR
    assert np.allclose(Gn[:, live].mean(axis=0), 0, atol=1e-10)
    assert np.allclose(Gn[:, live].std(axis=0), 1, atol=1e-10)
    # constant vehicle dimensions keep a floored sigma and normalize to zero
    assert np.all(stats.sigma_G[9:] == ds.SIGMA_FLOOR)
    Y = np.array([s.targets for s in samples])
    assert np.allclose(stats.denormalize_Y(stats.normalize_Y(Y)), Y, rtol=1e-12, atol=1e-12)
    assert ds.NormStats.from_dict(stats.to_dict()).to_dict() == stats.to_dict()
    with pytest.raises(ds.DataError):
        ds.fit_norm_stats([], specs)


def test_tensor_sets(husky, warthog, small_campaign):
    _, samples = small_campaign
    w = ds.records_to_samples(ds.generate_campaign(warthog, n_cases=2, seed=0), warthog)
    vehicles = {"mini_husky": husky, "mini_warthog": warthog}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        stats = ds.fit_norm_stats(samples + w, {k: v.spec for k, v in vehicles.items()})
    sets = ds.build_tensor_sets(samples + w, vehicles, stats)
    assert [t.vehicle for t in sets] == ["mini_husky", "mini_warthog"]
    assert sets[0].S.shape == (120, 13, 15) and sets[1].S.shape == (40, 10, 15)
    assert sets[0].G.shape == (120, 12)
    with pytest.raises(ds.DataError):
        ds.build_tensors(w, husky.spec, husky.patches, stats)


def test_case_roundtrip(tmp_path, small_campaign):
    rec = small_campaign[0][1]
    ds.write_case(tmp_path / "c.csv", rec)
    back = ds.read_case(tmp_path / "c.csv")
    assert back.case_id == rec.case_id and back.surface_names == rec.surface_names
    assert np.array_equal(back.forces, rec.forces) and np.array_equal(back.gravity, rec.gravity)
    assert back.speed == rec.speed and back.frame == rec.frame


def test_case_malformed(tmp_path):
    (tmp_path / "bad.csv").write_text("t,a.Fx\n0,1\n")
    with pytest.raises(ds.DataError):
        ds.read_case(tmp_path / "bad.csv")


def test_bundle_roundtrip(tmp_path, husky, small_campaign):
    _, samples = small_campaign
    train, val = ds.split_dataset(samples, 0.8, 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        stats = ds.fit_norm_stats(train, {"mini_husky": husky.spec})
    ds.save_bundle(tmp_path / "b", train, val, stats, {"seed": 0})
    tr, va, st2, man = ds.load_bundle(tmp_path / "b")
    assert man["schema"] == ft.SCHEMA_VERSION and man["seed"] == 0
    assert len(tr) == len(train) and len(va) == len(val)
    assert all(np.array_equal(a.targets, b.targets) and a.case_id == b.case_id
               for a, b in zip(tr, train))
    assert np.array_equal(st2.mu_G, stats.mu_G)
    import json
    man_path = tmp_path / "b" / "manifest.json"
    man_path.write_text(json.dumps({**man, "schema": "hydro-features/0"}))
    with pytest.raises(ds.DataError, match="schema"):
        ds.load_bundle(tmp_path / "b")


def test_merge_to_nine(husky, small_campaign):
    _, samples = small_campaign
    groups = husky.spec.extra["merge_groups"]
    merged, idx = ds.merge_vehicle(husky, groups)
    assert merged.spec.K == 9 and len(merged.patches) == 9
    assert sum(p.area for p in merged.patches) == pytest.approx(
        sum(p.area for p in husky.patches), rel=1e-12)
    ms = ds.merge_samples(samples[:5], husky, idx)
    for s, m in zip(samples[:5], ms):
        assert np.allclose(m.targets.sum(axis=0), s.targets.sum(axis=0), rtol=1e-12, atol=1e-15)
        assert m.targets.shape == (9, 3)
    # merged spec still supports both augmentations
    ds.mirror_permutation(merged.spec)
    ds.reverse_permutation(merged.spec)
