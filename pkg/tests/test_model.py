import numpy as np
import pytest

from hydrosurrogate import features as ft
from hydrosurrogate import model as md
from hydrosurrogate.dataset import NormStats, TensorSet
from hydrosurrogate.defaults import load_defaults


def rand_stats(rng, d_g=ft.D_G):
    return NormStats(rng.normal(size=d_g), rng.uniform(0.5, 2, d_g), rng.normal(size=3) * 0.1,
                     rng.uniform(0.5, 3, 3),
                     ft.GLOBAL_FEATURES if d_g == ft.D_G else md.STRIPPED_FEATURES)


def rand_set(rng, n, K, vehicle="v", dry_frac=0.3):
    S = rng.normal(size=(n, K, ft.D_S))
    sf = np.where(rng.random((n, K)) < dry_frac, 0.0, rng.uniform(0.05, 1, (n, K)))
    return TensorSet(vehicle, rng.normal(size=(n, ft.D_G)), S, rng.normal(size=(n, K, 3)), sf,
                     rng.uniform(1000, 1900, n), np.array([f"c{i // 4}" for i in range(n)],
                                                          dtype=object))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def test_config_defaults_match_file():
    cfg = md.TrainConfig.from_defaults()
    d = load_defaults()["train"]
    assert cfg.batch_size == 16 and cfg.val_batch_size == 64 and cfg.lr == 1e-3
    assert (cfg.alpha, cfg.eps_rel, cfg.lambda_net, cfg.lambda_phys) == (0.5, 0.01, 0.1, 0.5)
    assert cfg.sched_factor == 0.5 and cfg.sched_patience == 20 and cfg.dry_threshold == 0.01
    for k, v in d.items():
        if hasattr(cfg, k):
            assert getattr(cfg, k) == v
    with pytest.raises(ValueError):
        md.TrainConfig(alpha=1.5)


def test_shapes_and_init(rng):
    m = md.init_model(seed=1)
    assert m.params["W1"].shape == (256, 27) and m.params["W3"].shape == (3, 256)
    bound = np.sqrt(6 / 27)
    assert np.all(np.abs(m.params["W1"]) <= bound)
    assert all(np.all(m.params[b] == 0) for b in ("b1", "b2", "b3"))


def test_zero_weights_zero_output(rng):
    m = md.init_model(hidden=8)
    m.params = {k: np.zeros_like(v) for k, v in m.params.items()}
    assert np.array_equal(md.forward(m, rng.normal(size=12), rng.normal(size=(5, 15))),
                          np.zeros((5, 3)))


def test_any_K_and_equivariance(rng):
    m = md.init_model(hidden=32, seed=2)
    G = rng.normal(size=12)
    for K in (13, 10):
        S = rng.normal(size=(K, 15))
        out = md.forward(m, G, S)
        perm = rng.permutation(K)
        assert out.shape == (K, 3)
        # BLAS blocking may reorder sums by row position, so compare to round-off
        assert np.allclose(md.forward(m, G, S[perm]), out[perm], rtol=1e-13, atol=1e-13)
    with pytest.raises(md.SchemaError):
        md.forward(m, rng.normal(size=9), rng.normal(size=(4, 15)))


def test_unnormalize(rng):
    st = rand_stats(rng)
    Z = np.zeros((4, 3))
    assert np.array_equal(md.unnormalize_and_scale(Z, st, 1000.0), np.tile(st.mu_Y * 1000, (4, 1)))
    Yn = rng.normal(size=(4, 3))
    a = md.unnormalize_and_scale(Yn, st, 1000.0)
    b = md.unnormalize_and_scale(Yn, st, 2000.0)
    assert np.allclose(b, 2 * a, rtol=1e-15)
    assert np.allclose(st.normalize_Y(st.denormalize_Y(Yn)), Yn, atol=1e-12)


def test_loss_hand_example():
    st = NormStats(np.zeros(12), np.ones(12), np.zeros(3), np.ones(3))
    cfg = md.TrainConfig(lambda_net=0.0, lambda_phys=0.0)
    _, terms = md.composite_loss(np.ones((1, 1, 3)), np.zeros((1, 1, 3)), np.ones((1, 1)), st, cfg)
    assert terms["mse"] == 1.0 and terms["rel"] == 1e4 and terms["hybrid"] == 5000.5


def test_loss_perfect_and_dry(rng):
    st = rand_stats(rng)
    cfg = md.TrainConfig()
    Y = rng.normal(size=(3, 4, 3))
    wet = np.ones((3, 4))
    assert md.composite_loss(Y, Y, wet, st, cfg)[0] == 0.0
    dry = wet.copy()
    dry[0, 1] = 0.0
    pred = Y.copy()
    pred[0, 1] = st.normalize_Y(np.array([0.3, 0.0, 0.0]))
    Y2 = Y.copy()
    Y2[0, 1] = pred[0, 1]
    _, t = md.composite_loss(pred, Y2, dry, st, cfg)
    assert t["phys"] > 0 and t["hybrid"] == 0.0 and t["net"] == 0.0
    assert t["phys"] == pytest.approx(0.3**2 / 3, rel=1e-12)


def test_loss_decomposition(rng):
    st = rand_stats(rng)
    cfg = md.TrainConfig()
    pred, true = rng.normal(size=(2, 6, 5, 3))
    sf = np.where(rng.random((6, 5)) < 0.4, 0.0, 0.5)
    total, t = md.composite_loss(pred, true, sf, st, cfg)
    assert abs(total - (t["hybrid"] + cfg.lambda_net * t["net"] + cfg.lambda_phys * t["phys"])) \
        <= 1e-12 * abs(total)


def test_gradient_finite_differences(rng):
    """Analytic gradients against central differences on 1000 random parameter entries."""
    st = rand_stats(rng)
    m = md.init_model(hidden=12, seed=3, stats=st)
    for k in ("b1", "b2", "b3"):
        m.params[k] = rng.normal(scale=0.1, size=m.params[k].shape)
    ts = rand_set(rng, 6, 5)
    batch = md.make_batch(ts)
    cfg = md.TrainConfig()
    _, terms, grads = md.loss_gradients(m, batch, cfg)
    assert terms["phys"] > 0 and terms["net"] > 0
    h = 1e-5
    sizes = np.array([m.params[k].size for k in md.PARAM_NAMES])
    picks = rng.choice(sizes.sum(), size=1000, replace=sizes.sum() < 1000)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat in picks:
        j = np.searchsorted(offsets, flat, side="right") - 1
        k = md.PARAM_NAMES[j]
        idx = np.unravel_index(flat - offsets[j], m.params[k].shape)
        old = m.params[k][idx]
        m.params[k][idx] = old + h
        up = md.batch_loss(m, batch, cfg)[0]
        m.params[k][idx] = old - h
        down = md.batch_loss(m, batch, cfg)[0]
        m.params[k][idx] = old
        fd = (up - down) / (2 * h)
        a = grads[k][idx]
        worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-6))
    assert worst < 1e-4


def test_zero_loss_zero_grad(rng):
    st = rand_stats(rng)
    m = md.init_model(hidden=8, seed=0, stats=st)
    ts = rand_set(rng, 4, 3, dry_frac=0.0)
    ts.Y = md.predict_normalized(m, ts)
    _, _, grads = md.loss_gradients(m, md.make_batch(ts), md.TrainConfig())
    assert all(np.all(g == 0) for g in grads.values())


def test_dead_unit_has_zero_gradient(rng):
    st = rand_stats(rng)
    m = md.init_model(hidden=8, seed=0, stats=st)
    m.params["b1"][3] = -1e6
    _, _, grads = md.loss_gradients(m, md.make_batch(rand_set(rng, 4, 3)), md.TrainConfig())
    assert np.all(grads["W1"][3] == 0) and grads["b1"][3] == 0


def test_scheduler_contract():
    s = md.PlateauScheduler(0.5, 20, 1e-8)
    lr = 1.0
    lr, imp = s.step(1.0, lr)
    assert imp
    lrs = []
    for _ in range(45):
        lr, _ = s.step(1.0 - 5e-9, lr)   # not enough to count as improvement
        lrs.append(lr)
    assert lrs[18] == 1.0 and lrs[19] == 0.5 and lrs[38] == 0.5 and lrs[39] == 0.25
    lr, imp = s.step(0.5, lr)
    assert imp and lr == 0.25


def _tiny_training(rng, epochs):
    st = rand_stats(rng)
    sets = [rand_set(rng, 20, 4, "a"), rand_set(rng, 12, 3, "b")]
    m = md.init_model(hidden=16, seed=5, stats=st)
    cfg = md.TrainConfig(hidden=16, seed=5)
    return m, md.train(m, sets, sets, cfg, epochs=epochs)


def test_epochs_zero_returns_initial():
    m, res = _tiny_training(np.random.default_rng(1), 0)
    assert res.history == [] and res.best_epoch == 0
    assert all(np.array_equal(res.model.params[k], m.params[k]) for k in md.PARAM_NAMES)


def test_training_deterministic(tmp_path):
    _, a = _tiny_training(np.random.default_rng(1), 4)
    _, b = _tiny_training(np.random.default_rng(1), 4)
    assert a.history == b.history
    assert all(np.array_equal(a.model.params[k], b.model.params[k]) for k in md.PARAM_NAMES)
    md.write_log(tmp_path / "log.csv", a.history)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0].startswith("epoch,lr") and len(lines) == 5


def test_returns_lowest_val_mae_weights():
    rng = np.random.default_rng(4)
    st = rand_stats(rng)
    sets = [rand_set(rng, 20, 4, "a"), rand_set(rng, 12, 3, "b")]
    m = md.init_model(hidden=16, seed=5, stats=st)
    res = md.train(m, sets, sets, md.TrainConfig(hidden=16, seed=5), epochs=12)
    maes = [h["val_mae_net"] for h in res.history]
    assert res.best_epoch == int(np.argmin(maes)) + 1
    assert md.validation_mae(res.model, sets) == min(maes)


def test_vehicle_batches_homogeneous(rng):
    sets = [rand_set(rng, 20, 4, "a"), rand_set(rng, 12, 3, "b")]
    batches = md.vehicle_batches(sets, 16, np.random.default_rng(0))
    assert sorted(len(i) for _, i in batches) == [4, 12, 16]
    assert sorted(np.concatenate([i for j, i in batches if j == 0]).tolist()) == list(range(20))


def test_nan_loss_aborts(rng):
    st = rand_stats(rng)
    ts = rand_set(rng, 8, 3)
    ts.Y[2, 0, 0] = np.nan
    m = md.init_model(hidden=8, stats=st)
    with pytest.raises(md.NumericError, match="batch"):
        md.train(m, [ts], [ts], md.TrainConfig(), epochs=1)


def test_validation_mae(rng):
    st = rand_stats(rng)
    m = md.init_model(hidden=8, stats=st)
    ts = rand_set(rng, 10, 4)
    ts.Y = md.predict_normalized(m, ts)
    assert md.validation_mae(m, [ts]) == 0.0
    delta = 0.7
    ts2 = TensorSet(ts.vehicle, ts.G, ts.S, ts.Y.copy(), ts.sub_frac, ts.rho)
    ts2.Y[:, 2, 1] -= delta / st.sigma_Y[1]
    assert md.validation_mae(m, [ts2]) == pytest.approx(delta / 3, rel=1e-12)
    ts3 = TensorSet(ts.vehicle, ts.G, ts.S, ts.Y.copy(), ts.sub_frac, ts.rho)
    ts3.Y[:, 0, 0] += 0.4
    ts3.Y[:, 1, 0] -= 0.4
    assert md.validation_mae(m, [ts3]) == pytest.approx(0.0, abs=1e-12)


def test_smape_floor():
    assert md.smape(np.array([0.0]), np.array([0.5]))[()] == 50.0
    assert md.smape(np.array([10.0]), np.array([10.0]))[()] == 0.0
    m = md.force_metrics(np.ones((5, 3)), np.ones((5, 3)))
    assert all(v == 0.0 for c in m.values() for v in c.values())


def test_weights_roundtrip(tmp_path, rng):
    st = rand_stats(rng)
    m = md.init_model(hidden=16, seed=4, stats=st)
    md.save_weights(m, tmp_path / "w.hsw")
    m2 = md.load_weights(tmp_path / "w.hsw", ft.GLOBAL_FEATURES)
    G, S = rng.normal(size=12), rng.normal(size=(7, 15))
    assert np.array_equal(md.forward(m, G, S), md.forward(m2, G, S))
    assert m2.schema == ft.SCHEMA_VERSION and np.array_equal(m2.stats.sigma_Y, st.sigma_Y)


def test_weights_corruption_and_schema(tmp_path, rng):
    m = md.init_model(hidden=8, stats=rand_stats(rng))
    p = tmp_path / "w.hsw"
    md.save_weights(m, p)
    raw = bytearray(p.read_bytes())
    raw[200] ^= 0xFF
    (tmp_path / "bad.hsw").write_bytes(bytes(raw))
    with pytest.raises(md.ChecksumError):
        md.load_weights(tmp_path / "bad.hsw")
    stripped = md.init_model(d_g=9, hidden=8, stats=rand_stats(rng, 9))
    md.save_weights(stripped, tmp_path / "s.hsw")
    with pytest.raises(md.SchemaError, match="9 global features"):
        md.load_weights(tmp_path / "s.hsw", ft.GLOBAL_FEATURES)


def test_weights_version_refused(tmp_path, rng):
    import hashlib
    import struct
    m = md.init_model(hidden=8, stats=rand_stats(rng))
    md.save_weights(m, tmp_path / "w.hsw")
    body = bytearray((tmp_path / "w.hsw").read_bytes()[:-32])
    body[4:6] = struct.pack("<H", 2)
    (tmp_path / "v2.hsw").write_bytes(bytes(body) + hashlib.sha256(body).digest())
    with pytest.raises(md.SchemaError, match="version"):
        md.load_weights(tmp_path / "v2.hsw")


def test_ablation_builders(rng):
    cfg = md.TrainConfig(hidden=8)
    v = md.ablation_variants(cfg)
    assert set(v) == {"full", "dims_stripped", "patch_merged", "global_only"}
    assert len(md.STRIPPED_FEATURES) == 9
    a = v["dims_stripped"](rand_stats(rng, 9))
    assert a.d_g == 9 and a.params["W1"].shape == (8, 24)
    with pytest.raises(md.SchemaError):
        v["dims_stripped"](rand_stats(rng))
    g = v["global_only"](rand_stats(rng))
    out = md.forward(g, rng.normal(size=(5, 12)), np.zeros((5, 1, 0)))
    assert out.shape == (5, 1, 3)
