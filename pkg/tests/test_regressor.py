import numpy as np
import pytest

import faceforge.regressor as rg
from faceforge.regressor import (AdamState, DimsProfile, Layer, MlpWeights,
                                 NormStats, RegressorError, TrainConfig,
                                 adam_step, backward, forward, init_weights,
                                 load_weights, loss, regress_params,
                                 save_weights, train)


def float32_weights(arch, seed=0):
    """Weights whose values are exactly float32-representable, so the f32
    file round trip is bitwise."""
    w = init_weights(arch, seed=seed)
    for layer in w.layers:
        layer.weight = layer.weight.astype(np.float32).astype(np.float64)
        layer.bias = layer.bias.astype(np.float32).astype(np.float64)
    return w


# --- forward ---------------------------------------------------------------

def test_forward_zero_weights_returns_bias():
    layers = [Layer(np.zeros((3, 4)), np.array([1.0, -2.0, 0.5]), "linear")]
    assert np.array_equal(forward(MlpWeights(layers), np.ones(4)),
                          [1.0, -2.0, 0.5])


def test_forward_identity_layer():
    layers = [Layer(np.eye(4), np.zeros(4), "linear")]
    x = np.array([0.1, -0.2, 0.3, 4.0])
    assert np.array_equal(forward(MlpWeights(layers), x), x)


def test_forward_matches_triple_loop_oracle():
    rng = np.random.default_rng(1)
    w = init_weights("4-5-6-3", seed=2)
    x = rng.normal(size=4)
    # independent naive oracle
    a = list(x)
    for layer in w.layers:
        out = []
        for i in range(layer.weight.shape[0]):
            acc = layer.bias[i]
            for j in range(layer.weight.shape[1]):
                acc += layer.weight[i, j] * a[j]
            if layer.activation == "leaky_relu" and acc < 0:
                acc *= rg.LEAKY_SLOPE
            out.append(acc)
        a = out
    assert np.allclose(forward(w, x), a, atol=1e-12)


def test_forward_dim_mismatch():
    w = init_weights("4-3", seed=0)
    with pytest.raises(RegressorError):
        forward(w, np.ones(5))


# --- loss ------------------------------------------------------------------

def test_loss_zero_on_equal():
    x = np.arange(5.0)
    assert loss(x, x) == 0.0


def test_loss_constant_offset():
    pred = np.zeros(6) + 1.5
    assert np.isclose(loss(pred, np.zeros(6)), 1.5 ** 2)


def test_loss_grouped_hand_case():
    # groups of sizes 2 and 3, weights 1 and 2
    pred = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    target = np.array([0.0, 0.0, 1.0, 1.0, 1.0])
    groups = [("a", 2), ("b", 3)]
    expect = 1.0 * ((1 + 4) / 2) + 2.0 * ((4 + 9 + 16) / 3)
    assert np.isclose(loss(pred, target, groups, {"b": 2.0}), expect)


# --- backward --------------------------------------------------------------

def test_backward_zero_at_optimum():
    w = init_weights("3-4-2", seed=3)
    x = np.array([0.5, -1.0, 2.0])
    target = forward(w, x)
    g = backward(w, x, target)
    for dw, db in zip(g.d_weight, g.d_bias):
        assert np.allclose(dw, 0.0, atol=1e-12)
        assert np.allclose(db, 0.0, atol=1e-12)


def test_backward_scalar_linear_hand_gradient():
    # y = w*x, L = (y - t)^2 => dL/dw = 2*x*(w*x - t)
    wv, xv, tv = 1.7, 0.4, -0.9
    w = MlpWeights([Layer(np.array([[wv]]), np.zeros(1), "linear")])
    g = backward(w, np.array([xv]), np.array([tv]))
    assert np.isclose(g.d_weight[0][0, 0], 2 * xv * (wv * xv - tv), atol=1e-12)


def fd_check(weights, x, target, h=1e-5):
    g = backward(weights, x, target)
    worst = 0.0
    for li, layer in enumerate(weights.layers):
        for arr, grad in ((layer.weight, g.d_weight[li]),
                          (layer.bias, g.d_bias[li])):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + h
                lp = loss(forward(weights, x), target)
                arr[idx] = orig - h
                lm = loss(forward(weights, x), target)
                arr[idx] = orig
                fd = (lp - lm) / (2 * h)
                denom = max(abs(fd), abs(grad[idx]), 1e-6)
                worst = max(worst, abs(fd - grad[idx]) / denom)
    return worst


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(7)
    w = init_weights("4-6-5-3", seed=11)
    x, target = rng.normal(size=4), rng.normal(size=3)
    assert fd_check(w, x, target) < 1e-4


# --- adam ------------------------------------------------------------------

def _grads_like(weights, fill):
    return rg.Gradients([np.full_like(l.weight, fill) for l in weights.layers],
                        [np.full_like(l.bias, fill) for l in weights.layers])


def test_adam_zero_gradient_no_move():
    w = init_weights("3-2", seed=0)
    before = w.copy()
    adam_step(w, AdamState.zeros_like(w), _grads_like(w, 0.0), TrainConfig())
    assert np.array_equal(w.layers[0].weight, before.layers[0].weight)


def test_adam_first_step_magnitude():
    cfg = TrainConfig()
    for scale in (1e-6, 1.0, 1e6):
        w = init_weights("3-2", seed=0)
        before = w.copy()
        adam_step(w, AdamState.zeros_like(w), _grads_like(w, scale), cfg)
        delta = w.layers[0].weight - before.layers[0].weight
        expect = cfg.learning_rate * scale / (scale + cfg.epsilon)
        assert np.allclose(np.abs(delta), expect, atol=1e-15)
        assert np.all(np.sign(delta) == -1)


def test_adam_two_steps_scalar_oracle():
    cfg = TrainConfig()
    w = MlpWeights([Layer(np.array([[0.0]]), np.zeros(1), "linear")])
    state = AdamState.zeros_like(w)
    # independent scalar oracle for g=1 twice
    m = v = 0.0
    wv = 0.0
    for t in (1, 2):
        m = cfg.beta1 * m + (1 - cfg.beta1) * 1.0
        v = cfg.beta2 * v + (1 - cfg.beta2) * 1.0
        mh = m / (1 - cfg.beta1 ** t)
        vh = v / (1 - cfg.beta2 ** t)
        wv -= cfg.learning_rate * mh / (np.sqrt(vh) + cfg.epsilon)
        adam_step(w, state, _grads_like(w, 1.0), cfg)
        assert np.isclose(w.layers[0].weight[0, 0], wv, atol=1e-15)
    assert state.step == 2


# --- training --------------------------------------------------------------

def _toy_data(n=32, e=6, d=3, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, e))
    a = rng.normal(size=(d, e))
    y = x @ a.T
    return x, y


def test_train_scripted_early_stopping(monkeypatch):
    # val losses reach their minimum at epoch 5, then never improve
    script = [5.0, 4.0, 3.0, 2.0, 1.0] + [1.5] * 50
    snapshots = {}
    calls = {"n": 0}

    def fake_evaluate(weights, x, y, group_sizes=None, group_weights=None):
        calls["n"] += 1
        snapshots[calls["n"]] = weights.copy()
        return script[calls["n"] - 1]

    monkeypatch.setattr(rg, "evaluate", fake_evaluate)
    x, y = _toy_data()
    w = init_weights("6-8-3", seed=1)
    cfg = TrainConfig(max_epochs=50, patience=3, batch_size=8)
    best, report = train(w, x, y, x[:4], y[:4], cfg)
    assert report.best_epoch == 5
    assert report.stopped_epoch == 8
    assert report.stopped_epoch - report.best_epoch == cfg.patience
    assert report.val_losses == script[:8]
    # returned weights are the epoch-5 snapshot
    for la, lb in zip(best.layers, snapshots[5].layers):
        assert np.array_equal(la.weight, lb.weight)
        assert np.array_equal(la.bias, lb.bias)


def test_train_overfits_tiny_dataset():
    x, y = _toy_data(n=8, e=4, d=2, seed=5)
    w = init_weights("4-32-32-2", seed=2)
    cfg = TrainConfig(max_epochs=2000, patience=2000, batch_size=8)
    best, report = train(w, x, y, x, y, cfg)
    assert report.train_losses[-1] < 1e-3 or min(report.train_losses) < 1e-3


def test_train_default_config_values():
    cfg = TrainConfig()
    assert cfg.learning_rate == 1e-3
    assert cfg.batch_size == 64
    assert cfg.max_epochs == 100
    assert cfg.patience == 10
    assert (cfg.beta1, cfg.beta2, cfg.epsilon) == (0.9, 0.999, 1e-8)
    assert cfg.validation_fraction == 0.1


def test_train_deterministic():
    x, y = _toy_data(n=40, e=5, d=2, seed=8)
    cfg = TrainConfig(max_epochs=10, patience=10, batch_size=8)
    runs = []
    for _ in range(2):
        w = init_weights("5-8-2", seed=4)
        best, report = train(w, x[:32], y[:32], x[32:], y[32:], cfg)
        runs.append((best, report))
    assert runs[0][1].train_losses == runs[1][1].train_losses
    assert runs[0][1].val_losses == runs[1][1].val_losses
    for la, lb in zip(runs[0][0].layers, runs[1][0].layers):
        assert np.array_equal(la.weight, lb.weight)


def test_train_restored_weights_reproduce_best_val_loss():
    x, y = _toy_data(n=48, e=5, d=2, seed=12)
    w = init_weights("5-8-2", seed=9)
    cfg = TrainConfig(max_epochs=30, patience=30, batch_size=8)
    best, report = train(w, x[:40], y[:40], x[40:], y[40:], cfg)
    re_eval = rg.evaluate(best, x[40:], y[40:])
    assert re_eval == report.val_losses[report.best_epoch - 1]


def test_train_empty_split_rejected():
    x, y = _toy_data()
    with pytest.raises(RegressorError):
        train(init_weights("6-3", seed=0), x[:0], y[:0], x, y, TrainConfig())


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_train_divergence_aborts():
    x, y = _toy_data(n=16, e=4, d=2, seed=1)
    w = init_weights("4-2", seed=0)
    # per-step movement is bounded by lr, so an absurd lr overflows the loss
    cfg = TrainConfig(learning_rate=1e200, max_epochs=50, patience=50, batch_size=4)
    with pytest.raises(RegressorError, match="diverged"):
        train(w, x, y, x, y, cfg)


def test_config_invariants():
    with pytest.raises(RegressorError):
        TrainConfig(patience=20, max_epochs=10)
    with pytest.raises(RegressorError):
        TrainConfig(validation_fraction=1.5)


# --- regress_params --------------------------------------------------------

def test_regress_params_zero_net(toy_profile):
    total = toy_profile.total
    w = MlpWeights([Layer(np.zeros((total, 8)), np.zeros(total), "linear")])
    p = regress_params(w, np.ones(8), toy_profile)
    assert np.array_equal(p.flat(), np.zeros(total))


def test_regress_params_slicing(toy_profile):
    total = toy_profile.total
    bias = np.arange(1.0, total + 1)
    w = MlpWeights([Layer(np.zeros((total, 8)), bias, "linear")])
    p = regress_params(w, np.zeros(8), toy_profile)
    s, e = toy_profile.n_shape, toy_profile.n_expression
    assert np.array_equal(p.beta, bias[:s])
    assert np.array_equal(p.psi, bias[s:s + e])
    assert np.array_equal(p.theta, bias[s + e:s + e + 6])
    assert np.array_equal(p.delta, bias[s + e + 6:])
    assert np.array_equal(p.flat(), bias)


def test_regress_params_unnormalizes_with_stats(toy_profile):
    rng = np.random.default_rng(2)
    total = toy_profile.total
    w = init_weights(f"8-{total}", seed=1)
    stats = NormStats(mean=rng.normal(size=total),
                      std=rng.uniform(0.5, 2.0, size=total),
                      normalize_embeddings=False)
    x = rng.normal(size=8)
    p = regress_params(w, x, toy_profile, stats)
    raw = forward(w, x)
    assert np.allclose(p.flat(), raw * stats.std + stats.mean, atol=1e-12)


def test_regress_params_profile_mismatch(toy_profile):
    w = init_weights("8-5", seed=0)
    with pytest.raises(RegressorError):
        regress_params(w, np.zeros(8), toy_profile)


# --- weights file ----------------------------------------------------------

def test_weights_roundtrip_bitwise(tmp_path):
    w = float32_weights("6-10-4", seed=3)
    stats = NormStats(mean=np.arange(4.0), std=np.ones(4) * 2,
                      normalize_embeddings=True, clamped_dims=[1])
    path = tmp_path / "w.t2fw"
    save_weights(w, path, stats)
    w2, stats2 = load_weights(path)
    assert w2.architecture == "6-10-4"
    for la, lb in zip(w.layers, w2.layers):
        assert np.array_equal(la.weight, lb.weight)
        assert np.array_equal(la.bias, lb.bias)
        assert la.activation == lb.activation
    assert np.array_equal(stats2.mean, stats.mean)
    assert np.array_equal(stats2.std, stats.std)
    assert stats2.normalize_embeddings is True
    assert stats2.clamped_dims == [1]


def test_weights_corrupted_byte_detected(tmp_path):
    path = tmp_path / "w.t2fw"
    save_weights(float32_weights("4-3", seed=0), path)
    buf = bytearray(path.read_bytes())
    buf[len(buf) // 2] ^= 0xFF
    path.write_bytes(bytes(buf))
    with pytest.raises(RegressorError, match="checksum"):
        load_weights(path)


def test_weights_architecture_signature_mismatch(tmp_path):
    path_a = tmp_path / "a.t2fw"
    save_weights(float32_weights("4-3", seed=0), path_a)
    with pytest.raises(RegressorError, match="architecture signature mismatch"):
        load_weights(path_a, expected_architecture="4-8-3")


def test_weights_bad_magic(tmp_path):
    path = tmp_path / "w.t2fw"
    path.write_bytes(b"NOPE" + b"\0" * 32)
    with pytest.raises(RegressorError, match="magic"):
        load_weights(path)
