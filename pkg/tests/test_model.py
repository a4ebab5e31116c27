import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lcmat import model as M
from lcmat.data import DataError, Dataset, synth_gaussian_mixture
from lcmat.numerics import Rng
from lcmat.oracle import (fd_gradient, fd_hessian_diag, naive_cross_entropy, naive_mean_loss,
                          naive_softmax, naive_tanh_features, random_model)

from conftest import assert_rel


def _zero_linear(d, c):
    return M.ModelState("linear", np.zeros((d, c)), np.zeros(c))


def test_forward_uniform_when_zero():
    P, H = M.forward(_zero_linear(3, 4), np.ones((2, 3)))
    assert np.allclose(P, 0.25, atol=0)
    assert np.array_equal(H, np.ones((2, 3)))


def test_forward_shift_invariance(rng):
    m = random_model(rng, 3, 4)
    shifted = M.ModelState("linear", m.W, m.b + 7.5)
    x = rng.normal((5, 3))
    assert np.allclose(M.forward(m, x)[0], M.forward(shifted, x)[0], atol=1e-12)


@pytest.mark.parametrize("arch", ["linear", "mlp"])
def test_forward_matches_softmax_oracle(rng, arch):
    m = random_model(rng, 4, 3, arch)
    for x in rng.normal((10, 4)):
        P, H = M.forward(m, x[None, :])
        feat = naive_tanh_features(x, m.W1, m.b1) if arch == "mlp" else list(x)
        z = [math.fsum([m.b[t]] + [feat[j] * m.W[j, t] for j in range(len(feat))]) for t in range(3)]
        assert np.allclose(P[0], naive_softmax(z), rtol=0, atol=1e-12)
        assert abs(P.sum() - 1.0) <= 1e-12


def test_forward_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        M.forward(random_model(rng, 3, 2), np.ones((1, 4)))


def test_per_sample_gradient_examples(rng):
    m = M.ModelState("linear", np.array([[1000.0, -1000.0]]), np.zeros(2))
    assert np.allclose(M.per_sample_gradient(m, [1.0], 0), 0.0, atol=1e-300)
    m = random_model(rng, 3, 4)
    g = M.per_sample_gradient(m, np.zeros(3), 2)
    P, _ = M.forward(m, np.zeros((1, 3)))
    assert np.all(g[:12] == 0)
    assert np.allclose(g[12:], P[0] - np.eye(4)[2], atol=0)


def test_per_sample_gradient_layout(rng):
    m = random_model(rng, 2, 3)
    x, y = rng.normal(2), 1
    P, _ = M.forward(m, x[None, :])
    r = P[0] - np.eye(3)[y]
    g = M.per_sample_gradient(m, x, y)
    for j in range(2):
        for t in range(3):
            assert g[j * 3 + t] == x[j] * r[t]
    assert np.array_equal(g[6:], r)


def test_hessian_examples():
    m = M.ModelState("linear", np.array([[2000.0, -2000.0]]), np.zeros(2))
    assert np.all(M.per_sample_hessian_diag(m, [1.0], 1) == 0)
    c = 4
    h = M.per_sample_hessian_diag(_zero_linear(2, c), [1.0, 1.0], 0)
    assert np.allclose(h, (1 / c) * (1 - 1 / c), atol=1e-15)


@pytest.mark.parametrize("arch", ["linear", "mlp"])
def test_derivatives_match_fd(arch):
    rng = Rng(21)
    for _ in range(20):
        m = random_model(rng, 3, 3, arch, scale=0.5)
        x, y = rng.normal(3), int(rng.integers(0, 3))
        feat = naive_tanh_features(x, m.W1, m.b1) if arch == "mlp" else list(x)
        f = lambda v: naive_cross_entropy(feat, y, v, 3)  # noqa: E731
        theta = m.last_layer_vector()
        assert_rel(M.per_sample_gradient(m, x, y), fd_gradient(f, theta, 1e-5), 1e-6)
        assert_rel(M.per_sample_hessian_diag(m, x, y), fd_hessian_diag(f, theta, 1e-3), 1e-4)


@given(st.integers(0, 2**32), st.sampled_from(["linear", "mlp"]))
@settings(max_examples=30, deadline=None)
def test_hessian_nonnegative(seed, arch):
    r = Rng(seed)
    m = random_model(r, 3, 4, arch, scale=3.0)
    X = 5 * r.normal((6, 3))
    assert M.per_sample_hessian_diags(m, X, np.zeros(6, int)).min() >= 0


def test_mean_loss_examples(rng):
    m = M.ModelState("linear", np.array([[50.0, -50.0]]), np.zeros(2))
    ds = Dataset([[1.0], [-1.0]], [0, 1], 2)
    assert M.mean_loss(m, ds) <= 1e-9
    ds3 = Dataset(rng.normal((9, 2)), np.arange(9) % 3, 3)
    assert abs(M.mean_loss(_zero_linear(2, 3), ds3) - math.log(3)) <= 1e-12


@pytest.mark.parametrize("arch", ["linear", "mlp"])
def test_mean_loss_matches_loop_oracle(rng, arch):
    m = random_model(rng, 4, 3, arch)
    ds = Dataset(rng.normal((25, 4)), np.arange(25) % 3, 3)
    feats = ([naive_tanh_features(x, m.W1, m.b1) for x in ds.features] if arch == "mlp"
             else ds.features.tolist())
    ref = naive_mean_loss(feats, ds.labels, m.last_layer_vector(), 3)
    assert abs(M.mean_loss(m, ds) - ref) <= 1e-12 * max(1.0, ref)


@pytest.mark.parametrize("arch", ["linear", "mlp"])
def test_mean_of_per_sample_gradients_is_loss_gradient(rng, arch):
    m = random_model(rng, 5, 4, arch)
    ds = Dataset(rng.normal((30, 5)), np.arange(30) % 4, 4)
    G = M.per_sample_gradients(m, ds.features, ds.labels)
    _, full = M.loss_and_grad(m, ds.features, ds.labels)
    last = full[-m.last_layer_dim:]
    assert np.max(np.abs(G.mean(axis=0) - last)) <= 1e-10
    assert np.max(np.abs(M.last_layer_mean_gradient(m, ds) - last)) <= 1e-10


def test_loss_and_grad_hidden_layer_fd(rng):
    m = random_model(rng, 3, 3, "mlp", hidden=4)
    X, y = rng.normal((7, 3)), np.arange(7) % 3
    loss, g = M.loss_and_grad(m, X, y)
    f = lambda v: M.loss_and_grad(m.with_params(v), X, y)[0]  # noqa: E731
    assert_rel(g, fd_gradient(f, m.param_vector()), 1e-6)


def test_train_separable_reaches_high_accuracy():
    ds = synth_gaussian_mixture(5, 2, 100, 4, 10.0)
    m = M.fit(ds, M.TrainConfig(epochs=50))
    assert M.accuracy(m, ds) >= 0.99
    assert len(m.loss_history) == 50


def test_train_zero_epochs_returns_input(small_ds, small_model):
    out = M.train(small_model, small_ds, M.TrainConfig(epochs=0))
    assert out is small_model


@pytest.mark.parametrize("arch", ["linear", "mlp"])
def test_train_deterministic(small_ds, arch):
    cfg = M.TrainConfig(epochs=5, arch=arch, hidden=6, seed=3)
    a, b = M.fit(small_ds, cfg), M.fit(small_ds, cfg)
    assert np.array_equal(a.param_vector(), b.param_vector())


def test_train_weights_validation_and_effect(small_ds):
    cfg = M.TrainConfig(epochs=3)
    with pytest.raises(ValueError):
        M.fit(small_ds, cfg, weights=np.ones(3))
    w = np.ones(small_ds.n)
    assert np.array_equal(M.fit(small_ds, cfg, w).param_vector(),
                          M.fit(small_ds, cfg, 2 * w).param_vector())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_names_epoch(small_ds):
    with pytest.raises(M.DivergenceError) as exc:
        M.fit(small_ds.with_features(small_ds.features * 1e150), M.TrainConfig(epochs=3, learning_rate=1e10))
    assert "epoch" in str(exc.value)


def test_train_config_validation():
    with pytest.raises(ValueError):
        M.TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        M.TrainConfig(batch_size=0)


def test_model_state_validation():
    with pytest.raises(ValueError):
        M.ModelState("linear", np.array([[np.inf]]), np.zeros(1))
    with pytest.raises(ValueError):
        M.ModelState("mlp", np.zeros((2, 2)), np.zeros(2))


@pytest.mark.parametrize("arch", ["linear", "mlp"])
def test_checkpoint_round_trip(tmp_path, rng, arch):
    m = random_model(rng, 3, 4, arch, hidden=5)
    M.save_checkpoint(m, tmp_path / "m.lcm")
    back = M.load_checkpoint(tmp_path / "m.lcm")
    assert back.arch == arch
    assert np.array_equal(back.param_vector(), m.param_vector())
    raw = (tmp_path / "m.lcm").read_bytes()
    (tmp_path / "bad.lcm").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DataError, match="magic"):
        M.load_checkpoint(tmp_path / "bad.lcm")
    (tmp_path / "short.lcm").write_bytes(raw[:-8])
    with pytest.raises(DataError):
        M.load_checkpoint(tmp_path / "short.lcm")
