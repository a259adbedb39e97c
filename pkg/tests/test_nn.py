import json
import math

import numpy as np
import pytest

from ritforecast import nn


def zero_model(head, n_inputs=3, hidden=(4,)):
    m = nn.MLP(n_inputs, hidden, head=head, seed=0)
    m.set_params([np.zeros_like(p) for p in m.params])
    return m


def test_zero_model_outputs():
    X = np.random.default_rng(0).normal(size=(5, 3))
    surv = zero_model("survival").forward(X)
    np.testing.assert_allclose(surv, math.log(2) + nn.EPS, rtol=0, atol=1e-15)
    np.testing.assert_allclose(zero_model("classifier").forward(X), 0.5)


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        nn.MLP(3, (4,)).forward(np.zeros((2, 4)))


def test_survival_head_positive_on_extreme_inputs():
    rng = np.random.default_rng(1)
    m = nn.MLP(4, (16, 16), head="survival", seed=1)
    m.set_params([rng.normal(0, 3, p.shape) for p in m.params])
    out = m.forward(rng.normal(0, 1e3, size=(200, 4)))
    assert np.all(np.isfinite(out)) and np.all(out >= nn.EPS)


def test_quadratic_gradient():
    m = zero_model("classifier", n_inputs=1, hidden=(1,))
    w_star = 0.7

    def loss(z, targets):
        # depends on the output bias only through z
        return float(((z - w_star) ** 2).mean()), 2 * (z - w_star) / len(z)

    m.params[-1][:] = 0.2
    _, grads = nn.gradient(m, loss, np.zeros((1, 1)), np.zeros(1))
    assert grads[-1][0] == pytest.approx(2 * (0.2 - w_star))


def test_duplicated_batch_same_gradient():
    rng = np.random.default_rng(2)
    m = nn.MLP(3, (5,), head="survival", seed=2, time_scale=10)
    X = rng.normal(size=(6, 3))
    y = np.c_[rng.uniform(1, 20, 6), rng.integers(0, 2, 6)]
    loss = nn.CensoredWeibullLoss(10)
    _, g1 = nn.gradient(m, loss, X, y)
    _, g2 = nn.gradient(m, loss, np.r_[X, X], np.r_[y, y])
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(a, b, atol=1e-15)


def test_weibull_partials_match_finite_differences():
    rng = np.random.default_rng(3)
    h = 1e-6
    for _ in range(200):
        lam, rho, t = rng.uniform(0.2, 3), rng.uniform(0.3, 5), rng.uniform(0.05, 4)
        c = rng.integers(0, 2)
        _, dl, dr = nn.weibull_nll_terms(lam, rho, t, c)
        f = lambda a, b: nn.weibull_nll_terms(a, b, t, c)[0]
        fd_l = (f(lam + h, rho) - f(lam - h, rho)) / (2 * h)
        fd_r = (f(lam, rho + h) - f(lam, rho - h)) / (2 * h)
        assert dl == pytest.approx(fd_l, rel=1e-4, abs=1e-7)
        assert dr == pytest.approx(fd_r, rel=1e-4, abs=1e-7)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_loss_aborts():
    m = nn.MLP(2, (3,), head="survival")
    with pytest.raises(FloatingPointError):
        nn.gradient(m, nn.CensoredWeibullLoss(1.0), np.zeros((1, 2)), np.array([[0.0, 0.0]]))
    with pytest.raises(ValueError):
        nn.gradient(m, nn.CensoredWeibullLoss(1.0), np.zeros((0, 2)), np.zeros((0, 2)))


def test_separable_classifier():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(2000, 2))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(float)
    m = nn.MLP(2, (16,), head="classifier", seed=0)
    m.fit_normalization(X)
    m, curve = nn.optimize(m, X, y, nn.BinaryCrossEntropy(), nn.TrainParams(lr=0.02, epochs=30, batch_size=64))
    assert curve[-1] <= curve[0]
    assert np.mean((m.forward(X) > 0.5) == y) >= 0.99


def test_constant_weibull_fit_recovers_parameters():
    rng = np.random.default_rng(5)
    u = rng.uniform(size=10_000)
    t = 70.0 * (-np.log(u)) ** (1 / 3.0)  # inverse CDF
    X = np.ones((len(t), 1))
    m = nn.MLP(1, (8,), head="survival", seed=0, time_scale=255)
    m.fit_normalization(X)
    m, _ = nn.optimize(m, X, np.c_[t, np.zeros_like(t)], nn.CensoredWeibullLoss(255),
                       nn.TrainParams(lr=0.05, epochs=20))
    lam, rho = m.forward(X[:1])[0]
    assert lam * 255 == pytest.approx(70, rel=0.05)
    assert rho == pytest.approx(3, rel=0.10)


def test_zero_lr_leaves_model_unchanged():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(50, 3))
    y = rng.integers(0, 2, 50).astype(float)
    m = nn.MLP(3, (4,), seed=1)
    before = [p.copy() for p in m.params]
    out, _ = nn.optimize(m, X, y, nn.BinaryCrossEntropy(), nn.TrainParams(lr=0.0, epochs=3))
    for a, b in zip(before, out.params):
        np.testing.assert_array_equal(a, b)


def test_training_is_reproducible():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(300, 3))
    y = (X[:, 0] > 0).astype(float)

    def train():
        m = nn.MLP(3, (8,), seed=3)
        return nn.optimize(m, X, y, nn.BinaryCrossEntropy(), nn.TrainParams(lr=0.01, epochs=3, seed=9))

    (a, ca), (b, cb) = train(), train()
    assert ca == cb
    for p, q in zip(a.params, b.params):
        np.testing.assert_array_equal(p, q)


def test_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    m = nn.MLP(5, (6, 7), head="survival", seed=4, time_scale=255)
    m.fit_normalization(rng.normal(size=(20, 5)))
    m.metadata = {"history": 10, "horizon": 60, "alpha": 0.05}
    path = tmp_path / "m.json"
    m.save(path)
    back = nn.MLP.load(path)
    X = rng.normal(size=(10, 5))
    np.testing.assert_array_equal(m.forward(X), back.forward(X))
    assert back.metadata["horizon"] == 60 and back.head == "survival"
    bad = tmp_path / "bad.json"
    d = m.to_dict()
    d["layers"][1]["weight"] = d["layers"][1]["weight"][:-1]
    bad.write_text(json.dumps(d))
    with pytest.raises(ValueError):
        nn.MLP.load(bad)
