import numpy as np
import pytest

from invexnn import datasets as D
from invexnn import tensor as T
from invexnn.gcgp import (GcgpConfig, SumModel, make_lipschitz_net, out_clip,
                          pg_penalty, projected_gradient, train_basic_iinn,
                          train_guided_iinn, train_lipschitz,
                          train_modified_iinn, train_ordinary)
from invexnn.layers import MLP
from invexnn.tensor import Tensor

LN2 = np.log(2.0)


# ---- clip curve ----------------------------------------------------------

def test_out_clip_at_zero():
    # softplus(0)/20 = ln(2)/20
    assert out_clip(0.0) == pytest.approx(LN2 / 20.0, abs=1e-12)


def test_out_clip_linear_branch():
    # above the knee: 3*pg - 0.0844560006
    assert out_clip(1.0) == pytest.approx(2.9155439994, abs=1e-12)
    assert out_clip(2.0) == pytest.approx(5.9155439994, abs=1e-12)


def test_out_clip_vanishes_for_violations():
    # softplus(-20)/20 ~ e^-20/20
    assert 0.0 < out_clip(-1.0) < 1.1e-10
    assert out_clip(-5.0) < 1e-40


def test_out_clip_monotone_nondecreasing():
    x = np.linspace(-5.0, 5.0, 1_000_001)
    y = out_clip(x)
    assert np.all(np.diff(y) >= 0.0)
    assert np.all(y > 0.0)


# ---- penalty curve -------------------------------------------------------

def test_pg_penalty_at_crossover():
    assert pg_penalty(0.1) == pytest.approx(-LN2 / 4.0, abs=1e-12)


def test_pg_penalty_saturates_when_satisfied():
    assert -1e-10 < pg_penalty(10.0) <= 0.0


def test_pg_penalty_linear_for_violations():
    # -softplus(22)/4 ~ -5.5
    assert pg_penalty(-1.0) == pytest.approx(-5.5, abs=1e-6)


def test_pg_penalty_monotone_and_nonpositive():
    x = np.linspace(-5.0, 5.0, 100_001)
    y = pg_penalty(x)
    assert np.all(np.diff(y) >= 0.0)
    assert np.all(y <= 0.0)


def test_pg_penalty_tensor_path_matches_numpy():
    x = np.linspace(-3.0, 3.0, 101)
    got = pg_penalty(Tensor(x)).data
    np.testing.assert_allclose(got, pg_penalty(x), atol=1e-12)


def test_pg_penalty_is_differentiable():
    x = Tensor(np.array([-0.5, 0.1, 0.5]), requires_grad=True)
    pg_penalty(x).sum().backward()
    # slope of -softplus(-20(p-0.1))/4 is 5*sigmoid(-20(p-0.1))
    expect = 5.0 / (1.0 + np.exp(20.0 * (x.data - 0.1)))
    np.testing.assert_allclose(x.grad.data, expect, atol=1e-12)


# ---- projected gradient --------------------------------------------------

def test_projected_gradient_examples():
    assert projected_gradient(np.array([1.0, 0.0]),
                              np.array([2.0, 0.0])) == pytest.approx(1.0)
    assert projected_gradient(np.array([1.0, 0.0]),
                              np.array([0.0, 3.0])) == pytest.approx(0.0)
    assert projected_gradient(np.array([1.0, 1.0]),
                              np.array([-1.0, -1.0])) == pytest.approx(
                                  -np.sqrt(2.0))


def test_projected_gradient_zero_direction():
    with pytest.raises(ValueError):
        projected_gradient(np.ones(2), np.zeros(2))


# ---- config --------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        GcgpConfig(lambda_=-1.0)
    with pytest.raises(ValueError):
        GcgpConfig(target_K=0.0)


# ---- mechanism invariants -------------------------------------------------

def _small_data(n=60, seed=0):
    return D.spiral(n, seed=seed)


def test_lambda_zero_no_clip_matches_ordinary():
    data = _small_data()
    cfg = GcgpConfig(lambda_=0.0, use_clip=False, steps=40, log_every=10,
                     seed=0)
    a = MLP((2, 8, 1), "elu", seed=5)
    b = MLP((2, 8, 1), "elu", seed=5)
    center = Tensor(np.zeros(2), requires_grad=True)
    h1 = train_basic_iinn(a, center, data, cfg)
    h2 = train_ordinary(b, data, cfg)
    np.testing.assert_allclose(h1.loss, h2.loss, rtol=1e-12)
    # the unused center never moves
    np.testing.assert_array_equal(center.data, np.zeros(2))


def test_clip_blocks_criterion_when_all_violating():
    # pg = -1 everywhere drives the clip to ~e-10, so the criterion
    # contributes (numerically) nothing to the parameters
    data = _small_data()
    model = MLP((2, 8, 1), "elu", seed=0)
    from invexnn.gcgp import _clip_hook, _criterion, _targets
    y = model(Tensor(data.X))
    loss = _criterion(y, _targets(data, "classification"), "classification")
    loss.backward(hooks={id(y): _clip_hook(np.full(data.n, -1.0))})
    for p in model.parameters():
        assert np.abs(p.grad.data).max() < 1e-8


def test_basic_iinn_improves_invexity_fraction():
    data = _small_data(80, seed=1)
    model = MLP((2, 16, 16, 1), "elu", seed=2)
    center = Tensor(np.zeros(2), requires_grad=True)
    cfg = GcgpConfig(lambda_=2.0, steps=300, log_every=50, seed=1)
    hist = train_basic_iinn(model, center, data, cfg)
    assert hist.invexity_fraction[-1] > 0.9
    assert hist.invexity_fraction[-1] >= hist.invexity_fraction[0]


def test_history_csv_shape():
    data = _small_data()
    model = MLP((2, 4, 1), "elu", seed=0)
    center = Tensor(np.zeros(2), requires_grad=True)
    hist = train_basic_iinn(model, center, data,
                            GcgpConfig(steps=20, log_every=10))
    lines = hist.to_csv().strip().split("\n")
    assert lines[0] == "step,loss,accuracy,invexity_fraction,empirical_K"
    assert len(lines) == 1 + len(hist.steps)
    assert hist.ms_per_step > 0


def test_modified_iinn_keeps_sum_invex():
    # frozen cone f(x) = 2||x||; g trained so h = g + f keeps pg > 0
    data = _small_data(80, seed=2)

    class Cone:
        def __call__(self, x):
            return T.mul(Tensor(2.0),
                         T.l2norm(x, axis=1, keepdims=True, eps=1e-24))
        def parameters(self):
            return []

    g = MLP((2, 16, 1), "elu", seed=3)
    cfg = GcgpConfig(lambda_=2.0, steps=300, log_every=50)
    h, hist = train_modified_iinn(g, Cone(), data, cfg)
    assert isinstance(h, SumModel)
    assert hist.invexity_fraction[-1] > 0.9


def test_guided_iinn_runs_and_logs():
    data = _small_data(60, seed=3)

    class Cone:
        def __call__(self, x):
            return T.l2norm(x, axis=1, keepdims=True, eps=1e-24)
        def parameters(self):
            return []

    g = MLP((2, 8, 1), "elu", seed=4)
    hist = train_guided_iinn(g, Cone(), data,
                             GcgpConfig(lambda_=2.0, steps=100, log_every=25))
    assert len(hist.loss) == len(hist.steps)
    assert hist.invexity_fraction[-1] > 0.5


# ---- lipschitz harness ----------------------------------------------------

def _tiny_regression(n_side=12, seed=9):
    rng = np.random.default_rng(seed)
    axis = np.linspace(-1, 1, n_side)
    gx, gy = np.meshgrid(axis, axis)
    X = np.stack([gx.ravel(), gy.ravel()], axis=1)
    y = np.sin(3 * X[:, 0]) * np.cos(3 * X[:, 1])
    return D.Dataset(X, (y - y.min()) / (y.max() - y.min()),
                     name="tiny", seed=seed)


@pytest.mark.parametrize("method", ["gp", "lp", "gcgp", "sn"])
def test_lipschitz_methods_run(method):
    data = _tiny_regression()
    cfg = GcgpConfig(lambda_=1.0, steps=120, log_every=40, target_K=1.0,
                     task="regression", seed=0)
    net = make_lipschitz_net("regression", method, seed=0)
    hist, metrics = train_lipschitz(net, data, cfg, method)
    assert np.isfinite(metrics["loss"])
    assert np.isfinite(metrics["empirical_K"])
    assert metrics["ms_per_step"] > 0


def test_sn_net_empirical_k_below_one():
    # composition of coeff-1 layers with 1-Lipschitz activations
    data = _tiny_regression()
    cfg = GcgpConfig(lambda_=0.0, steps=200, log_every=50, target_K=1.0,
                     task="regression", seed=1)
    net = make_lipschitz_net("regression", "sn", seed=1)
    _, metrics = train_lipschitz(net, data, cfg, "sn")
    assert metrics["empirical_K"] <= 1.0 + 1e-6


def test_unknown_method_rejected():
    data = _tiny_regression()
    with pytest.raises(ValueError):
        train_lipschitz(make_lipschitz_net("regression", "gp"), data,
                        GcgpConfig(task="regression"), "nope")
