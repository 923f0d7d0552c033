"""End-to-end acceptance runs: full training on the 2D benchmark tasks.

These tests train real models (several minutes each; a couple of hours for
the whole module) and gate on final accuracy, empirical Lipschitz
constants, invexity fractions, raster connectedness, and the scripted
morphism replay. The fast per-property suites live in the other test
modules (test_tensor.py, test_gcgp.py, test_invex.py, test_classifier.py,
test_verify.py, ...) and run standalone.

Run selectively with:  python3 -m pytest tests/test_acceptance.py -v
"""

import time
from functools import lru_cache

import numpy as np
import pytest

from invexnn import datasets as D
from invexnn import tensor as T
from invexnn.classifier import MultiInvexClassifier, train_multi_invex
from invexnn.gcgp import (GcgpConfig, make_lipschitz_net, train_basic_iinn,
                          train_lipschitz, train_modified_iinn,
                          train_ordinary)
from invexnn.invex import InvexComposite, train_invex_composite
from invexnn.layers import MLP, ConvexNet
from invexnn.tensor import Tensor
from invexnn.verify import (check_invexity, connected_components, rasterize,
                            random_box_points, sublevel_raster)

SEEDS = (147, 258, 369)


# -- trained-model cache (each model is reused across criteria) --------------

@lru_cache(maxsize=None)
def basic_run(seed):
    # random-point penalty (gaussian jitter around the training points)
    # keeps the projected-gradient rule satisfied off the training set, at
    # the cost of landing at the invex optimum (~0.94) instead of 100%
    data = D.spiral(400, seed=seed)
    model = MLP((2, 100, 100, 1), "elu", seed=seed)
    center = Tensor(data.X.mean(axis=0), requires_grad=True)
    cfg = GcgpConfig(lambda_=2.0, steps=16000, lr=1e-3, seed=seed,
                     log_every=2000, random_point_penalty=True,
                     random_point_jitter=0.08)
    t0 = time.perf_counter()
    hist = train_basic_iinn(model, center, data, cfg)
    print(f"basic seed {seed}: acc {hist.accuracy[-1]:.4f} "
          f"({time.perf_counter() - t0:.0f}s)")
    return model, center, data, hist


@lru_cache(maxsize=None)
def composed_run(seed):
    # h = g + f with f a basic run trained on the data penalty alone; g is
    # constrained along f's gradient field, which bends with the arms
    data = D.spiral(400, seed=seed)
    f = MLP((2, 100, 100, 1), "elu", seed=seed)
    center = Tensor(data.X.mean(axis=0), requires_grad=True)
    t0 = time.perf_counter()
    train_basic_iinn(f, center, data,
                     GcgpConfig(lambda_=2.0, steps=8000, lr=1e-3, seed=seed,
                                log_every=2000))
    g = MLP((2, 100, 100, 1), "elu", seed=seed + 7)
    cfg = GcgpConfig(lambda_=2.0, steps=12000, lr=1e-3, seed=seed,
                     mode="invex_modified", log_every=2000)
    model, hist = train_modified_iinn(g, f, data, cfg)
    print(f"composed seed {seed}: acc {hist.accuracy[-1]:.4f} "
          f"({time.perf_counter() - t0:.0f}s)")
    return model, f, data, hist


@lru_cache(maxsize=None)
def composite_run(seed):
    data = D.spiral(400, seed=seed)
    model = InvexComposite(2, n_blocks=16, hidden=64, coeff=0.99,
                           activation="leaky_relu", seed=seed)
    t0 = time.perf_counter()
    history = train_invex_composite(model, data.X, data.y, steps=6000,
                                    lr=5e-3, log_every=1000,
                                    lr_schedule={2500: 2e-3, 4500: 5e-4})
    print(f"composite seed {seed}: acc {history[-1][2]:.4f} "
          f"({time.perf_counter() - t0:.0f}s)")
    return model, data, history


@lru_cache(maxsize=None)
def baseline_run(seed, kind):
    data = D.spiral(400, seed=seed)
    cfg = GcgpConfig(lambda_=0.0, steps=3000, lr=1e-3, seed=seed,
                     log_every=1000)
    model = (MLP((2, 100, 100, 1), "leaky_relu", seed=seed)
             if kind == "ordinary" else ConvexNet((2, 100, 100, 1),
                                                  seed=seed))
    hist = train_ordinary(model, data, cfg)
    return model, data, hist


@lru_cache(maxsize=None)
def lipschitz_run(method, dataset, lam):
    data = D.regression1() if dataset == "regression1" else D.regression2()
    cfg = GcgpConfig(lambda_=lam, steps=7500, lr=1e-3, seed=147,
                     task="regression", target_K=1.0, log_every=2500)
    net = make_lipschitz_net("regression", method, seed=147)
    t0 = time.perf_counter()
    _, metrics = train_lipschitz(net, data, cfg, method)
    print(f"{method} {dataset} lam={lam}: K {metrics['empirical_K']:.4f} "
          f"mse {metrics['loss']:.4f} ({time.perf_counter() - t0:.0f}s)")
    return metrics


@lru_cache(maxsize=None)
def clusters7_run():
    data = D.clusters5(seed=0)
    model = MultiInvexClassifier(2, 7, 3, seed=147)
    model.init_from_data(data.X, data.y, seed=147)
    train_multi_invex(model, data.X, data.y, steps=2000, lr=3e-3,
                      log_every=500)
    return model, data


# -- criterion 1: spiral benchmark across constructions ----------------------

@pytest.mark.parametrize("seed", SEEDS)
def test_spiral_ordinary_reaches_100(seed):
    _, _, hist = baseline_run(seed, "ordinary")
    assert hist.accuracy[-1] == 1.0


@pytest.mark.parametrize("seed", SEEDS)
def test_spiral_convex_underperforms(seed):
    # the convex comparison net cannot carve the spiral; its ceiling is
    # well below the invex constructions
    _, _, hist = baseline_run(seed, "convex")
    assert hist.accuracy[-1] <= 0.92


@pytest.mark.parametrize("seed", SEEDS)
def test_spiral_basic_invex(seed):
    _, _, _, hist = basic_run(seed)
    assert hist.accuracy[-1] >= 0.93


@pytest.mark.parametrize("seed", SEEDS)
def test_spiral_composed_invex(seed):
    _, _, _, hist = composed_run(seed)
    assert hist.accuracy[-1] == 1.0


@pytest.mark.parametrize("seed", SEEDS)
def test_spiral_invertible_cone(seed):
    _, _, history = composite_run(seed)
    assert history[-1][2] == 1.0


# -- criterion 2: K-Lipschitz constraint comparison --------------------------

def test_lipschitz_gcgp_hits_target_without_overshoot():
    m = lipschitz_run("gcgp", "regression1", 3.0)
    assert 0.80 <= m["empirical_K"] <= 1.05
    assert m["loss"] <= 0.12


def test_lipschitz_plain_gp_overshoots():
    m = lipschitz_run("gp", "regression1", 1.0)
    assert m["empirical_K"] >= 1.15


def test_lipschitz_sn_overconstrains():
    sn = lipschitz_run("sn", "regression2", 0.0)
    gcgp = lipschitz_run("gcgp", "regression2", 3.0)
    assert sn["empirical_K"] <= 0.6
    assert sn["loss"] >= gcgp["loss"]


# -- criterion 3: invexity verification --------------------------------------

def _invexity_fractions(model, data, **direction):
    # direction is either center=... (basic: toward the trained center) or
    # guide=... (composed: along the frozen guide's gradient field)
    test = D.spiral(400, seed=1147)
    pts = np.concatenate([data.X, test.X])
    rep = check_invexity(model, pts, **direction)
    # 10^6 random box points, chunked to bound memory; reported, not gated
    bounds = data.bounding_box(inflate=0.2)
    fracs = []
    for k in range(10):
        rnd = random_box_points(bounds, 100_000, seed=k)
        fracs.append(check_invexity(model, rnd, point_source="random_box",
                                    **direction).fraction)
    return rep.fraction, float(np.mean(fracs))


def test_basic_invexity_on_data_points():
    model, center, data, _ = basic_run(147)
    data_frac, random_frac = _invexity_fractions(model, data,
                                                 center=center.data)
    print(f"basic invexity: data {data_frac:.4f}, "
          f"random(1e6) {random_frac:.4f}")
    assert data_frac >= 0.99


def test_composed_invexity_on_data_points():
    model, f, data, _ = composed_run(147)
    data_frac, random_frac = _invexity_fractions(model, data, guide=f)
    print(f"composed invexity: data {data_frac:.4f}, "
          f"random(1e6) {random_frac:.4f}")
    assert data_frac >= 0.99


# -- criterion 4: connectedness oracle ---------------------------------------

def test_composite_sublevel_sets_connected():
    # thresholds are range quantiles over the window, so the five sublevel
    # sets span 10%-90% of its area; 4x supersampling keeps filaments
    # thinner than one raster cell from breaking the occupancy raster
    model, data, _ = composite_run(147)
    bounds = data.bounding_box(inflate=0.2)

    def fn(pts):
        with T.no_grad():
            return model(Tensor(pts)).data.reshape(-1)

    window_vals = rasterize(fn, bounds, 400).values
    for q in (0.1, 0.3, 0.5, 0.7, 0.9):
        thr = float(np.quantile(window_vals, q))
        raster = sublevel_raster(model, bounds, 400, thr, supersample=4)
        assert connected_components(raster, 1) == 1, f"quantile {q}"


def test_multi_invex_regions_connected():
    model, data = clusters7_run()
    acc = float((model.predict(data.X) == data.y).mean())
    assert acc >= 0.95
    bounds = data.bounding_box(inflate=0.2)
    raster = rasterize(
        lambda pts: model.classify(pts)["region"].astype(float), bounds, 400)
    for r in range(model.n_regions):
        n = connected_components(raster, float(r))
        if n:  # regions claiming no raster cell are vacuously fine
            assert n == 1, f"region {r} split into {n} components"


def test_two_cone_argmax_negative_control():
    # argmax over two cones with different scales: the milder cone's cell
    # is cut in two by the steeper cone's (Apollonius) disk inside a strip
    a, b = np.array([-1.0, 0.0]), np.array([1.0, 0.0])

    def winner(pts):
        f1 = np.linalg.norm(pts - a, axis=1)
        f2 = 3.0 * np.linalg.norm(pts - b, axis=1)
        return (f2 < f1).astype(float)

    strip = np.array([[-3.0, 3.0], [-0.3, 0.3]])
    raster = rasterize(winner, strip, (400, 80))
    assert connected_components(raster, 0.0) >= 2
    assert connected_components(raster, 1.0) == 1


# -- criterion 5: scripted morphism replay -----------------------------------

def _assert_add_is_local(model, X, point, class_label):
    before = model.classify(X)["region"]
    idx = model.add_region(point, class_label)
    after = model.classify(X)["region"]
    moved = after == idx
    # zero bias: points either switch to the new cell or stay put, exactly
    np.testing.assert_array_equal(after[~moved], before[~moved])
    assert model.classify(np.asarray(point).reshape(1, -1))["region"][0] \
        == idx
    return idx


def _assert_remove_is_local(model, X, index):
    before = model.classify(X)["region"]
    model.remove_region(index)
    after = model.classify(X)["region"]
    kept = before != index
    shifted = before[kept] - (before[kept] > index)
    np.testing.assert_array_equal(after[kept], shifted)


def test_morphism_replay_sequence():
    data = D.clusters5(seed=0)
    model = MultiInvexClassifier(2, 5, 3, seed=147)
    model.init_from_data(data.X, data.y, seed=147)
    train_multi_invex(model, data.X, data.y, steps=3000, lr=3e-3)

    _assert_add_is_local(model, data.X, [-1.0, -1.0], 2)
    _assert_add_is_local(model, data.X, [0.0, -1.0], 1)
    train_multi_invex(model, data.X, data.y, steps=2500, lr=3e-3)

    report = model.region_report(data.X, data.y)
    worst = min([e for e in report if not e["empty"]],
                key=lambda e: e["accuracy"])
    _assert_remove_is_local(model, data.X, worst["region"])
    train_multi_invex(model, data.X, data.y, steps=2500, lr=3e-3)

    final = float((model.predict(data.X) == data.y).mean())
    print(f"replay final accuracy {final:.4f}")
    assert final >= 0.95


# -- criterion 6: soft assignments converge to the hard region label ---------

def test_soft_mixture_close_to_winning_region_row():
    # ||soft - p_r*||_inf <= (R-1) * exp(-gap), gap = score margin of the
    # argmax region; sharpening the scores drives the mixture to the row
    model = MultiInvexClassifier(2, 6, 3, seed=5)
    model.renormalize(30)
    X = np.random.default_rng(7).normal(size=(300, 2))

    def deviations():
        with_latent = model.backbone(Tensor(X))
        scores = model.region_scores(with_latent).data
        soft = model(Tensor(X)).data
        rows = model.class_probs().data
        order = np.sort(scores, axis=1)
        gap = order[:, -1] - order[:, -2]
        winner = np.argmax(scores, axis=1)
        dev = np.abs(soft - rows[winner]).max(axis=1)
        bound = (model.n_regions - 1) * np.exp(-gap)
        assert np.all(dev <= bound + 1e-12)
        return dev, gap

    loose, gap0 = deviations()
    model.log_inverse_temp.data = np.asarray(8.0)
    sharp, _ = deviations()
    assert sharp.max() < loose.max()
    # away from region boundaries the mixture collapses onto the hard row
    interior = gap0 >= 0.05
    assert interior.any()
    assert np.all(sharp[interior] < 1e-10)
