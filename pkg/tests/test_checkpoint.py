import json

import numpy as np
import pytest

from invexnn import checkpoint as C
from invexnn import tensor as T
from invexnn.classifier import MultiInvexClassifier
from invexnn.gcgp import make_lipschitz_net
from invexnn.invex import InvexComposite
from invexnn.layers import ConvexNet, MLP
from invexnn.tensor import Tensor


def outputs(model, X):
    with T.no_grad():
        return model(Tensor(X)).data


def test_mlp_roundtrip_is_bitwise():
    X = np.random.default_rng(0).normal(size=(20, 2))
    net = MLP((2, 16, 3), "elu", seed=5)
    kind, loaded, extra = C.from_json(C.to_json("mlp", net))
    assert kind == "mlp"
    np.testing.assert_array_equal(outputs(net, X), outputs(loaded, X))


def test_convex_roundtrip():
    X = np.random.default_rng(1).normal(size=(20, 2))
    net = ConvexNet((2, 8, 8, 1), seed=2)
    _, loaded, _ = C.from_json(C.to_json("convex", net))
    np.testing.assert_array_equal(outputs(net, X), outputs(loaded, X))


def test_invex_composite_roundtrip_keeps_inverse():
    model = InvexComposite(2, n_blocks=3, hidden=8, seed=4)
    model.renormalize(30)
    model.head.center.data[:] = [0.3, -0.2]
    _, loaded, _ = C.from_json(C.to_json("invex_composite", model))
    X = np.random.default_rng(2).normal(size=(30, 2))
    np.testing.assert_array_equal(outputs(model, X), outputs(loaded, X))
    # spectral scales and power-iteration state survive, so the
    # pullback center matches too
    np.testing.assert_allclose(loaded.center_pullback(),
                               model.center_pullback(), atol=1e-12)


def test_multi_invex_roundtrip_after_morphism():
    m = MultiInvexClassifier(2, 2, 3, seed=0)
    m.renormalize(20)
    m.add_region([0.5, 0.5], 2)
    m.remove_region(0)
    blob = C.to_json("multi_invex", m, extra={"note": "after edits"})
    kind, loaded, extra = C.from_json(blob)
    assert kind == "multi_invex" and extra["note"] == "after edits"
    assert loaded.n_regions == m.n_regions
    assert loaded.revision == m.revision
    X = np.random.default_rng(3).normal(size=(40, 2))
    np.testing.assert_array_equal(m.predict(X), loaded.predict(X))
    np.testing.assert_array_equal(m.classify(X)["soft"],
                                  loaded.classify(X)["soft"])


def test_lipschitz_needs_explicit_config():
    net = make_lipschitz_net("regression", "gp", seed=0)
    with pytest.raises(C.CheckpointError):
        C.to_json("lipschitz", net)
    cfg = {"task": "regression", "method": "gp", "dims": [2, 10, 10, 1]}
    blob = C.to_json("lipschitz", net, extra={"config": cfg})
    _, loaded, _ = C.from_json(blob)
    X = np.random.default_rng(4).normal(size=(10, 2))
    np.testing.assert_array_equal(outputs(net, X), outputs(loaded, X))


def test_save_and_load_file(tmp_path):
    path = tmp_path / "model.json"
    net = MLP((2, 4, 1), seed=1)
    C.save(str(path), "mlp", net)
    kind, loaded, _ = C.load(str(path))
    assert kind == "mlp"
    X = np.random.default_rng(5).normal(size=(5, 2))
    np.testing.assert_array_equal(outputs(net, X), outputs(loaded, X))
    assert not list(tmp_path.glob("*.tmp"))  # atomic write left no debris


def test_malformed_checkpoints_rejected():
    with pytest.raises(C.CheckpointError, match="JSON"):
        C.from_json("{nope")
    with pytest.raises(C.CheckpointError, match="missing"):
        C.from_json(json.dumps({"kind": "mlp"}))
    with pytest.raises(C.CheckpointError, match="format_version"):
        C.from_json(json.dumps({"format_version": 99, "kind": "mlp",
                                "config": {}, "state": {}}))
    with pytest.raises(C.CheckpointError, match="kind"):
        C.from_json(json.dumps({"format_version": 1, "kind": "svm",
                                "config": {}, "state": {}}))


def test_shape_mismatch_rejected():
    net = MLP((2, 4, 1), seed=0)
    blob = json.loads(C.to_json("mlp", net))
    blob["config"]["dims"] = [2, 8, 1]
    with pytest.raises(C.CheckpointError, match="shape"):
        C.from_json(json.dumps(blob))
