"""JSON checkpoints: enough to rebuild a model and restore every array.

The state walker serializes Tensors, plain numpy buffers (running stats,
power-iteration vectors) and scalars by attribute path, so adding a field to
a layer automatically lands in the checkpoint.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .classifier import MultiInvexClassifier
from .gcgp import make_lipschitz_net
from .invex import InvexComposite
from .layers import ConvexNet, MLP, Module, SpectralState
from .tensor import Tensor

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint."""


def _encode(value):
    if isinstance(value, Tensor):
        return {"__tensor__": value.data.tolist()}
    if isinstance(value, np.ndarray):
        return {"__array__": value.tolist()}
    if isinstance(value, SpectralState):
        return {"__spectral__": {"u": value.u.tolist(), "v": value.v.tolist(),
                                 "coeff": value.coeff}}
    if isinstance(value, Module):
        return {"__module__": state_dict(value)}
    if isinstance(value, (list, tuple)) and value \
            and all(isinstance(m, Module) for m in value):
        return {"__modules__": [state_dict(m) for m in value]}
    if isinstance(value, (list, tuple)) and value \
            and all(isinstance(t, Tensor) for t in value):
        return {"__tensors__": [t.data.tolist() for t in value]}
    if isinstance(value, (bool, int, float, str)) or value is None:
        return value
    if isinstance(value, (list, tuple, dict)):
        return {"__value__": value if isinstance(value, dict)
                else list(value)}
    return None  # unknown attribute kinds are rebuilt by the constructor


def state_dict(module: Module) -> dict:
    out = {}
    for key, value in module.__dict__.items():
        enc = _encode(value)
        if enc is not None or value is None:
            out[key] = enc
    return out


def _restore(value, enc, path):
    if isinstance(enc, dict) and "__tensor__" in enc:
        arr = np.asarray(enc["__tensor__"], dtype=np.float64)
        if value.data.shape != arr.shape:
            raise CheckpointError(
                f"{path}: shape {arr.shape} != model {value.data.shape}")
        value.data = arr
        return value
    if isinstance(enc, dict) and "__array__" in enc:
        return np.asarray(enc["__array__"], dtype=np.float64)
    if isinstance(enc, dict) and "__spectral__" in enc:
        s = enc["__spectral__"]
        value.u = np.asarray(s["u"])
        value.v = np.asarray(s["v"])
        value.coeff = float(s["coeff"])
        return value
    if isinstance(enc, dict) and "__module__" in enc:
        load_state_dict(value, enc["__module__"])
        return value
    if isinstance(enc, dict) and "__modules__" in enc:
        if len(value) != len(enc["__modules__"]):
            raise CheckpointError(f"{path}: module list length mismatch")
        for m, sd in zip(value, enc["__modules__"]):
            load_state_dict(m, sd)
        return value
    if isinstance(enc, dict) and "__tensors__" in enc:
        for t, arr in zip(value, enc["__tensors__"]):
            t.data = np.asarray(arr, dtype=np.float64)
        return value
    if isinstance(enc, dict) and "__value__" in enc:
        return type(value)(enc["__value__"]) if value is not None \
            else enc["__value__"]
    return enc


def load_state_dict(module: Module, sd: dict) -> None:
    for key, enc in sd.items():
        if key not in module.__dict__:
            raise CheckpointError(f"unknown attribute {key!r} in checkpoint")
        module.__dict__[key] = _restore(module.__dict__[key], enc, key)


# -- model registry -----------------------------------------------------------


def _build_mlp(cfg):
    return MLP(cfg["dims"], cfg["activation"], cfg["final_activation"])


def _build_convex(cfg):
    return ConvexNet(cfg["dims"], cfg["activation"])


def _build_invex(cfg):
    return InvexComposite(cfg["dim"], n_blocks=cfg["n_blocks"],
                          hidden=cfg["hidden"], coeff=cfg["coeff"],
                          activation=cfg["activation"],
                          use_norm=cfg["use_norm"])


def _build_multi_invex(cfg):
    return MultiInvexClassifier(cfg["dim"], cfg["n_regions"],
                                cfg["n_classes"], cfg["weight_type"],
                                n_blocks=cfg["n_blocks"],
                                hidden=cfg["hidden"], coeff=cfg["coeff"])


def _build_lipschitz(cfg):
    return make_lipschitz_net(cfg["task"], cfg["method"],
                              dims=tuple(cfg["dims"]))


BUILDERS = {
    "mlp": _build_mlp,
    "convex": _build_convex,
    "invex_composite": _build_invex,
    "multi_invex": _build_multi_invex,
    "lipschitz": _build_lipschitz,
}


def model_config(kind: str, model) -> dict:
    if kind == "mlp":
        return {"dims": list(model.dims), "activation": model.activation,
                "final_activation": model.final_activation}
    if kind == "convex":
        return {"dims": list(model.dims), "activation": model.activation}
    if kind == "invex_composite":
        return dict(model.backbone.config)
    if kind == "multi_invex":
        cfg = dict(model.backbone.config)
        cfg.update(n_regions=model.n_regions, n_classes=model.n_classes,
                   weight_type=model.weight_type)
        cfg.pop("use_norm", None)
        cfg.pop("activation", None)
        return cfg
    if kind == "lipschitz":
        raise CheckpointError(
            "lipschitz checkpoints need an explicit config "
            '(pass extra={"config": {...}})')
    raise CheckpointError(f"unknown model kind {kind!r}")


def to_json(kind: str, model, extra: dict | None = None) -> str:
    if kind not in BUILDERS:
        raise CheckpointError(f"unknown model kind {kind!r}")
    extra = dict(extra) if extra else {}
    config = extra.pop("config", None) or model_config(kind, model)
    return json.dumps({
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "state": state_dict(model),
        "extra": extra,
    })


def from_json(text: str):
    """Returns (kind, model, extra)."""
    try:
        blob = json.loads(text)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"not valid JSON: {e}") from None
    for field in ("format_version", "kind", "config", "state"):
        if field not in blob:
            raise CheckpointError(f"checkpoint missing {field!r}")
    if blob["format_version"] != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported format_version {blob['format_version']}")
    kind = blob["kind"]
    if kind not in BUILDERS:
        raise CheckpointError(f"unknown model kind {kind!r}")
    model = BUILDERS[kind](blob["config"])
    load_state_dict(model, blob["state"])
    return kind, model, blob.get("extra", {})


def save(path: str, kind: str, model, extra: dict | None = None) -> None:
    """Atomic write: temp file in the target directory, then rename."""
    text = to_json(kind, model, extra)
    write_atomic(path, text)


def write_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path: str):
    with open(path, "r", encoding="utf-8") as f:
        return from_json(f.read())
