"""Gradient-clipped gradient-penalty training.

Two mechanisms combine so the criterion gradient never opposes the
projected-gradient constraint:

* a smooth penalty pushes the per-sample projected gradient pg above zero;
* the criterion's output adjoint is clipped per sample to +-out_clip(pg),
  which goes to zero where the constraint is being violated.

The same machinery constrains K-Lipschitz functions by replacing pg with the
margin K - ||grad f(x)||.
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .datasets import Dataset
from .layers import MLP, Module, SpectralDense
from .optim import Adam, TrainingDiverged
from .tensor import Tensor, grad

_CLIP_KNEE = 0.14845
_CLIP_OFFSET = 0.0844560006


def out_clip(pg: np.ndarray | float) -> np.ndarray:
    """Per-sample clip value for the criterion's output adjoint.

    softplus(20 pg)/20 below the knee, 3 pg - 0.0844560006 above it; the two
    branches are implemented exactly as printed even though they do not meet
    at the knee (the curve stays monotone and near zero for violations,
    which is all the mechanism needs).
    """
    pg = np.asarray(pg, dtype=np.float64)
    left = np.logaddexp(0.0, 20.0 * pg) / 20.0
    right = 3.0 * pg - _CLIP_OFFSET
    return np.where(pg < _CLIP_KNEE, left, right)


def pg_penalty(pg):
    """Penalty curve -softplus(-20 (pg - 0.1))/4; near zero once pg >> 0.1.

    Accepts a tensor (stays on the tape) or a plain array.
    """
    if isinstance(pg, Tensor):
        shifted = T.mul(Tensor(-20.0), T.sub(pg, Tensor(0.1)))
        return T.mul(Tensor(-0.25), T.softplus(shifted))
    pg = np.asarray(pg, dtype=np.float64)
    return -0.25 * np.logaddexp(0.0, -20.0 * (pg - 0.1))


def projected_gradient(grad_x: np.ndarray, direction: np.ndarray) -> float:
    """Dot product with the unit guiding direction (single sample)."""
    n = np.linalg.norm(direction)
    if n == 0.0:
        raise ValueError("projected_gradient: zero direction")
    return float(np.dot(grad_x, direction / n))


@dataclass
class GcgpConfig:
    lambda_: float = 2.0
    steps: int = 5000
    lr: float = 1e-3
    mode: str = "invex_basic"  # invex_basic|invex_modified|invex_guided|lipschitz
    random_point_penalty: bool = False
    n_random_points: int = 256
    # 0 samples the random points uniformly in the (inflated) bounding box;
    # > 0 samples them as gaussian-jittered training points instead, which
    # concentrates the penalty near the data manifold
    random_point_jitter: float = 0.0
    target_K: float = 1.0
    seed: int = 0
    use_clip: bool = True
    log_every: int = 100
    task: str = "classification"  # classification | regression

    def __post_init__(self):
        if self.lambda_ < 0:
            raise ValueError("lambda must be >= 0")
        if self.target_K <= 0:
            raise ValueError("target_K must be > 0")


@dataclass
class TrainHistory:
    steps: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    invexity_fraction: list[float] = field(default_factory=list)
    empirical_K: list[float] = field(default_factory=list)
    skipped_samples: int = 0
    ms_per_step: float = 0.0

    def log(self, step, loss, acc, frac, k):
        self.steps.append(int(step))
        self.loss.append(float(loss))
        self.accuracy.append(float(acc))
        self.invexity_fraction.append(float(frac))
        self.empirical_K.append(float(k))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("step,loss,accuracy,invexity_fraction,empirical_K\n")
        for row in zip(self.steps, self.loss, self.accuracy,
                       self.invexity_fraction, self.empirical_K):
            buf.write(",".join("" if (isinstance(v, float) and np.isnan(v))
                               else repr(v) if isinstance(v, float) else str(v)
                               for v in row) + "\n")
        return buf.getvalue()


def _targets(data: Dataset, task: str) -> Tensor:
    if task == "classification":
        return Tensor(data.y.reshape(-1, 1).astype(np.float64))
    return Tensor(np.asarray(data.y, dtype=np.float64).reshape(-1, 1))


def _criterion(y: Tensor, t: Tensor, task: str) -> Tensor:
    return T.bce_with_logits(y, t) if task == "classification" else T.mse(y, t)


def _accuracy(y: np.ndarray, labels: np.ndarray) -> float:
    return float(((y.reshape(-1) > 0) == (labels.reshape(-1) > 0.5)).mean())


def freeze(module: Module) -> Module:
    for p in module.parameters():
        p.requires_grad = False
    return module


class SumModel(Module):
    """h(x) = g(x) + f(x); used by the modified construction."""

    def __init__(self, g: Module, f: Module):
        self.g = g
        self.f = f

    def forward(self, x: Tensor) -> Tensor:
        return T.add(self.g(x), self.f(x))


def _pg_toward_center(model, X: np.ndarray, center: Tensor,
                      eps: float = 1e-9):
    """Per-sample pg toward the trainable center, on the tape.

    Returns (output node, pg tensor [B], valid mask); rows with x == x* are
    masked out.
    """
    x = Tensor(X, requires_grad=True)
    y = model(x)
    gx = grad(y.sum(), x, create_graph=True)
    diff = T.sub(Tensor(X), center)
    norms = np.linalg.norm(diff.data, axis=1)
    valid = norms > eps
    unit = T.div(diff, T.l2norm(diff, axis=1, keepdims=True, eps=1e-24))
    pg = T.batch_dot(gx, unit)
    return y, pg, valid


def _pg_along_guide(model, guide, X: np.ndarray):
    """Per-sample pg along the frozen guide's raw gradient field."""
    xg = Tensor(X, requires_grad=True)
    with_no = guide(xg)
    gf = grad(with_no.sum(), xg).data
    x = Tensor(X, requires_grad=True)
    y = model(x)
    gx = grad(y.sum(), x, create_graph=True)
    pg = T.batch_dot(gx, Tensor(gf))
    return y, pg, np.ones(X.shape[0], dtype=bool), with_no.data


def _penalty_term(pg: Tensor, valid: np.ndarray, lam: float) -> Tensor:
    pen = T.smooth_l1(pg_penalty(pg))
    if not valid.all():
        pen = T.mul(pen, Tensor(valid.astype(np.float64)))
    return T.mul(pen.mean(), Tensor(lam))


def _penalty_points(rng: np.random.Generator, cfg: GcgpConfig,
                    X: np.ndarray, bbox: np.ndarray) -> np.ndarray:
    if cfg.random_point_jitter > 0:
        idx = rng.integers(0, X.shape[0], size=cfg.n_random_points)
        return X[idx] + rng.normal(0.0, cfg.random_point_jitter,
                                   size=(cfg.n_random_points, X.shape[1]))
    return rng.uniform(bbox[:, 0], bbox[:, 1],
                       size=(cfg.n_random_points, X.shape[1]))


def _clip_hook(pg_values: np.ndarray):
    clip_val = out_clip(pg_values).reshape(-1, 1)

    def hook(adj: np.ndarray) -> np.ndarray:
        return np.clip(adj, -clip_val, clip_val)

    return hook


def train_basic_iinn(model: Module, center: Tensor, data: Dataset,
                     cfg: GcgpConfig) -> TrainHistory:
    """Constrained training toward a single trainable center.

    Per step: per-sample input gradients, projected onto the unit direction
    from the center; the penalty is backpropagated to all parameters, then
    the criterion adjoint is clipped per sample before its own backward.
    """
    opt = Adam(model.parameters() + [center], lr=cfg.lr)
    t = _targets(data, cfg.task)
    rng = np.random.default_rng(cfg.seed)
    bbox = data.bounding_box(inflate=0.2)
    hist = TrainHistory()
    t0 = time.perf_counter()
    for step in range(cfg.steps):
        y, pg, valid = _pg_toward_center(model, data.X, center)
        opt.zero_grad()
        if cfg.lambda_ > 0:
            pgp = _penalty_term(pg, valid, cfg.lambda_)
            if cfg.random_point_penalty:
                pts = _penalty_points(rng, cfg, data.X, bbox)
                _, pg_r, valid_r = _pg_toward_center(model, pts, center)
                pgp = T.add(pgp, _penalty_term(pg_r, valid_r, cfg.lambda_))
            pgp.backward()
        loss = _criterion(y, t, cfg.task)
        if not np.isfinite(loss.item()):
            raise TrainingDiverged(step, loss.item())
        hooks = {id(y): _clip_hook(pg.data)} if cfg.use_clip else None
        loss.backward(hooks=hooks)
        opt.step()
        hist.skipped_samples += int((~valid).sum())
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            gx_norm = _input_grad_norms(model, data.X)
            hist.log(step, loss.item(), _accuracy(y.data, data.y),
                     float((pg.data[valid] > 0).mean()), gx_norm.max())
    hist.ms_per_step = (time.perf_counter() - t0) / cfg.steps * 1e3
    return hist


def _input_grad_norms(model, X: np.ndarray) -> np.ndarray:
    x = Tensor(X, requires_grad=True)
    gx = grad(model(x).sum(), x).data
    return np.linalg.norm(gx, axis=1)


def train_modified_iinn(g_model: Module, f_invex: Module, data: Dataset,
                        cfg: GcgpConfig) -> tuple[SumModel, TrainHistory]:
    """Train g so h = g + f stays invex, with f frozen.

    pg uses the raw (unnormalized) gradient of f, as the construction is
    stated; the clip is applied to the adjoint of h's output.
    """
    freeze(f_invex)
    opt = Adam(g_model.parameters(), lr=cfg.lr)
    t = _targets(data, cfg.task)
    rng = np.random.default_rng(cfg.seed)
    bbox = data.bounding_box(inflate=0.2)
    hist = TrainHistory()
    t0 = time.perf_counter()
    for step in range(cfg.steps):
        y_g, pg, valid, f_vals = _pg_along_guide(g_model, f_invex, data.X)
        y = T.add(y_g, Tensor(f_vals))
        opt.zero_grad()
        if cfg.lambda_ > 0:
            pgp = _penalty_term(pg, valid, cfg.lambda_)
            if cfg.random_point_penalty:
                pts = _penalty_points(rng, cfg, data.X, bbox)
                _, pg_r, valid_r, _ = _pg_along_guide(g_model, f_invex, pts)
                pgp = T.add(pgp, _penalty_term(pg_r, valid_r, cfg.lambda_))
            pgp.backward()
        loss = _criterion(y, t, cfg.task)
        if not np.isfinite(loss.item()):
            raise TrainingDiverged(step, loss.item())
        hooks = {id(y): _clip_hook(pg.data)} if cfg.use_clip else None
        loss.backward(hooks=hooks)
        opt.step()
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            hist.log(step, loss.item(), _accuracy(y.data, data.y),
                     float((pg.data > 0).mean()), np.nan)
    hist.ms_per_step = (time.perf_counter() - t0) / cfg.steps * 1e3
    return SumModel(g_model, f_invex), hist


def train_guided_iinn(g_model: Module, f_guide: Module, data: Dataset,
                      cfg: GcgpConfig) -> TrainHistory:
    """Like the modified construction, but the guide contributes only its
    gradient field; its output is never added to the prediction."""
    freeze(f_guide)
    opt = Adam(g_model.parameters(), lr=cfg.lr)
    t = _targets(data, cfg.task)
    hist = TrainHistory()
    t0 = time.perf_counter()
    for step in range(cfg.steps):
        y, pg, valid, _ = _pg_along_guide(g_model, f_guide, data.X)
        opt.zero_grad()
        if cfg.lambda_ > 0:
            _penalty_term(pg, valid, cfg.lambda_).backward()
        loss = _criterion(y, t, cfg.task)
        if not np.isfinite(loss.item()):
            raise TrainingDiverged(step, loss.item())
        hooks = {id(y): _clip_hook(pg.data)} if cfg.use_clip else None
        loss.backward(hooks=hooks)
        opt.step()
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            hist.log(step, loss.item(), _accuracy(y.data, data.y),
                     float((pg.data > 0).mean()), np.nan)
    hist.ms_per_step = (time.perf_counter() - t0) / cfg.steps * 1e3
    return hist


def train_ordinary(model: Module, data: Dataset,
                   cfg: GcgpConfig) -> TrainHistory:
    """Unconstrained baseline with the same criterion and optimizer."""
    opt = Adam(model.parameters(), lr=cfg.lr)
    t = _targets(data, cfg.task)
    hist = TrainHistory()
    t0 = time.perf_counter()
    for step in range(cfg.steps):
        y = model(Tensor(data.X))
        loss = _criterion(y, t, cfg.task)
        if not np.isfinite(loss.item()):
            raise TrainingDiverged(step, loss.item())
        opt.zero_grad()
        loss.backward()
        opt.step()
        if hasattr(model, "project"):
            model.project()
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            acc = _accuracy(y.data, data.y) \
                if cfg.task == "classification" else np.nan
            hist.log(step, loss.item(), acc, np.nan, np.nan)
    hist.ms_per_step = (time.perf_counter() - t0) / cfg.steps * 1e3
    return hist


LIPSCHITZ_METHODS = ("gp", "lp", "sn", "gcgp")


def make_lipschitz_net(task: str, method: str, seed: int = 0,
                       dims=(2, 10, 10, 1)) -> Module:
    activation = "elu" if task == "regression" else "leaky_relu"
    if method == "sn":
        rng = np.random.default_rng(seed)
        net = MLP(dims, activation, "none", seed=seed)
        # swap in spectrally normalized layers, coeff 1 per layer
        net.layers = [
            SpectralDense(a, b,
                          activation if i < len(dims) - 2 else "none",
                          coeff=1.0, rng=rng)
            for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))
        ]
        return net
    return MLP(dims, activation, "none", seed=seed)


def train_lipschitz(model: Module, data: Dataset, cfg: GcgpConfig,
                    method: str) -> tuple[TrainHistory, dict]:
    """Comparison harness: constrain the gradient norm to target_K.

    gp: smooth-L1 on (||grad|| - K), two-sided.
    lp: smooth-L1 on max(0, ||grad|| - K), violations only.
    sn: per-step spectral normalization, no penalty.
    gcgp: pg := K - ||grad||, same penalty/clip mechanics as the invex case.
    """
    if method not in LIPSCHITZ_METHODS:
        raise ValueError(f"unknown lipschitz method {method!r}")
    opt = Adam(model.parameters(), lr=cfg.lr)
    t = _targets(data, cfg.task)
    K = cfg.target_K
    hist = TrainHistory()
    t0 = time.perf_counter()
    for step in range(cfg.steps):
        if method == "sn":
            for layer in model.layers:
                layer.renormalize(1)
            y = model(Tensor(data.X))
            if cfg.task == "classification":
                # sigmoid4 keeps the output 1-Lipschitz; criterion sees /4
                p = T.mul(T.sigmoid4(y), Tensor(0.25))
                loss = T.neg(T.tmean(T.add(
                    T.mul(t, T.log(T.add(p, Tensor(1e-12)))),
                    T.mul(T.sub(Tensor(1.0), t),
                          T.log(T.add(T.sub(Tensor(1.0), p),
                                      Tensor(1e-12)))))))
            else:
                loss = T.mse(y, t)
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(step, loss.item())
            opt.zero_grad()
            loss.backward()
            opt.step()
        else:
            x = Tensor(data.X, requires_grad=True)
            y = model(x)
            gx = grad(y.sum(), x, create_graph=True)
            gnorm = T.l2norm(gx, axis=1, eps=1e-24)
            loss = _criterion(y, t, cfg.task)
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(step, loss.item())
            opt.zero_grad()
            hooks = None
            if method == "gp":
                pen = T.smooth_l1(T.sub(gnorm, Tensor(K)))
                T.mul(pen.mean(), Tensor(cfg.lambda_)).backward()
            elif method == "lp":
                pen = T.smooth_l1(T.relu(T.sub(gnorm, Tensor(K))))
                T.mul(pen.mean(), Tensor(cfg.lambda_)).backward()
            else:  # gcgp: violation <=> negative margin
                pg = T.sub(Tensor(K), gnorm)
                _penalty_term(pg, np.ones(data.n, bool),
                              cfg.lambda_).backward()
                if cfg.use_clip:
                    hooks = {id(y): _clip_hook(pg.data)}
            loss.backward(hooks=hooks)
            opt.step()
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            acc = _accuracy(y.data, data.y) \
                if cfg.task == "classification" else np.nan
            hist.log(step, loss.item(), acc, np.nan,
                     _input_grad_norms(model, data.X).max())
    hist.ms_per_step = (time.perf_counter() - t0) / cfg.steps * 1e3

    from .verify import estimate_lipschitz, random_box_points
    grid = random_box_points(data.bounding_box(), 10000, seed=cfg.seed)
    est = estimate_lipschitz(model, np.concatenate([data.X, grid]))
    metrics = {
        "loss": hist.loss[-1],
        "accuracy": hist.accuracy[-1],
        "empirical_K": est.max_grad_norm,
        "min_grad_norm": est.min_grad_norm,
        "ms_per_step": hist.ms_per_step,
    }
    return hist, metrics
