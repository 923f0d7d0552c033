"""Invex scalar fields built as a cone composed with an invertible map.

A cone a*||z - c|| is trivially invex; composing it with a bijection keeps
every sublevel set simply connected, so the composite is invex by
construction rather than by penalty.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import InvertibleStack, Module
from .optim import Adam, TrainingDiverged
from .tensor import Tensor


class ConeHead(Module):
    """f(z) = a * ||z - c||, with trainable center c and scale a = e^s."""

    def __init__(self, dim: int, center=None, log_scale: float = 0.0):
        c = np.zeros(dim) if center is None else np.asarray(center, float)
        self.center = Tensor(c, requires_grad=True)
        self.log_scale = Tensor(float(log_scale), requires_grad=True)

    @property
    def scale(self) -> float:
        return float(np.exp(self.log_scale.data))

    def forward(self, z: Tensor) -> Tensor:
        d = T.sub(z, T.reshape(self.center, 1, -1))
        r = T.l2norm(d, axis=1, keepdims=True, eps=1e-24)
        return T.mul(T.exp(T.reshape(self.log_scale, 1, 1)), r)


class InvexComposite(Module):
    """f(x) = cone(backbone(x)); invex whenever the backbone is invertible."""

    def __init__(self, dim: int = 2, n_blocks: int = 4, hidden: int = 32,
                 coeff: float = 0.9, activation: str = "leaky_relu",
                 seed: int = 0, use_norm: bool = False):
        self.backbone = InvertibleStack(dim, n_blocks=n_blocks, hidden=hidden,
                                        coeff=coeff, activation=activation,
                                        seed=seed, use_norm=use_norm)
        self.head = ConeHead(dim)
        self.threshold = Tensor(1.0, requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return self.head(self.backbone(x))

    def logits(self, x: Tensor) -> Tensor:
        """Inner-class logit; positive inside the sublevel set f < theta."""
        return T.sub(T.reshape(self.threshold, 1, 1), self.forward(x))

    def center_pullback(self, max_iter: int = 200,
                        tol: float = 1e-10) -> np.ndarray:
        """Input-space minimizer: the cone center pulled back through the
        inverse of the backbone."""
        z = self.head.center.data.reshape(1, -1)
        return self.backbone.inverse(z, max_iter=max_iter, tol=tol)[0]

    def renormalize(self, iters: int = 1) -> None:
        self.backbone.renormalize(iters)

    def config(self) -> dict:
        return dict(self.backbone.config)


def invex_eval(model, X: np.ndarray) -> np.ndarray:
    with T.no_grad():
        return model(Tensor(X)).data.reshape(-1)


def binary_connected_predict(model: InvexComposite,
                             X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(hard labels, inner-class probabilities). Inside <=> f(x) < theta."""
    with T.no_grad():
        logit = model.logits(Tensor(X)).data.reshape(-1)
    return (logit > 0).astype(np.int64), 1.0 / (1.0 + np.exp(-logit))


def train_invex_composite(model: InvexComposite, X: np.ndarray,
                          y: np.ndarray, steps: int = 2000, lr: float = 1e-3,
                          inner_class: int = 1, sn_iters: int = 1,
                          log_every: int = 100,
                          lr_schedule: dict[int, float] | None = None):
    """Binary cross-entropy on the logit theta - f(x); the inner class is the
    one meant to occupy the connected sublevel set.

    lr_schedule maps step -> new learning rate (step decay).
    """
    t = Tensor((np.asarray(y) == inner_class).astype(np.float64)
               .reshape(-1, 1))
    opt = Adam(model.parameters(), lr=lr)
    history = []
    for step in range(steps):
        if lr_schedule and step in lr_schedule:
            opt.lr = lr_schedule[step]
        model.renormalize(sn_iters)
        logit = model.logits(Tensor(X))
        loss = T.bce_with_logits(logit, t)
        if not np.isfinite(loss.item()):
            raise TrainingDiverged(step, loss.item())
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % log_every == 0 or step == steps - 1:
            acc = float(((logit.data.reshape(-1) > 0)
                         == (t.data.reshape(-1) > 0.5)).mean())
            history.append((step, loss.item(), acc))
    return history
