"""Dense stacks, spectral normalization, invertible residual blocks and the
input-convex comparison network."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class InversionError(RuntimeError):
    """Fixed-point inversion failed to converge."""

    def __init__(self, residual: float, max_iter: int):
        super().__init__(
            f"inverse did not converge within {max_iter} iterations "
            f"(residual {residual:.3e})")
        self.residual = residual


class Module:
    training: bool = True

    def parameters(self) -> list[Tensor]:
        out: list[Tensor] = []
        for v in self.__dict__.values():
            if isinstance(v, Tensor) and v.requires_grad:
                out.append(v)
            elif isinstance(v, Module):
                out.extend(v.parameters())
            elif isinstance(v, (list, tuple)):
                for item in v:
                    if isinstance(item, Module):
                        out.extend(item.parameters())
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out.append(item)
        return out

    def modules(self) -> list["Module"]:
        out: list[Module] = [self]
        for v in self.__dict__.values():
            if isinstance(v, Module):
                out.extend(v.modules())
            elif isinstance(v, (list, tuple)):
                for item in v:
                    if isinstance(item, Module):
                        out.extend(item.modules())
        return out

    def train(self, flag: bool = True) -> "Module":
        for m in self.modules():
            m.training = flag
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Dense(Module):
    def __init__(self, in_dim: int, out_dim: int, activation: str = "none",
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.activation = activation
        self.weight = Tensor(_glorot(rng, in_dim, out_dim), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        y = T.add(T.matmul(x, self.weight), self.bias)
        return T.ACTIVATIONS[self.activation](y)


class MLP(Module):
    """Plain dense stack, e.g. dims=(2, 100, 100, 1)."""

    def __init__(self, dims, activation: str = "leaky_relu",
                 final_activation: str = "none", seed: int = 0):
        rng = np.random.default_rng(seed)
        self.dims = tuple(int(d) for d in dims)
        self.activation = activation
        self.final_activation = final_activation
        self.layers = [
            Dense(a, b,
                  activation if i < len(self.dims) - 2 else final_activation,
                  rng)
            for i, (a, b) in enumerate(zip(self.dims[:-1], self.dims[1:]))
        ]

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


class SpectralState:
    """Persistent power-iteration vectors and the target spectral norm."""

    def __init__(self, shape: tuple[int, int], coeff: float = 0.9,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng()
        self.coeff = float(coeff)
        self.u = rng.normal(size=shape[1])
        self.u /= np.linalg.norm(self.u)
        self.v = rng.normal(size=shape[0])
        self.v /= np.linalg.norm(self.v)

    def estimate(self, w: np.ndarray, iters: int) -> float:
        if iters < 1:
            raise ValueError("spectral_normalize: iters must be >= 1")
        u, v = self.u, self.v
        for _ in range(iters):
            v = w @ u
            n = np.linalg.norm(v)
            if n == 0.0:
                return 0.0
            v = v / n
            u = w.T @ v
            n = np.linalg.norm(u)
            if n == 0.0:
                return 0.0
            u = u / n
        self.u, self.v = u, v
        return float(v @ w @ u)


def spectral_normalize(weight: np.ndarray, state: SpectralState,
                       iters: int = 1) -> np.ndarray:
    """Scale weight so its largest singular value is at most state.coeff.

    Never up-scales: if the estimated norm is already below coeff the weight
    is returned unchanged.
    """
    sigma = state.estimate(weight, iters)
    scale = state.coeff / max(sigma, state.coeff)
    return weight * scale


class SpectralDense(Module):
    def __init__(self, in_dim: int, out_dim: int, activation: str = "none",
                 coeff: float = 0.9, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.activation = activation
        self.weight = Tensor(_glorot(rng, in_dim, out_dim), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)
        self.state = SpectralState((in_dim, out_dim), coeff, rng)
        self._scale = 1.0

    def renormalize(self, iters: int = 1) -> None:
        sigma = self.state.estimate(self.weight.data, iters)
        self._scale = self.state.coeff / max(sigma, self.state.coeff)

    def forward(self, x: Tensor) -> Tensor:
        w = T.mul(self.weight, Tensor(self._scale))
        y = T.add(T.matmul(x, w), self.bias)
        return T.ACTIVATIONS[self.activation](y)

    def effective_weight(self) -> np.ndarray:
        return self.weight.data * self._scale


class BatchNorm1d(Module):
    """Affine 1D batch norm with running statistics.

    Inside invertible stacks it is evaluated with frozen (running) statistics
    during inversion and verification; training-mode statistics would break
    bijectivity mid-epoch.
    """

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.dim = dim
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def forward(self, x: Tensor) -> Tensor:
        if self.training:
            mu = x.mean(axis=0, keepdims=True)
            var = T.tmean(T.mul(T.sub(x, mu), T.sub(x, mu)), axis=0,
                          keepdims=True)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu.data[0]
            self.running_var = (1 - m) * self.running_var + m * var.data[0]
        else:
            mu = Tensor(self.running_mean.reshape(1, -1))
            var = Tensor(self.running_var.reshape(1, -1))
        xhat = T.div(T.sub(x, mu), T.sqrt(T.add(var, Tensor(self.eps))))
        return T.add(T.mul(xhat, self.gamma), self.beta)

    def inverse(self, y: np.ndarray) -> np.ndarray:
        std = np.sqrt(self.running_var + self.eps)
        return (y - self.beta.data) / self.gamma.data * std + self.running_mean


# activations with Lipschitz constant <= 1, safe inside residual subnets
_ONE_LIPSCHITZ = {"swish", "leaky_relu", "elu", "none"}


class ResidualBlock(Module):
    """x -> x + g(x) with Lipschitz(g) < 1, hence invertible."""

    def __init__(self, dim: int, hidden: int = 32, activation: str = "swish",
                 coeff: float = 0.9, depth: int = 2,
                 rng: np.random.Generator | None = None,
                 use_norm: bool = False):
        if activation not in _ONE_LIPSCHITZ:
            raise ValueError(
                f"residual subnet activation {activation!r} is not "
                "1-Lipschitz; the spectral bound would not control the block")
        rng = rng or np.random.default_rng()
        self.dim = dim
        self.coeff = float(coeff)
        dims = [dim] + [hidden] * (depth - 1) + [dim]
        self.subnet = [
            SpectralDense(a, b,
                          activation if i < len(dims) - 2 else "none",
                          coeff, rng)
            for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))
        ]
        self.norm = BatchNorm1d(dim) if use_norm else None

    def renormalize(self, iters: int = 1) -> None:
        for layer in self.subnet:
            layer.renormalize(iters)

    def residual(self, x: Tensor) -> Tensor:
        for layer in self.subnet:
            x = layer(x)
        return x

    def forward(self, x: Tensor) -> Tensor:
        if self.norm is not None:
            x = self.norm(x)
        return T.add(x, self.residual(x))

    def inverse(self, y: np.ndarray, max_iter: int = 100,
                tol: float = 1e-8) -> np.ndarray:
        """Fixed-point iteration x <- y - g(x); converges since Lip(g) < 1."""
        x = y.copy()
        with T.no_grad():
            for _ in range(max_iter):
                gx = self.residual(Tensor(x)).data
                x_new = y - gx
                if np.max(np.abs(x_new - x)) < tol:
                    x = x_new
                    break
                x = x_new
            residual = np.max(np.abs(x + self.residual(Tensor(x)).data - y))
        if residual >= max(tol * 10, 1e-6):
            raise InversionError(residual, max_iter)
        if self.norm is not None:
            x = self.norm.inverse(x)
        return x


class InvertibleStack(Module):
    """Sequence of residual-invertible blocks (optionally batch-normed)."""

    def __init__(self, dim: int, n_blocks: int = 4, hidden: int = 32,
                 activation: str = "swish", coeff: float = 0.9,
                 use_norm: bool = False, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.dim = dim
        self.config = dict(dim=dim, n_blocks=n_blocks, hidden=hidden,
                           activation=activation, coeff=coeff,
                           use_norm=use_norm)
        self.blocks = [
            ResidualBlock(dim, hidden, activation, coeff, rng=rng,
                          use_norm=use_norm)
            for _ in range(n_blocks)
        ]

    def renormalize(self, iters: int = 1) -> None:
        for b in self.blocks:
            b.renormalize(iters)

    def forward(self, x: Tensor) -> Tensor:
        for b in self.blocks:
            x = b(x)
        return x

    def inverse(self, y: np.ndarray, max_iter: int = 100,
                tol: float = 1e-8) -> np.ndarray:
        for b in reversed(self.blocks):
            y = b.inverse(y, max_iter=max_iter, tol=tol)
        return y


class ConvexNet(Module):
    """Input-convex comparison network.

    Non-negative weights from the second layer on, convex non-decreasing
    activations, and passthrough connections from the input keep the output
    convex in the input. Call ``project`` after every optimizer step.
    """

    def __init__(self, dims, activation: str = "elu", seed: int = 0):
        rng = np.random.default_rng(seed)
        self.dims = tuple(int(d) for d in dims)
        self.activation = activation
        in_dim = self.dims[0]
        self.z_weights: list[Tensor] = []
        self.x_weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        prev = self.dims[1]
        self.first = Dense(in_dim, prev, activation, rng)
        for out_dim in self.dims[2:]:
            self.z_weights.append(
                Tensor(np.abs(_glorot(rng, prev, out_dim)),
                       requires_grad=True))
            self.x_weights.append(
                Tensor(_glorot(rng, in_dim, out_dim), requires_grad=True))
            self.biases.append(Tensor(np.zeros(out_dim), requires_grad=True))
            prev = out_dim

    def forward(self, x: Tensor) -> Tensor:
        z = self.first(x)
        act = T.ACTIVATIONS[self.activation]
        last = len(self.z_weights) - 1
        for i, (wz, wx, b) in enumerate(
                zip(self.z_weights, self.x_weights, self.biases)):
            z = T.add(T.add(T.matmul(z, wz), T.matmul(x, wx)), b)
            if i != last:
                z = act(z)
        return z

    def project(self) -> None:
        """Clamp the convexity-carrying weights at zero."""
        for w in self.z_weights:
            np.maximum(w.data, 0.0, out=w.data)
