"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine records a tape of primitive ops during the forward pass. Backward
propagation supports two features that ordinary loss-based training does not
need:

* adjoint hooks: a transform applied to the accumulated adjoint of a chosen
  node, exactly once per backward pass, before it propagates upstream;
* backward-through-backward: ``grad(..., create_graph=True)`` builds the
  gradient computation out of recorded ops, so a penalty on input gradients
  can itself be differentiated with respect to parameters.

All vector-Jacobian products are expressed with tensor ops, which is what
makes the second-order pattern work for the dense/activation primitive set.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent for a primitive op."""


class UnreachableError(ValueError):
    """Raised when ``wrt`` is not reachable from the backward root."""


_grad_enabled: bool = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Tensor | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[Tensor], tuple[Tensor | None, ...]] | None = None
        self._op = ""

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.ndim else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self._op!r})"

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)

    @property
    def T(self):
        return transpose(self)

    def backward(self, grad=None, hooks: "dict[int, HookFn] | None" = None):
        """Accumulate adjoints into ``.grad`` of every reachable leaf."""
        _run_backward(self, seed=grad, hooks=hooks, accumulate=True,
                      targets=None, create_graph=False)


HookFn = Callable[[Array], Array]


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t._vjp is not None


def _node(data: Array, parents: tuple[Tensor, ...], vjp, op: str) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(_tracked(p) for p in parents):
        out._parents = parents
        out._vjp = vjp
        out._op = op
    return out


def _sum_to(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reduce a broadcast adjoint back to the operand shape (graph-safe)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (have, want) in enumerate(zip(g.shape, shape)):
        if want == 1 and have != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- primitives --------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    def vjp(g):
        return _sum_to(g, a.shape), _sum_to(g, b.shape)
    return _node(a.data + b.data, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    def vjp(g):
        return _sum_to(g, a.shape), _sum_to(neg(g), b.shape)
    return _node(a.data - b.data, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    def vjp(g):
        return _sum_to(mul(g, b), a.shape), _sum_to(mul(g, a), b.shape)
    return _node(a.data * b.data, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    def vjp(g):
        ga = _sum_to(div(g, b), a.shape)
        gb = _sum_to(neg(div(mul(g, a), mul(b, b))), b.shape)
        return ga, gb
    return _node(a.data / b.data, (a, b), vjp, "div")


def neg(a) -> Tensor:
    a = _lift(a)
    def vjp(g):
        return (neg(g),)
    return _node(-a.data, (a,), vjp, "neg")


def power(a, p: float) -> Tensor:
    a = _lift(a)
    p = float(p)
    def vjp(g):
        return (mul(g, mul(Tensor(p), power(a, p - 1.0))),)
    return _node(a.data ** p, (a,), vjp, "pow")


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    def vjp(g):
        return matmul(g, transpose(b)), matmul(transpose(a), g)
    return _node(a.data @ b.data, (a, b), vjp, "matmul")


def transpose(a) -> Tensor:
    a = _lift(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected 2D, got {a.shape}")
    def vjp(g):
        return (transpose(g),)
    return _node(a.data.T.copy(), (a,), vjp, "transpose")


def reshape(a, *shape) -> Tensor:
    a = _lift(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = a.shape
    def vjp(g):
        return (reshape(g, old),)
    return _node(a.data.reshape(shape), (a,), vjp, "reshape")


def broadcast_to(a, shape) -> Tensor:
    a = _lift(a)
    old = a.shape
    def vjp(g):
        return (_sum_to(g, old),)
    return _node(np.broadcast_to(a.data, shape).copy(), (a,), vjp, "broadcast")


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    if axis is not None:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        for ax in axes:
            if not -a.ndim <= ax < a.ndim:
                raise ShapeError(f"sum: axis {ax} out of range for {a.shape}")
    out = a.data.sum(axis=axis, keepdims=keepdims)
    kept_shape = a.data.sum(axis=axis, keepdims=True).shape
    def vjp(g):
        gk = reshape(g, kept_shape) if g.shape != kept_shape else g
        return (broadcast_to(gk, a.shape),)
    return _node(out, (a,), vjp, "sum")


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    n = a.size if axis is None else (
        np.prod([a.shape[ax] for ax in
                 ((axis,) if isinstance(axis, int) else axis)]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), Tensor(1.0 / float(n)))


def exp(a) -> Tensor:
    a = _lift(a)
    out = Tensor(np.exp(a.data))
    def vjp(g):
        return (mul(g, out_ref),)
    node = _node(out.data, (a,), vjp, "exp")
    out_ref = node
    return node


def log(a) -> Tensor:
    a = _lift(a)
    def vjp(g):
        return (div(g, a),)
    return _node(np.log(a.data), (a,), vjp, "log")


def sqrt(a) -> Tensor:
    a = _lift(a)
    node_holder: list[Tensor] = []
    def vjp(g):
        return (div(mul(g, Tensor(0.5)), node_holder[0]),)
    node = _node(np.sqrt(a.data), (a,), vjp, "sqrt")
    node_holder.append(node)
    return node


def tabs(a) -> Tensor:
    a = _lift(a)
    sign = Tensor(np.sign(a.data))
    def vjp(g):
        return (mul(g, sign),)
    return _node(np.abs(a.data), (a,), vjp, "abs")


def sigmoid(a) -> Tensor:
    a = _lift(a)
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    node_holder: list[Tensor] = []
    def vjp(g):
        out = node_holder[0]
        return (mul(g, mul(out, sub(Tensor(1.0), out))),)
    node = _node(s, (a,), vjp, "sigmoid")
    node_holder.append(node)
    return node


def softplus(a) -> Tensor:
    a = _lift(a)
    def vjp(g):
        return (mul(g, sigmoid(a)),)
    return _node(np.logaddexp(0.0, a.data), (a,), vjp, "softplus")


def relu(a) -> Tensor:
    a = _lift(a)
    mask = Tensor((a.data > 0).astype(np.float64))
    def vjp(g):
        return (mul(g, mask),)
    return _node(np.maximum(a.data, 0.0), (a,), vjp, "relu")


def leaky_relu(a, alpha: float = 0.01) -> Tensor:
    a = _lift(a)
    scale = Tensor(np.where(a.data > 0, 1.0, alpha))
    def vjp(g):
        return (mul(g, scale),)
    return _node(np.where(a.data > 0, a.data, alpha * a.data),
                 (a,), vjp, "leaky_relu")


def minimum_const(a, c: float) -> Tensor:
    a = _lift(a)
    mask = Tensor((a.data < c).astype(np.float64))
    def vjp(g):
        return (mul(g, mask),)
    return _node(np.minimum(a.data, c), (a,), vjp, "minimum_const")


def maximum_const(a, c: float) -> Tensor:
    a = _lift(a)
    mask = Tensor((a.data > c).astype(np.float64))
    def vjp(g):
        return (mul(g, mask),)
    return _node(np.maximum(a.data, c), (a,), vjp, "maximum_const")


# -- composites --------------------------------------------------------------


def elu(a, alpha: float = 1.0) -> Tensor:
    a = _lift(a)
    mask = Tensor((a.data > 0).astype(np.float64))
    # exp only sees the clamped branch, so it cannot overflow
    negative = mul(Tensor(alpha), sub(exp(minimum_const(a, 0.0)), Tensor(1.0)))
    return add(mul(mask, a), mul(sub(Tensor(1.0), mask), negative))


def swish(a) -> Tensor:
    a = _lift(a)
    return mul(a, sigmoid(a))


def sigmoid4(a) -> Tensor:
    """Sigmoid scaled by 4; its Lipschitz constant is exactly 1."""
    return mul(Tensor(4.0), sigmoid(a))


def smooth_l1(x, beta: float = 1.0) -> Tensor:
    """0.5 x^2 / beta for |x| < beta, |x| - 0.5 beta otherwise."""
    x = _lift(x)
    near = Tensor((np.abs(x.data) < beta).astype(np.float64))
    far = sub(Tensor(1.0), near)
    quad = mul(Tensor(0.5 / beta), mul(x, x))
    lin = sub(tabs(x), Tensor(0.5 * beta))
    return add(mul(near, quad), mul(far, lin))


def softmax(a, axis: int = -1) -> Tensor:
    a = _lift(a)
    shift = Tensor(a.data.max(axis=axis, keepdims=True))
    e = exp(sub(a, shift))
    return div(e, tsum(e, axis=axis, keepdims=True))


def l2norm(a, axis: int = -1, keepdims: bool = False,
           eps: float = 0.0) -> Tensor:
    a = _lift(a)
    sq = tsum(mul(a, a), axis=axis, keepdims=keepdims)
    return sqrt(add(sq, Tensor(eps))) if eps else sqrt(sq)


def batch_dot(a, b) -> Tensor:
    """Per-row dot product along the last axis."""
    return tsum(mul(a, b), axis=-1)


def cdist(x, centers) -> Tensor:
    """Pairwise euclidean distances: x [B, D] vs centers [R, D] -> [B, R]."""
    x, centers = _lift(x), _lift(centers)
    if x.ndim != 2 or centers.ndim != 2 or x.shape[1] != centers.shape[1]:
        raise ShapeError(
            f"cdist: incompatible shapes {x.shape} vs {centers.shape}")
    diff = sub(reshape(x, x.shape[0], 1, x.shape[1]),
               reshape(centers, 1, centers.shape[0], centers.shape[1]))
    return sqrt(add(tsum(mul(diff, diff), axis=2), Tensor(1e-24)))


def bce_with_logits(logits, targets) -> Tensor:
    """Mean binary cross entropy on raw scores: softplus(y) - y*t."""
    logits, targets = _lift(logits), _lift(targets)
    return tmean(sub(softplus(logits), mul(logits, targets)))


def mse(pred, targets) -> Tensor:
    d = sub(_lift(pred), _lift(targets))
    return tmean(mul(d, d))


def cross_entropy(probs, onehot) -> Tensor:
    """Mean negative log likelihood given class probabilities."""
    probs, onehot = _lift(probs), _lift(onehot)
    picked = tsum(mul(log(add(probs, Tensor(1e-12))), onehot), axis=1)
    return neg(tmean(picked))


# -- backward ----------------------------------------------------------------


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and _tracked(p):
                stack.append((p, False))
    return order


def _run_backward(root: Tensor, seed, hooks, accumulate: bool,
                  targets: dict[int, Tensor] | None,
                  create_graph: bool) -> dict[int, Tensor]:
    if seed is None:
        if root.size != 1:
            raise ShapeError(
                "backward: implicit seed requires a scalar output, "
                f"got shape {root.shape}")
        seed = Tensor(np.ones_like(root.data))
    seed = _lift(seed)
    order = _toposort(root)
    adjoints: dict[int, Tensor] = {id(root): seed}
    results: dict[int, Tensor] = {}
    ctx = contextlib.nullcontext() if create_graph else no_grad()
    with ctx:
        for node in reversed(order):
            a = adjoints.pop(id(node), None)
            if a is None:
                continue
            if hooks and id(node) in hooks:
                a = Tensor(hooks[id(node)](a.data))
            if targets is not None and id(node) in targets:
                results[id(node)] = a
            if accumulate and node.requires_grad and node._vjp is None:
                node.grad = a.detach() if node.grad is None else Tensor(
                    node.grad.data + a.data)
            if node._vjp is None:
                continue
            grads = node._vjp(a)
            for p, g in zip(node._parents, grads):
                if g is None or not _tracked(p):
                    continue
                prev = adjoints.get(id(p))
                adjoints[id(p)] = g if prev is None else add(prev, g)
    return results


def grad(output: Tensor, wrt, grad_output=None, create_graph: bool = False,
         hooks: dict[int, HookFn] | None = None,
         allow_unused: bool = False):
    """Adjoints of ``output`` with respect to ``wrt`` (tensor or sequence).

    Does not touch ``.grad`` fields. With ``create_graph=True`` the returned
    tensors are connected to the tape and can be differentiated again.
    """
    single = isinstance(wrt, Tensor)
    wrt_list: Sequence[Tensor] = [wrt] if single else list(wrt)
    targets = {id(t): t for t in wrt_list}
    results = _run_backward(output, grad_output, hooks, accumulate=False,
                            targets=targets, create_graph=create_graph)
    out = []
    for t in wrt_list:
        g = results.get(id(t))
        if g is None:
            if not allow_unused:
                raise UnreachableError(
                    "grad: target tensor is not reachable from output")
            g = Tensor(np.zeros_like(t.data))
        out.append(g)
    return out[0] if single else out


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "none": lambda x: x,
    "relu": relu,
    "leaky_relu": lambda x: leaky_relu(x, 0.01),
    "elu": elu,
    "swish": swish,
    "sigmoid": sigmoid,
    "sigmoid4": sigmoid4,
    "softplus": softplus,
}
