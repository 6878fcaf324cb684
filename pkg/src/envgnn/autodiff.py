"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps a float64 ndarray plus the recorded operation that produced
it. Calling :func:`backward` on a scalar tensor walks the recorded graph in
reverse topological order and accumulates vector-Jacobian products into
``.grad`` of every tensor with ``requires_grad``. Calling backward twice on
the same scalar without rebuilding the graph raises ``StateError``; grads on
leaves persist until ``ParameterStore.zero_grad``.

Everything is double precision. Sampling ops (``gaussian_sample``,
``binary_concrete_sample``) accept pre-drawn noise so finite-difference
checks can hold the noise fixed.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from .errors import ArgumentError, NumericError, ShapeError, StateError
from .kernels import scatter_add_rows as _scatter_kernel

_ids = itertools.count()


class Tensor:
    """A node in the recorded computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "tid", "_backward_done")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _vjp: Callable[[np.ndarray], tuple] | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._vjp = _vjp
        self.tid = next(_ids)
        self._backward_done = False

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
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(id={self.tid}, shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; scalars are folded into the op, tensors dispatch to
    # the module-level functions so everything shares one vjp catalogue.
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else shift(self, -float(other))

    def __rsub__(self, other):
        return shift(neg(self), float(other))

    def __mul__(self, other):
        return elementwise_mul(self, other) if isinstance(other, Tensor) else scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data, parents: tuple[Tensor, ...], vjp) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if needs:
        return Tensor(data, requires_grad=True, _parents=parents, _vjp=vjp)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data
    return _record(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data
    return _record(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data
    return _record(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(x: Tensor, s: float) -> Tensor:
    return _record(x.data * s, (x,), lambda g: (g * s,))


def shift(x: Tensor, s: float) -> Tensor:
    return _record(x.data + s, (x,), lambda g: (g,))


def neg(x: Tensor) -> Tensor:
    return _record(-x.data, (x,), lambda g: (-g,))


def grad_reverse(x: Tensor) -> Tensor:
    """Identity forward, negated gradient backward.

    Deliberately not the derivative of the identity: it routes opposing
    objectives through one loss, so a head below the reversal minimizes a
    term that the parameters above it maximize.  For that reason it is
    excluded from finite-difference gradient checks.
    """
    return _record(x.data, (x,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data
    return _record(data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul over stacks of matrices: [B, m, k] @ [B, k, n]."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm shape mismatch: {a.shape} @ {b.shape}")
    data = a.data @ b.data
    return _record(
        data,
        (a, b),
        lambda g: (g @ b.data.transpose(0, 2, 1), a.data.transpose(0, 2, 1) @ g),
    )


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes (plain transpose for 2-d)."""
    if x.ndim < 2:
        raise ShapeError("transpose needs at least 2 dims")
    data = np.swapaxes(x.data, -1, -2)
    return _record(data, (x,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ArgumentError("concat of zero tensors")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(data, tuple(tensors), vjp)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Select rows of a 2-d tensor; backward scatter-adds into the source."""
    if x.ndim != 2:
        raise ShapeError(f"gather_rows expects 2-d input, got {x.shape}")
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ArgumentError("gather index out of range")
    n = x.shape[0]
    data = x.data[index]
    return _record(data, (x,), lambda g: (_scatter_kernel(g, index, n),))


def scatter_add(x: Tensor, index: np.ndarray, size: int) -> Tensor:
    """Accumulate rows of x into ``size`` output slots; backward gathers."""
    if x.ndim != 2:
        raise ShapeError(f"scatter_add expects 2-d input, got {x.shape}")
    index = np.asarray(index, dtype=np.int64)
    if index.shape[0] != x.shape[0]:
        raise ShapeError("scatter index length must match row count")
    data = _scatter_kernel(x.data, index, size)
    return _record(data, (x,), lambda g: (g[index],))


def sum_all(x: Tensor) -> Tensor:
    return _record(x.data.sum(), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    return _record(x.data.mean(), (x,), lambda g: (np.broadcast_to(g / n, x.shape).copy(),))


def mean_rows(x: Tensor) -> Tensor:
    """Column means of a 2-d tensor: [m, n] -> [n]."""
    if x.ndim != 2:
        raise ShapeError(f"mean_rows expects 2-d input, got {x.shape}")
    if x.shape[0] == 0:
        raise ArgumentError("mean_rows over zero rows")
    m = x.shape[0]
    return _record(x.data.mean(axis=0), (x,), lambda g: (np.broadcast_to(g / m, x.shape).copy(),))


# ------------------------------------------------------------- nonlinearity


def sigmoid(x: Tensor) -> Tensor:
    # Split by sign to avoid overflow in exp.
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _record(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _record(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    return _record(out, (x,), lambda g: (g * (x.data > 0.0),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _record(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0.0):
        raise NumericError("log of non-positive value")
    return _record(np.log(x.data), (x,), lambda g: (g / x.data,))


def power(x: Tensor, exponent: float) -> Tensor:
    if np.any(x.data <= 0.0):
        raise NumericError("power() restricted to positive bases")
    out = np.power(x.data, exponent)
    return _record(out, (x,), lambda g: (g * exponent * out / x.data,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Hard clamp; gradient is zero outside [lo, hi]."""
    if lo >= hi:
        raise ArgumentError(f"clamp bounds out of order: [{lo}, {hi}]")
    inside = (x.data >= lo) & (x.data <= hi)
    out = np.clip(x.data, lo, hi)
    return _record(out, (x,), lambda g: (g * inside,))


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last axis, stabilized by the row max."""
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax input must be finite")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _record(out, (x,), vjp)


# -------------------------------------------------------------------- losses


def cross_entropy(logits: Tensor, labels: np.ndarray, prob_floor: float = 0.0) -> Tensor:
    """Mean negative log-likelihood under row-wise softmax.

    ``labels`` are int class indices, one per row; not differentiated.
    A positive ``prob_floor`` caps each row's loss at -log(prob_floor), as
    if the label probability never dropped below the floor; capped rows
    contribute zero gradient. Objectives that push probability AWAY from
    the label need this to stay bounded.
    """
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [m, c] logits, got {logits.shape}")
    if not 0.0 <= prob_floor < 1.0:
        raise ArgumentError(f"prob_floor must lie in [0, 1), got {prob_floor}")
    labels = np.asarray(labels, dtype=np.int64)
    m, c = logits.shape
    if labels.shape != (m,):
        raise ShapeError(f"labels shape {labels.shape} does not match {m} rows")
    if m == 0:
        raise ArgumentError("cross_entropy over zero rows")
    if labels.min() < 0 or labels.max() >= c:
        raise ArgumentError(f"label out of range for {c} classes")
    if not np.all(np.isfinite(logits.data)):
        raise NumericError("cross_entropy input must be finite")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + logits.data.max(axis=1)
    nll = lse - logits.data[np.arange(m), labels]
    if prob_floor > 0.0:
        capped = nll > -np.log(prob_floor)
        nll = np.minimum(nll, -np.log(prob_floor))
    else:
        capped = np.zeros(m, dtype=bool)
    out = nll.mean()

    def vjp(g):
        soft = np.exp(shifted)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[np.arange(m), labels] -= 1.0
        soft[capped] = 0.0
        return (g * soft / m,)

    return _record(out, (logits,), vjp)


def kl_bernoulli(p: Tensor, r: Tensor | float) -> Tensor:
    """Mean KL(Bern(p) || Bern(r)) over entries of p; r is a scalar prior."""
    r = _as_tensor(r)
    if r.size != 1:
        raise ShapeError("prior r must be a scalar")
    if np.any(p.data <= 0.0) or np.any(p.data >= 1.0):
        raise NumericError("kl_bernoulli requires p strictly inside (0, 1)")
    rv = float(r.data.reshape(()))
    if not 0.0 < rv < 1.0:
        raise NumericError("kl_bernoulli requires r strictly inside (0, 1)")
    pd = p.data
    terms = pd * (np.log(pd) - np.log(rv)) + (1.0 - pd) * (np.log1p(-pd) - np.log1p(-rv))
    out = terms.mean()
    n = pd.size

    def vjp(g):
        gp = g * (np.log(pd) - np.log(rv) - np.log1p(-pd) + np.log1p(-rv)) / n
        gr = g * np.sum(-pd / rv + (1.0 - pd) / (1.0 - rv)) / n
        return (gp, np.full(r.shape, gr) if r.shape else np.asarray(gr))

    return _record(out, (p, r), vjp)


# ------------------------------------------------------------------ sampling


def gaussian_sample(
    shape: Sequence[int], std: float, rng: np.random.Generator | None = None, *, noise: np.ndarray | None = None
) -> Tensor:
    """A constant N(0, std^2) draw; pass ``noise`` (standard normal) to fix it."""
    if std < 0:
        raise ArgumentError("std must be nonnegative")
    if noise is None:
        if rng is None:
            raise ArgumentError("gaussian_sample needs an rng or explicit noise")
        noise = rng.standard_normal(tuple(shape))
    return Tensor(noise * std)


def binary_concrete_sample(
    p: Tensor, tau: float, rng: np.random.Generator | None = None, *, uniforms: np.ndarray | None = None
) -> Tensor:
    """Relaxed Bernoulli draw: sigmoid((logit(p) + logit(u)) / tau).

    Gradient flows through p only. With fixed uniforms the draw is a
    deterministic differentiable function of p, which the gradient tests
    rely on.
    """
    if tau <= 0:
        raise ArgumentError("temperature must be positive")
    if np.any(p.data <= 0.0) or np.any(p.data >= 1.0):
        raise NumericError("binary_concrete_sample requires p strictly inside (0, 1)")
    if uniforms is None:
        if rng is None:
            raise ArgumentError("binary_concrete_sample needs an rng or explicit uniforms")
        uniforms = rng.random(p.shape)
    u = np.clip(np.asarray(uniforms, dtype=np.float64), 1e-12, 1.0 - 1e-12)
    if u.shape != p.shape:
        raise ShapeError("uniform draw shape must match p")
    z = (np.log(p.data) - np.log1p(-p.data) + np.log(u) - np.log1p(-u)) / tau
    alpha = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))

    def vjp(g):
        return (g * alpha * (1.0 - alpha) / (tau * p.data * (1.0 - p.data)),)

    return _record(alpha, (p,), vjp)


# ------------------------------------------------------------------ backward


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every reachable tensor."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar, got shape {loss.shape}")
    if loss._backward_done:
        raise StateError("backward already ran for this tensor; rebuild the graph first")
    loss._backward_done = True

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if node.tid in seen:
            continue
        seen.add(node.tid)
        stack.append((node, True))
        for parent in node._parents:
            if parent.tid not in seen and parent.requires_grad:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        for parent, piece in zip(node._parents, node._vjp(node.grad)):
            if piece is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += np.asarray(piece, dtype=np.float64).reshape(parent.shape)


# ---------------------------------------------------------------- parameters


class ParameterStore:
    """Named trainable tensors with seeded initialization.

    Insertion order is the canonical parameter order used by the optimizer
    and the checkpoint format.
    """

    def __init__(self, seed: int | np.random.Generator = 0):
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self._params: dict[str, Tensor] = {}

    def _register(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ArgumentError(f"parameter {name!r} already registered")
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def glorot(self, name: str, fan_in: int, fan_out: int) -> Tensor:
        """Glorot-uniform matrix [fan_in, fan_out]."""
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return self._register(name, self.rng.uniform(-bound, bound, size=(fan_in, fan_out)))

    def zeros(self, name: str, shape: Sequence[int]) -> Tensor:
        return self._register(name, np.zeros(tuple(shape)))

    def scalar(self, name: str, value: float) -> Tensor:
        return self._register(name, np.asarray(float(value)))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def snapshot(self, precision: str = "float64") -> dict[str, np.ndarray]:
        """Copy of all parameter arrays; ``precision='float32'`` rounds
        through single precision (the checkpoint storage precision)."""
        if precision == "float32":
            return {k: v.data.astype(np.float32).astype(np.float64) for k, v in self.items()}
        return {k: v.data.copy() for k, v in self.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.items():
            if name not in state:
                raise ArgumentError(f"state is missing parameter {name!r}")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ShapeError(f"parameter {name!r} shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()
