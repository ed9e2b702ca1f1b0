"""Dense float64 reverse-mode differentiation and a small MLP.

A :class:`Tape` records every primitive applied to :class:`Var` nodes in
creation order, so the reverse sweep in :func:`grad` is a single pass over
the record list in reverse.  Tapes are cheap and are rebuilt for every loss
evaluation.

Values are plain ``numpy.ndarray`` objects of dtype float64 (row-major), so
the shape/data pair of a tensor is the array itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tape",
    "Var",
    "grad",
    "value_and_grad",
    "exp",
    "log",
    "sin",
    "cos",
    "tanh",
    "sigmoid",
    "relu",
    "softplus",
    "sqrt",
    "absolute",
    "norm",
    "where_const",
    "MlpParams",
    "init_mlp",
    "mlp_forward",
    "Adam",
    "DimensionError",
]


class DimensionError(ValueError):
    """Raised when an input does not chain with a network layer."""


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    # sum out axes that numpy broadcasting introduced or stretched
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tape:
    """Append-only record of primitive operations."""

    def __init__(self):
        self.nodes: list[Var] = []

    def var(self, value) -> "Var":
        return Var(self, np.asarray(value, dtype=np.float64), (), None)

    def __len__(self):
        return len(self.nodes)


class Var:
    """A node on a tape: a value plus the closure that maps its adjoint back."""

    __array_ufunc__ = None  # numpy defers to the reflected operators below
    __slots__ = ("tape", "value", "parents", "backward", "index")

    def __init__(self, tape: Tape, value: np.ndarray, parents: tuple, backward):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.backward = backward
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(shape={self.value.shape}, index={self.index})"

    # -- lifting ---------------------------------------------------------
    def _lift(self, other) -> "Var":
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise ValueError("operands live on different tapes")
            return other
        return Var(self.tape, np.asarray(other, dtype=np.float64), (), None)

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other):
        o = self._lift(other)
        a, b = self.value, o.value
        return Var(self.tape, a + b, (self, o),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))

    __radd__ = __add__

    def __sub__(self, other):
        o = self._lift(other)
        a, b = self.value, o.value
        return Var(self.tape, a - b, (self, o),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        o = self._lift(other)
        a, b = self.value, o.value
        return Var(self.tape, a * b, (self, o),
                   lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        a, b = self.value, o.value
        out = a / b
        return Var(self.tape, out, (self, o),
                   lambda g: (_unbroadcast(g / b, a.shape),
                              _unbroadcast(-g * out / b, b.shape)))

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __neg__(self):
        return Var(self.tape, -self.value, (self,), lambda g: (-g,))

    def __pow__(self, p):
        if isinstance(p, Var):
            raise TypeError("only constant exponents are supported")
        p = float(p)
        a = self.value
        return Var(self.tape, a ** p, (self,), lambda g: (g * p * a ** (p - 1.0),))

    def __matmul__(self, other):
        o = self._lift(other)
        a, b = self.value, o.value
        return Var(self.tape, a @ b, (self, o), lambda g: (g @ b.T, a.T @ g))

    def __rmatmul__(self, other):
        return self._lift(other) @ self

    # -- shape -----------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        a = self.value
        out = a.sum(axis=axis, keepdims=keepdims)

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return Var(self.tape, np.asarray(out), (self,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        a = self.value
        return Var(self.tape, a.reshape(*shape), (self,), lambda g: (g.reshape(a.shape),))

    @property
    def T(self):
        return Var(self.tape, self.value.T, (self,), lambda g: (g.T,))

    def __getitem__(self, idx):
        a = self.value

        def back(g):
            out = np.zeros_like(a)
            np.add.at(out, idx, g)
            return (out,)

        return Var(self.tape, np.asarray(a[idx]), (self,), back)


def _unary(x, f, df) -> Var:
    """Apply ``f`` elementwise; ``df(a, out)`` returns the local derivative."""
    if not isinstance(x, Var):
        return f(np.asarray(x, dtype=np.float64))
    a = x.value
    out = f(a)
    return Var(x.tape, out, (x,), lambda g: (g * df(a, out),))


def exp(x):
    return _unary(x, np.exp, lambda a, o: o)


def log(x):
    return _unary(x, np.log, lambda a, o: 1.0 / a)


def sin(x):
    return _unary(x, np.sin, lambda a, o: np.cos(a))


def cos(x):
    return _unary(x, np.cos, lambda a, o: -np.sin(a))


def tanh(x):
    return _unary(x, np.tanh, lambda a, o: 1.0 - o * o)


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def sigmoid(x):
    return _unary(x, _sigmoid, lambda a, o: o * (1.0 - o))


def relu(x):
    return _unary(x, lambda a: np.maximum(a, 0.0), lambda a, o: (a > 0).astype(np.float64))


def softplus(x):
    return _unary(x, lambda a: np.logaddexp(0.0, a), lambda a, o: _sigmoid(a))


def sqrt(x):
    return _unary(x, np.sqrt, lambda a, o: 0.5 / o)


def absolute(x):
    # subgradient 0 at the kink, so coincident points contribute nothing
    return _unary(x, np.abs, lambda a, o: np.sign(a))


def norm(x, axis=-1):
    """Euclidean norm along ``axis`` with zero gradient where the norm vanishes."""
    if not isinstance(x, Var):
        return np.linalg.norm(np.asarray(x, dtype=np.float64), axis=axis)
    a = x.value
    out = np.sqrt((a * a).sum(axis=axis))

    def back(g):
        safe = np.where(out > 0, out, 1.0)
        scale = np.where(out > 0, g / safe, 0.0)
        return (np.expand_dims(scale, axis) * a,)

    return Var(x.tape, out, (x,), back)


def where_const(mask, x, y):
    """Select from ``x`` where ``mask`` else ``y``; the mask is not differentiated."""
    tape = x.tape if isinstance(x, Var) else y.tape
    xv = x if isinstance(x, Var) else tape.var(x)
    yv = y if isinstance(y, Var) else tape.var(y)
    a, b = xv.value, yv.value
    m = np.asarray(mask, dtype=bool)
    out = np.where(m, a, b)
    return Var(tape, out, (xv, yv),
               lambda g: (_unbroadcast(np.where(m, g, 0.0), a.shape),
                          _unbroadcast(np.where(m, 0.0, g), b.shape)))


def grad(loss: Var, wrt: Sequence[Var]) -> list[np.ndarray]:
    """Adjoints of a scalar ``loss`` with respect to each node in ``wrt``."""
    if not isinstance(loss, Var):
        raise TypeError("loss must be a Var recorded on a tape")
    if loss.value.size != 1:
        raise ValueError(f"grad needs a scalar loss, got shape {loss.value.shape}")
    for v in wrt:
        if not isinstance(v, Var) or v.tape is not loss.tape:
            raise TypeError("every entry of wrt must be a Var on the loss's tape")
    tape = loss.tape
    adj: list = [None] * len(tape.nodes)
    adj[loss.index] = np.ones_like(loss.value)
    for node in reversed(tape.nodes[: loss.index + 1]):
        g = adj[node.index]
        if g is None or node.backward is None:
            continue
        for parent, pg in zip(node.parents, node.backward(g)):
            if adj[parent.index] is None:
                adj[parent.index] = pg
            else:
                adj[parent.index] = adj[parent.index] + pg
    return [adj[v.index] if adj[v.index] is not None else np.zeros_like(v.value)
            for v in wrt]


def value_and_grad(fn: Callable, params: Sequence[np.ndarray]):
    """Evaluate ``fn(tape, *param_vars)`` on a fresh tape and differentiate it."""
    tape = Tape()
    leaves = [tape.var(p) for p in params]
    loss = fn(tape, *leaves)
    return float(loss.value), grad(loss, leaves)


# --------------------------------------------------------------------------
# multi-layer perceptron
# --------------------------------------------------------------------------

_ACTIVATIONS = {
    "tanh": tanh,
    "relu": relu,
    "sigmoid": sigmoid,
    "identity": lambda v: v,
}


@dataclass
class MlpParams:
    """Weights ``W_k`` of shape (in, out) and biases ``b_k`` of shape (out,).

    ``hidden`` is applied between layers; ``output`` after the last one.
    With ``skip`` the input is added to the output (needs in == out), which
    makes a zero last layer the identity map.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden: str = "tanh"
    output: str = "identity"
    skip: bool = False

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise DimensionError("need one bias per weight matrix and at least one layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DimensionError(f"layer {k}: weight {w.shape} and bias {b.shape} disagree")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise DimensionError(
                    f"layer {k}: in-dim {w.shape[0]} != previous out-dim "
                    f"{self.weights[k - 1].shape[1]}")
        if self.hidden not in _ACTIVATIONS or self.output not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.hidden!r}/{self.output!r}")
        if self.skip and self.d_in != self.d_out:
            raise DimensionError("skip connection needs d_in == d_out")

    @property
    def d_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def d_out(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def sizes(self) -> list[int]:
        return [self.d_in] + [w.shape[1] for w in self.weights]

    def flat(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_flat(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        return MlpParams(list(arrays[0::2]), list(arrays[1::2]),
                         self.hidden, self.output, self.skip)

    def copy(self) -> "MlpParams":
        return self.with_flat([a.copy() for a in self.flat()])

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.flat())


def init_mlp(sizes: Sequence[int], rng: np.random.Generator, hidden="tanh",
             output="identity", skip=False, zero_last=False) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    ws, bs = [], []
    for k, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
        lim = np.sqrt(6.0 / (fi + fo))
        w = rng.uniform(-lim, lim, size=(fi, fo))
        if zero_last and k == len(sizes) - 2:
            w = np.zeros((fi, fo))
        ws.append(w)
        bs.append(np.zeros(fo))
    return MlpParams(ws, bs, hidden, output, skip)


def mlp_forward(params: MlpParams, x, leaves: Sequence[Var] | None = None):
    """Evaluate the network on a (batch, d_in) input.

    With ``leaves`` (the tape variables standing for ``params.flat()``) the
    evaluation is recorded for differentiation; otherwise plain numpy is used.
    """
    xv = x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)
    if xv.ndim != 2 or xv.shape[1] != params.d_in:
        raise DimensionError(
            f"layer 0: expected input of shape (batch, {params.d_in}), got {xv.shape}")
    ps = leaves if leaves is not None else params.flat()
    h = x
    act = _ACTIVATIONS[params.hidden]
    n = len(params.weights)
    for k in range(n):
        w, b = ps[2 * k], ps[2 * k + 1]
        h = h @ w + b
        if k < n - 1:
            h = act(h)
    if params.skip:
        h = h + x
    return _ACTIVATIONS[params.output](h)


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------

@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> list[np.ndarray]:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            out.append(p - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps))
        return out
