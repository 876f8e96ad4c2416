"""Minimal reverse-mode tape on numpy arrays.

A :class:`Tensor` wraps a float64 ndarray, records its parents and a
vector-Jacobian closure per parent, and ``backward`` replays the tape in
reverse topological order. Only the operations the model needs exist; each
one computes its forward value eagerly with numpy.

The scan recurrence is a single taped primitive with a hand-derived adjoint
pass (see :func:`scan`), so the tape stays small no matter how long the
sequence is.
"""

from __future__ import annotations

import numpy as np

from . import core


class Tensor:
    """An ndarray plus the bookkeeping needed for reverse-mode differentiation."""

    __slots__ = ("value", "grad", "_parents", "_vjps")

    def __init__(self, value, parents=(), vjps=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._vjps = vjps

    @property
    def shape(self):
        return self.value.shape

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable Tensor's ``grad``."""
        order = _topo_order(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node.grad is None:
                continue
            for parent, vjp in zip(node._parents, node._vjps):
                contribution = vjp(node.grad)
                parent.grad = (
                    contribution if parent.grad is None else parent.grad + contribution
                )

    # Operator sugar for the handful of spots where it reads better.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)


def _topo_order(root: Tensor) -> list[Tensor]:
    # Iterative DFS; the tape can outgrow Python's recursion limit.
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(x, y) -> Tensor:
    x, y = _as_tensor(x), _as_tensor(y)
    return Tensor(
        x.value + y.value,
        (x, y),
        (lambda g: _unbroadcast(g, x.value.shape), lambda g: _unbroadcast(g, y.value.shape)),
    )


def sub(x, y) -> Tensor:
    x, y = _as_tensor(x), _as_tensor(y)
    return Tensor(
        x.value - y.value,
        (x, y),
        (lambda g: _unbroadcast(g, x.value.shape), lambda g: _unbroadcast(-g, y.value.shape)),
    )


def neg(x) -> Tensor:
    x = _as_tensor(x)
    return Tensor(-x.value, (x,), (lambda g: -g,))


def mul(x, y) -> Tensor:
    x, y = _as_tensor(x), _as_tensor(y)
    return Tensor(
        x.value * y.value,
        (x, y),
        (
            lambda g: _unbroadcast(g * y.value, x.value.shape),
            lambda g: _unbroadcast(g * x.value, y.value.shape),
        ),
    )


def matmul(x: Tensor, y: Tensor) -> Tensor:
    x, y = _as_tensor(x), _as_tensor(y)
    return Tensor(
        x.value @ y.value,
        (x, y),
        (lambda g: g @ y.value.T, lambda g: x.value.T @ g),
    )


def exp(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.exp(x.value)
    return Tensor(out, (x,), (lambda g: g * out,))


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    return Tensor(np.log(x.value), (x,), (lambda g: g / x.value,))


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.value)
    return Tensor(out, (x,), (lambda g: g * (1.0 - out * out),))


def softplus(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    sig = _stable_sigmoid(x.value)
    return Tensor(core.softplus(x.value), (x,), (lambda g: g * sig,))


def _stable_sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = _stable_sigmoid(x.value)
    return Tensor(out, (x,), (lambda g: g * out * (1.0 - out),))


def logistic_open(x: Tensor) -> Tensor:
    """Sigmoid clamped to the open interval (0, 1) in float64."""
    x = _as_tensor(x)
    raw = _stable_sigmoid(x.value)
    out = np.clip(raw, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    return Tensor(out, (x,), (lambda g: g * out * (1.0 - out),))


def power(x: Tensor, p: float) -> Tensor:
    """x ** p for a constant exponent; x must stay in the domain of the power."""
    x = _as_tensor(x)
    out = x.value**p
    return Tensor(out, (x,), (lambda g: g * p * x.value ** (p - 1.0),))


def zoh_phi(x: Tensor) -> Tensor:
    """(exp(z) - 1) / z through its removable singularity, with exact adjoint."""
    x = _as_tensor(x)
    deriv = core.zoh_phi_deriv(x.value)
    return Tensor(core.zoh_phi(x.value), (x,), (lambda g: g * deriv,))


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = x.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, x.value.shape).copy()
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(g_exp, x.value.shape).copy()

    return Tensor(out, (x,), (vjp,))


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    count = x.value.size if axis is None else x.value.shape[axis]
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    old = x.value.shape
    return Tensor(x.value.reshape(shape), (x,), (lambda g: g.reshape(old),))


def flip0(x: Tensor) -> Tensor:
    """Reverse along the leading (time) axis."""
    x = _as_tensor(x)
    return Tensor(x.value[::-1].copy(), (x,), (lambda g: g[::-1].copy(),))


def slice0(x: Tensor, start: int, end: int) -> Tensor:
    """Contiguous slice along the leading axis."""
    x = _as_tensor(x)

    def vjp(g):
        full = np.zeros_like(x.value)
        full[start:end] = g
        return full

    return Tensor(x.value[start:end].copy(), (x,), (vjp,))


def concat0(parts: list[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    sizes = [p.value.shape[0] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def make_vjp(i):
        return lambda g: g[offsets[i] : offsets[i + 1]].copy()

    return Tensor(
        np.concatenate([p.value for p in parts], axis=0),
        tuple(parts),
        tuple(make_vjp(i) for i in range(len(parts))),
    )


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Pick x[t, index[t]] for each row t of a 2-D tensor."""
    x = _as_tensor(x)
    index = np.asarray(index)
    rows = np.arange(x.value.shape[0])

    def vjp(g):
        full = np.zeros_like(x.value)
        np.add.at(full, (rows, index), g)
        return full

    return Tensor(x.value[rows, index], (x,), (vjp,))


def scan(a_bar: Tensor, b_bar: Tensor, c: Tensor, u: Tensor) -> Tensor:
    """Taped causal scan; forward delegates to :func:`core.recurrent_scan`.

    Adjoint recurrence, per channel with lam_t = dL/dx_t:

        lam_t   = g_t * c_t + a_bar_{t+1} * lam_{t+1}
        dL/da_t = <lam_t, x_{t-1}>        dL/db_t = lam_t * u_t
        dL/du_t = <lam_t, b_t>            dL/dc_t = sum_d g_t[d] * x_t[d, :]
    """
    a_bar, b_bar, c, u = map(_as_tensor, (a_bar, b_bar, c, u))
    coeffs = core.DiscretizedCoefficients(
        delta=np.ones_like(a_bar.value), a_bar=a_bar.value, b_bar=b_bar.value, c=c.value
    )
    y, states = core.recurrent_scan(coeffs, u.value, return_states=True)
    t_len, d, n = b_bar.value.shape
    av, bv, cv, uv = a_bar.value, b_bar.value, c.value, u.value

    def run_adjoint(g):
        lam = np.empty((t_len, d, n))
        carry = np.zeros((d, n))
        for t in range(t_len - 1, -1, -1):
            lam[t] = g[t][:, None] * cv[t][None, :] + carry
            carry = av[t][:, None] * lam[t]
        grad_a = np.empty((t_len, d))
        grad_a[0] = 0.0  # x_{-1} = 0
        np.einsum("tdn,tdn->td", lam[1:], states[:-1], out=grad_a[1:])
        grad_b = lam * uv[:, :, None]
        grad_u = np.einsum("tdn,tdn->td", lam, bv)
        grad_c = np.einsum("td,tdn->tn", g, states)
        return grad_a, grad_b, grad_c, grad_u

    # The four vjps are called with the same upstream gradient during one
    # backward sweep; run the adjoint loop once and serve all of them.
    cache: dict = {"key": None, "grads": None}

    def cached(g, slot):
        if cache["key"] is not g:
            cache["key"] = g
            cache["grads"] = run_adjoint(g)
        return cache["grads"][slot]

    return Tensor(
        y,
        (a_bar, b_bar, c, u),
        (
            lambda g: cached(g, 0),
            lambda g: cached(g, 1),
            lambda g: cached(g, 2),
            lambda g: cached(g, 3),
        ),
    )
