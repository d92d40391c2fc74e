"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation that produces a tensor from inputs requiring gradients
records a closure mapping the output gradient to input gradients. Calling
``backward`` on a scalar walks the recorded graph in reverse topological
order. Gradients of all intermediate tensors are computed fresh on each
call and then *added* to ``.grad``, so repeated calls accumulate.

Operations broadcast like numpy; the last axis is the "row" axis, so a
batch of matrices ``(B, m, n)`` flows through the same code as one
``(m, n)`` matrix.
"""
from __future__ import annotations

import contextlib

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad, shape):
    # sum out axes that numpy broadcasting added or stretched
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=""):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    # -- graph plumbing -------------------------------------------------
    @staticmethod
    def _make(data, parents, backward):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = ""
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = parents if track else ()
        out._backward = backward if track else None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _topo(self):
        order, seen = [], set()
        stack = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self):
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError("loss does not depend on any tensor requiring grad")
        grads = {id(self): np.ones_like(self.data)}
        order = self._topo()
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
        for node in order:
            g = grads.get(id(node))
            if g is None:
                continue
            g = np.broadcast_to(g, node.shape)
            node.grad = g.copy() if node.grad is None else node.grad + g

    # -- arithmetic -----------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor._make(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)),
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data

        def backward(g):
            return _unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)

        return Tensor._make(x * y, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data

        def backward(g):
            return _unbroadcast(g / y, x.shape), _unbroadcast(-g * x / (y * y), y.shape)

        return Tensor._make(x / y, (self, other), backward)

    def __pow__(self, power):
        if isinstance(power, Tensor):
            raise TypeError("only scalar exponents are supported")
        x = self.data
        return Tensor._make(x**power, (self,), lambda g: (g * power * x ** (power - 1),))

    def __matmul__(self, other):
        return matmul(self, other)

    def exp(self):
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,))

    def log(self):
        x = self.data
        return Tensor._make(np.log(x), (self,), lambda g: (g / x,))

    def sum(self, axis=None, keepdims=False):
        x_shape = self.shape
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, x_shape),)

        return Tensor._make(out, (self,), backward)

    def mean(self, axis=None, keepdims=False):
        n = self.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        if n == 0:
            raise ShapeError("mean of an empty tensor")
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        x_shape = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(x_shape),))

    def transpose(self, *axes):
        if not axes:
            axes = tuple(range(self.ndim))[::-1]
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = np.argsort(axes)
        return Tensor._make(
            self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),)
        )

    def swap_last(self):
        """Transpose the trailing two axes."""
        axes = list(range(self.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return self.transpose(axes)

    @property
    def T(self):
        return self.swap_last() if self.ndim >= 2 else self

    def __getitem__(self, index):
        x_shape = self.shape

        def backward(g):
            full = np.zeros(x_shape)
            np.add.at(full, index, g)
            return (full,)

        return Tensor._make(self.data[index], (self,), backward)


def parameter(data, name=""):
    return Tensor(data, requires_grad=True, name=name)


def matmul(a, b):
    """Matrix product over the trailing two axes, batched over leading ones."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >= 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    x, y = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(y, -1, -2)
        gb = np.swapaxes(x, -1, -2) @ g
        return _unbroadcast(ga, x.shape), _unbroadcast(gb, y.shape)

    return Tensor._make(x @ y, (a, b), backward)


def softmax_rows(x):
    """Softmax along the last axis with max subtraction."""
    x = as_tensor(x)
    if np.isnan(x.data).any():
        raise ValueError("softmax_rows received NaN input")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor._make(s, (x,), backward)


LN_EPS = 1e-5


def layer_norm(x, gain, bias, eps=LN_EPS):
    """Standardize each row (last axis) then apply ``gain`` and ``bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    n = x.shape[-1]
    if n < 2:
        raise ShapeError("layer_norm needs rows of length >= 2")
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(f"gain/bias must have shape ({n},), got {gain.shape}, {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        gx_hat = g * gain.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, _unbroadcast(g * xhat, (n,)), _unbroadcast(g, (n,))

    return Tensor._make(out, (x, gain, bias), backward)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor._make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def _check_nonempty(x):
    if x.size == 0 or x.ndim < 2:
        raise ShapeError(f"expected a non-empty matrix, got shape {x.shape}")


def mean_rows(x):
    """Average over rows: ``(m, n) -> (n,)`` (column means)."""
    x = as_tensor(x)
    _check_nonempty(x)
    return x.mean(axis=-2)


def mean_cols(x):
    """Average over columns: ``(m, n) -> (m,)`` (row means)."""
    x = as_tensor(x)
    _check_nonempty(x)
    return x.mean(axis=-1)


def dropout(x, p, training, rng):
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return Tensor._make(x.data * keep, (x,), lambda g: (g * keep,))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor._make(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward
    )


def cosine_similarity(a, b):
    """Cosine along the last axis; defined as 0 when either vector is zero."""
    a, b = as_tensor(a), as_tensor(b)
    x, y = a.data, b.data
    nx = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    ny = np.sqrt((y * y).sum(axis=-1, keepdims=True))
    ok = (nx > 0) & (ny > 0)
    nx_s, ny_s = np.where(ok, nx, 1.0), np.where(ok, ny, 1.0)
    dot = (x * y).sum(axis=-1, keepdims=True)
    cos = np.where(ok, dot / (nx_s * ny_s), 0.0)

    def backward(g):
        g = np.expand_dims(g, -1)
        ga = np.where(ok, g * (y / (nx_s * ny_s) - cos * x / nx_s**2), 0.0)
        gb = np.where(ok, g * (x / (nx_s * ny_s) - cos * y / ny_s**2), 0.0)
        return ga, gb

    return Tensor._make(cos[..., 0], (a, b), backward)


def softplus(x):
    """``log(1 + exp(x))`` evaluated without overflow."""
    x = as_tensor(x)
    v = x.data
    out = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))
    sig = np.exp(-np.logaddexp(0.0, -v))
    return Tensor._make(out, (x,), lambda g: (g * sig,))


def mse_loss(pred, target):
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    return (diff * diff).mean()


class Adam:
    """Adam with bias correction. ``step`` consumes and clears gradients."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise RuntimeError(f"parameter {i} ({p.name or p.shape}) has no gradient")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None

    def zero_grad(self):
        for p in self.params:
            p.grad = None


class StepSchedule:
    """Multiply the rate by ``gamma`` every ``step_size`` epochs."""

    def __init__(self, base_rate=1e-3, step_size=3, gamma=0.7):
        if step_size < 1:
            raise ValueError("step_size must be >= 1")
        self.base_rate = base_rate
        self.step_size = step_size
        self.gamma = gamma

    def rate(self, epoch):
        return self.base_rate * self.gamma ** (epoch // self.step_size)
