"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations executed while a :class:`Tape` is active are recorded whenever at
least one input is tracked (a named parameter or the output of an earlier
recorded operation).  :func:`backprop` replays the tape in reverse and returns
gradients keyed by parameter name.  Outside a tape the same functions are
plain numpy arithmetic, which is what inference and finite differences use.
"""

import zlib

import numpy as np

from .errors import ContractError, ShapeError

_TAPES = []


class Tensor:
    __slots__ = ("data", "name", "requires_grad", "_tape")

    def __init__(self, data, name=None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.name = name
        self.requires_grad = requires_grad
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

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
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by constants")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def parameter(data, name):
    """A named leaf tensor whose gradient :func:`backprop` reports."""
    return Tensor(data, name=name, requires_grad=True)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitive operations.

    Use as a context manager; nesting is allowed and the innermost tape
    records.
    """

    def __init__(self):
        self.records = []
        self.leaves = {}

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self.records)


def active_tape():
    return _TAPES[-1] if _TAPES else None


def _result(data, inputs, backward):
    out = Tensor(data)
    tape = active_tape()
    if tape is None:
        return out
    if not any(t.requires_grad for t in inputs):
        return out
    for t in inputs:
        if t.requires_grad and t._tape is None:
            tape.leaves[id(t)] = t
    out.requires_grad = True
    out._tape = tape
    tape.records.append((out, inputs, backward))
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), -_unbroadcast(g, sb)

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _result(ad * bd, (a, b), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise ShapeError("matmul supports 1-D and 2-D operands only")
    if ad.shape[-1] != bd.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {ad.shape} @ {bd.shape}")

    def backward(g):
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:
            return bd @ g, np.outer(ad, g)
        if ad.ndim == 1:
            return g * bd, g * ad
        return g @ bd.T, ad.T @ g

    return _result(ad @ bd, (a, b), backward)


def affine(x, W, b):
    """``W x + b`` for a vector ``x``; row-wise ``x W^T + b`` for a matrix."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    xd, Wd = x.data, W.data
    if Wd.ndim != 2 or xd.ndim not in (1, 2):
        raise ShapeError(f"affine expects 2-D W and 1-D/2-D x, got {Wd.shape}, {xd.shape}")
    if xd.shape[-1] != Wd.shape[1]:
        raise ShapeError(f"affine: W is {Wd.shape} but x has trailing dim {xd.shape[-1]}")
    if b.shape != (Wd.shape[0],):
        raise ShapeError(f"affine: bias shape {b.shape} does not match output dim {Wd.shape[0]}")
    if xd.ndim == 1:
        out = Wd @ xd + b.data

        def backward(g):
            return Wd.T @ g, np.outer(g, xd), g
    else:
        out = xd @ Wd.T + b.data

        def backward(g):
            return g @ Wd, g.T @ xd, g.sum(axis=0)

    return _result(out, (x, W, b), backward)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    x = as_tensor(x)
    y = _sigmoid(np.atleast_1d(x.data)).reshape(x.shape)

    def backward(g):
        return (g * y * (1.0 - y),)

    return _result(y, (x,), backward)


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - y * y),)

    return _result(y, (x,), backward)


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x):
    """Softmax over the last axis."""
    x = as_tensor(x)
    y = _softmax(x.data)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), backward)


def log_softmax(x):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return _result(y, (x,), backward)


def activate(x, kind):
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "softmax":
        return softmax(x)
    raise ValueError(f"unknown activation {kind!r}")


def log(x):
    x = as_tensor(x)
    xd = x.data

    def backward(g):
        return (g / xd,)

    return _result(np.log(xd), (x,), backward)


def clip(x, lo, hi):
    x = as_tensor(x)
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)

    def backward(g):
        return (g * inside,)

    return _result(np.clip(xd, lo, hi), (x,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(out, tuple(tensors), backward)


def stack(tensors):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors])
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc

    def backward(g):
        return tuple(g[i] for i in range(len(tensors)))

    return _result(out, tuple(tensors), backward)


def transpose(x):
    x = as_tensor(x)

    def backward(g):
        return (g.T,)

    return _result(x.data.T.copy(), (x,), backward)


def take(x, index):
    """Basic or integer-array indexing; the gradient scatter-adds."""
    x = as_tensor(x)
    shape = x.shape
    out = x.data[index]

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _result(np.array(out, dtype=np.float64), (x,), backward)


def reduce_sum(x):
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.array(x.data.sum()), (x,), backward)


def mean(x):
    return mul(reduce_sum(x), 1.0 / as_tensor(x).size)


def backprop(loss, params=None):
    """Gradients of a scalar ``loss`` with respect to traced parameters.

    ``params`` maps names to parameter tensors; each gets an entry, zero when
    the parameter is not on any path to ``loss``.  Without ``params`` every
    named leaf seen on the tape is reported.  Contributions from repeated use
    of a parameter are summed.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ContractError("backprop requires a scalar loss tensor")
    tape = loss._tape
    if tape is None:
        raise ContractError("loss was not produced under an active tape")
    grads = {id(loss): np.ones(loss.shape)}
    for out, inputs, backward in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = np.array(gi, dtype=np.float64).reshape(inp.shape)
    if params is None:
        params = {t.name: t for t in tape.leaves.values() if t.name is not None}
    return {
        name: grads.get(id(p), np.zeros(p.shape)) for name, p in params.items()
    }


def _rng(rng_seed):
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return np.random.default_rng(rng_seed)


def init_parameters(shape, rng_seed, scheme="uniform-fan"):
    """Initial parameter values.

    ``uniform-fan`` draws from U(-a, a) with ``a = sqrt(6 / (fan_in + fan_out))``
    where, for a matrix of shape (out, in), fan_in = in and fan_out = out.
    """
    shape = tuple(int(s) for s in shape)
    if not shape or any(s <= 0 for s in shape):
        raise ShapeError(f"invalid parameter shape {shape}")
    if scheme == "zeros":
        return Tensor(np.zeros(shape))
    if scheme != "uniform-fan":
        raise ValueError(f"unknown init scheme {scheme!r}")
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        fan_out, fan_in = shape[0], int(np.prod(shape[1:]))
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(_rng(rng_seed).uniform(-a, a, size=shape))


def derived_seed(seed, name):
    """Per-parameter seed so initial values do not depend on creation order."""
    return np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))])


def finite_diff_check(scalar_fn, params, h=1e-5):
    """Maximum relative error between backprop and central differences.

    ``scalar_fn()`` builds the scalar loss from the tensors in ``params``;
    entries are perturbed in place and restored afterwards.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    with Tape():
        loss = scalar_fn()
    analytic = backprop(loss, params)
    f0 = loss.item()
    if scalar_fn().item() != f0:
        raise ContractError("scalar_fn is not deterministic")
    worst = 0.0
    for name, p in params.items():
        base = p.data
        g = analytic[name].reshape(-1)
        for i in range(base.size):
            bumped = base.copy()
            bumped.flat[i] += h
            p.data = bumped
            f_plus = scalar_fn().item()
            bumped = base.copy()
            bumped.flat[i] -= h
            p.data = bumped
            f_minus = scalar_fn().item()
            p.data = base
            d = (f_plus - f_minus) / (2.0 * h)
            rel = abs(g[i] - d) / max(abs(g[i]), abs(d), 1e-8)
            worst = max(worst, rel)
    return worst


class AdamState:
    """First/second moment accumulators and the step counter."""

    def __init__(self, params=None):
        self.m = {}
        self.v = {}
        self.step = 0
        for name, p in (params or {}).items():
            self.m[name] = np.zeros(p.shape)
            self.v[name] = np.zeros(p.shape)


def clip_grad_norm(grads, max_norm=5.0):
    """Scale all gradients together so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if total <= max_norm or total == 0.0:
        return grads, total
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}, total


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update.

    Parameter arrays are replaced rather than mutated, so arrays handed out
    earlier keep their values.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        elif m.shape != p.shape:
            raise ShapeError(f"Adam state for {name} has shape {m.shape}, parameter {p.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state
