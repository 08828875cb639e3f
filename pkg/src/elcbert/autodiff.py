"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations are recorded only while a :class:`Tape` is active::

    with Tape() as tape:
        loss = (x * x).sum()
    tape.backward(loss)      # or loss.backward()

Outside a tape every operation is a plain numpy computation and the result
is a constant. Gradients accumulate into ``leaf.grad``; call
:meth:`Tensor.zero_grad` between steps.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import DetachedTensor, EmptyAxis, NonFiniteValue, NotScalar, ShapeMismatch

_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def current_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad():
    """Suspend recording on the current thread."""
    stack = _tape_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape", "_index", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None
        self._index = -1
        self.name = name

    @classmethod
    def _result(cls, data, requires_grad):
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = requires_grad
        t.grad = None
        t._tape = None
        t._index = -1
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._tape is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self._tape is None:
            raise DetachedTensor("tensor was not produced on a tape")
        self._tape.backward(self)

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class _Record:
    __slots__ = ("fn", "inputs", "output")

    def __init__(self, fn, inputs, output):
        self.fn = fn
        self.inputs = inputs
        self.output = output


class Tape:
    """Ordered log of primitive operations executed while the tape is active.

    Records are appended in execution order, so the list is topologically
    sorted by construction. :meth:`backward` walks it once in reverse.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        stack.pop()
        return False

    def __len__(self):
        return len(self.records)

    def _append(self, fn, inputs, output):
        output._tape = self
        output._index = len(self.records)
        self.records.append(_Record(fn, inputs, output))

    def backward(self, loss: Tensor):
        if loss._tape is not self:
            raise DetachedTensor("loss was not recorded on this tape")
        if loss.data.size != 1 or loss.data.ndim > 1:
            raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
        pending = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records[: loss._index + 1]):
            g = pending.pop(id(rec.output), None)
            if g is None:
                continue
            grads = rec.fn.backward(g)
            for t, gi in zip(rec.inputs, grads):
                if gi is None or not t.requires_grad:
                    continue
                if t._tape is None:
                    t.grad = gi.copy() if t.grad is None else t.grad + gi
                else:
                    key = id(t)
                    prev = pending.get(key)
                    pending[key] = gi if prev is None else prev + gi


class Function:
    """A differentiable primitive. ``forward`` sees arrays, ``backward`` returns one grad per input."""

    def forward(self, *arrays, **kwargs):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs):
        inputs = tuple(as_tensor(t) for t in inputs)
        fn = cls()
        out = fn.forward(*[t.data for t in inputs], **kwargs)
        if not np.isfinite(out).all():
            raise NonFiniteValue(f"{cls.__name__} produced a non-finite value")
        tape = current_tape()
        rg = tape is not None and any(t.requires_grad for t in inputs)
        result = Tensor._result(out, rg)
        if rg:
            tape._append(fn, inputs, result)
        return result


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_check(kind, a, b):
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(kind, a.shape, b.shape) from None


class Add(Function):
    def forward(self, a, b):
        _broadcast_check("add", a, b)
        self.shapes = a.shape, b.shape
        return a + b

    def backward(self, g):
        return _unbroadcast(g, self.shapes[0]), _unbroadcast(g, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        _broadcast_check("sub", a, b)
        self.shapes = a.shape, b.shape
        return a - b

    def backward(self, g):
        return _unbroadcast(g, self.shapes[0]), _unbroadcast(-g, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        _broadcast_check("mul", a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, g):
        return _unbroadcast(g * self.b, self.a.shape), _unbroadcast(g * self.a, self.b.shape)


class Div(Function):
    def forward(self, a, b):
        _broadcast_check("div", a, b)
        self.a, self.b = a, b
        return a / b

    def backward(self, g):
        ga = g / self.b
        gb = -ga * self.a / self.b
        return _unbroadcast(ga, self.a.shape), _unbroadcast(gb, self.b.shape)


class Scale(Function):
    def forward(self, a, c=1.0):
        self.c = c
        return a * c

    def backward(self, g):
        return (g * self.c,)


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeMismatch("matmul", a.shape, b.shape)
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise ShapeMismatch("matmul", a.shape, b.shape) from None
        self.a, self.b = a, b
        return a @ b

    def backward(self, g):
        ga = g @ np.swapaxes(self.b, -1, -2)
        gb = np.swapaxes(self.a, -1, -2) @ g
        return _unbroadcast(ga, self.a.shape), _unbroadcast(gb, self.b.shape)


class Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.shape = a.shape
        self.axis, self.keepdims = axis, keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, g):
        if self.axis is not None and not self.keepdims:
            g = np.expand_dims(g, self.axis)
        return (np.broadcast_to(g, self.shape).copy(),)


class Reshape(Function):
    def forward(self, a, shape=()):
        self.shape = a.shape
        try:
            return a.reshape(shape)
        except ValueError:
            raise ShapeMismatch("reshape", a.shape, tuple(shape)) from None

    def backward(self, g):
        return (g.reshape(self.shape),)


class Transpose(Function):
    def forward(self, a, axes=None):
        self.axes = axes
        return np.transpose(a, axes).copy()

    def backward(self, g):
        if self.axes is None:
            return (np.transpose(g),)
        return (np.transpose(g, np.argsort(self.axes)),)


class GetItem(Function):
    def forward(self, a, index=None):
        self.shape, self.index = a.shape, index
        return np.array(a[index], dtype=np.float64)

    def backward(self, g):
        out = np.zeros(self.shape)
        np.add.at(out, self.index, g)
        return (out,)


class Stack(Function):
    def forward(self, *arrays, axis=0):
        shapes = {a.shape for a in arrays}
        if len(shapes) != 1:
            raise ShapeMismatch("stack", *sorted(shapes))
        self.axis, self.n = axis, len(arrays)
        return np.stack(arrays, axis=axis)

    def backward(self, g):
        return tuple(np.take(g, i, axis=self.axis) for i in range(self.n))


class Sqrt(Function):
    def forward(self, a):
        self.out = np.sqrt(a)
        return self.out

    def backward(self, g):
        return (g / (2.0 * self.out),)


class Log(Function):
    def forward(self, a):
        self.a = a
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(a)

    def backward(self, g):
        return (g / self.a,)


def _softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


class Softmax(Function):
    def forward(self, x):
        if x.ndim == 0:
            raise ShapeMismatch("softmax", x.shape)
        if x.shape[-1] == 0:
            raise EmptyAxis("softmax over an empty last axis")
        self.out = _softmax(x)
        return self.out

    def backward(self, g):
        y = self.out
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)


class LayerNorm(Function):
    def forward(self, x, gain, bias, eps=1e-7):
        d = x.shape[-1] if x.ndim else None
        if gain.shape != (d,) or bias.shape != (d,):
            raise ShapeMismatch("layer_norm", x.shape, gain.shape, bias.shape)
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        self.inv = 1.0 / np.sqrt(var + eps)
        self.xhat = xc * self.inv
        self.gain = gain
        return self.xhat * gain + bias

    def backward(self, g):
        xhat = self.xhat
        lead = tuple(range(g.ndim - 1))
        ggain = (g * xhat).sum(axis=lead)
        gbias = g.sum(axis=lead)
        gx_hat = g * self.gain
        gx = self.inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, ggain, gbias


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Gelu(Function):
    def forward(self, x):
        self.x = x
        self.cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
        return x * self.cdf

    def backward(self, g):
        x = self.x
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (self.cdf + x * pdf),)


class Embedding(Function):
    """Row gather from a (rows, dim) table; inputs are (table,), indices are a kwarg."""

    def forward(self, table, indices=None):
        self.rows, self.indices = table.shape, indices
        return table[indices]

    def backward(self, g):
        out = np.zeros(self.rows)
        np.add.at(out, self.indices.reshape(-1), g.reshape(-1, self.rows[1]))
        return (out,)


class CrossEntropy(Function):
    """Mean negative log-likelihood over rows whose target is not ``ignore_index``."""

    def forward(self, logits, targets=None, ignore_index=-100):
        if logits.ndim != 2 or targets.shape != logits.shape[:1]:
            raise ShapeMismatch("cross_entropy", logits.shape, targets.shape)
        keep = targets != ignore_index
        self.count = int(keep.sum())
        if self.count == 0:
            raise ValueError("cross_entropy: no labelled rows")
        self.rows = np.nonzero(keep)[0]
        self.targets = targets[self.rows]
        z = logits[self.rows]
        z = z - z.max(axis=-1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=-1))
        self.shape = logits.shape
        self.probs = np.exp(z - lse[:, None])
        picked = z[np.arange(len(self.rows)), self.targets]
        return np.asarray((lse - picked).sum() / self.count)

    def backward(self, g):
        d = self.probs.copy()
        d[np.arange(len(self.rows)), self.targets] -= 1.0
        out = np.zeros(self.shape)
        out[self.rows] = d * (g / self.count)
        return (out,)


# functional surface


def add(a, b):
    return Add.apply(a, b)


def sub(a, b):
    return Sub.apply(a, b)


def mul(a, b):
    return Mul.apply(a, b)


def div(a, b):
    return Div.apply(a, b)


def scale(a, c):
    return Scale.apply(a, c=float(c))


def matmul(a, b):
    return MatMul.apply(a, b)


def tensor_algebra(a, b, kind):
    """Dispatch one of the binary primitives by name (``b`` is a float for scalar-scale)."""
    if kind == "add":
        return add(a, b)
    if kind == "sub":
        return sub(a, b)
    if kind == "elementwise-mul":
        return mul(a, b)
    if kind == "scalar-scale":
        return scale(a, b)
    if kind == "matmul":
        return matmul(a, b)
    raise ValueError(f"unknown kind {kind!r}")


def tsum(a, axis=None, keepdims=False):
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in axes]))
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    return Reshape.apply(a, shape=tuple(shape))


def transpose(a, axes=None):
    return Transpose.apply(a, axes=None if axes is None else tuple(axes))


def getitem(a, index):
    return GetItem.apply(a, index=index)


def stack(tensors: Sequence[Tensor], axis=0):
    if not tensors:
        raise ShapeMismatch("stack")
    return Stack.apply(*tensors, axis=axis)


def sqrt(a):
    return Sqrt.apply(a)


def log(a):
    return Log.apply(a)


def softmax_rows(x):
    return Softmax.apply(x)


def layer_norm(x, gain, bias, eps=1e-7):
    if not eps > 0:
        raise ValueError("eps must be positive")
    return LayerNorm.apply(x, gain, bias, eps=eps)


def gelu(x):
    return Gelu.apply(x)


def embedding(table, indices):
    return Embedding.apply(table, indices=np.asarray(indices, dtype=np.int64))


def cross_entropy(logits, targets, ignore_index=-100):
    return CrossEntropy.apply(logits, targets=np.asarray(targets, dtype=np.int64),
                              ignore_index=ignore_index)


def backward(loss: Tensor):
    """Populate ``grad`` on every requires_grad leaf reachable from ``loss``."""
    loss.backward()


def _scalar_value(v):
    if isinstance(v, Tensor):
        v = v.data
    v = float(np.asarray(v).reshape(()))
    return v


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-4,
    analytic: Sequence[np.ndarray] | None = None,
) -> float:
    """Compare tape gradients of ``f`` against central differences.

    ``f`` takes no arguments and reads ``params`` by closure; entries are
    perturbed in place and restored. Returns the worst relative error
    ``|a - n| / max(|a|, |n|, 1e-8)`` over all entries. Pass ``analytic`` to
    check a precomputed (possibly deliberately wrong) gradient instead.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    if analytic is None:
        saved = [p.grad for p in params]
        for p in params:
            p.grad = None
        with Tape() as tape:
            loss = f()
        tape.backward(loss)
        analytic = [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
        for p, g in zip(params, saved):
            p.grad = g
    worst = 0.0
    with no_grad():
        for p, g in zip(params, analytic):
            flat = p.data.reshape(-1)
            if not np.shares_memory(flat, p.data):
                raise ValueError("parameter data must be contiguous")
            gflat = np.asarray(g, dtype=np.float64).reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                fp = _scalar_value(f())
                flat[j] = orig - h
                fm = _scalar_value(f())
                flat[j] = orig
                if not (math.isfinite(fp) and math.isfinite(fm)):
                    raise NonFiniteValue(f"f returned a non-finite value while probing entry {j}")
                num = (fp - fm) / (2.0 * h)
                a = gflat[j]
                err = abs(a - num) / max(abs(a), abs(num), 1e-8)
                worst = max(worst, err)
    return worst
