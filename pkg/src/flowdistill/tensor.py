"""Dense float64 tensors with tape-style reverse-mode differentiation.

Every operation on a tensor that (transitively) depends on a parameter is
recorded as a node carrying a sequence number. Sequence numbers grow
monotonically, so sorting reachable nodes by descending sequence number is a
valid reverse topological order; ``backward`` relies on exactly that.

Broadcasting is deliberately restricted to scalar-vs-tensor and equal shapes.
Row expansion (bias vectors, per-event constants) is an explicit op,
:func:`expand_rows`.
"""

from __future__ import annotations

import contextlib
import itertools

import numpy as np

from .errors import ContractError, ShapeError

_sequence = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled():
    return _grad_enabled


class Tensor:
    """A float64 array that may participate in a differentiation graph.

    Leaves created with ``requires_grad=True`` are parameters: they own a
    zero-initialised ``grad`` buffer which ``backward`` accumulates into.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq")

    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents = ()
        self._backward = None
        self._seq = -1

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return self._backward is None

    @property
    def tracked(self):
        """True when gradients can flow through this tensor."""
        return self.requires_grad or self._backward is not None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self):
        return detach(self)

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

    # Operator sugar; all routes go through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self):
        return transpose(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def abs(self):
        return abs_(self)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(data, parents, backward_fn):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    if _grad_enabled and any(p.tracked for p in parents):
        out._parents = parents
        out._backward = backward_fn
        out._seq = next(_sequence)
    else:
        out._parents = ()
        out._backward = None
        out._seq = -1
    return out


def _is_scalar(t):
    return t.data.ndim == 0


def _check_pair(a, b):
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(grad, t):
    # Undo scalar broadcasting in the backward pass.
    if _is_scalar(t) and grad.ndim != 0:
        return np.asarray(grad.sum())
    return grad


# -- elementwise ----------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b)

    def back(g):
        return _reduce_to(g, a), _reduce_to(g, b)

    return _record(a.data + b.data, (a, b), back)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b)

    def back(g):
        return _reduce_to(g, a), _reduce_to(-g, b)

    return _record(a.data - b.data, (a, b), back)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b)

    def back(g):
        return _reduce_to(g * b.data, a), _reduce_to(g * a.data, b)

    return _record(a.data * b.data, (a, b), back)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b)
    out = a.data / b.data

    def back(g):
        return _reduce_to(g / b.data, a), _reduce_to(-g * out / b.data, b)

    return _record(out, (a, b), back)


def neg(a):
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _record(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def abs_(a):
    a = as_tensor(a)
    return _record(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def square(a):
    a = as_tensor(a)
    return _record(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


_UNARY = {"exp": exp, "log": log, "tanh": tanh, "abs": abs_, "neg": neg}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op_kind, a, b=None):
    """Dispatch an elementwise op by name (``"add"``, ``"exp"``, ...)."""
    if op_kind in _BINARY:
        if b is None:
            raise ContractError(f"{op_kind} needs two operands")
        return _BINARY[op_kind](a, b)
    if op_kind in _UNARY:
        return _UNARY[op_kind](a)
    raise ContractError(f"unknown elementwise op {op_kind!r}")


# -- linear algebra and reductions ---------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return _record(a.data @ b.data, (a, b), back)


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    return _record(a.data.T, (a,), lambda g: (g.T,))


def inv(a):
    """Matrix inverse; gradient is ``-A^-T G A^-T``."""
    a = as_tensor(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"inverse needs a square matrix, got {a.shape}")
    out = np.linalg.inv(a.data)

    def back(g):
        return (-(out.T @ g @ out.T),)

    return _record(out, (a,), back)


def sum_(a, axis=None):
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        return _record(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))

    def back(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _record(a.data.sum(axis=axis), (a,), back)


def mean(a, axis=None):
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return sum_(a, axis) / float(count)


def expand_rows(a, n):
    """Stack ``n`` copies of ``a`` along a new leading axis.

    A 0-d tensor becomes shape ``(n,)``; a vector of length k becomes
    ``(n, k)``.
    """
    a = as_tensor(a)
    if a.ndim > 1:
        raise ShapeError(f"expand_rows expects a scalar or vector, got {a.shape}")
    out = np.broadcast_to(a.data, (n,) + a.shape).copy()
    return _record(out, (a,), lambda g: (g.sum(axis=0),))


def detach(a):
    """Value copy that terminates gradient flow."""
    a = as_tensor(a)
    return Tensor(a.data)


# -- backward --------------------------------------------------------------


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every reachable parameter's ``grad``."""
    if not isinstance(loss, Tensor) or loss.data.size != 1 or loss.ndim > 1:
        raise ContractError("backward() needs a scalar tensor")
    if loss._backward is None:
        if loss.requires_grad:
            loss.grad = loss.grad + 1.0
        return

    nodes = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if id(node) in nodes:
            continue
        nodes[id(node)] = node
        for parent in node._parents:
            if parent._backward is not None and id(parent) not in nodes:
                stack.append(parent)

    grads = {id(loss): np.ones_like(loss.data)}
    for node in sorted(nodes.values(), key=lambda t: t._seq, reverse=True):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if parent._backward is not None:
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            elif parent.requires_grad:
                parent.grad = parent.grad + pg
