"""Dense tensors with a dynamic reverse-mode graph."""
import contextlib

import numpy as np


class AutodiffError(Exception):
    pass


class ShapeMismatch(AutodiffError, ValueError):
    pass


class NonFinite(AutodiffError, FloatingPointError):
    """An operation produced NaN or Inf; the step is aborted."""

    def __init__(self, op, shape):
        self.op = op
        self.shape = shape
        super().__init__(f"non-finite values produced by {op} (output shape {shape})")


_grad_enabled = True


def is_grad_enabled():
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Array plus optional gradient bookkeeping.

    Non-leaf tensors keep references to their parents and a closure mapping
    the output gradient to one gradient per parent (``None`` where a parent
    needs none).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "__weakref__")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        backward(self, grad)

    # operator sugar; the implementations live in ops
    def __add__(self, other):
        from aratts.autodiff import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from aratts.autodiff import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from aratts.autodiff import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from aratts.autodiff import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from aratts.autodiff import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from aratts.autodiff import ops
        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from aratts.autodiff import ops
        return ops.getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        from aratts.autodiff import ops
        return ops.sum(self, axis, keepdims)

    def reshape(self, *shape):
        from aratts.autodiff import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from aratts.autodiff import ops
        return ops.transpose(self, axes or None)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def make(data, parents, backward_fn, op, check=True):
    """Wrap an op result, checking finiteness and recording graph edges.

    ``check=False`` is for ops whose output is finite whenever the inputs are
    (bounded activations, indexing).
    """
    # one reduction is cheaper than an elementwise mask; a non-finite sum is
    # confirmed elementwise so that overflow of the sum alone is not an error
    if check and not np.isfinite(data.sum()) and not np.isfinite(data).all():
        raise NonFinite(op, data.shape)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _topo_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, grad=None):
    """Accumulate d(loss)/d(leaf) into every reachable ``requires_grad`` leaf.

    Leaves that do not influence ``loss`` keep whatever gradient they had
    (zero after ``zero_grad``). Gradients accumulate across calls.
    """
    if grad is None:
        if loss.data.size != 1:
            raise ShapeMismatch("backward() without a seed gradient needs a scalar loss")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        return
    grads = {id(loss): np.asarray(grad, dtype=loss.data.dtype)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
