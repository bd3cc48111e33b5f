"""Reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor wraps an immutable float64 ndarray.  Differentiable ops record
their inputs and a backward closure on the output tensor; backward(loss)
topologically sorts that implicit graph and walks it once in reverse,
accumulating gradients.  All ops are pure: input buffers are frozen at
construction and never written again.  The one mutable field is .grad,
which is populated by backward passes and cleared by zero_grad.

Forward results are checked for NaN/Inf: overflow raises NonFiniteError
instead of propagating silently.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from . import backend

_grad_enabled = True


@contextmanager
def no_grad():
    """Suspend graph recording; ops inside return constant tensors."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class NonFiniteError(ArithmeticError):
    """A forward op produced NaN or Inf from finite inputs."""


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op}: result contains NaN or Inf")


class Tensor:
    """Immutable float64 array plus an optional gradient buffer.

    Parameters
    ----------
    data : array-like
        Copied into an owned, read-only float64 array of any shape.
    requires_grad : bool
        Leaf tensors created with requires_grad=True get an eagerly
        allocated zero gradient buffer, so a parameter the loss never
        touches reports an all-zero gradient rather than None.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents",
                 "_backward", "_backward_done")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, copy=True)
        _check_finite(arr, "tensor")
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros(arr.shape) if requires_grad else None
        self.op = None
        self._parents = ()
        self._backward = None
        self._backward_done = False

    @classmethod
    def _from_op(cls, arr: np.ndarray, op: str, parents, backward) -> "Tensor":
        # arr is freshly allocated by the op, so freezing needs no copy.
        _check_finite(arr, op)
        arr.setflags(write=False)
        t = cls.__new__(cls)
        t.data = arr
        t.op = op
        t._backward_done = False
        if _grad_enabled and any(p.requires_grad for p in parents):
            t.requires_grad = True
            t._parents = tuple(parents)
            t._backward = backward
        else:
            t.requires_grad = False
            t._parents = ()
            t._backward = None
        t.grad = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor has {self.data.size} elements, not 1")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """The underlying read-only array (no copy)."""
        return self.data

    def assign_(self, data) -> None:
        """Replace the stored values, keeping the tensor's identity.

        This is the explicit mutation hook for optimizers, initializers
        and checkpoint loading.  It is not an op: nothing is recorded and
        no gradient flows.  Op purity is untouched since forward code
        never calls it.
        """
        arr = np.array(data, dtype=np.float64, copy=True)
        if arr.shape != self.data.shape:
            raise ShapeError(
                f"assign_: shape {arr.shape} does not match {self.data.shape}")
        _check_finite(arr, "assign_")
        arr.setflags(write=False)
        self.data = arr

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g)
        else:
            np.add(self.grad, g, out=self.grad)

    def zero_grad(self) -> None:
        if self.requires_grad and self._backward is None:
            self.grad = np.zeros(self.data.shape)
        else:
            self.grad = None
        self._backward_done = False

    def backward(self) -> None:
        """Run one reverse pass from this scalar, filling .grad fields.

        Raises if this tensor is not scalar, or if backward already ran
        for this graph (a fresh forward pass is the reset).
        """
        ComputeGraph.trace(self).run_backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.data.shape}{flag}{tag})"


class ComputeGraph:
    """Ordered record of the differentiable ops behind one tensor.

    nodes holds op-output tensors in topological order: every op appears
    after all producers of its inputs.  One run_backward visits each node
    exactly once, in reverse.
    """

    __slots__ = ("nodes",)

    def __init__(self, nodes: tuple):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "ComputeGraph":
        order = []
        seen = set()
        stack = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen or t._backward is None:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for p in t._parents:
                stack.append((p, False))
        return cls(tuple(order))

    def run_backward(self, root: Tensor) -> None:
        if root.data.size != 1:
            raise ShapeError(
                f"backward: root must be scalar, got shape {root.data.shape}")
        if not root.requires_grad:
            raise ValueError("backward: root does not require grad")
        if root._backward_done:
            raise RuntimeError(
                "backward already ran for this graph; run a fresh forward pass")
        root._backward_done = True
        root._accumulate(np.ones(root.data.shape))
        for t in reversed(self.nodes):
            if t.grad is not None:
                t._backward(t.grad)


def _is_scalar(t: Tensor) -> bool:
    return t.data.size == 1


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    # Fold a full-shape gradient back onto a scalar operand.
    return np.sum(g).reshape(shape) if g.shape != shape else g


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum.  Shapes must match exactly; a one-element operand
    is the single allowed broadcast."""
    if a.data.shape != b.data.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape} differ")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(g, b.data.shape))

    return Tensor._from_op(out, "add", (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product, same shape rule as add."""
    if a.data.shape != b.data.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"mul: shapes {a.data.shape} and {b.data.shape} differ")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(g * a.data, b.data.shape))

    return Tensor._from_op(out, "mul", (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a plain python number."""
    s = float(s)
    if not math.isfinite(s):
        raise NonFiniteError(f"scale: factor {s} is not finite")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a.data * s

    def backward(g):
        a._accumulate(g * s)

    return Tensor._from_op(out, "scale", (a,), backward)


def relu(a: Tensor) -> Tensor:
    """max(0, x).  The subgradient at exactly zero is zero."""
    out = np.maximum(a.data, 0.0)

    def backward(g):
        a._accumulate(g * (a.data > 0.0))

    return Tensor._from_op(out, "relu", (a,), backward)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """2-D convolution with same zero padding.

    Parameters
    ----------
    x : Tensor
        Input of shape (C_in, H, W), or (N, C_in, H, W) for a batch.
    kernel : Tensor
        Weights of shape (C_out, C_in, K, K); K must be odd and square,
        pad width is (K - 1) / 2 on each side.
    bias : Tensor
        Per output channel, shape (C_out,).

    Returns
    -------
    Tensor
        (C_out, H, W), or (N, C_out, H, W) when the input is batched.

    out[o, y, x] = bias[o] + sum over c, i, j of
        kernel[o, c, i, j] * padded[c, y + i - (K-1)/2, x + j - (K-1)/2]

    Gradients flow to the input, the kernel, and the bias.
    """
    if kernel.data.ndim != 4:
        raise ShapeError(
            f"conv2d: kernel must be 4-d (C_out, C_in, K, K), got {kernel.data.shape}")
    c_out, c_k, kh, kw = kernel.data.shape
    if kh != kw:
        raise ShapeError(f"conv2d: kernel must be square, got {kh}x{kw}")
    if kh % 2 == 0:
        raise ShapeError(f"conv2d: kernel size must be odd, got {kh}")
    batched = x.data.ndim == 4
    if not batched and x.data.ndim != 3:
        raise ShapeError(
            f"conv2d: input must be (C_in, H, W) or (N, C_in, H, W), got {x.data.shape}")
    c_in = x.data.shape[1] if batched else x.data.shape[0]
    if c_in != c_k:
        raise ShapeError(
            f"conv2d: kernel C_in={c_k} does not match input C_in={c_in}")
    if bias.data.shape != (c_out,):
        raise ShapeError(
            f"conv2d: bias shape {bias.data.shape} does not match C_out={c_out}")

    ker = backend.active()
    x4 = x.data if batched else x.data[np.newaxis]
    out = ker.conv2d_forward(x4, kernel.data, bias.data)
    if not batched:
        out = out[0]

    def backward(g):
        g4 = g if batched else g[np.newaxis]
        g4 = np.ascontiguousarray(g4)
        if x.requires_grad:
            gx = ker.conv2d_backward_input(g4, kernel.data)
            x._accumulate(gx if batched else gx[0])
        if kernel.requires_grad:
            kernel._accumulate(ker.conv2d_backward_kernel(g4, x4, kh))
        if bias.requires_grad:
            bias._accumulate(ker.conv2d_backward_bias(g4))

    return Tensor._from_op(out, "conv2d", (x, kernel, bias), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Strict 2-d matrix product (M, K) @ (K, N)."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul: operands must be 2-d, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions differ, {a.data.shape[1]} vs {b.data.shape[0]}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor._from_op(out, "matmul", (a, b), backward)


def sigmoid(a: Tensor) -> Tensor:
    """Logistic function, computed branch-wise so exp never overflows."""
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        a._accumulate(g * out * (1.0 - out))

    return Tensor._from_op(out, "sigmoid", (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - out * out))

    return Tensor._from_op(out, "tanh", (a,), backward)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(
            f"reshape: cannot view {a.data.shape} as {tuple(shape)}")
    out = a.data.reshape(shape).copy()

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    return Tensor._from_op(out, "reshape", (a,), backward)


def mul_map(x: Tensor, m: Tensor) -> Tensor:
    """Weight every grid in x by one per-cell map m.

    x has shape (..., H, W) with any number of leading batch axes; m has
    shape (H, W) and is applied to each trailing grid.  The map gradient
    reduces over the leading axes in index order, so results do not depend
    on scheduling.
    """
    if m.data.ndim != 2:
        raise ShapeError(f"mul_map: map must be 2-d, got {m.data.shape}")
    if x.data.ndim < 2 or x.data.shape[-2:] != m.data.shape:
        raise ShapeError(
            f"mul_map: trailing grid {x.data.shape} does not match map {m.data.shape}")
    out = x.data * m.data

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * m.data)
        if m.requires_grad:
            lead = tuple(range(g.ndim - 2))
            m._accumulate(np.sum(g * x.data, axis=lead) if lead else g * x.data)

    return Tensor._from_op(out, "mul_map", (x, m), backward)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-H row vector to every row of a (B, H) matrix."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"add_bias: need (B, H) plus (H,), got {x.data.shape} and {b.data.shape}")
    out = x.data + b.data

    def backward(g):
        if x.requires_grad:
            x._accumulate(g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))

    return Tensor._from_op(out, "add_bias", (x, b), backward)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of elementwise squared differences, as a scalar tensor.

    The mean (not the sum) keeps the loss scale independent of grid size
    and batch size; the sum is recoverable by multiplying with the element
    count.
    """
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"mse_loss: shapes {pred.data.shape} and {target.data.shape} differ")
    with np.errstate(over="ignore", invalid="ignore"):
        diff = pred.data - target.data
        out = np.mean(diff * diff).reshape(())
    n = diff.size

    def backward(g):
        scaled = (2.0 / n) * g * diff
        if pred.requires_grad:
            pred._accumulate(scaled)
        if target.requires_grad:
            target._accumulate(-scaled)

    return Tensor._from_op(out, "mse_loss", (pred, target), backward)
