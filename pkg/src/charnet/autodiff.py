"""Dense float64 tensors with reverse-mode differentiation.

Every operation runs eagerly on numpy arrays and records itself on a tape
(parent links plus a backward closure), so calling ``backward()`` on a
scalar replays the tape in reverse topological order. Everything is 64-bit:
the networks here are small and the finite-difference checks need the
precision.

The primitive set is fixed: matmul, add, subtract, multiply (all with
broadcasting), scalar scaling, exp, relu, sigmoid, concat, max/mean/sum
reductions, reshape, batch normalization, inverted dropout, and the two
loss reductions (mean squared error, binary cross-entropy).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

__all__ = [
    "Tensor",
    "RunningStats",
    "concat",
    "batchnorm",
    "dropout",
    "mse_loss",
    "bce_loss",
]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A float64 array plus the tape links needed for backprop."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output."""
        if self.data.size != 1:
            raise InputError(f"backward: output must be scalar, got shape {self.data.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic (numpy broadcasting; gradients are summed
    #    back down to each operand's shape) --

    def __add__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data + other.data, _parents=(self, other))

        def backward(grad):
            if self.requires_grad:
                self._accumulate(_unbroadcast(grad, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(grad, other.data.shape))

        out._backward = backward
        return out

    def __sub__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data - other.data, _parents=(self, other))

        def backward(grad):
            if self.requires_grad:
                self._accumulate(_unbroadcast(grad, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-grad, other.data.shape))

        out._backward = backward
        return out

    def __rsub__(self, other):
        return _as_tensor(other) - self

    def __mul__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data * other.data, _parents=(self, other))

        def backward(grad):
            if self.requires_grad:
                self._accumulate(_unbroadcast(grad * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(grad * self.data, other.data.shape))

        out._backward = backward
        return out

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def scale(self, factor: float) -> "Tensor":
        """Multiply by a python scalar."""
        factor = float(factor)
        out = Tensor(self.data * factor, _parents=(self,))

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad * factor)

        out._backward = backward
        return out

    def __truediv__(self, factor: float):
        return self.scale(1.0 / float(factor))

    def matmul(self, other: "Tensor") -> "Tensor":
        """Matrix product; left operand may be 2-D or stacked 3-D, right is 2-D."""
        other = _as_tensor(other)
        a, b = self.data, other.data
        if b.ndim != 2 or a.ndim not in (2, 3) or a.shape[-1] != b.shape[0]:
            raise InputError(
                f"matmul: incompatible shapes {a.shape} @ {b.shape}"
            )
        out = Tensor(a @ b, _parents=(self, other))

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad @ b.T)
            if other.requires_grad:
                other._accumulate(a.reshape(-1, a.shape[-1]).T @ grad.reshape(-1, grad.shape[-1]))

        out._backward = backward
        return out

    __matmul__ = matmul

    # -- nonlinearities --

    def exp(self) -> "Tensor":
        value = np.exp(self.data)
        out = Tensor(value, _parents=(self,))

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad * value)

        out._backward = backward
        return out

    def relu(self) -> "Tensor":
        mask = self.data > 0.0
        # np.maximum (unlike np.where on the mask) lets NaN through, so a
        # poisoned activation surfaces as a non-finite loss instead of
        # being silently zeroed.
        out = Tensor(np.maximum(self.data, 0.0), _parents=(self,))

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad * mask)

        out._backward = backward
        return out

    def sigmoid(self) -> "Tensor":
        # Numerically stable split avoids exp overflow for large |x|.
        x = self.data
        value = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        out = Tensor(value, _parents=(self,))

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad * value * (1.0 - value))

        out._backward = backward
        return out

    # -- reductions and shape ops --

    def sum(self, axis: int | None = None) -> "Tensor":
        out = Tensor(self.data.sum(axis=axis), _parents=(self,))

        def backward(grad):
            if self.requires_grad:
                if axis is None:
                    self._accumulate(np.broadcast_to(grad, self.data.shape).copy())
                else:
                    self._accumulate(np.broadcast_to(np.expand_dims(grad, axis), self.data.shape).copy())

        out._backward = backward
        return out

    def mean(self, axis: int | None = None) -> "Tensor":
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis).scale(1.0 / count)

    def max(self, axis: int) -> "Tensor":
        """Max-reduce over one axis; ties route gradient to the lowest index."""
        value = self.data.max(axis=axis)
        argmax = np.expand_dims(self.data.argmax(axis=axis), axis)
        out = Tensor(value, _parents=(self,))

        def backward(grad):
            if self.requires_grad:
                scatter = np.zeros_like(self.data)
                np.put_along_axis(scatter, argmax, np.expand_dims(grad, axis), axis)
                self._accumulate(scatter)

        out._backward = backward
        return out

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape), _parents=(self,))

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad.reshape(self.data.shape))

        out._backward = backward
        return out


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def concat(tensors, axis: int = -1) -> Tensor:
    """Concatenate along one axis (the heads join features on the last)."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise InputError("concat: need at least one tensor")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), _parents=tuple(tensors))
    extents = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + extents)

    def backward(grad):
        moved = np.moveaxis(grad, axis, 0)
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t._accumulate(np.moveaxis(moved[lo:hi], 0, axis))

    out._backward = backward
    return out


@dataclass
class RunningStats:
    """Exponential-moving-average statistics owned by one batchnorm layer."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def initial(cls, width: int) -> "RunningStats":
        return cls(mean=np.zeros(width), var=np.ones(width))

    def copy(self) -> "RunningStats":
        return RunningStats(self.mean.copy(), self.var.copy())


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running: RunningStats,
    mode: str,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize over all leading axes, features on the last axis.

    Train mode uses (biased) batch statistics, updates `running` in place,
    and backpropagates through the statistics. Infer mode normalizes with
    the running statistics.
    """
    width = x.data.shape[-1]
    if gamma.data.shape != (width,) or beta.data.shape != (width,):
        raise InputError(
            f"batchnorm: scale/shift shape {gamma.data.shape} does not match feature width {width}"
        )
    if mode not in ("train", "infer"):
        raise InputError(f"batchnorm: unknown mode {mode!r}")
    axes = tuple(range(x.data.ndim - 1))
    if mode == "infer":
        inv = 1.0 / np.sqrt(running.var + eps)
        xhat = (x.data - running.mean) * inv
        out = Tensor(xhat * gamma.data + beta.data, _parents=(x, gamma, beta))

        def backward_infer(grad):
            if x.requires_grad:
                x._accumulate(grad * gamma.data * inv)
            if gamma.requires_grad:
                gamma._accumulate((grad * xhat).sum(axis=axes))
            if beta.requires_grad:
                beta._accumulate(grad.sum(axis=axes))

        out._backward = backward_infer
        return out

    count = x.data.size // width
    mu = x.data.mean(axis=axes)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = Tensor(xhat * gamma.data + beta.data, _parents=(x, gamma, beta))

    running.mean *= 1.0 - momentum
    running.mean += momentum * mu
    running.var *= 1.0 - momentum
    running.var += momentum * var

    def backward_train(grad):
        if gamma.requires_grad:
            gamma._accumulate((grad * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accumulate(grad.sum(axis=axes))
        if x.requires_grad:
            dxhat = grad * gamma.data
            # Gradient through mean and (biased) variance.
            dvar = np.sum(dxhat * centered, axis=axes) * (-0.5) * inv**3
            dmu = np.sum(dxhat, axis=axes) * (-inv)
            dx = dxhat * inv + (2.0 / count) * centered * dvar + dmu / count
            x._accumulate(dx)

    out._backward = backward_train
    return out


def dropout(x: Tensor, rate: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability `rate`, scale survivors."""
    rate = float(rate)
    if not 0.0 <= rate < 1.0:
        raise InputError(f"dropout: rate must be in [0, 1), got {rate}")
    if mode not in ("train", "infer"):
        raise InputError(f"dropout: unknown mode {mode!r}")
    if mode == "infer" or rate == 0.0:
        return x
    if rng is None:
        raise InputError("dropout: train mode needs an rng")
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.data * keep, _parents=(x,))

    def backward(grad):
        if x.requires_grad:
            x._accumulate(grad * keep)

    out._backward = backward
    return out


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error over all entries."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.data.shape:
        raise InputError(f"mse_loss: shape mismatch {pred.data.shape} vs {target.shape}")
    diff = pred.data - target
    out = Tensor(np.mean(diff * diff), _parents=(pred,))

    def backward(grad):
        if pred.requires_grad:
            pred._accumulate(grad * 2.0 * diff / diff.size)

    out._backward = backward
    return out


def bce_loss(pred: Tensor, target: np.ndarray, clamp: float = 1e-7) -> Tensor:
    """Mean binary cross-entropy; probabilities clamped to [clamp, 1-clamp]."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.data.shape:
        raise InputError(f"bce_loss: shape mismatch {pred.data.shape} vs {target.shape}")
    p = np.clip(pred.data, clamp, 1.0 - clamp)
    inside = (pred.data > clamp) & (pred.data < 1.0 - clamp)
    out = Tensor(-np.mean(target * np.log(p) + (1.0 - target) * np.log(1.0 - p)), _parents=(pred,))

    def backward(grad):
        if pred.requires_grad:
            # Zero gradient where the clamp is active.
            dp = np.where(inside, (-target / p + (1.0 - target) / (1.0 - p)) / p.size, 0.0)
            pred._accumulate(grad * dp)

    out._backward = backward
    return out
