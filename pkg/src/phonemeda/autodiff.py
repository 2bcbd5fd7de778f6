"""A small reverse-mode autodiff engine over numpy arrays.

Only the operations the recognition network needs are provided. Each op builds
an output :class:`Tensor` holding a closure that pushes the output gradient to
its inputs; :func:`backward` runs those closures in reverse topological order.
"""

from __future__ import annotations

import builtins
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NonScalarLoss, ShapeMismatch

LEAKY_SLOPE = 0.01
BN_MOMENTUM = 0.1
BN_EPS = 1e-5


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_owned", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._owned = False
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None
        self._owned = False

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g
            self._owned = False
        else:
            self.grad = self.grad + g
            self._owned = True

    def _accumulate_slice(self, index, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
            self._owned = True
        elif not self._owned:
            self.grad = np.array(self.grad, copy=True)
            self._owned = True
        self.grad[index] += g

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __mul__ = lambda self, other: hadamard(self, other)
    __rmul__ = lambda self, other: hadamard(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: scale(self, -1.0)
    __sub__ = lambda self, other: add(self, scale(_as_tensor(other, self.dtype), -1.0))


def _as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._owned = False
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None


# Elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward, "add")


def hadamard(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("hadamard", a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward, "hadamard")


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = a.data.dtype.type(c)

    def backward(g):
        a._accumulate(g * c)

    return _make(a.data * c, (a,), backward, "scale")


def leaky_relu(a: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    mask = a.data > 0
    slope = a.dtype.type(slope)

    def backward(g):
        a._accumulate(np.where(mask, g, g * slope))

    return _make(np.where(mask, a.data, a.data * slope), (a,), backward, "leaky_relu")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1 - y * y))

    return _make(y, (a,), backward, "tanh")


def sigmoid(a: Tensor) -> Tensor:
    half = a.data.dtype.type(0.5)
    y = half * (np.tanh(half * a.data) + 1)

    def backward(g):
        a._accumulate(g * y * (1 - y))

    return _make(y, (a,), backward, "sigmoid")


def log(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g / a.data)

    return _make(np.log(a.data), (a,), backward, "log")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax with the per-slice maximum subtracted first."""
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    # sequential sum of sorted terms: exact permutation equivariance, and unlike
    # np.sum the rounding does not depend on memory alignment
    total = np.cumsum(np.sort(e, axis=axis), axis=axis)
    y = e / np.take(total, [-1], axis=axis)

    def backward(g):
        a._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (a,), backward, "softmax")


# Shape ops -----------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """``np.matmul`` semantics for operands of rank >= 2."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul: operands need rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(
            f"matmul: inner dims differ, {a.shape} @ {b.shape} ({a.shape[-1]} != {b.shape[-2]})"
        )
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeMismatch(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make(out, (a, b), backward, "matmul")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeMismatch(f"transpose: {axes} is not a permutation of {a.ndim} axes")
    inverse = tuple(np.argsort(axes))

    def backward(g):
        a._accumulate(np.transpose(g, inverse))

    return _make(np.transpose(a.data, axes), (a,), backward, "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _make(out, (a,), backward, "reshape")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeMismatch(f"concat: shape {t.shape} incompatible with {ref} on axis {axis}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def split(a: Tensor, sections, axis: int = -1, squeeze: bool = False) -> list[Tensor]:
    """Split along ``axis`` into equal parts (int) or parts of the given sizes.

    With ``squeeze`` each part is a single index along ``axis`` and that axis is
    dropped, which is how sequences are unstacked into time steps.
    """
    ax = axis % a.ndim
    n = a.shape[ax]
    if squeeze:
        sizes = [1] * n
    elif isinstance(sections, int):
        if sections <= 0 or n % sections:
            raise ShapeMismatch(f"split: axis of length {n} does not divide into {sections}")
        sizes = [n // sections] * sections
    else:
        sizes = list(sections)
        if builtins.sum(sizes) != n:
            raise ShapeMismatch(f"split: sizes {sizes} do not sum to axis length {n}")
    outs = []
    lo = 0
    for size in sizes:
        idx = [slice(None)] * a.ndim
        idx[ax] = lo if squeeze else slice(lo, lo + size)
        idx = tuple(idx)

        def backward(g, idx=idx):
            a._accumulate_slice(idx, g)

        outs.append(_make(a.data[idx], (a,), backward, "split"))
        lo += size
    return outs


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(np.asarray(out), (a,), backward, "sum")


# Layers --------------------------------------------------------------------

def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           padding: tuple[int, int] = (0, 0)) -> Tensor:
    """Stride-1 2-D convolution (cross-correlation).

    ``x`` is ``[batch, c_in, height, width]``, ``kernel`` is
    ``[k_h, k_w, c_in, c_out]``, ``padding`` is zero padding ``(rows, cols)``.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeMismatch(f"conv2d: need 4-D input and kernel, got {x.shape} and {kernel.shape}")
    kh, kw, cin, cout = kernel.shape
    if x.shape[1] != cin:
        raise ShapeMismatch(f"conv2d: input has {x.shape[1]} channels, kernel expects {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeMismatch(f"conv2d: bias shape {bias.shape} != ({cout},)")
    ph, pw = padding
    b, _, h, w = x.shape
    ho, wo = h + 2 * ph - kh + 1, w + 2 * pw - kw + 1
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"conv2d: kernel {kh}x{kw} larger than padded input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    acc = np.zeros((b, ho, wo, cout), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            acc += np.tensordot(xp[:, :, i:i + ho, j:j + wo], kernel.data[i, j], axes=([1], [0]))
    out = acc.transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[:, None, None]
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        gt = g.transpose(0, 2, 3, 1)
        if kernel.requires_grad:
            gk = np.empty_like(kernel.data)
            for i in range(kh):
                for j in range(kw):
                    gk[i, j] = np.tensordot(xp[:, :, i:i + ho, j:j + wo], gt,
                                            axes=([0, 2, 3], [0, 1, 2]))
            kernel._accumulate(gk)
        if x.requires_grad:
            gxp = np.zeros((b, h + 2 * ph, w + 2 * pw, cin), dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + ho, j:j + wo] += np.tensordot(gt, kernel.data[i, j], axes=([3], [1]))
            x._accumulate(gxp[:, ph:ph + h, pw:pw + w].transpose(0, 3, 1, 2))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))

    return _make(np.ascontiguousarray(out), parents, backward, "conv2d")


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = BN_MOMENTUM,
               eps: float = BN_EPS) -> Tensor:
    """Per-channel normalization over every axis except axis 1.

    In training mode batch statistics are used and the running buffers are
    updated in place (unbiased variance, as in common frameworks). Otherwise
    the running buffers are used.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch(f"batch_norm: gamma/beta must be ({c},), got {gamma.shape}, {beta.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    if training:
        n = x.data.size // c
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        unbiased = var * (n / max(n - 1, 1))
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        n = None
        mean, var = running_mean, running_var
    invstd = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mean.reshape(bshape).astype(x.dtype)) * invstd.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if x.requires_grad:
            gx_hat = g * gamma.data.reshape(bshape)
            if training:
                s1 = gx_hat.sum(axis=axes, keepdims=True)
                s2 = (gx_hat * xhat).sum(axis=axes, keepdims=True)
                gx = (gx_hat - s1 / n - xhat * s2 / n) * invstd.reshape(bshape)
            else:
                gx = gx_hat * invstd.reshape(bshape)
            x._accumulate(gx)

    return _make(out, (x, gamma, beta), backward, "batch_norm")


# Graph ---------------------------------------------------------------------

def topological_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Sequence[Tensor] = ()) -> None:
    """Populate ``.grad`` on every tensor that ``loss`` depends on.

    Tensors in ``params`` that the loss does not reach get zero gradients.
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"backward needs a scalar loss, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topological_order(loss)):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


OPS: dict[str, Callable] = {
    "matmul": matmul,
    "conv2d": conv2d,
    "add": add,
    "hadamard": hadamard,
    "concat": lambda *ts, axis=-1: concat(ts, axis=axis),
    "split": split,
    "leaky_relu": leaky_relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "batch_norm": batch_norm,
    "transpose": transpose,
    "reshape": reshape,
    "sum": sum,
    "scale": scale,
    "log": log,
}


def apply(op_kind: str, *inputs, **attrs):
    """Dispatch an op by name, e.g. ``apply("softmax", t, axis=-1)``."""
    try:
        fn = OPS[op_kind]
    except KeyError:
        raise ValueError(f"unknown op {op_kind!r}") from None
    return fn(*inputs, **attrs)


# Gradient checking ---------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    tol: float
    worst: tuple[int, tuple[int, ...]] | None = None

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], step: float = 1e-5,
               tol: float = 1e-4, max_coords: int = 200, seed: int = 0,
               abs_floor: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients of scalar ``fn(*tensors)`` to central differences.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, abs_floor)``. The
    floor sits above the float64 difference noise (about ``eps * |f| / step``)
    so near-zero gradients are judged absolutely. Inputs with more than
    ``max_coords`` entries are sampled.
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    tensors = [Tensor(x.copy(), requires_grad=True) for x in arrays]
    out = fn(*tensors)
    backward(out, tensors)
    analytic = [t.grad for t in tensors]

    def evaluate(k, flat_index, delta):
        xs = [x.copy() for x in arrays]
        xs[k].reshape(-1)[flat_index] += delta
        return float(fn(*[Tensor(x) for x in xs]).data)

    rng = np.random.default_rng(seed)
    worst_err, worst, count = 0.0, None, 0
    for k, x in enumerate(arrays):
        coords = np.arange(x.size)
        if x.size > max_coords:
            coords = np.sort(rng.choice(x.size, size=max_coords, replace=False))
        for ci in coords:
            num = (evaluate(k, ci, step) - evaluate(k, ci, -step)) / (2 * step)
            ana = float(analytic[k].reshape(-1)[ci])
            err = abs(ana - num) / max(abs(ana), abs(num), abs_floor)
            count += 1
            if err > worst_err or worst is None:
                worst_err = max(err, worst_err)
                worst = (k, tuple(int(v) for v in np.unravel_index(ci, x.shape)))
    return GradCheckReport(worst_err, count, tol, worst)
