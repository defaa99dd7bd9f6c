"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every primitive builds a fresh graph node holding a closure that maps the
upstream gradient to gradients for its parents. ``Tensor.backward`` walks the
graph in reverse topological order, visiting each node once.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

__all__ = [
    "ContractViolation",
    "Tensor",
    "add",
    "concat_channels",
    "concat_cols",
    "conv1d",
    "conv2d",
    "corrupt_gradient",
    "matmul",
    "maxpool2d",
    "mean",
    "mse",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "scale",
    "slice_cols",
    "softmax_rows",
    "sub",
    "sum",
    "switch_trace",
    "transpose",
    "unfold_sequence",
    "bilinear_upsample2x",
]


class ContractViolation(ValueError):
    """An operation was called outside its documented preconditions."""


_grad_enabled = True
# op name -> factor applied to that op's parent gradients (negative-control hook)
_corruptions: dict[str, float] = {}


@contextlib.contextmanager
def no_grad():
    """Build no graph edges inside the block (inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


_switch_trace: list | None = None


@contextlib.contextmanager
def switch_trace():
    """Collect the on/off pattern of every ReLU and max-pool choice made inside the block.

    Two forward passes with equal traces lie on the same smooth piece of the
    network function, which is what finite-difference checks need.
    """
    global _switch_trace
    prev = _switch_trace
    _switch_trace = []
    try:
        yield _switch_trace
    finally:
        _switch_trace = prev


@contextlib.contextmanager
def corrupt_gradient(op: str, factor: float = 1.01):
    """Scale the analytic gradient emitted by ``op``; used to check that gradcheck catches bugs."""
    _corruptions[op] = factor
    try:
        yield
    finally:
        _corruptions.pop(op, None)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = ""
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        tag = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar over the primitives below
    def __add__(self, other):
        return add(self, _as_tensor(other, self.shape))

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.shape))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf requiring grad."""
        if self.data.size != 1:
            raise ContractViolation(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractViolation("backward() called on a tensor with no graph")
        order = _toposort(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            factor = _corruptions.get(node._op)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if factor is not None:
                    pg = pg * factor
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _toposort(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _as_tensor(x, shape) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.broadcast_to(np.asarray(x, dtype=np.float64), shape))


def _node(data: np.ndarray, parents: Iterable[Tensor], op: str, backward) -> Tensor:
    parents = tuple(parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = ""
    out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
        out._op = op
    else:
        out._parents = ()
        out._backward = None
        out._op = ""
    return out


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ContractViolation(msg)


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, f"add: shape mismatch {a.shape} vs {b.shape}")
    return _node(a.data + b.data, (a, b), "add", lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, f"sub: shape mismatch {a.shape} vs {b.shape}")
    return _node(a.data - b.data, (a, b), "sub", lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, f"mul: shape mismatch {a.shape} vs {b.shape}")
    return _node(a.data * b.data, (a, b), "mul", lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.data * c, (a,), "scale", lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    if _switch_trace is not None:
        _switch_trace.append(np.packbits(mask).tobytes())
    return _node(np.where(mask, a.data, 0.0), (a,), "relu", lambda g: (g * mask,))


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return _node(np.array(a.data.sum()), (a,), "sum", lambda g: (np.full(shape, float(g)),))


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return _node(np.array(a.data.mean()), (a,), "mean", lambda g: (np.full(shape, float(g) / n),))


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared elementwise error, fused for speed."""
    _check(pred.shape == target.shape, f"mse: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        gp = diff * (2.0 * float(g) / n)
        return gp, -gp

    return _node(np.array(np.mean(diff * diff)), (pred, target), "mse", backward)


# ---------------------------------------------------------------- shape ops

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    _check(int(np.prod(shape)) == a.size, f"reshape: cannot view {a.shape} as {shape}")
    old = a.shape
    return _node(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(old),))


def transpose(a: Tensor) -> Tensor:
    _check(a.ndim == 2, f"transpose: expected a matrix, got shape {a.shape}")
    return _node(np.ascontiguousarray(a.data.T), (a,), "transpose", lambda g: (g.T,))


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Join (C_i, H, W) maps along the channel axis."""
    _check(len(tensors) > 0, "concat_channels: nothing to concatenate")
    spatial = tensors[0].shape[1:]
    for t in tensors:
        _check(t.ndim == 3 and t.shape[1:] == spatial,
               f"concat_channels: spatial mismatch {t.shape[1:]} vs {spatial}")
    splits = np.cumsum([t.shape[0] for t in tensors])[:-1]
    data = np.concatenate([t.data for t in tensors], axis=0)
    return _node(data, tensors, "concat_channels", lambda g: tuple(np.split(g, splits, axis=0)))


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    """Join (n, d_i) matrices side by side."""
    _check(len(tensors) > 0, "concat_cols: nothing to concatenate")
    n = tensors[0].shape[0]
    for t in tensors:
        _check(t.ndim == 2 and t.shape[0] == n, f"concat_cols: row mismatch {t.shape} vs n={n}")
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]
    data = np.concatenate([t.data for t in tensors], axis=1)
    return _node(data, tensors, "concat_cols", lambda g: tuple(np.split(g, splits, axis=1)))


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    _check(a.ndim == 2 and 0 <= start < stop <= a.shape[1],
           f"slice_cols: bad range [{start}, {stop}) for shape {a.shape}")
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _node(np.ascontiguousarray(a.data[:, start:stop]), (a,), "slice_cols", backward)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check(a.ndim == 2 and b.ndim == 2 and a.shape[1] == b.shape[0],
           f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _node(a.data @ b.data, (a, b), "matmul", lambda g: (g @ b.data.T, a.data.T @ g))


def softmax_rows(a: Tensor) -> Tensor:
    _check(a.ndim == 2, f"softmax_rows: expected a matrix, got shape {a.shape}")
    _check(not np.isnan(a.data).any(), "softmax_rows: NaN in input")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _node(s, (a,), "softmax_rows", backward)


# ---------------------------------------------------------------- convolution family

def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlate a (C_in, H, W) map with (C_out, C_in, k, k) filters."""
    _check(x.ndim == 3, f"conv2d: input must be (C, H, W), got {x.shape}")
    _check(weight.ndim == 4 and weight.shape[2] == weight.shape[3],
           f"conv2d: weight must be (C_out, C_in, k, k), got {weight.shape}")
    c_out, c_in, k, _ = weight.shape
    _check(k % 2 == 1, f"conv2d: kernel size must be odd, got {k}")
    _check(stride >= 1 and pad >= 0, f"conv2d: bad stride={stride} / pad={pad}")
    _check(x.shape[0] == c_in, f"conv2d: input has {x.shape[0]} channels, weight expects {c_in}")
    _check(bias.shape == (c_out,), f"conv2d: bias shape {bias.shape} != ({c_out},)")
    _, h, w = x.shape
    span_h, span_w = h + 2 * pad - k, w + 2 * pad - k
    _check(span_h >= 0 and span_w >= 0, f"conv2d: kernel {k} larger than padded input {x.shape}")
    _check(span_h % stride == 0 and span_w % stride == 0,
           f"conv2d: output size not integral for input {x.shape}, k={k}, stride={stride}, pad={pad}")
    ho, wo = span_h // stride + 1, span_w // stride + 1

    cols = kernels.im2col(np.ascontiguousarray(x.data), k, stride, pad)
    wmat = weight.data.reshape(c_out, -1)
    out = (wmat @ cols + bias.data[:, None]).reshape(c_out, ho, wo)
    in_shape = x.shape

    def backward(g):
        g2 = g.reshape(c_out, -1)
        gw = (g2 @ cols.T).reshape(weight.shape)
        gb = g2.sum(axis=1)
        gx = kernels.col2im(np.ascontiguousarray(wmat.T @ g2), in_shape, k, stride, pad) \
            if x.requires_grad else None
        return gx, gw, gb

    return _node(out, (x, weight, bias), "conv2d", backward)


def unfold_sequence(x: np.ndarray, k: int) -> np.ndarray:
    """Rows of the result are concat(x[i-m], ..., x[i+m]) with zero rows past the ends."""
    n, d = x.shape
    m = (k - 1) // 2
    padded = np.zeros((n + 2 * m, d))
    padded[m:m + n] = x
    idx = np.arange(n)[:, None] + np.arange(k)[None, :]
    return padded[idx].reshape(n, k * d)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Length-preserving 1-D convolution over the rows of an (n, d_in) sequence.

    ``weight`` is (d_out, d_in, k) with odd ``k``; position ``i`` mixes rows
    ``i - (k-1)/2 .. i + (k-1)/2``, reading zeros outside ``[0, n)``.
    """
    _check(x.ndim == 2, f"conv1d: input must be (n, d_in), got {x.shape}")
    _check(weight.ndim == 3, f"conv1d: weight must be (d_out, d_in, k), got {weight.shape}")
    d_out, d_in, k = weight.shape
    _check(k % 2 == 1, f"conv1d: kernel size must be odd, got {k}")
    _check(x.shape[1] == d_in, f"conv1d: input width {x.shape[1]} != weight d_in {d_in}")
    _check(bias.shape == (d_out,), f"conv1d: bias shape {bias.shape} != ({d_out},)")
    n = x.shape[0]
    m = (k - 1) // 2
    cols = unfold_sequence(x.data, k)  # (n, k*d_in), block t holds x[i + t - m]
    wmat = weight.data.transpose(2, 1, 0).reshape(k * d_in, d_out)
    out = cols @ wmat + bias.data

    def backward(g):
        gw = (cols.T @ g).reshape(k, d_in, d_out).transpose(2, 1, 0)
        gb = g.sum(axis=0)
        gx = None
        if x.requires_grad:
            gcols = (g @ wmat.T).reshape(n, k, d_in)
            padded = np.zeros((n + 2 * m, d_in))
            for t in range(k):
                padded[t:t + n] += gcols[:, t]
            gx = padded[m:m + n]
        return gx, np.ascontiguousarray(gw), gb

    return _node(out, (x, weight, bias), "conv1d", backward)


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; ties route gradient to the first cell in row-major order."""
    _check(x.ndim == 3, f"maxpool2d: input must be (C, H, W), got {x.shape}")
    _check(x.shape[1] % 2 == 0 and x.shape[2] % 2 == 0,
           f"maxpool2d: spatial dims must be even, got {x.shape[1:]}")
    out, idx = kernels.maxpool2x2(np.ascontiguousarray(x.data))
    if _switch_trace is not None:
        _switch_trace.append(idx.astype(np.uint8).tobytes())
    return _node(out, (x,), "maxpool2d", lambda g: (kernels.maxpool2x2_backward(np.ascontiguousarray(g), idx),))


def bilinear_upsample2x(x: Tensor) -> Tensor:
    """Double H and W with bilinear interpolation (align_corners=False)."""
    _check(x.ndim == 3 and x.shape[1] >= 1 and x.shape[2] >= 1,
           f"bilinear_upsample2x: input must be (C, H, W), got {x.shape}")
    out = kernels.upsample2x(np.ascontiguousarray(x.data))
    return _node(out, (x,), "bilinear_upsample2x",
                 lambda g: (kernels.upsample2x_backward(np.ascontiguousarray(g)),))
