"""Reverse-mode autodiff over numpy arrays.

Only the operations the ADRD network needs are provided. Every op records a
closure on its output that maps the upstream gradient to one gradient per
input; :meth:`Tensor.backward` replays those closures in reverse topological
order.

Images use the batch-major ``N, C, H, W`` layout. Convolution is
cross-correlation (the kernel is not flipped), so a kernel stored in a
checkpoint means the same thing everywhere.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block (inference, finite differences)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A real array that can take part in reverse-mode differentiation."""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numel(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor) and other.shape == self.shape:
            return hadamard(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf.

        Repeated calls without zeroing add up, as for any leaf reached by
        several paths within a single call.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


class Parameter(Tensor):
    """A learnable leaf tensor with a stable name used for checkpointing."""

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(np.array(data, dtype=dtype), requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def _topological_order(root: Tensor) -> list[Tensor]:
    # iterative post-order; deep networks overflow the recursion limit
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _scalar_like(value, like: np.ndarray) -> np.ndarray:
    return np.asarray(value, dtype=like.dtype).reshape(like.shape)


# ---------------------------------------------------------------------------
# raw convolution kernels (numpy in, numpy out)


def _conv_out_extent(size: int, k: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - k
    if span < 0 or span % stride:
        raise ValueError(
            f"conv2d: extent {size} with kernel {k}, stride {stride}, padding {padding} "
            "does not give an integral output size"
        )
    return span // stride + 1


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Windows of the padded input as an ``N, C, Ho, Wo, kh, kw`` view."""
    xp = _pad(x, padding)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d_raw(x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    kh, kw = w.shape[2:]
    cols = _im2col(x, kh, kw, stride, padding)
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, Cout
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_input_adjoint(
    g: np.ndarray, w: np.ndarray, stride: int, padding: int, in_hw: tuple[int, int]
) -> np.ndarray:
    """Adjoint of :func:`conv2d_raw` with respect to its input (col2im)."""
    n, _, ho, wo = g.shape
    _, c, kh, kw = w.shape
    h, wd = in_hw
    cols = np.tensordot(g, w, axes=([1], [0]))  # N, Ho, Wo, C, kh, kw
    cols = cols.transpose(0, 3, 1, 2, 4, 5)
    xp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=np.result_type(g, w))
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[..., i, j]
    return np.ascontiguousarray(xp[:, :, padding : padding + h, padding : padding + wd])


def conv2d_weight_adjoint(
    x: np.ndarray, g: np.ndarray, kshape: tuple[int, int], stride: int, padding: int
) -> np.ndarray:
    cols = _im2col(x, kshape[0], kshape[1], stride, padding)
    return np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))  # Cout, Cin, kh, kw


# ---------------------------------------------------------------------------
# differentiable ops


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, padding: int = 0, stride: int = 1) -> Tensor:
    """2-D cross-correlation of ``x [N,Cin,H,W]`` with ``kernel [Cout,Cin,kh,kw]``."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError("conv2d expects 4-d input and kernel")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    if x.shape[1] != kernel.shape[1]:
        raise ValueError(f"conv2d: input has {x.shape[1]} channels, kernel expects {kernel.shape[1]}")
    h, w = x.shape[2:]
    kh, kw = kernel.shape[2:]
    _conv_out_extent(h, kh, stride, padding)
    _conv_out_extent(w, kw, stride, padding)

    out = conv2d_raw(x.data, kernel.data, stride, padding)
    parents: tuple[Tensor, ...] = (x, kernel)
    if bias is not None:
        if bias.shape != (kernel.shape[0],):
            raise ValueError(f"conv2d: bias shape {bias.shape} != ({kernel.shape[0]},)")
        out += bias.data.reshape(1, -1, 1, 1)
        parents = parents + (bias,)

    def backward(g):
        gx = conv2d_input_adjoint(g, kernel.data, stride, padding, (h, w)) if x.requires_grad else None
        gk = conv2d_weight_adjoint(x.data, g, (kh, kw), stride, padding) if kernel.requires_grad else None
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2, 3))

    return _result(out, parents, backward)


def conv_transpose2d(
    x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """Transposed convolution with ``kernel [Cin,Cout,kh,kw]``.

    The forward pass is exactly the input-gradient of :func:`conv2d` run with
    the same kernel and geometry, so output extent is
    ``(H - 1) * stride - 2 * padding + kh``.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError("conv_transpose2d expects 4-d input and kernel")
    if x.shape[1] != kernel.shape[0]:
        raise ValueError(
            f"conv_transpose2d: input has {x.shape[1]} channels, kernel expects {kernel.shape[0]}"
        )
    h, w = x.shape[2:]
    kh, kw = kernel.shape[2:]
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (w - 1) * stride - 2 * padding + kw
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv_transpose2d: non-positive output extent ({ho}, {wo})")

    out = conv2d_input_adjoint(x.data, kernel.data, stride, padding, (ho, wo))
    parents: tuple[Tensor, ...] = (x, kernel)
    if bias is not None:
        if bias.shape != (kernel.shape[1],):
            raise ValueError(f"conv_transpose2d: bias shape {bias.shape} != ({kernel.shape[1]},)")
        out += bias.data.reshape(1, -1, 1, 1)
        parents = parents + (bias,)

    def backward(g):
        gx = conv2d_raw(g, kernel.data, stride, padding) if x.requires_grad else None
        # role swap: g is the conv "input", x the conv "upstream"
        gk = conv2d_weight_adjoint(g, x.data, (kh, kw), stride, padding) if kernel.requires_grad else None
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2, 3))

    return _result(out, parents, backward)


def nearest_upsample(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ValueError("nearest_upsample: factor must be >= 1")
    if x.ndim != 4:
        raise ValueError("nearest_upsample expects a 4-d tensor")
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    n, c, h, w = x.shape

    def backward(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _result(out, (x,), backward)


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """``x`` where ``x > 0``, else ``slope * x``; derivative at 0 is taken as 1."""
    s = slope.data
    pos = x.data >= 0
    out = np.where(x.data > 0, x.data, s * x.data)

    def backward(g):
        gx = np.where(pos, g, s * g)
        gs = _scalar_like(np.sum(np.where(pos, 0, x.data * g)), s)
        return gx, gs

    return _result(out, (x, slope), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)

    def backward(g):
        return (g * mask,)

    return _result(out, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward(g):
        return (g * (1 - y * y),)

    return _result(y, (x,), backward)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "hadamard")

    def backward(g):
        return g * b.data, g * a.data

    return _result(a.data * b.data, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def backward(g):
        return g, g

    return _result(a.data + b.data, (a, b), backward)


def scale(a: Tensor, s) -> Tensor:
    """Multiply every element of ``a`` by a scalar.

    ``s`` is either a plain number (constant) or a one-element Tensor, in which
    case it receives a gradient.
    """
    if isinstance(s, Tensor):
        if s.data.size != 1:
            raise ValueError(f"scale: scalar tensor expected, got shape {s.shape}")
        sv = s.data.reshape(())

        def backward(g):
            return g * sv, _scalar_like(np.sum(g * a.data), s.data)

        return _result(a.data * sv, (a, s), backward)

    sf = float(s)

    def backward_const(g):
        return (g * sf,)

    return _result(a.data * sf, (a,), backward_const)


def abs_diff(a: Tensor, b: Tensor) -> Tensor:
    """``|a - b|`` with subgradient 0 where ``a == b``."""
    _check_same_shape(a, b, "abs_diff")
    d = a.data - b.data
    sign = np.sign(d)

    def backward(g):
        gs = g * sign
        return gs, -gs

    return _result(np.abs(d), (a, b), backward)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    tensors = tuple(tensors)  # the caller may keep appending to its list
    if not tensors:
        raise ValueError("concat_channels: empty input")
    ref = tensors[0].shape
    for t in tensors:
        if t.ndim != 4 or (t.shape[0], t.shape[2], t.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ValueError(f"concat_channels: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[1] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=1)
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return [g[:, bounds[i] : bounds[i + 1]] for i in range(len(tensors))]

    return _result(out, tensors, backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.shape[1]:
        raise ValueError(f"slice_channels: bad range [{start}, {stop}) for {x.shape[1]} channels")

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return _result(x.data[:, start:stop].copy(), (x,), backward)


def tsum(x: Tensor) -> Tensor:
    def backward(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(x.data.sum(), dtype=x.dtype), (x,), backward)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean of squared differences over every element."""
    target = _as_tensor(target)
    _check_same_shape(pred, target, "mse_loss")
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        gp = (2.0 / n) * diff * g
        return gp, -gp

    return _result(np.asarray(np.mean(diff * diff), dtype=diff.dtype), (pred, target), backward)
