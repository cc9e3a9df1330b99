"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the operations needed by the video network and its loss are provided.
Every differentiable op records one node on a thread-local tape when at
least one input requires a gradient; :func:`backward` replays the tape in
reverse and clears it.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import NumericError, ShapeError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class GradTape:
    """Ordered record of differentiable ops executed since the last backward."""

    def __init__(self) -> None:
        self.nodes: list[Tensor] = []
        self.enabled = True

    def record(self, node: "Tensor") -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        for node in self.nodes:
            node._backward = None
            node._parents = ()
        self.nodes = []

    def __len__(self) -> int:
        return len(self.nodes)


_local = threading.local()


def get_tape() -> GradTape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = GradTape()
    return tape


@contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate ops without recording them on the tape."""
    tape = get_tape()
    prev = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_backward", "_parents")

    def __init__(self, data: ArrayLike, requires_grad: bool = False) -> None:
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._parents: tuple[Tensor, ...] = ()

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
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def backward(self) -> None:
        backward(self)

    # operator sugar; all of these route through the module-level ops
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def mean(self) -> "Tensor":
        return mean(self)

    def sum(self) -> "Tensor":
        return sum_(self)


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(
    out: np.ndarray,
    parents: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
    op: str,
) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NumericError(f"non-finite value produced by {op}")
    result = Tensor.__new__(Tensor)
    result.data = out
    result.grad = None
    tape = get_tape()
    if tape.enabled and any(p.requires_grad for p in parents):
        result.requires_grad = True
        result._parents = tuple(parents)
        result._backward = backward_fn
        tape.record(result)
    else:
        result.requires_grad = False
        result._parents = ()
        result._backward = None
    return result


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every tensor that ``loss`` depends on.

    Gradients add up across fan-out. Leaf gradients accumulate into any
    existing ``.grad`` so callers must zero them between steps.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = get_tape()
    if not loss.requires_grad or len(tape) == 0:
        raise ValueError("loss does not depend on any tensor requiring grad")
    # intermediate buffers live only for this pass
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node), None)
        if g is None or node._backward is None:
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            else:
                key = id(parent)
                pending[key] = pending[key] + pg if key in pending else pg
    tape.clear()


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from exc


# -- elementwise -----------------------------------------------------------


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def bw(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def bw(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def bw(g: np.ndarray):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def bw(g: np.ndarray):
        ga = g / b.data
        gb = -g * out / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), bw, "div")


def tanh(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def sin(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _make(np.sin(x.data), (x,), lambda g: (g * np.cos(x.data),), "sin")


def cos(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _make(np.cos(x.data), (x,), lambda g: (-g * np.sin(x.data),), "cos")


def abs_(x: ArrayLike) -> Tensor:
    # subgradient 0 at the kink
    x = as_tensor(x)
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def gelu(x: ArrayLike) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the erf-based normal CDF."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out = x.data * cdf

    def bw(g: np.ndarray):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return _make(out, (x,), bw, "gelu")


# -- reductions and shape ----------------------------------------------------


def sum_(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _make(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def mean(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    n = x.size

    def bw(g: np.ndarray):
        return (np.full(x.shape, float(g) / n),)

    return _make(np.asarray(x.data.mean()), (x,), bw, "mean")


def reshape(x: ArrayLike, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {x.shape} to {tuple(shape)}") from exc
    return _make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


# -- linear algebra ----------------------------------------------------------


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g: np.ndarray):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def linear(x: ArrayLike, weight: ArrayLike, bias: Optional[ArrayLike] = None) -> Tensor:
    """``x @ weight.T + bias`` for 2-D ``x`` of shape (batch, in_features)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    parents: tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
        out = out + bias.data
        parents = (x, weight, bias)

    def bw(g: np.ndarray):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return _make(out, parents, bw, "linear")


# -- convolution and resampling --------------------------------------------


def conv2d(
    x: ArrayLike,
    weight: ArrayLike,
    bias: Optional[ArrayLike] = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """Grouped 2-D cross-correlation (no kernel flip) with zero padding.

    The kernel is applied one tap at a time: each of the ``kh*kw`` offsets
    contributes a shifted view of the padded input times a
    ``(groups, cout/g, cin/g)`` matrix. Depthwise layers reduce to a
    broadcast multiply per tap.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape}, {weight.shape}")
    n, cin, h, w = x.shape
    cout, cg, kh, kw = weight.shape
    if groups < 1 or cin % groups or cout % groups:
        raise ShapeError(f"conv2d: groups={groups} must divide cin={cin} and cout={cout}")
    if cg != cin // groups:
        raise ShapeError(f"conv2d: weight expects {cg * groups} input channels, got {cin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be odd-sized, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise ShapeError("conv2d: stride must be >= 1 and padding >= 0")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")

    og = cout // groups
    depthwise = cg == 1 and og == 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    span_h = stride * (ho - 1) + 1
    span_w = stride * (wo - 1) + 1
    # (groups, og, cg, kh, kw)
    wg = weight.data.reshape(groups, og, cg, kh, kw)

    def tap(i: int, j: int) -> np.ndarray:
        return xp[:, :, i : i + span_h : stride, j : j + span_w : stride]

    if depthwise:
        out = np.zeros((n, cout, ho, wo))
        wd = weight.data[:, 0]
        for i in range(kh):
            for j in range(kw):
                out += tap(i, j) * wd[:, i, j][None, :, None, None]
    else:
        acc = np.zeros((n, groups, og, ho * wo))
        for i in range(kh):
            for j in range(kw):
                cols = tap(i, j).reshape(n, groups, cg, ho * wo)
                acc += np.matmul(wg[:, :, :, i, j], cols)
        out = acc.reshape(n, cout, ho, wo)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    parents: tuple[Tensor, ...] = (x, weight) if bias is None else (x, weight, bias)

    def bw(g: np.ndarray):
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(wg) if weight.requires_grad else None
        if depthwise:
            wd = weight.data[:, 0]
            for i in range(kh):
                for j in range(kw):
                    if gw is not None:
                        gw[:, 0, 0, i, j] = np.einsum("nchw,nchw->c", g, tap(i, j))
                    if gxp is not None:
                        gxp[:, :, i : i + span_h : stride, j : j + span_w : stride] += (
                            g * wd[:, i, j][None, :, None, None]
                        )
        else:
            gg = g.reshape(n, groups, og, ho * wo)
            for i in range(kh):
                for j in range(kw):
                    if gw is not None:
                        cols = tap(i, j).reshape(n, groups, cg, ho * wo)
                        gw[:, :, :, i, j] = np.matmul(gg, cols.transpose(0, 1, 3, 2)).sum(axis=0)
                    if gxp is not None:
                        gcols = np.matmul(wg[:, :, :, i, j].transpose(0, 2, 1), gg)
                        gxp[:, :, i : i + span_h : stride, j : j + span_w : stride] += gcols.reshape(
                            n, cin, ho, wo
                        )
        gx = None
        if gxp is not None:
            gx = gxp[:, :, padding : padding + h, padding : padding + w]
        grads = [gx, None if gw is None else gw.reshape(weight.shape)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _make(out, parents, bw, "conv2d")


def pixel_shuffle(x: ArrayLike, r: int) -> Tensor:
    """Rearrange (N, C*r*r, H, W) into (N, C, H*r, W*r).

    ``out[n, c, h*r + i, w*r + j] = x[n, c*r*r + i*r + j, h, w]``.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"pixel_shuffle expects 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    if r < 1 or c % (r * r):
        raise ShapeError(f"pixel_shuffle: channels {c} not divisible by r^2={r * r}")
    co = c // (r * r)
    out = x.data.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)

    def bw(g: np.ndarray):
        return (g.reshape(n, co, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c, h, w),)

    return _make(out, (x,), bw, "pixel_shuffle")


def bilinear_matrix(size: int, scale: int) -> np.ndarray:
    """Interpolation matrix mapping ``size`` samples to ``size*scale``.

    Half-pixel centres (align_corners=False) with border clamping.
    """
    dst = np.arange(size * scale, dtype=np.float64)
    src = np.clip((dst + 0.5) / scale - 0.5, 0.0, size - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, size - 1)
    frac = src - i0
    m = np.zeros((size * scale, size))
    rows = np.arange(size * scale)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def bilinear_resize(x: ArrayLike, scale: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"bilinear_resize expects 4-D input, got {x.shape}")
    if scale < 1:
        raise ShapeError(f"bilinear_resize: scale must be >= 1, got {scale}")
    _, _, h, w = x.shape
    mh = bilinear_matrix(h, scale)
    mw = bilinear_matrix(w, scale)
    out = mh @ x.data @ mw.T

    def bw(g: np.ndarray):
        return (mh.T @ g @ mw,)

    return _make(out, (x,), bw, "bilinear_resize")
