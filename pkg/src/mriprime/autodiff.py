"""Small reverse-mode autodiff engine over numpy arrays.

Only the operations needed by the k-space U-Net and its loss are provided:
``conv2d``, ``relu``, ``maxpool2``, ``upsample_bilinear2``, ``concat_channels``,
``add``, ``mul`` and ``l1_loss``. Every op returns a new :class:`Tensor` that
remembers its parents and a closure computing the vector-Jacobian product;
:func:`backward` walks that graph once in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "NonFiniteError",
    "Parameter",
    "Tensor",
    "add",
    "backward",
    "concat_channels",
    "conv2d",
    "l1_loss",
    "maxpool2",
    "mul",
    "no_grad",
    "relu",
    "upsample_bilinear2",
]

_GRAD_ENABLED = True


class NonFiniteError(ArithmeticError):
    """Raised when an operation produces NaN or Inf."""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """Dense real array with optional gradient tracking.

    ``data`` keeps its floating dtype (float32 for training, float64 for
    gradient checks). Non-leaf tensors hold ``_parents`` and ``_backward``
    until :func:`backward` consumes the graph.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor data contains NaN or Inf")
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._op = ""
        self._consumed = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)


class Parameter(Tensor):
    """A named trainable leaf tensor."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _result(data: np.ndarray, parents: tuple, backward_fn, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced NaN or Inf")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    out._consumed = False
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _check_4d(x: Tensor, op: str) -> None:
    if x.data.ndim != 4:
        raise ValueError(f"{op}: expected N x C x H x W input, got shape {x.shape}")


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Zero-padded 'same' cross-correlation with odd kernels.

    Computed as im2col + one matrix product. Columns are gathered in
    channels-last order so each copy moves contiguous runs of C values.
    """
    _check_4d(x, "conv2d")
    if weight.data.ndim != 4:
        raise ValueError(f"conv2d: weight must be Cout x Cin x kh x kw, got {weight.shape}")
    n, c, h, w = x.shape
    cout, cin, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d: kernel size must be odd, got {kh}x{kw}")
    if cin != c:
        raise ValueError(f"conv2d: weight expects {cin} input channels, input has {c}")
    if bias.shape != (cout,):
        raise ValueError(f"conv2d: bias must have shape ({cout},), got {bias.shape}")

    ph, pw = kh // 2, kw // 2
    # weight as (cout, kh*kw*cin) to match the channels-last column order
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(cout, kh * kw * cin)
    x_nhwc = x.data.transpose(0, 2, 3, 1)
    if kh == 1 and kw == 1:
        cols = np.ascontiguousarray(x_nhwc).reshape(n * h * w, c)
    else:
        xp = np.zeros((n, h + 2 * ph, w + 2 * pw, c), dtype=x.dtype)
        xp[:, ph:ph + h, pw:pw + w] = x_nhwc
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # n, h, w, c, kh, kw
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, kh * kw * c)
    out2 = cols @ wmat.T
    out2 += bias.data
    out = np.ascontiguousarray(out2.reshape(n, h, w, cout).transpose(0, 3, 1, 2))

    def _bw(g: np.ndarray):
        g_nhwc = g.transpose(0, 2, 3, 1)
        g2 = np.ascontiguousarray(g_nhwc).reshape(n * h * w, cout)
        dw = None
        if weight.requires_grad:
            dw = (cols.T @ g2).T.reshape(cout, kh, kw, cin).transpose(0, 3, 1, 2)
        db = g2.sum(axis=0) if bias.requires_grad else None
        dx = None
        if x.requires_grad:
            if kh == 1 and kw == 1:
                dx = (g2 @ wmat).reshape(n, h, w, c)
            else:
                # input gradient = same-padded correlation of g with the flipped kernel
                gp = np.zeros((n, h + 2 * ph, w + 2 * pw, cout), dtype=g.dtype)
                gp[:, ph:ph + h, pw:pw + w] = g_nhwc
                gcols = sliding_window_view(gp, (kh, kw), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
                gcols = gcols.reshape(n * h * w, kh * kw * cout)
                wflip = wmat.reshape(cout, kh, kw, cin)[:, ::-1, ::-1].transpose(1, 2, 0, 3).reshape(kh * kw * cout, cin)
                dx = (gcols @ wflip).reshape(n, h, w, c)
            dx = np.ascontiguousarray(dx.transpose(0, 3, 1, 2))
        return dx, dw, db

    return _result(out, (x, weight, bias), _bw, "conv2d")


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, 0).astype(x.dtype, copy=False)

    def _bw(g):
        return (g * pos,)

    return _result(out, (x,), _bw, "relu")


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties go to the first element in row-major order."""
    _check_4d(x, "maxpool2")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2: spatial size must be even, got {h}x{w}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def _bw(g):
        onehot = np.zeros((n, c, h // 2, w // 2, 4), dtype=g.dtype)
        np.put_along_axis(onehot, idx[..., None], g[..., None], axis=-1)
        dx = onehot.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (dx,)

    return _result(np.ascontiguousarray(out), (x,), _bw, "maxpool2")


def _bilinear_matrix(size: int, dtype) -> np.ndarray:
    """(2*size) x size interpolation matrix, half-pixel centres, edge clamped."""
    out = np.arange(2 * size)
    src = np.clip((out + 0.5) / 2.0 - 0.5, 0.0, size - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, size - 1)
    frac = src - lo
    m = np.zeros((2 * size, size), dtype=np.float64)
    np.add.at(m, (out, lo), 1.0 - frac)
    np.add.at(m, (out, hi), frac)
    return m.astype(dtype)


def upsample_bilinear2(x: Tensor) -> Tensor:
    _check_4d(x, "upsample_bilinear2")
    n, c, h, w = x.shape
    uh = _bilinear_matrix(h, x.dtype)
    uw = _bilinear_matrix(w, x.dtype)
    out = uh @ x.data @ uw.T

    def _bw(g):
        return (uh.T @ g @ uw,)

    return _result(out, (x,), _bw, "upsample_bilinear2")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _check_4d(a, "concat_channels")
    _check_4d(b, "concat_channels")
    na, ca, ha, wa = a.shape
    nb, cb, hb, wb = b.shape
    if (na, ha, wa) != (nb, hb, wb):
        raise ValueError(f"concat_channels: batch/spatial mismatch {a.shape} vs {b.shape}")
    out = np.concatenate([a.data, b.data], axis=1)

    def _bw(g):
        return g[:, :ca], g[:, ca:]

    return _result(out, (a, b), _bw, "concat_channels")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def _bw(g):
        return g, g

    return _result(a.data + b.data, (a, b), _bw, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def _bw(g):
        return g * bd, g * ad

    return _result(ad * bd, (a, b), _bw, "mul")


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error; the subgradient at equality is 0."""
    _check_same_shape(pred, target, "l1_loss")
    if target.requires_grad:
        raise ValueError("l1_loss: target must not require grad")
    diff = pred.data - target.data
    count = diff.size
    out = np.asarray(np.abs(diff, dtype=np.float64).sum() / count, dtype=pred.dtype)

    def _bw(g):
        return np.sign(diff) * (g / count), None

    return _result(out, (pred, target), _bw, "l1_loss")


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list:
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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every reachable leaf that requires grad.

    Gradients from several paths are summed, and are added to any gradient
    already stored on a leaf. The graph is released afterwards, so a second
    call on the same loss raises.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("backward: graph already consumed by a previous backward pass")
    if not loss.requires_grad:
        raise RuntimeError("backward: loss does not depend on any tensor requiring grad")

    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if g is not None:
                g = np.asarray(g, dtype=node.dtype).reshape(node.shape)
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

    for node in order:
        if node._backward is not None:
            node._parents = ()
            node._backward = None
            node._consumed = True

