"""Reverse-mode automatic differentiation on numpy arrays.

The engine is a thin tape: every primitive wraps a numpy computation and,
when gradients are enabled and at least one input requires them, records a
node holding the input tensors and a vector-Jacobian product closure.
`backward` walks the recorded graph in reverse topological order and
accumulates gradients into the `requires_grad` leaves.

Precision is selected globally: float64 (the default, used by all tests and
oracles) or float32 for faster training runs.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "set_default_dtype",
    "get_default_dtype",
    "apply_primitive",
    "backward",
    "grad_check",
    "GradCheckReport",
    "add",
    "subtract",
    "multiply",
    "scalar_multiply",
    "matmul",
    "linear",
    "conv1d",
    "conv2d",
    "leaky_relu",
    "softmax",
    "log",
    "log10",
    "abs_",
    "square",
    "sum_",
    "mean_",
    "concat",
    "slice_",
    "reshape",
    "transpose",
    "upsample_linear_2x",
    "minimum_zero",
    "self_attention",
]

_LN10 = float(np.log(10.0))

_default_dtype = np.float64


def set_default_dtype(dtype) -> None:
    """Select the global precision (np.float64 or np.float32)."""
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError("default dtype must be float32 or float64")
    _default_dtype = dtype


def get_default_dtype():
    return _default_dtype


class _GradState(threading.local):
    def __init__(self):
        self.enabled = True


_state = _GradState()


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        self._prev = _state.enabled
        _state.enabled = False
        return self

    def __exit__(self, *exc):
        _state.enabled = self._prev
        return False


class ShapeError(ValueError):
    """Raised when operand shapes violate a primitive's shape rule."""


@dataclass
class _Node:
    op: str
    inputs: tuple
    vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """N-dimensional real array, optionally tracked on the autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else _default_dtype)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[_Node] = None

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
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.size != 1:
            raise ValueError(f"item() requires a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # arithmetic sugar; all routed through the recorded primitives
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_multiply(self, float(other))
        return multiply(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scalar_multiply(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __getitem__(self, index):
        return slice_(self, index)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _lift(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else _default_dtype
    return Tensor(np.asarray(x, dtype=dtype))


def _record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, vjp) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.node = None
    needs = _state.enabled and any(t.requires_grad for t in inputs)
    out.requires_grad = needs
    if needs:
        out.node = _Node(op, tuple(inputs), vjp)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and reduction primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
    return _record(
        "add", (a, b), out,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def subtract(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError(f"subtract: shapes {a.shape} and {b.shape} do not broadcast")
    return _record(
        "subtract", (a, b), out,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def multiply(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"multiply: shapes {a.shape} and {b.shape} do not broadcast")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(g * bd, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, b.shape) if b.requires_grad else None
        return (ga, gb)

    return _record("multiply", (a, b), out, vjp)


def scalar_multiply(a, c: float) -> Tensor:
    a = _lift(a)
    c = float(c)
    return _record("scalar_multiply", (a,), a.data * c, lambda g: (g * c,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must be in (0, 1), got {slope}")
    a = _lift(a)
    ad = a.data
    out = np.maximum(ad, slope * ad)

    def vjp(g):
        # derivative at the kink (x == 0) is the slope value
        return (g * np.where(ad > 0, 1.0, slope),)

    return _record("leaky_relu", (a,), out, vjp)


def log(a) -> Tensor:
    a = _lift(a)
    ad = a.data
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(ad)
    return _record("log", (a,), out, lambda g: (g / ad,))


def log10(a) -> Tensor:
    return scalar_multiply(log(a), 1.0 / _LN10)


def abs_(a) -> Tensor:
    a = _lift(a)
    # sign(0) := +1 so that minimum_zero has derivative 0 at its kink
    sign = np.where(a.data >= 0, 1.0, -1.0)
    return _record("abs", (a,), np.abs(a.data), lambda g: (g * sign,))


def square(a) -> Tensor:
    a = _lift(a)
    ad = a.data
    return _record("square", (a,), ad * ad, lambda g: (g * (2.0 * ad),))


def minimum_zero(a) -> Tensor:
    """min(0, a) elementwise, built as 0.5 * (a - |a|)."""
    return scalar_multiply(subtract(a, abs_(a)), 0.5)


def softmax(a, axis: int) -> Tensor:
    a = _lift(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _record("softmax", (a,), out, vjp)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    if axis is None:
        axes = tuple(range(a.ndim))
    elif isinstance(axis, int):
        axes = (axis % a.ndim,)
    else:
        axes = tuple(ax % a.ndim for ax in axis)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    if out.ndim == 0:
        out = out.reshape(1)
    in_shape = a.shape
    kept = tuple(1 if i in axes else s for i, s in enumerate(in_shape))

    def vjp(g):
        return (np.broadcast_to(g.reshape(kept), in_shape).copy(),)

    return _record("sum", (a,), out, vjp)


def mean_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    if axis is None:
        n = a.size
    elif isinstance(axis, int):
        n = a.shape[axis % a.ndim]
    else:
        n = int(np.prod([a.shape[ax % a.ndim] for ax in axis]))
    return scalar_multiply(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise ValueError("concat requires at least one tensor")
    nd = tensors[0].ndim
    axis = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd:
            raise ShapeError("concat: rank mismatch")
        for ax in range(nd):
            if ax != axis and t.shape[ax] != tensors[0].shape[ax]:
                raise ShapeError(f"concat: extent mismatch on axis {ax}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        pieces = []
        for i in range(len(sizes)):
            idx = [slice(None)] * nd
            idx[axis] = slice(bounds[i], bounds[i + 1])
            pieces.append(g[tuple(idx)])
        return tuple(pieces)

    return _record("concat", tuple(tensors), out, vjp)


def slice_(a, index) -> Tensor:
    a = _lift(a)
    if not isinstance(index, tuple):
        index = (index,)
    for part in index:
        if isinstance(part, slice):
            if part.step is not None and part.step < 0:
                raise ValueError("slice: negative steps not supported")
        elif not isinstance(part, (int, np.integer)):
            raise ValueError("slice: only ints and slices supported")
    out = a.data[index]
    if out.ndim == 0:
        out = out.reshape(1)
    in_shape = a.shape
    scalar_result = a.data[index].ndim == 0

    def vjp(g):
        full = np.zeros(in_shape, dtype=g.dtype)
        full[index] = g.reshape(()) if scalar_result else g
        return (full,)

    return _record("slice", (a,), out, vjp)


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    shape = tuple(shape)
    out = a.data.reshape(shape)
    in_shape = a.shape
    return _record("reshape", (a,), out, lambda g: (g.reshape(in_shape),))


def transpose(a, axes=None) -> Tensor:
    a = _lift(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(ax % a.ndim for ax in axes)
    inv = np.argsort(axes)
    out = a.data.transpose(axes)
    return _record("transpose", (a,), out, lambda g: (g.transpose(inv),))


# ---------------------------------------------------------------------------
# linear-algebra primitives
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product; 2-D or 3-D operands, with batch-axis broadcasting."""
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    if a.ndim not in (2, 3) or b.ndim not in (2, 3):
        raise ShapeError(f"matmul: expected 2-D or 3-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner axis mismatch {a.shape} @ {b.shape}")
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise ShapeError(f"matmul: batch axis mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd
    a_shape, b_shape = a.shape, b.shape

    def vjp(g):
        ga = _unbroadcast(g @ bd.swapaxes(-1, -2), a_shape) if a.requires_grad else None
        gb = _unbroadcast(ad.swapaxes(-1, -2) @ g, b_shape) if b.requires_grad else None
        return (ga, gb)

    return _record("matmul", (a, b), out, vjp)


def linear(x, weight, bias=None) -> Tensor:
    """Fully connected transform along the leading (channel) axis: w @ x (+ b)."""
    y = matmul(weight, x)
    if bias is not None:
        b = _lift(bias, y)
        y = add(y, reshape(b, (b.size,) + (1,) * (y.ndim - 1)))
    return y


def _pad_pair(padding) -> tuple:
    if isinstance(padding, (int, np.integer)):
        return (int(padding), int(padding))
    lo, hi = padding
    return (int(lo), int(hi))


def conv1d(x, w, stride: int = 1, padding=0) -> Tensor:
    """1-D convolution along the last axis.

    x: (Cin, T) or (B, Cin, T); w: (Cout, Cin, k). Output length follows
    floor((T + pad_lo + pad_hi - k) / stride) + 1.
    """
    x = _lift(x)
    w = _lift(w, x)
    if stride < 1:
        raise ValueError(f"conv1d stride must be >= 1, got {stride}")
    if x.ndim == 2:
        out = conv1d(reshape(x, (1,) + x.shape), w, stride=stride, padding=padding)
        return reshape(out, out.shape[1:])
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d: expected x (B,Cin,T) and w (Cout,Cin,k), got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: channel mismatch on axis 1: input has {x.shape[1]}, kernel expects {w.shape[1]}")
    lo, hi = _pad_pair(padding)
    k = w.shape[2]
    xp = np.pad(x.data, ((0, 0), (0, 0), (lo, hi))) if (lo or hi) else x.data
    t_pad = xp.shape[-1]
    if t_pad < k:
        raise ShapeError(f"conv1d: padded length {t_pad} shorter than kernel {k} (minimum input {k - lo - hi})")
    t_out = (t_pad - k) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=-1)[:, :, ::stride][:, :, :t_out]
    b_, cin, t_in = x.shape
    cout = w.shape[0]
    # one BLAS contraction over flattened (Cin, k) patches
    wmat = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(b_, t_out, cin * k)
    wk = w.data.reshape(cout, cin * k)
    out = np.ascontiguousarray((wmat @ wk.T).transpose(0, 2, 1))

    def vjp(g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(b_ * t_out, cout)
        gw = None
        if w.requires_grad:
            gw = (gt.T @ wmat.reshape(b_ * t_out, cin * k)).reshape(cout, cin, k)
        gx = None
        if x.requires_grad:
            gx_full = (gt @ wk).reshape(b_, t_out, cin, k)
            gx_pad = np.zeros((b_, cin, t_pad), dtype=g.dtype)
            for kk in range(k):
                gx_pad[:, :, kk : kk + stride * t_out : stride] += gx_full[:, :, :, kk].transpose(0, 2, 1)
            gx = gx_pad[:, :, lo : lo + t_in]
        return (gx, gw)

    return _record("conv1d", (x, w), out, vjp)


def conv2d(x, w, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """2-D convolution over the last two axes.

    x: (Cin, H, W) or (B, Cin, H, W); w: (Cout, Cin, kh, kw);
    stride: (sh, sw); padding: (ph, pw) with each entry an int or (lo, hi).
    """
    x = _lift(x)
    w = _lift(w, x)
    if isinstance(stride, (int, np.integer)):
        stride = (int(stride), int(stride))
    sh, sw = stride
    if sh < 1 or sw < 1:
        raise ValueError(f"conv2d stride must be >= 1, got {stride}")
    if x.ndim == 3:
        out = conv2d(reshape(x, (1,) + x.shape), w, stride=stride, padding=padding)
        return reshape(out, out.shape[1:])
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected x (B,Cin,H,W) and w (Cout,Cin,kh,kw), got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: channel mismatch on axis 1: input has {x.shape[1]}, kernel expects {w.shape[1]}")
    ph, pw = padding
    ph_lo, ph_hi = _pad_pair(ph)
    pw_lo, pw_hi = _pad_pair(pw)
    kh, kw = w.shape[2], w.shape[3]
    xp = x.data
    if ph_lo or ph_hi or pw_lo or pw_hi:
        xp = np.pad(xp, ((0, 0), (0, 0), (ph_lo, ph_hi), (pw_lo, pw_hi)))
    h_pad, w_pad = xp.shape[-2], xp.shape[-1]
    if h_pad < kh or w_pad < kw:
        raise ShapeError(f"conv2d: padded extent ({h_pad},{w_pad}) shorter than kernel ({kh},{kw})")
    h_out = (h_pad - kh) // sh + 1
    w_out = (w_pad - kw) // sw + 1
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(-2, -1))
    windows = windows[:, :, ::sh, ::sw][:, :, :h_out, :w_out]
    b_, cin, h_in, w_in = x.shape
    cout = w.shape[0]
    wmat = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(b_, h_out * w_out, cin * kh * kw)
    wk = w.data.reshape(cout, cin * kh * kw)
    out = np.ascontiguousarray((wmat @ wk.T).transpose(0, 2, 1)).reshape(b_, cout, h_out, w_out)

    def vjp(g):
        gt = np.ascontiguousarray(g.reshape(b_, cout, h_out * w_out).transpose(0, 2, 1)).reshape(-1, cout)
        gw = None
        if w.requires_grad:
            gw = (gt.T @ wmat.reshape(-1, cin * kh * kw)).reshape(cout, cin, kh, kw)
        gx = None
        if x.requires_grad:
            gx_full = (gt @ wk).reshape(b_, h_out, w_out, cin, kh, kw)
            gx_pad = np.zeros((b_, cin, h_pad, w_pad), dtype=g.dtype)
            for u in range(kh):
                for v in range(kw):
                    gx_pad[:, :, u : u + sh * h_out : sh, v : v + sw * w_out : sw] += gx_full[
                        :, :, :, :, u, v
                    ].transpose(0, 3, 1, 2)
            gx = gx_pad[:, :, ph_lo : ph_lo + h_in, pw_lo : pw_lo + w_in]
        return (gx, gw)

    return _record("conv2d", (x, w), out, vjp)


def upsample_linear_2x(x) -> Tensor:
    """Double the last axis by linear interpolation.

    out[..., 2i] = x[..., i]; out[..., 2i+1] = (x[..., i] + x[..., i+1]) / 2,
    with the final odd sample repeating the last input sample.
    """
    x = _lift(x)
    xd = x.data
    t = xd.shape[-1]
    out = np.empty(xd.shape[:-1] + (2 * t,), dtype=xd.dtype)
    out[..., 0::2] = xd
    out[..., 1:-1:2] = 0.5 * (xd[..., :-1] + xd[..., 1:])
    out[..., -1] = xd[..., -1]

    def vjp(g):
        gx = g[..., 0::2].copy()
        g_odd = g[..., 1::2]
        gx[..., :-1] += 0.5 * g_odd[..., :-1]
        gx[..., 1:] += 0.5 * g_odd[..., :-1]
        gx[..., -1] += g_odd[..., -1]
        return (gx,)

    return _record("upsample_linear_2x", (x,), out, vjp)


def self_attention(x, wq, wk, wv) -> Tensor:
    """Single-head scaled dot-product self-attention over the time axis.

    x: (B, C, T). The three projections are (C, C) matrices applied per
    frame; attention weights are softmax over key frames. Composed from
    matmul and softmax, so no dedicated VJP is needed.
    """
    b, c, t = x.shape
    q = matmul(wq, x)
    k = matmul(wk, x)
    v = matmul(wv, x)
    scores = scalar_multiply(matmul(transpose(q, (0, 2, 1)), k), 1.0 / float(np.sqrt(c)))
    weights = softmax(scores, axis=-1)  # (B, T, T), rows sum to 1
    out = matmul(weights, transpose(v, (0, 2, 1)))  # (B, T, C)
    return transpose(out, (0, 2, 1))


# ---------------------------------------------------------------------------
# primitive registry and generic application
# ---------------------------------------------------------------------------

PRIMITIVES = {
    "add": add,
    "subtract": subtract,
    "multiply": multiply,
    "scalar_multiply": scalar_multiply,
    "matmul": matmul,
    "linear": linear,
    "conv1d": conv1d,
    "conv2d": conv2d,
    "leaky_relu": leaky_relu,
    "softmax": softmax,
    "log": log,
    "log10": log10,
    "abs": abs_,
    "square": square,
    "sum": sum_,
    "mean": mean_,
    "concat": concat,
    "slice": slice_,
    "reshape": reshape,
    "transpose": transpose,
    "upsample_linear_2x": upsample_linear_2x,
    "minimum_zero": minimum_zero,
    "self_attention": self_attention,
}


def apply_primitive(op: str, *inputs, **attrs) -> Tensor:
    """Apply a primitive by id. Unknown ids are rejected."""
    try:
        fn = PRIMITIVES[op]
    except KeyError:
        raise KeyError(f"unknown primitive {op!r}; known: {sorted(PRIMITIVES)}") from None
    return fn(*inputs, **attrs)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into every requires_grad leaf below root."""
    if root.size != 1:
        raise ValueError(f"backward requires a scalar root, got shape {root.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            topo.append(t)
            continue
        if id(t) in seen or not t.requires_grad:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for parent in t.node.inputs:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for t in reversed(topo):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            t.grad = g if t.grad is None else t.grad + g
            continue
        parent_grads = t.node.vjp(g)
        for parent, pg in zip(t.node.inputs, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    checked: int
    skipped_kinks: list = field(default_factory=list)
    message: str = ""

    def __bool__(self):
        return self.passed


def grad_check(f, x, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare backward() gradients of scalar f against central differences.

    Per coordinate i the step is h * (1 + |x_i|). Coordinates where the
    one-sided derivatives disagree (non-differentiable points such as hinge
    kinks) are skipped and reported. Non-finite values fail the check.
    """
    if h <= 0:
        raise ValueError("grad_check step h must be positive")
    x0 = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64).copy()
    xt = Tensor(x0, requires_grad=True)
    y = f(xt)
    if y.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    f0 = y.item()
    if not np.isfinite(f0):
        return GradCheckReport(np.inf, False, 0, [], "non-finite function value")
    backward(y)
    g_ad = np.zeros_like(x0) if xt.grad is None else xt.grad.copy()

    def f_val(arr):
        with no_grad():
            return f(Tensor(arr)).item()

    max_rel = 0.0
    skipped = []
    checked = 0
    flat = x0.reshape(-1)
    for i in range(flat.size):
        hi = h * (1.0 + abs(flat[i]))
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += hi
        xm[i] -= hi
        fp = f_val(xp.reshape(x0.shape))
        fm = f_val(xm.reshape(x0.shape))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            return GradCheckReport(np.inf, False, checked, skipped, f"non-finite value near coordinate {i}")
        d_right = (fp - f0) / hi
        d_left = (f0 - fm) / hi
        if abs(d_right - d_left) > 0.05 * (1.0 + max(abs(d_right), abs(d_left))):
            skipped.append(i)
            continue
        central = (fp - fm) / (2.0 * hi)
        a = g_ad.reshape(-1)[i]
        rel = abs(a - central) / max(abs(a), abs(central), 1e-3)
        max_rel = max(max_rel, rel)
        checked += 1
    return GradCheckReport(max_rel, max_rel < tol, checked, skipped)
