"""Dense float32 tensors with reverse-mode automatic differentiation.

The tape is built eagerly: every differentiable op attaches a context (op
name, parent tensors, backward closure) to its output. ``grad`` walks the
tape once, accumulating gradients. Storage and compute are float32;
reductions accumulate in float64 before rounding back. Tensors may also be
built as float64 for shadow evaluation in finite-difference checks; the
training and attack paths only ever construct float32 tensors.

conv2d accumulates its forward GEMM in float64 (products of float32 inputs
are exact in float64, so the result matches a naive loop that does the same,
independent of summation order at the float32 rounding grid). Backward GEMMs
run in float32. conv2d's input gradient and conv_transpose2d's forward share
one code path, so they agree bitwise.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import ContractViolation, NumericFailure
from .rng import RngStream

_grad_enabled = True
_debug_checks = False


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def set_debug_checks(enabled: bool) -> None:
    """When enabled, every op's forward output is checked for non-finite values."""
    global _debug_checks
    _debug_checks = bool(enabled)


class _Ctx:
    __slots__ = ("op", "parents", "backward")

    def __init__(self, op: str, parents: tuple["Tensor", ...], backward: Callable):
        self.op = op
        self.parents = parents
        self.backward = backward


class Tensor:
    """A dense array plus optional autodiff bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "_ctx")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._ctx: _Ctx | None = None

    # ---- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
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
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def __repr__(self) -> str:
        grad_tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{grad_tag})"

    # ---- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def sum(self, axis=None) -> "Tensor":
        return sum_(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return mean(self, axis)


def _as_tensor(x, dtype=np.float32) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype), requires_grad=False, dtype=dtype)


def _result(op: str, data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    if _debug_checks and not np.all(np.isfinite(data)):
        raise NumericFailure(f"non-finite values in output of '{op}'", op=op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._ctx = _Ctx(op, parents, backward)
    else:
        out.requires_grad = False
        out._ctx = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...], dtype) -> np.ndarray:
    """Sum a broadcast gradient back to the original operand shape."""
    if g.shape != shape:
        extra = g.ndim - len(shape)
        if extra > 0:
            g = g.sum(axis=tuple(range(extra)), dtype=np.float64)
        axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True, dtype=np.float64)
    return np.ascontiguousarray(g, dtype=dtype)


# ---- elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    out = a.data + b.data

    def backward(g):
        return (_unbroadcast(g, a.shape, a.dtype), _unbroadcast(g, b.shape, b.dtype))

    return _result("add", out, (a, b), backward)


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    out = a.data - b.data

    def backward(g):
        return (_unbroadcast(g, a.shape, a.dtype), _unbroadcast(-g, b.shape, b.dtype))

    return _result("sub", out, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    out = a.data * b.data

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.shape, a.dtype),
            _unbroadcast(g * a.data, b.shape, b.dtype),
        )

    return _result("mul", out, (a, b), backward)


def div(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    out = a.data / b.data

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.shape, a.dtype),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape, b.dtype),
        )

    return _result("div", out, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _result("neg", -a.data, (a,), lambda g: (-g,))


# ---- activations -----------------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)

    def backward(g):
        return (np.where(a.data > 0, g, 0).astype(a.dtype, copy=False),)

    return _result("relu", out, (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    out = np.where(a.data > 0, a.data, a.dtype.type(slope) * a.data)

    def backward(g):
        return (np.where(a.data > 0, g, a.dtype.type(slope) * g).astype(a.dtype, copy=False),)

    return _result("leaky_relu", out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    one = a.dtype.type(1)
    with np.errstate(over="ignore"):  # exp overflow saturates to exactly 0/1
        s = one / (one + np.exp(-a.data))
    out = s

    def backward(g):
        return (g * (s * (one - s)),)

    return _result("sigmoid", out, (a,), backward)


def silu(a: Tensor) -> Tensor:
    one = a.dtype.type(1)
    with np.errstate(over="ignore"):  # exp overflow saturates to exactly 0/1
        s = one / (one + np.exp(-a.data))
    out = a.data * s

    def backward(g):
        return (g * (s * (one + a.data * (one - s))),)

    return _result("silu", out, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    th = np.tanh(a.data)

    def backward(g):
        return ((g * (1.0 - th * th)).astype(a.dtype, copy=False),)

    return _result("tanh", th, (a,), backward)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    x = a.data
    out = (np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x.astype(np.float64))))).astype(a.dtype)

    def backward(g):
        s = 1.0 / (1.0 + np.exp(-x.astype(np.float64)))
        return ((g * s).astype(a.dtype, copy=False),)

    return _result("softplus", out, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        return ((g * out).astype(a.dtype, copy=False),)

    return _result("exp", out, (a,), backward)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def backward(g):
        return ((g / a.data).astype(a.dtype, copy=False),)

    return _result("log", out, (a,), backward)


# ---- shape ops ----------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.shape),)

    return _result("reshape", out, (a,), backward)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = np.ascontiguousarray(a.data.transpose(axes))
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _result("transpose", out, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(tensors)
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return _result("concat", out, parts, backward)


def upsample_nearest2d(a: Tensor, scale: int = 2) -> Tensor:
    """Nearest-neighbor upsampling of an NCHW tensor."""
    out = a.data.repeat(scale, axis=2).repeat(scale, axis=3)
    n, c, h, w = a.shape

    def backward(g):
        return (
            g.reshape(n, c, h, scale, w, scale).sum(axis=(3, 5), dtype=np.float64).astype(a.dtype),
        )

    return _result("upsample_nearest2d", out, (a,), backward)


# ---- reductions -----------------------------------------------------------------


def sum_(a: Tensor, axis=None) -> Tensor:
    out = a.data.sum(axis=axis, dtype=np.float64).astype(a.dtype)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)
        gx = np.expand_dims(g, axis)
        return (np.broadcast_to(gx, a.shape).astype(a.dtype, copy=True),)

    return _result("sum", out, (a,), backward)


def mean(a: Tensor, axis=None) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    out = (a.data.sum(axis=axis, dtype=np.float64) / count).astype(a.dtype)
    inv = 1.0 / count

    def backward(g):
        if axis is None:
            return (np.full(a.shape, g * inv, dtype=a.dtype),)
        gx = np.expand_dims(g * inv, axis)
        return (np.broadcast_to(gx, a.shape).astype(a.dtype, copy=True),)

    return _result("mean", out, (a,), backward)


# ---- matmul ---------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ContractViolation(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        return (g @ b.data.T, a.data.T @ g)

    return _result("matmul", out, (a, b), backward)


# ---- convolution ----------------------------------------------------------------


def _pad2d(x: np.ndarray, p: int, dtype=None) -> np.ndarray:
    dtype = x.dtype if dtype is None else dtype
    if p == 0 and dtype == x.dtype:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dtype)
    out[:, :, p : p + h, p : p + w] = x
    return out


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int, dtype=None) -> tuple[np.ndarray, int, int]:
    """Gather conv windows into a (C*KH*KW, N*OH*OW) matrix.

    Window dims lead so the gather copy walks the source near-sequentially
    (the naive (N*OH*OW, C*KH*KW) layout is a cache-hostile 6-D transpose
    that dominates the conv runtime). ``dtype`` casts during the pad pass,
    saving a separate conversion over the large column matrix.
    """
    xp = _pad2d(x, pad, dtype)
    n, c, h, w = xp.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    sn, sc, sh, sw = xp.strides
    windows = as_strided(
        xp,
        shape=(c, kh, kw, n, oh, ow),
        strides=(sc, sh, sw, sn, sh * stride, sw * stride),
        writeable=False,
    )
    cols = np.ascontiguousarray(windows).reshape(c * kh * kw, n * oh * ow)
    return cols, oh, ow


def _conv_out_size(h: int, k: int, stride: int, pad: int) -> int:
    return (h + 2 * pad - k) // stride + 1


def _nchw_from_gemm(out2: np.ndarray, n: int, oh: int, ow: int, dtype) -> np.ndarray:
    o = out2.shape[0]
    return out2.reshape(o, n, oh, ow).transpose(1, 0, 2, 3).astype(dtype, order="C", copy=True)


def _conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Cross-correlation, float64 accumulation, rounded once to x's dtype."""
    n = x.shape[0]
    o, i, kh, kw = w.shape
    cols, oh, ow = _im2col(x, kh, kw, stride, pad, dtype=np.float64)
    out2 = w.reshape(o, i * kh * kw).astype(np.float64, copy=False) @ cols
    return _nchw_from_gemm(out2, n, oh, ow, x.dtype)


def _conv2d_weight_grad(x: np.ndarray, g: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """d(conv2d(x, w))/dw contracted with g; float32 GEMM."""
    n, o = g.shape[0], g.shape[1]
    cols, oh, ow = _im2col(x, kh, kw, stride, pad)
    gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, n * oh * ow)
    dw = gmat @ cols.T
    return dw.reshape(o, x.shape[1], kh, kw).astype(x.dtype, copy=False)


def _dilate_pad(g: np.ndarray, stride: int, before_h: int, after_h: int, before_w: int, after_w: int) -> np.ndarray:
    """Insert stride-1 zeros between entries and zero-pad/crop the borders, one pass."""
    n, c, h, w = g.shape
    dh, dw = (h - 1) * stride + 1, (w - 1) * stride + 1
    out = np.zeros((n, c, dh + before_h + after_h, dw + before_w + after_w), dtype=g.dtype)
    # slices of the dilated grid that survive cropping
    src_h = slice(max(0, -(before_h + stride - 1) // stride if before_h < 0 else 0), h)
    view = out[:, :, max(0, before_h) :, max(0, before_w) :]
    if before_h >= 0 and before_w >= 0 and after_h >= 0 and after_w >= 0:
        view[:, :, : dh : stride, : dw : stride] = g
        return out
    # general (cropping) case, rare: build dilated then crop via asymmetric copy
    full = np.zeros((n, c, dh, dw), dtype=g.dtype)
    full[:, :, ::stride, ::stride] = g
    sh = slice(max(0, -before_h), dh - max(0, -after_h))
    sw = slice(max(0, -before_w), dw - max(0, -after_w))
    th = slice(max(0, before_h), max(0, before_h) + (sh.stop - sh.start))
    tw = slice(max(0, before_w), max(0, before_w) + (sw.stop - sw.start))
    out2 = np.zeros((n, c, dh + before_h + after_h, dw + before_w + after_w), dtype=g.dtype)
    out2[:, :, th, tw] = full[:, :, sh, sw]
    return out2


def _conv_input_grad(
    g: np.ndarray, w: np.ndarray, stride: int, pad: int, out_hw: tuple[int, int]
) -> np.ndarray:
    """Adjoint of conv2d w.r.t. its input; also conv_transpose2d's forward.

    ``out_hw`` fixes the spatial size of the result. The dilated gradient is
    padded by kernel-1-pad on the leading side and by whatever the target
    size requires on the trailing side (rows the forward conv never read get
    zero gradient automatically).
    """
    o, i, kh, kw = w.shape
    H, W = out_hw
    qh = kh - 1 - pad
    qw = kw - 1 - pad
    dil_h = (g.shape[2] - 1) * stride + 1
    dil_w = (g.shape[3] - 1) * stride + 1
    rh = H + pad - dil_h
    rw = W + pad - dil_w
    gd = _dilate_pad(g, stride, qh, rh, qw, rw)
    wf = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))  # (I, O, KH, KW)
    n = g.shape[0]
    cols, oh, ow = _im2col(gd, kh, kw, 1, 0)
    core2 = wf.reshape(i, o * kh * kw) @ cols
    return _nchw_from_gemm(core2, n, oh, ow, g.dtype)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of an NCHW input with an OIHW kernel."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ContractViolation(f"conv2d expects NCHW input and OIHW kernel, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    o, i, kh, kw = w.shape
    if c != i:
        raise ContractViolation(f"conv2d channel mismatch: input has {c}, kernel expects {i}")
    oh = _conv_out_size(h, kh, stride, padding)
    ow = _conv_out_size(wd, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise ContractViolation(f"conv2d output would be empty: input {h}x{wd}, kernel {kh}x{kw}, stride {stride}, pad {padding}")
    out = _conv2d_forward(x.data, w.data, stride, padding)

    def backward(g):
        dx = _conv_input_grad(g, w.data, stride, padding, (h, wd))
        dw = _conv2d_weight_grad(x.data, g, kh, kw, stride, padding)
        return (dx, dw)

    return _result("conv2d", out, (x, w), backward)


def conv_transpose2d(
    x: Tensor, w: Tensor, stride: int = 1, padding: int = 0, output_size: tuple[int, int] | None = None
) -> Tensor:
    """Adjoint of conv2d: maps an (N, O, H, W) input through an (O, I, KH, KW) kernel.

    With the same kernel and hyperparameters, ``conv_transpose2d(g, w)``
    equals the gradient conv2d propagates to its input when fed ``g``.
    ``output_size`` disambiguates the extra rows/columns a strided conv may
    have ignored; the default is the minimal size (H-1)*stride - 2*pad + KH.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ContractViolation(f"conv_transpose2d expects 4-D input and kernel, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    o, i, kh, kw = w.shape
    if c != o:
        raise ContractViolation(f"conv_transpose2d channel mismatch: input has {c}, kernel expects {o}")
    if output_size is None:
        out_hw = ((h - 1) * stride - 2 * padding + kh, (wd - 1) * stride - 2 * padding + kw)
    else:
        out_hw = tuple(output_size)
    if _conv_out_size(out_hw[0], kh, stride, padding) != h or _conv_out_size(out_hw[1], kw, stride, padding) != wd:
        raise ContractViolation(f"conv_transpose2d output_size {out_hw} inconsistent with input {(h, wd)}")
    out = _conv_input_grad(x.data, w.data, stride, padding, out_hw)

    def backward(g):
        dx = _conv2d_forward(g, w.data, stride, padding)
        dw = _conv2d_weight_grad(g, x.data, kh, kw, stride, padding)
        return (dx, dw)

    return _result("conv_transpose2d", out, (x, w), backward)


# ---- random draws ---------------------------------------------------------------


def gaussian(rng: RngStream, shape: tuple[int, ...]) -> Tensor:
    """I.i.d. N(0, 1) float32 samples; advances the stream deterministically."""
    return Tensor(rng.normal(tuple(shape)), requires_grad=False)


# ---- backward pass --------------------------------------------------------------


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node._ctx is not None:
            for p in node._ctx.parents:
                if id(p) not in seen:
                    stack.append((p, False))
    return order


def grad(loss: Tensor, params: Mapping[str, Tensor] | Iterable[Tensor]):
    """Gradients of a scalar loss w.r.t. each parameter.

    Parameters the loss does not depend on map to zero tensors. Returns a
    dict when given a mapping, else a list aligned with the input order.
    """
    if loss.data.size != 1:
        raise ContractViolation(f"grad expects a scalar loss, got shape {loss.shape}")
    if isinstance(params, Mapping):
        items = list(params.items())
    else:
        items = [(i, p) for i, p in enumerate(params)]

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_toposort(loss)):
        ctx = node._ctx
        if ctx is None:
            continue
        g = grads.pop(id(node), None)
        if g is None:
            continue
        parent_grads = ctx.backward(g)
        for parent, pg in zip(ctx.parents, parent_grads):
            if pg is None or not (parent.requires_grad or parent._ctx is not None):
                continue
            if np.isnan(pg).any():
                raise NumericFailure(f"NaN gradient produced by backward of '{ctx.op}'", op=ctx.op)
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg

    out = {}
    for key, p in items:
        g = grads.get(id(p))
        if g is None:
            g = np.zeros_like(p.data)
        out[key] = Tensor(g, requires_grad=False, dtype=p.data.dtype)
    if isinstance(params, Mapping):
        return out
    return [out[i] for i in range(len(items))]
