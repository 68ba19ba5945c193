"""Reverse-mode automatic differentiation over dense numpy arrays.

A ``Tensor`` wraps an ndarray plus the closures needed to backpropagate to
its parents; graphs are rebuilt on every call (define-by-run) and released
by garbage collection.  The op set is intentionally small: elementwise
arithmetic, a same-size 2-D convolution (1x1 or 3x3 kernels), dense affine
maps, sum/mean reductions, and pure data-movement ops (reshape, transpose,
concat/slice along channels, 2x2 space-to-channel).  Binary ops require
equal shapes; the only implicit broadcast is scalar-with-tensor plus the
explicit channel broadcast ``bcast_channel``.

Every op output is checked for NaN/Inf (see ``set_check_finite``) so
non-finite values surface where they appear instead of corrupting later
state.  ``no_grad()`` disables graph construction for inference paths.
``grad_check`` provides the central-finite-difference oracle used by the
test suite.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from . import precision
from .errors import NumericsError, ShapeError

_GRAD_ENABLED = True
_CHECK_FINITE = True


def set_check_finite(flag: bool) -> bool:
    """Toggle NaN/Inf checking on op outputs; returns the previous setting."""
    global _CHECK_FINITE
    old = _CHECK_FINITE
    _CHECK_FINITE = bool(flag)
    return old


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad():
    """Disable graph building inside the context (inference/decode paths)."""
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


class Tensor:
    """A node in the computation graph: value, gradient slot, parents."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=precision.dtype())
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse pass from a scalar root; accumulates into leaf ``grad``s."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar root, got shape {self.shape}")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node is not self and node._backward is not None:
                node.grad = None  # interior grads are transient

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def sum(self, axes=None):
        return tsum(self, axes)

    def mean(self, axes=None):
        return tmean(self, axes)

    def reshape(self, shape):
        return reshape(self, shape)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"


def _topo_order(root: Tensor) -> list:
    order, seen, stack = [], set(), [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op: str) -> Tensor:
    data = np.asarray(data, dtype=precision.dtype())
    # summing is one pass with no temporaries; NaN/Inf propagate into the sum
    if _CHECK_FINITE and not np.isfinite(data.sum()):
        raise NumericsError(f"non-finite values produced by op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _binary_shapes(a: Tensor, b: Tensor, op: str):
    """Equal shapes, or one side scalar. Returns reducers for each side."""
    if a.shape == b.shape:
        return (lambda g: g), (lambda g: g)
    if a.data.size == 1:
        return (lambda g: np.sum(g).reshape(a.shape)), (lambda g: g)
    if b.data.size == 1:
        return (lambda g: g), (lambda g: np.sum(g).reshape(b.shape))
    raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape} "
                     "(only scalar-with-tensor broadcast is supported)")


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    ra, rb = _binary_shapes(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(ra(g))
        if b.requires_grad:
            b.accumulate_grad(rb(g))

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    ra, rb = _binary_shapes(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(ra(g))
        if b.requires_grad:
            b.accumulate_grad(rb(-g))

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    ra, rb = _binary_shapes(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(ra(g * b.data))
        if b.requires_grad:
            b.accumulate_grad(rb(g * a.data))

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    ra, rb = _binary_shapes(a, b, "div")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(ra(g / b.data))
        if b.requires_grad:
            b.accumulate_grad(rb(-g * a.data / (b.data * b.data)))

    with np.errstate(divide="ignore", invalid="ignore"):
        y = a.data / b.data
    return _make(y, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = _lift(a)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(-g)

    return _make(-a.data, (a,), backward, "neg")


def texp(a) -> Tensor:
    a = _lift(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * y)

    return _make(y, (a,), backward, "exp")


def tlog(a) -> Tensor:
    a = _lift(a)
    if np.any(a.data <= 0):
        raise NumericsError("log of non-positive operand")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g / a.data)

    return _make(np.log(a.data), (a,), backward, "log")


def sigmoid(a) -> Tensor:
    a = _lift(a)
    # numerically stable two-branch logistic
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * y * (1.0 - y))

    return _make(y, (a,), backward, "sigmoid")


def tanh(a) -> Tensor:
    a = _lift(a)
    y = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * (1.0 - y * y))

    return _make(y, (a,), backward, "tanh")


def square(a) -> Tensor:
    a = _lift(a)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * (2.0 * a.data))

    return _make(a.data * a.data, (a,), backward, "square")


# -- reductions ---------------------------------------------------------------

def _norm_axes(axes, ndim, op):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, (int, np.integer)):
        axes = (int(axes),)
    axes = tuple(int(ax) % ndim if -ndim <= int(ax) < ndim else _axis_err(ax, ndim, op)
                 for ax in axes)
    if len(set(axes)) != len(axes):
        raise ShapeError(f"{op}: duplicate axes {axes}")
    return axes


def _axis_err(ax, ndim, op):
    raise ShapeError(f"{op}: axis {ax} out of range for ndim {ndim}")


def tsum(a, axes=None) -> Tensor:
    a = _lift(a)
    axes = _norm_axes(axes, a.ndim, "sum")
    y = np.sum(a.data, axis=axes if axes else None)

    def backward(g):
        if a.requires_grad:
            gk = np.asarray(g)
            shape = list(a.shape)
            for ax in axes:
                shape[ax] = 1
            a.accumulate_grad(np.broadcast_to(gk.reshape(shape), a.shape).copy())

    return _make(y, (a,), backward, "sum")


def tmean(a, axes=None) -> Tensor:
    a = _lift(a)
    axes = _norm_axes(axes, a.ndim, "mean")
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    y = np.mean(a.data, axis=axes if axes else None)

    def backward(g):
        if a.requires_grad:
            gk = np.asarray(g) / count
            shape = list(a.shape)
            for ax in axes:
                shape[ax] = 1
            a.accumulate_grad(np.broadcast_to(gk.reshape(shape), a.shape).copy())

    return _make(y, (a,), backward, "mean")


# -- data movement -----------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _lift(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    old = a.shape

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward, "reshape")


def permute(a, axes) -> Tensor:
    a = _lift(a)
    axes = tuple(int(ax) for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"permute: {axes} is not a permutation of ndim {a.ndim}")
    inv = np.argsort(axes)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(np.transpose(g, inv))

    return _make(np.transpose(a.data, axes).copy(), (a,), backward, "permute")


def concat(parts, axis: int) -> Tensor:
    parts = [_lift(p) for p in parts]
    axis = int(axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                p.accumulate_grad(g[tuple(sl)])

    return _make(np.concatenate([p.data for p in parts], axis=axis),
                 tuple(parts), backward, "concat")


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    a = _lift(a)
    axis = int(axis) % a.ndim
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeError(f"narrow: [{start}, {start + length}) outside axis {axis} "
                         f"of shape {a.shape}")
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            buf[sl] = g
            a.accumulate_grad(buf)

    return _make(a.data[sl].copy(), (a,), backward, "narrow")


def space_to_channel(a) -> Tensor:
    """[..., C, H, W] -> [..., 4C, H/2, W/2]; 2x2 spatial blocks become channels."""
    a = _lift(a)
    if a.ndim not in (3, 4):
        raise ShapeError(f"space_to_channel expects 3- or 4-d input, got {a.shape}")
    h, w = a.shape[-2], a.shape[-1]
    if h % 2 or w % 2:
        raise ShapeError(f"space_to_channel needs even spatial dims, got {h}x{w}")

    def fwd(x):
        lead = x.shape[:-3]
        c = x.shape[-3]
        x = x.reshape(lead + (c, h // 2, 2, w // 2, 2))
        nd = x.ndim
        x = np.moveaxis(x, (nd - 3, nd - 1), (nd - 4, nd - 3))
        return x.reshape(lead + (4 * c, h // 2, w // 2)).copy()

    def inv(y):
        lead = y.shape[:-3]
        c4 = y.shape[-3]
        y = y.reshape(lead + (c4 // 4, 2, 2, h // 2, w // 2))
        nd = y.ndim
        y = np.moveaxis(y, (nd - 4, nd - 3), (nd - 3, nd - 1))
        return y.reshape(lead + (c4 // 4, h, w)).copy()

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(inv(g))

    return _make(fwd(a.data), (a,), backward, "space_to_channel")


def channel_to_space(a) -> Tensor:
    """Inverse of space_to_channel: [..., 4C, H, W] -> [..., C, 2H, 2W]."""
    a = _lift(a)
    if a.ndim not in (3, 4):
        raise ShapeError(f"channel_to_space expects 3- or 4-d input, got {a.shape}")
    c4 = a.shape[-3]
    if c4 % 4:
        raise ShapeError(f"channel_to_space needs channels divisible by 4, got {c4}")
    h, w = a.shape[-2], a.shape[-1]

    def fwd(y):
        lead = y.shape[:-3]
        y = y.reshape(lead + (c4 // 4, 2, 2, h, w))
        nd = y.ndim
        y = np.moveaxis(y, (nd - 4, nd - 3), (nd - 3, nd - 1))
        return y.reshape(lead + (c4 // 4, 2 * h, 2 * w)).copy()

    def inv(x):
        lead = x.shape[:-3]
        c = x.shape[-3]
        x = x.reshape(lead + (c, h, 2, w, 2))
        nd = x.ndim
        x = np.moveaxis(x, (nd - 3, nd - 1), (nd - 4, nd - 3))
        return x.reshape(lead + (4 * c, h, w)).copy()

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(inv(g))

    return _make(fwd(a.data), (a,), backward, "channel_to_space")


def bcast_channel(v, shape) -> Tensor:
    """Broadcast a per-channel vector [C] over [..., C, H, W]."""
    v = _lift(v)
    shape = tuple(int(s) for s in shape)
    if v.ndim != 1 or len(shape) not in (3, 4) or shape[-3] != v.shape[0]:
        raise ShapeError(f"bcast_channel: cannot broadcast {v.shape} over {shape}")
    view = v.data.reshape((1,) * (len(shape) - 3) + (v.shape[0], 1, 1))
    sum_axes = tuple(i for i in range(len(shape)) if i != len(shape) - 3)

    def backward(g):
        if v.requires_grad:
            v.accumulate_grad(np.sum(g, axis=sum_axes))

    return _make(np.broadcast_to(view, shape).copy(), (v,), backward, "bcast_channel")


def scatter_diag(v) -> Tensor:
    """Place a vector [C] on the diagonal of a [C, C] matrix of zeros."""
    v = _lift(v)
    if v.ndim != 1:
        raise ShapeError(f"scatter_diag expects a vector, got shape {v.shape}")

    def backward(g):
        if v.requires_grad:
            v.accumulate_grad(np.diagonal(g).copy())

    return _make(np.diag(v.data), (v,), backward, "scatter_diag")


# -- dense / convolution -------------------------------------------------------

def affine(x, w, b=None) -> Tensor:
    """x @ w (+ b): x is [N, D] or [D], w is [D, M], b is [M]."""
    x, w = _lift(x), _lift(w)
    b = _lift(b) if b is not None else None
    xd = x.data if x.ndim == 2 else x.data[None, :]
    if w.ndim != 2 or xd.shape[1] != w.shape[0]:
        raise ShapeError(f"affine: {x.shape} @ {w.shape} mismatch")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"affine: bias {b.shape} does not match output width {w.shape[1]}")
    y = xd @ w.data
    if b is not None:
        y = y + b.data
    if x.ndim == 1:
        y = y[0]
    parents = (x, w, b) if b is not None else (x, w)

    def backward(g):
        g2 = g if g.ndim == 2 else g[None, :]
        if x.requires_grad:
            gx = g2 @ w.data.T
            x.accumulate_grad(gx if x.ndim == 2 else gx[0])
        if w.requires_grad:
            w.accumulate_grad(xd.T @ g2)
        if b is not None and b.requires_grad:
            b.accumulate_grad(g2.sum(axis=0))

    return _make(y, parents, backward, "affine")


def _cols3(x4: np.ndarray) -> np.ndarray:
    """Channel-major 3x3 patch matrix [C*9, B*H*W] (pads internally).

    Rows are ordered (channel, tap-row, tap-col) to match a row-major
    [O, C, 3, 3] kernel flattened to [O, C*9].
    """
    b, c, h, w = x4.shape
    xp = np.pad(x4, ((0, 0), (0, 0), (1, 1), (1, 1)))
    view = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    return np.ascontiguousarray(view.transpose(1, 4, 5, 0, 2, 3)).reshape(c * 9, b * h * w)


def conv2d(x, w, b=None, padding: int | None = None) -> Tensor:
    """Same-size cross-correlation; kernels are [C_out, C_in, k, k], k in {1, 3}.

    Padding must preserve spatial size (0 for 1x1, 1 for 3x3); passing None
    selects it automatically.  Accepts [C, H, W] or [B, C, H, W] input.
    """
    x, w = _lift(x), _lift(w)
    b = _lift(b) if b is not None else None
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: bad ranks input {x.shape}, kernels {w.shape}")
    k = w.shape[2]
    if k != w.shape[3] or k not in (1, 3):
        raise ShapeError(f"conv2d: kernels must be 1x1 or 3x3, got {w.shape[2]}x{w.shape[3]}")
    if xd.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input channels {xd.shape[1]} != kernel channels {w.shape[1]}")
    pad = (k - 1) // 2 if padding is None else int(padding)
    if pad != (k - 1) // 2:
        raise ShapeError(f"conv2d: padding {pad} does not preserve size for {k}x{k} kernels")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias {b.shape} does not match {w.shape[0]} output channels")

    bsz, cin, hh, ww = xd.shape
    cout = w.shape[0]

    if k == 1:
        # channel mixing only: one batched GEMM, no patch extraction
        w2 = w.data.reshape(cout, cin)
        x3 = xd.reshape(bsz, cin, hh * ww)
        y = np.matmul(w2, x3).reshape(bsz, cout, hh, ww)
        if b is not None:
            y = y + b.data[None, :, None, None]

        def backward(g):
            g4 = g[None] if unbatched else g
            g3 = g4.reshape(bsz, cout, hh * ww)
            if x.requires_grad:
                gx = np.matmul(w2.T, g3).reshape(xd.shape)
                x.accumulate_grad(gx[0] if unbatched else gx)
            if w.requires_grad:
                gw = np.matmul(g3, x3.transpose(0, 2, 1)).sum(axis=0)
                w.accumulate_grad(gw.reshape(w.shape))
            if b is not None and b.requires_grad:
                b.accumulate_grad(g4.sum(axis=(0, 2, 3)))
    else:
        cols = _cols3(xd)
        w2 = w.data.reshape(cout, cin * 9)
        y = (w2 @ cols).reshape(cout, bsz, hh, ww).transpose(1, 0, 2, 3)
        if b is not None:
            y = y + b.data[None, :, None, None]

        def backward(g):
            g4 = g[None] if unbatched else g
            if x.requires_grad:
                # full correlation: conv of g with the flipped, transposed kernel
                wt = np.ascontiguousarray(
                    w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)).reshape(cin, cout * 9)
                gx = (wt @ _cols3(g4)).reshape(cin, bsz, hh, ww).transpose(1, 0, 2, 3)
                x.accumulate_grad(gx[0] if unbatched else gx)
            if w.requires_grad:
                g2 = np.ascontiguousarray(g4.transpose(1, 0, 2, 3)).reshape(cout, -1)
                w.accumulate_grad((g2 @ cols.T).reshape(w.shape))
            if b is not None and b.requires_grad:
                b.accumulate_grad(g4.sum(axis=(0, 2, 3)))

    parents = (x, w, b) if b is not None else (x, w)
    return _make(y[0] if unbatched else y, parents, backward, "conv2d")


# -- gradient checking ----------------------------------------------------------

@dataclass
class GradCheckReport:
    """Worst-case comparison of analytic vs central-difference gradients."""
    max_rel_err: float
    worst: tuple = ()  # (param index, flat coordinate, analytic, numeric)
    n_checked: int = 0
    entries: list = field(default_factory=list)

    def __str__(self):
        return (f"grad_check: max_rel_err={self.max_rel_err:.3e} over "
                f"{self.n_checked} coordinates; worst={self.worst}")


def grad_check(f, params, eps: float | None = None, n_samples: int | None = None,
               rng=None, rel_floor: float | None = None) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f(params)`` with central differences.

    ``f`` must be deterministic.  Relative error uses the guarded denominator
    ``max(|analytic|, |numeric|, floor)`` where ``floor`` defaults to 1e-3
    times the largest sampled analytic gradient magnitude; this keeps
    near-zero coordinates from turning rounding noise into spurious blowups.
    """
    params = list(params)
    out = f(params)
    if not isinstance(out, Tensor) or out.size != 1:
        raise ShapeError("grad_check: f must return a scalar Tensor")
    if not np.isfinite(out.data).all():
        raise NumericsError("grad_check: f returned a non-finite value")
    for p in params:
        p.grad = None
    out.backward()
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.data.size)]
    if n_samples is not None and n_samples < len(coords):
        if rng is None:
            raise ValueError("grad_check: rng required when subsampling coordinates")
        picks = rng.integers(0, len(coords), (n_samples,))
        coords = [coords[int(k)] for k in picks]

    if eps is None:
        eps = 1e-5 if precision.dtype() is np.float64 else 1e-2

    def eval_at() -> float:
        val = f(params)
        return float(val.data.reshape(()))

    entries = []
    for i, j in coords:
        flat = params[i].data.reshape(-1)
        orig = flat[j]
        step = eps * max(1.0, abs(float(orig)))
        flat[j] = orig + step
        f_plus = eval_at()
        flat[j] = orig - step
        f_minus = eval_at()
        flat[j] = orig
        # actual perturbation after float rounding
        hi = np.asarray(orig + step, dtype=params[i].data.dtype)
        lo = np.asarray(orig - step, dtype=params[i].data.dtype)
        denom_step = float(hi) - float(lo)
        numeric = (f_plus - f_minus) / denom_step
        entries.append((i, j, float(analytic[i].reshape(-1)[j]), numeric))

    g_scale = max((abs(a) for _, _, a, _ in entries), default=0.0)
    floor = rel_floor if rel_floor is not None else max(1e-3 * g_scale, 1e-12)
    max_rel, worst = 0.0, ()
    for i, j, a, n in entries:
        rel = abs(a - n) / max(abs(a), abs(n), floor)
        if rel >= max_rel:
            max_rel, worst = rel, (i, j, a, n)
    return GradCheckReport(max_rel_err=max_rel, worst=worst,
                           n_checked=len(entries), entries=entries)
