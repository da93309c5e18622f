"""Dense float32 tensors with define-by-run reverse-mode differentiation.

Every operation, built-in or user supplied, is an :class:`Op` made from a
forward function and a backward function::

    def fwd(ctx, x):
        ctx.x = x
        return np.maximum(x, 0)

    def bwd(ctx, grad):
        return (grad * (ctx.x > 0),)

    relu = register_custom_backward(fwd, bwd, name="relu")

The graph is recorded through parent links on each output tensor and is
rebuilt on every forward pass. :func:`backward` walks it in reverse
topological order, so a full BPTT unroll over T timesteps is just a long
graph.
"""

from __future__ import annotations

import contextlib
import itertools
import struct
from pathlib import Path
from types import SimpleNamespace
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DataError, InternalError, NumericalError

DTYPE = np.float32

_node_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A float32 array plus the graph bookkeeping needed to differentiate it."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, parents=(), op=None, ctx=None):
        # np.require keeps 0-d arrays 0-d, unlike np.ascontiguousarray
        self.data = np.require(np.asarray(data, dtype=DTYPE), requirements="C")
        self.id = next(_node_ids)
        self.requires_grad = bool(requires_grad)
        self.parents = tuple(parents)
        self.op = op
        self.ctx = ctx
        self.grad = None
        self.retains_grad = False

    @property
    def shape(self) -> tuple:
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

    def retain_grad(self) -> "Tensor":
        """Keep the gradient of this (non-leaf) node after backward."""
        self.retains_grad = True
        return self

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, grad=None) -> None:
        backward(self, grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # arithmetic sugar; no broadcasting beyond scalars
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, c=float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, c=-float(other))

    def __rsub__(self, other):
        return add_scalar(scale(self, c=-1.0), c=float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, c=float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ConfigError("tensor/tensor division is not supported")
        return scale(self, c=1.0 / float(other))

    def __neg__(self):
        return scale(self, c=-1.0)

    def __getitem__(self, index):
        if not isinstance(index, (int, np.integer)):
            raise ConfigError("only integer indexing along the leading axis is supported")
        return take(self, index=int(index))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape=shape)

    def sum(self, axis=None):
        return sum_(self, axis=axis)

    def mean(self, axis=None):
        return mean(self, axis=axis)


class Parameter(Tensor):
    """A trainable leaf. ``grad`` is always an array of the value's shape."""

    def __init__(self, data, trainable: bool = True, name: str = ""):
        super().__init__(data, requires_grad=trainable)
        self.trainable = trainable
        self.name = name
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Op:
    """An operation with a fixed forward function and a fixed backward rule.

    ``forward_fn(ctx, *arrays, **kwargs)`` returns the output array and may
    stash anything it needs on ``ctx``. ``backward_fn(ctx, grad)`` returns
    one gradient (or None) per tensor input.
    """

    def __init__(self, forward_fn: Callable, backward_fn: Callable, name: str | None = None):
        self.forward_fn = forward_fn
        self.backward_fn = backward_fn
        self.name = name or getattr(forward_fn, "__name__", "op")

    def __call__(self, *inputs, **kwargs) -> Tensor:
        tensors = [as_tensor(x) for x in inputs]
        ctx = SimpleNamespace()
        out = self.forward_fn(ctx, *(t.data for t in tensors), **kwargs)
        out = np.asarray(out, dtype=DTYPE)
        if not np.isfinite(out).all():
            raise NumericalError(f"non-finite values produced by {self.name}")
        track = _grad_enabled and any(t.requires_grad for t in tensors)
        if not track:
            return Tensor(out, ctx=ctx)
        ctx.needs_grad = tuple(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=True, parents=tensors, op=self, ctx=ctx)

    def __repr__(self) -> str:
        return f"Op({self.name})"


def register_custom_backward(forward_fn: Callable, backward_fn: Callable, name: str | None = None) -> Op:
    """Build an op whose forward and backward are exactly the given functions."""
    return Op(forward_fn, backward_fn, name)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            state[node.id] = 2
            order.append(node)
            continue
        mark = state.get(node.id)
        if mark == 2:
            continue
        if mark == 1:
            raise InternalError("cycle detected in the computation graph")
        state[node.id] = 1
        stack.append((node, True))
        for parent in reversed(node.parents):
            pmark = state.get(parent.id)
            if pmark == 1:
                raise InternalError("cycle detected in the computation graph")
            if pmark is None and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if grad is None:
        if loss.size != 1:
            raise ConfigError(f"backward needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    grad = np.asarray(grad, dtype=DTYPE)
    if grad.shape != loss.shape:
        raise ConfigError("seed gradient shape does not match the loss")
    if not loss.requires_grad:
        return

    pending: dict[int, np.ndarray] = {loss.id: grad}
    for node in reversed(_topological_order(loss)):
        g = pending.pop(node.id, None)
        if g is None:
            continue
        if node.op is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if node.retains_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        in_grads = node.op.backward_fn(node.ctx, g)
        if not isinstance(in_grads, (tuple, list)):
            in_grads = (in_grads,)
        if len(in_grads) != len(node.parents):
            raise InternalError(
                f"{node.op.name}: backward returned {len(in_grads)} grads for {len(node.parents)} inputs"
            )
        for parent, pg in zip(node.parents, in_grads):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=DTYPE)
            if pg.shape != parent.shape:
                raise InternalError(
                    f"{node.op.name}: gradient shape {pg.shape} does not match input shape {parent.shape}"
                )
            prev = pending.get(parent.id)
            pending[parent.id] = pg if prev is None else prev + pg


def _same_shape(name, a, b):
    if a.shape != b.shape:
        raise ConfigError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise


def _add_fwd(ctx, a, b):
    _same_shape("add", a, b)
    return a + b


add = register_custom_backward(_add_fwd, lambda ctx, g: (g, g), "add")


def _sub_fwd(ctx, a, b):
    _same_shape("sub", a, b)
    return a - b


sub = register_custom_backward(_sub_fwd, lambda ctx, g: (g, -g), "sub")


def _mul_fwd(ctx, a, b):
    _same_shape("mul", a, b)
    ctx.a, ctx.b = a, b
    return a * b


mul = register_custom_backward(_mul_fwd, lambda ctx, g: (g * ctx.b, g * ctx.a), "mul")


def _scale_fwd(ctx, a, c):
    ctx.c = DTYPE(c)
    return a * ctx.c


scale = register_custom_backward(_scale_fwd, lambda ctx, g: (g * ctx.c,), "scale")


def _add_scalar_fwd(ctx, a, c):
    return a + DTYPE(c)


add_scalar = register_custom_backward(_add_scalar_fwd, lambda ctx, g: (g,), "add_scalar")

identity = register_custom_backward(lambda ctx, a: a.copy(), lambda ctx, g: (g,), "identity")


def _sigmoid_fwd(ctx, a):
    out = 1.0 / (1.0 + np.exp(-a.astype(np.float64)))
    ctx.out = out.astype(DTYPE)
    return ctx.out


sigmoid = register_custom_backward(
    _sigmoid_fwd, lambda ctx, g: (g * ctx.out * (1 - ctx.out),), "sigmoid"
)


# ---------------------------------------------------------------- shape ops


def _reshape_fwd(ctx, a, shape):
    ctx.shape = a.shape
    try:
        return a.reshape(shape)
    except ValueError as exc:
        raise ConfigError(f"reshape: {exc}") from None


reshape = register_custom_backward(_reshape_fwd, lambda ctx, g: (g.reshape(ctx.shape),), "reshape")


def _sum_fwd(ctx, a, axis=None):
    ctx.shape, ctx.axis = a.shape, axis
    return np.sum(a, axis=axis)


def _sum_bwd(ctx, g):
    if ctx.axis is None:
        return (np.full(ctx.shape, g, dtype=DTYPE),)
    return (np.broadcast_to(np.expand_dims(g, ctx.axis), ctx.shape).copy(),)


sum_ = register_custom_backward(_sum_fwd, _sum_bwd, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return scale(sum_(x, axis=axis), c=1.0 / n)


def _take_fwd(ctx, a, index):
    ctx.shape, ctx.index = a.shape, index
    return a[index].copy()


def _take_bwd(ctx, g):
    out = np.zeros(ctx.shape, dtype=DTYPE)
    out[ctx.index] = g
    return (out,)


take = register_custom_backward(_take_fwd, _take_bwd, "take")


def _stack_fwd(ctx, *arrays):
    ctx.n = len(arrays)
    return np.stack(arrays, axis=0)


stack_op = register_custom_backward(_stack_fwd, lambda ctx, g: tuple(g[i] for i in range(ctx.n)), "stack")


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack along a new leading axis."""
    if not tensors:
        raise ConfigError("stack of an empty sequence")
    return stack_op(*tensors)


# ---------------------------------------------------------------- dense layers


def _matmul_fwd(ctx, a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ConfigError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ctx.a, ctx.b = a, b
    return a @ b


matmul = register_custom_backward(_matmul_fwd, lambda ctx, g: (g @ ctx.b.T, ctx.a.T @ g), "matmul")


def _linear_fwd(ctx, x, w, b):
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ConfigError(f"linear: incompatible shapes x{x.shape} w{w.shape} b{b.shape}")
    ctx.x, ctx.w = x, w
    return x @ w + b


def _linear_bwd(ctx, g):
    return g @ ctx.w.T, ctx.x.T @ g, g.sum(axis=0)


linear = register_custom_backward(_linear_fwd, _linear_bwd, "linear")


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if span < 0 or span % stride:
        raise ConfigError(
            f"conv2d: input {size} with kernel {kernel}, stride {stride}, padding {padding} "
            "gives a non-integral output size"
        )
    return span // stride + 1


def _conv2d_fwd(ctx, x, w, b, stride=1, padding=0):
    if x.ndim != 4 or w.ndim != 4 or w.shape[1] != x.shape[1] or w.shape[2] != w.shape[3]:
        raise ConfigError(f"conv2d: incompatible shapes x{x.shape} w{w.shape}")
    if b.shape != (w.shape[0],):
        raise ConfigError(f"conv2d: bias shape {b.shape} for {w.shape[0]} output channels")
    bsz, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(wd, k, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(bsz * ho * wo, cin * k * k)
    wmat = w.reshape(cout, cin * k * k)
    out = cols @ wmat.T + b
    ctx.cols, ctx.wmat = cols, wmat
    ctx.geom = (x.shape, w.shape, stride, padding, ho, wo)
    return out.reshape(bsz, ho, wo, cout).transpose(0, 3, 1, 2)


def _conv2d_bwd(ctx, g):
    (bsz, cin, h, wd), wshape, stride, padding, ho, wo = ctx.geom
    cout, _, k, _ = wshape
    g2 = g.transpose(0, 2, 3, 1).reshape(bsz * ho * wo, cout)
    gw = (g2.T @ ctx.cols).reshape(wshape)
    gb = g2.sum(axis=0)
    gcols = (g2 @ ctx.wmat).reshape(bsz, ho, wo, cin, k, k)
    gxp = np.zeros((bsz, cin, h + 2 * padding, wd + 2 * padding), dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    gx = gxp[:, :, padding : padding + h, padding : padding + wd] if padding else gxp
    return gx, gw, gb


conv2d = register_custom_backward(_conv2d_fwd, _conv2d_bwd, "conv2d")


def _avgpool_fwd(ctx, x, k, stride=None):
    stride = stride or k
    if x.ndim != 4 or k > x.shape[2] or k > x.shape[3]:
        raise ConfigError(f"avgpool2d: window {k} larger than input {x.shape[2:]}")
    ho = (x.shape[2] - k) // stride + 1
    wo = (x.shape[3] - k) // stride + 1
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    ctx.geom = (x.shape, k, stride, ho, wo)
    return win.mean(axis=(4, 5))


def _avgpool_bwd(ctx, g):
    shape, k, stride, ho, wo = ctx.geom
    gx = np.zeros(shape, dtype=DTYPE)
    share = g / DTYPE(k * k)
    for i in range(k):
        for j in range(k):
            gx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += share
    return (gx,)


avgpool2d = register_custom_backward(_avgpool_fwd, _avgpool_bwd, "avgpool2d")


def _channel_axes(x):
    if x.ndim < 2:
        raise ConfigError("batch norm needs at least (batch, channel) dims")
    return (0,) + tuple(range(2, x.ndim))


def _bcast(v, ndim):
    return v.reshape((1, -1) + (1,) * (ndim - 2))


def _batchnorm_fwd(ctx, x, gamma, beta, eps=1e-5):
    axes = _channel_axes(x)
    mu = x.mean(axis=axes, dtype=np.float64)
    var = x.var(axis=axes, dtype=np.float64)
    inv = (1.0 / np.sqrt(var + eps)).astype(DTYPE)
    xhat = (x - _bcast(mu.astype(DTYPE), x.ndim)) * _bcast(inv, x.ndim)
    ctx.xhat, ctx.inv, ctx.gamma, ctx.axes = xhat, inv, gamma, axes
    ctx.batch_mean, ctx.batch_var = mu, var
    ctx.count = x.size // x.shape[1]
    return xhat * _bcast(gamma, x.ndim) + _bcast(beta, x.ndim)


def _batchnorm_bwd(ctx, g):
    nd, axes, m = g.ndim, ctx.axes, ctx.count
    dbeta = g.sum(axis=axes)
    dgamma = (g * ctx.xhat).sum(axis=axes)
    dxhat = g * _bcast(ctx.gamma, nd)
    sum_d = _bcast(dxhat.sum(axis=axes), nd)
    sum_dx = _bcast((dxhat * ctx.xhat).sum(axis=axes), nd)
    dx = _bcast(ctx.inv / DTYPE(m), nd) * (DTYPE(m) * dxhat - sum_d - ctx.xhat * sum_dx)
    return dx, dgamma, dbeta


batchnorm = register_custom_backward(_batchnorm_fwd, _batchnorm_bwd, "batchnorm")


def _affine_fwd(ctx, x, scale_, shift):
    _channel_axes(x)
    ctx.x, ctx.scale, ctx.axes = x, scale_, _channel_axes(x)
    return x * _bcast(scale_, x.ndim) + _bcast(shift, x.ndim)


def _affine_bwd(ctx, g):
    return g * _bcast(ctx.scale, g.ndim), (g * ctx.x).sum(axis=ctx.axes), g.sum(axis=ctx.axes)


channel_affine = register_custom_backward(_affine_fwd, _affine_bwd, "channel_affine")


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------- tensor files

_MAGIC = b"MLTN"
_VERSION = 1
_DTYPE_F32 = 0


def tensor_to_bytes(array) -> bytes:
    arr = np.asarray(array.data if isinstance(array, Tensor) else array, dtype="<f4")
    if arr.ndim > 255:
        raise ConfigError("tensor rank above 255 cannot be serialized")
    header = _MAGIC + struct.pack("<BBB", _VERSION, _DTYPE_F32, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr).tobytes()


def tensor_from_bytes(blob: bytes) -> np.ndarray:
    if len(blob) < 7 or blob[:4] != _MAGIC:
        raise DataError("not a tensor file (bad magic)")
    version, dtype, rank = struct.unpack_from("<BBB", blob, 4)
    if version != _VERSION or dtype != _DTYPE_F32:
        raise DataError(f"unsupported tensor file version={version} dtype={dtype}")
    offset = 7 + 4 * rank
    if len(blob) < offset:
        raise DataError("truncated tensor header")
    shape = struct.unpack_from(f"<{rank}I", blob, 7)
    count = int(np.prod(shape, dtype=np.int64))
    if len(blob) != offset + 4 * count:
        raise DataError(f"tensor payload size mismatch for shape {shape}")
    return np.frombuffer(blob, dtype="<f4", offset=offset).reshape(shape).astype(DTYPE)


def save_tensor(path, array) -> None:
    Path(path).write_bytes(tensor_to_bytes(array))


def load_tensor(path) -> np.ndarray:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read tensor file {path}: {exc}") from None
    return tensor_from_bytes(blob)
