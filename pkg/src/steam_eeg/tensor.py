"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation used by the networks lives here. A
:class:`Tensor` wraps a numpy array; operations on tensors that require
gradients record a node holding the parents and a closure mapping the output
gradient to parent gradients. :meth:`Tensor.backward` walks the recorded graph
once in reverse topological order and accumulates gradients into the leaves.

Convolutions are true (kernel-flipped) convolutions with stride support and
"same" zero padding by default. All values are 64-bit unless
:func:`set_default_dtype` selects otherwise.
"""

from __future__ import annotations

import contextlib
import zlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericalError, ShapeError

_DTYPE = np.float64
_GRAD_ENABLED = True


def set_default_dtype(dtype) -> None:
    global _DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DTYPE = dtype.type


def get_default_dtype():
    return _DTYPE


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    # -- basic properties -------------------------------------------------
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
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self):
        return len(self.data)

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported; use mul")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    # -- reverse pass -----------------------------------------------------
    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every leaf that requires grad.

        Leaf gradients add to any gradient already stored, so callers reset
        them between optimisation steps.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return
        order = _topological_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
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
    return order


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite value produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise -----------------------------------------------------------
def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), backward, "mul")


def scale(a, factor: float):
    factor = float(factor)
    return _make(a.data * factor, (a,), lambda g: (g * factor,), "scale")


def relu(a):
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0).astype(a.data.dtype), (a,),
                 lambda g: (g * mask,), "relu")


def tanh(a):
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a):
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    if np.any(a.data <= 0):
        raise NumericalError("log of non-positive value")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


# -- reductions and shape ops ----------------------------------------------
def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    count = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(tsum(a, axis, keepdims), 1.0 / count)


def reshape(a, shape):
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    out = np.transpose(a.data, axes)
    inverse = None if axes is None else np.argsort(axes)
    return _make(out, (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def _is_basic_index(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, np.integer, type(None), type(Ellipsis))) for i in items)


def getitem(a, index):
    out = a.data[index]
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out, copy=True), (a,), backward, "slice")


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return _make(out, tensors, backward, "concat")


def stack(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


# -- linear algebra --------------------------------------------------------
def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(out, (a, b), backward, "matmul")


# -- probabilities ---------------------------------------------------------
def softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), backward, "softmax")


def logsumexp_np(x, axis=-1, keepdims=False):
    """Stable log-sum-exp on plain arrays."""
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)


def log_softmax(a, axis=-1):
    out = a.data - logsumexp_np(a.data, axis=axis, keepdims=True)
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), backward, "log_softmax")


# -- convolution and pooling -----------------------------------------------
def _same_pad(k):
    return (k - 1) // 2, k // 2


def conv1d(x, w, b=None, padding="same"):
    """Convolve ``x`` (B, C_in, N) with ``w`` (C_out, C_in, k), stride 1."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with kernel {w.shape}")
    k = w.shape[2]
    left, right = _same_pad(k) if padding == "same" else (int(padding), int(padding))
    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right)))
    if xp.shape[2] < k:
        raise ShapeError(f"conv1d: input length {x.shape[2]} shorter than kernel {k}")
    win = sliding_window_view(xp, k, axis=2)[..., ::-1]  # (B, C_in, N_out, k)
    n_out = win.shape[2]
    out = np.tensordot(win, w.data, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
    parents = [x, w]
    if b is not None:
        b = _as_tensor(b)
        out = out + b.data[None, :, None]
        parents.append(b)
    out = np.ascontiguousarray(out)

    def backward(g):
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.tensordot(g, win, axes=([0, 2], [0, 2]))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                start = k - 1 - j
                gxp[:, :, start:start + n_out] += np.matmul(w.data[:, :, j].T, g)
            gx = gxp[:, :, left:left + x.shape[2]]
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2))
        return (gx, gw, gb) if b is not None else (gx, gw)

    return _make(out, parents, backward, "conv1d")


def conv2d(x, w, b=None, stride=1, padding="same"):
    """Convolve ``x`` (B, C_in, H, W) with ``w`` (C_out, C_in, kh, kw)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    kh, kw = w.shape[2:]
    if padding == "same":
        (top, bottom), (lft, rgt) = _same_pad(kh), _same_pad(kw)
    else:
        top = bottom = lft = rgt = int(padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (lft, rgt)))
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeError(f"conv2d: input {x.shape} smaller than kernel {w.shape}")
    s = int(stride)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s, ::-1, ::-1]
    ho, wo = win.shape[2], win.shape[3]
    out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    parents = [x, w]
    if b is not None:
        b = _as_tensor(b)
        out = out + b.data[None, :, None, None]
        parents.append(b)
    out = np.ascontiguousarray(out)

    def backward(g):
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        if x.requires_grad:
            gcol = np.tensordot(g, w.data, axes=([1], [0]))  # (B, ho, wo, C_in, kh, kw)
            gcol = gcol.transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    r0, c0 = kh - 1 - i, kw - 1 - j
                    gxp[:, :, r0:r0 + s * (ho - 1) + 1:s, c0:c0 + s * (wo - 1) + 1:s] += gcol[..., i, j]
            gx = gxp[:, :, top:top + x.shape[2], lft:lft + x.shape[3]]
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb) if b is not None else (gx, gw)

    return _make(out, parents, backward, "conv2d")


def max_pool1d(x, window=2):
    bsz, ch, n = x.shape
    m = n // window
    if m < 1:
        raise ShapeError(f"max_pool1d: length {n} shorter than window {window}")
    blocks = x.data[:, :, :m * window].reshape(bsz, ch, m, window)
    arg = blocks.argmax(axis=3)
    out = np.take_along_axis(blocks, arg[..., None], axis=3)[..., 0]

    def backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=3)
        full = np.zeros_like(x.data)
        full[:, :, :m * window] = gb.reshape(bsz, ch, m * window)
        return (full,)

    return _make(out, (x,), backward, "maxpool")


def max_pool2d(x, window=2):
    bsz, ch, h, w = x.shape
    mh, mw = h // window, w // window
    if mh < 1 or mw < 1:
        raise ShapeError(f"max_pool2d: input {x.shape} smaller than window {window}")
    crop = x.data[:, :, :mh * window, :mw * window]
    blocks = crop.reshape(bsz, ch, mh, window, mw, window).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(bsz, ch, mh, mw, window * window)
    arg = blocks.argmax(axis=4)
    out = np.take_along_axis(blocks, arg[..., None], axis=4)[..., 0]

    def backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=4)
        gb = gb.reshape(bsz, ch, mh, mw, window, window).transpose(0, 1, 2, 4, 3, 5)
        full = np.zeros_like(x.data)
        full[:, :, :mh * window, :mw * window] = gb.reshape(bsz, ch, mh * window, mw * window)
        return (full,)

    return _make(out, (x,), backward, "maxpool")


def global_avg_pool(x):
    """Average over every axis after the channel axis: (B, C, ...) -> (B, C)."""
    return mean(x, axis=tuple(range(2, x.ndim)))


# -- normalisation ---------------------------------------------------------
class BatchNormState:
    """Running statistics for one batch-normalisation site."""

    def __init__(self, channels, momentum=0.9, eps=1e-5):
        self.running_mean = np.zeros(channels, dtype=_DTYPE)
        self.running_var = np.ones(channels, dtype=_DTYPE)
        self.momentum = momentum
        self.eps = eps


def batch_norm(x, gamma, beta, state: BatchNormState, training=True):
    """Normalise per channel (axis 1) over batch and spatial axes."""
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    eps = state.eps
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        count = x.data.size // x.shape[1]
        unbiased = var * count / max(count - 1, 1)
        state.running_mean = state.momentum * state.running_mean + (1 - state.momentum) * mu
        state.running_var = state.momentum * state.running_var + (1 - state.momentum) * unbiased
    else:
        mu, var = state.running_mean, state.running_var
        count = None
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gx = None
        if x.requires_grad:
            scale_ = (gamma.data * inv_std).reshape(bshape)
            if training:
                gx = scale_ * (g - gbeta.reshape(bshape) / count - xhat * ggamma.reshape(bshape) / count)
            else:
                gx = g * scale_
        return gx, ggamma, gbeta

    return _make(out, (x, gamma, beta), backward, "batchnorm")


# -- parameters ------------------------------------------------------------
def param_rng(seed: int, name: str = "") -> np.random.Generator:
    """Philox counter-based generator keyed by ``(seed, crc32(name))``.

    Distinct names give independent streams from one seed, so parameters can
    be created in any order without changing each other's values.
    """
    key = np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf8"))])
    return np.random.Generator(np.random.Philox(key))


def glorot_bound(shape) -> float:
    shape = tuple(shape)
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    elif len(shape) == 2:
        fan_in, fan_out = shape
    else:
        receptive = int(np.prod(shape[2:]))
        fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(shape, scheme="glorot-uniform", seed=0, name="") -> Tensor:
    """Create a trainable tensor.

    ``glorot-uniform`` draws from U(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
    Dense weights are laid out (in, out); convolution kernels
    (out, in, *kernel). ``zeros`` and ``ones`` are also accepted.
    """
    shape = tuple(int(n) for n in shape)
    if any(n < 1 for n in shape):
        raise ShapeError(f"parameter dims must be positive, got {shape}")
    if scheme == "glorot-uniform":
        bound = glorot_bound(shape)
        values = param_rng(seed, name).uniform(-bound, bound, size=shape)
    elif scheme == "zeros":
        values = np.zeros(shape)
    elif scheme == "ones":
        values = np.ones(shape)
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return Tensor(values, requires_grad=True)


# -- gradient checking -----------------------------------------------------
def grad_check(fn, inputs, h=1e-5) -> float:
    """Compare analytic gradients against central differences.

    ``fn`` maps the input tensors to a scalar tensor. Returns the maximum over
    all input entries of |a - n| / max(1e-8, |a| + |n|).
    """
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    fn(*inputs).backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    worst = 0.0
    with no_grad():
        for t, a in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            grad_flat = a.reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + h
                f_plus = float(fn(*inputs).data)
                flat[i] = original - h
                f_minus = float(fn(*inputs).data)
                flat[i] = original
                numeric = (f_plus - f_minus) / (2 * h)
                err = abs(grad_flat[i] - numeric) / max(1e-8, abs(grad_flat[i]) + abs(numeric))
                worst = max(worst, err)
    return worst
