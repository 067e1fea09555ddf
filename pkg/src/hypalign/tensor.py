"""Minimal reverse-mode autodiff over float64 numpy arrays (rank <= 3).

Just enough substrate to build and train the learned blocks of the aligner:
linear layers, layer norm, ReLU, softmax, concatenation and batched matmul.
Everything is deterministic: identical seeds and inputs give bit-identical
outputs, which the artifact-level determinism tests rely on.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericalError, ShapeError

Array = np.ndarray

_grad_enabled = True
_walk_stamp = 0          # generation marker for backward's graph walk


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (fast inference path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A float64 array plus an optional gradient and backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward",
                 "_seen")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 3:
            raise ShapeError(f"rank {arr.ndim} > 3 is unsupported")
        self.data = arr
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array], None] | None = None
        self._seen = 0

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _op(data: Array, parents: tuple["Tensor", ...], backward) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._parents = ()
        out._backward = None
        out._seen = 0
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
        return out

    # -- bookkeeping ----------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, g: Array) -> None:
        # First write owns its storage (g may be a view); later writes rebind,
        # never mutate, so shared upstream arrays stay intact.
        if self.grad is None:
            self.grad = np.array(g) if g.base is not None else g
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        """Reverse-mode accumulation from a scalar root."""
        if self.data.size != 1:
            raise ContractError("backward requires a scalar loss root")
        if not np.isfinite(self.data).all():
            raise NumericalError("backward from non-finite loss")
        global _walk_stamp
        _walk_stamp += 1
        stamp = _walk_stamp
        topo: list[Tensor] = []
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if node._seen == stamp:
                continue
            # mark at expansion, not at push: a node reachable over paths of
            # unequal depth must sort after every consumer, and duplicate
            # stack entries (deduped here) are what guarantee that
            node._seen = stamp
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and p._seen != stamp:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    @property
    def T(self):
        if self.ndim != 2:
            raise ShapeError(".T is defined for rank-2 tensors only")
        return swapaxes(self, 0, 1)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic -----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return Tensor._op(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return Tensor._op(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return Tensor._op(out_data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out_data / b.data, b.data.shape))

    return Tensor._op(out_data, (a, b), backward)


# -- matmul ----------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """np.matmul for rank 2/3 operands, with a single leading batch dim.

    Supported: 2Dx2D, 3Dx3D (equal batch), 3Dx2D and 2Dx3D (batch broadcast).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must be rank 2 or 3")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.data.shape} x {b.data.shape}")
    if a.ndim == 3 and b.ndim == 3 and a.data.shape[0] != b.data.shape[0]:
        raise ShapeError(f"matmul batch dims disagree: {a.data.shape} x {b.data.shape}")
    out_data = np.matmul(a.data, b.data)

    def backward(g: Array) -> None:
        if a.requires_grad:
            ga = np.matmul(g, b.data.swapaxes(-1, -2))
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(a.data.swapaxes(-1, -2), g)
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return Tensor._op(out_data, (a, b), backward)


# -- nonlinearities ----------------------------------------------------------------


def relu(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.maximum(x.data, 0.0)

    def backward(g: Array) -> None:
        x._accumulate(g * (x.data > 0.0))

    return Tensor._op(out_data, (x,), backward)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.tanh(x.data)

    def backward(g: Array) -> None:
        x._accumulate(g * (1.0 - out_data * out_data))

    return Tensor._op(out_data, (x,), backward)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.exp(x.data)

    def backward(g: Array) -> None:
        x._accumulate(g * out_data)

    return Tensor._op(out_data, (x,), backward)


def sqrt(x) -> Tensor:
    """Square root with a zero subgradient at 0 (keeps speed-of-zero anchors finite)."""
    x = as_tensor(x)
    out_data = np.sqrt(x.data)

    def backward(g: Array) -> None:
        safe = np.where(out_data > 0.0, out_data, 1.0)
        x._accumulate(g * np.where(out_data > 0.0, 0.5 / safe, 0.0))

    return Tensor._op(out_data, (x,), backward)


def absolute(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.abs(x.data)

    def backward(g: Array) -> None:
        x._accumulate(g * np.sign(x.data))

    return Tensor._op(out_data, (x,), backward)


def sin(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.sin(x.data)

    def backward(g: Array) -> None:
        x._accumulate(g * np.cos(x.data))

    return Tensor._op(out_data, (x,), backward)


def cos(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.cos(x.data)

    def backward(g: Array) -> None:
        x._accumulate(-g * np.sin(x.data))

    return Tensor._op(out_data, (x,), backward)


def atan2(y, x) -> Tensor:
    y, x = as_tensor(y), as_tensor(x)
    out_data = np.arctan2(y.data, x.data)

    def backward(g: Array) -> None:
        denom = x.data * x.data + y.data * y.data
        if y.requires_grad:
            y._accumulate(_unbroadcast(g * x.data / denom, y.data.shape))
        if x.requires_grad:
            x._accumulate(_unbroadcast(-g * y.data / denom, x.data.shape))

    return Tensor._op(out_data, (y, x), backward)


def where(mask: Array, a, b) -> Tensor:
    """Select from `a`/`b` by a boolean ndarray mask (mask carries no gradient)."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    out_data = np.where(mask, a.data, b.data)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.where(mask, g, 0.0), a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.where(mask, 0.0, g), b.data.shape))

    return Tensor._op(out_data, (a, b), backward)


# -- shape ops --------------------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.reshape(shape)

    def backward(g: Array) -> None:
        x._accumulate(g.reshape(x.data.shape))

    return Tensor._op(out_data, (x,), backward)


def swapaxes(x, a: int, b: int) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.swapaxes(a, b)

    def backward(g: Array) -> None:
        x._accumulate(g.swapaxes(a, b))

    return Tensor._op(out_data, (x,), backward)


def take(x, key) -> Tensor:
    """Basic (slice/int) indexing; backward scatters into zeros."""
    x = as_tensor(x)
    out_data = x.data[key]

    def backward(g: Array) -> None:
        gx = np.zeros_like(x.data)
        gx[key] = g
        x._accumulate(gx)

    return Tensor._op(out_data, (x,), backward)


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(x) for x in xs]
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]

    def backward(g: Array) -> None:
        offset = 0
        for t, n in zip(ts, sizes):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis if axis >= 0 else g.ndim + axis] = slice(offset, offset + n)
                t._accumulate(g[tuple(idx)])
            offset += n

    return Tensor._op(out_data, tuple(ts), backward)


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(x) for x in xs]
    out_data = np.stack([t.data for t in ts], axis=axis)

    def backward(g: Array) -> None:
        slabs = np.moveaxis(g, axis, 0)
        for t, slab in zip(ts, slabs):
            if t.requires_grad:
                t._accumulate(slab)

    return Tensor._op(out_data, tuple(ts), backward)


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g: Array) -> None:
        if axis is None:
            x._accumulate(np.broadcast_to(g, x.data.shape))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.data.shape))

    return Tensor._op(out_data, (x,), backward)


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.mean(axis=axis, keepdims=keepdims)
    n = x.data.size if axis is None else x.data.shape[axis]

    def backward(g: Array) -> None:
        gg = g / n
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        x._accumulate(np.broadcast_to(gg, x.data.shape))

    return Tensor._op(out_data, (x,), backward)


# -- fused primitives -----------------------------------------------------------------


def softmax(x, axis: int = -1) -> Tensor:
    """Max-stabilized softmax along `axis`; rows sum to 1 within 1e-12."""
    x = as_tensor(x)
    if not np.isfinite(x.data).all():
        raise NumericalError("softmax on non-finite input")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g: Array) -> None:
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        x._accumulate(out_data * (g - inner))

    return Tensor._op(out_data, (x,), backward)


def normalize_lastaxis(x, eps: float = 1e-5) -> Tensor:
    """(x - mean) / sqrt(var + eps) over the last axis (layer-norm core)."""
    x = as_tensor(x)
    if x.data.shape[-1] == 0:
        raise ShapeError("normalize over zero-length axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    std = np.sqrt(var + eps)
    out_data = centered / std

    def backward(g: Array) -> None:
        gm = g.mean(axis=-1, keepdims=True)
        gxm = (g * out_data).mean(axis=-1, keepdims=True)
        x._accumulate((g - gm - out_data * gxm) / std)

    return Tensor._op(out_data, (x,), backward)


def smooth_l1(pred, target, beta: float = 1.0) -> Tensor:
    """Elementwise smooth-L1 (Huber) between `pred` and a constant target."""
    diff = sub(pred, as_tensor(target))
    a = absolute(diff)
    quad = mul(mul(diff, diff), 0.5 / beta)
    lin = sub(a, 0.5 * beta)
    return where(a.data < beta, quad, lin)


# -- layers ---------------------------------------------------------------------------


class Linear:
    """Affine layer y = x @ W.T + b with uniform(+-sqrt(1/in)) init."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        bound = math.sqrt(1.0 / in_dim)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(out_dim, in_dim)), requires_grad=True)
        self.bias = Tensor(rng.uniform(-bound, bound, size=(out_dim,)), requires_grad=True)

    @property
    def in_dim(self) -> int:
        return self.weight.data.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.data.shape[0]

    def __call__(self, x) -> Tensor:
        return add(matmul(as_tensor(x), self.weight.T), self.bias)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class LayerNorm:
    """Layer normalization over the last axis with learnable gain/shift."""

    def __init__(self, dim: int, eps: float = 1e-5):
        if eps <= 0:
            raise ContractError("layer-norm epsilon must be positive")
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.shift = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return add(mul(normalize_lastaxis(x, self.eps), self.gain), self.shift)

    def parameters(self) -> list[Tensor]:
        return [self.gain, self.shift]


class MLP:
    """Linear -> ReLU -> ... -> Linear stack."""

    def __init__(self, dims: Sequence[int], rng: np.random.Generator):
        if len(dims) < 2:
            raise ContractError("MLP needs at least input and output dims")
        self.layers = [Linear(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)]

    def __call__(self, x) -> Tensor:
        h = as_tensor(x)
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i + 1 < len(self.layers):
                h = relu(h)
        return h

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


# -- optimizer ---------------------------------------------------------------------


class Adam:
    """Adam with bias correction; deterministic given the update sequence."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self._buf = [np.empty_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        b1t = 1.0 - self.beta1 ** self.step_count
        b2t = 1.0 - self.beta2 ** self.step_count
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            m, v, buf = self.m[i], self.v[i], self._buf[i]
            # in-place moment updates through one scratch buffer: this loop
            # runs once per training step over every parameter, so
            # temporaries dominate its cost
            m *= self.beta1
            np.multiply(g, 1.0 - self.beta1, out=buf)
            m += buf
            v *= self.beta2
            np.multiply(g, g, out=buf)
            buf *= 1.0 - self.beta2
            v += buf
            np.divide(v, b2t, out=buf)
            np.sqrt(buf, out=buf)
            buf += self.eps
            np.divide(m, buf, out=buf)
            buf *= self.lr / b1t
            p.data = p.data - buf


# -- backend namespaces -----------------------------------------------------------------
#
# The motion models and the aligner forward pass are written once against this
# tiny ops protocol and run under two interchangeable backends: Tensor (graph
# building, for training/backprop) and raw numpy (for finite-difference and
# hot inference paths). Both backends execute the identical numpy primitive
# sequence, so their outputs are bit-identical.


class TensorBackend:
    is_tensor = True

    sin = staticmethod(sin)
    cos = staticmethod(cos)
    sqrt = staticmethod(sqrt)
    tanh = staticmethod(tanh)
    relu = staticmethod(relu)
    where = staticmethod(where)
    softmax = staticmethod(softmax)
    matmul = staticmethod(matmul)

    @staticmethod
    def value(x) -> Array:
        return x.data if isinstance(x, Tensor) else np.asarray(x)

    @staticmethod
    def const(x):
        return as_tensor(x)

    @staticmethod
    def stack(xs, axis=0):
        return stack(xs, axis=axis)

    @staticmethod
    def concat(xs, axis=-1):
        return concat(xs, axis=axis)

    @staticmethod
    def reshape(x, shape):
        return reshape(x, shape)

    @staticmethod
    def swapaxes(x, a, b):
        return swapaxes(x, a, b)

    @staticmethod
    def linear(x, layer: "Linear"):
        return layer(x)

    @staticmethod
    def layernorm(x, ln: "LayerNorm"):
        return ln(x)

    @staticmethod
    def mlp(x, net: "MLP"):
        return net(x)


class NumpyBackend:
    is_tensor = False

    sin = staticmethod(np.sin)
    cos = staticmethod(np.cos)
    tanh = staticmethod(np.tanh)
    sqrt = staticmethod(np.sqrt)

    @staticmethod
    def relu(x):
        return np.maximum(x, 0.0)

    @staticmethod
    def where(mask, a, b):
        return np.where(mask, a, b)

    @staticmethod
    def softmax(x, axis=-1):
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=axis, keepdims=True)

    @staticmethod
    def matmul(a, b):
        return np.matmul(a, b)

    @staticmethod
    def value(x) -> Array:
        return x

    @staticmethod
    def const(x):
        return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)

    @staticmethod
    def stack(xs, axis=0):
        return np.stack(xs, axis=axis)

    @staticmethod
    def concat(xs, axis=-1):
        return np.concatenate(xs, axis=axis)

    @staticmethod
    def reshape(x, shape):
        return x.reshape(shape)

    @staticmethod
    def swapaxes(x, a, b):
        return x.swapaxes(a, b)

    @staticmethod
    def linear(x, layer: "Linear"):
        return np.matmul(x, layer.weight.data.T) + layer.bias.data

    @staticmethod
    def layernorm(x, ln: "LayerNorm"):
        # mirrors normalize_lastaxis + affine, op for op
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        out = centered / np.sqrt(var + ln.eps)
        return out * ln.gain.data + ln.shift.data

    @staticmethod
    def mlp(x, net: "MLP"):
        h = x
        last = len(net.layers) - 1
        for i, layer in enumerate(net.layers):
            h = np.matmul(h, layer.weight.data.T) + layer.bias.data
            if i < last:
                h = np.maximum(h, 0.0)
        return h


TENSOR_OPS = TensorBackend()
NUMPY_OPS = NumpyBackend()


def active_ops():
    """Tensor backend when gradients are enabled, numpy backend otherwise."""
    return TENSOR_OPS if _grad_enabled else NUMPY_OPS


# -- gradient checking ----------------------------------------------------------------


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], *,
               step: float = 1e-5,
               mutate_grads: Callable[[Sequence[Tensor]], None] | None = None,
               max_coords: int | None = None) -> float:
    """Max relative error between backprop and central finite differences.

    `f` must rebuild its graph on every call and return a scalar. The
    finite-difference probes run under `no_grad`, so objectives written
    against `active_ops()` come back as plain numpy scalars there; both
    return types are accepted. `mutate_grads` is a testing seam: it may
    corrupt the analytic gradients after backward so negative controls can
    prove the check has teeth. `max_coords` caps the probed coordinates per
    parameter (evenly strided, always including index 0) so wide layers stay
    affordable; None probes every coordinate.
    """

    def scalar() -> float:
        out = f()
        return float(np.asarray(out.data if isinstance(out, Tensor) else out))

    for p in params:
        p.grad = None
    loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericalError("grad_check objective is non-finite")
    loss.backward()
    if mutate_grads is not None:
        mutate_grads(params)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                for p in params]

    worst = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            gflat = ga.reshape(-1)
            if max_coords is None or flat.size <= max_coords:
                coords = range(flat.size)
            else:
                coords = np.unique(np.linspace(0, flat.size - 1, max_coords,
                                               dtype=np.intp))
            for i in coords:
                orig = flat[i]
                flat[i] = orig + step
                fp = scalar()
                flat[i] = orig - step
                fm = scalar()
                flat[i] = orig
                numeric = (fp - fm) / (2.0 * step)
                denom = max(abs(gflat[i]), abs(numeric), 1e-8)
                err = abs(gflat[i] - numeric) / denom
                if err > worst:
                    worst = err
    return worst
