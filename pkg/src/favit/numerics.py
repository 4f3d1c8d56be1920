"""Reverse-mode automatic differentiation on numpy arrays.

Tensors are thin wrappers around ndarrays and are treated as immutable.
Operations compute eagerly and, while a Tape is active, record a
vector-Jacobian closure so the tape can replay the graph backwards from
a scalar loss.  Gradients accumulate into Parameter.grad, so calling
backward twice doubles the stored gradient.

An OpMeter can be installed as a context manager to count
multiply-accumulates, elementwise operations, tagged attention score
entries, and peak live tensor bytes.  Counters are exact and
deterministic; they are only updated while a meter is active.
"""

from __future__ import annotations

import math
import weakref
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, NumericError

_TAPES: list = []
_METERS: list = []
_STRICT = [False]

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def set_strict(flag: bool) -> None:
    """Globally enable or disable finiteness checking of op outputs."""
    _STRICT[0] = bool(flag)


class strict_numerics:
    """Context manager that turns on finiteness checking of op outputs."""

    def __init__(self, flag: bool = True):
        self.flag = flag

    def __enter__(self):
        self.prev = _STRICT[0]
        _STRICT[0] = self.flag
        return self

    def __exit__(self, *exc):
        _STRICT[0] = self.prev
        return False


class Tensor:
    """Immutable-by-convention ndarray wrapper. Do not write to .data."""

    def __init__(self, data: np.ndarray):
        self.data = data
        m = _METERS[-1] if _METERS else None
        if m is not None:
            m._alloc(self, data)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def tensor(data, dtype=None) -> Tensor:
    """Wrap array-like data as a leaf Tensor.  Rejects NaN/Inf input."""
    arr = np.asarray(data, dtype=dtype)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite values in tensor input")
    return _wrap(arr, "tensor")


def _wrap(arr: np.ndarray, op: str) -> Tensor:
    if _STRICT[0] and not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by op '{op}'")
    return Tensor(arr)


def _coerce(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return tensor(x, dtype=dtype)


class Tape:
    """Records ops for reverse-mode differentiation.

    Only the innermost active tape records.  The tape holds references
    to every input and output tensor of its ops, so intermediates stay
    alive until the tape is dropped.
    """

    def __init__(self):
        self._ops = []  # (out Tensor, input Tensors, vjp)

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def record(self, out: Tensor, inputs: Sequence[Tensor], vjp: Callable) -> None:
        self._ops.append((out, tuple(inputs), vjp))

    def gradients(self, loss: Tensor, wrt: Sequence[Tensor]) -> list:
        """Gradients of a scalar loss with respect to each tensor in wrt."""
        if loss.data.size != 1:
            raise NumericError("backward requires a scalar loss")
        adjoint = {id(loss): np.ones_like(loss.data)}
        for out, inputs, vjp in reversed(self._ops):
            g = adjoint.get(id(out))
            if g is None:
                continue
            for inp, gi in zip(inputs, vjp(g)):
                if gi is None:
                    continue
                prev = adjoint.get(id(inp))
                adjoint[id(inp)] = gi if prev is None else prev + gi
        out_grads = []
        for t in wrt:
            g = adjoint.get(id(t))
            out_grads.append(np.zeros_like(t.data) if g is None else g)
        return out_grads

    def backward(self, loss: Tensor, params: Iterable["Parameter"]) -> None:
        """Accumulate dloss/dparam into each parameter's .grad."""
        params = list(params)
        grads = self.gradients(loss, [p.value for p in params])
        for p, g in zip(params, grads):
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter '{p.name}'")
            p.grad += g


def _record(out: Tensor, inputs: Sequence[Tensor], vjp: Callable) -> None:
    if _TAPES:
        _TAPES[-1].record(out, inputs, vjp)


class Parameter:
    """A named trainable value with an accumulated gradient buffer."""

    def __init__(self, data, name: str):
        arr = np.array(data, copy=True)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.name = name
        self.value = Tensor(arr)
        self.grad = np.zeros_like(arr)

    @property
    def shape(self):
        return self.value.data.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def assign(self, arr: np.ndarray) -> None:
        if arr.shape != self.value.data.shape:
            raise NumericError(f"shape mismatch assigning parameter '{self.name}'")
        self.value = Tensor(np.asarray(arr, dtype=self.value.data.dtype))

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.value.data.shape})"


# ---------------------------------------------------------------------------
# instrumentation


class OpMeter:
    """Counts work done by ops while installed.

    macs:   multiply-accumulates performed by matmul
    elem:   elementwise work units (one per output element for map-style
        ops, one per input element for reductions)
    scores: attention score entries, keyed by caller-supplied tag
    peak_bytes: high-water mark of live bytes across tensors allocated
        while the meter was active (views of existing buffers count 0)
    """

    def __init__(self):
        self.macs = 0
        self.elem = 0
        self.scores: dict = {}
        self.peak_bytes = 0
        self._live = 0

    def __enter__(self):
        _METERS.append(self)
        return self

    def __exit__(self, *exc):
        _METERS.pop()
        return False

    def add_macs(self, n: int) -> None:
        self.macs += int(n)

    def add_elem(self, n: int) -> None:
        self.elem += int(n)

    def add_scores(self, tag: str, n: int) -> None:
        self.scores[tag] = self.scores.get(tag, 0) + int(n)

    def total_scores(self) -> int:
        return sum(self.scores.values())

    def _alloc(self, t: Tensor, arr: np.ndarray) -> None:
        nbytes = 0 if arr.base is not None else arr.nbytes
        if nbytes == 0:
            return
        self._live += nbytes
        if self._live > self.peak_bytes:
            self.peak_bytes = self._live
        weakref.finalize(t, self._free, nbytes)

    def _free(self, nbytes: int) -> None:
        self._live -= nbytes


def active_meter() -> Optional[OpMeter]:
    return _METERS[-1] if _METERS else None


def add_score_entries(tag: str, n: int) -> None:
    """Report n attention score entries to the active meter, if any."""
    m = active_meter()
    if m is not None:
        m.add_scores(tag, n)


def _meter_matmul(a: np.ndarray, b: np.ndarray) -> None:
    m = active_meter()
    if m is not None:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        m.add_macs(int(np.prod(batch, dtype=np.int64)) * a.shape[-2] * a.shape[-1] * b.shape[-1])


def _meter_elem(out: np.ndarray) -> None:
    m = active_meter()
    if m is not None:
        m.add_elem(out.size)


def mac_count_matmul(m: int, k: int, n: int, batch: int = 1) -> int:
    """Closed-form multiply-accumulate count of an (m,k)@(k,n) matmul."""
    return batch * m * k * n


# ---------------------------------------------------------------------------
# ops


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to `shape`, inverting numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.ndim < 2 or b.ndim < 2:
        raise NumericError("matmul operands must have at least 2 dimensions")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise NumericError(
            f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    _meter_matmul(a.data, b.data)
    with np.errstate(over="ignore", invalid="ignore"):
        out = _wrap(a.data @ b.data, "matmul")

    def vjp(g):
        ga = _reduce_to(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        gb = _reduce_to(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
        return ga, gb

    _record(out, (a, b), vjp)
    return out


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = _wrap(a.data + b.data, "add")
    _meter_elem(out.data)

    def vjp(g):
        return _reduce_to(g, a.data.shape), _reduce_to(g, b.data.shape)

    _record(out, (a, b), vjp)
    return out


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = _wrap(a.data - b.data, "sub")
    _meter_elem(out.data)

    def vjp(g):
        return _reduce_to(g, a.data.shape), _reduce_to(-g, b.data.shape)

    _record(out, (a, b), vjp)
    return out


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = _wrap(a.data * b.data, "mul")
    _meter_elem(out.data)

    def vjp(g):
        return _reduce_to(g * b.data, a.data.shape), _reduce_to(g * a.data, b.data.shape)

    _record(out, (a, b), vjp)
    return out


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _wrap(a.data / b.data, "div")
    _meter_elem(out.data)

    def vjp(g):
        ga = _reduce_to(g / b.data, a.data.shape)
        gb = _reduce_to(-g * a.data / (b.data * b.data), b.data.shape)
        return ga, gb

    _record(out, (a, b), vjp)
    return out


def scale(a, s: float) -> Tensor:
    a = _coerce(a)
    s = float(s)
    out = _wrap(a.data * s, "scale")
    _meter_elem(out.data)

    def vjp(g):
        return (g * s,)

    _record(out, (a,), vjp)
    return out


def tanh(a) -> Tensor:
    a = _coerce(a)
    y = np.tanh(a.data)
    out = _wrap(y, "tanh")
    _meter_elem(out.data)

    def vjp(g):
        return (g * (1.0 - y * y),)

    _record(out, (a,), vjp)
    return out


def relu(a) -> Tensor:
    a = _coerce(a)
    out = _wrap(np.maximum(a.data, 0.0), "relu")
    _meter_elem(out.data)

    def vjp(g):
        return (g * (a.data > 0.0),)

    _record(out, (a,), vjp)
    return out


def gelu(a) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    a = _coerce(a)
    x = a.data
    inner = _GELU_C * (x + _GELU_A * x ** 3)
    t = np.tanh(inner)
    out = _wrap(0.5 * x * (1.0 + t), "gelu")
    _meter_elem(out.data)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        return (g * dy,)

    _record(out, (a,), vjp)
    return out


def softmax_rows(a) -> Tensor:
    """Softmax over the last axis, shifted by the row maximum."""
    a = _coerce(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = _wrap(y, "softmax_rows")
    _meter_elem(out.data)

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    _record(out, (a,), vjp)
    return out


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance, then affine."""
    x, gamma, beta = _coerce(x), _coerce(gamma), _coerce(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = _wrap(gamma.data * xhat + beta.data, "layer_norm")
    _meter_elem(out.data)

    def vjp(g):
        gh = g * gamma.data
        m1 = gh.mean(axis=-1, keepdims=True)
        m2 = (gh * xhat).mean(axis=-1, keepdims=True)
        gx = (gh - m1 - xhat * m2) * inv
        axes = tuple(range(g.ndim - 1))
        ggamma = _reduce_to((g * xhat).sum(axis=axes), gamma.data.shape)
        gbeta = _reduce_to(g.sum(axis=axes), beta.data.shape)
        return gx, ggamma, gbeta

    _record(out, (x, gamma, beta), vjp)
    return out


_ACTIVATIONS = {"tanh": tanh, "relu": relu, "gelu": gelu, "linear": None}


def mlp_forward(x, weights: Sequence, activation: str = "tanh") -> Tensor:
    """Affine chain with the activation between layers, none after the last.

    weights is a flat [w1, b1, w2, b2, ...] list of Parameters (or
    Tensors) defining each affine layer in order.
    """
    if activation not in _ACTIVATIONS:
        raise ConfigError(f"unknown activation '{activation}'")
    if not weights or len(weights) % 2:
        raise NumericError("weights must form (matrix, bias) pairs")
    act = _ACTIVATIONS[activation]
    out = _coerce(x)
    pairs = [(weights[i], weights[i + 1]) for i in range(0, len(weights), 2)]
    for n, (w, b) in enumerate(pairs):
        wt = w.value if isinstance(w, Parameter) else _coerce(w)
        bt = b.value if isinstance(b, Parameter) else _coerce(b)
        if out.data.shape[-1] != wt.data.shape[-2]:
            raise NumericError(
                f"mlp layer {n} width mismatch: input {out.data.shape} "
                f"vs weight {wt.data.shape}")
        out = add(matmul(out, wt), bt)
        if act is not None and n + 1 < len(pairs):
            out = act(out)
    return out


def cross_entropy_logits(logits, labels) -> Tensor:
    """Mean negative log likelihood of integer labels under row logits."""
    logits = _coerce(logits)
    z = logits.data
    if z.ndim != 2:
        raise NumericError("cross_entropy_logits expects (batch, classes) logits")
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != z.shape[0]:
        raise DataError("labels must be a vector matching the logits batch")
    if y.size and (y.min() < 0 or y.max() >= z.shape[1]):
        raise DataError("label out of range")
    y = y.astype(np.intp)
    n = z.shape[0]
    zmax = z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True)) + zmax
    nll = lse[:, 0] - z[np.arange(n), y]
    val = np.asarray(nll.mean(), dtype=z.dtype)
    if not np.isfinite(val):
        raise NumericError("non-finite cross entropy")
    out = Tensor(val)
    m = active_meter()
    if m is not None:
        m.add_elem(z.size)

    def vjp(g):
        p = np.exp(z - lse)
        p[np.arange(n), y] -= 1.0
        return (p * (g / n),)

    _record(out, (logits,), vjp)
    return out


def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    out = _wrap(a.data.reshape(shape), "reshape")

    def vjp(g):
        return (g.reshape(a.data.shape),)

    _record(out, (a,), vjp)
    return out


def transpose(a, axes) -> Tensor:
    a = _coerce(a)
    axes = tuple(axes)
    out = _wrap(np.transpose(a.data, axes), "transpose")
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (np.transpose(g, inv),)

    _record(out, (a,), vjp)
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_coerce(t) for t in tensors]
    out = _wrap(np.concatenate([t.data for t in ts], axis=axis), "concat")
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    _record(out, tuple(ts), vjp)
    return out


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` entries along `axis` starting at `start`."""
    a = _coerce(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = _wrap(np.ascontiguousarray(a.data[idx]), "narrow")

    def vjp(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    _record(out, (a,), vjp)
    return out


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    out = _wrap(a.data.sum(axis=axis, keepdims=keepdims), "sum")
    _meter_elem(a.data)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    _record(out, (a,), vjp)
    return out


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    if axis is None:
        count = a.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[i] for i in ax]))
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# optimization and verification


class AdamW:
    """Adam with decoupled weight decay applied to every parameter."""

    def __init__(self, params: Iterable[Parameter], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.05):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate parameter names in optimizer")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value.data) for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p in self.params:
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            theta = p.value.data
            p.assign(theta - self.lr * (update + self.weight_decay * theta))


def gradient_check(loss_fn: Callable[[], Tensor], params: Sequence[Parameter],
                   eps: float = 1e-5, sample: Optional[int] = None,
                   rng: Optional[np.random.Generator] = None) -> float:
    """Compare tape gradients of loss_fn against central differences.

    loss_fn must be deterministic and depend on the parameters only
    through their current values.  When `sample` is given, at most that
    many coordinates per parameter are probed (uniformly, without
    replacement).  Returns the worst relative error seen, where the
    relative error of analytic a versus numeric n is
    |a - n| / max(|a|, |n|, 1e-8).
    """
    with Tape() as tape:
        loss = loss_fn()
    grads = tape.gradients(loss, [p.value for p in params])
    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for p, g in zip(params, grads):
        n = p.value.data.size
        if sample is not None and sample < n:
            coords = rng.choice(n, size=sample, replace=False)
        else:
            coords = range(n)
        original = p.value
        for c in coords:
            bumped = original.data.copy()
            bumped.flat[c] += eps
            p.value = Tensor(bumped)
            hi = float(loss_fn().data)
            bumped = original.data.copy()
            bumped.flat[c] -= eps
            p.value = Tensor(bumped)
            lo = float(loss_fn().data)
            p.value = original
            numeric = (hi - lo) / (2.0 * eps)
            analytic = float(g.flat[c])
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            if rel > worst:
                worst = rel
    return worst
