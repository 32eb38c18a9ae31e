"""Reverse-mode automatic differentiation over dense float64 arrays.

Every operation records its inputs and a backward closure on a dynamic
tape (the graph is rebuilt on every forward pass, so recurrent models can
unroll a fresh graph per step).  Calling ``backward()`` on a scalar loss
walks the tape in reverse topological order and accumulates gradients
into every reachable tensor with ``requires_grad=True``; a tensor used by
several consumers receives the sum of all path gradients.

Shapes follow numpy broadcasting.  Gradients flowing into a broadcast
input are sum-reduced back to that input's shape, which is what makes a
bias row added to a batch of rows receive the batch-summed gradient.

All values are float64.  Single-threaded numpy keeps every run bitwise
reproducible for a fixed seed.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError

# Floor for cosine-similarity denominators, so zero rows produce a score
# of 0 instead of 0/0.
EPS_NORM = 1e-8


class Tensor:
    """A float64 array plus the tape bookkeeping needed for backward."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = "leaf"
        self._parents = ()
        self._backward = None

    @classmethod
    def _from_op(cls, data, parents, backward, op: str) -> "Tensor":
        out = cls(data)
        if any(p.requires_grad for p in parents):
            # Only keep the tape alive where a gradient can flow; pure
            # inference builds no graph at all.
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        out.op = op
        return out

    # -- array-ish conveniences -------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, op={self.op!r}{flag})"

    # -- operators ---------------------------------------------------------
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    # -- backward ----------------------------------------------------------
    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded tape."""
        if self.data.ndim != 0:
            raise ContractError(
                f"backward() needs a scalar loss, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, ready = stack.pop()
            if ready:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


class Parameter(Tensor):
    """A named trainable tensor; owns its buffer."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum-reduce a broadcast gradient back to the original input shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += _unbroadcast(grad, t.data.shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return Tensor._from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return Tensor._from_op(a.data * b.data, (a, b), backward, "mul")


def one_minus(x) -> Tensor:
    """1 - x, the complement used by gated interpolation updates."""
    x = _as_tensor(x)

    def backward(g):
        _accumulate(x, -g)

    return Tensor._from_op(1.0 - x.data, (x,), backward, "one_minus")


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)

    def backward(g):
        _accumulate(x, g * (1.0 - out * out))

    return Tensor._from_op(out, (x,), backward, "tanh")


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    xd = x.data
    # Branchless stable logistic; the overflowing branch is never selected.
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-xd)), np.exp(xd) / (1.0 + np.exp(xd)))
    out = np.asarray(out, dtype=np.float64)

    def backward(g):
        _accumulate(x, g * out * (1.0 - out))

    return Tensor._from_op(out, (x,), backward, "sigmoid")


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "one_minus": one_minus,
}


# -- linear algebra ----------------------------------------------------------

def matmul(a, b) -> Tensor:
    """np.matmul semantics: 1-D operands are promoted and squeezed back;
    leading batch axes broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError("matmul: operands must have at least 1 dimension")
    if a.shape[-1] != (b.shape[-2] if b.ndim > 1 else b.shape[-1]):
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ad, bd = a.data, b.data
        A = ad[None, :] if ad.ndim == 1 else ad
        B = bd[:, None] if bd.ndim == 1 else bd
        G = g
        if bd.ndim == 1:
            G = G[..., None]
        if ad.ndim == 1:
            G = G[..., None, :]
        if a.requires_grad:
            ga = np.matmul(G, np.swapaxes(B, -1, -2))
            if ad.ndim == 1:
                ga = ga[..., 0, :]
            _accumulate(a, ga)
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(A, -1, -2), G)
            if bd.ndim == 1:
                gb = gb[..., 0]
            _accumulate(b, gb)

    return Tensor._from_op(out, (a, b), backward, "matmul")


def outer(u, v) -> Tensor:
    """Outer product over the last axis: out[..., k, s] = u[..., k] * v[..., s]."""
    u, v = _as_tensor(u), _as_tensor(v)
    ud = u.data[..., :, None]
    vd = v.data[..., None, :]
    _check_broadcast(Tensor(ud), Tensor(vd), "outer")

    def backward(g):
        _accumulate(u, (g * v.data[..., None, :]).sum(axis=-1))
        _accumulate(v, (g * u.data[..., :, None]).sum(axis=-2))

    return Tensor._from_op(ud * vd, (u, v), backward, "outer")


def transpose(x) -> Tensor:
    """Swap the last two axes."""
    x = _as_tensor(x)
    if x.ndim < 2:
        raise DimensionError(f"transpose: needs >= 2 dimensions, got shape {x.shape}")

    def backward(g):
        _accumulate(x, np.swapaxes(g, -1, -2))

    return Tensor._from_op(np.swapaxes(x.data, -1, -2), (x,), backward, "transpose")


def concat(tensors, axis: int = -1) -> Tensor:
    """Concatenate along one axis; all other axes must agree."""
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("concat: empty input list")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise DimensionError(
            f"concat: incompatible shapes {[t.shape for t in ts]} along axis {axis}"
        )
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(ts, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return Tensor._from_op(out, tuple(ts), backward, "concat")


def take(x, key) -> Tensor:
    """Basic indexing/slicing as a tape operation."""
    x = _as_tensor(x)
    out = x.data[key]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, key, g)
        _accumulate(x, gx)

    return Tensor._from_op(out, (x,), backward, "take")


def expand_dims(x, axis: int) -> Tensor:
    x = _as_tensor(x)

    def backward(g):
        _accumulate(x, np.squeeze(g, axis=axis))

    return Tensor._from_op(np.expand_dims(x.data, axis), (x,), backward, "expand_dims")


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)

    def backward(g):
        _accumulate(x, g.reshape(x.data.shape))

    return Tensor._from_op(x.data.reshape(shape), (x,), backward, "reshape")


# -- reductions ---------------------------------------------------------------

def _spread(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    gg = g if keepdims else np.expand_dims(g, axis)
    return np.broadcast_to(gg, shape)


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)

    def backward(g):
        _accumulate(x, _spread(g, x.data.shape, axis, keepdims))

    return Tensor._from_op(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    if x.data.size == 0:
        raise ContractError("mean: empty tensor")
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size // out.size

    def backward(g):
        _accumulate(x, _spread(g, x.data.shape, axis, keepdims) / count)

    return Tensor._from_op(out, (x,), backward, "mean")


# -- normalised similarity ----------------------------------------------------

def softmax(x, axis: int = -1) -> Tensor:
    """Shift-stabilised softmax along one axis."""
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(x, out * (g - inner))

    return Tensor._from_op(out, (x,), backward, "softmax")


def cosine_similarity(x, y) -> Tensor:
    """Cosine of the angle between the last-axis vectors of x and y.

    Leading axes broadcast, so a [K, S] matrix against a [1, S] key yields
    one score per row.  The denominator is floored at EPS_NORM; a zero
    vector therefore scores 0 against anything, and in the floored regime
    the denominator is treated as a constant by the backward pass.
    """
    x, y = _as_tensor(x), _as_tensor(y)
    if x.shape[-1] != y.shape[-1]:
        raise DimensionError(f"cosine_similarity: shapes {x.shape} and {y.shape}")
    xd, yd = x.data, y.data
    _check_broadcast(x, y, "cosine_similarity")
    dot = (xd * yd).sum(axis=-1)
    nx = np.sqrt((xd * xd).sum(axis=-1))
    ny = np.sqrt((yd * yd).sum(axis=-1))
    den_raw = nx * ny
    den = np.maximum(den_raw, EPS_NORM)
    out = dot / den

    def backward(g):
        g_ = g[..., None]
        den_ = den[..., None]
        c_ = out[..., None]
        floored = (den_raw < EPS_NORM)[..., None]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            nx2 = np.maximum(nx * nx, 1e-300)[..., None]
            ny2 = np.maximum(ny * ny, 1e-300)[..., None]
            gx = np.where(floored, yd / den_, yd / den_ - c_ * xd / nx2)
            gy = np.where(floored, xd / den_, xd / den_ - c_ * yd / ny2)
        _accumulate(x, g_ * gx)
        _accumulate(y, g_ * gy)

    return Tensor._from_op(out, (x, y), backward, "cosine_similarity")


# -- losses -------------------------------------------------------------------

def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error over every element."""
    diff = sub(pred, target)
    return mean(mul(diff, diff))


# -- gradient utilities --------------------------------------------------------

def zero_grads(params) -> None:
    for p in params:
        p.grad = np.zeros_like(p.data)


@contextmanager
def frozen(params):
    """Temporarily disable gradient tracking, e.g. for validation passes."""
    params = list(params)
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad = flag


@dataclass
class GradCheckReport:
    """Per-parameter comparison of tape gradients vs central differences."""

    tolerance: float
    step: float
    max_rel_err: dict[str, float] = field(default_factory=dict)
    deterministic: bool = True
    passed: bool = False

    @property
    def worst(self) -> tuple[str, float]:
        if not self.max_rel_err:
            return ("", 0.0)
        name = max(self.max_rel_err, key=self.max_rel_err.get)
        return (name, self.max_rel_err[name])

    def format(self) -> str:
        lines = []
        for name, err in self.max_rel_err.items():
            mark = "ok " if err <= self.tolerance else "BAD"
            lines.append(f"  {mark} {name:<28s} max rel err {err:.3e}")
        if not self.deterministic:
            lines.append("  BAD forward pass is not deterministic")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def grad_check(forward_fn, params, tolerance: float = 1e-4, step: float = 1e-5) -> GradCheckReport:
    """Compare tape gradients against central finite differences.

    ``forward_fn`` must rebuild the graph from scratch and return a scalar
    loss Tensor; it is called repeatedly while parameter buffers are
    perturbed in place.  The relative error per element is
    |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8).
    """
    params = list(params)
    report = GradCheckReport(tolerance=tolerance, step=step)

    l1 = forward_fn().item()
    l2 = forward_fn().item()
    report.deterministic = (np.float64(l1) == np.float64(l2)) or (
        np.isnan(l1) and np.isnan(l2)
    )

    zero_grads(params)
    loss = forward_fn()
    loss.backward()
    analytic = {p.name: np.array(p.grad) for p in params}

    for p in params:
        g_fd = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        fd_flat = g_fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = forward_fn().item()
            flat[i] = orig - step
            lo = forward_fn().item()
            flat[i] = orig
            fd_flat[i] = (hi - lo) / (2.0 * step)
        g_ad = analytic[p.name]
        denom = np.maximum(np.maximum(np.abs(g_ad), np.abs(g_fd)), 1e-8)
        rel = np.abs(g_ad - g_fd) / denom
        report.max_rel_err[p.name] = float(rel.max()) if rel.size else 0.0

    report.passed = report.deterministic and all(
        err <= tolerance for err in report.max_rel_err.values()
    )
    return report
