"""Dense float64 tensors with a small reverse-mode tape.

Every loss in the package (token cross-entropy, ranking CE, FCC and their
weighted total) is written against this module, so each one can be trained
with AdamW and checked against central finite differences.

Values are immutable: operations always return new tensors and the backing
arrays are flagged read-only. Only leaves accumulate ``grad``.
"""

from __future__ import annotations

import base64
import itertools
import json
import logging
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

import utils
from errors import DimensionError, DomainError, NumericError, TargetIndexError, ValidationError

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

_sequence = itertools.count()
_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording inside the block (per thread)."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


def _frozen(array) -> np.ndarray:
    arr = np.array(array, dtype=np.float64)
    arr.flags.writeable = False
    return arr


class Tensor:
    """Dense array of 64-bit reals that may take part in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_vjp", "_seq")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _frozen(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self._seq = next(_sequence)

    # -- shape helpers -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._vjp is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # -- autodiff ------------------------------------------------------
    def backward(self, grad=None):
        """Propagate ``grad`` (default 1 for scalars) to every leaf that requires it."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            seed = np.ones(self.shape)
        else:
            seed = np.asarray(grad, dtype=np.float64)
            if seed.shape != self.shape:
                raise DimensionError(f"seed shape {seed.shape} does not match tensor shape {self.shape}")
        Tape.from_root(self).backward(self, seed)

    # -- operators -----------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def _record(data, parents: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


class Tape:
    """Operations reachable from a root, in execution (creation) order."""

    def __init__(self, entries: list[Tensor]):
        self.entries = entries

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        seen: dict[int, Tensor] = {}
        stack = [root]
        while stack:
            node = stack.pop()
            if id(node) in seen or node._vjp is None:
                continue
            seen[id(node)] = node
            stack.extend(p for p in node._parents if p.requires_grad)
        return cls(sorted(seen.values(), key=lambda t: t._seq))

    def __len__(self):
        return len(self.entries)

    def backward(self, root: Tensor, seed: np.ndarray):
        if root._vjp is None:
            if root.requires_grad:
                _accumulate_leaf(root, seed)
            return
        pending: dict[int, np.ndarray] = {id(root): seed}
        for node in reversed(self.entries):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._vjp is None:
                    _accumulate_leaf(parent, pg)
                elif id(parent) in pending:
                    pending[id(parent)] = pending[id(parent)] + pg
                else:
                    pending[id(parent)] = pg


def _accumulate_leaf(leaf: Tensor, g: np.ndarray):
    g = np.asarray(g, dtype=np.float64).reshape(leaf.shape)
    leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _pair(a, b) -> tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"elementwise operands must share a shape (or be scalar): {a.shape} vs {b.shape}")
    return a, b


def _fit(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to an operand's shape (scalar operands sum)."""
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def _first_violation(mask: np.ndarray, values: np.ndarray):
    idx = tuple(int(i) for i in np.argwhere(mask)[0])
    return idx, float(values[idx])


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _record(a.data + b.data, (a, b),
                   lambda g: (_fit(g, a.shape), _fit(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _record(a.data - b.data, (a, b),
                   lambda g: (_fit(g, a.shape), _fit(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _record(a.data * b.data, (a, b),
                   lambda g: (_fit(g * b.data, a.shape), _fit(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    if np.any(b.data == 0):
        idx, val = _first_violation(b.data == 0, b.data)
        raise DomainError(f"div: zero denominator at index {idx} (value {val})")
    return _record(a.data / b.data, (a, b),
                   lambda g: (_fit(g / b.data, a.shape),
                              _fit(-g * a.data / (b.data * b.data), b.shape)), "div")


def minimum(a, b) -> Tensor:
    """Elementwise min; on ties the gradient goes to ``a``."""
    a, b = _pair(a, b)
    take_a = a.data <= b.data
    return _record(np.where(take_a, a.data, b.data), (a, b),
                   lambda g: (_fit(g * take_a, a.shape), _fit(g * ~take_a, b.shape)), "min")


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient goes to ``a``."""
    a, b = _pair(a, b)
    take_a = a.data >= b.data
    return _record(np.where(take_a, a.data, b.data), (a, b),
                   lambda g: (_fit(g * take_a, a.shape), _fit(g * ~take_a, b.shape)), "max")


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _record(-x.data, (x,), lambda g: (-g,), "neg")


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _record(out, (x,), lambda g: (g * out,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        idx, val = _first_violation(x.data <= 0, x.data)
        raise DomainError(f"log: input must be positive, index {idx} has {val}")
    return _record(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        idx, val = _first_violation(x.data < 0, x.data)
        raise DomainError(f"sqrt: input must be non-negative, index {idx} has {val}")
    out = np.sqrt(x.data)
    return _record(out, (x,), lambda g: (g / (2.0 * out),), "sqrt")


def square(x) -> Tensor:
    x = as_tensor(x)
    return _record(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _record(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _record(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def artanh(x) -> Tensor:
    x = as_tensor(x)
    bad = np.abs(x.data) >= 1.0
    if np.any(bad):
        idx, val = _first_violation(bad, x.data)
        raise DomainError(f"artanh: input must lie in (-1, 1), index {idx} has {val}")
    return _record(np.arctanh(x.data), (x,), lambda g: (g / (1.0 - x.data * x.data),), "artanh")


_UNARY = {
    "sigmoid": sigmoid, "tanh": tanh, "artanh": artanh, "square": square,
    "sqrt": sqrt, "log": log, "exp": exp, "neg": neg,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div, "min": minimum, "max": maximum}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch an elementwise operation by name."""
    if op in _UNARY:
        if len(args) != 1:
            raise ValidationError(f"{op} takes one operand, got {len(args)}")
        return _UNARY[op](args[0])
    if op in _BINARY:
        if len(args) != 2:
            raise ValidationError(f"{op} takes two operands, got {len(args)}")
        return _BINARY[op](*args)
    raise ValidationError(f"unknown elementwise op '{op}'")


# ---------------------------------------------------------------------------
# structure
# ---------------------------------------------------------------------------

def _normalize_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} is invalid for a tensor with {ndim} dimensions")
    return axis % ndim


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"cannot reshape {x.shape} into {tuple(shape)}") from e
    return _record(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x) -> Tensor:
    """Swap the last two axes."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError(f"transpose needs at least 2 dimensions, got shape {x.shape}")
    return _record(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def broadcast_to(x, shape) -> Tensor:
    """Explicitly broadcast ``x`` to ``shape`` (numpy rules); the adjoint sums back."""
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError as e:
        raise DimensionError(f"cannot broadcast {x.shape} to {shape}") from e

    def vjp(g):
        lead = g.ndim - x.ndim
        red = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(x.shape) if n == 1 and red.shape[i] != 1)
        if axes:
            red = red.sum(axis=axes, keepdims=True)
        return (red.reshape(x.shape),)

    return _record(out, (x,), vjp, "broadcast")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValidationError("concat needs at least one tensor")
    ax = _normalize_axis(axis, tensors[0].ndim)
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
                t.shape[i] != tensors[0].shape[i] for i in range(t.ndim) if i != ax):
            raise DimensionError(f"concat shapes disagree off axis {axis}: {tensors[0].shape} vs {t.shape}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _record(np.concatenate([t.data for t in tensors], axis=ax), tensors,
                   lambda g: tuple(np.split(g, bounds, axis=ax)), "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValidationError("stack needs at least one tensor")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise DimensionError(f"stack shapes disagree: {shape} vs {t.shape}")
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = _normalize_axis(axis, out.ndim)
    return _record(out, tensors,
                   lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(tensors))), "stack")


def take_rows(x, indices) -> Tensor:
    """Gather rows along axis 0; repeated indices accumulate in the adjoint."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    if x.ndim == 0:
        raise DimensionError("take_rows needs at least one dimension")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise TargetIndexError(f"row index out of range for {x.shape[0]} rows: {idx.tolist()}")

    def vjp(g):
        out = np.zeros(x.shape)
        np.add.at(out, idx, g)
        return (out,)

    return _record(x.data[idx], (x,), vjp, "take_rows")


# ---------------------------------------------------------------------------
# linear algebra and reductions
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product; either operand may carry one leading batch axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (2, 3) or b.ndim not in (2, 3):
        raise DimensionError(f"matmul needs 2-D or batched 3-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents disagree: {a.shape} and {b.shape}")
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise DimensionError(f"matmul batch extents disagree: {a.shape} and {b.shape}")

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        if a.ndim == 2 and ga.ndim == 3:
            ga = ga.sum(axis=0)
        if b.ndim == 2 and gb.ndim == 3:
            gb = gb.sum(axis=0)
        return ga, gb

    return _record(a.data @ b.data, (a, b), vjp, "matmul")


def reduce(op: str, x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Sum / mean / max over one axis or all of them."""
    x = as_tensor(x)
    if axis is not None:
        axis = _normalize_axis(axis, x.ndim)
    count = x.size if axis is None else x.shape[axis]

    def expand(g):
        if axis is None:
            return np.broadcast_to(np.asarray(g).reshape((1,) * x.ndim), x.shape)
        return np.broadcast_to(g if keepdims else np.expand_dims(g, axis), x.shape)

    if op == "sum":
        return _record(x.data.sum(axis=axis, keepdims=keepdims), (x,), lambda g: (expand(g),), "sum")
    if op == "mean":
        if count == 0:
            raise DimensionError(f"mean over an empty axis of shape {x.shape}")
        return _record(x.data.mean(axis=axis, keepdims=keepdims), (x,),
                       lambda g: (expand(g) / count,), "mean")
    if op == "max":
        if count == 0:
            raise DimensionError(f"max over an empty axis of shape {x.shape}")
        if axis is None:
            first = np.zeros(x.size)
            first[int(np.argmax(x.data))] = 1.0
            first = first.reshape(x.shape)
        else:
            first = np.zeros(x.shape)
            np.put_along_axis(first, np.expand_dims(np.argmax(x.data, axis=axis), axis), 1.0, axis=axis)
        return _record(x.data.max(axis=axis, keepdims=keepdims), (x,),
                       lambda g: (expand(g) * first,), "reduce_max")
    raise ValidationError(f"unknown reduction '{op}'")


def reduce_sum(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    return reduce("sum", x, axis, keepdims)


def reduce_mean(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    return reduce("mean", x, axis, keepdims)


def logsumexp(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Stable log Σ exp along ``axis``."""
    x = as_tensor(x)
    axis = _normalize_axis(axis, x.ndim)
    m = x.data.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    lse = np.log(np.exp(x.data - m).sum(axis=axis, keepdims=True)) + m
    weights = np.exp(x.data - lse)
    out = lse if keepdims else np.squeeze(lse, axis=axis)

    def vjp(g):
        g = g if keepdims else np.expand_dims(g, axis)
        return (g * weights,)

    return _record(out, (x,), vjp, "logsumexp")


def softmax_rows(x) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the row max."""
    x = as_tensor(x)
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax_rows: non-finite input")
    e = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)
    return _record(out, (x,),
                   lambda g: (out * (g - (g * out).sum(axis=-1, keepdims=True)),), "softmax")


def log_softmax_rows(x) -> Tensor:
    x = as_tensor(x)
    return sub(x, broadcast_to(logsumexp(x, axis=-1, keepdims=True), x.shape))


def safe_norm(x, axis: int = -1, keepdims: bool = True, eps: float = 1e-30) -> Tensor:
    """Euclidean norm whose derivative stays finite at the zero vector."""
    return sqrt(add(reduce("sum", square(x), axis=axis, keepdims=keepdims), eps))


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean and unit (population) variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if eps <= 0:
        raise ValidationError(f"layer_norm eps must be positive, got {eps}")
    d = x.shape[-1] if x.ndim else 0
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match width {d} of {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv_std
    lead = tuple(range(x.ndim - 1))

    def vjp(g):
        dxhat = g * gain.data
        dx = inv_std * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _record(xhat * gain.data + bias.data, (x, gain, bias), vjp, "layer_norm")


def cross_entropy_rows(logits, targets, ignore_mask=None) -> Tensor:
    """Mean over rows of -log softmax(logits)[target].

    ``ignore_mask`` marks positions that get a logit of -inf before the
    softmax; they receive no probability mass and no gradient.
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy_rows expects a matrix, got shape {logits.shape}")
    m, n = logits.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape != (m,):
        raise DimensionError(f"expected {m} targets, got {targets.shape[0]}")
    if m and (targets.min() < 0 or targets.max() >= n):
        bad = int(np.argmax((targets < 0) | (targets >= n)))
        raise TargetIndexError(f"target {int(targets[bad])} at row {bad} is outside [0, {n})")
    if not np.all(np.isfinite(logits.data)):
        raise NumericError("cross_entropy_rows: non-finite logits")
    z = logits.data
    if ignore_mask is not None:
        mask = np.asarray(ignore_mask, dtype=bool)
        if mask.shape != (m, n):
            raise DimensionError(f"ignore_mask shape {mask.shape} does not match logits {logits.shape}")
        if np.any(mask[np.arange(m), targets]):
            raise ValidationError("a target position is masked out")
        z = np.where(mask, -np.inf, z)
    row_max = z.max(axis=1, keepdims=True)
    e = np.exp(z - row_max)
    lse = np.log(e.sum(axis=1, keepdims=True)) + row_max
    probs = np.exp(z - lse)
    picked = z[np.arange(m), targets]
    loss = float(np.mean(lse[:, 0] - picked))

    def vjp(g):
        grad = probs.copy()
        grad[np.arange(m), targets] -= 1.0
        return (grad * (float(g) / m),)

    return _record(loss, (logits,), vjp, "cross_entropy")


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[Tensor], Tensor], point, h: float = 1e-6) -> float:
    """Worst relative error between the tape gradient and central differences.

    The denominator for each coordinate is max(|analytic|, |numeric|, 1e-12).
    The caller keeps ``point`` away from min/max ties and domain boundaries.
    """
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(base, requires_grad=True)
    y = f(x)
    if y.size != 1:
        raise DimensionError(f"grad_check needs a scalar function, got shape {y.shape}")
    if not np.isfinite(y.item()):
        raise NumericError("grad_check: non-finite function value at the base point")
    y.backward()
    analytic = np.zeros(base.shape) if x.grad is None else x.grad
    numeric = np.zeros(base.shape)
    with no_grad():
        for i in range(base.size):
            shifted = base.copy()
            shifted.flat[i] = base.flat[i] + h
            up = f(Tensor(shifted)).item()
            shifted.flat[i] = base.flat[i] - h
            down = f(Tensor(shifted)).item()
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"grad_check: non-finite value while perturbing coordinate {i}")
            numeric.flat[i] = (up - down) / (2.0 * h)
    if not np.all(np.isfinite(analytic)):
        raise NumericError("grad_check: non-finite analytic gradient")
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / denom)) if base.size else 0.0


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def encode_array(array) -> dict:
    arr = np.ascontiguousarray(np.asarray(array.data if isinstance(array, Tensor) else array,
                                          dtype="<f8"))
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def decode_array(entry: Mapping) -> np.ndarray:
    try:
        shape = tuple(int(n) for n in entry["shape"])
        raw = base64.b64decode(entry["data"])
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError(f"malformed array entry: {e}") from e
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    if arr.size != int(np.prod(shape)):
        raise ValidationError(f"array payload holds {arr.size} values but shape {shape} needs {int(np.prod(shape))}")
    return arr.reshape(shape)


def checkpoint_document(arrays: Mapping[str, object], meta: Mapping | None = None) -> dict:
    doc = {"version": CHECKPOINT_VERSION,
           "arrays": {name: encode_array(value) for name, value in arrays.items()}}
    if meta is not None:
        doc["meta"] = dict(meta)
    return doc


def parse_checkpoint_document(doc: Mapping) -> tuple[dict[str, np.ndarray], dict]:
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {doc.get('version')!r}")
    arrays = {name: decode_array(entry) for name, entry in doc.get("arrays", {}).items()}
    return arrays, dict(doc.get("meta", {}))


def save_checkpoint(path, arrays: Mapping[str, object], meta: Mapping | None = None):
    """Write arrays as a versioned JSON document (atomic)."""
    doc = checkpoint_document(arrays, meta)
    utils.atomic_write_text(path, json.dumps(doc, indent=2) + "\n")
    logger.debug("saved %d arrays to %s", len(doc["arrays"]), path)
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path} is not a checkpoint document: {e}") from e
    return parse_checkpoint_document(doc)


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.all(np.isfinite(p.data)) for p in params)
