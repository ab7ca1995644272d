"""Dense tensors with define-by-run reverse-mode differentiation.

Every differentiable primitive produces a new :class:`Tensor` and, when any
input requires a gradient, attaches a :class:`Node` describing how to push an
output gradient back onto its parents.  :func:`backward` linearises the graph
reachable from a scalar root into a :class:`ComputationTape` (topological
order) and replays it in reverse.

All arithmetic is float64.  Kernels are plain numpy, so results are bitwise
reproducible for a fixed input on a fixed machine.
"""

from __future__ import annotations

import contextlib
import hashlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import NumericalError, ShapeError

DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference, validation)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


# digest of every piecewise branch decision taken while a probe is active
_branch_digest = None


@contextlib.contextmanager
def record_branches() -> Iterator[list[str]]:
    """Fingerprint the branch pattern (ReLU signs, pool winners, clamp hits) of a computation.

    The yielded list receives one hex digest when the block exits.  Two
    evaluations with equal digests lie on the same smooth piece.
    """
    global _branch_digest
    previous = _branch_digest
    _branch_digest = hashlib.blake2b(digest_size=16)
    out: list[str] = []
    try:
        yield out
    finally:
        out.append(_branch_digest.hexdigest())
        _branch_digest = previous


def note_branch(selector: np.ndarray) -> None:
    """Called by piecewise kernels with the array that picks their branch."""
    if _branch_digest is not None:
        _branch_digest.update(np.ascontiguousarray(selector).tobytes())


@dataclass(eq=False)
class Node:
    """One recorded primitive application."""

    op: str
    parents: tuple["Tensor", ...]
    # maps the output gradient to one gradient (or None) per parent
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """Row-major float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)
        if not np.all(np.isfinite(arr)):
            raise NumericalError("tensor values must be finite")
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        # internal fast path: arr is already a float64 array owned by us
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.node = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(
    out: np.ndarray,
    parents: tuple[Tensor, ...],
    op: str,
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    """Wrap a kernel result and record it when any parent needs a gradient."""
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"{op} produced non-finite values")
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    result = Tensor._wrap(out, requires_grad=needs)
    if needs:
        result.node = Node(op, parents, backward_fn)
    return result


# ---------------------------------------------------------------------------
# elementwise primitives
# ---------------------------------------------------------------------------

ELEMENTWISE_KINDS = ("add", "sub", "mul", "div", "max", "min")


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    # only the scalar-broadcast case is allowed by elementwise()
    return np.asarray(grad.sum()).reshape(shape)


def elementwise(op_kind: str, a, b) -> Tensor:
    """Apply a binary elementwise operation.

    ``b`` may be a tensor of the same shape as ``a`` or a scalar (python
    number or 0-d / single-element tensor), which is broadcast.
    """
    if op_kind not in ELEMENTWISE_KINDS:
        raise ValueError(f"unknown elementwise op {op_kind!r}")
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.shape != b.shape and b.size != 1:
        raise ShapeError(f"{op_kind}: shape mismatch {a.shape} vs {b.shape}")
    x, y = a.data, b.data
    yb = y if a.shape == b.shape else y.reshape(())
    ashape, bshape = a.shape, b.shape

    if op_kind == "add":
        out = x + yb

        def bw(g):
            return g, _reduce_to(g, bshape)
    elif op_kind == "sub":
        out = x - yb

        def bw(g):
            return g, _reduce_to(-g, bshape)
    elif op_kind == "mul":
        out = x * yb

        def bw(g):
            return g * yb, _reduce_to(g * x, bshape)
    elif op_kind == "div":
        if np.any(y == 0.0):
            raise ZeroDivisionError("divisor contains zero")
        out = x / yb

        def bw(g):
            return g / yb, _reduce_to(-g * x / (yb * yb), bshape)
    else:
        # ties send the gradient to ``a``
        pick_a = x >= yb if op_kind == "max" else x <= yb
        note_branch(pick_a)
        out = np.where(pick_a, x, yb)

        def bw(g):
            return np.where(pick_a, g, 0.0), _reduce_to(np.where(pick_a, 0.0, g), bshape)

    out = np.asarray(out, dtype=DTYPE)
    if out.shape != ashape:
        out = np.broadcast_to(out, ashape).copy()
    return _make(out, (a, b), op_kind, bw)


def add(a, b) -> Tensor:
    return elementwise("add", a, b)


def sub(a, b) -> Tensor:
    return elementwise("sub", a, b)


def mul(a, b) -> Tensor:
    return elementwise("mul", a, b)


def div(a, b) -> Tensor:
    return elementwise("div", a, b)


def maximum(a, b) -> Tensor:
    return elementwise("max", a, b)


def minimum(a, b) -> Tensor:
    return elementwise("min", a, b)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def reduce(op_kind: str, a: Tensor) -> Tensor:
    """Reduce every element of ``a`` to a 0-d tensor (``sum`` or ``mean``)."""
    if op_kind not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {op_kind!r}")
    a = _as_tensor(a)
    n = a.size
    if n == 0:
        raise ShapeError(f"{op_kind} of an empty tensor")
    shape = a.shape
    if op_kind == "sum":
        out = np.asarray(a.data.sum(), dtype=DTYPE)

        def bw(g):
            return (np.full(shape, float(g), dtype=DTYPE),)
    else:
        out = np.asarray(a.data.sum() / n, dtype=DTYPE)

        def bw(g):
            return (np.full(shape, float(g) / n, dtype=DTYPE),)

    return _make(out, (a,), op_kind, bw)


def tsum(a: Tensor) -> Tensor:
    return reduce("sum", a)


def mean(a: Tensor) -> Tensor:
    return reduce("mean", a)


# ---------------------------------------------------------------------------
# smooth / clamping unary primitives
# ---------------------------------------------------------------------------


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    """Overflow-free logistic function on a raw array."""
    x = np.asarray(x, dtype=DTYPE)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    s = sigmoid_array(a.data)

    def bw(g):
        return (g * s * (1.0 - s),)

    return _make(s, (a,), "sigmoid", bw)


def clamp01(a: Tensor, lo: float = 0.01, hi: float = 0.99) -> Tensor:
    """Limit values to ``[lo, hi]``.

    The gradient passes only where ``lo < a < hi``; saturated elements (including
    those exactly on a bound) receive zero.
    """
    if not lo < hi:
        raise ValueError(f"clamp bounds must satisfy lo < hi, got [{lo}, {hi}]")
    a = _as_tensor(a)
    x = a.data
    inside = (x > lo) & (x < hi)
    note_branch(inside)
    note_branch(x >= hi)
    out = np.clip(x, lo, hi)

    def bw(g):
        return (np.where(inside, g, 0.0),)

    return _make(out, (a,), "clamp", bw)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    out = a.data.reshape(shape)

    def bw(g):
        return (g.reshape(old),)

    return _make(out, (a,), "reshape", bw)


# ---------------------------------------------------------------------------
# tape + backward
# ---------------------------------------------------------------------------


@dataclass
class ComputationTape:
    """Recorded primitive applications in topological order.

    Every parent tensor of a node precedes that node's output in ``tensors``.
    """

    tensors: list[Tensor] = field(default_factory=list)

    @property
    def nodes(self) -> list[Node]:
        return [t.node for t in self.tensors if t.node is not None]

    def __len__(self) -> int:
        return len(self.tensors)

    @classmethod
    def from_root(cls, root: Tensor) -> "ComputationTape":
        order: list[Tensor] = []
        seen: set[int] = set()
        # iterative post-order DFS, graphs can be thousands of nodes deep
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            if t.node is not None:
                for p in reversed(t.node.parents):
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))
        return cls(order)


def backward(root: Tensor) -> ComputationTape:
    """Accumulate d(root)/d(t) into ``t.grad`` for every reachable tensor.

    Leaf gradients accumulate onto any existing ``grad`` (callers clear them,
    e.g. the optimizer step).  Returns the tape that was replayed.
    """
    if root.size != 1:
        raise ShapeError(f"backward() needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise ValueError("root does not require grad; nothing was recorded")
    tape = ComputationTape.from_root(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones(root.shape, dtype=DTYPE)}
    for t in reversed(tape.tensors):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            t.grad = g if t.grad is None else t.grad + g
            continue
        t.grad = g
        for parent, pg in zip(t.node.parents, t.node.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return tape


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------


@dataclass
class GradientCheck:
    max_rel_error: float
    checked: int
    kinks: list[tuple[int, ...]]
    worst_index: tuple[int, ...] | None = None


def gradient_check_details(
    f: Callable[[Tensor], Tensor],
    x: Tensor | np.ndarray,
    h: float = 1e-4,
    indices: Sequence[tuple[int, ...]] | None = None,
    kink_tol: float = 0.1,
    abs_floor: float = 1e-6,
    tol: float = 1e-4,
) -> GradientCheck:
    """Compare analytic gradients of scalar ``f`` at ``x`` with central differences.

    An element is a kink, reported in ``kinks`` instead of being scored, when
    its one-sided difference quotients disagree by more than ``kink_tol``
    (relative), or when its error exceeds ``tol`` and the +/-h perturbation
    switched a recorded branch (see :func:`record_branches`).  Branch switches
    that leave the difference quotient within ``tol`` are scored normally, so
    parameters touching many pixels (biases, AReLU scalars) are still checked.
    Relative error falls back to absolute error when both derivatives are
    below ``abs_floor`` in magnitude.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=DTYPE)
    xt = Tensor(base, requires_grad=True)
    out = f(xt)
    if out.size != 1:
        raise ShapeError("check_gradients needs a scalar-valued function")
    f0 = out.item()
    backward(out)
    analytic = xt.grad if xt.grad is not None else np.zeros_like(base)

    def evaluate(arr: np.ndarray) -> tuple[float, str]:
        with no_grad(), record_branches() as digest:
            value = f(Tensor._wrap(arr)).item()
        return value, digest[0]

    _, base_branch = evaluate(base)
    if indices is None:
        indices = list(np.ndindex(base.shape))
    worst, worst_idx = 0.0, None
    kinks: list[tuple[int, ...]] = []
    checked = 0
    for idx in indices:
        idx = tuple(idx)
        plus = base.copy()
        plus[idx] += h
        minus = base.copy()
        minus[idx] -= h
        (fp, bp), (fm, bm) = evaluate(plus), evaluate(minus)
        right, left = (fp - f0) / h, (f0 - fm) / h
        scale = max(abs(right), abs(left), abs_floor)
        if abs(right - left) > kink_tol * scale and abs(right - left) > 10 * abs_floor:
            kinks.append(idx)
            continue
        numeric = (fp - fm) / (2 * h)
        a = float(analytic[idx])
        mag = max(abs(a), abs(numeric))
        err = abs(a - numeric) / mag if mag >= abs_floor else abs(a - numeric)
        if err > tol and (bp != base_branch or bm != base_branch):
            kinks.append(idx)
            continue
        checked += 1
        if err > worst:
            worst, worst_idx = err, idx
    return GradientCheck(worst, checked, kinks, worst_idx)


def check_gradients(f: Callable[[Tensor], Tensor], x, h: float = 1e-4, **kwargs) -> float:
    """Worst relative error between analytic and central-difference gradients."""
    return gradient_check_details(f, x, h, **kwargs).max_rel_error
