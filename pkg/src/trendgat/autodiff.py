"""Reverse-mode differentiation over dense 2-D float64 matrices.

Every tracked quantity is a :class:`Value` wrapping a ``(rows, cols)``
ndarray.  Operations executed while a :class:`Tape` is active record a
backward closure on it; ``Tape.backward`` sweeps the closures in reverse
recording order, which is a valid reverse topological order because
operands always exist before their result.  Accumulation order is fixed,
so two backward passes over identical recordings produce bit-identical
gradients.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    DegenerateRowError,
    DeterminismError,
    LabelError,
    NumericError,
    ShapeError,
    TapeError,
)

_ACTIVE_TAPES: list["Tape"] = []


class Value:
    """A dense matrix with a lazily allocated same-shape gradient buffer."""

    __slots__ = ("data", "_grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = True):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"Value requires a 2-D matrix, got shape {arr.shape}")
        self.data = arr
        self._grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def zero_grad(self) -> None:
        if self._grad is not None:
            self._grad.fill(0.0)

    def _acc(self, g: np.ndarray) -> None:
        # accumulate; allocate on first touch so dead branches stay cheap
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        self._grad += g

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() requires a 1x1 Value, got {self.data.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        return f"Value(shape={self.data.shape}, requires_grad={self.requires_grad})"


def const(data) -> Value:
    """Leaf Value that never receives a gradient (inputs, masks, selectors)."""
    return Value(data, requires_grad=False)


class Tape:
    """Ordered record of primitive applications for one backward sweep."""

    def __init__(self):
        self._ops: list = []
        self._spent = False

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPES.pop()

    def _record(self, backward_fn) -> None:
        self._ops.append(backward_fn)

    def __len__(self) -> int:
        return len(self._ops)

    def backward(self, loss: Value) -> None:
        """Accumulate d(loss)/dv into every recorded Value's grad."""
        if loss.data.shape != (1, 1):
            raise TapeError(f"backward requires a 1x1 scalar loss, got {loss.data.shape}")
        if self._spent:
            raise TapeError("backward already ran on this tape; reset() to reuse")
        loss._acc(np.ones((1, 1)))
        for fn in reversed(self._ops):
            fn()
        self._spent = True

    def reset(self) -> None:
        self._ops.clear()
        self._spent = False


def _tape() -> Tape | None:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def _make(data: np.ndarray, *parents: Value) -> tuple[Value, Tape | None]:
    out = Value(data, requires_grad=any(p.requires_grad for p in parents))
    t = _tape()
    if t is None or not out.requires_grad:
        return out, None
    return out, t


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a: Value, b: Value) -> Value:
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.data.shape} @ {b.data.shape}")
    out, t = _make(a.data @ b.data, a, b)
    if t is not None:
        def bwd():
            g = out.grad
            if a.requires_grad:
                a._acc(g @ b.data.T)
            if b.requires_grad:
                b._acc(a.data.T @ g)
        t._record(bwd)
    return out


def add(a: Value, b: Value) -> Value:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shapes differ, {a.data.shape} vs {b.data.shape}")
    out, t = _make(a.data + b.data, a, b)
    if t is not None:
        def bwd():
            g = out.grad
            if a.requires_grad:
                a._acc(g)
            if b.requires_grad:
                b._acc(g)
        t._record(bwd)
    return out


def smul(a: Value, c: float) -> Value:
    """Multiply by a Python scalar constant (not differentiated w.r.t. c)."""
    c = float(c)
    out, t = _make(a.data * c, a)
    if t is not None:
        def bwd():
            a._acc(out.grad * c)
        t._record(bwd)
    return out


def mul(a: Value, b: Value) -> Value:
    """Elementwise product; one operand may be 1x1 (broadcast scale)."""
    sa, sb = a.data.shape, b.data.shape
    if sa != sb and sa != (1, 1) and sb != (1, 1):
        raise ShapeError(f"mul: shapes differ, {sa} vs {sb}")
    out, t = _make(a.data * b.data, a, b)
    if t is not None:
        def bwd():
            g = out.grad
            if a.requires_grad:
                ga = g * b.data
                a._acc(ga.sum().reshape(1, 1) if sa == (1, 1) and sb != (1, 1) else ga)
            if b.requires_grad:
                gb = g * a.data
                b._acc(gb.sum().reshape(1, 1) if sb == (1, 1) and sa != (1, 1) else gb)
        t._record(bwd)
    return out


def concat_cols(*vs: Value) -> Value:
    if len(vs) < 2:
        raise ShapeError("concat_cols: needs at least two operands")
    rows = vs[0].data.shape[0]
    for v in vs:
        if v.data.shape[0] != rows:
            raise ShapeError(
                f"concat_cols: row counts differ, {vs[0].data.shape} vs {v.data.shape}")
    out, t = _make(np.concatenate([v.data for v in vs], axis=1), *vs)
    if t is not None:
        widths = [v.data.shape[1] for v in vs]
        def bwd():
            g = out.grad
            lo = 0
            for v, w in zip(vs, widths):
                if v.requires_grad:
                    v._acc(g[:, lo:lo + w])
                lo += w
        t._record(bwd)
    return out


def slice_cols(a: Value, start: int, stop: int) -> Value:
    cols = a.data.shape[1]
    if not (0 <= start < stop <= cols):
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of range for {a.data.shape}")
    out, t = _make(a.data[:, start:stop].copy(), a)
    if t is not None:
        def bwd():
            g = np.zeros_like(a.data)
            g[:, start:stop] = out.grad
            a._acc(g)
        t._record(bwd)
    return out


def transpose(a: Value) -> Value:
    out, t = _make(a.data.T.copy(), a)
    if t is not None:
        def bwd():
            a._acc(out.grad.T)
        t._record(bwd)
    return out


def reshape(a: Value, rows: int, cols: int) -> Value:
    if rows * cols != a.data.size:
        raise ShapeError(f"reshape: {a.data.shape} has {a.data.size} entries, not {rows}x{cols}")
    out, t = _make(a.data.reshape(rows, cols).copy(), a)
    if t is not None:
        def bwd():
            a._acc(out.grad.reshape(a.data.shape))
        t._record(bwd)
    return out


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def row_softmax(a: Value) -> Value:
    s = _softmax_rows(a.data)
    out, t = _make(s, a)
    if t is not None:
        def bwd():
            g = out.grad
            a._acc(s * (g - (g * s).sum(axis=1, keepdims=True)))
        t._record(bwd)
    return out


def masked_row_softmax(a: Value, mask: np.ndarray) -> Value:
    """Softmax over the True positions of each row; masked entries get
    probability zero and zero gradient.  A row with no valid position is
    an error."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.data.shape:
        raise ShapeError(
            f"masked_row_softmax: mask {mask.shape} vs logits {a.data.shape}")
    valid_counts = mask.sum(axis=1)
    if (valid_counts == 0).any():
        row = int(np.argmin(valid_counts))
        raise DegenerateRowError(f"masked_row_softmax: row {row} has no valid position")
    x = np.where(mask, a.data, -np.inf)
    z = x - x.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(np.where(mask, z, 0.0)), 0.0)
    s = e / e.sum(axis=1, keepdims=True)
    out, t = _make(s, a)
    if t is not None:
        def bwd():
            g = out.grad
            # s is zero at masked positions, so their gradient vanishes too
            a._acc(s * (g - (g * s).sum(axis=1, keepdims=True)))
        t._record(bwd)
    return out


def leaky_relu(a: Value, slope: float) -> Value:
    slope = float(slope)
    pos = a.data > 0
    out, t = _make(np.where(pos, a.data, slope * a.data), a)
    if t is not None:
        def bwd():
            a._acc(np.where(pos, 1.0, slope) * out.grad)
        t._record(bwd)
    return out


def prelu(a: Value, slopes: Value) -> Value:
    """Leaky rectifier with one learned slope per column; slopes is 1 x cols."""
    if slopes.data.shape != (1, a.data.shape[1]):
        raise ShapeError(
            f"prelu: slopes {slopes.data.shape} vs input {a.data.shape} (want 1x{a.data.shape[1]})")
    pos = a.data > 0
    out, t = _make(np.where(pos, a.data, a.data * slopes.data), a, slopes)
    if t is not None:
        def bwd():
            g = out.grad
            if a.requires_grad:
                a._acc(np.where(pos, 1.0, slopes.data) * g)
            if slopes.requires_grad:
                slopes._acc(np.where(pos, 0.0, a.data * g).sum(axis=0, keepdims=True))
        t._record(bwd)
    return out


def reduce_sum(a: Value) -> Value:
    out, t = _make(np.array([[a.data.sum()]]), a)
    if t is not None:
        def bwd():
            a._acc(np.full_like(a.data, out.grad[0, 0]))
        t._record(bwd)
    return out


def log(a: Value) -> Value:
    if (a.data <= 0).any():
        raise NumericError("log: input has non-positive entries")
    out, t = _make(np.log(a.data), a)
    if t is not None:
        def bwd():
            a._acc(out.grad / a.data)
        t._record(bwd)
    return out


def cross_entropy_with_logits(logits: Value, targets: np.ndarray) -> Value:
    """Row-wise softmax cross-entropy against one-hot targets, summed over
    rows into a 1x1 scalar."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.data.shape:
        raise ShapeError(
            f"cross_entropy_with_logits: targets {targets.shape} vs logits {logits.data.shape}")
    if not (np.isin(targets, (0.0, 1.0)).all() and (targets.sum(axis=1) == 1.0).all()):
        raise LabelError("cross_entropy_with_logits: each target row must be one-hot")
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=1, keepdims=True))
    total = float((lse[:, 0] - (targets * x).sum(axis=1)).sum())
    out, t = _make(np.array([[total]]), logits)
    if t is not None:
        soft = _softmax_rows(x)
        def bwd():
            logits._acc((soft - targets) * out.grad[0, 0])
        t._record(bwd)
    return out


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------

class GradCheckReport:
    """Outcome of a central-difference comparison."""

    def __init__(self, max_rel_err: float, worst_param: int, worst_coord: tuple[int, int],
                 tol: float):
        self.max_rel_err = max_rel_err
        self.worst_param = worst_param
        self.worst_coord = worst_coord
        self.tol = tol
        self.passed = max_rel_err <= tol

    def __repr__(self) -> str:
        return (f"GradCheckReport(max_rel_err={self.max_rel_err:.3e}, "
                f"param={self.worst_param}, coord={self.worst_coord}, passed={self.passed})")


def grad_check(f, params: list[Value], step: float = 1e-5, tol: float = 1e-4,
               zero_tol: float = 1e-6) -> GradCheckReport:
    """Compare the tape gradient of ``f()`` (a 1x1 Value) against central
    finite differences over every coordinate of ``params``.

    ``f`` must be deterministic; it is evaluated twice up front and a
    mismatch raises DeterminismError.  Relative error uses the denominator
    max(|analytic|, |numeric|, 1e-8).  Coordinates where both sides are
    below ``zero_tol`` count as agreeing: central differences of an O(1)
    function carry ~eps*|f|/(2*step) cancellation noise, so a true-zero
    gradient cannot be resolved more finely in double precision.
    """
    if step <= 0:
        raise ValueError("grad_check: step must be positive")

    def eval_plain() -> float:
        return f().item()

    f0 = eval_plain()
    if eval_plain() != f0:
        raise DeterminismError("grad_check: f returned different values on repeat evaluation")

    for p in params:
        p.zero_grad()
    with Tape() as t:
        out = f()
        t.backward(out)
    analytic = [p.grad.copy() for p in params]

    max_rel = 0.0
    worst_param, worst_coord = -1, (-1, -1)
    for pi, p in enumerate(params):
        it = np.nditer(p.data, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p.data[idx]
            p.data[idx] = orig + step
            fp = eval_plain()
            p.data[idx] = orig - step
            fm = eval_plain()
            p.data[idx] = orig
            numeric = (fp - fm) / (2.0 * step)
            a = analytic[pi][idx]
            if max(abs(a), abs(numeric)) < zero_tol:
                rel = 0.0
            else:
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > max_rel:
                max_rel, worst_param, worst_coord = rel, pi, idx
            it.iternext()
    return GradCheckReport(max_rel, worst_param, worst_coord, tol)
