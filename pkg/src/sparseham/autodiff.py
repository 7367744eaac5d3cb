"""Scalar reverse-mode differentiation on an explicit tape.

Every arithmetic operation between :class:`DiffScalar` values appends one node
to the owning :class:`Tape`; :func:`backward` sweeps the tape once in reverse.
Only the operations the energy bases need are supported: add, sub, mul, neg,
integer power, sin, cos and abs.

>>> tape = Tape()
>>> x = track(2.0, tape)
>>> backward(x * x, tape)[x]
4.0
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

DEFAULT_MAX_NODES = 10_000_000


class TapeOverflowError(RuntimeError):
    pass


class Tape:
    """Append-only record of elementary operations.

    Node ``i`` stores the indices of its inputs and the local partial
    derivative with respect to each. Inputs always precede the node.
    """

    def __init__(self, max_nodes: int = DEFAULT_MAX_NODES):
        self.max_nodes = max_nodes
        self.reset()

    def reset(self):
        self._parents: list[tuple[int, ...]] = []
        self._partials: list[tuple[float, ...]] = []
        self._leaves: list[int] = []

    def __len__(self):
        return len(self._parents)

    def _push(self, value: float, parents: tuple[int, ...], partials: tuple[float, ...]) -> DiffScalar:
        if len(self._parents) >= self.max_nodes:
            raise TapeOverflowError(
                f"tape exceeded {self.max_nodes} nodes; reduce eps, horizon or basis size"
            )
        self._parents.append(parents)
        self._partials.append(partials)
        return DiffScalar(value, len(self._parents) - 1, self)

    def variable(self, value: float) -> DiffScalar:
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"cannot track non-finite value {value!r}")
        node = self._push(value, (), ())
        self._leaves.append(node.index)
        return node

    def variables(self, values) -> np.ndarray:
        """Track each element of ``values``; returns an object array of DiffScalars."""
        out = np.empty(len(values), dtype=object)
        for i, v in enumerate(values):
            out[i] = self.variable(v)
        return out


class DiffScalar:
    __slots__ = ("value", "index", "tape")

    def __init__(self, value: float, index: int, tape: Tape):
        self.value = value
        self.index = index
        self.tape = tape

    def __repr__(self):
        return f"DiffScalar({self.value!r})"

    def _same_tape(self, other: DiffScalar):
        if other.tape is not self.tape:
            raise ValueError("operands were recorded on different tapes")

    def __add__(self, other):
        if isinstance(other, DiffScalar):
            self._same_tape(other)
            return self.tape._push(self.value + other.value, (self.index, other.index), (1.0, 1.0))
        return self.tape._push(self.value + other, (self.index,), (1.0,))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, DiffScalar):
            self._same_tape(other)
            return self.tape._push(self.value - other.value, (self.index, other.index), (1.0, -1.0))
        return self.tape._push(self.value - other, (self.index,), (1.0,))

    def __rsub__(self, other):
        return self.tape._push(other - self.value, (self.index,), (-1.0,))

    def __mul__(self, other):
        if isinstance(other, DiffScalar):
            self._same_tape(other)
            return self.tape._push(
                self.value * other.value, (self.index, other.index), (other.value, self.value)
            )
        return self.tape._push(self.value * other, (self.index,), (float(other),))

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape._push(-self.value, (self.index,), (-1.0,))

    def __pos__(self):
        return self

    def __pow__(self, k):
        if not isinstance(k, (int, np.integer)) or k < 0:
            raise TypeError("only non-negative integer powers are supported")
        k = int(k)
        if k == 0:
            return 1.0
        return self.tape._push(self.value**k, (self.index,), (k * self.value ** (k - 1),))

    def __abs__(self):
        # derivative 0 at the kink
        v = self.value
        slope = 1.0 if v > 0 else (-1.0 if v < 0 else 0.0)
        return self.tape._push(abs(v), (self.index,), (slope,))

    def sin(self):
        return self.tape._push(math.sin(self.value), (self.index,), (math.cos(self.value),))

    def cos(self):
        return self.tape._push(math.cos(self.value), (self.index,), (-math.sin(self.value),))

    def __float__(self):
        return float(self.value)


def value_of(x) -> float:
    """Float value of a DiffScalar or plain number."""
    return x.value if isinstance(x, DiffScalar) else float(x)


def sin(x):
    return x.sin() if isinstance(x, DiffScalar) else math.sin(x)


def cos(x):
    return x.cos() if isinstance(x, DiffScalar) else math.cos(x)


def track(value: float, tape: Tape) -> DiffScalar:
    """Start tracking ``value`` on ``tape`` as a differentiation variable."""
    return tape.variable(value)


class GradientMap(Mapping):
    """Partial derivatives keyed by tracked variable (or its node index)."""

    def __init__(self, grads: dict[int, float]):
        self._grads = grads

    def _key(self, key):
        return key.index if isinstance(key, DiffScalar) else key

    def __getitem__(self, key):
        return self._grads[self._key(key)]

    def __contains__(self, key):
        return self._key(key) in self._grads

    def __iter__(self):
        return iter(self._grads)

    def __len__(self):
        return len(self._grads)

    def vector(self, variables) -> np.ndarray:
        return np.array([self[v] for v in variables], dtype=np.float64)


def backward(output, tape: Tape) -> GradientMap:
    """Reverse accumulation of d(output)/d(v) for every tracked variable on ``tape``."""
    if not isinstance(output, DiffScalar):
        # untracked constant: every derivative vanishes
        return GradientMap({i: 0.0 for i in tape._leaves})
    if output.tape is not tape:
        raise ValueError("output was not recorded on this tape")
    parents, partials = tape._parents, tape._partials
    adjoint = [0.0] * (output.index + 1)
    adjoint[output.index] = 1.0
    for i in range(output.index, -1, -1):
        a = adjoint[i]
        if a == 0.0:
            continue
        for j, d in zip(parents[i], partials[i]):
            adjoint[j] += a * d
    return GradientMap({i: (adjoint[i] if i <= output.index else 0.0) for i in tape._leaves})


def gradient(f, x) -> tuple[float, np.ndarray]:
    """Value and reverse-mode gradient of scalar ``f(vars)`` at point ``x``."""
    tape = Tape()
    xs = tape.variables(np.asarray(x, dtype=np.float64).reshape(-1))
    y = f(xs)
    return value_of(y), backward(y, tape).vector(xs)


@dataclass
class CheckReport:
    passed: bool
    max_discrepancy: float
    rel_tol: float
    reverse: np.ndarray = field(repr=False)
    central: np.ndarray = field(repr=False)


def central_difference(f, x, rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a float-valued ``f`` with step ``rel_step*max(1,|x_i|)``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    g = np.empty_like(x)
    for i in range(x.size):
        h = rel_step * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fp, fm = value_of(f(xp)), value_of(f(xm))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise FloatingPointError(f"f is not finite near x at coordinate {i}")
        g[i] = (fp - fm) / (xp[i] - xm[i])
    return g


def relative_discrepancy(a, b, scale: float = 1.0) -> float:
    """Max elementwise ``|a-b| / max(|a|, |b|, 1e-3*scale)``.

    The floor keeps exactly-zero partials from turning finite-difference
    round-off into a large relative error.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-3 * scale)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def finite_diff_check(f, x, rel_tol: float = 1e-5) -> CheckReport:
    """Compare reverse-mode derivatives of ``f`` against central differences.

    ``f`` must accept a 1-D sequence whose entries are either floats or
    DiffScalars and return a scalar of the same kind.
    """
    value, rev = gradient(f, x)
    if not math.isfinite(value):
        raise FloatingPointError("f is not finite at x")
    fd = central_difference(f, x)
    disc = relative_discrepancy(rev, fd, scale=max(1.0, abs(value)))
    return CheckReport(disc <= rel_tol, disc, rel_tol, rev, fd)
