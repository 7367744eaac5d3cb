"""Phase-space states, trajectories and L1 metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _frozen_vector(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PhaseState:
    """Positions ``q`` and momenta ``p`` of an n-dimensional system at one instant."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = _frozen_vector(self.q, "q")
        p = _frozen_vector(self.p, "p")
        if q.shape != p.shape or q.size == 0:
            raise ValueError(f"q and p must have equal non-zero length, got {q.size} and {p.size}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def dim(self) -> int:
        return self.q.size

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_vector(cls, x) -> PhaseState:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.size % 2:
            raise ValueError("state vector must have even length")
        n = x.size // 2
        return cls(x[:n], x[n:])

    def __eq__(self, other):
        if not isinstance(other, PhaseState):
            return NotImplemented
        return np.array_equal(self.q, other.q) and np.array_equal(self.p, other.p)

    def __repr__(self):
        return f"PhaseState(q={self.q.tolist()}, p={self.p.tolist()})"


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A sequence of states at strictly increasing absolute times."""

    times: np.ndarray
    states: tuple

    def __post_init__(self):
        times = _frozen_vector(self.times, "times")
        states = tuple(self.states)
        if len(states) != times.size:
            raise ValueError("times and states must have the same length")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("times must be strictly increasing")
        if len({s.dim for s in states}) > 1:
            raise ValueError("all states must share one dimension")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @classmethod
    def from_arrays(cls, times, q, p) -> Trajectory:
        return cls(times, tuple(PhaseState(qi, pi) for qi, pi in zip(q, p)))

    def __len__(self):
        return len(self.states)

    @property
    def q(self) -> np.ndarray:
        return np.stack([s.q for s in self.states])

    @property
    def p(self) -> np.ndarray:
        return np.stack([s.p for s in self.states])


def _check_dims(a: PhaseState, b: PhaseState):
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")


def split_error(a: PhaseState, b: PhaseState) -> tuple[float, float]:
    """Return ``(sum |a.q - b.q|, sum |a.p - b.p|)``."""
    _check_dims(a, b)
    return float(np.abs(a.q - b.q).sum()), float(np.abs(a.p - b.p).sum())


def l1_distance(a: PhaseState, b: PhaseState) -> float:
    _check_dims(a, b)
    return float(np.abs(a.q - b.q).sum() + np.abs(a.p - b.p).sum())
