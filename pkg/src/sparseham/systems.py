"""Reference Hamiltonian systems with analytic gradient fields and samplers.

Every system works on batched arrays: ``q`` and ``p`` of shape ``(..., n)``.
"""

from __future__ import annotations

import math

import numpy as np

from .model import SymbolicEquation
from .phase import PhaseState

MAX_REJECTIONS = 100_000


class SamplingError(RuntimeError):
    pass


class System:
    name = "system"
    dim = 1

    def potential(self, q):
        raise NotImplementedError

    def kinetic(self, p):
        raise NotImplementedError

    def grad_v(self, q):
        raise NotImplementedError

    def grad_t(self, p):
        raise NotImplementedError

    def energy(self, q, p):
        return self.potential(np.asarray(q, dtype=np.float64)) + self.kinetic(np.asarray(p, dtype=np.float64))

    def truth_fields(self):
        return self.grad_v, self.grad_t

    def sample_initial_state(self, rng) -> PhaseState:
        raise NotImplementedError

    def truth_equation(self) -> SymbolicEquation:
        raise NotImplementedError

    def descriptor(self) -> dict:
        return {"system": self.name}

    def __repr__(self):
        params = ", ".join(f"{k}={v!r}" for k, v in self.descriptor().items() if k != "system")
        return f"{type(self).__name__}({params})"


class HarmonicOscillator(System):
    """``H = p^2 / (2m) + k q^2 / 2`` in ``dim`` independent coordinates."""

    name = "harmonic"

    def __init__(self, dim: int = 1, k: float = 1.0, m: float = 1.0):
        self.dim, self.k, self.m = dim, float(k), float(m)

    def potential(self, q):
        return 0.5 * self.k * np.sum(np.asarray(q) ** 2, axis=-1)

    def kinetic(self, p):
        return np.sum(np.asarray(p) ** 2, axis=-1) / (2.0 * self.m)

    def grad_v(self, q):
        return self.k * q

    def grad_t(self, p):
        return p * (1.0 / self.m)

    def exact(self, q0, p0, t):
        w = math.sqrt(self.k / self.m)
        q0, p0 = np.asarray(q0, dtype=np.float64), np.asarray(p0, dtype=np.float64)
        q = q0 * math.cos(w * t) + p0 / (self.m * w) * math.sin(w * t)
        p = p0 * math.cos(w * t) - q0 * self.m * w * math.sin(w * t)
        return q, p

    def sample_initial_state(self, rng) -> PhaseState:
        return PhaseState(rng.uniform(-1, 1, self.dim), rng.uniform(-1, 1, self.dim))

    def truth_equation(self):
        names = ("q",) if self.dim == 1 else tuple(f"q{i + 1}" for i in range(self.dim))
        pnames = ("p",) if self.dim == 1 else tuple(f"p{i + 1}" for i in range(self.dim))
        return SymbolicEquation.from_parts(
            {"V": {f"{n}^2": 0.5 * self.k for n in names}, "T": {f"{n}^2": 0.5 / self.m for n in pnames}}
        )

    def descriptor(self):
        return {"system": self.name, "dim": self.dim, "k": self.k, "m": self.m}


class HenonHeilesSystem(System):
    """``H = (px^2 + py^2 + qx^2 + qy^2)/2 + qx^2 qy - qy^3/3``."""

    name = "henon"
    dim = 2
    box = ((-1.0, 1.0), (-0.5, 1.0))
    energy_band = (1.0 / 12.0, 1.0 / 6.0)

    def potential(self, q):
        q = np.asarray(q)
        x, y = q[..., 0], q[..., 1]
        return 0.5 * (x * x + y * y) + x * x * y - y**3 / 3.0

    def kinetic(self, p):
        return 0.5 * np.sum(np.asarray(p) ** 2, axis=-1)

    def grad_v(self, q):
        x, y = q[..., 0], q[..., 1]
        return np.stack([x + 2.0 * x * y, y + x * x - y * y], axis=-1)

    def grad_t(self, p):
        return p * 1.0

    def sample_initial_state(self, rng) -> PhaseState:
        """Position inside the bounded triangular well, energy in the chaotic band.

        Inside the box, ``V(q) < 1/6`` holds exactly on the interior of the
        triangle, so requiring ``V(q) < E < 1/6`` keeps the orbit bound.
        """
        (x0, x1), (y0, y1) = self.box
        lo, hi = self.energy_band
        for _ in range(MAX_REJECTIONS):
            q = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])
            target = rng.uniform(lo, hi)
            v = float(self.potential(q))
            if v >= target:
                continue
            speed = math.sqrt(2.0 * (target - v))
            angle = rng.uniform(0.0, 2.0 * math.pi)
            p = speed * np.array([math.cos(angle), math.sin(angle)])
            if lo < float(self.energy(q, p)) < hi:
                return PhaseState(q, p)
        raise SamplingError("Henon-Heiles rejection sampler exhausted its attempts")

    def truth_equation(self):
        return SymbolicEquation.from_parts(
            {
                "V": {"q1^2": 0.5, "q2^2": 0.5, "q1^2*q2": 1.0, "q2^3": -1.0 / 3.0},
                "T": {"p1^2": 0.5, "p2^2": 0.5},
            }
        )


class CoupledOscillatorSystem(System):
    """``H = (p1^2 + p2^2 + q1^2 + q2^2 + k (q1 q2)^2) / 2``."""

    name = "oscillator"
    dim = 2

    def __init__(self, k: float = 1.0):
        self.k = float(k)

    def potential(self, q):
        q = np.asarray(q)
        a, b = q[..., 0], q[..., 1]
        return 0.5 * (a * a + b * b + self.k * (a * b) ** 2)

    def kinetic(self, p):
        return 0.5 * np.sum(np.asarray(p) ** 2, axis=-1)

    def grad_v(self, q):
        a, b = q[..., 0], q[..., 1]
        return np.stack([a + self.k * a * b * b, b + self.k * a * a * b], axis=-1)

    def grad_t(self, p):
        return p * 1.0

    def sample_initial_state(self, rng) -> PhaseState:
        return PhaseState(rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2))

    def truth_equation(self):
        return SymbolicEquation.from_parts(
            {"V": {"q1^2": 0.5, "q2^2": 0.5, "q1^2*q2^2": 0.5 * self.k}, "T": {"p1^2": 0.5, "p2^2": 0.5}}
        )

    def descriptor(self):
        return {"system": self.name, "k": self.k}


class MassSpringSystem(System):
    """Five masses on a line joined by six springs between walls at 0 and ``L``."""

    name = "spring"
    dim = 5

    def __init__(self, masses, springs, L: float = 1.0):
        self.masses = np.array(masses, dtype=np.float64)
        self.springs = np.array(springs, dtype=np.float64)
        self.L = float(L)
        if self.masses.shape != (5,) or self.springs.shape != (6,):
            raise ValueError("mass-spring chain needs 5 masses and 6 spring constants")
        if np.any(self.masses <= 0) or np.any(self.springs <= 0):
            raise ValueError("masses and spring constants must be positive")
        k = self.springs
        self._stiffness = np.diag(k[:-1] + k[1:]) - np.diag(k[1:-1], 1) - np.diag(k[1:-1], -1)
        self._wall_force = np.zeros(5)
        self._wall_force[-1] = k[-1] * self.L

    def _extended(self, q):
        q = np.asarray(q)
        zero = np.zeros(q.shape[:-1] + (1,))
        return np.concatenate([zero, q, zero + self.L], axis=-1)

    def potential(self, q):
        stretch = np.diff(self._extended(q), axis=-1)
        return 0.5 * np.sum(self.springs * stretch**2, axis=-1)

    def kinetic(self, p):
        return np.sum(np.asarray(p) ** 2 / (2.0 * self.masses), axis=-1)

    def grad_v(self, q):
        # linear force: K q - b with tridiagonal stiffness K
        return np.asarray(q) @ self._stiffness - self._wall_force

    def grad_t(self, p):
        return p / self.masses

    def sample_initial_state(self, rng) -> PhaseState:
        q = np.arange(1, 6) / 6.0 * self.L
        return PhaseState(q, rng.uniform(-0.1, 0.1, 5))

    def truth_equation(self):
        k, m = self.springs, self.masses
        v = {f"q{i + 1}^2": 0.5 * (k[i] + k[i + 1]) for i in range(5)}
        v.update({f"q{i + 1}*q{i + 2}": -k[i + 1] for i in range(4)})
        v["q5"] = -k[5] * self.L
        t = {f"p{i + 1}^2": 0.5 / m[i] for i in range(5)}
        return SymbolicEquation.from_parts({"V": v, "T": t})

    def descriptor(self):
        return {"system": self.name, "masses": self.masses.tolist(), "springs": self.springs.tolist(), "L": self.L}


class PendulumSystem(System):
    """``H = p^2 / (2 m l^2) - m g l cos(q) + m g l``."""

    name = "pendulum"
    dim = 1
    initial_state = (1.4, 0.0)

    def __init__(self, m: float = 2.0, g: float = 1.0, l: float = 1.0):  # noqa: E741
        if min(m, g, l) <= 0:
            raise ValueError("m, g and l must be positive")
        self.m, self.g, self.l = float(m), float(g), float(l)

    @property
    def mgl(self) -> float:
        return self.m * self.g * self.l

    @property
    def kinetic_coefficient(self) -> float:
        return 1.0 / (2.0 * self.m * self.l**2)

    def potential(self, q):
        return -self.mgl * np.cos(np.asarray(q)[..., 0]) + self.mgl

    def kinetic(self, p):
        return self.kinetic_coefficient * np.asarray(p)[..., 0] ** 2

    def grad_v(self, q):
        return self.mgl * np.sin(q)

    def grad_t(self, p):
        return (2.0 * self.kinetic_coefficient) * p

    def sample_initial_state(self, rng) -> PhaseState:
        return PhaseState([self.initial_state[0]], [self.initial_state[1]])

    def truth_equation(self):
        # the cosine term has no monomial counterpart and stays unmatched
        return SymbolicEquation.from_parts({"V": {"cos(q)": -self.mgl}, "T": {"p^2": self.kinetic_coefficient}})

    def descriptor(self):
        return {"system": self.name, "m": self.m, "g": self.g, "l": self.l}


def energy(system: System, state: PhaseState) -> float:
    if state.dim != system.dim:
        raise ValueError(f"state has dimension {state.dim}, system needs {system.dim}")
    return float(system.energy(state.q, state.p))


def truth_fields(system: System):
    return system.truth_fields()


def sample_initial_state(system: System, rng) -> PhaseState:
    return system.sample_initial_state(rng)


def sample_system_params(kind: str, rng) -> System:
    """Draw a system instance; only the mass-spring chain has random parameters."""
    if kind == "spring":
        return MassSpringSystem(rng.uniform(1.0, 5.0, 5), rng.uniform(0.05, 0.4, 6), 1.0)
    return system_from_config({"system": kind})


def system_from_config(cfg: dict) -> System:
    """Build a system from ``{"system": name, ...params}``."""
    cfg = dict(cfg)
    kind = cfg.pop("system", None)
    if kind == "henon":
        return HenonHeilesSystem()
    if kind == "oscillator":
        return CoupledOscillatorSystem(cfg.get("k", 1.0))
    if kind == "pendulum":
        return PendulumSystem(cfg.get("m", 2.0), cfg.get("g", 1.0), cfg.get("l", 1.0))
    if kind == "harmonic":
        return HarmonicOscillator(cfg.get("dim", 1), cfg.get("k", 1.0), cfg.get("m", 1.0))
    if kind == "spring":
        if "masses" in cfg:
            return MassSpringSystem(cfg["masses"], cfg["springs"], cfg.get("L", 1.0))
        return sample_system_params("spring", np.random.default_rng(cfg.get("param_seed", 0)))
    raise ValueError(f"unknown system {kind!r}; expected henon, oscillator, spring or pendulum")
