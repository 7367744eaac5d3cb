"""Fixed-step integrators for separable Hamiltonian flows.

All schemes only use ``+``, ``-`` and multiplication by Python floats on the
state, so the same code runs on float arrays (optionally batched along a
leading axis), on object arrays of tape scalars, and on the forward
sensitivity values used during training.

The fourth-order scheme is the Forest-Ruth composition:

    for j in 1..4:  q += c_j h dT/dp(p);  p -= d_j h dV/dq(q)

with the momentum kick using the freshly drifted position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import DiffScalar

SCHEMES = ("symplectic4", "leapfrog", "rk4")


class IntegrationError(FloatingPointError):
    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


@dataclass(frozen=True)
class SymplecticConstants:
    c: tuple[float, float, float, float]
    d: tuple[float, float, float, float]

    def __post_init__(self):
        c, d = self.c, self.d
        if math.fsum(c) != 1.0 or math.fsum(d) != 1.0:
            raise ValueError("splitting coefficients must each sum to 1")
        if c[0] != c[3] or c[1] != c[2] or d[0] != d[2] or d[3] != 0.0:
            raise ValueError("splitting coefficients violate the symmetric pattern")


def _forest_ruth() -> SymplecticConstants:
    cbrt2 = 2.0 ** (1.0 / 3.0)
    c1 = 1.0 / (2.0 * (2.0 - cbrt2))
    d1 = 1.0 / (2.0 - cbrt2)
    # c2, d2 from the consistency identities; these subtractions are exact in
    # binary floating point, so the sums come out as exactly 1
    c2 = 0.5 - c1
    d2 = 1.0 - 2.0 * d1
    assert abs(c2 - (1.0 - cbrt2) / (2.0 * (2.0 - cbrt2))) < 1e-15
    assert abs(d2 + cbrt2 / (2.0 - cbrt2)) < 1e-15
    return SymplecticConstants((c1, c2, c2, c1), (d1, d2, d1, 0.0))


FOREST_RUTH = _forest_ruth()


@dataclass(frozen=True)
class IntegratorConfig:
    eps: float = 0.01
    scheme: str = "symplectic4"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")


def _values(x):
    v = getattr(x, "value", None)
    if v is not None and not isinstance(x, DiffScalar):
        return v
    x = np.asarray(x)
    if x.dtype == object:
        return np.array([e.value if isinstance(e, DiffScalar) else e for e in x.ravel()], dtype=np.float64)
    return x


def _check(q, p, stage):
    with np.errstate(invalid="ignore"):
        ok = np.all(np.isfinite(_values(q))) and np.all(np.isfinite(_values(p)))
    if not ok:
        raise IntegrationError(f"non-finite state after stage {stage}", stage)


def n_steps(t0: float, t1: float, eps: float) -> int:
    """``max(1, ceil((t1 - t0) / (4 eps)))`` with a guard against round-off."""
    ratio = (t1 - t0) / (4.0 * eps)
    return max(1, math.ceil(ratio - 1e-9))


def symplectic4_step(grad_v, grad_t, q, p, h: float, constants: SymplecticConstants = FOREST_RUTH):
    with np.errstate(over="ignore", invalid="ignore"):
        for j, (c, d) in enumerate(zip(constants.c, constants.d)):
            q = q + (c * h) * grad_t(p)
            if d != 0.0:
                p = p - (d * h) * grad_v(q)
            _check(q, p, j + 1)
    return q, p


def leapfrog_step(grad_v, grad_t, q, p, h: float):
    with np.errstate(over="ignore", invalid="ignore"):
        p = p - (0.5 * h) * grad_v(q)
        q = q + h * grad_t(p)
        p = p - (0.5 * h) * grad_v(q)
        _check(q, p, 1)
    return q, p


def rk4_step(grad_v, grad_t, q, p, h: float):
    with np.errstate(over="ignore", invalid="ignore"):
        k1q, k1p = grad_t(p), -grad_v(q)
        k2q, k2p = grad_t(p + (0.5 * h) * k1p), -grad_v(q + (0.5 * h) * k1q)
        k3q, k3p = grad_t(p + (0.5 * h) * k2p), -grad_v(q + (0.5 * h) * k2q)
        k4q, k4p = grad_t(p + h * k3p), -grad_v(q + h * k3q)
        q = q + (h / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        p = p + (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        _check(q, p, 1)
    return q, p


_STEPPERS = {"symplectic4": symplectic4_step, "leapfrog": leapfrog_step, "rk4": rk4_step}


def integrate(grad_v, grad_t, q0, p0, t0: float, t1: float, eps: float, scheme: str = "symplectic4"):
    """Advance ``(q0, p0)`` from ``t0`` to ``t1`` with equal sub-steps of at most ``4*eps``."""
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    if not eps > 0:
        raise ValueError("eps must be positive")
    step = _STEPPERS[scheme]
    steps = n_steps(t0, t1, eps)
    h = float(t1 - t0) / steps
    q, p = q0, p0
    for i in range(steps):
        try:
            q, p = step(grad_v, grad_t, q, p, h)
        except IntegrationError as exc:
            raise IntegrationError(f"{exc} of sub-step {i + 1}/{steps}", exc.stage) from None
    return q, p


def symplectic4_integrate(grad_v, grad_t, q0, p0, t0, t1, eps):
    return integrate(grad_v, grad_t, q0, p0, t0, t1, eps, "symplectic4")


def leapfrog_integrate(grad_v, grad_t, q0, p0, t0, t1, eps):
    return integrate(grad_v, grad_t, q0, p0, t0, t1, eps, "leapfrog")


def rk4_integrate(grad_v, grad_t, q0, p0, t0, t1, eps):
    return integrate(grad_v, grad_t, q0, p0, t0, t1, eps, "rk4")


def rollout(grad_v, grad_t, q0, p0, times, eps: float, scheme: str = "symplectic4"):
    """States at every entry of ``times`` (``times[0]`` is the start)."""
    q, p = np.asarray(q0, dtype=np.float64), np.asarray(p0, dtype=np.float64)
    qs, ps = [q], [p]
    for ta, tb in zip(times[:-1], times[1:]):
        q, p = integrate(grad_v, grad_t, q, p, ta, tb, eps, scheme)
        qs.append(q)
        ps.append(p)
    return np.stack(qs), np.stack(ps)


def convergence_order(scheme: str, system, h_values, t_end: float = 1.0, q0=None, p0=None) -> float:
    """Fitted slope of log(endpoint error) against log(h).

    The reference is the same scheme run at ``min(h_values) / 100``.
    """
    h_values = sorted(float(h) for h in h_values)
    if len(h_values) < 3:
        raise ValueError("need at least three step sizes")
    grad_v, grad_t = system.truth_fields()
    if q0 is None:
        q0 = np.full(system.dim, 1.0)
    if p0 is None:
        p0 = np.zeros(system.dim)
    q0, p0 = np.asarray(q0, dtype=np.float64), np.asarray(p0, dtype=np.float64)

    def endpoint(h):
        # eps = h/4 so that each sub-step has length exactly h
        return integrate(grad_v, grad_t, q0, p0, 0.0, t_end, h / 4.0, scheme)

    q_ref, p_ref = endpoint(h_values[0] / 100.0)
    errors = []
    for h in h_values:
        q, p = endpoint(h)
        errors.append(np.abs(q - q_ref).sum() + np.abs(p - p_ref).sum())
    errors = np.array(errors)
    if np.any(errors <= 0):
        raise ValueError("zero error at some step size; cannot fit an order")
    slope, _ = np.polyfit(np.log(h_values), np.log(errors), 1)
    return float(slope)
