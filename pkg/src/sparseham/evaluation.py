"""Validation metrics: prediction error, rollouts, energy drift, sparsity."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .integrators import IntegrationError, integrate
from .model import SparseHamiltonian, SymbolicEquation, coefficient_recovery, grad_fields


@dataclass
class PredictionStats:
    position_l1: np.ndarray  # per sample, NaN where the integrator failed
    momentum_l1: np.ndarray
    failures: int

    @property
    def count(self) -> int:
        return int(self.position_l1.size)

    def _ok(self, arr):
        return arr[np.isfinite(arr)]

    def summary(self) -> dict:
        pos, mom = self._ok(self.position_l1), self._ok(self.momentum_l1)
        nan = float("nan")
        return {
            "count": self.count,
            "failures": self.failures,
            "position_l1_mean": float(pos.mean()) if pos.size else nan,
            "position_l1_median": float(np.median(pos)) if pos.size else nan,
            "momentum_l1_mean": float(mom.mean()) if mom.size else nan,
            "momentum_l1_median": float(np.median(mom)) if mom.size else nan,
        }


def _unroll(grad_v, grad_t, q, p, steps, eps, scheme):
    out = []
    for dt in steps:
        q, p = integrate(grad_v, grad_t, q, p, 0.0, float(dt), eps, scheme)
        out.append((q, p))
    return out


def prediction_stats(model: SparseHamiltonian, validation: Dataset, eps: float, scheme: str = "symplectic4",
                     ) -> PredictionStats:
    """Per-sample position and momentum L1 errors, averaged over each sample's targets.

    Multi-target samples are unrolled from the model's own predictions. A
    sample whose integration blows up is counted as a failure.
    """
    if len(validation) == 0:
        raise ValueError("validation set is empty")
    if validation.dim != model.dim:
        raise ValueError(f"validation set has dimension {validation.dim}, model has {model.dim}")
    grad_v, grad_t = grad_fields(model)
    N, K = len(validation), validation.n_targets
    pos = np.full(N, np.nan)
    mom = np.full(N, np.nan)
    intervals = validation.intervals()
    for i in range(N):
        try:
            states = _unroll(grad_v, grad_t, validation.q0[i], validation.p0[i], intervals[i], eps, scheme)
        except IntegrationError:
            continue
        pos[i] = sum(np.abs(q - validation.q[i, k]).sum() for k, (q, _) in enumerate(states)) / K
        mom[i] = sum(np.abs(p - validation.p[i, k]).sum() for k, (_, p) in enumerate(states)) / K
    return PredictionStats(pos, mom, int(np.isnan(pos).sum()))


def prediction_error(model: SparseHamiltonian, validation: Dataset, eps: float, scheme: str = "symplectic4"):
    """``(mean position L1, mean momentum L1)`` over the samples that integrated."""
    s = prediction_stats(model, validation, eps, scheme).summary()
    return s["position_l1_mean"], s["momentum_l1_mean"]


@dataclass
class RolloutSeries:
    t: np.ndarray
    position_l1: np.ndarray
    energy_abs_err: np.ndarray

    def rows(self):
        return zip(self.t, self.position_l1, self.energy_abs_err)

    def to_csv(self, path) -> None:
        lines = ["t,position_l1,energy_abs_err"]
        lines += [",".join(format(float(v), ".17g") for v in row) for row in self.rows()]
        Path(path).write_text("\n".join(lines) + "\n")

    def to_dict(self) -> dict:
        return {
            "t": self.t.tolist(),
            "position_l1": self.position_l1.tolist(),
            "energy_abs_err": self.energy_abs_err.tolist(),
        }


def rollout_divergence(
    model: SparseHamiltonian, system, q0, p0, T: float, dt: float, eps: float,
    scheme: str = "symplectic4", ref_eps: float = 1e-4,
) -> RolloutSeries:
    """Roll the model and the true system side by side from ``(q0, p0)``.

    Records the position L1 gap and ``|H_true(model state) - H_true(start)|``
    at every multiple of ``dt`` up to ``T``. The true trajectory always uses
    the fourth-order scheme at ``ref_eps``.
    """
    if not T > 0 or not dt > 0:
        raise ValueError("T and dt must be positive")
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"dt={dt} does not divide T={T}")
    q0, p0 = np.asarray(q0, dtype=np.float64), np.asarray(p0, dtype=np.float64)
    mv, mt = grad_fields(model)
    tv, tt = system.truth_fields()
    e0 = float(system.energy(q0, p0))
    t = dt * np.arange(n + 1)
    pos, energy = np.zeros(n + 1), np.zeros(n + 1)
    qm, pm, qt, pt = q0, p0, q0, p0
    for k in range(1, n + 1):
        qm, pm = integrate(mv, mt, qm, pm, t[k - 1], t[k], eps, scheme)
        qt, pt = integrate(tv, tt, qt, pt, t[k - 1], t[k], ref_eps)
        pos[k] = np.abs(qm - qt).sum()
        energy[k] = abs(float(system.energy(qm, pm)) - e0)
    return RolloutSeries(t, pos, energy)


def param_count(model: SparseHamiltonian) -> int:
    """Trainable scalars: both coefficient vectors plus inner trig parameters."""
    return model.n_params


def sparsity_stats(model: SparseHamiltonian, truth: SymbolicEquation, support_threshold: float):
    """``(true-term fraction of the basis, support precision, support recall)``."""
    if not support_threshold > 0:
        raise ValueError("support_threshold must be positive")
    rec = coefficient_recovery(model, truth, support_threshold)
    n_true = sum(1 for key, c in truth.coefficients().items() if c != 0.0 and key not in rec.unmatched)
    n_terms = model.v_basis.n_terms + model.t_basis.n_terms
    return n_true / n_terms, rec.precision, rec.recall


def sine_terms(model: SparseHamiltonian, part: str = "V") -> list[dict]:
    """Amplitude and inner parameters of each ``A*sin(x + a*x + b)`` term.

    ``A*sin(u)`` equals ``-A*sin(u + pi)``, so the pair ``(A, b)`` is only
    defined up to that flip. ``cos_coefficient`` and ``sin_coefficient`` give
    the sign-free form ``A*sin(b)*cos((1+a)x) + A*cos(b)*sin((1+a)x)``.
    """
    basis, theta = model.network(part)
    out = []
    for s, k in enumerate(basis._sine_idx):
        A = float(theta[k])
        a = float(theta[basis.n_terms + 2 * s])
        b = float(theta[basis.n_terms + 2 * s + 1])
        out.append({
            "term": basis.terms[k].description,
            "amplitude": A,
            "a": a,
            "b": b,
            "b_mod_pi": b % math.pi,
            "cos_coefficient": A * math.sin(b),
            "sin_coefficient": A * math.cos(b),
        })
    return out


@dataclass
class EvalReport:
    prediction: dict
    param_count: int
    true_term_fraction: float | None = None
    recovery: dict | None = None
    energy_drift: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "prediction": self.prediction,
            "param_count": self.param_count,
            "true_term_fraction": self.true_term_fraction,
            "recovery": self.recovery,
            "energy_drift": self.energy_drift,
            "extra": self.extra,
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def evaluate(
    model: SparseHamiltonian, validation: Dataset, eps: float, scheme: str = "symplectic4",
    truth: SymbolicEquation | None = None, support_threshold: float = 1e-3,
) -> tuple[EvalReport, PredictionStats]:
    stats = prediction_stats(model, validation, eps, scheme)
    report = EvalReport(stats.summary(), param_count(model))
    if truth is not None:
        report.recovery = coefficient_recovery(model, truth, support_threshold).to_dict()
        report.true_term_fraction = sparsity_stats(model, truth, support_threshold)[0]
    sines = sine_terms(model, "V") + sine_terms(model, "T")
    if sines:
        report.extra["sine_terms"] = sines
    return report, stats
