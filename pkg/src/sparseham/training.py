"""Training: L1 prediction loss through the integrator plus an L1 penalty.

For a transition ``(q0, p0) -> (q1, p1)`` the per-sample loss is

    |f(dV/dq, dT/dp, q0, p0) - (q1, p1)|_1 + lambda * (|theta1|_1 + |theta2|_1)

where ``f`` is the integrator. Samples with several targets are unrolled
target-to-target from the model's own prediction and their errors summed.

Two gradient paths exist. :func:`sample_loss` records one sample on a scalar
tape and is the reference. Training itself propagates forward sensitivities
``d(state)/d(theta)`` for a whole mini-batch through the same integrator code,
which is exact and far cheaper in numpy; the first batch of every run is
cross-checked against the tape and against central differences.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff
from .autodiff import Tape, backward
from .data import Dataset, TransitionSample
from .integrators import SCHEMES, IntegrationError, integrate
from .model import SparseHamiltonian, field_sensitivity, grad_fields

log = logging.getLogger(__name__)

GRAD_CHECK_TOL = 1e-4


class TrainingDivergedError(FloatingPointError):
    """Non-finite loss or parameters; carries where it happened and the last good parameters."""

    def __init__(self, epoch: int, batch: int, params: np.ndarray, reason: str = "non-finite loss"):
        super().__init__(f"{reason} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch, self.params = epoch, batch, params


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    lr_decay: float = 0.95
    epochs: int = 5
    lambda_l1: float = 1e-3
    batch_size: int | None = 128  # None: full batch
    eps: float = 0.01
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    scheme: str = "symplectic4"
    grad_check: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.lambda_l1 < 0:
            raise ValueError("lambda_l1 must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive or None")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training option(s): {', '.join(sorted(unknown))}")
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainReport:
    loss_history: list
    model: SparseHamiltonian
    seconds: float
    grad_check: dict
    config: TrainConfig
    steps: int = 0
    validation_error: float | None = None

    def to_dict(self) -> dict:
        # wall-clock time is left out so reruns produce identical files
        out = {
            "loss_history": [float(v) for v in self.loss_history],
            "grad_check": self.grad_check,
            "config": self.config.to_dict(),
            "steps": self.steps,
        }
        if self.validation_error is not None:
            out["validation_error"] = self.validation_error
        return out


class Adam:
    def __init__(self, size: int, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return params - lr * m_hat / (np.sqrt(v_hat) + self.eps)


# -- tape reference path ------------------------------------------------------------


def l1_penalty(model: SparseHamiltonian, lambda_l1: float) -> float:
    return lambda_l1 * float(np.abs(model.params).sum())


def sample_loss(
    model: SparseHamiltonian, sample: TransitionSample, eps: float, lambda_l1: float,
    scheme: str = "symplectic4", params=None,
):
    """Loss of one sample as a tape scalar.

    ``params`` is a ``(theta1, theta2)`` pair of tracked scalars; when omitted
    a fresh tape is created and the coefficients are tracked on it. The
    penalty enters as a constant: its derivative ``lambda*sign(theta)`` is
    added analytically by :func:`sample_loss_gradient`.
    """
    if sample.initial.dim != model.dim:
        raise ValueError(f"sample has dimension {sample.initial.dim}, model has {model.dim}")
    if params is None:
        tape = Tape()
        params = (tape.variables(model.theta1), tape.variables(model.theta2))
    grad_v, grad_t = grad_fields(model, params)
    q = np.array(sample.initial.q, dtype=object)
    p = np.array(sample.initial.p, dtype=object)
    t_prev = sample.t0
    loss = 0.0
    for t, target in sample.targets:
        q, p = integrate(grad_v, grad_t, q, p, t_prev, t, eps, scheme)
        for a, b in zip(q, target.q):
            loss = loss + abs(a - b)
        for a, b in zip(p, target.p):
            loss = loss + abs(a - b)
        t_prev = t
    return loss + l1_penalty(model, lambda_l1)


def sample_loss_gradient(
    model: SparseHamiltonian, sample: TransitionSample, eps: float, lambda_l1: float, scheme: str = "symplectic4"
):
    """``(loss, d loss / d params)`` for one sample via the tape."""
    tape = Tape()
    th1, th2 = tape.variables(model.theta1), tape.variables(model.theta2)
    loss = sample_loss(model, sample, eps, lambda_l1, scheme, (th1, th2))
    grads = backward(loss, tape)
    g = np.concatenate([grads.vector(th1), grads.vector(th2)]) + lambda_l1 * np.sign(model.params)
    return autodiff.value_of(loss), g


# -- batched forward-sensitivity path ----------------------------------------------------


class Dual:
    """Batch of states with their derivatives w.r.t. all model parameters.

    ``value`` has shape (B, n), ``tangent`` (B, n, P).
    """

    __slots__ = ("value", "tangent")
    __array_ufunc__ = None

    def __init__(self, value, tangent):
        self.value = value
        self.tangent = tangent

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value + other.value, self.tangent + other.tangent)
        return Dual(self.value + other, self.tangent)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value - other.value, self.tangent - other.tangent)
        return Dual(self.value - other, self.tangent)

    def __rsub__(self, other):
        return Dual(other - self.value, -self.tangent)

    def __mul__(self, k):
        if isinstance(k, Dual):
            raise TypeError("Dual supports scaling by constants only")
        return Dual(self.value * k, self.tangent * k)

    __rmul__ = __mul__

    def __neg__(self):
        return Dual(-self.value, -self.tangent)


def sensitivity_fields(model: SparseHamiltonian):
    """Field closures acting on :class:`Dual` batches."""
    P1 = model.theta1.size

    def grad_v(q: Dual) -> Dual:
        F, dFdx, dFdth = field_sensitivity(model.v_basis, model.theta1, q.value)
        tangent = dFdx @ q.tangent
        tangent[:, :, :P1] += dFdth
        return Dual(F, tangent)

    def grad_t(p: Dual) -> Dual:
        F, dFdx, dFdth = field_sensitivity(model.t_basis, model.theta2, p.value)
        tangent = dFdx @ p.tangent
        tangent[:, :, P1:] += dFdth
        return Dual(F, tangent)

    return grad_v, grad_t


def _interval_groups(intervals: np.ndarray):
    keys = np.round(intervals, 12)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    return [(intervals[inverse.reshape(-1) == g][0], np.flatnonzero(inverse.reshape(-1) == g)) for g in range(len(uniq))]


def batch_loss_and_grad(model: SparseHamiltonian, batch: Dataset, eps: float, lambda_l1: float,
                        scheme: str = "symplectic4"):
    """Mean loss over ``batch`` and its gradient w.r.t. ``model.params``."""
    B, n, P = len(batch), model.dim, model.n_params
    if batch.dim != n:
        raise ValueError(f"dataset has dimension {batch.dim}, model has {n}")
    grad_v, grad_t = sensitivity_fields(model)
    total = 0.0
    grad = np.zeros(P)
    for steps, idx in _interval_groups(batch.intervals()):
        b = idx.size
        q = Dual(batch.q0[idx], np.zeros((b, n, P)))
        p = Dual(batch.p0[idx], np.zeros((b, n, P)))
        for k, dt in enumerate(steps):
            q, p = integrate(grad_v, grad_t, q, p, 0.0, float(dt), eps, scheme)
            dq = q.value - batch.q[idx, k]
            dp = p.value - batch.p[idx, k]
            total += np.abs(dq).sum() + np.abs(dp).sum()
            grad += np.einsum("bn,bnp->p", np.sign(dq), q.tangent) + np.einsum("bn,bnp->p", np.sign(dp), p.tangent)
    theta = model.params
    return total / B + lambda_l1 * np.abs(theta).sum(), grad / B + lambda_l1 * np.sign(theta)


def prediction_loss(model: SparseHamiltonian, batch: Dataset, eps: float, scheme: str = "symplectic4") -> float:
    """Mean unrolled L1 prediction error (no penalty), numpy fast path."""
    grad_v, grad_t = grad_fields(model)
    total = 0.0
    for steps, idx in _interval_groups(batch.intervals()):
        q, p = batch.q0[idx], batch.p0[idx]
        for k, dt in enumerate(steps):
            q, p = integrate(grad_v, grad_t, q, p, 0.0, float(dt), eps, scheme)
            total += np.abs(q - batch.q[idx, k]).sum() + np.abs(p - batch.p[idx, k]).sum()
    return total / len(batch)


def gradient_check(model: SparseHamiltonian, sample_set: Dataset, eps: float, lambda_l1: float,
                   scheme: str = "symplectic4", tol: float = GRAD_CHECK_TOL) -> dict:
    """Compare batched sensitivities, the tape, and central differences on one sample."""
    one = sample_set.subset([0])
    _, g_batch = batch_loss_and_grad(model, one, eps, lambda_l1, scheme)
    _, g_tape = sample_loss_gradient(model, one.sample(0), eps, lambda_l1, scheme)
    penalty = lambda_l1 * np.sign(model.params)

    def f(theta):
        return prediction_loss(model.with_params(theta), one, eps, scheme)

    g_fd = autodiff.central_difference(f, model.params) + penalty
    scale = max(1.0, abs(f(model.params)))
    tape_vs_fd = autodiff.relative_discrepancy(g_tape, g_fd, scale)
    batch_vs_tape = autodiff.relative_discrepancy(g_batch, g_tape, scale)
    return {
        "tape_vs_finite_difference": tape_vs_fd,
        "sensitivity_vs_tape": batch_vs_tape,
        "tolerance": tol,
        "passed": bool(tape_vs_fd <= tol and batch_vs_tape <= tol),
    }


def train(model: SparseHamiltonian, dataset: Dataset, cfg: TrainConfig, progress=None) -> TrainReport:
    """Mini-batch ADAM on the penalised loss; deterministic given ``cfg.seed``.

    ``progress`` receives one ``epoch,<idx>,mean_loss,<value>`` line per epoch.
    """
    N = len(dataset)
    if N == 0:
        raise ValueError("cannot train on an empty dataset")
    if dataset.dim != model.dim:
        raise ValueError(f"dataset has dimension {dataset.dim}, model has {model.dim}")
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    bs = N if cfg.batch_size is None else min(cfg.batch_size, N)
    params = model.params.copy()
    adam = Adam(params.size, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    history, check, steps = [], {}, 0
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate * cfg.lr_decay**epoch
        perm = rng.permutation(N)
        weighted = 0.0
        for b, lo in enumerate(range(0, N, bs)):
            batch = dataset.subset(perm[lo : lo + bs])
            current = model.with_params(params)
            if cfg.grad_check and epoch == 0 and b == 0:
                check = gradient_check(current, batch, cfg.eps, cfg.lambda_l1, cfg.scheme)
                if not check["passed"]:
                    log.warning("gradient check failed: %s", check)
            try:
                loss, grad = batch_loss_and_grad(current, batch, cfg.eps, cfg.lambda_l1, cfg.scheme)
            except IntegrationError as exc:
                raise TrainingDivergedError(epoch, b, params.copy(), str(exc)) from None
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise TrainingDivergedError(epoch, b, params.copy())
            new = adam.step(params, grad, lr)
            if not np.all(np.isfinite(new)):
                raise TrainingDivergedError(epoch, b, params.copy(), "non-finite parameters")
            params = new
            steps += 1
            weighted += loss * len(batch)
        history.append(weighted / N)
        if progress is not None:
            progress(f"epoch,{epoch},mean_loss,{history[-1]:.17g}")
    trained = model.with_params(params)
    return TrainReport(history, trained, time.perf_counter() - start, check, cfg, steps)


@dataclass
class GridResult:
    config: TrainConfig
    report: TrainReport
    validation_error: float
    cells: list = field(default_factory=list)


def grid_search(
    dataset: Dataset, validation: Dataset, learning_rates, lambdas, template: TrainConfig, make_model,
    progress=None,
) -> GridResult:
    """Train one model per (lr, lambda) cell and keep the best validation error.

    ``make_model()`` returns a fresh initial model. Ties go to the smaller
    lambda, then the smaller learning rate. Diverged cells are recorded and
    skipped.
    """
    if len(validation) == 0:
        raise ValueError("grid search needs a non-empty validation set")
    cells, best = [], None
    for lr in learning_rates:
        for lam in lambdas:
            cfg = dataclasses.replace(template, learning_rate=lr, lambda_l1=lam)
            try:
                report = train(make_model(), dataset, cfg, progress)
                err = prediction_loss(report.model, validation, cfg.eps, cfg.scheme)
            except (TrainingDivergedError, IntegrationError) as exc:
                cells.append({"learning_rate": lr, "lambda_l1": lam, "status": "diverged", "error": str(exc)})
                continue
            if not math.isfinite(err):
                cells.append({"learning_rate": lr, "lambda_l1": lam, "status": "diverged", "error": "non-finite validation"})
                continue
            report.validation_error = err
            cells.append({"learning_rate": lr, "lambda_l1": lam, "status": "ok", "validation_error": err})
            key = (err, lam, lr)
            if best is None or key < best[0]:
                best = (key, cfg, report)
    if best is None:
        raise TrainingDivergedError(-1, -1, np.array([]), "every grid cell diverged: " + "; ".join(c["error"] for c in cells))
    (err, _, _), cfg, report = best
    return GridResult(cfg, report, err, cells)
