"""Sparse separable Hamiltonian ``H(q, p) = V(q) + T(p)`` over function bases.

``V`` and ``T`` are each a linear combination of basis terms. For the
trigonometric basis the parameter vector additionally carries the inner
``(a, b)`` of every sine term after the linear coefficients, so ``theta1``
always has length ``v_basis.n_params``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .basis import FunctionBasis, basis_from_spec

MODEL_FORMAT = "sparseham-model/1"
PARTS = ("V", "T")


def initial_parameters(basis: FunctionBasis, init: str = "zeros", rng=None) -> np.ndarray:
    """Starting parameters for one network.

    ``"zeros"`` is deterministic except that sine amplitudes start at 0.1:
    with a zero amplitude the inner parameters receive no gradient.
    ``"uniform"`` draws U(-0.01, 0.01) from ``rng``.
    """
    if init == "zeros":
        theta = np.zeros(basis.n_params)
    elif init == "uniform":
        if rng is None:
            raise ValueError("uniform initialisation needs an rng")
        theta = rng.uniform(-0.01, 0.01, basis.n_params)
    else:
        raise ValueError(f"unknown init {init!r}")
    for k in basis._sine_idx:
        if init == "zeros":
            theta[k] = 0.1
    return theta


@dataclass(eq=False)
class SparseHamiltonian:
    v_basis: FunctionBasis
    t_basis: FunctionBasis
    theta1: np.ndarray
    theta2: np.ndarray

    def __post_init__(self):
        if self.v_basis.num_vars != self.t_basis.num_vars:
            raise ValueError("potential and kinetic bases must cover the same number of variables")
        self.theta1 = np.array(self.theta1, dtype=np.float64).reshape(-1)
        self.theta2 = np.array(self.theta2, dtype=np.float64).reshape(-1)
        for name, theta, basis in (("theta1", self.theta1, self.v_basis), ("theta2", self.theta2, self.t_basis)):
            if theta.size != basis.n_params:
                raise ValueError(f"{name} has {theta.size} entries, basis needs {basis.n_params}")
            if not np.all(np.isfinite(theta)):
                raise ValueError(f"{name} contains non-finite values")

    @classmethod
    def initial(cls, v_basis, t_basis, init: str = "zeros", seed: int | None = None):
        rng = np.random.default_rng(seed) if init == "uniform" else None
        return cls(v_basis, t_basis, initial_parameters(v_basis, init, rng), initial_parameters(t_basis, init, rng))

    @classmethod
    def from_specs(cls, v_spec: dict, t_spec: dict, dim: int, init: str = "zeros", seed=None):
        return cls.initial(basis_from_spec(v_spec, dim, "q"), basis_from_spec(t_spec, dim, "p"), init, seed)

    @property
    def dim(self) -> int:
        return self.v_basis.num_vars

    @property
    def n_params(self) -> int:
        return self.theta1.size + self.theta2.size

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.theta1, self.theta2])

    def with_params(self, params) -> SparseHamiltonian:
        params = np.asarray(params, dtype=np.float64)
        k = self.theta1.size
        return SparseHamiltonian(self.v_basis, self.t_basis, params[:k], params[k:])

    def copy(self) -> SparseHamiltonian:
        return self.with_params(self.params)

    def network(self, part: str):
        if part == "V":
            return self.v_basis, self.theta1
        if part == "T":
            return self.t_basis, self.theta2
        raise ValueError(f"part must be 'V' or 'T', got {part!r}")

    # -- batched numpy fast path ---------------------------------------------

    def potential_values(self, q) -> np.ndarray:
        return _energy(self.v_basis, self.theta1, q)

    def kinetic_values(self, p) -> np.ndarray:
        return _energy(self.t_basis, self.theta2, p)

    def energy(self, q, p) -> np.ndarray:
        return self.potential_values(q) + self.kinetic_values(p)

    def grad_v(self, q) -> np.ndarray:
        return _field(self.v_basis, self.theta1, q)

    def grad_t(self, p) -> np.ndarray:
        return _field(self.t_basis, self.theta2, p)


def _split(basis: FunctionBasis, theta):
    return theta[: basis.n_terms], theta[basis.n_terms :]


def _energy(basis, theta, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    coef, inner = _split(basis, theta)
    out = basis.values(x.reshape(-1, basis.num_vars), inner) @ coef
    return out.reshape(x.shape[:-1])


def _field(basis, theta, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    coef, inner = _split(basis, theta)
    J = basis.jacobian(x.reshape(-1, basis.num_vars), inner)
    return np.einsum("bkn,k->bn", J, coef).reshape(x.shape)


def field_sensitivity(basis: FunctionBasis, theta, x):
    """Field ``F = d(energy)/dx`` plus ``dF/dx`` and ``dF/dtheta`` for a batch.

    Returns arrays of shapes (B, n), (B, n, n) and (B, n, P).
    """
    coef, inner = _split(basis, theta)
    J, H = basis.jacobian_and_hessian(x, inner)
    F = np.einsum("bkn,k->bn", J, coef)
    dFdx = np.einsum("bkij,k->bij", H, coef)
    dFdtheta = np.empty((x.shape[0], basis.num_vars, basis.n_params))
    dFdtheta[:, :, : basis.n_terms] = J.transpose(0, 2, 1)
    if basis.n_inner:
        dFdtheta[:, :, basis.n_terms :] = np.einsum("bkni,k->bni", basis.jacobian_inner(x, inner), coef)
    return F, dFdx, dFdtheta


# -- tape-compatible scalar path ------------------------------------------------


def _is_zero(c) -> bool:
    return isinstance(c, (float, np.floating)) and c == 0.0


def _scalar_energy(basis, theta, x):
    coef, inner = list(theta[: basis.n_terms]), list(theta[basis.n_terms :])
    total = 0.0
    for c, phi in zip(coef, basis.scalar_terms(list(x), inner)):
        if _is_zero(c) or _is_zero(phi):
            continue
        total = total + c * phi
    return total


def _scalar_field(basis, theta, x) -> np.ndarray:
    coef, inner = list(theta[: basis.n_terms]), list(theta[basis.n_terms :])
    rows = basis.scalar_term_gradients(list(x), inner)
    out = np.empty(basis.num_vars, dtype=object)
    for i in range(basis.num_vars):
        acc = 0.0
        for c, row in zip(coef, rows):
            if _is_zero(c) or _is_zero(row[i]):
                continue
            acc = acc + c * row[i]
        out[i] = acc
    return out


def _check_len(x, basis):
    if len(x) != basis.num_vars:
        raise ValueError(f"expected {basis.num_vars} variables, got {len(x)}")


def potential(model: SparseHamiltonian, q, theta1=None):
    """``V(q)`` recorded on the tape of ``q`` (and ``theta1`` when tracked)."""
    _check_len(q, model.v_basis)
    return _scalar_energy(model.v_basis, model.theta1 if theta1 is None else theta1, q)


def kinetic(model: SparseHamiltonian, p, theta2=None):
    _check_len(p, model.t_basis)
    return _scalar_energy(model.t_basis, model.theta2 if theta2 is None else theta2, p)


def grad_fields(model: SparseHamiltonian, params=None):
    """Closures ``(dV/dq, dT/dp)`` for the integrators.

    Object arrays of DiffScalars are evaluated element-wise on the tape so
    gradients reach ``params`` (a ``(theta1, theta2)`` pair of tracked
    scalars); float arrays take the batched numpy path.
    """
    theta1, theta2 = (model.theta1, model.theta2) if params is None else params

    def grad_v(q):
        q = np.asarray(q)
        if q.dtype == object:
            return _scalar_field(model.v_basis, theta1, q)
        return _field(model.v_basis, np.asarray(theta1, dtype=np.float64), q)

    def grad_t(p):
        p = np.asarray(p)
        if p.dtype == object:
            return _scalar_field(model.t_basis, theta2, p)
        return _field(model.t_basis, np.asarray(theta2, dtype=np.float64), p)

    return grad_v, grad_t


# -- symbolic export and recovery -------------------------------------------------


class EquationTerm(NamedTuple):
    coefficient: float
    description: str
    part: str


@dataclass
class SymbolicEquation:
    """Human-readable Hamiltonian: terms sorted by decreasing ``|coefficient|``."""

    terms: list[EquationTerm]
    omitted_below: float = 0.0
    inner: dict = field(default_factory=dict)

    def __post_init__(self):
        self.terms = sorted((EquationTerm(*t) for t in self.terms), key=lambda t: -abs(t.coefficient))

    @classmethod
    def from_parts(cls, parts: dict) -> SymbolicEquation:
        """Build from ``{"V": {description: coef}, "T": {...}}``."""
        terms = [EquationTerm(float(c), d, part) for part, entries in parts.items() for d, c in entries.items()]
        return cls(terms)

    def coefficients(self) -> dict:
        return {(t.part, t.description): t.coefficient for t in self.terms}

    def _render_term(self, t: EquationTerm) -> str:
        desc = t.description
        if (t.part, desc) in self.inner:
            a, b = self.inner[(t.part, desc)]
            var = desc[4:-1]
            desc = f"sin({var}{_signed(a)}*{var}{_signed(b)})"
        if desc == "1":
            return f"{t.coefficient:.6g}"
        return f"{t.coefficient:.6g}*{desc}"

    def render(self) -> str:
        if not self.terms:
            return "0"
        out = self._render_term(self.terms[0])
        for t in self.terms[1:]:
            s = self._render_term(t)
            out += f" - {s[1:]}" if s.startswith("-") else f" + {s}"
        return out

    def __str__(self):
        return self.render()


def _signed(x: float) -> str:
    return f" - {-x:.6g}" if x < 0 else f" + {x:.6g}"


def _term_index(model: SparseHamiltonian) -> dict:
    idx = {}
    for part, (basis, _) in (("V", model.network("V")), ("T", model.network("T"))):
        for k, d in enumerate(basis.descriptions):
            idx[(part, d)] = k
    return idx


def extract_equation(model: SparseHamiltonian, display_threshold: float = 0.0) -> SymbolicEquation:
    if display_threshold < 0:
        raise ValueError("display_threshold must be non-negative")
    terms, inner = [], {}
    for part in PARTS:
        basis, theta = model.network(part)
        coef, inner_params = _split(basis, theta)
        for c, t in zip(coef, basis.terms):
            if c != 0.0 and abs(c) >= display_threshold:
                terms.append(EquationTerm(float(c), t.description, part))
        for s, k in enumerate(basis._sine_idx):
            inner[(part, basis.terms[k].description)] = (float(inner_params[2 * s]), float(inner_params[2 * s + 1]))
    return SymbolicEquation(terms, display_threshold, inner)


def model_from_equation(eq: SymbolicEquation, v_basis: FunctionBasis, t_basis: FunctionBasis) -> SparseHamiltonian:
    """Load coefficients from ``eq`` into fresh bases; absent terms become 0."""
    theta1, theta2 = np.zeros(v_basis.n_params), np.zeros(t_basis.n_params)
    model = SparseHamiltonian(v_basis, t_basis, theta1, theta2)
    idx = _term_index(model)
    for t in eq.terms:
        key = (t.part, t.description)
        if key not in idx:
            raise KeyError(f"term {t.description!r} is not in the {t.part} basis")
        (model.theta1 if t.part == "V" else model.theta2)[idx[key]] = t.coefficient
    for part in PARTS:
        basis, theta = model.network(part)
        for s, k in enumerate(basis._sine_idx):
            a, b = eq.inner.get((part, basis.terms[k].description), (0.0, 0.0))
            theta[basis.n_terms + 2 * s] = a
            theta[basis.n_terms + 2 * s + 1] = b
    return model


@dataclass
class RecoveryReport:
    term_errors: dict
    unmatched: list
    max_true_error: float
    max_spurious: float
    precision: float
    recall: float
    support_threshold: float

    def to_dict(self) -> dict:
        return {
            "term_errors": {f"{p}:{d}": e for (p, d), e in self.term_errors.items()},
            "unmatched": [f"{p}:{d}" for p, d in self.unmatched],
            "max_true_error": self.max_true_error,
            "max_spurious": self.max_spurious,
            "precision": self.precision,
            "recall": self.recall,
            "support_threshold": self.support_threshold,
        }


def coefficient_recovery(
    model: SparseHamiltonian, truth: SymbolicEquation, support_threshold: float = 1e-3
) -> RecoveryReport:
    """Compare learned linear coefficients against a reference equation."""
    idx = _term_index(model)
    true_coef = truth.coefficients()
    learned = {}
    for (part, desc), k in idx.items():
        basis, theta = model.network(part)
        learned[(part, desc)] = float(theta[k])
    errors = {key: abs(learned[key] - c) for key, c in true_coef.items() if key in learned}
    unmatched = [key for key in true_coef if key not in learned]
    spurious = [abs(v) for key, v in learned.items() if key not in true_coef]
    predicted = {key for key, v in learned.items() if abs(v) >= support_threshold}
    actual = {key for key in true_coef if key in learned and true_coef[key] != 0.0}
    hits = len(predicted & actual)
    precision = hits / len(predicted) if predicted else (1.0 if not actual else 0.0)
    recall = hits / len(actual) if actual else 1.0
    return RecoveryReport(
        errors,
        unmatched,
        max(errors.values(), default=0.0),
        max(spurious, default=0.0),
        precision,
        recall,
        support_threshold,
    )


# -- serialisation ----------------------------------------------------------------


def model_to_dict(model: SparseHamiltonian) -> dict:
    c1, i1 = _split(model.v_basis, model.theta1)
    c2, i2 = _split(model.t_basis, model.theta2)
    return {
        "format": MODEL_FORMAT,
        "dim": model.dim,
        "v_basis": model.v_basis.spec(),
        "t_basis": model.t_basis.spec(),
        "v_terms": model.v_basis.descriptions,
        "t_terms": model.t_basis.descriptions,
        "theta1": [float(v) for v in c1],
        "inner1": [float(v) for v in i1],
        "theta2": [float(v) for v in c2],
        "inner2": [float(v) for v in i2],
    }


def model_from_dict(data: dict) -> SparseHamiltonian:
    if data.get("format") != MODEL_FORMAT:
        raise ValueError(f"unsupported model format {data.get('format')!r}")
    dim = int(data["dim"])
    v_basis = basis_from_spec(data["v_basis"], dim, "q")
    t_basis = basis_from_spec(data["t_basis"], dim, "p")
    for key, basis in (("v_terms", v_basis), ("t_terms", t_basis)):
        if key in data and list(data[key]) != basis.descriptions:
            raise ValueError(f"{key} does not match the rebuilt basis")
    theta1 = list(data["theta1"]) + list(data.get("inner1", []))
    theta2 = list(data["theta2"]) + list(data.get("inner2", []))
    return SparseHamiltonian(v_basis, t_basis, theta1, theta2)


def save_model(model: SparseHamiltonian, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


def load_model(path) -> SparseHamiltonian:
    return model_from_dict(json.loads(Path(path).read_text()))

