"""Function bases spanning the search space for learned energy functions.

Two families are provided. Monomial bases enumerate products of integer
powers, either with every exponent capped at ``degree`` ("tensor") or with the
exponent sum capped at ``degree`` ("total"). The trigonometric basis on one
variable is ``[x, x^2, x^3, sin(x + a*x + b)]`` where ``a`` and ``b`` are
learnable inner parameters.

Each basis evaluates its terms and their state partials in three ways: batched
numpy arrays for fast rollouts, and element-by-element on tape scalars so that
gradients flow to the state and to the inner parameters.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import autodiff

MAX_TERMS = 100_000
MODES = ("tensor", "total", "trig")


class BasisTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class BasisTerm:
    kind: str  # "monomial" | "sine"
    exponents: tuple[int, ...]
    description: str
    var: int = 0

    @property
    def is_constant(self) -> bool:
        return self.kind == "monomial" and not any(self.exponents)


def _monomial_description(exponents, names) -> str:
    parts = []
    for name, e in zip(names, exponents):
        if e == 1:
            parts.append(name)
        elif e > 1:
            parts.append(f"{name}^{e}")
    return "*".join(parts) if parts else "1"


def monomial_term(exponents, names) -> BasisTerm:
    exponents = tuple(int(e) for e in exponents)
    if len(exponents) != len(names) or any(e < 0 for e in exponents):
        raise ValueError(f"bad exponent vector {exponents} for variables {names}")
    return BasisTerm("monomial", exponents, _monomial_description(exponents, names))


def sine_term(var: int, names) -> BasisTerm:
    return BasisTerm("sine", (0,) * len(names), f"sin({names[var]})", var)


_FACTOR = re.compile(r"^([A-Za-z_][A-Za-z_0-9]*)(?:\^(\d+))?$")
_SINE = re.compile(r"^sin\(([A-Za-z_][A-Za-z_0-9]*)\)$")


def parse_term(text: str, names) -> BasisTerm:
    """Inverse of ``BasisTerm.description`` for the given variable names."""
    names = tuple(names)
    text = text.strip()
    m = _SINE.match(text)
    if m:
        if m.group(1) not in names:
            raise ValueError(f"unknown variable in {text!r}")
        return sine_term(names.index(m.group(1)), names)
    exponents = [0] * len(names)
    if text != "1":
        for factor in text.split("*"):
            fm = _FACTOR.match(factor.strip())
            if not fm or fm.group(1) not in names:
                raise ValueError(f"cannot parse term {text!r}")
            exponents[names.index(fm.group(1))] += int(fm.group(2) or 1)
    return monomial_term(exponents, names)


def _grlex_key(exponents):
    return (sum(exponents), tuple(-e for e in exponents))


def _falling(e: np.ndarray, k: int) -> np.ndarray:
    out = np.ones(e.shape, dtype=np.float64)
    for j in range(k):
        out *= e - j
    return out


def _product(factors):
    """Product that skips literal 1.0 factors so tapes stay small."""
    result = 1.0
    for f in factors:
        if isinstance(f, float) and f == 1.0:
            continue
        result = f if (isinstance(result, float) and result == 1.0) else result * f
    return result


@dataclass(frozen=True, eq=False)
class FunctionBasis:
    num_vars: int
    terms: tuple[BasisTerm, ...]
    mode: str
    degree: int
    include_constant: bool
    var_names: tuple[str, ...]
    max_interaction: int | None = None

    def __eq__(self, other):
        if not isinstance(other, FunctionBasis):
            return NotImplemented
        return self.spec() == other.spec() and self.var_names == other.var_names and self.terms == other.terms

    def __len__(self):
        return len(self.terms)

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    @cached_property
    def _sine_idx(self) -> np.ndarray:
        return np.array([k for k, t in enumerate(self.terms) if t.kind == "sine"], dtype=int)

    @cached_property
    def _mono_idx(self) -> np.ndarray:
        return np.array([k for k, t in enumerate(self.terms) if t.kind == "monomial"], dtype=int)

    @cached_property
    def _exponents(self) -> np.ndarray:
        E = np.array([self.terms[k].exponents for k in self._mono_idx], dtype=np.int64)
        return E.reshape(len(self._mono_idx), self.num_vars)

    @property
    def n_inner(self) -> int:
        """Inner parameters: ``(a, b)`` for each sine term."""
        return 2 * len(self._sine_idx)

    @property
    def n_params(self) -> int:
        return self.n_terms + self.n_inner

    @property
    def descriptions(self) -> list[str]:
        return [t.description for t in self.terms]

    def spec(self) -> dict:
        spec = {"mode": self.mode, "degree": self.degree, "include_constant": self.include_constant}
        if self.max_interaction is not None:
            spec["max_interaction"] = self.max_interaction
        return spec

    # -- validation helpers -------------------------------------------------

    def _check_inner(self, inner):
        inner = () if inner is None else inner
        if len(inner) != self.n_inner:
            raise ValueError(f"basis expects {self.n_inner} inner parameters, got {len(inner)}")
        return inner

    def _check_batch(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[-1] != self.num_vars:
            raise ValueError(f"expected {self.num_vars} variables, got {x.shape[-1]}")
        return x

    # -- batched numpy evaluation ---------------------------------------------

    def _powers(self, x: np.ndarray) -> np.ndarray:
        top = int(self._exponents.max()) if self._exponents.size else 0
        pw = np.empty(x.shape + (top + 1,))
        pw[..., 0] = 1.0
        for e in range(1, top + 1):
            pw[..., e] = pw[..., e - 1] * x
        return pw

    def _derivative_plan(self, orders):
        """Constant factor and shifted exponents of d^orders applied to each monomial."""
        orders = tuple(orders)
        cache = self.__dict__.setdefault("_plans", {})
        if orders not in cache:
            E = self._exponents
            factor = np.ones(len(E))
            for i, o in enumerate(orders):
                factor *= _falling(E[:, i], o)
            cache[orders] = (factor, np.clip(E - np.array(orders), 0, None))
        return cache[orders]

    def _monomial_derivative(self, pw: np.ndarray, orders) -> np.ndarray:
        """d^orders of every monomial term, shape (B, K_mono)."""
        factor, shift = self._derivative_plan(orders)
        cols = np.arange(self.num_vars)[None, :]
        return pw[:, cols, shift].prod(axis=2) * factor

    def _sine_parts(self, x, inner):
        inner = np.asarray(inner, dtype=np.float64).reshape(-1, 2)
        a, b = inner[:, 0], inner[:, 1]
        xv = x[:, [self.terms[k].var for k in self._sine_idx]]
        u = (1.0 + a) * xv + b
        return xv, a, u

    def values(self, x, inner=None) -> np.ndarray:
        """Term values, shape (B, K)."""
        inner = self._check_inner(inner)
        x = self._check_batch(x)
        out = np.empty((x.shape[0], self.n_terms))
        if len(self._mono_idx):
            out[:, self._mono_idx] = self._monomial_derivative(self._powers(x), (0,) * self.num_vars)
        if len(self._sine_idx):
            _, _, u = self._sine_parts(x, inner)
            out[:, self._sine_idx] = np.sin(u)
        return out

    def jacobian(self, x, inner=None) -> np.ndarray:
        """State partials d(phi_k)/d(x_i), shape (B, K, n)."""
        inner = self._check_inner(inner)
        x = self._check_batch(x)
        n = self.num_vars
        out = np.zeros((x.shape[0], self.n_terms, n))
        if len(self._mono_idx):
            pw = self._powers(x)
            for i in range(n):
                orders = [0] * n
                orders[i] = 1
                out[:, self._mono_idx, i] = self._monomial_derivative(pw, orders)
        if len(self._sine_idx):
            _, a, u = self._sine_parts(x, inner)
            for s, k in enumerate(self._sine_idx):
                out[:, k, self.terms[k].var] = (1.0 + a[s]) * np.cos(u[:, s])
        return out

    def hessian(self, x, inner=None) -> np.ndarray:
        """Second state partials, shape (B, K, n, n)."""
        inner = self._check_inner(inner)
        x = self._check_batch(x)
        n = self.num_vars
        out = np.zeros((x.shape[0], self.n_terms, n, n))
        if len(self._mono_idx):
            pw = self._powers(x)
            for i in range(n):
                for j in range(i, n):
                    orders = [0] * n
                    orders[i] += 1
                    orders[j] += 1
                    block = self._monomial_derivative(pw, orders)
                    out[:, self._mono_idx, i, j] = block
                    out[:, self._mono_idx, j, i] = block
        if len(self._sine_idx):
            _, a, u = self._sine_parts(x, inner)
            for s, k in enumerate(self._sine_idx):
                v = self.terms[k].var
                out[:, k, v, v] = -((1.0 + a[s]) ** 2) * np.sin(u[:, s])
        return out

    def jacobian_and_hessian(self, x, inner=None):
        """``(jacobian(x), hessian(x))`` sharing one power table."""
        inner = self._check_inner(inner)
        x = self._check_batch(x)
        n, B = self.num_vars, x.shape[0]
        J = np.zeros((B, self.n_terms, n))
        H = np.zeros((B, self.n_terms, n, n))
        if len(self._mono_idx):
            pw = self._powers(x)
            mono = self._mono_idx
            for i in range(n):
                orders = [0] * n
                orders[i] = 1
                J[:, mono, i] = self._monomial_derivative(pw, orders)
                for j in range(i, n):
                    orders = [0] * n
                    orders[i] += 1
                    orders[j] += 1
                    block = self._monomial_derivative(pw, orders)
                    H[:, mono, i, j] = block
                    H[:, mono, j, i] = block
        if len(self._sine_idx):
            _, a, u = self._sine_parts(x, inner)
            for s, k in enumerate(self._sine_idx):
                v = self.terms[k].var
                J[:, k, v] = (1.0 + a[s]) * np.cos(u[:, s])
                H[:, k, v, v] = -((1.0 + a[s]) ** 2) * np.sin(u[:, s])
        return J, H

    def jacobian_inner(self, x, inner=None) -> np.ndarray:
        """d(jacobian)/d(inner), shape (B, K, n, n_inner)."""
        inner = self._check_inner(inner)
        x = self._check_batch(x)
        out = np.zeros((x.shape[0], self.n_terms, self.num_vars, self.n_inner))
        if len(self._sine_idx):
            xv, a, u = self._sine_parts(x, inner)
            for s, k in enumerate(self._sine_idx):
                v = self.terms[k].var
                out[:, k, v, 2 * s] = np.cos(u[:, s]) - (1.0 + a[s]) * xv[:, s] * np.sin(u[:, s])
                out[:, k, v, 2 * s + 1] = -(1.0 + a[s]) * np.sin(u[:, s])
        return out

    # -- element-wise evaluation (tape scalars or floats) -------------------------

    def _scalar_powers(self, x):
        top = int(self._exponents.max()) if self._exponents.size else 0
        tables = []
        for xi in x:
            row = [1.0, xi]
            for _ in range(2, top + 1):
                row.append(row[-1] * xi)
            tables.append(row)
        return tables

    def _check_scalar_args(self, x, inner):
        if len(x) != self.num_vars:
            raise ValueError(f"expected {self.num_vars} variables, got {len(x)}")
        return self._check_inner(inner)

    def scalar_terms(self, x, inner=None) -> list:
        inner = self._check_scalar_args(x, inner)
        pw = self._scalar_powers(x)
        out, s = [], 0
        for t in self.terms:
            if t.kind == "monomial":
                out.append(_product(pw[i][e] for i, e in enumerate(t.exponents)))
            else:
                a, b = inner[2 * s], inner[2 * s + 1]
                xv = x[t.var]
                out.append(autodiff.sin(xv + a * xv + b))
                s += 1
        return out

    def scalar_term_gradients(self, x, inner=None) -> list[list]:
        """Rows of d(phi_k)/d(x_i) built from tape-compatible arithmetic."""
        inner = self._check_scalar_args(x, inner)
        pw = self._scalar_powers(x)
        rows, s = [], 0
        for t in self.terms:
            row = [0.0] * self.num_vars
            if t.kind == "monomial":
                for i, ei in enumerate(t.exponents):
                    if ei == 0:
                        continue
                    factors = [pw[j][e] for j, e in enumerate(t.exponents) if j != i]
                    factors.append(pw[i][ei - 1])
                    row[i] = _product(factors)
                    if ei != 1:
                        row[i] = row[i] * float(ei)
            else:
                a, b = inner[2 * s], inner[2 * s + 1]
                xv = x[t.var]
                row[t.var] = (1.0 + a) * autodiff.cos(xv + a * xv + b)
                s += 1
            rows.append(row)
        return rows


def _make_names(num_vars: int, prefix: str):
    if num_vars == 1:
        return (prefix,)
    return tuple(f"{prefix}{i + 1}" for i in range(num_vars))


def _term_count(num_vars: int, degree: int, mode: str) -> int:
    if mode == "tensor":
        return (degree + 1) ** num_vars
    return math.comb(num_vars + degree, degree)


def build_monomial_basis(
    num_vars: int,
    degree: int,
    mode: str = "tensor",
    include_constant: bool = True,
    prefix: str = "x",
    max_interaction: int | None = None,
    max_terms: int = MAX_TERMS,
) -> FunctionBasis:
    """Enumerate a monomial basis in graded-lexicographic order.

    ``max_interaction`` limits how many distinct variables may appear in one
    term (``2`` gives pairwise interactions only).
    """
    if num_vars < 1 or degree < 1:
        raise ValueError("num_vars and degree must be positive")
    if mode not in ("tensor", "total"):
        raise ValueError(f"unknown monomial mode {mode!r}")
    count = _term_count(num_vars, degree, mode)
    if count > max_terms:
        raise BasisTooLargeError(
            f"{mode} basis with {num_vars} variables and degree {degree} has {count} terms "
            f"(limit {max_terms}); use a smaller degree or total-degree mode"
        )
    names = _make_names(num_vars, prefix)
    if mode == "tensor":
        exps = itertools.product(range(degree + 1), repeat=num_vars)
    else:
        exps = (e for e in itertools.product(range(degree + 1), repeat=num_vars) if sum(e) <= degree)
    keep = []
    for e in exps:
        if not include_constant and not any(e):
            continue
        if max_interaction is not None and sum(1 for v in e if v) > max_interaction:
            continue
        keep.append(e)
    keep.sort(key=_grlex_key)
    terms = tuple(monomial_term(e, names) for e in keep)
    return FunctionBasis(num_vars, terms, mode, degree, include_constant, names, max_interaction)


def build_trig_basis(polynomial_degree: int = 3, prefix: str = "x") -> FunctionBasis:
    """One-variable basis ``x, ..., x^d, sin(x + a*x + b)``.

    ``polynomial_degree=0`` keeps the sine term alone.
    """
    if polynomial_degree < 0:
        raise ValueError("polynomial_degree must be non-negative")
    names = (prefix,)
    terms = tuple(monomial_term((e,), names) for e in range(1, polynomial_degree + 1))
    terms += (sine_term(0, names),)
    return FunctionBasis(1, terms, "trig", polynomial_degree, False, names)


def basis_from_spec(spec: dict, num_vars: int, prefix: str = "x") -> FunctionBasis:
    """Build a basis from its JSON form ``{"mode", "degree", "include_constant"}``."""
    mode = spec.get("mode", "tensor")
    if mode not in MODES:
        raise ValueError(f"basis mode must be one of {MODES}, got {mode!r}")
    if mode == "trig":
        if num_vars != 1:
            raise ValueError("the trigonometric basis is defined for one variable only")
        return build_trig_basis(int(spec.get("degree", 3)), prefix)
    return build_monomial_basis(
        num_vars,
        int(spec.get("degree", 3)),
        mode,
        bool(spec.get("include_constant", True)),
        prefix,
        spec.get("max_interaction"),
    )


def eval_terms(basis: FunctionBasis, x, inner_params=None) -> list:
    """Term values with tape-compatible arithmetic (DiffScalars or floats)."""
    return basis.scalar_terms(list(x), None if inner_params is None else list(inner_params))


def eval_term_state_jacobian(basis: FunctionBasis, x, inner_params=None) -> np.ndarray:
    """Analytic ``d(phi_k)/d(x_i)`` at a single point, shape (K, n)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != basis.num_vars:
        raise ValueError(f"expected {basis.num_vars} variables, got {x.size}")
    return basis.jacobian(x[None, :], inner_params)[0]
