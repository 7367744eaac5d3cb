import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparseham import autodiff as ad
from sparseham.basis import (
    BasisTooLargeError,
    basis_from_spec,
    build_monomial_basis,
    build_trig_basis,
    eval_term_state_jacobian,
    eval_terms,
    parse_term,
)


def test_total_degree_no_constant_one_var():
    b = build_monomial_basis(1, 3, "total", include_constant=False)
    assert b.descriptions == ["x", "x^2", "x^3"]


@pytest.mark.parametrize("degree,count", [(3, 16), (6, 49), (10, 121)])
def test_tensor_two_var_counts(degree, count):
    b = build_monomial_basis(2, degree, "tensor")
    assert b.n_terms == count == (degree + 1) ** 2
    assert 2 * b.n_params == {3: 32, 6: 98, 10: 242}[degree]


@given(st.integers(1, 4), st.integers(1, 5))
def test_closed_form_counts(n, d):
    assert build_monomial_basis(n, d, "tensor").n_terms == (d + 1) ** n
    assert build_monomial_basis(n, d, "total").n_terms == math.comb(n + d, d)
    assert build_monomial_basis(n, d, "total", include_constant=False).n_terms == math.comb(n + d, d) - 1


def test_graded_lex_order_constant_first():
    b = build_monomial_basis(2, 2, "total", prefix="q")
    assert b.descriptions == ["1", "q1", "q2", "q1^2", "q1*q2", "q2^2"]
    degrees = [sum(t.exponents) for t in build_monomial_basis(3, 3, "tensor").terms]
    assert degrees == sorted(degrees)


def test_term_cap():
    with pytest.raises(BasisTooLargeError):
        build_monomial_basis(6, 9, "tensor", max_terms=1000)


def test_interaction_restriction():
    b = build_monomial_basis(5, 6, "total", max_interaction=2)
    assert all(sum(1 for e in t.exponents if e) <= 2 for t in b.terms)


@given(st.integers(1, 3), st.integers(1, 4), st.sampled_from(["tensor", "total"]))
def test_descriptions_round_trip(n, d, mode):
    b = build_monomial_basis(n, d, mode, prefix="q")
    for t in b.terms:
        assert parse_term(t.description, b.var_names) == t
    rebuilt = basis_from_spec(b.spec(), n, "q")
    assert rebuilt == b and rebuilt.descriptions == b.descriptions


def test_trig_basis_values():
    b = build_trig_basis()
    assert b.descriptions == ["x", "x^2", "x^3", "sin(x)"]
    assert b.n_params == 6
    np.testing.assert_array_equal(b.values([0.0], [0.0, 0.0])[0], [0, 0, 0, 0])
    x = np.linspace(-2, 2, 9)[:, None]
    np.testing.assert_allclose(b.values(x, [0.0, math.pi / 2])[:, 3], np.cos(x[:, 0]), atol=1e-15)
    assert b.values([1.0], [0.1, 0.2])[0, 3] == pytest.approx(math.sin(1.3), rel=1e-15)
    assert math.sin(1.3) == pytest.approx(0.963558, abs=1e-6)
    np.testing.assert_allclose(b.values([0.5], [0, 0])[0], [0.5, 0.25, 0.125, math.sin(0.5)])


def test_trig_inner_parameter_partial():
    b = build_trig_basis()
    tape = ad.Tape()
    inner = tape.variables([0.1, 0.2])
    y = eval_terms(b, [1.0], list(inner))[3]
    g = ad.backward(y, tape).vector(inner)
    fd = ad.central_difference(lambda v: math.sin(1.0 + v[0] * 1.0 + v[1]), [0.1, 0.2])
    np.testing.assert_allclose(g, [math.cos(1.3), math.cos(1.3)], rtol=1e-14)
    np.testing.assert_allclose(g, fd, rtol=1e-8)


def test_eval_terms_examples():
    b = build_monomial_basis(2, 3, "tensor")
    vals = eval_terms(b, [0.3, -0.2])
    i = b.descriptions.index("x1^2*x2")
    assert vals[0] == 1.0
    assert vals[i] == pytest.approx(-0.018)
    jac = eval_term_state_jacobian(b, [0.3, -0.2])
    np.testing.assert_array_equal(jac[0], [0.0, 0.0])
    np.testing.assert_allclose(jac[i], [-0.12, 0.09])
    t = build_trig_basis()
    assert eval_term_state_jacobian(t, [0.5], [0.1, 0.0])[3, 0] == pytest.approx(1.1 * math.cos(0.55))
    fd = (math.sin(1.1 * (0.5 + 1e-6)) - math.sin(1.1 * (0.5 - 1e-6))) / 2e-6
    assert eval_term_state_jacobian(t, [0.5], [0.1, 0.0])[3, 0] == pytest.approx(fd, rel=1e-8)


def test_length_mismatch():
    b = build_monomial_basis(2, 2)
    with pytest.raises(ValueError):
        eval_terms(b, [1.0])
    with pytest.raises(ValueError):
        eval_term_state_jacobian(build_trig_basis(), [0.5])
    with pytest.raises(ValueError):
        b.values(np.zeros((3, 3)))


BASES = {
    "tensor3": lambda: build_monomial_basis(2, 3, "tensor"),
    "total4": lambda: build_monomial_basis(3, 4, "total"),
    "trig": build_trig_basis,
    "sine_only": lambda: build_trig_basis(0),
}


@pytest.mark.parametrize("name", sorted(BASES))
def test_jacobian_matches_finite_differences(name):
    b = BASES[name]()
    rng = np.random.default_rng(7)
    X = rng.uniform(-1.5, 1.5, (1000, b.num_vars))
    inner = rng.uniform(-0.5, 0.5, b.n_inner)
    J = b.jacobian(X, inner)
    fd = np.empty_like(J)
    for i in range(b.num_vars):
        h = 1e-6 * np.maximum(1.0, np.abs(X[:, i]))
        Xp, Xm = X.copy(), X.copy()
        Xp[:, i] += h
        Xm[:, i] -= h
        fd[:, :, i] = (b.values(Xp, inner) - b.values(Xm, inner)) / (2 * h)[:, None]
    scale = np.maximum(np.maximum(np.abs(J), np.abs(fd)), 1e-3)
    assert np.max(np.abs(J - fd) / scale) <= 1e-6


@pytest.mark.parametrize("name", sorted(BASES))
def test_batched_scalar_and_tape_paths_agree(name):
    b = BASES[name]()
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = rng.uniform(-1, 1, b.num_vars)
        inner = rng.uniform(-0.5, 0.5, b.n_inner)
        c = rng.normal(size=b.n_terms)
        np.testing.assert_allclose(b.values(x, inner)[0], [ad.value_of(v) for v in eval_terms(b, x, inner)],
                                   rtol=1e-13, atol=1e-15)
        tape = ad.Tape()
        xs = tape.variables(x)
        total = sum((ck * tk for ck, tk in zip(c, eval_terms(b, list(xs), list(inner)))), 0.0)
        g = ad.backward(total, tape).vector(xs)
        np.testing.assert_allclose(g, c @ eval_term_state_jacobian(b, x, inner), rtol=1e-10, atol=1e-12)
        H = b.hessian(x, inner)[0]
        Jh, Hh = b.jacobian_and_hessian(x, inner)
        np.testing.assert_array_equal(Hh[0], H)
        np.testing.assert_array_equal(Jh[0], b.jacobian(x, inner)[0])


def test_hessian_matches_jacobian_differences():
    b = build_trig_basis(3)
    x, inner, h = np.array([0.7]), np.array([0.05, 0.3]), 1e-6
    fd = (b.jacobian(x + h, inner) - b.jacobian(x - h, inner)) / (2 * h)
    np.testing.assert_allclose(b.hessian(x, inner)[0, :, :, 0], fd[0], rtol=1e-6, atol=1e-8)
    fd_inner = np.stack([(b.jacobian(x, inner + e) - b.jacobian(x, inner - e))[0] / (2 * h)
                         for e in np.eye(2) * h], axis=-1)
    np.testing.assert_allclose(b.jacobian_inner(x, inner)[0], fd_inner, rtol=1e-6, atol=1e-8)
