import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparseham import autodiff as ad
from sparseham.autodiff import Tape, backward, finite_diff_check, track


def test_identity_and_square():
    tape = Tape()
    x = track(3.0, tape)
    assert backward(x, tape)[x] == 1.0
    tape.reset()
    x = track(2.0, tape)
    assert backward(x * x, tape)[x] == 4.0


def test_sine_chain_rule():
    tape = Tape()
    x = track(0.5, tape)
    y = ad.sin(x + 0.25 * x)
    assert backward(y, tape)[x] == pytest.approx(1.25 * math.cos(0.625), rel=1e-14)
    fd = ad.central_difference(lambda v: ad.sin(v[0] + 0.25 * v[0]), [0.5])[0]
    assert backward(y, tape)[x] == pytest.approx(fd, rel=1e-8)


def test_backward_examples():
    tape = Tape()
    a, b = track(2.0, tape), track(3.0, tape)
    g = backward(a * b, tape)
    assert (g[a], g[b]) == (3.0, 2.0)
    g = backward(5.0, tape)
    assert g[a] == 0.0 and g[b] == 0.0 and len(g) == 2
    tape.reset()
    a, b = track(1.0, tape), track(4.0, tape)
    g = backward(abs(a - b), tape)
    assert (g[a], g[b]) == (-1.0, 1.0)


def test_abs_kink_has_zero_derivative():
    tape = Tape()
    x = track(0.0, tape)
    assert backward(abs(x), tape)[x] == 0.0


def test_errors():
    tape, other = Tape(), Tape()
    with pytest.raises(ValueError):
        track(float("nan"), tape)
    x, y = track(1.0, tape), track(1.0, other)
    with pytest.raises(ValueError):
        backward(y * 2.0, tape)
    with pytest.raises(ValueError):
        x + y
    with pytest.raises(TypeError):
        x**-1
    with pytest.raises(TypeError):
        x**0.5


def test_tape_cap():
    tape = Tape(max_nodes=5)
    x = track(1.0, tape)
    with pytest.raises(ad.TapeOverflowError):
        for _ in range(10):
            x = x * 1.5


def test_gradient_map_contains_untouched_variables():
    tape = Tape()
    a, b = track(1.0, tape), track(2.0, tape)
    g = backward(a * 3.0, tape)
    assert g[b] == 0.0 and b in g


UNARY = {
    "add": (lambda v: v[0] + v[1], 2),
    "sub": (lambda v: v[0] - v[1], 2),
    "rsub": (lambda v: 1.5 - v[0], 1),
    "mul": (lambda v: v[0] * v[1], 2),
    "scale": (lambda v: 0.7 * v[0], 1),
    "neg": (lambda v: -v[0], 1),
    "pow3": (lambda v: v[0] ** 3, 1),
    "sin": (lambda v: ad.sin(v[0]), 1),
    "cos": (lambda v: ad.cos(v[0]), 1),
    "abs": (lambda v: abs(v[0]), 1),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_elementary_ops_match_finite_differences(name):
    f, arity = UNARY[name]
    rng = np.random.default_rng(hash(name) % 2**32)
    checked = 0
    while checked < 1000:
        x = rng.uniform(-2, 2, arity)
        if name == "abs" and abs(x[0]) < 1e-3:
            continue
        rep = finite_diff_check(f, x, rel_tol=1e-5)
        assert rep.passed, (name, x, rep)
        checked += 1


def test_energy_and_integrator_step_checks():
    from sparseham.basis import build_monomial_basis
    from sparseham.integrators import symplectic4_step
    from sparseham.model import SparseHamiltonian, grad_fields
    from sparseham.systems import HenonHeilesSystem

    sysm = HenonHeilesSystem()
    s = sysm.sample_initial_state(np.random.default_rng(0))

    def energy(v):
        x, y, px, py = v
        return 0.5 * (px * px + py * py + x * x + y * y) + x * x * y - (y * y * y) * (1.0 / 3.0)

    assert finite_diff_check(energy, s.as_vector()).passed

    model = SparseHamiltonian.initial(build_monomial_basis(2, 2, prefix="q"), build_monomial_basis(2, 2, prefix="p"),
                                      init="uniform", seed=1)
    k = model.theta1.size

    def step(theta1):
        gv, gt = grad_fields(model, (theta1, model.theta2))
        q, p = symplectic4_step(gv, gt, np.array(s.q, dtype=object), np.array(s.p, dtype=object), 0.025)
        return q[0]

    rep = finite_diff_check(step, model.theta1)
    assert rep.passed and rep.reverse.shape == (k,)


@given(st.lists(st.floats(-2, 2), min_size=1, max_size=8))
def test_gradient_of_sum_is_sum_of_gradients(xs):
    def f1(v):
        return sum((vi * vi for vi in v), 0.0)

    def f2(v):
        return sum((ad.sin(vi) for vi in v), 0.0)

    _, g1 = ad.gradient(f1, xs)
    _, g2 = ad.gradient(f2, xs)
    _, g12 = ad.gradient(lambda v: f1(v) + f2(v), xs)
    np.testing.assert_allclose(g12, g1 + g2, rtol=1e-12, atol=1e-15)


def test_determinism():
    f = UNARY["mul"][0]
    a = ad.gradient(lambda v: ad.sin(f(v)) * v[0], [0.3, -1.2])[1]
    b = ad.gradient(lambda v: ad.sin(f(v)) * v[0], [0.3, -1.2])[1]
    assert np.array_equal(a, b)


def test_finite_diff_check_square():
    rep = finite_diff_check(lambda v: v[0] * v[0], [3.0], rel_tol=1e-5)
    assert rep.passed and rep.max_discrepancy < 1e-8
