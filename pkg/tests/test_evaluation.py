import json
import math

import numpy as np
import pytest

from sparseham.basis import build_trig_basis
from sparseham.data import Dataset, generate_transitions
from sparseham.evaluation import (
    evaluate,
    param_count,
    prediction_error,
    prediction_stats,
    rollout_divergence,
    sine_terms,
    sparsity_stats,
)
from sparseham.model import SparseHamiltonian, model_from_equation
from sparseham.systems import CoupledOscillatorSystem, HenonHeilesSystem, PendulumSystem

HH = HenonHeilesSystem()
OSC = CoupledOscillatorSystem()
ORBIT_START = (np.array([-0.48, -0.02]), np.array([-0.08, 0.18]))


def tensor(degree, dim=2):
    spec = {"mode": "tensor", "degree": degree}
    return SparseHamiltonian.from_specs(spec, spec, dim)


def truth(system, degree=3):
    m = tensor(degree)
    return model_from_equation(system.truth_equation(), m.v_basis, m.t_basis)


def test_truth_model_prediction_floor():
    val = generate_transitions(OSC, 100, seed=1000)
    pos, mom = prediction_error(truth(OSC), val, 1e-3)
    assert pos < 1e-8 and mom < 1e-8


def test_zero_model_error_is_distance():
    val = generate_transitions(OSC, 30, seed=3)
    pos, mom = prediction_error(tensor(3), val, 0.01)
    assert pos == pytest.approx(np.abs(val.q[:, 0] - val.q0).sum(axis=1).mean(), rel=1e-14)
    assert mom == pytest.approx(np.abs(val.p[:, 0] - val.p0).sum(axis=1).mean(), rel=1e-14)


def test_multi_target_stats_average_over_targets():
    val = generate_transitions(OSC, 4, horizon=0.3, sub_dt=0.1, seed=3)
    stats = prediction_stats(tensor(3), val, 0.01)
    expected = np.abs(val.q - val.q0[:, None, :]).sum(axis=2).mean(axis=1)
    np.testing.assert_allclose(stats.position_l1, expected, rtol=1e-14)
    assert stats.count == 4 and stats.failures == 0


def test_failures_are_counted():
    val = generate_transitions(OSC, 5, seed=0)
    wild = tensor(3).with_params(np.full(32, 40.0))
    stats = prediction_stats(wild, val, 0.01)
    assert stats.failures > 0
    summary = stats.summary()
    assert summary["failures"] == stats.failures and summary["count"] == 5


def test_prediction_errors_on_bad_input():
    with pytest.raises(ValueError, match="empty"):
        prediction_error(tensor(3), Dataset.empty(2), 0.01)
    with pytest.raises(ValueError, match="dimension"):
        prediction_error(tensor(3, dim=1), generate_transitions(OSC, 2), 0.01)


def test_truth_rollout_tracks_reference():
    s = rollout_divergence(truth(HH), HH, *ORBIT_START, 8.0, 0.1, 1e-3)
    assert s.t.size == 81 and s.t[-1] == pytest.approx(8.0)
    assert s.position_l1.max() < 1e-8
    assert s.energy_abs_err.max() < 1e-8


def test_truth_rollout_invariant_under_halving_eps():
    a = rollout_divergence(truth(HH), HH, *ORBIT_START, 8.0, 0.1, 1e-3)
    b = rollout_divergence(truth(HH), HH, *ORBIT_START, 8.0, 0.1, 5e-4)
    assert np.max(np.abs(a.position_l1 - b.position_l1)) < 1e-9
    assert np.max(np.abs(a.energy_abs_err - b.energy_abs_err)) < 1e-9


def test_rollout_energy_bounded_for_perturbed_model():
    model = truth(HH)
    model = model.with_params(model.params + np.random.default_rng(0).uniform(-0.01, 0.01, 32))
    s = rollout_divergence(model, HH, *ORBIT_START, 8.0, 0.1, 0.01)
    half = s.t.size // 2
    assert s.energy_abs_err[half:].max() <= 2 * s.energy_abs_err[:half].max()


def test_rollout_argument_checks(tmp_path):
    with pytest.raises(ValueError):
        rollout_divergence(truth(HH), HH, *ORBIT_START, 0.0, 0.1, 0.01)
    with pytest.raises(ValueError):
        rollout_divergence(truth(HH), HH, *ORBIT_START, 1.0, 0.3, 0.01)
    s = rollout_divergence(truth(HH), HH, *ORBIT_START, 0.3, 0.1, 0.01)
    s.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "t,position_l1,energy_abs_err" and len(lines) == 5
    assert [float(v) for v in lines[2].split(",")] == [s.t[1], s.position_l1[1], s.energy_abs_err[1]]


def test_sparsity_stats():
    frac, precision, recall = sparsity_stats(truth(HH), HH.truth_equation(), 1e-3)
    assert frac == 6 / 32 == 0.1875
    assert precision == recall == 1.0
    _, _, recall = sparsity_stats(tensor(3), HH.truth_equation(), 1e-3)
    assert recall == 0.0
    with pytest.raises(ValueError):
        sparsity_stats(tensor(3), HH.truth_equation(), 0.0)


def test_param_counts():
    assert param_count(tensor(3)) == 32
    assert param_count(tensor(6)) == 98
    assert param_count(tensor(10)) == 242
    trig = SparseHamiltonian.initial(build_trig_basis(3, prefix="q"), build_trig_basis(3, prefix="p"))
    assert param_count(trig) == 12


def test_sine_term_forms():
    v = build_trig_basis(0, prefix="q")
    t = build_trig_basis(0, prefix="p")
    model = SparseHamiltonian(v, t, [2.0, 0.0, -math.pi / 2], [0.1, 0.0, 0.0])
    (term,) = sine_terms(model, "V")
    assert term["amplitude"] == 2.0 and term["b"] == -math.pi / 2
    assert term["b_mod_pi"] == pytest.approx(math.pi / 2)
    assert term["cos_coefficient"] == pytest.approx(-2.0)
    assert term["sin_coefficient"] == pytest.approx(0.0, abs=1e-15)
    # the closed form really is -2 cos(q)
    q = np.linspace(-2, 2, 7)[:, None]
    np.testing.assert_allclose(model.potential_values(q), -2 * np.cos(q[:, 0]), atol=1e-15)


def test_evaluate_report(tmp_path):
    val = generate_transitions(HH, 10, seed=5)
    report, stats = evaluate(truth(HH), val, 1e-3, truth=HH.truth_equation())
    d = report.to_dict()
    assert d["param_count"] == 32 and d["true_term_fraction"] == 0.1875
    assert d["recovery"]["precision"] == 1.0
    assert d["prediction"]["count"] == 10
    report.to_json(tmp_path / "e.json")
    assert json.loads((tmp_path / "e.json").read_text()) == json.loads(json.dumps(d))
    pend = PendulumSystem()
    model = SparseHamiltonian.from_specs({"mode": "trig", "degree": 0}, {"mode": "tensor", "degree": 2}, 1)
    from sparseham.data import generate_trajectory

    report, _ = evaluate(model, generate_trajectory(pend, 5, 0.1), 0.01)
    assert report.extra["sine_terms"][0]["amplitude"] == 0.1


@pytest.mark.slow
def test_noisy_henon_rollout_deviates_late(recipe_run):
    cfg, _, report = recipe_run("henon_noisy")
    s = rollout_divergence(report.model, HH, *ORBIT_START, 8.0, 0.1, cfg.integrator.eps)
    i4, i8 = int(np.argmin(np.abs(s.t - 4.0))), s.t.size - 1
    print(f"position L1 at t=4: {s.position_l1[i4]:.4g}, at t=8: {s.position_l1[i8]:.4g}")
    assert s.position_l1[i8] >= 2 * s.position_l1[i4]
    half = s.t.size // 2
    assert s.energy_abs_err[half:].max() <= 2 * s.energy_abs_err[:half].max()
