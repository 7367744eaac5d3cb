import dataclasses

import numpy as np
import pytest

from sparseham import autodiff as ad
from sparseham.data import Dataset, TransitionSample, generate_transitions
from sparseham.model import SparseHamiltonian, model_from_equation
from sparseham.phase import PhaseState
from sparseham.systems import CoupledOscillatorSystem, HenonHeilesSystem, PendulumSystem
from sparseham.training import (
    Adam,
    TrainConfig,
    TrainingDivergedError,
    batch_loss_and_grad,
    grid_search,
    gradient_check,
    l1_penalty,
    prediction_loss,
    sample_loss,
    sample_loss_gradient,
    train,
)

CUBIC = {"mode": "tensor", "degree": 3}
OSC = CoupledOscillatorSystem()


def cubic(init="zeros", seed=None):
    return SparseHamiltonian.from_specs(CUBIC, CUBIC, 2, init, seed)


def truth(system):
    m = cubic()
    return model_from_equation(system.truth_equation(), m.v_basis, m.t_basis)


@pytest.fixture(scope="module")
def osc_data():
    return generate_transitions(OSC, 200, seed=0), generate_transitions(OSC, 50, seed=1000)


@pytest.mark.parametrize("system,kw", [(HenonHeilesSystem(), {}), (OSC, {"horizon": 0.3, "sub_dt": 0.1})])
def test_truth_model_has_tiny_loss(system, kw):
    ds = generate_transitions(system, 10, seed=0, **kw)
    model = truth(system)
    for i in range(len(ds)):
        loss = ad.value_of(sample_loss(model, ds.sample(i), 1e-3, 0.0))
        assert loss < 1e-8
    # the numpy path agrees with the tape
    tape = np.mean([ad.value_of(sample_loss(model, ds.sample(i), 0.01, 0.0)) for i in range(len(ds))])
    assert prediction_loss(model, ds, 0.01) == pytest.approx(tape, rel=1e-9)


def test_zero_model_loss_is_plain_distance():
    ds = generate_transitions(OSC, 5, horizon=0.3, sub_dt=0.1, seed=1)
    s = ds.sample(2)
    expected = sum(np.abs(t.q - s.initial.q).sum() + np.abs(t.p - s.initial.p).sum() for _, t in s.targets)
    assert ad.value_of(sample_loss(cubic(), s, 0.01, 0.0)) == pytest.approx(expected, abs=1e-15)


def test_penalty_arithmetic():
    from sparseham.basis import build_monomial_basis

    v = build_monomial_basis(1, 1, include_constant=False, prefix="q")
    t = build_monomial_basis(1, 1, include_constant=False, prefix="p")
    m = SparseHamiltonian(v, t, [0.5], [0.5])
    assert l1_penalty(m, 1e-3) == pytest.approx(1e-3, abs=1e-18)
    s = TransitionSample(0.0, PhaseState([0.0], [0.0]), ((0.1, PhaseState([0.0], [0.0])),))
    with_pen = ad.value_of(sample_loss(m, s, 0.01, 1e-3))
    without = ad.value_of(sample_loss(m, s, 0.01, 0.0))
    assert with_pen - without == pytest.approx(1e-3, abs=1e-15)


def test_dimension_mismatch():
    s = TransitionSample(0.0, PhaseState([0.0], [0.0]), ((0.1, PhaseState([0.0], [0.0])),))
    with pytest.raises(ValueError):
        sample_loss(cubic(), s, 0.01, 0.0)
    with pytest.raises(ValueError):
        train(cubic(), generate_transitions(PendulumSystem(), 3), TrainConfig(epochs=1))


@pytest.mark.parametrize("scheme", ["symplectic4", "leapfrog", "rk4"])
def test_gradient_paths_agree(scheme):
    ds = generate_transitions(OSC, 4, horizon=0.3, sub_dt=0.1, seed=5)
    model = cubic("uniform", seed=3).with_params(np.random.default_rng(3).uniform(-0.6, 0.6, 32))
    result = gradient_check(model, ds, 0.01, 1e-3, scheme)
    assert result["passed"], result
    assert result["tape_vs_finite_difference"] < 1e-6
    assert result["sensitivity_vs_tape"] < 1e-10


def test_batch_gradient_is_mean_of_sample_gradients():
    ds = generate_transitions(HenonHeilesSystem(), 6, seed=2)
    model = cubic().with_params(np.random.default_rng(0).uniform(-0.5, 0.5, 32))
    loss, grad = batch_loss_and_grad(model, ds, 0.01, 1e-3)
    tape = [sample_loss_gradient(model, ds.sample(i), 0.01, 1e-3) for i in range(len(ds))]
    assert loss == pytest.approx(np.mean([t[0] for t in tape]), rel=1e-12)
    np.testing.assert_allclose(grad, np.mean([t[1] for t in tape], axis=0), rtol=1e-9, atol=1e-12)


def test_trig_gradient_includes_inner_parameters():
    from sparseham.data import generate_trajectory

    ds = generate_trajectory(PendulumSystem(), 6, 0.1)
    model = SparseHamiltonian.from_specs({"mode": "trig", "degree": 1}, {"mode": "trig", "degree": 1}, 1)
    model = model.with_params(np.random.default_rng(1).uniform(-0.5, 0.5, model.n_params))
    result = gradient_check(model, ds, 0.01, 1e-4)
    assert result["passed"], result


def test_adam_first_step_moves_by_learning_rate():
    opt = Adam(3)
    out = opt.step(np.zeros(3), np.array([2.0, -0.001, 0.0]), 0.1)
    np.testing.assert_allclose(out, [-0.1, 0.1, 0.0], rtol=1e-5)


def test_config_validation():
    for bad in ({"learning_rate": 0}, {"lr_decay": 0}, {"lr_decay": 1.5}, {"lambda_l1": -1},
                {"epochs": 0}, {"batch_size": 0}, {"eps": 0}, {"scheme": "euler"}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"learning_rat": 1e-3})
    cfg = TrainConfig(batch_size=None)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_training_history_and_progress(osc_data):
    ds, _ = osc_data
    lines = []
    cfg = TrainConfig(learning_rate=1e-2, lr_decay=0.9, epochs=4, lambda_l1=8e-3, batch_size=16)
    report = train(cubic(), ds, cfg, lines.append)
    assert len(report.loss_history) == 4 and len(lines) == 4
    assert lines[0].startswith("epoch,0,mean_loss,")
    assert float(lines[-1].split(",")[3]) == report.loss_history[-1]
    assert report.grad_check["passed"]
    assert report.steps == 4 * 13
    assert report.loss_history[-1] < report.loss_history[0]


def test_one_epoch_descends():
    ds = generate_transitions(OSC, 20, seed=4)
    cfg = TrainConfig(learning_rate=1e-3, epochs=1, lambda_l1=0.0, batch_size=None, grad_check=False)
    before = prediction_loss(cubic(), ds, 0.01)
    after = prediction_loss(train(cubic(), ds, cfg).model, ds, 0.01)
    assert after < before


def test_determinism(osc_data):
    ds, _ = osc_data
    cfg = TrainConfig(learning_rate=1e-2, epochs=2, batch_size=16, seed=7, grad_check=False)
    a = train(cubic("uniform", 1), ds, cfg).model.params
    b = train(cubic("uniform", 1), ds, cfg).model.params
    assert a.tobytes() == b.tobytes()
    c = train(cubic("uniform", 1), ds, dataclasses.replace(cfg, seed=8)).model.params
    assert not np.array_equal(a, c)


def test_larger_lambda_shrinks_off_support(osc_data):
    ds, _ = osc_data
    support = truth(OSC).params != 0
    for seed in range(3):
        off = []
        for lam in (8e-4, 8e-3):
            cfg = TrainConfig(learning_rate=1e-2, lr_decay=0.9, epochs=20, lambda_l1=lam, batch_size=16,
                              seed=seed, grad_check=False)
            off.append(np.abs(train(cubic(), ds, cfg).model.params[~support]).sum())
        assert off[1] <= off[0]


def test_constant_terms_decay(osc_data):
    ds, _ = osc_data
    model = cubic("uniform", 0)
    const = [0, model.theta1.size]
    start = np.abs(model.params[const])
    # the constant gets no gradient from the prediction term
    _, g = batch_loss_and_grad(model, ds.subset(range(10)), 0.01, 0.0)
    np.testing.assert_array_equal(g[const], 0.0)
    cfg = TrainConfig(learning_rate=1e-2, lr_decay=0.9, epochs=20, lambda_l1=8e-3, batch_size=16, grad_check=False)
    final = np.abs(train(model, ds, cfg).model.params[const])
    assert np.all(final < 1e-3) and np.all(final < start)


def test_divergence_reports_position_and_params():
    ds = generate_transitions(OSC, 20, seed=0)
    cfg = TrainConfig(learning_rate=10.0, lr_decay=1.0, epochs=30, lambda_l1=0.0, batch_size=4, grad_check=False)
    with pytest.raises(TrainingDivergedError) as info:
        train(cubic(), ds, cfg)
    exc = info.value
    assert exc.params.shape == (32,) and np.all(np.isfinite(exc.params))
    assert f"epoch {exc.epoch}, batch {exc.batch}" in str(exc)


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train(cubic(), Dataset.empty(2), TrainConfig())


def test_grid_search(osc_data):
    ds, val = osc_data
    template = TrainConfig(lr_decay=0.9, epochs=3, batch_size=16, grad_check=False)
    result = grid_search(ds, val, [1e-2, 1e-3], [1e-3, 1e-4], template, cubic)
    ok = [c for c in result.cells if c["status"] == "ok"]
    assert len(ok) == 4
    assert all(result.validation_error <= c["validation_error"] for c in ok)
    assert result.report.validation_error == result.validation_error


def test_grid_singleton_equals_train(osc_data):
    ds, val = osc_data
    template = TrainConfig(lr_decay=0.9, epochs=2, batch_size=16, grad_check=False)
    result = grid_search(ds, val, [1e-2], [1e-3], template, cubic)
    direct = train(cubic(), ds, dataclasses.replace(template, learning_rate=1e-2, lambda_l1=1e-3))
    np.testing.assert_array_equal(result.report.model.params, direct.model.params)


def test_grid_skips_divergent_cell(osc_data):
    ds, val = osc_data
    template = TrainConfig(lr_decay=1.0, epochs=15, batch_size=4, grad_check=False)
    small = ds.subset(range(20))
    result = grid_search(small, val, [10.0, 1e-2], [0.0], template, cubic)
    status = {c["learning_rate"]: c["status"] for c in result.cells}
    assert status == {10.0: "diverged", 1e-2: "ok"}
    assert result.config.learning_rate == 1e-2
    with pytest.raises(TrainingDivergedError, match="every grid cell"):
        grid_search(small, val, [10.0], [0.0], template, cubic)
