"""Glue that turns an ExperimentConfig into systems, datasets, models and results."""

from __future__ import annotations

import dataclasses

from .basis import basis_from_spec
from .config import ConfigError, ExperimentConfig
from .data import Dataset, NoiseConfig, add_noise, generate_trajectory, generate_transitions
from .evaluation import prediction_error
from .integrators import IntegrationError
from .model import SparseHamiltonian
from .systems import System, system_from_config
from .training import TrainingDivergedError, TrainReport, train


def make_system(cfg: ExperimentConfig) -> System:
    try:
        return system_from_config(cfg.system)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field system: {exc}") from None


def _generate(system, spec: dict) -> Dataset:
    seed = int(spec.get("seed", 0))
    ref_eps = float(spec.get("ref_eps", 1e-4))
    if spec.get("kind", "transitions") == "trajectory":
        return generate_trajectory(system, int(spec["steps"]), float(spec.get("dt", 0.1)), ref_eps, seed)
    horizon = float(spec.get("horizon", 0.1))
    try:
        return generate_transitions(
            system, int(spec["n"]), float(spec.get("t0", 0.0)), horizon, spec.get("sub_dt"), ref_eps, seed
        )
    except ValueError as exc:
        raise ConfigError(f"field dataset: {exc}") from None


def make_datasets(cfg: ExperimentConfig, system: System | None = None) -> dict[str, Dataset]:
    """``{"train": clean, "validation": clean[, "train_noisy": noisy]}``."""
    system = make_system(cfg) if system is None else system
    out = {"train": _generate(system, cfg.dataset), "validation": _generate(system, cfg.validation)}
    sigma = float(cfg.dataset.get("sigma", 0.0))
    if sigma > 0:
        out["train_noisy"] = add_noise(out["train"], NoiseConfig(sigma, int(cfg.dataset.get("noise_seed", 1))))
    return out


def training_set(datasets: dict[str, Dataset]) -> Dataset:
    return datasets.get("train_noisy", datasets["train"])


def make_model(cfg: ExperimentConfig, dim: int) -> SparseHamiltonian:
    try:
        v = basis_from_spec(cfg.v_basis, dim, "q")
        t = basis_from_spec(cfg.t_basis, dim, "p")
    except ValueError as exc:
        raise ConfigError(f"field v_basis/t_basis: {exc}") from None
    return SparseHamiltonian.initial(v, t, cfg.init, cfg.train.seed)


def run_training(cfg: ExperimentConfig, dataset: Dataset, progress=None) -> TrainReport:
    model = make_model(cfg, dataset.dim)
    return train(model, dataset, cfg.train, progress)


def ablate(cfg: ExperimentConfig, dataset: Dataset, validation: Dataset, schemes, progress=None) -> list[dict]:
    """Train one model per integrator scheme and score each with its own scheme."""
    rows = []
    for scheme in schemes:
        tc = dataclasses.replace(cfg.train, scheme=scheme)
        row = {"scheme": scheme, "status": "ok"}
        try:
            report = train(make_model(cfg, dataset.dim), dataset, tc, progress)
            pos, mom = prediction_error(report.model, validation, tc.eps, scheme)
            row.update(position_l1=pos, momentum_l1=mom, total_l1=pos + mom)
        except (TrainingDivergedError, IntegrationError) as exc:
            row.update(status="failed", error=str(exc))
        rows.append(row)
    return rows
