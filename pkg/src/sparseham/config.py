"""Experiment recipes: one JSON file per run, validated up front."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .basis import MODES
from .integrators import SCHEMES, IntegratorConfig
from .training import TrainConfig

TOP_LEVEL = {"name", "system", "v_basis", "t_basis", "init", "dataset", "validation", "train", "integrator",
             "eval", "rollout", "ablate"}
DATASET_KEYS = {"kind", "n", "t0", "horizon", "sub_dt", "steps", "dt", "ref_eps", "seed", "sigma", "noise_seed"}
BASIS_KEYS = {"mode", "degree", "include_constant", "max_interaction"}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


def bundled_recipes() -> list[str]:
    root = resources.files("sparseham") / "recipes"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _read(path_or_name) -> dict:
    path = Path(path_or_name)
    if path.exists():
        text = path.read_text()
    else:
        name = str(path_or_name)
        name = name[:-5] if name.endswith(".json") else name
        res = resources.files("sparseham") / "recipes" / f"{name}.json"
        if not res.is_file():
            raise ConfigError(f"config {path_or_name!r} is neither a file nor a bundled recipe "
                              f"({', '.join(bundled_recipes())})")
        text = res.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path_or_name}: invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


def _unknown(section: str, got: dict, allowed: set):
    extra = set(got) - allowed
    if extra:
        raise ConfigError(f"unknown field {section}.{sorted(extra)[0]}")


def _positive(section, d, key, kind=float):
    if key in d:
        try:
            v = kind(d[key])
        except (TypeError, ValueError):
            raise ConfigError(f"field {section}.{key} must be a number") from None
        if not v > 0:
            raise ConfigError(f"field {section}.{key} must be positive, got {d[key]!r}")


def _check_dataset(section: str, d: dict):
    if not isinstance(d, dict):
        raise ConfigError(f"field {section} must be an object")
    _unknown(section, d, DATASET_KEYS)
    kind = d.get("kind", "transitions")
    if kind not in ("transitions", "trajectory"):
        raise ConfigError(f"field {section}.kind must be 'transitions' or 'trajectory', got {kind!r}")
    for key in ("horizon", "sub_dt", "dt", "ref_eps"):
        _positive(section, d, key)
    if kind == "transitions":
        if "n" not in d:
            raise ConfigError(f"field {section}.n is required")
        if not isinstance(d["n"], int) or d["n"] < 0:
            raise ConfigError(f"field {section}.n must be a non-negative integer")
    else:
        if not isinstance(d.get("steps"), int) or d["steps"] < 2:
            raise ConfigError(f"field {section}.steps must be an integer >= 2")
    if d.get("sigma", 0.0) < 0:
        raise ConfigError(f"field {section}.sigma must be non-negative")


def _check_basis(section: str, b: dict):
    if not isinstance(b, dict):
        raise ConfigError(f"field {section} must be an object")
    _unknown(section, b, BASIS_KEYS)
    if b.get("mode", "tensor") not in MODES:
        raise ConfigError(f"field {section}.mode must be one of {MODES}, got {b.get('mode')!r}")
    deg = b.get("degree", 3)
    if not isinstance(deg, int) or deg < 0:
        raise ConfigError(f"field {section}.degree must be a non-negative integer")


@dataclass
class ExperimentConfig:
    name: str
    system: dict
    v_basis: dict
    t_basis: dict
    dataset: dict
    validation: dict
    train: TrainConfig
    integrator: IntegratorConfig
    init: str = "zeros"
    eval: dict = field(default_factory=dict)
    rollout: dict = field(default_factory=dict)
    ablate: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @property
    def support_threshold(self) -> float:
        return float(self.eval.get("support_threshold", 1e-3))

    @property
    def display_threshold(self) -> float:
        return float(self.eval.get("display_threshold", self.support_threshold))


def parse_config(data: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Validate a recipe dict. ``overrides`` may set ``scheme``, ``eps`` and ``seed``."""
    data = copy.deepcopy(data)
    _unknown("config", data, TOP_LEVEL)
    for key in ("system", "dataset"):
        if key not in data:
            raise ConfigError(f"field {key} is required")
    if not isinstance(data["system"], dict) or "system" not in data["system"]:
        raise ConfigError("field system.system is required")
    for key in ("v_basis", "t_basis"):
        data.setdefault(key, {"mode": "tensor", "degree": 3})
        _check_basis(key, data[key])
    _check_dataset("dataset", data["dataset"])
    data.setdefault("validation", {"kind": "transitions", "n": 100, "horizon": 0.1, "seed": 1000})
    _check_dataset("validation", data["validation"])
    if data.get("init", "zeros") not in ("zeros", "uniform"):
        raise ConfigError("field init must be 'zeros' or 'uniform'")

    integ = dict(data.get("integrator", {}))
    _unknown("integrator", integ, {"eps", "scheme"})
    train = dict(data.get("train", {}))
    integ.setdefault("eps", train.get("eps", 0.01))
    integ.setdefault("scheme", train.get("scheme", "symplectic4"))
    overrides = overrides or {}
    if overrides.get("scheme") is not None:
        integ["scheme"] = overrides["scheme"]
    if overrides.get("eps") is not None:
        integ["eps"] = overrides["eps"]
    if overrides.get("seed") is not None:
        train["seed"] = overrides["seed"]
    if integ.get("scheme", "symplectic4") not in SCHEMES:
        raise ConfigError(f"field integrator.scheme must be one of {SCHEMES}, got {integ.get('scheme')!r}")
    _positive("integrator", integ, "eps")
    integrator = IntegratorConfig(float(integ.get("eps", 0.01)), integ.get("scheme", "symplectic4"))
    train["eps"], train["scheme"] = integrator.eps, integrator.scheme
    try:
        tc = TrainConfig.from_dict(train)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field train: {exc}") from None
    ablate = data.get("ablate", {})
    for s in ablate.get("schemes", []):
        if s not in SCHEMES:
            raise ConfigError(f"field ablate.schemes contains unknown scheme {s!r}")
    data["integrator"] = {"eps": integrator.eps, "scheme": integrator.scheme}
    data["train"] = tc.to_dict()
    return ExperimentConfig(
        name=data.get("name", "experiment"),
        system=data["system"],
        v_basis=data["v_basis"],
        t_basis=data["t_basis"],
        dataset=data["dataset"],
        validation=data["validation"],
        train=tc,
        integrator=integrator,
        init=data.get("init", "zeros"),
        eval=data.get("eval", {}),
        rollout=data.get("rollout", {}),
        ablate=ablate,
        raw=data,
    )


def load_config(path_or_name, overrides: dict | None = None) -> ExperimentConfig:
    return parse_config(_read(path_or_name), overrides)
