"""Transition datasets: generation from reference systems, noise, CSV storage.

CSV layout (one header pair, then one row per sample)::

    # {"system": {...}, "sigma": 0.0, "seed": 0}     <- optional metadata
    dim,n_targets
    2,1
    t0,q0_1..q0_n,p0_1..p0_n,[t_k,qk_1..qk_n,pk_1..pk_n] x n_targets
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .integrators import integrate
from .phase import PhaseState


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TransitionSample:
    t0: float
    initial: PhaseState
    targets: tuple  # of (t, PhaseState)

    def __post_init__(self):
        if not self.targets:
            raise ValueError("a transition needs at least one target")
        times = [self.t0] + [t for t, _ in self.targets]
        if any(b <= a for a, b in zip(times[:-1], times[1:])):
            raise ValueError("target times must be strictly increasing and after t0")
        if any(s.dim != self.initial.dim for _, s in self.targets):
            raise ValueError("all states must share one dimension")


@dataclass(frozen=True)
class NoiseConfig:
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


@dataclass(eq=False)
class Dataset:
    """Homogeneous set of transitions stored as arrays.

    ``q0, p0`` have shape (N, n); ``times`` (N, K); ``q, p`` (N, K, n).
    """

    t0: np.ndarray
    q0: np.ndarray
    p0: np.ndarray
    times: np.ndarray
    q: np.ndarray
    p: np.ndarray
    system: dict | None = None
    sigma: float = 0.0
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t0 = np.asarray(self.t0, dtype=np.float64).reshape(-1)
        N = self.t0.size
        q0 = np.asarray(self.q0, dtype=np.float64)
        times = np.asarray(self.times, dtype=np.float64)
        # with N == 0 the trailing sizes cannot be inferred, take them from the input shapes
        n = q0.shape[-1] if N == 0 else q0.size // N
        K = times.shape[-1] if N == 0 else times.size // N
        self.q0 = q0.reshape(N, n)
        self.p0 = np.asarray(self.p0, dtype=np.float64).reshape(N, n)
        self.times = times.reshape(N, K)
        self.q = np.asarray(self.q, dtype=np.float64).reshape(N, K, n)
        self.p = np.asarray(self.p, dtype=np.float64).reshape(N, K, n)
        if N and K == 0:
            raise ValueError("samples need at least one target")
        steps = np.diff(np.concatenate([self.t0[:, None], self.times], axis=1), axis=1)
        if N and not np.all(steps > 0):
            raise ValueError("target times must be strictly increasing and after t0")

    @classmethod
    def empty(cls, dim: int, n_targets: int = 1, **kw) -> Dataset:
        return cls(
            np.zeros(0), np.zeros((0, dim)), np.zeros((0, dim)), np.zeros((0, n_targets)),
            np.zeros((0, n_targets, dim)), np.zeros((0, n_targets, dim)), **kw,
        )

    @classmethod
    def from_samples(cls, samples, **kw) -> Dataset:
        samples = list(samples)
        if not samples:
            raise ValueError("use Dataset.empty for an empty dataset")
        return cls(
            [s.t0 for s in samples],
            [s.initial.q for s in samples],
            [s.initial.p for s in samples],
            [[t for t, _ in s.targets] for s in samples],
            [[st.q for _, st in s.targets] for s in samples],
            [[st.p for _, st in s.targets] for s in samples],
            **kw,
        )

    def __len__(self):
        return self.t0.size

    @property
    def dim(self) -> int:
        return self.q0.shape[1]

    @property
    def n_targets(self) -> int:
        return self.times.shape[1]

    def sample(self, i: int) -> TransitionSample:
        targets = tuple((float(self.times[i, k]), PhaseState(self.q[i, k], self.p[i, k])) for k in range(self.n_targets))
        return TransitionSample(float(self.t0[i]), PhaseState(self.q0[i], self.p0[i]), targets)

    @property
    def samples(self) -> list[TransitionSample]:
        return [self.sample(i) for i in range(len(self))]

    def intervals(self) -> np.ndarray:
        """Durations between consecutive states of each sample, shape (N, K)."""
        return np.diff(np.concatenate([self.t0[:, None], self.times], axis=1), axis=1)

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx)
        return Dataset(
            self.t0[idx], self.q0[idx], self.p0[idx], self.times[idx], self.q[idx], self.p[idx],
            self.system, self.sigma, self.seed, dict(self.meta),
        )

    def copy(self) -> Dataset:
        return self.subset(np.arange(len(self)))

    def equals(self, other: Dataset) -> bool:
        return all(
            np.array_equal(getattr(self, a), getattr(other, a)) for a in ("t0", "q0", "p0", "times", "q", "p")
        )


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for sample ``index`` of a dataset seeded with ``seed``."""
    return np.random.default_rng([int(seed), int(index)])


def _target_count(horizon: float, sub_dt: float) -> int:
    if not (horizon > 0 and sub_dt > 0):
        raise ValueError("horizon and sub_dt must be positive")
    k = round(horizon / sub_dt)
    if k < 1 or abs(k * sub_dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"sub_dt={sub_dt} does not divide horizon={horizon}")
    return k


def generate_transitions(
    system, n: int, t0: float = 0.0, horizon: float = 0.1, sub_dt: float | None = None,
    ref_eps: float = 1e-4, seed: int = 0,
) -> Dataset:
    """Random initial states, each integrated to ``t0 + k*sub_dt`` for k = 1..horizon/sub_dt."""
    sub_dt = horizon if sub_dt is None else sub_dt
    K = _target_count(horizon, sub_dt)
    meta = {"kind": "transitions", "n": n, "t0": t0, "horizon": horizon, "sub_dt": sub_dt, "ref_eps": ref_eps}
    if n == 0:
        return Dataset.empty(system.dim, K, system=system.descriptor(), seed=seed, meta=meta)
    states = [system.sample_initial_state(sample_rng(seed, i)) for i in range(n)]
    q = np.stack([s.q for s in states])
    p = np.stack([s.p for s in states])
    grad_v, grad_t = system.truth_fields()
    times = t0 + sub_dt * np.arange(1, K + 1)
    qs, ps = [], []
    qk, pk, tk = q, p, t0
    for t_next in times:
        qk, pk = integrate(grad_v, grad_t, qk, pk, tk, float(t_next), ref_eps)
        qs.append(qk)
        ps.append(pk)
        tk = float(t_next)
    return Dataset(
        np.full(n, float(t0)), q, p, np.tile(times, (n, 1)), np.stack(qs, axis=1), np.stack(ps, axis=1),
        system=system.descriptor(), seed=seed, meta=meta,
    )


def generate_trajectory(system, steps: int, dt: float = 0.1, ref_eps: float = 1e-4, seed: int = 0) -> Dataset:
    """One rollout of ``steps`` states sliced into ``steps - 1`` consecutive transitions."""
    if steps < 2:
        raise ValueError("a trajectory needs at least two states")
    start = system.sample_initial_state(np.random.default_rng(seed))
    grad_v, grad_t = system.truth_fields()
    q, p = start.q[None, :], start.p[None, :]
    qs, ps = [q[0]], [p[0]]
    for i in range(steps - 1):
        q, p = integrate(grad_v, grad_t, q, p, i * dt, (i + 1) * dt, ref_eps)
        qs.append(q[0])
        ps.append(p[0])
    qs, ps = np.array(qs), np.array(ps)
    t = dt * np.arange(steps)
    meta = {"kind": "trajectory", "steps": steps, "dt": dt, "ref_eps": ref_eps}
    return Dataset(
        t[:-1], qs[:-1], ps[:-1], t[1:, None], qs[1:, None, :], ps[1:, None, :],
        system=system.descriptor(), seed=seed, meta=meta,
    )


def add_noise(dataset: Dataset, cfg: NoiseConfig) -> Dataset:
    """Copy of ``dataset`` with i.i.d. N(0, sigma^2) added to every stored state component."""
    out = dataset.copy()
    out.sigma = cfg.sigma
    out.meta["noise_seed"] = cfg.seed
    if cfg.sigma == 0:
        return out
    rng = np.random.default_rng(cfg.seed)
    for name in ("q0", "p0", "q", "p"):
        arr = getattr(out, name)
        setattr(out, name, arr + rng.normal(0.0, cfg.sigma, arr.shape))
    return out


# -- CSV persistence -------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save(dataset: Dataset, path) -> None:
    path = Path(path)
    meta = {"system": dataset.system, "sigma": dataset.sigma, "seed": dataset.seed, "meta": dataset.meta}
    lines = ["# " + json.dumps(meta, sort_keys=True), "dim,n_targets", f"{dataset.dim},{dataset.n_targets}"]
    for i in range(len(dataset)):
        row = [dataset.t0[i], *dataset.q0[i], *dataset.p0[i]]
        for k in range(dataset.n_targets):
            row += [dataset.times[i, k], *dataset.q[i, k], *dataset.p[i, k]]
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def load(path) -> Dataset:
    path = Path(path)
    meta = {}
    header_seen = False
    dim = n_targets = None
    rows = []
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if not header_seen:
                    try:
                        meta = json.loads(line[1:])
                    except json.JSONDecodeError as exc:
                        raise DatasetFormatError(f"line {lineno}: bad metadata comment: {exc}") from None
                continue
            if not header_seen:
                if line.replace(" ", "") != "dim,n_targets":
                    raise DatasetFormatError(f"line {lineno}: expected header 'dim,n_targets', got {line!r}")
                header_seen = True
                continue
            if dim is None:
                try:
                    dim, n_targets = (int(v) for v in line.split(","))
                except ValueError:
                    raise DatasetFormatError(f"line {lineno}: malformed header values {line!r}") from None
                if dim < 1 or n_targets < 1:
                    raise DatasetFormatError(f"line {lineno}: dim and n_targets must be positive")
                width = (1 + 2 * dim) * (1 + n_targets)
                continue
            fields = line.split(",")
            if len(fields) != width:
                raise DatasetFormatError(
                    f"line {lineno}: row {len(rows) + 1} has {len(fields)} values, expected {width}"
                )
            try:
                values = [float(v) for v in fields]
            except ValueError:
                raise DatasetFormatError(f"line {lineno}: row {len(rows) + 1} has an unparseable number") from None
            if not all(math.isfinite(v) for v in values):
                raise DatasetFormatError(f"line {lineno}: row {len(rows) + 1} has a non-finite value")
            rows.append(values)
    if not header_seen or dim is None:
        raise DatasetFormatError(f"{path}: missing 'dim,n_targets' header")
    kw = {"system": meta.get("system"), "sigma": meta.get("sigma", 0.0), "seed": meta.get("seed"),
          "meta": meta.get("meta", {})}
    if not rows:
        return Dataset.empty(dim, n_targets, **kw)
    a = np.array(rows).reshape(len(rows), 1 + n_targets, 1 + 2 * dim)
    return Dataset(
        a[:, 0, 0], a[:, 0, 1 : 1 + dim], a[:, 0, 1 + dim :],
        a[:, 1:, 0], a[:, 1:, 1 : 1 + dim], a[:, 1:, 1 + dim :], **kw,
    )
