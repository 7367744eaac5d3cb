"""scikit-learn style wrappers.

``SparseHamiltonianRegressor`` treats a row of ``X`` as a phase-space state
``[q, p]`` and the matching row of ``y`` as the state ``dt`` later. ``fit``
learns a sparse separable energy function and ``predict`` integrates it.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .basis import basis_from_spec
from .data import Dataset
from .integrators import integrate
from .model import SparseHamiltonian, extract_equation, grad_fields
from .training import TrainConfig, train


def _split_state(X, dim):
    return X[:, :dim], X[:, dim:]


class SparseHamiltonianRegressor(RegressorMixin, BaseEstimator):
    """Learn ``H = V(q) + T(p)`` from pairs of states one time step apart.

    Parameters mirror ``TrainConfig`` plus the two basis specs. With
    ``batch_size=None`` every epoch is a single full-batch step.
    """

    def __init__(
        self, dt=0.1, v_mode="tensor", v_degree=3, t_mode="tensor", t_degree=3, include_constant=True,
        learning_rate=1e-3, lr_decay=0.95, epochs=5, lambda_l1=1e-3, batch_size=128, eps=0.01,
        scheme="symplectic4", init="zeros", random_state=0,
    ):
        self.dt = dt
        self.v_mode = v_mode
        self.v_degree = v_degree
        self.t_mode = t_mode
        self.t_degree = t_degree
        self.include_constant = include_constant
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.epochs = epochs
        self.lambda_l1 = lambda_l1
        self.batch_size = batch_size
        self.eps = eps
        self.scheme = scheme
        self.init = init
        self.random_state = random_state

    def _spec(self, mode, degree):
        if mode == "trig":
            return {"mode": "trig", "degree": degree}
        return {"mode": mode, "degree": degree, "include_constant": self.include_constant}

    def _config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate, lr_decay=self.lr_decay, epochs=self.epochs,
            lambda_l1=self.lambda_l1, batch_size=self.batch_size, eps=self.eps, seed=self.random_state,
            scheme=self.scheme, grad_check=False,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, dtype=np.float64)
        if X.shape[1] % 2 or X.shape[1] != y.shape[1]:
            raise ValueError("X and y rows must be states [q, p] of equal even width")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        dim = X.shape[1] // 2
        cfg = self._config()
        v = basis_from_spec(self._spec(self.v_mode, self.v_degree), dim, "q")
        t = basis_from_spec(self._spec(self.t_mode, self.t_degree), dim, "p")
        model = SparseHamiltonian.initial(v, t, self.init, self.random_state)
        q0, p0 = _split_state(X, dim)
        q1, p1 = _split_state(y, dim)
        N = X.shape[0]
        ds = Dataset(np.zeros(N), q0, p0, np.full((N, 1), float(self.dt)), q1[:, None], p1[:, None])
        report = train(model, ds, cfg)
        self.model_ = report.model
        self.loss_history_ = np.array(report.loss_history)
        self.n_features_in_ = X.shape[1]
        self.dim_ = dim
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        grad_v, grad_t = grad_fields(self.model_)
        q, p = _split_state(X, self.dim_)
        q, p = integrate(grad_v, grad_t, q, p, 0.0, float(self.dt), self.eps, self.scheme)
        return np.hstack([q, p])

    def equation(self, threshold: float = 1e-3):
        check_is_fitted(self, "model_")
        return extract_equation(self.model_, threshold)

    @property
    def coef_(self):
        check_is_fitted(self, "model_")
        return self.model_.params


class BasisFeatures(TransformerMixin, BaseEstimator):
    """Evaluate every term of a function basis; inner trig parameters stay at 0."""

    def __init__(self, mode="total", degree=2, include_constant=True, prefix="x"):
        self.mode = mode
        self.degree = degree
        self.include_constant = include_constant
        self.prefix = prefix

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        spec = {"mode": self.mode, "degree": self.degree, "include_constant": self.include_constant}
        self.basis_ = basis_from_spec(spec, X.shape[1], self.prefix)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.basis_.values(X, np.zeros(self.basis_.n_inner))

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "basis_")
        return np.array(self.basis_.descriptions, dtype=object)
