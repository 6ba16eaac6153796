"""Gaussian belief states and the extended Kalman filter that moves them.

Motion ``x' = f(x, u) + n`` with ``n ~ N(0, R)`` and observation
``z = h(x) + m`` with ``m ~ N(0, Q)``.  During planning the observation is
assumed to equal its prediction, which zeroes the innovation and makes the
belief rollout deterministic.  In execution the innovation ``z - h(mean)`` is
zero-mean Gaussian with covariance ``H Sigma H^T + Q``, so the updated mean is
random with covariance ``K (H Sigma H^T + Q) K^T``.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

COND_MAX = 1e12


class NonFiniteDynamics(ArithmeticError):
    pass


class SingularInnovationCovariance(np.linalg.LinAlgError):
    pass


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = _sym(np.atleast_2d(np.array(self.cov, dtype=float)))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance {cov.shape} does not match mean of size {mean.size}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise NonFiniteDynamics("belief contains non-finite entries")
        w = np.linalg.eigvalsh(cov)
        if w.min() < -1e-12 * max(1.0, abs(w.max())):
            raise ValueError("covariance is not positive semi-definite")
        if w.min() < 0.0:
            w, V = np.linalg.eigh(cov)
            cov = _sym((V * np.maximum(w, 0.0)) @ V.T)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def vector(self) -> np.ndarray:
        """Mean stacked on the column-major flattening of the covariance."""
        return np.concatenate([self.mean, self.cov.reshape(-1, order="F")])

    @staticmethod
    def from_vector(s: np.ndarray, n: int) -> GaussianBelief:
        s = np.asarray(s, dtype=float)
        return GaussianBelief(s[:n], s[n:].reshape((n, n), order="F"))


@dataclass(frozen=True, eq=False)
class ModelPair:
    """Motion and observation models with their Jacobians and noise covariances."""

    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    F: Callable[[np.ndarray, np.ndarray], np.ndarray]
    R: np.ndarray
    h: Callable[[np.ndarray], np.ndarray]
    H: Callable[[np.ndarray], np.ndarray]
    Q: np.ndarray
    is_linear: bool = False
    # optional vectorised motion over rows of (N, n) states and (N, m) controls
    f_batch: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.f_batch is None:
            f = self.f
            object.__setattr__(self, "f_batch",
                               lambda X, U: np.array([f(x, u) for x, u in zip(X, U)]))


def linear_model(Fm, Gm, Hm, R, Q) -> ModelPair:
    """``x' = Fm x + Gm u``, ``z = Hm x``."""
    Fm, Gm, Hm = (np.asarray(M, dtype=float) for M in (Fm, Gm, Hm))
    return ModelPair(
        f=lambda x, u: Fm @ x + Gm @ u,
        F=lambda x, u: Fm,
        R=np.asarray(R, dtype=float),
        h=lambda x: Hm @ x,
        H=lambda x: Hm,
        Q=np.asarray(Q, dtype=float),
        is_linear=True,
        f_batch=lambda X, U: X @ Fm.T + U @ Gm.T,
    )


def point_mass_model(dt: float = 0.1, dim: int = 3, process_noise=2.5e-5,
                     measurement_noise=0.05) -> ModelPair:
    """Velocity-controlled point mass observed directly: ``x' = x + u dt``, ``z = x``.

    Noise levels are per-axis variances, either one scalar or one per axis.
    """
    I = np.eye(dim)
    R = np.diag(np.broadcast_to(np.asarray(process_noise, dtype=float), (dim,)))
    Q = np.diag(np.broadcast_to(np.asarray(measurement_noise, dtype=float), (dim,)))
    return linear_model(I, dt * I, I, R, Q)


def ekf_predict(belief: GaussianBelief, u, model: ModelPair) -> GaussianBelief:
    u = np.asarray(u, dtype=float)
    mean = np.asarray(model.f(belief.mean, u), dtype=float)
    F = np.asarray(model.F(belief.mean, u), dtype=float)
    cov = F @ belief.cov @ F.T + model.R
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise NonFiniteDynamics("motion model produced non-finite values")
    return GaussianBelief(mean, _sym(cov))


def innovation_covariance(predicted: GaussianBelief, model: ModelPair) -> np.ndarray:
    H = np.asarray(model.H(predicted.mean), dtype=float)
    return _sym(H @ predicted.cov @ H.T + model.Q)


def kalman_gain(predicted: GaussianBelief, model: ModelPair) -> np.ndarray:
    H = np.asarray(model.H(predicted.mean), dtype=float)
    S = innovation_covariance(predicted, model)
    if np.linalg.cond(S) > COND_MAX:
        raise SingularInnovationCovariance("innovation covariance is numerically singular")
    # K = P H^T S^-1, solved rather than inverted
    return np.linalg.solve(S, H @ predicted.cov).T


def _posterior_cov(predicted: GaussianBelief, K: np.ndarray, model: ModelPair) -> np.ndarray:
    H = np.asarray(model.H(predicted.mean), dtype=float)
    IKH = np.eye(predicted.dim) - K @ H
    # Joseph form keeps the result PSD under roundoff
    return _sym(IKH @ predicted.cov @ IKH.T + K @ model.Q @ K.T)


def ekf_update(predicted: GaussianBelief, z, model: ModelPair) -> GaussianBelief:
    K = kalman_gain(predicted, model)
    innov = np.asarray(z, dtype=float) - np.asarray(model.h(predicted.mean), dtype=float)
    return GaussianBelief(predicted.mean + K @ innov, _posterior_cov(predicted, K, model))


def propagate_ml(belief: GaussianBelief, u, model: ModelPair) -> GaussianBelief:
    """Predict, then update with the most likely observation (zero innovation)."""
    pred = ekf_predict(belief, u, model)
    K = kalman_gain(pred, model)
    return GaussianBelief(pred.mean, _posterior_cov(pred, K, model))


def sample_belief_transition(belief: GaussianBelief, u, model: ModelPair,
                             seed: int) -> GaussianBelief:
    """One draw of the random belief transition driven by the innovation."""
    pred = ekf_predict(belief, u, model)
    K = kalman_gain(pred, model)
    S = innovation_covariance(pred, model)
    w = np.random.default_rng(seed).multivariate_normal(np.zeros(S.shape[0]), S,
                                                        method="eigh")
    return GaussianBelief(pred.mean + K @ w, _posterior_cov(pred, K, model))
