"""Moments of Gaussian quadratic forms and the reverse-Markov collision bound.

For ``v = y^T A y`` with ``y ~ N(mu, Sigma)``::

    E[v]   = tr(A Sigma) + mu^T A mu
    Var[v] = 2 tr((A Sigma)^2) + 4 mu^T A Sigma A mu

If ``v`` never exceeded ``beta`` then ``P(v <= t) <= (beta - E[v]) / (beta - t)``.
``beta`` is taken one standard deviation above the mean, which is a working
assumption and not a true bound on ``v``.  A configuration is accepted as
``eps``-safe when ``(beta - E[v]) - eps (beta - t) <= 0``.

A workspace-radius choice ``beta = lambda_max(A) kappa^2`` is also possible but
is not used anywhere in this package.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class RiskMethod(str, enum.Enum):
    EXACT = "exact"
    UPPER_BOUND = "upper_bound"
    MC = "mc"
    CHI2 = "chi2"
    BOUNDING_VOLUME = "bounding_volume"
    CENTER_POINT = "center_point"


@dataclass(frozen=True)
class RiskAssessment:
    method: RiskMethod
    probability: float
    feasible: bool
    compute_time: float
    epsilon: float
    detail: dict | None = None

    def __post_init__(self):
        if self.feasible != (self.probability <= self.epsilon):
            raise ValueError("feasible must equal probability <= epsilon")


def _arrays(A, mu, Sigma):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    S = np.atleast_2d(np.asarray(Sigma, dtype=float))
    return A, mu, S


def quadform_mean(A, mu, Sigma) -> float:
    A, mu, S = _arrays(A, mu, Sigma)
    return float(np.trace(A @ S) + mu @ A @ mu)


def quadform_variance(A, mu, Sigma) -> float:
    A, mu, S = _arrays(A, mu, Sigma)
    AS = A @ S
    return float(max(0.0, 2.0 * np.trace(AS @ AS) + 4.0 * mu @ AS @ A @ mu))


def compute_beta(A, mu, Sigma) -> float:
    return quadform_mean(A, mu, Sigma) + float(np.sqrt(quadform_variance(A, mu, Sigma)))


def bound_from_moments(mean, var, threshold):
    """Reverse-Markov bound from precomputed moments; works elementwise on arrays."""
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.maximum(np.asarray(var, dtype=float), 0.0))
    beta = mean + sd
    gap = beta - threshold
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.where(gap > 0.0, sd / gap, 1.0)
    return np.clip(raw, 0.0, 1.0)


def residual_from_moments(mean, var, threshold, eps):
    sd = np.sqrt(np.maximum(np.asarray(var, dtype=float), 0.0))
    beta = np.asarray(mean, dtype=float) + sd
    return sd - eps * (beta - threshold)


def upper_bound(A, mu, Sigma, threshold: float) -> float:
    """Upper estimate of ``P(y^T A y <= threshold)``; 1 when ``beta <= threshold``."""
    m = quadform_mean(A, mu, Sigma)
    v = quadform_variance(A, mu, Sigma)
    return float(bound_from_moments(m, v, threshold))


def eps_safe_residual(A, mu, Sigma, threshold: float, eps: float) -> float:
    """``(beta - E) - eps (beta - threshold)``; the configuration passes iff <= 0."""
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    m = quadform_mean(A, mu, Sigma)
    v = quadform_variance(A, mu, Sigma)
    return float(residual_from_moments(m, v, threshold, eps))
