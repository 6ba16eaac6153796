"""One entry point that evaluates a collision query with any of the available methods."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import baselines, oracle, quadform, riskbounds
from .geometry import Ellipsoid, contact_point, intersects
from .riskbounds import RiskAssessment, RiskMethod


@dataclass(frozen=True, eq=False)
class CollisionQuery:
    """Robot and obstacle ellipsoids at their mean poses plus center covariances."""

    robot: Ellipsoid
    obstacle: Ellipsoid
    sigma_robot: np.ndarray | None = None
    sigma_obstacle: np.ndarray | None = None

    @property
    def offset(self) -> np.ndarray:
        return self.obstacle.center - self.robot.center

    @property
    def sigma(self) -> np.ndarray:
        """Covariance of the offset (the two centers are independent)."""
        return oracle.relative_gaussian(self.robot, self.obstacle, self.sigma_robot,
                                        self.sigma_obstacle)[1]


@dataclass(frozen=True)
class AssessOptions:
    tol: float = quadform.DEFAULT_TOL
    k_max: int = quadform.DEFAULT_KMAX
    mc_samples: int = 1_000_000
    seed: int = 0
    n_sigma: float = 3.0
    mc_fallback: bool = True


def _degenerate(S: np.ndarray) -> bool:
    w = np.linalg.eigvalsh(0.5 * (S + S.T))
    return w.max() <= 0.0 or w.min() <= 1e-12 * w.max()


def _exact(q: CollisionQuery, opts: AssessOptions) -> tuple[float, dict]:
    S = q.sigma
    if _degenerate(S):
        return (1.0 if intersects(q.robot, q.obstacle) else 0.0), {"deterministic": True}
    cr = contact_point(q.robot, q.obstacle)
    spec = quadform.standardize(cr.collision_matrix, q.offset, S)
    res = quadform.cdf_series(spec, cr.threshold, opts.tol, opts.k_max)
    detail = {"terms": res.terms_used, "digits": res.digits, "lambda0": cr.lambda0,
              "threshold": cr.threshold}
    if res.converged:
        return res.value, detail
    if not opts.mc_fallback:
        raise quadform.NotConverged(f"series stopped after {res.terms_used} terms", res)
    # sample the same quadratic form the series was evaluating
    est = oracle.mc_quadform_probability(cr.collision_matrix, q.offset, S, cr.threshold,
                                         opts.mc_samples, opts.seed)
    detail.update(fallback="mc", stderr=est.stderr)
    return est.probability, detail


def _upper(q: CollisionQuery, opts: AssessOptions) -> tuple[float, dict]:
    cr = contact_point(q.robot, q.obstacle)
    A, mu, S = cr.collision_matrix, q.offset, q.sigma
    detail = {"mean": riskbounds.quadform_mean(A, mu, S),
              "variance": riskbounds.quadform_variance(A, mu, S),
              "threshold": cr.threshold}
    return riskbounds.upper_bound(A, mu, S, cr.threshold), detail


def _mc(q: CollisionQuery, opts: AssessOptions) -> tuple[float, dict]:
    est = oracle.mc_collision_probability(q.robot, q.obstacle, q.sigma_robot,
                                          q.sigma_obstacle, opts.mc_samples, opts.seed)
    return est.probability, {"stderr": est.stderr, "samples": est.samples, "seed": est.seed}


def _chi2(q: CollisionQuery, opts: AssessOptions) -> tuple[float, dict]:
    cr = contact_point(q.robot, q.obstacle)
    case = quadform.chi_square_case(cr.collision_matrix, q.offset, q.sigma)
    if case is None:
        raise quadform.QuadFormError("quadratic form is not noncentral chi-square here")
    r, delta2 = case
    p = quadform.noncentral_chi2_cdf(r, delta2, cr.threshold)
    return p, {"dof": r, "noncentrality": delta2}


def _bv(q: CollisionQuery, opts: AssessOptions) -> tuple[float, dict]:
    return baselines.bounding_volume_check(q.robot, q.obstacle, q.sigma, opts.n_sigma), {}


def _cp(q: CollisionQuery, opts: AssessOptions) -> tuple[float, dict]:
    S = q.sigma
    if _degenerate(S):
        # the offset density collapses to a point mass: zero away from it, clipped to 1 on it
        hit = not np.any(q.offset)
        return (1.0 if hit else 0.0), {"deterministic": True}
    return baselines.center_point_probability(q.robot, q.obstacle, S), {}


_DISPATCH = {
    RiskMethod.EXACT: _exact,
    RiskMethod.UPPER_BOUND: _upper,
    RiskMethod.MC: _mc,
    RiskMethod.CHI2: _chi2,
    RiskMethod.BOUNDING_VOLUME: _bv,
    RiskMethod.CENTER_POINT: _cp,
}


def assess(query: CollisionQuery, method: RiskMethod | str, eps: float = 0.05,
           options: AssessOptions | None = None) -> RiskAssessment:
    """Collision probability of ``query`` with ``method``, timed and checked against ``eps``."""
    method = RiskMethod(method)
    opts = options or AssessOptions()
    t0 = time.perf_counter()
    p, detail = _DISPATCH[method](query, opts)
    dt = time.perf_counter() - t0
    return RiskAssessment(method, float(p), bool(p <= eps), dt, eps, detail)
