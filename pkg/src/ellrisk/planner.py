"""Receding-horizon planning in belief space with per-step collision chance constraints.

The controls ``u_0 .. u_{L-1}`` are the only decision variables: with the
most-likely-observation rollout every belief along the horizon is a function
of them.  The objective is::

    J = sum_l u_l^T M_u u_l + |mean_L - goal|^2_{M_g} + tr(K S K^T M_g)

where the last term is the expected spread the terminal measurement update
adds to the mean (``K`` the gain and ``S`` the innovation covariance at the
final step).  Every step and obstacle must satisfy a collision constraint
``residual <= 0``; what the residual measures depends on the risk method.

The optimizer is a cross-entropy sampler.  Candidates that break a constraint
are never preferred over feasible ones, and the returned plan is re-checked
with the scalar constraint path before it is reported feasible.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from . import baselines, oracle, quadform, riskbounds
from .belief import GaussianBelief, ModelPair, ekf_predict, innovation_covariance, kalman_gain
from .belief import propagate_ml
from .geometry import Ellipsoid, GeometryError, PairGeometry, contact_point
from .riskbounds import RiskMethod

VALIDATION_SLACK = 1e-9
INSIDE_RESIDUAL = 1.0
# exact method: a Chernoff bound below this fraction of eps replaces the series value
SCREEN_FRACTION = 1e-2
# above this v / (2 min lambda) the series is not attempted inside the planner
SERIES_RATIO_MAX = 12.0
# above this the scalar path skips the extended-precision series as well
MP_RATIO_MAX = 60.0
PLANNING_METHODS = (RiskMethod.UPPER_BOUND, RiskMethod.EXACT, RiskMethod.BOUNDING_VOLUME,
                    RiskMethod.CENTER_POINT)


class PlanStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class CemSettings:
    population: int = 256
    elite: int = 32
    iterations: int = 60
    smoothing: float = 0.7
    init_std_fraction: float = 0.25
    min_std: float = 1e-4
    # perturbations are drawn at this many knots and interpolated linearly over
    # the horizon; None draws every step independently
    knots: int | None = 5


def _noise_basis(L: int, knots: int | None) -> np.ndarray | None:
    """``(L, knots)`` linear interpolation weights, scaled to unit variance per step."""
    if knots is None or knots >= L:
        return None
    pos = np.linspace(0.0, knots - 1.0, L)
    W = np.maximum(0.0, 1.0 - np.abs(pos[:, None] - np.arange(knots)[None, :]))
    return W / np.linalg.norm(W, axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class PlanProblem:
    """Everything one planning call needs.  Positions are the first ``robot.dim`` states."""

    belief: GaussianBelief
    goal: np.ndarray
    robot: Ellipsoid
    obstacles: tuple[Ellipsoid, ...]
    model: ModelPair
    u_min: np.ndarray
    u_max: np.ndarray
    horizon: int = 20
    M_u: np.ndarray | None = None
    M_g: np.ndarray | None = None
    eps: float = 0.05
    method: RiskMethod = RiskMethod.UPPER_BOUND
    obstacle_covs: tuple[np.ndarray | None, ...] | None = None
    # fixed covariance for the bounding-volume inflation; None uses the belief
    inflation_cov: np.ndarray | None = None
    n_sigma: float = 3.0
    # exact method: Monte Carlo fallback where the series is out of reach
    mc_samples: int = 4096
    mc_seed: int = 0
    settings: CemSettings = field(default_factory=CemSettings)
    warm_start: np.ndarray | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not 0.0 < self.eps < 1.0:
            raise ValueError("eps must lie in (0, 1)")
        lo = np.asarray(self.u_min, dtype=float)
        hi = np.asarray(self.u_max, dtype=float)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(lo <= hi)):
            raise ValueError("control bounds must be finite with u_min <= u_max")
        object.__setattr__(self, "u_min", lo)
        object.__setattr__(self, "u_max", hi)
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=float))
        object.__setattr__(self, "method", RiskMethod(self.method))
        if self.method not in PLANNING_METHODS:
            raise ValueError(f"method {self.method.value} cannot be used for planning")
        m = lo.size
        n = self.belief.dim
        if self.M_u is None:
            object.__setattr__(self, "M_u", 0.01 * np.eye(m))
        if self.M_g is None:
            object.__setattr__(self, "M_g", np.eye(n))
        obs = tuple(self.obstacles)
        object.__setattr__(self, "obstacles", obs)
        covs = self.obstacle_covs
        covs = (None,) * len(obs) if covs is None else tuple(covs)
        if len(covs) != len(obs):
            raise ValueError("one covariance entry per obstacle")
        object.__setattr__(self, "obstacle_covs", covs)

    @property
    def control_dim(self) -> int:
        return self.u_min.size


@dataclass(frozen=True, eq=False)
class PlanResult:
    controls: np.ndarray
    beliefs: tuple[GaussianBelief, ...]
    objective: float
    residuals: np.ndarray  # (horizon, obstacles)
    status: PlanStatus
    iterations: int = 0

    @property
    def feasible(self) -> bool:
        return self.status in (PlanStatus.OPTIMAL, PlanStatus.FEASIBLE)


class Infeasible(RuntimeError):
    """No sampled control sequence met every constraint; ``result`` is the least-violating one."""

    def __init__(self, msg: str, result: PlanResult):
        super().__init__(msg)
        self.result = result


def stage_cost(u, M_u) -> float:
    u = np.asarray(u, dtype=float)
    return float(u @ np.asarray(M_u, dtype=float) @ u)


def expected_terminal_cost(predicted: GaussianBelief, goal, M_g, model: ModelPair) -> float:
    """Expected squared goal distance after the terminal measurement update.

    ``predicted`` is the belief before that update.  The updated mean is
    ``mean + K w`` with ``w ~ N(0, S)``, so the expectation splits into the
    squared distance of the predicted mean and ``tr(K S K^T M_g)``.
    """
    M_g = np.asarray(M_g, dtype=float)
    d = predicted.mean - np.asarray(goal, dtype=float)
    K = kalman_gain(predicted, model)
    S = innovation_covariance(predicted, model)
    return float(d @ M_g @ d + np.trace(K @ S @ K.T @ M_g))


def _center_inside(robot: Ellipsoid, obstacle: Ellipsoid) -> bool:
    return obstacle.contains(robot.center) or robot.contains(obstacle.center)


def collision_constraint(position, position_cov, robot: Ellipsoid, obstacle: Ellipsoid,
                         obstacle_cov, eps: float, method: RiskMethod | str = "upper_bound",
                         inflation_cov=None, n_sigma: float = 3.0, mc_samples: int = 100_000,
                         seed: int = 0) -> float:
    """Residual of one step-obstacle constraint; the pose is acceptable iff it is <= 0.

    ``upper_bound`` returns the bound's residual, ``exact`` and
    ``center_point`` return ``probability - eps`` (for ``exact`` the
    probability is replaced by a Chernoff bound when that bound is already far
    below ``eps``) and ``bounding_volume``
    returns ``1 - level`` for the inflated robot (negative when separated).
    A robot center inside the obstacle (or the reverse) returns a fixed
    positive residual.
    """
    method = RiskMethod(method)
    r = robot.moved_to(position)
    S = np.asarray(position_cov, dtype=float)
    if obstacle_cov is not None:
        S = S + np.asarray(obstacle_cov, dtype=float)
    if method is RiskMethod.BOUNDING_VOLUME:
        r = baselines.inflate(r, S if inflation_cov is None else inflation_cov, n_sigma)
    if _center_inside(r, obstacle):
        return INSIDE_RESIDUAL
    y = obstacle.center - r.center
    if method is RiskMethod.CENTER_POINT:
        return baselines.center_point_probability(r, obstacle, S) - eps
    try:
        cr = contact_point(r, obstacle)
    except GeometryError:
        return INSIDE_RESIDUAL
    if method is RiskMethod.BOUNDING_VOLUME:
        return 1.0 - cr.lambda0**2 * float(y @ cr.collision_matrix @ y)
    if method is RiskMethod.UPPER_BOUND:
        return riskbounds.eps_safe_residual(cr.collision_matrix, y, S, cr.threshold, eps)
    if method is RiskMethod.EXACT:
        try:
            spec = quadform.standardize(cr.collision_matrix, y, S)
        except quadform.SingularSigma:
            hit = float(y @ cr.collision_matrix @ y) <= cr.threshold
            return (1.0 if hit else 0.0) - eps
        bound = quadform.chernoff_lower_tail(spec.lambdas, spec.b, cr.threshold)[0]
        if bound <= SCREEN_FRACTION * eps:
            return bound - eps
        if cr.threshold / (2.0 * spec.lambdas.min()) <= MP_RATIO_MAX:
            res = quadform.cdf_series(spec, cr.threshold)
            if res.converged:
                return res.value - eps
        est = oracle.mc_quadform_probability(cr.collision_matrix, y, S, cr.threshold,
                                             mc_samples, seed)
        return est.probability - eps
    raise ValueError(f"method {method.value} cannot be used as a constraint")


class _Evaluator:
    """Batched objective and residuals for many control sequences of one problem."""

    def __init__(self, problem: PlanProblem):
        self.pb = problem
        self.n_pos = problem.robot.dim
        self.pairs = [PairGeometry(problem.robot.shape, o.shape) for o in problem.obstacles]
        # common random numbers for the Monte Carlo fallback of the exact method
        self.mc_draws = oracle.chunk_rng(problem.mc_seed, 0).standard_normal(
            (problem.mc_samples, problem.robot.dim))
        # linear models: covariances do not depend on the controls, roll them out once
        zero = np.zeros((problem.horizon, problem.control_dim))
        self.covs, self.terminal_extra = self._cov_rollout(zero)
        self._prepare_shapes()

    def _cov_rollout(self, controls):
        """Posterior covariances along the horizon and the terminal spread term.

        For a linear model the Jacobians are constant, so this is the Riccati
        recursion on plain arrays.
        """
        pb = self.pb
        mdl = pb.model
        u0 = controls[0]
        F = np.asarray(mdl.F(pb.belief.mean, u0), dtype=float)
        H = np.asarray(mdl.H(pb.belief.mean), dtype=float)
        I = np.eye(pb.belief.dim)
        P = pb.belief.cov
        full = []
        for _ in controls:
            Pp = F @ P @ F.T + mdl.R
            S = H @ Pp @ H.T + mdl.Q
            K = np.linalg.solve(S, H @ Pp).T
            IKH = I - K @ H
            P = IKH @ Pp @ IKH.T + K @ mdl.Q @ K.T
            P = 0.5 * (P + P.T)
            full.append(P)
        self.full_covs = np.array(full)
        extra = float(np.trace(K @ S @ K.T @ pb.M_g))
        return self.full_covs[:, : self.n_pos, : self.n_pos], extra

    def _prepare_shapes(self):
        """Per-step, per-obstacle offset covariances and inflated-robot geometry."""
        pb = self.pb
        self.sig = []
        self.sig_g = []
        self.bv_pairs = []
        for j, o in enumerate(pb.obstacles):
            oc = pb.obstacle_covs[j]
            S = self.covs + (0.0 if oc is None else np.asarray(oc, dtype=float))
            self.sig.append(S)
            G = self.pairs[j].G
            self.sig_g.append(np.einsum("ai,lab,bj->lij", G, S, G))
            if pb.method is RiskMethod.BOUNDING_VOLUME:
                if pb.inflation_cov is not None:
                    # a fixed inflation gives the same grown robot at every step
                    grown = baselines.inflate(pb.robot, pb.inflation_cov, pb.n_sigma)
                    self.bv_pairs.append(PairGeometry(grown.shape, o.shape))
                    continue
                steps = []
                for k in range(pb.horizon):
                    grown = baselines.inflate(pb.robot, S[k], pb.n_sigma)
                    steps.append(PairGeometry(grown.shape, o.shape))
                self.bv_pairs.append(steps)

    def rollout_means(self, U: np.ndarray) -> np.ndarray:
        """Means along the horizon, shape ``(N, L, n)``."""
        pb = self.pb
        N, L, _ = U.shape
        X = np.empty((N, L, pb.belief.dim))
        x = np.broadcast_to(pb.belief.mean, (N, pb.belief.dim))
        for k in range(L):
            x = pb.model.f_batch(x, U[:, k])
            X[:, k] = x
        return X

    def details(self, U: np.ndarray) -> tuple[float, np.ndarray, tuple[GaussianBelief, ...]]:
        """Objective, residuals ``(L, obstacles)`` and beliefs of one control sequence."""
        X = self.rollout_means(U[None])
        J = float(self.objective(U[None], X)[0])
        res = self.residuals(X)[0] if self.pb.obstacles else np.zeros((len(U), 0))
        beliefs = tuple(GaussianBelief(x, P) for x, P in zip(X[0], self.full_covs))
        return J, res, beliefs

    def score(self, U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Objective and worst residual of each candidate."""
        X = self.rollout_means(U)
        J = self.objective(U, X)
        if not self.pb.obstacles:
            return J, np.full(len(U), -1.0)
        return J, self.residuals(X).max(axis=(1, 2))

    def objective(self, U: np.ndarray, X: np.ndarray) -> np.ndarray:
        pb = self.pb
        effort = np.einsum("nli,ij,nlj->n", U, pb.M_u, U)
        d = X[:, -1] - pb.goal
        return effort + np.einsum("ni,ij,nj->n", d, pb.M_g, d) + self.terminal_extra

    def unconstrained_minimizer(self) -> np.ndarray:
        """Closed-form minimiser of the objective when obstacles are ignored.

        The terminal mean is affine in the stacked controls, ``x_L = a + B u``,
        so the objective is a convex quadratic; ``B`` is read off unit rollouts.
        """
        pb = self.pb
        L, m = pb.horizon, pb.control_dim
        probes = np.concatenate([np.zeros((1, L * m)), np.eye(L * m)]).reshape(-1, L, m)
        xL = self.rollout_means(probes)[:, -1]
        a = xL[0]
        B = (xL[1:] - a).T
        Hm = np.kron(np.eye(L), pb.M_u) + B.T @ pb.M_g @ B
        u = np.linalg.solve(Hm, -B.T @ pb.M_g @ (a - pb.goal))
        return u.reshape(L, m)

    def residuals(self, X: np.ndarray) -> np.ndarray:
        """Constraint residuals, shape ``(N, L, obstacles)``."""
        pb = self.pb
        N, L, _ = X.shape
        out = np.zeros((N, L, len(pb.obstacles)))
        pos = X[..., : self.n_pos]
        for j, o in enumerate(pb.obstacles):
            y = o.center - pos
            if pb.method is RiskMethod.BOUNDING_VOLUME:
                pairs = self.bv_pairs[j]
                if isinstance(pairs, PairGeometry):
                    out[:, :, j] = self._bv_residual(pairs, y)
                else:
                    for k in range(L):
                        out[:, k, j] = self._bv_residual(pairs[k], y[:, k])
            elif pb.method is RiskMethod.CENTER_POINT:
                out[:, :, j] = self._cp_residual(self.pairs[j], y, self.sig[j])
            else:
                out[:, :, j] = self._quad_residual(self.pairs[j], y, j)
        return out

    @classmethod
    def _bv_residual(cls, pair: PairGeometry, y: np.ndarray) -> np.ndarray:
        inside = cls._inside(pair, y)
        lvl, ok = pair.level(y)
        return np.where(inside | ~ok, INSIDE_RESIDUAL, 1.0 - lvl)

    def _cp_residual(self, pair: PairGeometry, y: np.ndarray, S: np.ndarray) -> np.ndarray:
        vol = self.pb.robot.volume()
        n = y.shape[-1]
        Sinv = np.linalg.inv(S)
        det = np.linalg.det(S)
        maha = np.einsum("nli,lij,nlj->nl", y, Sinv, y)
        dens = np.exp(-0.5 * maha) / np.sqrt((2.0 * np.pi) ** n * det)
        inside = self._inside(pair, y)
        return np.where(inside, INSIDE_RESIDUAL, np.clip(vol * dens, 0.0, 1.0) - self.pb.eps)

    @staticmethod
    def _inside(pair: PairGeometry, y: np.ndarray) -> np.ndarray:
        p = pair.project(y)
        return ((p * p / pair.gamma).sum(-1) <= 1.0) | ((p * p).sum(-1) <= 1.0)

    def _quad_residual(self, pair: PairGeometry, y: np.ndarray, j: int) -> np.ndarray:
        pb = self.pb
        p, lam, w, ok = pair.contact(y)
        bad = self._inside(pair, y) | ~ok
        th = 1.0 / np.where(bad, 1.0, lam) ** 2  # masked below
        Sg = self.sig_g[j]  # (L, n, n) in the G basis, where A is diagonal
        diag = np.einsum("lii->li", Sg)
        wp = w * p
        mean = (w * diag).sum(-1) + (wp * p).sum(-1)
        if pb.method is RiskMethod.UPPER_BOUND:
            tr2 = np.einsum("nli,nlj,lij->nl", w, w, Sg * Sg)
            cross = np.einsum("nli,lij,nlj->nl", wp, Sg, wp)
            var = np.maximum(2.0 * tr2 + 4.0 * cross, 0.0)
            res = riskbounds.residual_from_moments(mean, var, th, pb.eps)
        else:
            res = self._exact_residual(w, p, th, Sg, bad)
        return np.where(bad, INSIDE_RESIDUAL, res)

    def _exact_residual(self, w, p, th, Sg, bad):
        pb = self.pb
        N, L, n = p.shape
        # standardise sqrt(Sg) diag(w) sqrt(Sg) per sample and step
        wS, VS = np.linalg.eigh(Sg)
        half = np.einsum("lij,lj,lkj->lik", VS, np.sqrt(np.maximum(wS, 0.0)), VS)
        mhalf = np.einsum("lij,lj,lkj->lik", VS, 1.0 / np.sqrt(np.maximum(wS, 1e-300)), VS)
        M = np.einsum("lij,nlj,ljk->nlik", half, w, half)
        lam, P = np.linalg.eigh(M)
        z = np.einsum("lij,nlj->nli", mhalf, p)
        b = np.einsum("nlji,nlj->nli", P, z)
        lam2, b2 = lam.reshape(-1, n), b.reshape(-1, n)
        v2 = np.where(bad, 1.0, th).reshape(-1)
        # far from the obstacle the series cancels badly; a small Chernoff bound settles it
        vals = quadform.chernoff_lower_tail(lam2, b2, v2)
        ok = vals <= SCREEN_FRACTION * pb.eps
        ratio = v2 / (2.0 * lam2.min(axis=1))
        try_series = ~ok & (ratio <= SERIES_RATIO_MAX)
        if np.any(try_series):
            vals[try_series], ok[try_series] = quadform.cdf_series_many(
                lam2[try_series], b2[try_series], v2[try_series])
        rest = ~ok & ~bad.reshape(-1)
        if np.any(rest):
            vals[rest] = oracle.mc_standardized_cdf(lam2[rest], b2[rest], v2[rest], self.mc_draws)
        vals = vals.reshape(N, L)
        return vals - pb.eps


def _rollout_beliefs(problem: PlanProblem, controls: np.ndarray) -> tuple[GaussianBelief, ...]:
    out = []
    b = problem.belief
    for u in controls:
        b = propagate_ml(b, u, problem.model)
        out.append(b)
    return tuple(out)


def evaluate_plan(problem: PlanProblem, controls) -> tuple[float, np.ndarray, tuple]:
    """Objective, residuals and beliefs of ``controls`` from scratch (scalar path)."""
    controls = np.asarray(controls, dtype=float)
    beliefs = _rollout_beliefs(problem, controls)
    J = sum(stage_cost(u, problem.M_u) for u in controls)
    prev = problem.belief if len(beliefs) < 2 else beliefs[-2]
    pred = ekf_predict(prev, controls[-1], problem.model)
    J += expected_terminal_cost(pred, problem.goal, problem.M_g, problem.model)
    n_pos = problem.robot.dim
    res = np.zeros((len(beliefs), len(problem.obstacles)))
    for k, b in enumerate(beliefs):
        for j, o in enumerate(problem.obstacles):
            res[k, j] = collision_constraint(
                b.mean[:n_pos], b.cov[:n_pos, :n_pos], problem.robot, o,
                problem.obstacle_covs[j], problem.eps, problem.method,
                problem.inflation_cov, problem.n_sigma, problem.mc_samples, problem.mc_seed)
    return float(J), res, beliefs


def _initial_mean(problem: PlanProblem) -> np.ndarray:
    L, m = problem.horizon, problem.control_dim
    if problem.warm_start is not None:
        U = np.asarray(problem.warm_start, dtype=float).reshape(L, m)
    else:
        U = np.zeros((L, m))
    return np.clip(U, problem.u_min, problem.u_max)


def plan(problem: PlanProblem, seed: int = 0, raise_on_infeasible: bool = True,
         validate: bool = True) -> PlanResult:
    """Cross-entropy search for the cheapest constraint-satisfying control sequence.

    Raises :class:`Infeasible` when no sampled sequence satisfies every
    constraint (unless ``raise_on_infeasible`` is False, in which case the
    least-violating sequence comes back with status ``infeasible``).  With
    ``validate`` the returned objective and residuals are recomputed from
    scratch on the scalar path; otherwise the batched values are reported.
    """
    cfg = problem.settings
    L, m = problem.horizon, problem.control_dim
    lo = np.broadcast_to(problem.u_min, (L, m))
    hi = np.broadcast_to(problem.u_max, (L, m))
    rng = np.random.default_rng(seed)
    if problem.model.is_linear:
        ev = _Evaluator(problem)
        score = ev.score
    else:
        validate = True
        score = partial(_score_scalar, problem)
    finish = partial(evaluate_plan, problem) if validate else ev.details

    mean = _initial_mean(problem)
    std = np.broadcast_to(cfg.init_std_fraction * (hi - lo), (L, m)).copy()
    best_U, best_J = None, np.inf
    least_U, least_viol = None, np.inf
    basis = _noise_basis(L, cfg.knots)
    converged = False
    it = 0
    for it in range(1, cfg.iterations + 1):
        if basis is None:
            Z = rng.standard_normal((cfg.population, L, m))
        else:
            Z = np.einsum("lk,pkm->plm", basis, rng.standard_normal((cfg.population,
                                                                     basis.shape[1], m)))
        U = mean + std * Z
        U[0] = mean
        U = np.clip(U, lo, hi)
        J, viol = score(U)
        feas = viol <= 0.0
        # feasible first, cheapest among them; then least violation
        key = np.where(feas, J, np.inf)
        order = np.lexsort((key, np.where(feas, -np.inf, viol)))
        elite = U[order[: cfg.elite]]
        i0 = order[0]
        if feas[i0] and J[i0] < best_J:
            best_U, best_J = U[i0].copy(), J[i0]
        elif not feas[i0] and viol[i0] < least_viol:
            least_U, least_viol = U[i0].copy(), viol[i0]
        a = cfg.smoothing
        mean = a * elite.mean(axis=0) + (1.0 - a) * mean
        std = a * elite.std(axis=0) + (1.0 - a) * std
        if std.max() < cfg.min_std:
            converged = True
            break

    # the last update is not sampled any more; the averaged mean is often the best candidate
    mean = np.clip(mean, lo, hi)
    J_m, viol_m = score(mean[None])
    if viol_m[0] <= 0.0 and J_m[0] < best_J:
        best_U, best_J = mean.copy(), J_m[0]
    elif best_U is None and viol_m[0] < least_viol:
        least_U, least_viol = mean.copy(), viol_m[0]

    if best_U is not None and problem.model.is_linear:
        best_U, best_J = _polish(ev, best_U, best_J, lo, hi)

    if best_U is None:
        U_out = mean if least_U is None else least_U
        J_out, res, beliefs = finish(U_out)
        result = PlanResult(U_out, beliefs, J_out, res, PlanStatus.INFEASIBLE, it)
        if raise_on_infeasible:
            raise Infeasible("no sampled control sequence satisfied every constraint", result)
        return result
    J_out, res, beliefs = finish(best_U)
    if res.size and res.max() > VALIDATION_SLACK:
        result = PlanResult(best_U, beliefs, J_out, res, PlanStatus.INFEASIBLE, it)
        if raise_on_infeasible:
            raise Infeasible("best candidate failed re-validation", result)
        return result
    status = PlanStatus.OPTIMAL if converged else PlanStatus.FEASIBLE
    return PlanResult(best_U, beliefs, J_out, res, status, it)


POLISH_STEPS = 2.0 ** -np.arange(8)


def _polish(ev: _Evaluator, U: np.ndarray, J: float, lo, hi) -> tuple[np.ndarray, float]:
    """Backtracking line search from a feasible sequence toward the obstacle-free optimum.

    Sampling noise in the cross-entropy winner shows up directly in the
    executed control; moving along the segment to the unconstrained minimiser
    removes it wherever the constraints allow.
    """
    target = ev.unconstrained_minimizer()
    cand = np.clip(U + POLISH_STEPS[:, None, None] * (target - U), lo, hi)
    Jc, viol = ev.score(cand)
    Jc = np.where(viol <= 0.0, Jc, np.inf)
    i = int(np.argmin(Jc))
    if Jc[i] < J:
        return cand[i], float(Jc[i])
    return U, J


def _score_scalar(problem: PlanProblem, U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Candidate-by-candidate scoring for models whose covariances depend on the controls."""
    J = np.empty(len(U))
    viol = np.full(len(U), -1.0)
    for i, Ui in enumerate(U):
        J[i], res, _ = evaluate_plan(problem, Ui)
        if res.size:
            viol[i] = res.max()
    return J, viol
