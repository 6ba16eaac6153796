"""Closed-loop runs: plan, move the true robot, measure, filter, repeat.

The true robot is a point mass ``x' = x + u dt + n`` observed directly with
additive Gaussian noise.  Each step the planner sees only the filter belief.
Collisions are judged on the true pose with the deterministic overlap test.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .belief import GaussianBelief, ekf_predict, ekf_update, point_mass_model
from .config import ScenarioConfig
from .geometry import intersects, surface_distance
from .planner import CemSettings, Infeasible, PlanProblem, plan
from .riskbounds import RiskMethod

SCHEMA = "# schema=1"


@dataclass(frozen=True, eq=False)
class Trajectory:
    true_pos: np.ndarray  # (steps + 1, n)
    est_pos: np.ndarray  # (steps + 1, n)
    est_cov: np.ndarray  # (steps + 1, n, n)
    residuals: np.ndarray  # (steps + 1, obstacles); first planned step, NaN at the end
    infeasible_steps: int
    dt: float

    @property
    def steps(self) -> int:
        return self.true_pos.shape[0] - 1

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(SCHEMA + "\n")
        n = self.true_pos.shape[1]
        axes = "xyz"[:n]
        head = (["step", "t"] + [f"true_{a}" for a in axes] + [f"est_{a}" for a in axes]
                + ["cov_trace"] + [f"residual_{j}" for j in range(self.residuals.shape[1])])
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(head)
        for k in range(self.steps + 1):
            row = [k, _fmt(k * self.dt)]
            row += [_fmt(v) for v in self.true_pos[k]] + [_fmt(v) for v in self.est_pos[k]]
            row += [_fmt(np.trace(self.est_cov[k]))] + [_fmt(v) for v in self.residuals[k]]
            w.writerow(row)
        return buf.getvalue()


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class Metrics:
    """Per-run values, or aggregates when ``runs > 1``.

    ``d`` is the smallest true surface distance to any obstacle (mean over
    successful runs when aggregated, None if there are none), ``l`` the path
    length and ``T`` the duration.  ``sp`` is the success percentage.
    """

    d: float | None
    d_std: float
    l: float
    T: float
    sp: float
    collided: int
    runs: int = 1
    reached: int = 0

    @property
    def success(self) -> bool:
        return self.sp == 100.0


def _problem(cfg: ScenarioConfig, belief: GaussianBelief, method: RiskMethod, model,
             warm) -> PlanProblem:
    n = cfg.dim
    inflation = cfg.measurement_cov if cfg.inflation == "measurement" else None
    s = cfg.solver
    return PlanProblem(
        belief=belief, goal=cfg.goal, robot=cfg.robot_at(np.zeros(n)),
        obstacles=cfg.obstacles, model=model,
        u_min=np.full(n, -cfg.u_max), u_max=np.full(n, cfg.u_max), horizon=cfg.horizon,
        M_u=cfg.control_weight * np.eye(n), M_g=cfg.goal_weight * np.eye(n), eps=cfg.epsilon,
        method=method, obstacle_covs=cfg.obstacle_covs, inflation_cov=inflation,
        settings=CemSettings(population=s.population, elite=s.elite, iterations=s.iterations,
                             init_std_fraction=s.init_std_fraction, knots=s.knots),
        warm_start=warm)


def _heading(cfg: ScenarioConfig, pos: np.ndarray) -> np.ndarray:
    """Straight-to-goal controls, used to seed the first plan."""
    d = cfg.goal - pos
    speed = min(cfg.u_max, float(np.linalg.norm(d)) / (cfg.horizon * cfg.dt))
    u = speed * d / max(float(np.linalg.norm(d)), 1e-12)
    return np.tile(np.clip(u, -cfg.u_max, cfg.u_max), (cfg.horizon, 1))


def run_scenario(cfg: ScenarioConfig, method: RiskMethod | str = RiskMethod.UPPER_BOUND,
                 seed: int = 0) -> tuple[Trajectory, Metrics]:
    method = RiskMethod(method)
    n = cfg.dim
    model = point_mass_model(cfg.dt, n, cfg.process_noise, np.diag(cfg.measurement_cov))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    R_half = math.sqrt(cfg.process_noise)
    Q_half = np.sqrt(np.diag(cfg.measurement_cov))

    x = cfg.start.copy()
    belief = GaussianBelief(cfg.start, cfg.initial_cov)
    true_pos, est_pos, est_cov, residuals = [x.copy()], [belief.mean], [belief.cov], []
    warm = _heading(cfg, belief.mean)
    infeasible = 0
    collided = False
    reached = False
    for step in range(cfg.step_cap):
        if np.linalg.norm(belief.mean - cfg.goal) <= cfg.goal_tolerance:
            reached = True
            break
        pb = _problem(cfg, belief, method, model, warm)
        try:
            res = plan(pb, seed=seed * 1_000_003 + step, validate=False)
        except Infeasible as exc:
            res = exc.result
            infeasible += 1
        residuals.append(res.residuals[0] if res.residuals.size else np.zeros(0))
        u = res.controls[0]
        warm = np.vstack([res.controls[1:], res.controls[-1:]])
        x = x + u * cfg.dt + R_half * rng.standard_normal(n)
        z = x + Q_half * rng.standard_normal(n)
        belief = ekf_update(ekf_predict(belief, u, model), z, model)
        true_pos.append(x.copy())
        est_pos.append(belief.mean)
        est_cov.append(belief.cov)
        robot = cfg.robot_at(x)
        if any(intersects(robot, o) for o in cfg.obstacles):
            collided = True
    else:
        reached = bool(np.linalg.norm(belief.mean - cfg.goal) <= cfg.goal_tolerance)
    residuals.append(np.full(len(cfg.obstacles), np.nan))

    traj = Trajectory(np.array(true_pos), np.array(est_pos), np.array(est_cov),
                      np.array(residuals).reshape(len(true_pos), len(cfg.obstacles)),
                      infeasible, cfg.dt)
    return traj, trajectory_metrics(cfg, traj, collided, reached)


def min_distance(cfg: ScenarioConfig, positions: np.ndarray) -> float:
    """Smallest surface distance between the robot at ``positions`` and any obstacle."""
    if not cfg.obstacles:
        return math.inf
    r_robot = float(np.max(cfg.robot_axes))
    best = math.inf
    for o in cfg.obstacles:
        r_obs = float(np.max(o.semi_axes()[0]))
        # bounding spheres give a cheap lower bound; skip poses that cannot beat best
        gap = np.linalg.norm(positions - o.center, axis=1) - r_robot - r_obs
        for k in np.argsort(gap):
            if gap[k] >= best:
                break
            best = min(best, surface_distance(cfg.robot_at(positions[k]), o))
    return best


def trajectory_metrics(cfg: ScenarioConfig, traj: Trajectory, collided: bool,
                       reached: bool) -> Metrics:
    seg = np.diff(traj.true_pos, axis=0)
    length = float(np.linalg.norm(seg, axis=1).sum())
    d = min_distance(cfg, traj.true_pos)
    success = reached and not collided
    return Metrics(d=None if math.isinf(d) else d, d_std=0.0, l=length,
                   T=traj.steps * traj.dt, sp=100.0 if success else 0.0,
                   collided=int(collided), runs=1, reached=int(reached))


def aggregate(runs: list[Metrics]) -> Metrics:
    """Mean and sample standard deviation of d over successful runs; means of l and T."""
    if not runs:
        raise ValueError("need at least one run")
    ok = [m for m in runs if m.success]
    pool = ok or runs
    ds = [m.d for m in ok if m.d is not None]
    d = float(np.mean(ds)) if ds else None
    d_std = float(np.std(ds, ddof=1)) if len(ds) > 1 else 0.0
    return Metrics(
        d=d, d_std=d_std,
        l=float(np.mean([m.l for m in pool])),
        T=float(np.mean([m.T for m in pool])),
        sp=100.0 * len(ok) / len(runs),
        collided=sum(m.collided for m in runs),
        runs=len(runs),
        reached=sum(m.reached for m in runs),
    )


def metrics_csv(rows: list[tuple[str, Metrics]]) -> str:
    buf = io.StringIO()
    buf.write(SCHEMA + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "d_mean", "d_std", "l", "T", "sp", "collided", "runs"])
    for label, m in rows:
        w.writerow([label, "" if m.d is None else _fmt(m.d), _fmt(m.d_std), _fmt(m.l),
                    _fmt(m.T), _fmt(m.sp), m.collided, m.runs])
    return buf.getvalue()


def run_batch(cfg: ScenarioConfig, method: RiskMethod | str, runs: int | None = None,
              seed: int | None = None) -> list[tuple[Trajectory, Metrics]]:
    """``runs`` independent runs; run ``i`` uses seed ``seed + i``."""
    runs = cfg.runs if runs is None else runs
    seed = cfg.seed if seed is None else seed
    return [run_scenario(cfg, method, seed + i) for i in range(runs)]
