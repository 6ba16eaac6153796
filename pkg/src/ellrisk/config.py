"""JSON scene and scenario files.

A scene is one robot and a list of obstacles at fixed mean poses, with
covariances on the centers.  A scenario adds a start, a goal, noise levels and
the planner settings needed for closed-loop runs.  Rotations are unit
quaternions ``[w, x, y, z]`` in 3D and angles in radians in 2D.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import Ellipsoid, GeometryError, make_ellipsoid


class ConfigError(ValueError):
    """Malformed input file; the message names the offending field."""


def _vec(obj, key: str, where: str, size: int | None = None) -> np.ndarray:
    if key not in obj:
        raise ConfigError(f"{where}: missing field '{key}'")
    try:
        v = np.asarray(obj[key], dtype=float).reshape(-1)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.{key}: not a list of numbers") from exc
    if size is not None and v.size != size:
        raise ConfigError(f"{where}.{key}: expected {size} entries, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ConfigError(f"{where}.{key}: non-finite entry")
    return v


def rotation_matrix(spec, dim: int, where: str) -> np.ndarray:
    if spec is None:
        return np.eye(dim)
    if dim == 2:
        try:
            a = float(spec)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}.rotation: 2D rotation must be an angle") from exc
        c, s = np.cos(a), np.sin(a)
        return np.array([[c, -s], [s, c]])
    q = np.asarray(spec, dtype=float).reshape(-1)
    if q.size != 4:
        raise ConfigError(f"{where}.rotation: 3D rotation must be a quaternion [w, x, y, z]")
    norm = np.linalg.norm(q)
    if abs(norm - 1.0) > 1e-6:
        raise ConfigError(f"{where}.rotation: quaternion is not unit length (|q| = {norm:.6g})")
    return Rotation.from_quat(q / norm, scalar_first=True).as_matrix()


def covariance(spec, dim: int, where: str) -> np.ndarray | None:
    """Accepts ``null``, a scalar (isotropic), a diagonal list or a full matrix."""
    if spec is None:
        return None
    S = np.asarray(spec, dtype=float)
    if S.ndim == 0:
        S = float(S) * np.eye(dim)
    elif S.ndim == 1:
        if S.size != dim:
            raise ConfigError(f"{where}: diagonal covariance needs {dim} entries")
        S = np.diag(S)
    if S.shape != (dim, dim):
        raise ConfigError(f"{where}: covariance must be {dim}x{dim}")
    if np.abs(S - S.T).max() > 1e-12 * max(1.0, np.abs(S).max()):
        raise ConfigError(f"{where}: covariance is not symmetric")
    if np.linalg.eigvalsh(S).min() < -1e-12 * max(1.0, np.abs(S).max()):
        raise ConfigError(f"{where}: covariance is not positive semi-definite")
    return S


def ellipsoid(obj: dict, where: str, dim: int | None = None) -> Ellipsoid:
    center = _vec(obj, "center", where, dim)
    n = center.size
    axes = _vec(obj, "semi_axes", where, n)
    R = rotation_matrix(obj.get("rotation"), n, where)
    try:
        return make_ellipsoid(axes, R, center)
    except GeometryError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True, eq=False)
class Scene:
    robot: Ellipsoid
    robot_cov: np.ndarray | None
    obstacles: tuple[Ellipsoid, ...]
    obstacle_covs: tuple[np.ndarray | None, ...]
    epsilon: float = 0.05


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc


def parse_scene(doc: dict) -> Scene:
    if not isinstance(doc, dict) or "robot" not in doc:
        raise ConfigError("scene: missing field 'robot'")
    robot = ellipsoid(doc["robot"], "robot")
    n = robot.dim
    rcov = covariance(doc["robot"].get("covariance"), n, "robot.covariance")
    obstacles, covs = [], []
    for i, o in enumerate(doc.get("obstacles", [])):
        obstacles.append(ellipsoid(o, f"obstacles[{i}]", n))
        covs.append(covariance(o.get("covariance"), n, f"obstacles[{i}].covariance"))
    eps = float(doc.get("epsilon", 0.05))
    if not 0.0 < eps < 1.0:
        raise ConfigError("epsilon: must lie in (0, 1)")
    return Scene(robot, rcov, tuple(obstacles), tuple(covs), eps)


def load_scene(path) -> Scene:
    return parse_scene(_load_json(path))


@dataclass(frozen=True)
class SolverConfig:
    population: int = 64
    elite: int = 8
    iterations: int = 6
    init_std_fraction: float = 0.25
    knots: int | None = 5


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """Inputs of a closed-loop run.  Lengths in m, variances in m^2, time in s."""

    name: str
    start: np.ndarray
    goal: np.ndarray
    robot_axes: np.ndarray
    robot_rotation: np.ndarray
    obstacles: tuple[Ellipsoid, ...]
    obstacle_covs: tuple[np.ndarray | None, ...]
    initial_cov: np.ndarray
    base_measurement_noise: np.ndarray = field(
        default_factory=lambda: np.array([0.05, 0.05, 0.05]))
    noise_scale: float = 1.0
    process_noise: float = 2.5e-5
    epsilon: float = 0.05
    horizon: int = 20
    dt: float = 0.1
    u_max: float = 1.5
    control_weight: float = 0.01
    goal_weight: float = 1.0
    goal_tolerance: float = 0.2
    step_cap: int = 600
    runs: int = 10
    seed: int = 0
    # "measurement": inflate by the sensor noise; "belief": by the filter covariance
    inflation: str = "measurement"
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.noise_scale <= 0.0:
            raise ConfigError("noise_scale: must be positive")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError("epsilon: must lie in (0, 1)")
        if self.inflation not in ("measurement", "belief"):
            raise ConfigError("inflation: must be 'measurement' or 'belief'")
        if self.horizon < 1 or self.step_cap < 1 or self.runs < 1:
            raise ConfigError("horizon, step_cap and runs must be positive")

    @property
    def dim(self) -> int:
        return self.start.size

    @property
    def measurement_cov(self) -> np.ndarray:
        return self.noise_scale * np.diag(self.base_measurement_noise)

    def robot_at(self, position) -> Ellipsoid:
        return make_ellipsoid(self.robot_axes, self.robot_rotation, position)

    def with_(self, **changes) -> ScenarioConfig:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return ScenarioConfig(**d)

    def to_dict(self) -> dict:
        """JSON-ready summary of every setting (geometry included)."""
        return {
            "name": self.name,
            "start": self.start.tolist(),
            "goal": self.goal.tolist(),
            "robot": {"semi_axes": self.robot_axes.tolist(),
                      "rotation_matrix": self.robot_rotation.tolist()},
            "obstacles": [{"center": o.center.tolist(), "shape": o.shape.tolist(),
                           "covariance": None if c is None else c.tolist()}
                          for o, c in zip(self.obstacles, self.obstacle_covs)],
            "initial_cov": self.initial_cov.tolist(),
            "base_measurement_noise": self.base_measurement_noise.tolist(),
            "noise_scale": self.noise_scale,
            "process_noise": self.process_noise,
            "epsilon": self.epsilon,
            "horizon": self.horizon,
            "dt": self.dt,
            "u_max": self.u_max,
            "control_weight": self.control_weight,
            "goal_weight": self.goal_weight,
            "goal_tolerance": self.goal_tolerance,
            "step_cap": self.step_cap,
            "runs": self.runs,
            "seed": self.seed,
            "inflation": self.inflation,
            "solver": asdict(self.solver),
        }


_SCALARS = {
    "noise_scale": float, "process_noise": float, "epsilon": float, "horizon": int,
    "dt": float, "u_max": float, "control_weight": float, "goal_weight": float,
    "goal_tolerance": float, "step_cap": int, "runs": int, "seed": int, "inflation": str,
}


def parse_scenario(doc: dict) -> ScenarioConfig:
    if not isinstance(doc, dict):
        raise ConfigError("scenario: top level must be an object")
    start = _vec(doc, "start", "scenario")
    n = start.size
    if n not in (2, 3):
        raise ConfigError("scenario.start: only 2D and 3D scenarios are supported")
    goal = _vec(doc, "goal", "scenario", n)
    if "robot" not in doc:
        raise ConfigError("scenario: missing field 'robot'")
    axes = _vec(doc["robot"], "semi_axes", "robot", n)
    if np.any(axes <= 0.0):
        raise ConfigError("robot.semi_axes: must be positive")
    R = rotation_matrix(doc["robot"].get("rotation"), n, "robot")
    obstacles, covs = [], []
    for i, o in enumerate(doc.get("obstacles", [])):
        obstacles.append(ellipsoid(o, f"obstacles[{i}]", n))
        covs.append(covariance(o.get("covariance"), n, f"obstacles[{i}].covariance"))
    init = covariance(doc.get("initial_cov", 0.01), n, "initial_cov")
    kwargs = {}
    for key, cast in _SCALARS.items():
        if key in doc:
            try:
                kwargs[key] = cast(doc[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{key}: expected {cast.__name__}") from exc
    if "base_measurement_noise" in doc:
        kwargs["base_measurement_noise"] = _vec(doc, "base_measurement_noise", "scenario", n)
    elif n != 3:
        kwargs["base_measurement_noise"] = np.full(n, 0.05)
    if "solver" in doc:
        try:
            kwargs["solver"] = SolverConfig(**doc["solver"])
        except TypeError as exc:
            raise ConfigError(f"solver: {exc}") from exc
    return ScenarioConfig(name=str(doc.get("name", "scenario")), start=start, goal=goal,
                          robot_axes=axes, robot_rotation=R, obstacles=tuple(obstacles),
                          obstacle_covs=tuple(covs), initial_cov=init, **kwargs)


def load_scenario(path) -> ScenarioConfig:
    return parse_scenario(_load_json(path))


def bundled(name: str) -> Path:
    """Path of a scenario or scene file shipped with the package."""
    p = Path(__file__).with_name("scenarios") / name
    if p.suffix != ".json":
        p = p.with_suffix(".json")
    if not p.exists():
        raise ConfigError(f"no bundled file named '{name}'")
    return p
