"""Two cheap comparison methods: a bounding-volume test and the center-point density.

Neither is a probability in the strict sense.  The bounding-volume test grows
the robot by an n-sigma margin and answers 0 or 1.  The center-point value
multiplies the density of the relative position at zero offset by the robot
volume, which is only sensible when the robot is small compared with the
spread of the offset.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import multivariate_normal

from .geometry import Ellipsoid, intersects, make_ellipsoid
from .quadform import SingularSigma


def inflate(robot: Ellipsoid, Sigma, n_sigma: float = 3.0) -> Ellipsoid:
    """Robot grown by ``n_sigma`` standard deviations along each of its own axes.

    The standard deviation used for axis ``r_i`` is ``sqrt(r_i^T Sigma r_i)``,
    the spread of the offset projected on that axis.  The exact Minkowski sum
    of two ellipsoids is not an ellipsoid; this keeps the robot's orientation
    and is exact when Sigma shares the robot's principal axes.
    """
    if n_sigma <= 0.0:
        raise ValueError("n_sigma must be positive")
    S = np.asarray(Sigma, dtype=float)
    axes, R = robot.semi_axes()
    spread = np.sqrt(np.maximum(np.einsum("ji,jk,ki->i", R, S, R), 0.0))
    return make_ellipsoid(axes + n_sigma * spread, R, robot.center)


def bounding_volume_check(robot: Ellipsoid, obstacle: Ellipsoid, Sigma,
                          n_sigma: float = 3.0) -> float:
    """1.0 if the inflated robot touches the obstacle, else 0.0."""
    return 1.0 if intersects(inflate(robot, Sigma, n_sigma), obstacle) else 0.0


def center_point_probability(robot: Ellipsoid, obstacle: Ellipsoid, Sigma) -> float:
    """Robot volume times the density of the offset ``obstacle - robot`` at zero."""
    S = np.asarray(Sigma, dtype=float)
    w = np.linalg.eigvalsh(0.5 * (S + S.T))
    if w.max() <= 0.0 or w.min() <= 1e-12 * w.max():
        raise SingularSigma("center-point approximation needs a positive definite covariance")
    mean = obstacle.center - robot.center
    density = multivariate_normal(mean=mean, cov=S).pdf(np.zeros(robot.dim))
    return float(np.clip(robot.volume() * density, 0.0, 1.0))
