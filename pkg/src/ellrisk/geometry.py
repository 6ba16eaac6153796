"""Ellipsoids, first-contact points and the deterministic collision condition.

An ellipsoid is ``{x : (x - center)^T shape (x - center) <= 1}``.  For a pair
``E1 = (B, b)`` and ``E2 = (C, c)`` the level sets of E1 are grown until they
first touch E2 at ``x_star``.  With ``y = c - b`` the pair collides iff::

    y^T A y <= 1 / lambda0**2,     A = D^T B D

where ``lambda0`` is the minimal real eigenvalue of the 2n x 2n matrix built
from the two shapes.  ``A`` and ``lambda0`` depend on ``y``; callers that
freeze them at a mean configuration get a quadratic form in ``y``.

Two evaluation paths exist:

* :func:`contact_point` builds the block matrix and takes its full eigenvalue
  set (general real Schur decomposition).  This is the reference path.
* :class:`PairGeometry` precomputes everything that depends only on the two
  shapes and finds ``lambda0`` for many offsets at once from the equivalent
  secular equation ``sum_i g_i**2 / (gamma_i - lam)**2 = 1``.  Used by the
  Monte Carlo oracle and the planner.

When the center of E1 lies inside E2 the minimal eigenvalue turns positive and
``x_star`` becomes the boundary point of E2 closest to that center, so the
contact condition alone can miss containment.  :func:`intersects` therefore
reports a collision whenever either center lies inside the other ellipsoid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

SYM_RTOL = 1e-12
IMAG_TOL = 1e-9
SHIFT_COND_MAX = 1e12
CLAMP_RTOL = 1e-14


class GeometryError(ValueError):
    pass


class InvalidEllipsoid(GeometryError):
    pass


class NonOrthonormalRotation(GeometryError):
    pass


class NonPositiveAxis(GeometryError):
    pass


class DimensionMismatch(GeometryError):
    pass


class CoincidentCenters(GeometryError):
    pass


class ComplexMinimalEigenvalue(GeometryError):
    pass


class SingularShift(GeometryError):
    pass


def _check_dim(n: int) -> None:
    if n not in (2, 3):
        raise DimensionMismatch(f"only 2D and 3D ellipsoids are supported, got n={n}")


def sym_sqrt(M: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Symmetric square root (or inverse square root) of an SPD matrix.

    Eigenvalues below ``1e-14 * max`` are clamped to that floor.
    """
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    floor = CLAMP_RTOL * max(float(w.max()), 0.0)
    w = np.maximum(w, floor)
    if floor == 0.0 and np.any(w <= 0.0):
        raise InvalidEllipsoid("matrix is not positive definite")
    r = 1.0 / np.sqrt(w) if inverse else np.sqrt(w)
    return (V * r) @ V.T


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """``{x : (x - center)^T shape (x - center) <= 1}`` with SPD ``shape`` (1/m^2)."""

    shape: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        shape = np.array(self.shape, dtype=float)
        center = np.array(self.center, dtype=float).reshape(-1)
        if shape.ndim != 2 or shape.shape[0] != shape.shape[1]:
            raise InvalidEllipsoid(f"shape must be square, got {shape.shape}")
        n = shape.shape[0]
        _check_dim(n)
        if center.shape != (n,):
            raise DimensionMismatch(f"center has {center.size} entries, shape is {n}x{n}")
        if not (np.all(np.isfinite(shape)) and np.all(np.isfinite(center))):
            raise InvalidEllipsoid("non-finite shape or center")
        scale = max(np.abs(shape).max(), np.finfo(float).tiny)
        if np.abs(shape - shape.T).max() > SYM_RTOL * scale:
            raise InvalidEllipsoid("shape matrix is not symmetric")
        shape = 0.5 * (shape + shape.T)
        if np.linalg.eigvalsh(shape).min() <= 0.0:
            raise InvalidEllipsoid("shape matrix is not positive definite")
        shape.setflags(write=False)
        center.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "center", center)

    @property
    def dim(self) -> int:
        return self.center.size

    def level(self, p) -> float:
        d = np.asarray(p, dtype=float) - self.center
        return float(d @ self.shape @ d)

    def contains(self, p) -> bool:
        return self.level(p) <= 1.0

    def semi_axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Semi-axis lengths (ascending) and the matching unit directions as columns."""
        w, V = np.linalg.eigh(self.shape)
        return 1.0 / np.sqrt(w[::-1]), V[:, ::-1]

    def volume(self) -> float:
        n = self.dim
        unit_ball = math.pi ** (n / 2) / math.gamma(n / 2 + 1)
        return unit_ball / math.sqrt(np.linalg.det(self.shape))

    def translated(self, offset) -> Ellipsoid:
        return Ellipsoid(self.shape, self.center + np.asarray(offset, dtype=float))

    def moved_to(self, center) -> Ellipsoid:
        return Ellipsoid(self.shape, center)

    def transformed(self, R, t) -> Ellipsoid:
        """Image under the rigid motion ``x -> R x + t``."""
        R = np.asarray(R, dtype=float)
        S = R @ self.shape @ R.T
        return Ellipsoid(0.5 * (S + S.T), R @ self.center + np.asarray(t, dtype=float))


def make_ellipsoid(semi_axes, rotation=None, center=None) -> Ellipsoid:
    """Ellipsoid with the given semi-axes along the columns of ``rotation``."""
    a = np.asarray(semi_axes, dtype=float).reshape(-1)
    n = a.size
    _check_dim(n)
    if not np.all(np.isfinite(a)) or np.any(a <= 0.0):
        raise NonPositiveAxis(f"semi-axes must be positive, got {a.tolist()}")
    R = np.eye(n) if rotation is None else np.asarray(rotation, dtype=float)
    if R.shape != (n, n):
        raise DimensionMismatch(f"rotation must be {n}x{n}, got {R.shape}")
    if np.abs(R.T @ R - np.eye(n)).max() > 1e-10:
        raise NonOrthonormalRotation("rotation^T rotation != I")
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    shape = (R * (1.0 / a**2)) @ R.T
    return Ellipsoid(0.5 * (shape + shape.T), c)


def planar_rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class ContactResult:
    x_star: np.ndarray
    lambda0: float
    threshold: float
    collision_matrix: np.ndarray


def _same_dim(E1: Ellipsoid, E2: Ellipsoid) -> int:
    if E1.dim != E2.dim:
        raise DimensionMismatch(f"ellipsoids of dimension {E1.dim} and {E2.dim}")
    return E1.dim


def contact_matrix(E1: Ellipsoid, E2: Ellipsoid) -> np.ndarray:
    """The 2n x 2n matrix whose minimal real eigenvalue fixes the first contact."""
    n = _same_dim(E1, E2)
    B_half = sym_sqrt(E1.shape)
    B_mhalf = sym_sqrt(E1.shape, inverse=True)
    C_bar = B_mhalf @ E2.shape @ B_mhalf
    c_bar = B_half @ (E2.center - E1.center)
    C_tilde = np.linalg.inv(0.5 * (C_bar + C_bar.T))
    c_tilde = sym_sqrt(C_tilde) @ c_bar
    I = np.eye(n)
    return np.block([[C_tilde, -I], [-np.outer(c_tilde, c_tilde), C_tilde]])


def contact_point(E1: Ellipsoid, E2: Ellipsoid) -> ContactResult:
    """Point of E2 where the growing level sets of E1 first touch it."""
    _same_dim(E1, E2)
    y = E2.center - E1.center
    if np.abs(y).max() <= 1e-12 * max(1.0, np.abs(E1.center).max()):
        raise CoincidentCenters("ellipsoid centers coincide; contact direction undefined")
    n = E1.dim
    B_half = sym_sqrt(E1.shape)
    B_mhalf = sym_sqrt(E1.shape, inverse=True)
    C_bar = B_mhalf @ E2.shape @ B_mhalf
    C_tilde = np.linalg.inv(0.5 * (C_bar + C_bar.T))
    c_bar = B_half @ y

    eig = scipy.linalg.eigvals(contact_matrix(E1, E2))
    real = eig[np.abs(eig.imag) <= IMAG_TOL * np.maximum(1.0, np.abs(eig.real))].real
    if real.size == 0:
        raise ComplexMinimalEigenvalue(f"no real eigenvalue among {eig}")
    lam0 = float(real.min())

    shift = lam0 * np.eye(n) - C_tilde
    if np.linalg.cond(shift) > SHIFT_COND_MAX:
        raise SingularShift(f"lambda0*I - C_tilde is singular (lambda0={lam0:.6g})")
    shift_inv = np.linalg.inv(shift)
    x_star = E1.center + lam0 * (B_mhalf @ shift_inv @ c_bar)
    D = B_mhalf @ shift_inv @ B_half
    A = D.T @ E1.shape @ D
    return ContactResult(
        x_star=x_star,
        lambda0=lam0,
        threshold=1.0 / lam0**2,
        collision_matrix=0.5 * (A + A.T),
    )


def intersects(E1: Ellipsoid, E2: Ellipsoid) -> bool:
    """Deterministic overlap test ``y^T A y <= 1/lambda0^2``.

    Coincident centers, and either center lying inside the other ellipsoid,
    short-circuit to ``True``.
    """
    _same_dim(E1, E2)
    y = E2.center - E1.center
    if np.abs(y).max() <= 1e-12 * max(1.0, np.abs(E1.center).max()):
        return True
    if E2.contains(E1.center) or E1.contains(E2.center):
        return True
    res = contact_point(E1, E2)
    return bool(y @ res.collision_matrix @ y <= res.threshold)


class PairGeometry:
    """Batched contact quantities for a fixed pair of shapes and varying offsets.

    Offsets ``y = c - b`` (obstacle center minus robot center) are given as
    arrays of shape ``(..., n)``.  In the basis ``G = B^{1/2} Q`` (``Q`` the
    eigenvectors of ``B^{-1/2} C B^{-1/2}``) the collision matrix is diagonal:
    ``A = G diag((lambda0 - gamma)^-2) G^T`` with ``gamma`` the inverse
    eigenvalues.  Everything below is expressed through ``p = G^T y``.
    """

    def __init__(self, B: np.ndarray, C: np.ndarray):
        B = np.asarray(B, dtype=float)
        C = np.asarray(C, dtype=float)
        n = B.shape[0]
        _check_dim(n)
        if C.shape != (n, n):
            raise DimensionMismatch(f"shapes {B.shape} and {C.shape}")
        self.n = n
        self.B = B
        self.C = C
        B_half = sym_sqrt(B)
        B_mhalf = sym_sqrt(B, inverse=True)
        C_bar = B_mhalf @ C @ B_mhalf
        mu, Q = np.linalg.eigh(0.5 * (C_bar + C_bar.T))
        self.gamma = 1.0 / mu
        self.G = B_half @ Q
        self._order = np.argsort(self.gamma)

    def project(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float) @ self.G

    def lambda0(self, p: np.ndarray, max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
        """Minimal root of ``sum gamma_i p_i^2 / (gamma_i - lam)^2 = 1`` below ``min(gamma)``.

        Returns ``(lambda0, ok)``.  ``ok`` is False where no root exists below
        ``min(gamma)`` (offset in the nullspace of the smallest mode, or zero).
        Newton on ``1 - f^{-1/2}``, which is convex and increasing below the
        pole, started from a point right of the root so the iterates decrease
        monotonically; bisection is only a guard against roundoff.
        """
        p = np.asarray(p, dtype=float)
        g2 = self.gamma * p * p
        gmin = self.gamma[self._order[0]]
        gmax = self.gamma[self._order[-1]]
        gnorm = np.sqrt(g2.sum(axis=-1))
        lo = gmin - gnorm
        # each single term already reaches 1 at gamma_i - |g_i|, so psi >= 0 there
        hi = np.minimum((self.gamma - np.sqrt(g2)).min(axis=-1), gmax - gnorm)
        hi = np.minimum(hi, gmin)

        def f_and_df(lam):
            d = self.gamma - lam[..., None]
            f = (g2 / d**2).sum(axis=-1)
            df = (2.0 * g2 / d**3).sum(axis=-1)
            return f, df

        # psi is convex and increasing, so Newton from the right stays right of the root
        scale = np.maximum(1.0, np.abs(gmin))
        lam = np.where(hi < gmin, hi, gmin - 1e-6 * np.maximum(gnorm, 1e-300))
        ok = gnorm > 0.0
        frozen = np.zeros(lam.shape, dtype=bool)
        for _ in range(max_iter):
            f, df = f_and_df(lam)
            with np.errstate(divide="ignore", invalid="ignore"):
                psi = 1.0 - 1.0 / np.sqrt(f)
                dpsi = 0.5 * df / f**1.5
                step = psi / dpsi
            hi = np.where(psi > 0.0, lam, hi)
            lo = np.where(psi < 0.0, lam, lo)
            new = lam - step
            bad = ~np.isfinite(new) | (new < lo) | (new > hi)
            new = np.where(bad, 0.5 * (lo + hi), new)
            # iterates approach from the right, so psi <= 0 means roundoff level
            frozen |= psi <= 0.0
            tiny = np.abs(new - lam) <= 1e-15 * np.maximum(scale, np.abs(lam))
            lam = np.where(frozen, lam, new)
            frozen |= tiny
            if np.all(frozen | ~ok):
                break
        f, _ = f_and_df(lam)
        ok = ok & np.isfinite(lam) & (np.abs(np.sqrt(f) - 1.0) <= 1e-8)
        return lam, ok

    def weights(self, lam: np.ndarray) -> np.ndarray:
        """Diagonal of the collision matrix in the ``G`` basis."""
        return 1.0 / (lam[..., None] - self.gamma) ** 2

    def collision_matrix(self, lam: np.ndarray) -> np.ndarray:
        w = self.weights(np.asarray(lam, dtype=float))
        return np.einsum("ik,...k,jk->...ij", self.G, w, self.G)

    def contact(self, y) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """``(p, lambda0, weights, ok)`` for offsets ``y``."""
        p = self.project(y)
        lam, ok = self.lambda0(p)
        return p, lam, self.weights(lam), ok

    def level(self, y) -> tuple[np.ndarray, np.ndarray]:
        """E1 scale squared at first contact, ``lambda0^2 y^T A y``; collide iff <= 1."""
        p, lam, w, ok = self.contact(y)
        return lam**2 * (w * p * p).sum(axis=-1), ok

    def intersects(self, y) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised :func:`intersects`; returns ``(hit, determinate)``."""
        y = np.asarray(y, dtype=float)
        p = self.project(y)
        inside_e2 = (p * p / self.gamma).sum(axis=-1) <= 1.0  # y^T C y
        inside_e1 = (p * p).sum(axis=-1) <= 1.0  # y^T B y
        lvl, ok = self.level(y)
        short = inside_e1 | inside_e2
        hit = short | (ok & (lvl <= 1.0))
        return hit, short | ok


def project_onto(E: Ellipsoid, p, max_iter: int = 100) -> np.ndarray:
    """Closest point of ``E`` to ``p`` (``p`` itself when it lies inside)."""
    p = np.asarray(p, dtype=float)
    if E.contains(p):
        return p.copy()
    s, V = np.linalg.eigh(E.shape)
    q = V.T @ (p - E.center)
    # x(t) = q / (1 + t s) hits the boundary where g(t) = 0; g is convex and
    # decreasing, so Newton from t = 0 climbs monotonically to the root
    t = 0.0
    for _ in range(max_iter):
        d = 1.0 + t * s
        g = float(np.sum(s * q * q / d**2)) - 1.0
        dg = -2.0 * float(np.sum(s * s * q * q / d**3))
        step = g / dg
        t -= step
        if abs(step) <= 1e-15 * max(1.0, t):
            break
    return E.center + V @ (q / (1.0 + t * s))


def surface_distance(E1: Ellipsoid, E2: Ellipsoid, tol: float = 1e-10,
                     max_iter: int = 2000) -> float:
    """Euclidean distance between two ellipsoids; 0 when they overlap.

    Alternating projections converge to a closest pair for disjoint convex
    sets.  Overlap is detected with :func:`intersects` first.
    """
    _same_dim(E1, E2)
    if intersects(E1, E2):
        return 0.0
    x1 = project_onto(E1, E2.center)
    x2 = project_onto(E2, x1)
    dist = float(np.linalg.norm(x1 - x2))
    for _ in range(max_iter):
        x1 = project_onto(E1, x2)
        x2 = project_onto(E2, x1)
        new = float(np.linalg.norm(x1 - x2))
        if dist - new <= tol * max(1.0, new):
            return new
        dist = new
    return dist
