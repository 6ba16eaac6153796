"""Distribution of Gaussian quadratic forms ``Q = x^T A x``, ``x ~ N(mu, Sigma)``.

After standardisation ``Q = sum_i lambda_i (u_i + b_i)^2`` with ``u ~ N(0, I)``,
and the CDF is the power series::

    F(v) = sum_k (-1)^k c_k v^(n/2 + k) / Gamma(n/2 + k + 1)
    c_0  = exp(-1/2 sum b_i^2) prod (2 lambda_i)^(-1/2)
    c_k  = 1/k sum_{i<k} d_{k-i} c_i
    d_k  = 1/2 sum_i (1 - k b_i^2) (2 lambda_i)^(-k)

The series is entire but alternating.  Once ``v / (2 min lambda)`` is large
the terms grow far beyond the sum and float64 cancels to noise, so the float
evaluation tracks the largest term it has seen and retries in extended
precision (mpmath) when the implied rounding error is too large.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np
from scipy.special import gammainc, gammaln

from .geometry import sym_sqrt

DEFAULT_TOL = 1e-10
DEFAULT_KMAX = 5000
# largest tolerated rounding error of a probability before switching to mpmath
ROUNDOFF_BUDGET = 1e-9
MAX_DIGITS = 400


class QuadFormError(ValueError):
    pass


class NonSymmetricA(QuadFormError):
    pass


class SingularSigma(QuadFormError):
    pass


class NotConverged(ArithmeticError):
    def __init__(self, msg, result=None):
        super().__init__(msg)
        self.result = result


@dataclass(frozen=True)
class QuadFormSpec:
    """Eigenvalues ``lambdas`` (descending) and offsets ``b`` of a standardised form."""

    lambdas: np.ndarray
    b: np.ndarray

    @property
    def n(self) -> int:
        return self.lambdas.size

    def mean(self) -> float:
        return float(np.sum(self.lambdas * (1.0 + self.b**2)))


@dataclass(frozen=True)
class SeriesResult:
    value: float
    terms_used: int
    converged: bool
    last_term_magnitude: float
    digits: int = 16  # working precision of the evaluation that produced value


def _as_sym(A, name="A") -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    scale = max(np.abs(A).max(), np.finfo(float).tiny)
    if A.shape[0] != A.shape[1] or np.abs(A - A.T).max() > 1e-9 * scale:
        raise NonSymmetricA(f"{name} must be symmetric")
    return 0.5 * (A + A.T)


def _check_sigma(Sigma) -> np.ndarray:
    S = np.atleast_2d(np.asarray(Sigma, dtype=float))
    S = 0.5 * (S + S.T)
    w = np.linalg.eigvalsh(S)
    if w.max() <= 0.0 or w.min() <= 1e-12 * w.max():
        raise SingularSigma("covariance must be positive definite")
    return S


def standardize(A, mu, Sigma) -> QuadFormSpec:
    """Eigen-decomposition of ``Sigma^{1/2} A Sigma^{1/2}`` and rotated mean."""
    A = _as_sym(A)
    S = _check_sigma(Sigma)
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    S_half = sym_sqrt(S)
    S_mhalf = sym_sqrt(S, inverse=True)
    M = S_half @ A @ S_half
    lam, P = np.linalg.eigh(0.5 * (M + M.T))
    order = np.argsort(lam)[::-1]
    lam, P = lam[order], P[:, order]
    b = P.T @ (S_mhalf @ mu)
    return QuadFormSpec(lambdas=lam, b=b)


def _float_series(lam, b, v, tol, k_max, pdf):
    """Float64 evaluation; returns (sum, terms, converged, last |term|, max |term|)."""
    n = lam.size
    shift = 0 if pdf else 1
    a = n / 2.0
    # term_k = (-1)^k c0 e_k v^(a-1+shift) / Gamma(a+k+shift), with e_k = c_k v^k / c0
    log_pref = (-0.5 * float(b @ b) - 0.5 * float(np.log(2.0 * lam).sum())
                + (a - 1.0 + shift) * math.log(v))
    r = v / (2.0 * lam)
    delta = np.zeros(k_max + 1)
    e = np.zeros(k_max + 1)
    e[0] = 1.0
    total = math.exp(log_pref - math.lgamma(a + shift))
    max_term = abs(total)
    last = abs(total)
    small = 0
    rk = np.ones_like(r)
    k = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, k_max + 1):
            rk = rk * r
            delta[k] = 0.5 * float(np.sum((1.0 - k * b * b) * rk))
            ek = float(np.dot(delta[k:0:-1], e[:k])) / k
            e[k] = ek
            if not math.isfinite(ek):
                return total, k, False, math.inf, math.inf
            last = abs(ek) * math.exp(log_pref - math.lgamma(a + k + shift))
            total += last if (k % 2 == 0) == (ek >= 0.0) else -last
            max_term = max(max_term, last)
            if last <= tol * max(1e-300, abs(total)):
                small += 1
                if small >= 2:
                    return total, k, True, last, max_term
            else:
                small = 0
    return total, k, False, last, max_term


def _mp_series(lam, b, v, tol, k_max, pdf, digits):
    with mpmath.workdps(digits):
        lam = [mpmath.mpf(float(x)) for x in lam]
        b = [mpmath.mpf(float(x)) for x in b]
        v = mpmath.mpf(float(v))
        shift = 0 if pdf else 1
        a = mpmath.mpf(len(lam)) / 2
        c0 = mpmath.exp(-mpmath.fsum(x * x for x in b) / 2)
        for x in lam:
            c0 /= mpmath.sqrt(2 * x)
        r = [v / (2 * x) for x in lam]
        rk = [mpmath.mpf(1)] * len(r)
        delta = [mpmath.mpf(0)]
        e = [mpmath.mpf(1)]
        # coefficient of e_k: c0 v^(a-1+shift) / Gamma(a+k+shift), updated by recurrence
        coef = c0 * v ** (a - 1 + shift) / mpmath.gamma(a + shift)
        total = coef
        last = abs(total)
        small = 0
        k = 0
        for k in range(1, k_max + 1):
            rk = [x * y for x, y in zip(rk, r)]
            delta.append(mpmath.fsum((1 - k * bi * bi) * x for bi, x in zip(b, rk)) / 2)
            ek = mpmath.fdot(delta[k:0:-1], e) / k
            e.append(ek)
            coef /= a + k - 1 + shift
            term = ek * coef
            total += -term if k % 2 else term
            last = abs(term)
            if last <= tol * max(mpmath.mpf(1e-300), abs(total)):
                small += 1
                if small >= 2:
                    return float(total), k, True, float(last)
            else:
                small = 0
        return float(total), k, False, float(last)


def _series(spec: QuadFormSpec, v: float, tol: float, k_max: int, pdf: bool) -> SeriesResult:
    lam = np.asarray(spec.lambdas, dtype=float)
    b = np.asarray(spec.b, dtype=float)
    if np.any(lam <= 0.0):
        raise QuadFormError("series needs all eigenvalues > 0")
    if v < 0.0:
        raise ValueError("v must be non-negative")
    n = lam.size
    if v == 0.0:
        if not pdf:
            return SeriesResult(0.0, 0, True, 0.0)
        if n == 1:
            return SeriesResult(math.inf, 0, True, 0.0)
        if n == 2:
            c0 = math.exp(-0.5 * float(b @ b)) / math.sqrt(float(np.prod(2.0 * lam)))
            return SeriesResult(min(c0, math.inf), 0, True, 0.0)
        return SeriesResult(0.0, 0, True, 0.0)

    total, k, conv, last, max_term = _float_series(lam, b, v, tol, k_max, pdf)
    eps = np.finfo(float).eps
    roundoff = max_term * eps * math.sqrt(k + 1)
    digits = 16
    if not conv or roundoff > max(ROUNDOFF_BUDGET, tol * abs(total)):
        lost = math.log10(max(max_term, 1.0)) if math.isfinite(max_term) else None
        if lost is None:
            # overflow in float: estimate the peak term from the dominant ratio
            lost = float(np.max(v / (2.0 * lam))) / math.log(10.0) + 5.0
        digits = int(min(MAX_DIGITS, 20 + lost + max(0.0, -math.log10(tol))))
        total, k, conv, last = _mp_series(lam, b, v, tol, k_max, pdf, digits)
    value = total if pdf else min(1.0, max(0.0, total))
    if pdf:
        value = max(0.0, value)
    return SeriesResult(float(value), int(k), bool(conv), float(last), digits)


def cdf_series(spec: QuadFormSpec, v: float, tol: float = DEFAULT_TOL,
               k_max: int = DEFAULT_KMAX) -> SeriesResult:
    """``P(Q <= v)``.  ``converged=False`` means the caller should fall back."""
    return _series(spec, float(v), tol, k_max, pdf=False)


def pdf_series(spec: QuadFormSpec, v: float, tol: float = DEFAULT_TOL,
               k_max: int = DEFAULT_KMAX) -> SeriesResult:
    return _series(spec, float(v), tol, k_max, pdf=True)


def cdf(A, mu, Sigma, v, tol: float = DEFAULT_TOL, k_max: int = DEFAULT_KMAX) -> float:
    """Convenience wrapper; raises :class:`NotConverged` instead of returning junk."""
    res = cdf_series(standardize(A, mu, Sigma), v, tol, k_max)
    if not res.converged:
        raise NotConverged(f"series did not converge after {res.terms_used} terms", res)
    return res.value


def cdf_series_many(lambdas: np.ndarray, b: np.ndarray, v: np.ndarray,
                    k_max: int = 400, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Float64 series for many forms at once.

    ``lambdas`` and ``b`` have shape ``(N, n)``, ``v`` shape ``(N,)``.  Returns
    ``(values, reliable)``; unreliable entries either did not converge within
    ``k_max`` terms or lost more than ``ROUNDOFF_BUDGET`` to cancellation.
    """
    lam = np.asarray(lambdas, dtype=float)
    b = np.asarray(b, dtype=float)
    v = np.asarray(v, dtype=float)
    N, n = lam.shape
    out = np.zeros(N)
    ok = np.ones(N, dtype=bool)
    pos = v > 0.0
    if not np.any(pos):
        return out, ok
    lam, b, vv = lam[pos], b[pos], v[pos]
    a = n / 2.0
    log_pref = (-0.5 * (b * b).sum(axis=1) - 0.5 * np.log(2.0 * lam).sum(axis=1)
                + a * np.log(vv))
    r = vv[:, None] / (2.0 * lam)
    m = lam.shape[0]
    delta = np.zeros((m, k_max + 1))
    e = np.zeros((m, k_max + 1))
    e[:, 0] = 1.0
    rk = np.ones_like(r)
    total = np.exp(log_pref - gammaln(a + 1.0))
    max_term = np.abs(total)
    small = np.zeros(m, dtype=int)
    active = np.ones(m, dtype=bool)
    k = 0
    # overflow only hits forms that are flagged unreliable below
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, k_max + 1):
            rk = rk * r
            delta[:, k] = 0.5 * ((1.0 - k * b * b) * rk).sum(axis=1)
            e[:, k] = np.einsum("ij,ij->i", delta[:, k:0:-1], e[:, :k]) / k
            mag = np.abs(e[:, k]) * np.exp(log_pref - gammaln(a + k + 1.0))
            term = np.where((k % 2 == 0) == (e[:, k] >= 0), mag, -mag)
            term = np.where(active, term, 0.0)
            total = total + term
            max_term = np.where(active, np.maximum(max_term, mag), max_term)
            tiny = mag <= tol * np.maximum(1e-300, np.abs(total))
            small = np.where(tiny, small + 1, 0)
            active &= small < 2
            if not np.any(active):
                break
    good = (~active) & np.isfinite(total)
    good &= max_term * np.finfo(float).eps * math.sqrt(k + 1) <= ROUNDOFF_BUDGET
    out[pos] = np.clip(np.nan_to_num(total), 0.0, 1.0)
    ok[pos] = good
    return out, ok


def chernoff_lower_tail(lambdas: np.ndarray, b: np.ndarray, v: np.ndarray,
                        grid: int = 48) -> np.ndarray:
    """Upper bound on ``P(Q <= v)`` from the Laplace transform of ``Q``.

    For every ``s > 0``, ``P(Q <= v) <= exp(s v) E[exp(-s Q)]`` and the
    expectation is closed-form for a standardised form.  The bound is
    minimised over a log-spaced grid of ``s``; any grid point gives a valid
    bound, so the grid only affects tightness.  Shapes as in
    :func:`cdf_series_many`.
    """
    lam = np.atleast_2d(np.asarray(lambdas, dtype=float))
    b2 = np.atleast_2d(np.asarray(b, dtype=float)) ** 2
    v = np.atleast_1d(np.asarray(v, dtype=float))
    lo = 1e-3 / lam.max(axis=1)
    hi = 1e8 / lam.min(axis=1)
    t = np.linspace(0.0, 1.0, grid)
    s = lo[:, None] * (hi / lo)[:, None] ** t  # (N, grid)
    sl = s[:, :, None] * lam[:, None, :]
    log_b = (s * v[:, None] - 0.5 * np.log1p(2.0 * sl).sum(-1)
             - (sl * b2[:, None, :] / (1.0 + 2.0 * sl)).sum(-1))
    return np.exp(np.minimum(log_b.min(axis=1), 0.0))


def chi_square_case(A, mu, Sigma, tol: float = 1e-9):
    """``(r, delta2)`` when ``x^T A x`` is noncentral chi-square, else ``None``."""
    A = _as_sym(A)
    S = _check_sigma(Sigma)
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    tr = float(np.trace(A @ S))
    r = round(tr)
    if r < 1 or abs(tr - r) > tol:
        return None
    normA = np.linalg.norm(A)
    if np.linalg.norm(A @ S @ A - A) > tol * normA:
        return None
    return int(r), float(mu @ A @ mu)


def noncentral_chi2_cdf(r: int, delta2: float, v: float, tail: float = 1e-12) -> float:
    """Poisson mixture of central chi-square CDFs."""
    if v <= 0.0:
        return 0.0
    if r < 1:
        raise ValueError("degrees of freedom must be >= 1")
    half = 0.5 * delta2
    if half == 0.0:
        return float(gammainc(0.5 * r, 0.5 * v))
    # sum outward from the Poisson mode so the weights never underflow to zero early
    mode = int(math.floor(half))
    log_half = math.log(half)
    log_w_mode = -half + mode * log_half - math.lgamma(mode + 1)
    total = 0.0
    j = mode
    log_w = log_w_mode
    while True:
        w = math.exp(log_w)
        total += w * gammainc(0.5 * r + j, 0.5 * v)
        j += 1
        log_w += log_half - math.log(j)
        # above the mode the weights fall at least geometrically with ratio half / (j + 1)
        ratio = half / (j + 1)
        if math.exp(log_w) / (1.0 - ratio) < tail:
            break
    j = mode - 1
    log_w = log_w_mode
    while j >= 0:
        log_w += math.log(j + 1) - log_half
        w = math.exp(log_w)
        total += w * gammainc(0.5 * r + j, 0.5 * v)
        # below the mode the weights fall with ratio at most j / half < 1
        q = j / half
        if w * q / (1.0 - q) < tail:
            break
        j -= 1
    return float(min(1.0, max(0.0, total)))
