"""Monte Carlo estimate of the collision probability between two uncertain ellipsoids.

The robot and obstacle centers are independent Gaussians, so the offset
``y = c - b`` is Gaussian with mean ``mu_c - mu_b`` and covariance
``Sigma_b + Sigma_c``.  Sampling ``y`` directly is therefore the same
experiment as perturbing both centers.  Each sample is classified with the
exact overlap test, which re-derives the contact eigenvalue for that sample.

Random numbers come from Philox keyed by the seed, with the chunk index in the
high counter word.  Chunks are independent streams, so estimates over disjoint
chunk ranges combine into the estimate over their union.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Ellipsoid, PairGeometry

CHUNK = 1 << 16
MAX_INDETERMINATE = 1e-4


class OracleDegenerate(RuntimeError):
    pass


@dataclass(frozen=True)
class McEstimate:
    probability: float
    stderr: float
    samples: int
    seed: int
    hits: int = 0

    @staticmethod
    def from_hits(hits: int, samples: int, seed: int) -> McEstimate:
        p = hits / samples
        return McEstimate(p, math.sqrt(p * (1.0 - p) / samples), samples, seed, hits)

    def combine(self, other: McEstimate) -> McEstimate:
        return McEstimate.from_hits(self.hits + other.hits, self.samples + other.samples, self.seed)


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    bits = np.random.Philox(key=seed & 0xFFFFFFFFFFFFFFFF, counter=[0, 0, 0, chunk])
    return np.random.Generator(bits)


def _cov_factor(S: np.ndarray) -> np.ndarray:
    """``L`` with ``L L^T = S`` for a PSD matrix (eigen factor, tolerates singular S)."""
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    if w.min() < -1e-12 * max(1.0, abs(w.max())):
        raise ValueError("covariance is not positive semi-definite")
    return V * np.sqrt(np.maximum(w, 0.0))


def relative_gaussian(robot: Ellipsoid, obstacle: Ellipsoid, sigma_robot, sigma_obstacle):
    n = robot.dim
    Sr = np.zeros((n, n)) if sigma_robot is None else np.asarray(sigma_robot, dtype=float)
    So = np.zeros((n, n)) if sigma_obstacle is None else np.asarray(sigma_obstacle, dtype=float)
    return obstacle.center - robot.center, Sr + So


def count_hits(pair: PairGeometry, mean: np.ndarray, factor: np.ndarray, z: np.ndarray):
    """Collisions among offsets ``mean + z factor^T``; returns (hits, indeterminate)."""
    y = mean + z @ factor.T
    hit, det = pair.intersects(y)
    return int(np.count_nonzero(hit & det)), int(np.count_nonzero(~det))


def mc_collision_probability(robot: Ellipsoid, obstacle: Ellipsoid, sigma_robot=None,
                             sigma_obstacle=None, samples: int = 1_000_000, seed: int = 0,
                             chunk_offset: int = 0, min_samples: int = 10_000) -> McEstimate:
    """Fraction of sampled configurations in which the two ellipsoids overlap.

    ``samples`` are drawn in chunks of ``CHUNK`` starting at chunk index
    ``chunk_offset``.
    """
    if samples < min_samples:
        raise ValueError(f"need at least {min_samples} samples")
    mean, S = relative_gaussian(robot, obstacle, sigma_robot, sigma_obstacle)
    factor = _cov_factor(S)
    pair = PairGeometry(robot.shape, obstacle.shape)
    hits = 0
    bad = 0
    done = 0
    chunk = chunk_offset
    if not np.any(factor):
        hit, det = pair.intersects(mean[None, :])
        if not det[0]:
            raise OracleDegenerate("deterministic configuration is indeterminate")
        return McEstimate.from_hits(samples if hit[0] else 0, samples, seed)
    while done < samples:
        m = min(CHUNK, samples - done)
        z = chunk_rng(seed, chunk).standard_normal((m, robot.dim))
        h, b = count_hits(pair, mean, factor, z)
        hits += h
        bad += b
        done += m
        chunk += 1
    if bad > MAX_INDETERMINATE * samples:
        raise OracleDegenerate(f"{bad} of {samples} samples were indeterminate")
    return McEstimate.from_hits(hits, samples, seed)


def mc_quadform_probability(A, mu, Sigma, threshold, samples: int = 1_000_000, seed: int = 0):
    """Monte Carlo ``P(y^T A y <= threshold)`` for ``y ~ N(mu, Sigma)``."""
    A = np.asarray(A, dtype=float)
    mu = np.asarray(mu, dtype=float)
    factor = _cov_factor(np.asarray(Sigma, dtype=float))
    hits = 0
    done = 0
    chunk = 0
    while done < samples:
        m = min(CHUNK, samples - done)
        y = mu + chunk_rng(seed, chunk).standard_normal((m, mu.size)) @ factor.T
        hits += int(np.count_nonzero(np.einsum("ij,jk,ik->i", y, A, y) <= threshold))
        done += m
        chunk += 1
    return McEstimate.from_hits(hits, samples, seed)


def mc_standardized_cdf(lambdas, b, v, z) -> np.ndarray:
    """``P(sum_i lambda_i (u_i + b_i)^2 <= v)`` for many forms from shared draws ``z``.

    ``lambdas`` and ``b`` have shape ``(E, n)``, ``v`` shape ``(E,)`` and ``z``
    shape ``(M, n)``.  Reusing one set of draws makes the estimates smooth in
    the form parameters, which a sampling optimizer relies on.
    """
    lam = np.asarray(lambdas, dtype=float)
    b = np.asarray(b, dtype=float)
    q = (lam[:, None, :] * (z[None, :, :] + b[:, None, :]) ** 2).sum(-1)
    return (q <= np.asarray(v, dtype=float)[:, None]).mean(axis=1)
