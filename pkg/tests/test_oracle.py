import math

import numpy as np
import pytest

from ellrisk.geometry import make_ellipsoid
from ellrisk.oracle import (
    CHUNK,
    McEstimate,
    chunk_rng,
    mc_collision_probability,
    mc_quadform_probability,
    mc_standardized_cdf,
)
from ellrisk.quadform import QuadFormSpec, cdf_series


def test_chunk_streams_are_reproducible_and_distinct():
    a = chunk_rng(7, 3).standard_normal(5)
    np.testing.assert_array_equal(a, chunk_rng(7, 3).standard_normal(5))
    assert not np.array_equal(a, chunk_rng(7, 4).standard_normal(5))
    assert not np.array_equal(a, chunk_rng(8, 3).standard_normal(5))


def test_estimate_stderr():
    est = McEstimate.from_hits(250, 1000, 0)
    assert est.probability == 0.25
    assert est.stderr == pytest.approx(math.sqrt(0.25 * 0.75 / 1000))
    both = est.combine(McEstimate.from_hits(750, 1000, 0))
    assert both.probability == 0.5 and both.samples == 2000


def test_spheres_isotropic_offset():
    # unit spheres collide iff |y| <= 2; y ~ N(0, I) gives a chi-square(3) CDF at 4
    from scipy.stats import chi2

    r = make_ellipsoid([1, 1, 1], center=[0, 0, 0])
    o = make_ellipsoid([1, 1, 1], center=[1e-9, 0, 0])
    est = mc_collision_probability(r, o, np.eye(3), None, 200_000, seed=1)
    assert abs(est.probability - chi2.cdf(4.0, 3)) <= 4 * est.stderr


def test_deterministic_configuration():
    r = make_ellipsoid([1, 1, 1])
    far = make_ellipsoid([1, 1, 1], center=[5, 0, 0])
    near = make_ellipsoid([1, 1, 1], center=[1.5, 0, 0])
    assert mc_collision_probability(r, far, None, None, 10_000).probability == 0.0
    est = mc_collision_probability(r, near, None, None, 10_000)
    assert est.probability == 1.0 and est.stderr == 0.0


def test_seed_reproducible_and_sample_count_respected():
    r = make_ellipsoid([0.3, 0.3, 0.3])
    o = make_ellipsoid([1, 1, 1], center=[1.2, 0.2, 0])
    a = mc_collision_probability(r, o, 0.1 * np.eye(3), None, CHUNK + 123, seed=5)
    b = mc_collision_probability(r, o, 0.1 * np.eye(3), None, CHUNK + 123, seed=5)
    assert a == b and a.samples == CHUNK + 123


def test_too_few_samples():
    r = make_ellipsoid([1, 1, 1])
    with pytest.raises(ValueError):
        mc_collision_probability(r, r.translated([3, 0, 0]), np.eye(3), None, 100)


def test_quadform_mc_matches_series():
    A = np.diag([2.0, 1.0, 0.5])
    mu = np.array([0.3, -0.4, 1.0])
    est = mc_quadform_probability(A, mu, np.eye(3), 2.0, 200_000, seed=2)
    ref = cdf_series(QuadFormSpec(np.array([2.0, 1.0, 0.5]), mu), 2.0).value
    assert abs(est.probability - ref) <= 4 * est.stderr


def test_standardized_shared_draws():
    z = np.random.default_rng(0).standard_normal((100_000, 3))
    lam = np.array([[2.0, 1.0, 0.5], [1.0, 1.0, 1.0]])
    b = np.array([[0.3, -0.4, 1.0], [0.0, 0.0, 0.0]])
    v = np.array([2.0, 3.0])
    p = mc_standardized_cdf(lam, b, v, z)
    for i in range(2):
        ref = cdf_series(QuadFormSpec(lam[i], b[i]), v[i]).value
        assert abs(p[i] - ref) <= 4 * math.sqrt(ref * (1 - ref) / z.shape[0])
