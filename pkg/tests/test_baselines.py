import math

import numpy as np
import pytest
from conftest import random_rotation

from ellrisk.assess import AssessOptions, CollisionQuery, assess
from ellrisk.baselines import bounding_volume_check, center_point_probability, inflate
from ellrisk.geometry import make_ellipsoid
from ellrisk.quadform import SingularSigma
from ellrisk.riskbounds import RiskMethod


class TestInflate:
    def test_isotropic(self):
        r = make_ellipsoid([0.2, 0.3, 0.4])
        big = inflate(r, 0.01 * np.eye(3), 3.0)
        np.testing.assert_allclose(big.semi_axes()[0], [0.5, 0.6, 0.7])

    def test_aligned_covariance(self, rng):
        R = random_rotation(rng, 3)
        r = make_ellipsoid([0.2, 0.3, 0.4], R)
        S = (R * np.array([0.01, 0.04, 0.09])) @ R.T
        big = inflate(r, S, 2.0)
        np.testing.assert_allclose(big.semi_axes()[0], [0.4, 0.7, 1.0])

    def test_bad_n_sigma(self):
        with pytest.raises(ValueError):
            inflate(make_ellipsoid([1, 1, 1]), np.eye(3), 0.0)


class TestBoundingVolume:
    def test_zero_cov_equals_intersects(self):
        r = make_ellipsoid([1, 1, 1])
        assert bounding_volume_check(r, r.translated([2.5, 0, 0]), np.zeros((3, 3))) == 0.0
        assert bounding_volume_check(r, r.translated([1.5, 0, 0]), np.zeros((3, 3))) == 1.0

    def test_margin(self):
        # gap of 0.5 is closed by 3 sigma once sigma > 1/6
        r = make_ellipsoid([1, 1, 1])
        o = r.translated([2.5, 0, 0])
        assert bounding_volume_check(r, o, 0.15**2 * np.eye(3)) == 0.0
        assert bounding_volume_check(r, o, 0.18**2 * np.eye(3)) == 1.0


class TestCenterPoint:
    def test_formula(self):
        r = make_ellipsoid([0.1, 0.1, 0.1])
        o = make_ellipsoid([1, 1, 1], center=[1.0, 0, 0])
        S = 0.25 * np.eye(3)
        vol = 4 / 3 * math.pi * 0.1**3
        dens = (2 * math.pi * 0.25) ** -1.5 * math.exp(-0.5 * 1.0 / 0.25)
        assert center_point_probability(r, o, S) == pytest.approx(vol * dens)

    def test_singular(self):
        r = make_ellipsoid([1, 1, 1])
        with pytest.raises(SingularSigma):
            center_point_probability(r, r.translated([3, 0, 0]), np.zeros((3, 3)))


class TestAssess:
    def setup_method(self):
        self.q = CollisionQuery(make_ellipsoid([0.3, 0.3, 0.3]),
                                make_ellipsoid([1, 1, 1], center=[1.8, 0.3, 0]),
                                0.05 * np.eye(3), 0.02 * np.eye(3))

    def test_all_methods_consistent(self):
        opts = AssessOptions(mc_samples=100_000)
        out = {m: assess(self.q, m, 0.05, opts) for m in RiskMethod if m is not RiskMethod.CHI2}
        for r in out.values():
            assert r.feasible == (r.probability <= 0.05)
            assert r.compute_time >= 0.0
        assert out[RiskMethod.UPPER_BOUND].probability >= out[RiskMethod.EXACT].probability

    def test_exact_degenerate_is_deterministic(self):
        q = CollisionQuery(self.q.robot, self.q.obstacle)
        r = assess(q, RiskMethod.EXACT)
        assert r.probability == 0.0 and r.detail["deterministic"]

    def test_chi2_requires_special_structure(self):
        with pytest.raises(ValueError):
            assess(self.q, RiskMethod.CHI2)

    def test_offset_and_sigma(self):
        np.testing.assert_allclose(self.q.offset, [1.8, 0.3, 0.0])
        np.testing.assert_allclose(self.q.sigma, 0.07 * np.eye(3))
