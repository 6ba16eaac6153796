import numpy as np
import pytest
from conftest import random_spd
from hypothesis import given
from hypothesis import strategies as st
from kalman_oracle import kalman_step, random_linear_system

from ellrisk.belief import (
    GaussianBelief,
    ModelPair,
    NonFiniteDynamics,
    SingularInnovationCovariance,
    ekf_predict,
    ekf_update,
    innovation_covariance,
    kalman_gain,
    linear_model,
    point_mass_model,
    propagate_ml,
    sample_belief_transition,
)


class TestBelief:
    def test_vector_is_column_major(self):
        b = GaussianBelief([1.0, 2.0], [[1.0, 0.5], [0.5, 2.0]])
        np.testing.assert_array_equal(b.vector(), [1, 2, 1, 0.5, 0.5, 2])

    @given(st.integers(0, 2**32 - 1))
    def test_vector_roundtrip(self, seed):
        rng = np.random.default_rng(seed)
        b = GaussianBelief(rng.standard_normal(3), random_spd(rng, 3))
        back = GaussianBelief.from_vector(b.vector(), 3)
        np.testing.assert_array_equal(back.mean, b.mean)
        np.testing.assert_allclose(back.cov, b.cov, atol=1e-15)

    def test_validation(self):
        with pytest.raises(ValueError):
            GaussianBelief([0, 0], np.eye(3))
        with pytest.raises(ValueError):
            GaussianBelief([0, 0], -np.eye(2))
        with pytest.raises(NonFiniteDynamics):
            GaussianBelief([np.nan, 0], np.eye(2))

    def test_immutable(self):
        b = GaussianBelief([0.0], [[1.0]])
        with pytest.raises(ValueError):
            b.mean[0] = 3.0


class TestLinearFilter:
    def test_matches_textbook_kalman(self, rng):
        for _ in range(10):
            n, m, p = rng.integers(1, 5), rng.integers(1, 3), rng.integers(1, 4)
            Fm, Gm, Hm, R, Q = random_linear_system(rng, n, m, p)
            model = linear_model(Fm, Gm, Hm, R, Q)
            b = GaussianBelief(rng.standard_normal(n), random_spd(rng, n))
            mean, P = b.mean.copy(), b.cov.copy()
            for _ in range(15):
                u, z = rng.standard_normal(m), rng.standard_normal(p)
                mean, P, _, _, _ = kalman_step(mean, P, u, z, Fm, Gm, Hm, R, Q)
                b = ekf_update(ekf_predict(b, u, model), z, model)
                np.testing.assert_allclose(b.mean, mean, rtol=1e-10, atol=1e-12)
                np.testing.assert_allclose(b.cov, P, rtol=1e-10, atol=1e-12)

    def test_ml_update_keeps_predicted_mean(self, rng):
        model = point_mass_model()
        b = GaussianBelief([0.0, 1.0, 2.0], 0.01 * np.eye(3))
        nxt = propagate_ml(b, [1.0, 0.0, 0.0], model)
        np.testing.assert_allclose(nxt.mean, [0.1, 1.0, 2.0])
        # scalar Riccati step: (P + R) Q / (P + R + Q)
        P = 0.01 + 2.5e-5
        np.testing.assert_allclose(np.diag(nxt.cov), P * 0.05 / (P + 0.05))

    def test_steady_state_point_mass(self):
        # fixed point of P = (P + R) Q / (P + R + Q)
        model = point_mass_model(process_noise=2.5e-5, measurement_noise=0.05)
        b = GaussianBelief(np.zeros(3), np.eye(3))
        for _ in range(3000):
            b = propagate_ml(b, np.zeros(3), model)
        R, Q = 2.5e-5, 0.05
        P = (-R + np.sqrt(R * R + 4 * R * Q)) / 2
        np.testing.assert_allclose(np.diag(b.cov), P, rtol=1e-9)

    def test_innovation_covariance_matches_sampling(self, rng):
        Fm, Gm, Hm, R, Q = random_linear_system(rng, 3, 2, 2)
        model = linear_model(Fm, Gm, Hm, R, Q)
        pred = ekf_predict(GaussianBelief(rng.standard_normal(3), random_spd(rng, 3)),
                           np.zeros(2), model)
        S = innovation_covariance(pred, model)
        N = 200_000
        x = rng.multivariate_normal(pred.mean, pred.cov, N)
        z = x @ Hm.T + rng.multivariate_normal(np.zeros(2), Q, N)
        Shat = np.cov((z - Hm @ pred.mean).T)
        se = np.sqrt((S**2 + np.outer(np.diag(S), np.diag(S))) / N)
        assert np.all(np.abs(Shat - S) <= 4 * se)

    def test_singular_innovation(self):
        model = linear_model(np.eye(2), np.eye(2), np.eye(2), np.zeros((2, 2)), np.zeros((2, 2)))
        pred = GaussianBelief(np.zeros(2), np.diag([1.0, 0.0]))
        with pytest.raises(SingularInnovationCovariance):
            kalman_gain(pred, model)


class TestNonlinear:
    def make_model(self):
        # range-free planar model: heading-driven motion, polar-like observation
        def f(x, u):
            return np.array([x[0] + u[0] * np.cos(x[2]), x[1] + u[0] * np.sin(x[2]), x[2] + u[1]])

        def F(x, u):
            return np.array([[1, 0, -u[0] * np.sin(x[2])], [0, 1, u[0] * np.cos(x[2])],
                             [0, 0, 1]])

        def h(x):
            return np.array([np.hypot(x[0], x[1]), x[2]])

        def H(x):
            r = np.hypot(x[0], x[1])
            return np.array([[x[0] / r, x[1] / r, 0.0], [0, 0, 1]])

        return ModelPair(f, F, 0.01 * np.eye(3), h, H, 0.02 * np.eye(2))

    def test_jacobian_consistency(self, rng):
        model = self.make_model()
        x, u = np.array([1.0, 2.0, 0.3]), np.array([0.5, 0.1])
        eps = 1e-6
        J = np.column_stack([(model.f(x + eps * e, u) - model.f(x - eps * e, u)) / (2 * eps)
                             for e in np.eye(3)])
        np.testing.assert_allclose(model.F(x, u), J, atol=1e-8)
        X = rng.standard_normal((4, 3))
        U = rng.standard_normal((4, 2))
        np.testing.assert_allclose(model.f_batch(X, U), [model.f(a, c) for a, c in zip(X, U)])

    def test_update_shrinks_uncertainty(self):
        model = self.make_model()
        b = GaussianBelief([1.0, 2.0, 0.3], 0.1 * np.eye(3))
        nxt = propagate_ml(b, [0.5, 0.1], model)
        assert np.trace(nxt.cov) < np.trace(ekf_predict(b, [0.5, 0.1], model).cov)

    def test_non_finite_motion(self):
        model = ModelPair(lambda x, u: x * np.inf, lambda x, u: np.eye(1), np.eye(1),
                          lambda x: x, lambda x: np.eye(1), np.eye(1))
        with pytest.raises(NonFiniteDynamics):
            ekf_predict(GaussianBelief([1.0], [[1.0]]), [0.0], model)


class TestStochasticTransition:
    def test_mean_spread_matches_gain(self, rng):
        model = point_mass_model(measurement_noise=0.05)
        b = GaussianBelief(np.zeros(3), 0.02 * np.eye(3))
        u = np.array([1.0, 0.0, 0.0])
        pred = ekf_predict(b, u, model)
        K = kalman_gain(pred, model)
        S = innovation_covariance(pred, model)
        expected = K @ S @ K.T
        means = np.array([sample_belief_transition(b, u, model, s).mean for s in range(4000)])
        cov = np.cov(means.T)
        se = np.sqrt((expected**2 + np.outer(np.diag(expected), np.diag(expected))) / 4000)
        assert np.all(np.abs(cov - expected) <= 4 * se + 1e-15)
        np.testing.assert_allclose(means.mean(axis=0), pred.mean, atol=4 * np.sqrt(
            np.diag(expected).max() / 4000))

    def test_seeded(self):
        model = point_mass_model()
        b = GaussianBelief(np.zeros(3), 0.02 * np.eye(3))
        a = sample_belief_transition(b, np.zeros(3), model, 9)
        c = sample_belief_transition(b, np.zeros(3), model, 9)
        np.testing.assert_array_equal(a.mean, c.mean)
