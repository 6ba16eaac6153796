"""Textbook Kalman filter written independently of the package, used as an oracle."""

import numpy as np


def random_linear_system(rng: np.random.Generator, n: int, m: int, p: int):
    Fm = np.eye(n) + 0.2 * rng.standard_normal((n, n))
    Gm = rng.standard_normal((n, m))
    Hm = rng.standard_normal((p, n))
    Lr = 0.3 * rng.standard_normal((n, n))
    Lq = 0.3 * rng.standard_normal((p, p))
    R = Lr @ Lr.T + 0.01 * np.eye(n)
    Q = Lq @ Lq.T + 0.05 * np.eye(p)
    return Fm, Gm, Hm, R, Q


def kalman_step(mean, P, u, z, Fm, Gm, Hm, R, Q):
    m_pred = Fm @ mean + Gm @ u
    P_pred = Fm @ P @ Fm.T + R
    S = Hm @ P_pred @ Hm.T + Q
    K = P_pred @ Hm.T @ np.linalg.inv(S)
    m_new = m_pred + K @ (z - Hm @ m_pred)
    P_new = (np.eye(len(mean)) - K @ Hm) @ P_pred
    return m_new, 0.5 * (P_new + P_new.T), m_pred, P_pred, S
