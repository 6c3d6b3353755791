"""Independent oracles used by the unit and acceptance tests.

Everything here re-derives expected values from first principles with
explicit 2x2 matrices and must not import package internals beyond plain
data containers.
"""

import numpy as np


def rot(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s], [s, c]])


PERP = np.array([[0.0, -1.0], [1.0, 0.0]])


def oracle_wheel_velocity(theta, theta_mu, v, omega, wheel_pos):
    """Rotation-composition oracle: R'^-1 R^-1 (v + omega x R p)."""
    R, Rp = rot(theta), rot(theta_mu)
    v_world = np.asarray(v, float) + omega * (PERP @ (R @ np.asarray(wheel_pos, float)))
    return np.linalg.inv(Rp) @ (np.linalg.inv(R) @ v_world)


def oracle_wheel_friction(theta, theta_mu, v, omega, wheel_pos, mu_x, mu_y):
    """Dissipative anisotropic viscous force, world frame."""
    vw = oracle_wheel_velocity(theta, theta_mu, v, omega, wheel_pos)
    return -(rot(theta) @ rot(theta_mu) @ np.diag([mu_x, mu_y]) @ vw)


def oracle_wrench(theta, v, omega, com, wheels, grasp_point, force):
    """Force-balance oracle: net force and torque about the COM.

    wheels: iterable of (object-frame position, theta_mu, mu_x, mu_y).
    grasp_point object frame, force world frame.
    """
    R = rot(theta)
    com = np.asarray(com, float)
    force = np.asarray(force, float)
    lever = R @ (np.asarray(grasp_point, float) - com)
    total = force.copy()
    torque = lever[0] * force[1] - lever[1] * force[0]
    for pos, th_mu, mu_x, mu_y in wheels:
        rel = np.asarray(pos, float) - com
        fw = oracle_wheel_friction(theta, th_mu, v, omega, rel, mu_x, mu_y)
        r = R @ rel
        total += fw
        torque += r[0] * fw[1] - r[1] * fw[0]
    return total, torque


def oracle_kkt_enumerate(P, q, A_eq, b_eq, A_in, b_in):
    """Tiny-QP oracle: try every active set of the inequalities, solve the
    equality KKT system, keep the best primal-dual feasible candidate.

    Only viable for a handful of inequality rows.
    """
    n = P.shape[0]
    m_in = len(b_in)
    best = None
    from itertools import combinations

    for k in range(m_in + 1):
        for active in combinations(range(m_in), k):
            A_act = np.vstack([A_eq] + [A_in[list(active)]]) if k else A_eq.copy()
            b_act = np.concatenate([b_eq] + [b_in[list(active)]]) if k else b_eq.copy()
            na = len(b_act)
            K = np.zeros((n + na, n + na))
            K[:n, :n] = P
            K[:n, n:] = A_act.T
            K[n:, :n] = A_act
            rhs = np.concatenate([-q, b_act])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            z, lam = sol[:n], sol[n:]
            if np.any(A_in @ z > b_in + 1e-8):
                continue
            # inequality multipliers must be nonnegative
            if k and np.any(lam[len(b_eq):] < -1e-8):
                continue
            obj = 0.5 * z @ P @ z + q @ z
            if best is None or obj < best[0] - 1e-12:
                best = (obj, z)
    return best


def riccati_gains(A_seq, B_seq, Q, R, QT):
    """Backward discrete Riccati recursion -> list of gains K_h."""
    P = QT.copy()
    gains = []
    for A, B in zip(reversed(A_seq), reversed(B_seq)):
        K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P = Q + A.T @ P @ (A - B @ K)
        gains.append(K)
    gains.reverse()
    return gains
