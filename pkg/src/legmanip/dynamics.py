"""Planar rigid-body dynamics of wheeled legged objects.

Three parameterizations of one family: a single anisotropic-friction wheel
coincident with the center of mass (Model 1), two wheels on a shaft fixed in
the object frame (Model 2), and a massless quasi-static variant balancing the
applied force against viscous friction (Model 3). The robot interacts with
the object purely through a force applied at one leg; wheel friction is
viscous and anisotropic in the wheel frame, with the dissipative sign

    F_wheel = -R(theta) R'(theta_mu) diag(mu_x, mu_y) v_wheel

so that kinetic energy is non-increasing under zero input (for dt below the
explicit-friction stability bound, roughly dt < 2*min(m, inertia/r^2)/mu).

State convention: (x, y, theta) is the pose of the tracked object frame and
(vx, vy, omega) its world-frame velocity. Newton/Euler are applied at this
point; (x_c, y_c) enters through lever arms (taken about the center of mass)
and wheel placement only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import J, cross2, rot2, wrap_angle

STATE_DIM = 6


@dataclass
class ObjectState:
    """Planar pose and world-frame velocity of the object."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        self.theta = float(wrap_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.vx, self.vy, self.omega])

    @classmethod
    def from_array(cls, arr) -> "ObjectState":
        x, y, theta, vx, vy, omega = (float(v) for v in arr)
        return cls(x, y, theta, vx, vy, omega)

    def pose(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def lin_vel(self) -> np.ndarray:
        return np.array([self.vx, self.vy])


@dataclass
class AppliedWrench:
    """World-frame force applied at a leg given in object-frame coordinates."""

    fx: float = 0.0
    fy: float = 0.0
    grasp_point: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.fx = float(self.fx)
        self.fy = float(self.fy)

    def force(self) -> np.ndarray:
        return np.array([self.fx, self.fy])


@dataclass
class ParamsModel1:
    """Point mass on one wheel at the COM: <m, I, x_c, y_c, mu_x, mu_y, theta_mu>."""

    m: float
    inertia: float
    xc: float
    yc: float
    mu_x: float
    mu_y: float
    theta_mu: float

    def __post_init__(self):
        _require_positive(m=self.m, inertia=self.inertia)
        _require_nonnegative(mu_x=self.mu_x, mu_y=self.mu_y)


@dataclass
class ParamsModel2:
    """Two wheels on a shaft: wheel i at (x_s +/- b, y_s), orientation fixed
    to the object frame (theta' = 0)."""

    m: float
    inertia: float
    xc: float
    yc: float
    mu_xr: float
    mu_yr: float
    mu_xl: float
    mu_yl: float
    xs: float
    ys: float
    b: float

    def __post_init__(self):
        _require_positive(m=self.m, inertia=self.inertia)
        _require_nonnegative(
            mu_xr=self.mu_xr, mu_yr=self.mu_yr, mu_xl=self.mu_xl, mu_yl=self.mu_yl, b=self.b
        )


@dataclass
class ParamsModel3:
    """Quasi-static friction-only model: <x_c, y_c, mu_x, mu_y, mu_theta, theta_mu>.

    No mass terms; velocities follow from the instantaneous force balance."""

    xc: float
    yc: float
    mu_x: float
    mu_y: float
    mu_theta: float
    theta_mu: float

    def __post_init__(self):
        _require_positive(mu_x=self.mu_x, mu_y=self.mu_y, mu_theta=self.mu_theta)


Params = ParamsModel1 | ParamsModel2 | ParamsModel3


@dataclass
class DynamicsParams:
    """A candidate model plus the process-noise scale sigma (per state dim)."""

    model: Params
    sigma: np.ndarray = field(default_factory=lambda: np.zeros(STATE_DIM))

    def __post_init__(self):
        self.sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), (STATE_DIM,)).copy()
        if np.any(self.sigma < 0):
            raise ValueError("sigma must be nonnegative")

    @property
    def model_kind(self) -> int:
        return {ParamsModel1: 1, ParamsModel2: 2, ParamsModel3: 3}[type(self.model)]


def _require_positive(**kv):
    for name, val in kv.items():
        if not val > 0:
            raise ValueError(f"{name} must be positive, got {val}")


def _require_nonnegative(**kv):
    for name, val in kv.items():
        if val < 0:
            raise ValueError(f"{name} must be nonnegative, got {val}")


def _wheels(model: Params) -> list[tuple[np.ndarray, float, float, float]]:
    """Wheel set as (position relative to the COM, theta_mu, mu_x, mu_y)."""
    if isinstance(model, ParamsModel1):
        # the single wheel sits at the COM, zero lever arm
        return [(np.zeros(2), model.theta_mu, model.mu_x, model.mu_y)]
    if isinstance(model, ParamsModel2):
        c = np.array([model.xc, model.yc])
        right = np.array([model.xs + model.b, model.ys]) - c
        left = np.array([model.xs - model.b, model.ys]) - c
        return [(right, 0.0, model.mu_xr, model.mu_yr), (left, 0.0, model.mu_xl, model.mu_yl)]
    raise ValueError("Model 3 has no wheel mass dynamics; use step() directly")


def wheel_velocity(state: ObjectState, wheel_pos, theta_mu: float) -> np.ndarray:
    """Velocity of a wheel contact in the wheel frame.

    wheel_pos is the object-frame offset of the wheel from the point whose
    velocity the state carries (the COM for lever-arm purposes):
    v_w = R'^-1 R^-1 ([vx, vy] + omega x R wheel_pos).
    """
    R = rot2(state.theta)
    Rp = rot2(theta_mu)
    v_world = state.lin_vel() + state.omega * (J @ (R @ np.asarray(wheel_pos, dtype=float)))
    return Rp.T @ (R.T @ v_world)


def wheel_friction_force(
    state: ObjectState, wheel_pos, theta_mu: float, mu_x: float, mu_y: float
) -> np.ndarray:
    """World-frame anisotropic viscous friction force at one wheel."""
    v_w = wheel_velocity(state, wheel_pos, theta_mu)
    R = rot2(state.theta)
    Rp = rot2(theta_mu)
    return -(R @ (Rp @ (np.array([mu_x, mu_y]) * v_w)))


def total_wrench(
    state: ObjectState, params: DynamicsParams, inp: AppliedWrench
) -> tuple[np.ndarray, float]:
    """Net world-frame force and torque about the COM (Models 1 and 2)."""
    model = params.model
    if isinstance(model, ParamsModel3):
        raise ValueError("total_wrench is undefined for the quasi-static model")
    R = rot2(state.theta)
    c = np.array([model.xc, model.yc])
    force = inp.force()
    lever = R @ (np.asarray(inp.grasp_point, dtype=float) - c)
    torque = cross2(lever, force)
    total = force.copy()
    for rel, th_mu, mu_x, mu_y in _wheels(model):
        fw = wheel_friction_force(state, rel, th_mu, mu_x, mu_y)
        total += fw
        torque += cross2(R @ rel, fw)
    return total, torque


def step(
    state: ObjectState,
    params: DynamicsParams,
    inp: AppliedWrench,
    dt: float,
    noise_seed: int | None = None,
) -> ObjectState:
    """One discrete transition x_{i+1} = f(x_i, u_i, dt) (+ Gaussian noise).

    Models 1/2 use semi-implicit Euler (velocities first, then pose); Model 3
    sets velocities directly from the quasi-static force balance. Passing
    noise_seed draws one zero-mean Gaussian per state dimension with std
    params.sigma.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    model = params.model
    if isinstance(model, ParamsModel3):
        R = rot2(state.theta)
        Rp = rot2(model.theta_mu)
        force = inp.force()
        v_wheel = np.array([1.0 / model.mu_x, 1.0 / model.mu_y]) * (Rp.T @ (R.T @ force))
        vel = R @ (Rp @ v_wheel)
        lever = R @ (np.asarray(inp.grasp_point, dtype=float) - np.array([model.xc, model.yc]))
        omega = cross2(lever, force) / model.mu_theta
        vx, vy = vel
    else:
        force, torque = total_wrench(state, params, inp)
        vx = state.vx + dt * force[0] / model.m
        vy = state.vy + dt * force[1] / model.m
        omega = state.omega + dt * torque / model.inertia
    nxt = np.array(
        [
            state.x + dt * vx,
            state.y + dt * vy,
            state.theta + dt * omega,
            vx,
            vy,
            omega,
        ]
    )
    if noise_seed is not None:
        rng = np.random.default_rng(noise_seed)
        nxt += rng.normal(0.0, 1.0, STATE_DIM) * params.sigma
    nxt[2] = wrap_angle(nxt[2])
    return ObjectState.from_array(nxt)


def step_batch(
    states: np.ndarray,
    params: DynamicsParams,
    forces: np.ndarray,
    grasp_points: np.ndarray,
    dts: np.ndarray,
) -> np.ndarray:
    """Vectorized deterministic step over N rows.

    states (N,6), forces (N,2) world frame, grasp_points (N,2) object frame,
    dts (N,). Matches step() row for row; this is the likelihood fast path,
    so keep the two in lockstep (tested).
    """
    states = np.asarray(states, dtype=float)
    forces = np.asarray(forces, dtype=float)
    grasp_points = np.asarray(grasp_points, dtype=float)
    dts = np.asarray(dts, dtype=float)
    x, y, theta, vx, vy, omega = states.T
    fx, fy = forces.T
    ct, st = np.cos(theta), np.sin(theta)
    model = params.model

    def to_body(ax, ay):  # R^T v
        return ct * ax + st * ay, -st * ax + ct * ay

    def to_world(ax, ay):  # R v
        return ct * ax - st * ay, st * ax + ct * ay

    if isinstance(model, ParamsModel3):
        Q = rot2(model.theta_mu) @ np.diag([1.0 / model.mu_x, 1.0 / model.mu_y]) @ rot2(model.theta_mu).T
        bx, by = to_body(fx, fy)
        qx, qy = Q[0, 0] * bx + Q[0, 1] * by, Q[1, 0] * bx + Q[1, 1] * by
        nvx, nvy = to_world(qx, qy)
        gx, gy = grasp_points[:, 0] - model.xc, grasp_points[:, 1] - model.yc
        lx, ly = to_world(gx, gy)
        nomega = (lx * fy - ly * fx) / model.mu_theta
    else:
        c = np.array([model.xc, model.yc])
        fsum_x, fsum_y = fx.copy(), fy.copy()
        gx, gy = grasp_points[:, 0] - c[0], grasp_points[:, 1] - c[1]
        lx, ly = to_world(gx, gy)
        tau = lx * fy - ly * fx
        for rel, th_mu, mu_x, mu_y in _wheels(model):
            Q = rot2(th_mu) @ np.diag([mu_x, mu_y]) @ rot2(th_mu).T
            rx, ry = to_world(rel[0], rel[1])
            wx = vx - omega * ry
            wy = vy + omega * rx
            bx, by = to_body(wx, wy)
            qx = Q[0, 0] * bx + Q[0, 1] * by
            qy = Q[1, 0] * bx + Q[1, 1] * by
            fwx, fwy = to_world(-qx, -qy)
            fsum_x += fwx
            fsum_y += fwy
            tau += rx * fwy - ry * fwx
        nvx = vx + dts * fsum_x / model.m
        nvy = vy + dts * fsum_y / model.m
        nomega = omega + dts * tau / model.inertia
    out = np.empty_like(states)
    out[:, 0] = x + dts * nvx
    out[:, 1] = y + dts * nvy
    out[:, 2] = wrap_angle(theta + dts * nomega)
    out[:, 3] = nvx
    out[:, 4] = nvy
    out[:, 5] = nomega
    return out


def step_jacobian(
    state: ObjectState, params: DynamicsParams, inp: AppliedWrench, dt: float
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic Jacobians (A, B) of the deterministic step wrt state and force.

    Consumed by tests as the reference for the planner's finite-difference
    linearization; wheel friction is linear in the velocities, so the only
    nonlinearity enters through theta.
    """
    model = params.model
    A = np.eye(STATE_DIM)
    B = np.zeros((STATE_DIM, 2))
    R = rot2(state.theta)
    if isinstance(model, ParamsModel3):
        Rp = rot2(model.theta_mu)
        T = R @ Rp @ np.diag([1.0 / model.mu_x, 1.0 / model.mu_y]) @ Rp.T @ R.T
        force = inp.force()
        g = R @ (np.asarray(inp.grasp_point, dtype=float) - np.array([model.xc, model.yc]))
        dv_dth = (J @ T - T @ J) @ force
        dw_dth = -(g @ force) / model.mu_theta
        A[3:5, :] = 0.0
        A[5, :] = 0.0
        A[3:5, 2] = dv_dth
        A[5, 2] = dw_dth
        B[3:5, :] = T
        B[5, :] = (J @ g) / model.mu_theta
    else:
        c = np.array([model.xc, model.yc])
        vel = state.lin_vel()
        dF_dv = np.zeros((2, 2))
        dF_dw = np.zeros(2)
        dF_dth = np.zeros(2)
        dT_dv = np.zeros(2)
        dT_dw = 0.0
        dT_dth = 0.0
        for rel, th_mu, mu_x, mu_y in _wheels(model):
            Rp = rot2(th_mu)
            S = R @ Rp @ np.diag([mu_x, mu_y]) @ Rp.T @ R.T
            r = R @ rel
            w = vel + state.omega * (J @ r)
            Fw = -S @ w
            Sp = J @ S - S @ J
            dFi_dth = -Sp @ w + state.omega * (S @ r)
            dF_dv += -S
            dF_dw += -S @ (J @ r)
            dF_dth += dFi_dth
            Jr = J @ r
            dT_dv += -Jr @ S
            dT_dw += Jr @ (-S @ (J @ r))
            dT_dth += -(r @ Fw) + Jr @ dFi_dth
        force = inp.force()
        g = R @ (np.asarray(inp.grasp_point, dtype=float) - c)
        dT_dth += -(g @ force)
        m, inertia = model.m, model.inertia
        # velocity rows
        A[3:5, 3:5] = np.eye(2) + dt / m * dF_dv
        A[3:5, 5] = dt / m * dF_dw
        A[3:5, 2] = dt / m * dF_dth
        A[5, 3:5] = dt / inertia * dT_dv
        A[5, 5] = 1.0 + dt / inertia * dT_dw
        A[5, 2] = dt / inertia * dT_dth
        B[3:5, :] = dt / m * np.eye(2)
        B[5, :] = dt / inertia * (J @ g)
    # pose rows integrate the updated velocities
    A[0, :] = A[0, :] + dt * A[3, :]
    A[1, :] = A[1, :] + dt * A[4, :]
    A[2, :] = A[2, :] + dt * A[5, :]
    B[0, :] = dt * B[3, :]
    B[1, :] = dt * B[4, :]
    B[2, :] = dt * B[5, :]
    return A, B


def simulate(
    initial: ObjectState,
    params: DynamicsParams,
    inputs: list[tuple[AppliedWrench, float]],
    feedback: list[ObjectState] | None = None,
    feedback_period: float | None = None,
) -> list[ObjectState]:
    """Deterministic rollout of a wrench sequence; optionally reset to observed
    states every feedback_period seconds (feedback[i] observed at sample i).

    A feedback period shorter than every dt resets at every step.
    """
    if feedback is not None:
        if feedback_period is None or feedback_period <= 0:
            raise ValueError("feedback requires a positive feedback_period")
        if len(feedback) < len(inputs) + 1:
            raise ValueError("feedback must cover every sample of the rollout")
    traj = [initial]
    state = initial
    t_acc = 0.0
    next_reset = feedback_period if feedback_period else np.inf
    for i, (wrench, dt) in enumerate(inputs):
        state = step(state, params, wrench, dt)
        t_acc += dt
        if feedback is not None and t_acc >= next_reset - 1e-12:
            state = feedback[i + 1]
            while next_reset <= t_acc + 1e-12:
                next_reset += feedback_period
        traj.append(state)
    return traj
