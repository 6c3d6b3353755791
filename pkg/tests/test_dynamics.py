"""Dynamics module tests: frozen oracle values, invariants, edge cases."""

import numpy as np
import pytest

from legmanip.dynamics import (
    AppliedWrench,
    DynamicsParams,
    ObjectState,
    ParamsModel1,
    ParamsModel2,
    ParamsModel3,
    simulate,
    step,
    step_batch,
    step_jacobian,
    total_wrench,
    wheel_friction_force,
    wheel_velocity,
)
from oracles import oracle_wheel_friction, oracle_wheel_velocity, oracle_wrench


def random_model(rng, kind):
    if kind == 1:
        return ParamsModel1(
            m=rng.uniform(1.0, 5.0),
            inertia=rng.uniform(0.05, 0.5),
            xc=rng.normal(0.0, 0.1),
            yc=rng.normal(0.0, 0.1),
            mu_x=rng.uniform(0.5, 10.0),
            mu_y=rng.uniform(0.5, 10.0),
            theta_mu=rng.uniform(-1.0, 1.0),
        )
    if kind == 2:
        return ParamsModel2(
            m=rng.uniform(1.0, 5.0),
            inertia=rng.uniform(0.05, 0.5),
            xc=rng.normal(0.0, 0.1),
            yc=rng.normal(0.0, 0.1),
            mu_xr=rng.uniform(0.5, 10.0),
            mu_yr=rng.uniform(0.5, 10.0),
            mu_xl=rng.uniform(0.5, 10.0),
            mu_yl=rng.uniform(0.5, 10.0),
            xs=rng.normal(0.0, 0.2),
            ys=rng.normal(0.0, 0.2),
            b=rng.uniform(0.05, 0.3),
        )
    return ParamsModel3(
        xc=rng.normal(0.0, 0.1),
        yc=rng.normal(0.0, 0.1),
        mu_x=rng.uniform(0.5, 10.0),
        mu_y=rng.uniform(0.5, 10.0),
        mu_theta=rng.uniform(0.1, 3.0),
        theta_mu=rng.uniform(-1.0, 1.0),
    )


def model_wheels(model):
    """Object-frame wheel tuples for the oracle."""
    if isinstance(model, ParamsModel1):
        return [((model.xc, model.yc), model.theta_mu, model.mu_x, model.mu_y)]
    return [
        ((model.xs + model.b, model.ys), 0.0, model.mu_xr, model.mu_yr),
        ((model.xs - model.b, model.ys), 0.0, model.mu_xl, model.mu_yl),
    ]


# --- frozen example values -------------------------------------------------

def test_wheel_velocity_frozen():
    # theta=pi/4, theta_mu=pi/6, v=(1,0.5), omega=0.3, wheel=(0.2,0.1);
    # expected from the rotation-composition oracle, frozen.
    state = ObjectState(0.0, 0.0, np.pi / 4, 1.0, 0.5, 0.3)
    got = wheel_velocity(state, (0.2, 0.1), np.pi / 6)
    frozen = np.array([0.7458011961335218, -0.76955477951074136])
    assert np.allclose(got, frozen, rtol=0, atol=1e-14)
    assert np.allclose(got, oracle_wheel_velocity(np.pi / 4, np.pi / 6, (1.0, 0.5), 0.3, (0.2, 0.1)))


def test_wheel_velocity_zero_at_rest():
    state = ObjectState(1.0, -2.0, 0.7, 0.0, 0.0, 0.0)
    assert np.allclose(wheel_velocity(state, (0.3, -0.2), 0.4), 0.0)


def test_wheel_friction_frozen_and_dissipative():
    state = ObjectState(0.0, 0.0, np.pi / 4, 1.0, 0.5, 0.3)
    got = wheel_friction_force(state, (0.2, 0.1), np.pi / 6, 2.0, 9.0)
    frozen = np.array([-7.0760506333017226, 0.35180162543816518])
    assert np.allclose(got, frozen, rtol=0, atol=1e-14)
    # force opposes the wheel's world velocity
    R = np.array([[np.cos(np.pi / 4), -np.sin(np.pi / 4)], [np.sin(np.pi / 4), np.cos(np.pi / 4)]])
    v_world = np.array([1.0, 0.5]) + 0.3 * np.array([[0, -1], [1, 0]]) @ R @ [0.2, 0.1]
    assert got @ v_world < 0


def test_friction_zero_at_rest():
    state = ObjectState(0.0, 0.0, 1.2, 0.0, 0.0, 0.0)
    assert np.allclose(wheel_friction_force(state, (0.1, 0.0), 0.5, 3.0, 7.0), 0.0)


def test_rotation_order_commutes():
    # R and R' are both planar rotations, so R R' = R' R; regression against
    # accidentally composing with a transpose.
    state = ObjectState(0.0, 0.0, 0.9, 0.4, -0.2, 0.1)
    a = wheel_friction_force(state, (0.15, 0.05), 0.3, 2.0, 5.0)
    R, Rp = (lambda t: np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]]))(0.9), (
        lambda t: np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    )(0.3)
    vw = oracle_wheel_velocity(0.9, 0.3, (0.4, -0.2), 0.1, (0.15, 0.05))
    swapped = -(Rp @ R @ np.diag([2.0, 5.0]) @ vw)
    assert np.allclose(a, swapped, atol=1e-13)


def test_total_wrench_pure_lever():
    # force (1,0) at leg (0,0.3), theta=0, zero-ish friction, com at origin
    model = ParamsModel1(m=2.0, inertia=0.1, xc=0.0, yc=0.0, mu_x=0.0, mu_y=0.0, theta_mu=0.0)
    params = DynamicsParams(model)
    state = ObjectState()
    force, torque = total_wrench(state, params, AppliedWrench(1.0, 0.0, (0.0, 0.3)))
    assert np.allclose(force, [1.0, 0.0])
    assert torque == pytest.approx(-0.3)


def test_total_wrench_oracle_sweep():
    rng = np.random.default_rng(7)
    for _ in range(100):
        kind = int(rng.integers(1, 3))
        model = random_model(rng, kind)
        params = DynamicsParams(model)
        state = ObjectState(*rng.normal(0, 0.5, 6))
        inp = AppliedWrench(*rng.normal(0, 3, 2), tuple(rng.normal(0, 0.3, 2)))
        force, torque = total_wrench(state, params, inp)
        of, ot = oracle_wrench(
            state.theta,
            state.lin_vel(),
            state.omega,
            (model.xc, model.yc),
            model_wheels(model),
            inp.grasp_point,
            inp.force(),
        )
        assert np.allclose(force, of, rtol=1e-12, atol=1e-12)
        assert torque == pytest.approx(ot, rel=1e-12, abs=1e-12)


def test_model3_aligned_force():
    # mu_x=mu_y=4, force (2,0) along the wheel x-axis, grasp at the wheel:
    # quasi-static balance gives vx=0.5 and no rotation.
    model = ParamsModel3(xc=0.0, yc=0.0, mu_x=4.0, mu_y=4.0, mu_theta=1.0, theta_mu=0.0)
    params = DynamicsParams(model)
    nxt = step(ObjectState(), params, AppliedWrench(2.0, 0.0, (0.0, 0.0)), 0.1)
    assert nxt.vx == pytest.approx(0.5)
    assert nxt.vy == pytest.approx(0.0)
    assert nxt.omega == pytest.approx(0.0)
    assert nxt.x == pytest.approx(0.05)


def test_model3_linearity():
    rng = np.random.default_rng(3)
    model = random_model(rng, 3)
    params = DynamicsParams(model)
    state = ObjectState(0.2, -0.1, 0.6)
    w1 = AppliedWrench(1.3, -0.4, (0.2, 0.1))
    w2 = AppliedWrench(2.6, -0.8, (0.2, 0.1))
    a = step(state, params, w1, 0.05)
    b = step(state, params, w2, 0.05)
    assert np.allclose(2 * np.array([a.vx, a.vy, a.omega]), [b.vx, b.vy, b.omega], rtol=1e-12)


# --- step/simulate invariants ----------------------------------------------

def test_step_rejects_bad_dt():
    params = DynamicsParams(ParamsModel1(1.0, 0.1, 0, 0, 1, 1, 0))
    with pytest.raises(ValueError):
        step(ObjectState(), params, AppliedWrench(), 0.0)
    with pytest.raises(ValueError):
        step(ObjectState(), params, AppliedWrench(), -0.1)


def test_theta_stays_normalized():
    params = DynamicsParams(ParamsModel1(1.0, 0.05, 0, 0, 0.5, 0.5, 0))
    state = ObjectState(0, 0, 3.0, 0, 0, 2.0)
    for _ in range(40):
        state = step(state, params, AppliedWrench(0.0, 1.0, (0.3, 0.0)), 0.1)
        assert -np.pi < state.theta <= np.pi


def test_energy_non_increasing_zero_input():
    rng = np.random.default_rng(11)
    for _ in range(30):
        kind = int(rng.integers(1, 3))
        model = random_model(rng, kind)
        params = DynamicsParams(model)
        state = ObjectState(0, 0, rng.uniform(-3, 3), *rng.normal(0, 0.6, 3))
        # dt under the explicit-friction stability bound for these draws
        dt = 0.02
        energy = lambda s: 0.5 * model.m * (s.vx**2 + s.vy**2) + 0.5 * model.inertia * s.omega**2
        prev = energy(state)
        for _ in range(200):
            state = step(state, params, AppliedWrench(0.0, 0.0, (0.0, 0.0)), dt)
            cur = energy(state)
            assert cur <= prev + 1e-12
            prev = cur


def test_zero_friction_conserves_momentum():
    model = ParamsModel1(m=2.5, inertia=0.2, xc=0.0, yc=0.0, mu_x=0.0, mu_y=0.0, theta_mu=0.0)
    params = DynamicsParams(model)
    state = ObjectState(0, 0, 0.3, 0.4, -0.1, 0.7)
    for _ in range(100):
        state = step(state, params, AppliedWrench(0.0, 0.0, (0.1, 0.1)), 0.05)
    assert state.vx == pytest.approx(0.4)
    assert state.vy == pytest.approx(-0.1)
    assert state.omega == pytest.approx(0.7)


def test_frame_equivariance():
    # rotating the whole world by phi rotates the next state consistently
    rng = np.random.default_rng(5)
    for kind in (1, 2, 3):
        model = random_model(rng, kind)
        params = DynamicsParams(model)
        state = ObjectState(*rng.normal(0, 0.4, 6))
        force = rng.normal(0, 2, 2)
        gp = tuple(rng.normal(0, 0.2, 2))
        phi = rng.uniform(-2, 2)
        R = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
        a = step(state, params, AppliedWrench(*force, gp), 0.05).as_array()
        rotated = ObjectState(
            *(R @ [state.x, state.y]), state.theta + phi, *(R @ [state.vx, state.vy]), state.omega
        )
        b = step(rotated, params, AppliedWrench(*(R @ force), gp), 0.05).as_array()
        assert np.allclose(R @ a[0:2], b[0:2], atol=1e-10)
        assert np.allclose(R @ a[3:5], b[3:5], atol=1e-10)
        assert np.cos(a[2] + phi) == pytest.approx(np.cos(b[2]), abs=1e-10)
        assert a[5] == pytest.approx(b[5], abs=1e-10)


def test_step_batch_matches_scalar():
    rng = np.random.default_rng(9)
    for kind in (1, 2, 3):
        model = random_model(rng, kind)
        params = DynamicsParams(model)
        states = rng.normal(0, 0.5, (40, 6))
        forces = rng.normal(0, 2, (40, 2))
        gps = rng.normal(0, 0.2, (40, 2))
        dts = rng.uniform(0.05, 0.15, 40)
        batch = step_batch(states, params, forces, gps, dts)
        for i in range(40):
            ref = step(
                ObjectState.from_array(states[i]),
                params,
                AppliedWrench(*forces[i], tuple(gps[i])),
                dts[i],
            ).as_array()
            assert np.allclose(batch[i], ref, rtol=1e-12, atol=1e-13)


def test_step_noise_deterministic():
    params = DynamicsParams(ParamsModel1(2.0, 0.1, 0, 0, 3, 3, 0), sigma=0.02)
    a = step(ObjectState(), params, AppliedWrench(1, 0, (0, 0)), 0.1, noise_seed=42)
    b = step(ObjectState(), params, AppliedWrench(1, 0, (0, 0)), 0.1, noise_seed=42)
    c = step(ObjectState(), params, AppliedWrench(1, 0, (0, 0)), 0.1, noise_seed=43)
    assert a == b
    assert a != c


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(13)
    for trial in range(60):
        kind = trial % 3 + 1
        model = random_model(rng, kind)
        params = DynamicsParams(model)
        state = ObjectState(*rng.normal(0, 0.5, 6))
        inp = AppliedWrench(*rng.normal(0, 2, 2), tuple(rng.normal(0, 0.2, 2)))
        A, B = step_jacobian(state, params, inp, 0.1)
        eps = 1e-6
        x0 = state.as_array()
        for k in range(6):
            d = np.zeros(6)
            d[k] = eps
            fp = step(ObjectState.from_array(x0 + d), params, inp, 0.1).as_array()
            fm = step(ObjectState.from_array(x0 - d), params, inp, 0.1).as_array()
            diff = fp - fm
            diff[2] = np.arctan2(np.sin(diff[2]), np.cos(diff[2]))
            col = diff / (2 * eps)
            assert np.allclose(A[:, k], col, rtol=1e-4, atol=1e-6)
        for k in range(2):
            d = np.zeros(2)
            d[k] = eps
            wp = AppliedWrench(inp.fx + d[0], inp.fy + d[1], inp.grasp_point)
            wm = AppliedWrench(inp.fx - d[0], inp.fy - d[1], inp.grasp_point)
            col = (step(state, params, wp, 0.1).as_array() - step(state, params, wm, 0.1).as_array()) / (2 * eps)
            assert np.allclose(B[:, k], col, rtol=1e-4, atol=1e-6)


def test_simulate_matches_chained_steps():
    rng = np.random.default_rng(21)
    params = DynamicsParams(random_model(rng, 1))
    inputs = [
        (AppliedWrench(*rng.normal(0, 1.5, 2), tuple(rng.normal(0, 0.2, 2))), 0.1)
        for _ in range(25)
    ]
    traj = simulate(ObjectState(), params, inputs)
    state = ObjectState()
    for i, (w, dt) in enumerate(inputs):
        state = step(state, params, w, dt)
        assert np.allclose(traj[i + 1].as_array(), state.as_array(), atol=1e-14)
    assert len(traj) == len(inputs) + 1


def test_simulate_feedback_resets():
    rng = np.random.default_rng(22)
    params = DynamicsParams(random_model(rng, 1))
    inputs = [(AppliedWrench(1.0, 0.0, (0.0, 0.0)), 0.1) for _ in range(40)]
    observed = [ObjectState(x=float(i)) for i in range(41)]
    traj = simulate(ObjectState(), params, inputs, feedback=observed, feedback_period=2.0)
    # resets at t=2.0 (i=19) and t=4.0 (i=39)
    assert traj[20] == observed[20]
    assert traj[40] == observed[40]
    assert traj[10] != observed[10]
    # period shorter than dt resets every step
    traj2 = simulate(ObjectState(), params, inputs, feedback=observed, feedback_period=0.01)
    for i in range(1, 41):
        assert traj2[i] == observed[i]


def test_simulate_feedback_needs_period():
    params = DynamicsParams(ParamsModel1(1, 0.1, 0, 0, 1, 1, 0))
    with pytest.raises(ValueError):
        simulate(ObjectState(), params, [(AppliedWrench(), 0.1)], feedback=[ObjectState()] * 2)


def test_param_validation():
    with pytest.raises(ValueError):
        ParamsModel1(m=-1.0, inertia=0.1, xc=0, yc=0, mu_x=1, mu_y=1, theta_mu=0)
    with pytest.raises(ValueError):
        ParamsModel3(xc=0, yc=0, mu_x=0.0, mu_y=1.0, mu_theta=1.0, theta_mu=0)
    with pytest.raises(ValueError):
        DynamicsParams(ParamsModel1(1, 0.1, 0, 0, 1, 1, 0), sigma=-0.1)
