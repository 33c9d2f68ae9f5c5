import math

import numpy as np
import pytest

from model.core.dynamics import (
    GRAVITY,
    ControlInput,
    ObstacleState,
    UavParams,
    UavState,
    obstacle_rollout,
    rotation_matrix,
    step_obstacle,
    step_uav,
    thrust_to_force,
    uav_derivative,
)
from model.core.errors import NonFiniteError, OperatingRegimeError


def _rx(a):
    return np.array([[1, 0, 0], [0, math.cos(a), -math.sin(a)], [0, math.sin(a), math.cos(a)]])


def _ry(a):
    return np.array([[math.cos(a), 0, math.sin(a)], [0, 1, 0], [-math.sin(a), 0, math.cos(a)]])


def _rz(a):
    return np.array([[math.cos(a), -math.sin(a), 0], [math.sin(a), math.cos(a), 0], [0, 0, 1]])


class TestRotation:
    def test_zero_angles_identity(self):
        R = rotation_matrix(0.0, 0.0, 0.0)
        assert np.allclose(R, np.eye(3))
        assert np.allclose(R @ np.array([0.0, 0.0, 9.81]), [0.0, 0.0, 9.81])

    def test_matches_elementary_product(self):
        R = rotation_matrix(0.1, 0.2, 0.0)
        expected = _rz(0.0) @ _ry(0.2) @ _rx(0.1)
        assert np.allclose(R, expected, atol=1e-12)

    def test_orthonormal(self):
        rng = np.random.default_rng(0)
        for phi, theta, psi in rng.uniform(-math.pi / 2, math.pi / 2, size=(1000, 3)):
            R = rotation_matrix(phi, theta, psi)
            assert np.allclose(R.T @ R, np.eye(3), atol=1e-10)
            assert abs(np.linalg.det(R) - 1.0) < 1e-10

    def test_thrust_matches_rotation_column(self):
        rng = np.random.default_rng(1)
        for phi, theta in rng.uniform(-0.5, 0.5, size=(50, 2)):
            force = thrust_to_force(ControlInput(7.0, 0.0, 0.0), phi, theta)
            expected = rotation_matrix(phi, theta, 0.0) @ np.array([0.0, 0.0, 7.0])
            assert np.allclose(force, expected, atol=1e-12)


class TestThrust:
    def test_level_thrust(self):
        assert np.allclose(thrust_to_force(ControlInput(9.81, 0, 0), 0.0, 0.0), [0.0, 0.0, 9.81])

    def test_zero_thrust(self):
        assert np.allclose(thrust_to_force(ControlInput(0.0, 0.3, 0.2), 0.3, 0.2), [0.0, 0.0, 0.0])

    def test_pitched_thrust(self):
        force = thrust_to_force(ControlInput(9.81, 0, 0), 0.0, 0.1)
        assert np.allclose(force, [9.81 * math.sin(0.1), 0.0, 9.81 * math.cos(0.1)], atol=1e-12)


class TestDerivative:
    def test_hover_equilibrium(self, frictionless):
        d = uav_derivative(UavState.hover_at((0, 0, 1)), ControlInput.hover(), frictionless)
        assert np.allclose(d.a, 0.0)
        assert d.phi_dot == 0.0
        assert d.theta_dot == 0.0

    def test_roll_lag(self):
        params = UavParams(alpha_phi=0.2, K_phi=1.0)
        d = uav_derivative(UavState.hover_at((0, 0, 1)), ControlInput(GRAVITY, 0.1, 0.0), params)
        assert d.phi_dot == pytest.approx(0.5)

    def test_drag(self, params):
        s = UavState(np.zeros(3), np.array([1.0, 0.0, 0.0]))
        d = uav_derivative(s, ControlInput.hover(), params)
        assert np.allclose(d.a, [-0.1, 0.0, 0.0])


class TestStepUav:
    def test_hover_fixed_point(self, params, hover_state):
        s = step_uav(hover_state, ControlInput.hover(), params, 0.01)
        assert np.array_equal(s.p, hover_state.p)
        assert np.array_equal(s.v, hover_state.v)
        assert s.phi == 0.0 and s.theta == 0.0
        assert s.t == pytest.approx(0.01)

    def test_pure_translation(self, frictionless):
        s = UavState(np.zeros(3), np.array([1.0, 0.0, 0.0]))
        out = step_uav(s, ControlInput.hover(), frictionless, 0.033)
        assert np.allclose(out.p, [0.033, 0.0, 0.0])

    def test_vertical_velocity_conserved_at_balance(self, frictionless):
        s = UavState(np.zeros(3), np.array([0.0, 0.0, 0.4]))
        for _ in range(20):
            s = step_uav(s, ControlInput.hover(), frictionless, 0.01)
        assert s.v[2] == pytest.approx(0.4, abs=1e-12)

    def test_first_order_convergence(self, params):
        s0 = UavState(np.zeros(3), np.array([0.5, -0.2, 0.1]), 0.05, -0.05)
        u = ControlInput(10.5, 0.1, -0.1)

        def integrate(dt, T=0.5):
            s = s0
            for _ in range(int(round(T / dt))):
                s = step_uav(s, u, params, dt)
            return s.p

        reference = integrate(0.5 / 3200)
        coarse = np.linalg.norm(integrate(0.5 / 50) - reference)
        fine = np.linalg.norm(integrate(0.5 / 100) - reference)
        assert 1.6 < coarse / fine < 2.4

    def test_attitude_lag_converges(self, params, hover_state):
        s = hover_state
        dt = 0.001
        for _ in range(int(5 * params.alpha_phi / dt)):
            s = step_uav(s, ControlInput(GRAVITY, 0.1, 0.0), params, dt)
        assert s.phi == pytest.approx(params.K_phi * 0.1, rel=0.01)

    def test_deterministic(self, params):
        s = UavState(np.array([0.1, 0.2, 0.3]), np.array([0.3, -0.1, 0.05]), 0.02, -0.01)
        u = ControlInput(10.0, 0.05, -0.02)
        a = step_uav(s, u, params, 0.01)
        b = step_uav(s, u, params, 0.01)
        assert np.array_equal(a.as_vector(), b.as_vector())

    def test_rejects_bad_dt(self, params, hover_state):
        with pytest.raises(ValueError):
            step_uav(hover_state, ControlInput.hover(), params, 0.0)

    def test_non_finite_is_fault(self, params, hover_state):
        with pytest.raises(NonFiniteError):
            step_uav(hover_state, ControlInput(float('inf'), 0.0, 0.0), params, 0.01)

    def test_leaving_small_angle_regime_is_fault(self, params):
        s = UavState(np.zeros(3), np.zeros(3), 1.5, 0.0)
        with pytest.raises(OperatingRegimeError):
            step_uav(s, ControlInput(GRAVITY, 10.0, 0.0), params, 0.1)


class TestObstacle:
    def test_free_fall_from_rest(self, params):
        o = ObstacleState(np.array([1.0, 2.0, 3.0]), np.zeros(3), 0.2)
        out = step_obstacle(o, params, 0.1)
        assert np.allclose(out.v_o, [0.0, 0.0, -0.981])
        assert np.array_equal(out.p_o, o.p_o)

    def test_horizontal_motion(self, params):
        o = ObstacleState(np.zeros(3), np.array([1.0, 0.0, 0.0]), 0.2)
        assert np.allclose(step_obstacle(o, params, 0.1).p_o, [0.1, 0.0, 0.0])

    def test_one_second_of_fall(self, params):
        o = ObstacleState(np.zeros(3), np.zeros(3), 0.2)
        dt, n = 1.0 / 30.0, 30
        for _ in range(n):
            o = step_obstacle(o, params, dt)
        assert o.v_o[2] == pytest.approx(-GRAVITY, abs=1e-9)
        assert o.p_o[2] == pytest.approx(-GRAVITY * dt * dt * n * (n - 1) / 2, abs=1e-9)

    def test_rollout_matches_stepper(self, params):
        o = ObstacleState(np.array([0.0, 0.0, 2.0]), np.array([1.0, -0.5, 3.0]), 0.2)
        positions = obstacle_rollout(o.p_o, o.v_o, params, 0.05, 12)
        assert positions.shape == (13, 3)
        for j in range(12):
            o = step_obstacle(o, params, 0.05)
            assert np.allclose(positions[j + 1], o.p_o, atol=1e-12)

    def test_radius_must_be_positive(self):
        with pytest.raises(ValueError):
            ObstacleState(np.zeros(3), np.zeros(3), 0.0)


class TestParams:
    def test_negative_drag_rejected(self):
        with pytest.raises(ValueError):
            UavParams(A=(-0.1, 0.0, 0.0))

    def test_gravity(self, params):
        assert params.gravity == pytest.approx(9.81)
