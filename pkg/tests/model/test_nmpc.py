import numpy as np
import pytest

from model.core.dynamics import ControlInput, UavState, step_uav
from model.core.errors import NonFiniteError
from model.core.nmpc import (
    McpBounds,
    McpWeights,
    ObstacleTrack,
    OcpProblem,
    cost_and_gradient,
    evaluate_cost,
    obstacle_violation,
    penalized_cost,
    rollout,
    stage_violations,
)


def _random_inputs(rng, N):
    return np.column_stack([
        rng.uniform(7.0, 13.0, N),
        rng.uniform(-0.3, 0.3, N),
        rng.uniform(-0.3, 0.3, N),
    ])


def _scalar_cost(prob, u_seq):
    """Termwise re-implementation of the tracking cost."""
    states = rollout(prob.x0, u_seq, prob.params, prob.Ts)
    total = 0.0
    for j in range(prob.N + 1):
        for i in range(8):
            total += prob.weights.Q_x[i] * (prob.ref[j, i] - states[j, i]) ** 2
    for j in range(prob.N):
        previous = prob.u_prev if j == 0 else u_seq[j - 1]
        for i in range(3):
            total += prob.weights.Q_du[i] * (u_seq[j, i] - previous[i]) ** 2
            total += prob.weights.Q_u[i] * (u_seq[j, i] - prob.u_hover[i]) ** 2
    return total


class TestRollout:
    def test_hover_is_constant(self, make_problem):
        prob = make_problem(N=8)
        states = rollout(prob.x0, prob.hover_sequence, prob.params, prob.Ts)
        assert np.allclose(states, states[0])

    def test_single_step_matches_stepper(self, params):
        x0 = np.array([0.1, -0.2, 1.0, 0.3, 0.0, -0.1, 0.02, 0.01])
        u = np.array([[10.2, 0.1, -0.05]])
        states = rollout(x0, u, params, 0.05)
        expected = step_uav(UavState.from_vector(x0), ControlInput.from_array(u[0]), params, 0.05)
        assert np.array_equal(states[1], expected.as_vector())

    def test_matches_stepper_bit_identical(self, params):
        rng = np.random.default_rng(5)
        x0 = np.array([0.0, 1.0, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0])
        u_seq = _random_inputs(rng, 60)
        states = rollout(x0, u_seq, params, 1.0 / 30.0)
        s = UavState.from_vector(x0)
        for j in range(60):
            s = step_uav(s, ControlInput.from_array(u_seq[j]), params, 1.0 / 30.0)
            assert np.array_equal(states[j + 1], s.as_vector())

    def test_divergence_detected(self, params):
        x0 = np.zeros(8)
        u = np.array([[np.inf, 0.0, 0.0]])
        with pytest.raises(NonFiniteError):
            rollout(x0, u, params, 0.1)


class TestCost:
    def test_perfect_tracking_is_zero(self, make_problem):
        prob = make_problem(N=10)
        assert evaluate_cost(prob, prob.hover_sequence) == 0.0

    def test_smoothness_term(self, make_problem):
        weights = McpWeights.model_construct(Q_x=(0.0,) * 8, Q_u=(0.0, 0.0, 0.0), Q_du=(1.0, 1.0, 1.0))
        prob = make_problem(N=5, weights=weights)
        u = prob.hover_sequence.copy()
        u[2, 0] += 0.3
        assert evaluate_cost(prob, u) == pytest.approx(2 * 0.3 ** 2)

    def test_matches_scalar_oracle(self, make_problem):
        rng = np.random.default_rng(9)
        for _ in range(5):
            ref = rng.normal(scale=0.2, size=(4, 8)) + np.array([0, 0, 1.0, 0, 0, 0, 0, 0])
            prob = make_problem(N=3, ref=ref, u_prev=np.array([9.0, 0.1, -0.1]))
            u = _random_inputs(rng, 3)
            assert evaluate_cost(prob, u) == pytest.approx(_scalar_cost(prob, u), abs=1e-10)

    def test_wrong_shape(self, make_problem):
        prob = make_problem(N=4)
        with pytest.raises(ValueError):
            evaluate_cost(prob, np.zeros((3, 3)))

    def test_default_hover_input(self, params):
        prob = OcpProblem(np.zeros(8), np.zeros((3, 8)), np.zeros(3), McpWeights(), McpBounds(), params, 2, 0.1)
        assert np.allclose(prob.u_hover, [9.81, 0.0, 0.0])

    def test_problem_validation(self, params):
        with pytest.raises(ValueError):
            OcpProblem(np.zeros(8), np.zeros((3, 8)), np.zeros(3), McpWeights(), McpBounds(), params, 0, 0.1)
        with pytest.raises(ValueError):
            OcpProblem(np.zeros(8), np.zeros((2, 8)), np.zeros(3), McpWeights(), McpBounds(), params, 2, 0.1)


class TestObstacleViolation:
    def test_touching(self):
        assert obstacle_violation([0, 0, 0], [0.5, 0, 0], 0.3, 0.2) == pytest.approx(0.0)

    def test_safe(self):
        assert obstacle_violation([0, 0, 0], [0, 1.0, 0], 0.3, 0.2) == pytest.approx(-0.75)

    def test_violation(self):
        assert obstacle_violation([0, 0, 0], [0, 0, 0.1], 0.3, 0.2) == pytest.approx(0.24)

    def test_radii_positive(self):
        with pytest.raises(ValueError):
            obstacle_violation([0, 0, 0], [1, 0, 0], 0.0, 0.2)

    def test_stage_violations_shape(self, make_problem):
        track = ObstacleTrack(np.tile([0.0, 0.0, 1.2], (7, 1)), 0.2, 0.3)
        prob = make_problem(N=6, obstacles=[track])
        states = rollout(prob.x0, prob.hover_sequence, prob.params, prob.Ts)
        h = stage_violations(prob, states)
        assert h.shape == (1, 7)
        assert np.allclose(h, 0.25 - 0.04)


class TestGradient:
    def test_matches_central_differences(self, make_problem, params):
        rng = np.random.default_rng(2024)
        eps = 1e-6
        worst = 0.0
        for _ in range(50):
            N = 5
            x0 = np.array([*rng.normal(scale=0.3, size=3), *rng.normal(scale=0.3, size=3),
                           *rng.uniform(-0.2, 0.2, size=2)])
            ref = rng.normal(scale=0.3, size=(N + 1, 8))
            u = _random_inputs(rng, N)
            states = rollout(x0, u, params, 1.0 / 30.0)
            positions = states[:, 0:3] + rng.normal(scale=0.2, size=(N + 1, 3))
            track = ObstacleTrack(positions, 0.2, 0.3)
            prob = make_problem(N=N, x0=x0, ref=ref, u_prev=_random_inputs(rng, 1)[0], obstacles=[track])
            rho = 10.0

            _, grad = cost_and_gradient(prob, u, rho)
            numeric = np.zeros_like(u)
            for j in range(N):
                for i in range(3):
                    up, down = u.copy(), u.copy()
                    up[j, i] += eps
                    down[j, i] -= eps
                    numeric[j, i] = (penalized_cost(prob, up, rho) - penalized_cost(prob, down, rho)) / (2 * eps)
            error = np.max(np.abs(grad - numeric)) / max(np.max(np.abs(numeric)), 1.0)
            worst = max(worst, error)
        assert worst <= 1e-4

    def test_value_matches_penalized_cost(self, make_problem):
        prob = make_problem(N=6, obstacles=[ObstacleTrack(np.tile([0.0, 0.1, 1.0], (7, 1)), 0.2, 0.3)])
        u = prob.hover_sequence
        value, _ = cost_and_gradient(prob, u, 100.0)
        assert value == pytest.approx(penalized_cost(prob, u, 100.0))
        assert value > evaluate_cost(prob, u)

    def test_zero_at_optimum(self, make_problem):
        prob = make_problem(N=6)
        _, grad = cost_and_gradient(prob, prob.hover_sequence)
        assert np.allclose(grad, 0.0)
