import numpy as np
import pytest

from model.core.dynamics import ControlInput
from src.schemas.message_schemas import CommandEcho, ObstacleOdometry, TimestampedMessage, UavOdometry
from src.services.edge_controller import EdgeController


def _odometry(sent_at, p=(0.0, 1.0, 0.8), received_at=None):
    return TimestampedMessage(0, sent_at, UavOdometry(p, (0.0, 0.0, 0.0), 0.0, 0.0), received_at=received_at)


def _echo(echo_of, received_at):
    return TimestampedMessage(0, received_at, CommandEcho(9.81, 0.0, 0.0), echo_of=echo_of,
                              received_at=received_at)


def _obstacle(sent_at, obstacle_id=0):
    return TimestampedMessage(0, sent_at, ObstacleOdometry((1.0, 1.0, 0.8), (-4.0, 0.0, 1.0), 0.2, obstacle_id))


@pytest.fixture
def obstacle_config(short_config):
    return short_config(scenario='obstacle', launches=[{'t': 0.5, 'p0': (2.0, 0.0, 0.2), 'r_d': 0.1, 'r_s': 0.4}])


class TestEdgeController:
    def test_waits_for_odometry(self, short_config):
        assert EdgeController(short_config()).step(0, 0.0) is None

    def test_decision(self, short_config):
        cfg = short_config()
        edge = EdgeController(cfg)
        edge.on_message(_odometry(0.0, received_at=0.03))
        decision = edge.step(0, 0.03)
        u = decision.solution.u_seq
        assert u.shape == (cfg.horizon, 3)
        assert np.all(u >= np.asarray(cfg.bounds.u_min) - 1e-9)
        assert np.all(u <= np.asarray(cfg.bounds.u_max) + 1e-9)
        assert decision.command.F == pytest.approx(u[0, 0])
        assert decision.pred_t == 0.0
        np.testing.assert_allclose(decision.prediction.p_hat, [0.0, 1.0, 0.8])
        assert edge.u_prev == decision.solution.first
        assert edge.link_age(0.1) == pytest.approx(0.07)

    def test_echo_updates_estimate(self, short_config):
        edge = EdgeController(short_config())
        edge.on_message(_echo(1.0, 1.06))
        assert edge.tau_hat == pytest.approx(0.06)
        assert edge.tau_sample == pytest.approx(0.06)
        edge.on_message(_odometry(1.0, received_at=1.03))
        decision = edge.step(30, 1.06)
        assert decision.pred_t == pytest.approx(1.06)
        assert decision.tau_hat == pytest.approx(0.06)

    def test_prediction_follows_echoed_input(self, short_config):
        edge = EdgeController(short_config())
        edge.on_message(_odometry(0.0, p=(0.0, 0.0, 1.0)))
        edge.on_message(TimestampedMessage(1, 0.06, CommandEcho(15.0, 0.0, 0.3), echo_of=0.0,
                                           received_at=0.06))
        assert (edge.u_echoed.F, edge.u_echoed.phi_d, edge.u_echoed.theta_d) == (15.0, 0.0, 0.3)
        decision = edge.step(2, 0.06)
        assert decision.prediction.tau_used == pytest.approx(0.06)
        assert decision.prediction.theta_hat > 0.0
        assert decision.prediction.v_hat[2] > 0.0
        assert decision.prediction.phi_hat == pytest.approx(0.0)

    def test_prediction_ignores_pending_command(self, short_config):
        edge = EdgeController(short_config())
        edge.on_message(_echo(0.0, 0.06))
        edge.u_prev = ControlInput(15.0, 0.3, 0.3)
        edge.on_message(_odometry(0.0, p=(0.0, 0.0, 1.0)))
        decision = edge.step(2, 0.06)
        assert decision.prediction.theta_hat == pytest.approx(0.0)
        assert decision.prediction.phi_hat == pytest.approx(0.0)

    def test_no_estimator(self, short_config):
        edge = EdgeController(short_config(scenario='track_no_estimator'))
        edge.on_message(_echo(1.0, 1.06))
        assert edge.tau_hat == 0.0
        assert edge.tau_sample is None
        edge.on_message(_odometry(1.0, p=(0.1, 1.0, 0.8)))
        decision = edge.step(30, 1.1)
        np.testing.assert_allclose(decision.prediction.p_hat, [0.1, 1.0, 0.8])
        assert decision.pred_t == 1.0

    def test_stale_odometry_ignored(self, short_config):
        edge = EdgeController(short_config())
        edge.on_message(_odometry(2.0, p=(0.0, 1.0, 0.8)))
        edge.on_message(_odometry(1.0, p=(5.0, 5.0, 5.0)))
        assert edge.observed.t == 2.0
        np.testing.assert_allclose(edge.observed.p, [0.0, 1.0, 0.8])

    def test_obstacle_tracks(self, obstacle_config):
        edge = EdgeController(obstacle_config)
        edge.on_message(_odometry(1.0))
        edge.on_message(_obstacle(1.0))
        assert edge.obstacles[0].observed.r_d == 0.1
        decision = edge.step(30, 1.0)
        (predicted,) = decision.obstacles
        problem = edge.build_problem(30, decision.prediction, decision.obstacles)
        (track,) = problem.obstacles
        assert (track.r_d, track.r_s) == (0.1, 0.4)
        assert track.positions.shape == (obstacle_config.horizon + 1, 3)
        np.testing.assert_allclose(track.positions[0], predicted.p_o_hat)

    def test_obstacle_expires(self, obstacle_config):
        edge = EdgeController(obstacle_config)
        edge.on_message(_odometry(1.0))
        edge.on_message(_obstacle(1.0))
        decision = edge.step(30, 1.0 + obstacle_config.obstacle_timeout_s + 0.1)
        assert decision.obstacles == []
        assert edge.obstacles == {}

    def test_unknown_obstacle_keeps_sent_radius(self, obstacle_config):
        edge = EdgeController(obstacle_config)
        edge.on_message(_obstacle(1.0, obstacle_id=7))
        assert edge.obstacles[7].observed.r_d == 0.2
        assert edge._safety_radius(7) == 0.4

    def test_unscripted_obstacle_uses_configured_radius(self, short_config):
        edge = EdgeController(short_config(safety={'safety_radius': 0.45}))
        edge.on_message(_obstacle(1.0, obstacle_id=0))
        assert edge._safety_radius(0) == 0.45
