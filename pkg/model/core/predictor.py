"""Forward prediction of delayed UAV and obstacle observations.

The controller only sees odometry that is already tau seconds old, and its
commands land tau seconds after they are computed. The predictor moves the
observation forward by the delay estimate so the NMPC optimizes from the
state that exists when its first input is applied.
"""
import math
from dataclasses import dataclass
from typing import Dict, Literal, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from model.core.dynamics import GRAVITY, ControlInput, ObstacleState, UavParams, UavState, thrust_to_force
from model.core.errors import EmptyOverlapError, NonFiniteError

AXES = ('x', 'y', 'z')


class PredictorSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    position_velocity: Literal['predicted', 'current'] = 'predicted'
    attitude_form: Literal['implicit', 'printed'] = 'implicit'
    obstacle_model: Literal['first_order', 'ballistic'] = 'first_order'


DEFAULT_SETTINGS = PredictorSettings()


@dataclass(frozen=True, eq=False)
class PredictedState:
    p_hat: np.ndarray
    v_hat: np.ndarray
    phi_hat: float
    theta_hat: float
    tau_used: float

    def as_vector(self) -> np.ndarray:
        return np.array([*self.p_hat, *self.v_hat, self.phi_hat, self.theta_hat])

    @classmethod
    def from_observation(cls, observed: UavState) -> 'PredictedState':
        return cls(observed.p.copy(), observed.v.copy(), observed.phi, observed.theta, 0.0)


@dataclass(frozen=True, eq=False)
class PredictedObstacle:
    p_o_hat: np.ndarray
    v_o_hat: np.ndarray
    r_d: float = 0.0
    obstacle_id: int = 0


@dataclass(frozen=True)
class PredictionErrorReport:
    series: pd.DataFrame
    rms: Dict[str, float]


def _require_finite(values: Sequence[float], what: str):
    if not all(math.isfinite(v) for v in values):
        raise NonFiniteError(f"{what} contains non-finite values")


def _lag_prediction(angle: float, desired: float, gain: float, alpha: float, tau: float,
                    form: str) -> float:
    if form == 'printed':
        # literal reading of the printed expression; loses the tau -> 0 identity
        return (angle - gain / alpha * desired) * tau / (1.0 + tau / alpha)
    return (angle + (gain * tau / alpha) * desired) / (1.0 + tau / alpha)


def predict_uav(observed: UavState, last_input: ControlInput, tau: float, params: UavParams,
                settings: PredictorSettings = DEFAULT_SETTINGS) -> PredictedState:
    _require_finite(observed.as_vector(), "observed UAV state")
    _require_finite((last_input.F, last_input.phi_d, last_input.theta_d, tau), "predictor input")
    if tau < 0:
        raise ValueError(f"prediction horizon must be non-negative, got {tau}")

    force = thrust_to_force(last_input, observed.phi, observed.theta)
    accel = force + np.asarray(params.g_vec)
    drag = np.asarray(params.A)
    # implicit Euler on the velocity: (I + A tau) v_hat = v + (U + G) tau
    v_hat = (observed.v + accel * tau) / (1.0 + drag * tau)
    if settings.position_velocity == 'predicted':
        p_hat = observed.p + v_hat * tau
    else:
        p_hat = observed.p + observed.v * tau

    phi_hat = _lag_prediction(observed.phi, last_input.phi_d, params.K_phi, params.alpha_phi, tau,
                              settings.attitude_form)
    theta_hat = _lag_prediction(observed.theta, last_input.theta_d, params.K_theta, params.alpha_theta,
                                tau, settings.attitude_form)
    return PredictedState(p_hat, v_hat, phi_hat, theta_hat, tau)


def predict_obstacle(observed: ObstacleState, tau: float, g_vec=(0.0, 0.0, -GRAVITY),
                     settings: PredictorSettings = DEFAULT_SETTINGS) -> PredictedObstacle:
    _require_finite((*observed.p_o, *observed.v_o, tau), "observed obstacle state")
    if tau < 0:
        raise ValueError(f"prediction horizon must be non-negative, got {tau}")
    g = np.asarray(g_vec, dtype=float)
    p_hat = observed.p_o + observed.v_o * tau
    if settings.obstacle_model == 'ballistic':
        p_hat = p_hat + 0.5 * g * tau * tau
    v_hat = observed.v_o + g * tau
    return PredictedObstacle(p_hat, v_hat, observed.r_d, observed.obstacle_id)


def prediction_error(predicted_log: pd.DataFrame, actual_log: pd.DataFrame,
                     dt: Optional[float] = None) -> PredictionErrorReport:
    """Compare predictions against the plant state at the time they were made for.

    `predicted_log` needs columns `pred_t, predx, predy, predz` (pred_t is the
    instant the prediction targets); `actual_log` needs `t, px, py, pz`.
    Samples are matched to the nearest actual sample within dt/2.
    """
    predicted = predicted_log[['pred_t', 'predx', 'predy', 'predz']].dropna()
    actual = actual_log[['t', 'px', 'py', 'pz']].dropna()
    if predicted.empty or actual.empty:
        raise EmptyOverlapError("prediction or actual log is empty")

    if dt is None:
        steps = np.diff(actual['t'].to_numpy())
        dt = float(np.median(steps)) if len(steps) else 0.0

    merged = pd.merge_asof(
        predicted.sort_values('pred_t'),
        actual.sort_values('t'),
        left_on='pred_t',
        right_on='t',
        direction='nearest',
        tolerance=dt / 2.0 if dt > 0 else 0.0,
    ).dropna()
    if merged.empty:
        raise EmptyOverlapError("predicted and actual logs share no aligned samples")

    series = pd.DataFrame({'t': merged['pred_t'].to_numpy()})
    for axis in AXES:
        series[f'e{axis}'] = merged[f'pred{axis}'].to_numpy() - merged[f'p{axis}'].to_numpy()
    series['euclidean'] = np.sqrt(series['ex'] ** 2 + series['ey'] ** 2 + series['ez'] ** 2)

    rms = {axis: float(np.sqrt(np.mean(series[f'e{axis}'] ** 2))) for axis in AXES}
    rms['euclidean'] = float(np.sqrt(np.mean(series['euclidean'] ** 2)))
    return PredictionErrorReport(series, rms)
