import logging
from typing import Dict, Optional

import numpy as np
import pandas as pd

from model.core.errors import EmptyLogError, EmptyOverlapError
from model.core.predictor import prediction_error
from src.schemas.metrics_schemas import RunMetrics

logger = logging.getLogger('metrics')

LOG_COLUMNS = [
    't', 'px', 'py', 'pz', 'vx', 'vy', 'vz', 'phi', 'theta',
    'refx', 'refy', 'refz', 'predx', 'predy', 'predz',
    'F', 'phid', 'thetad', 'tau_hat',
    'obs_x', 'obs_y', 'obs_z', 'obs_dist',
    'solver_iters', 'solver_converged',
    'pred_t', 'tau_sample', 'safety',
]

PLOT_COLUMNS = [
    'px', 'py', 'pz', 'refx', 'refy', 'refz', 'predx', 'predy', 'predz',
    'F', 'phid', 'thetad', 'tau_hat', 'tau_sample', 'obs_dist',
]


def _rms(values: pd.Series) -> float:
    return float(np.sqrt(np.mean(np.square(values.to_numpy(dtype=float)))))


def compute_metrics(log: pd.DataFrame, transient_s: float = 3.0, scenario: str = 'track',
                    dt: Optional[float] = None) -> RunMetrics:
    """RMS tracking and prediction errors over the post-transient part of a run log."""
    if log is None or log.empty:
        raise EmptyLogError("run log is empty")
    window = log[log['t'] >= transient_s]
    if window.empty:
        raise EmptyLogError(f"run log has no samples after the {transient_s}s transient")

    errors = {axis: window[f'p{axis}'] - window[f'ref{axis}'] for axis in 'xyz'}
    euclidean = np.sqrt(errors['x'] ** 2 + errors['y'] ** 2 + errors['z'] ** 2)

    est = {}
    if 'pred_t' in log and log['predx'].notna().any():
        try:
            report = prediction_error(log[log['pred_t'] >= transient_s], log, dt)
            est = {f'est_rms_{key}': value for key, value in report.rms.items()}
        except EmptyOverlapError as e:
            logger.warning(f"No prediction error computed: {str(e)}")

    min_distance = None
    if 'obs_dist' in log and log['obs_dist'].notna().any():
        min_distance = float(log['obs_dist'].min())

    iterations = window['solver_iters'].dropna() if 'solver_iters' in window else pd.Series(dtype=float)
    converged = window['solver_converged'].dropna() if 'solver_converged' in window else pd.Series(dtype=float)

    return RunMetrics(
        scenario=scenario,
        samples=len(window),
        transient_s=transient_s,
        rms_x=_rms(errors['x']),
        rms_y=_rms(errors['y']),
        rms_z=_rms(errors['z']),
        rms_euclidean=_rms(euclidean),
        min_obstacle_distance=min_distance,
        mean_delay_estimate=float(window['tau_hat'].mean()) if 'tau_hat' in window else 0.0,
        mean_solver_iterations=float(iterations.mean()) if len(iterations) else 0.0,
        convergence_rate=float(converged.astype(float).mean()) if len(converged) else 1.0,
        **est,
    )


def plot_data(log: pd.DataFrame) -> pd.DataFrame:
    """Tidy (t, series, value) rows for external plotting."""
    if log.empty:
        raise EmptyLogError("run log is empty")
    columns = [c for c in PLOT_COLUMNS if c in log.columns]
    tidy = log.melt(id_vars=['t'], value_vars=columns, var_name='series', value_name='value')
    return tidy.dropna(subset=['value']).reset_index(drop=True)


def comparison_table(results: Dict[str, RunMetrics]) -> pd.DataFrame:
    rows = [metrics.table_row(label) for label, metrics in results.items()]
    for label, metrics in results.items():
        if metrics.est_rms_euclidean is not None and metrics.scenario != 'track_no_estimator':
            rows.append({
                'run': f'{label} (estimation error)',
                'x_cm': metrics.est_rms_x * 100,
                'y_cm': metrics.est_rms_y * 100,
                'z_cm': metrics.est_rms_z * 100,
                'euclidean_cm': metrics.est_rms_euclidean * 100,
            })
    return pd.DataFrame(rows, columns=['run', 'x_cm', 'y_cm', 'z_cm', 'euclidean_cm'])


def recovery_time(log: pd.DataFrame, event_t: float, pre_window_s: float = 3.0,
                  factor: float = 2.0) -> Optional[float]:
    """Seconds after event_t until the Euclidean tracking error is back under factor x its pre-event RMS."""
    err = np.sqrt((log['px'] - log['refx']) ** 2 + (log['py'] - log['refy']) ** 2 + (log['pz'] - log['refz']) ** 2)
    before = err[(log['t'] < event_t) & (log['t'] >= event_t - pre_window_s)]
    if before.empty:
        return None
    threshold = factor * _rms(before)
    after = log['t'] >= event_t
    exceeded = after & (err > threshold)
    if not exceeded.any():
        return 0.0
    last_bad = float(log.loc[exceeded, 't'].max())
    later = log[after & (log['t'] > last_bad)]
    if later.empty:
        return None
    return float(later['t'].iloc[0]) - event_t
