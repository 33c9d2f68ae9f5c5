"""Closed-loop scenario runner on a virtual clock.

Per control tick k (t = k * Ts):
  1. launch due obstacles, publish odometry on the uplink
  2. the edge polls the uplink, filters stale messages, updates the delay estimate
  3. the edge predicts forward by the estimate, builds the problem, solves
  4. the command, stamped t, goes down the downlink (after solver_latency_s)
  5. the plant integrates the interval in sub-steps, applying whatever command
     has arrived by each sub-step and echoing every arrival on the uplink
"""
import hashlib
import heapq
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd
from tqdm import tqdm

from model.core.dynamics import UavState
from model.core.errors import EmptyLogError, NonFiniteError, OperatingRegimeError, SimulationDivergedError
from model.core.trajectory import reference_at
from src.schemas.config_schemas import ScenarioConfig, validate_config
from src.schemas.metrics_schemas import RunMetrics, ScenarioSummary
from src.services.edge_controller import ControlDecision, EdgeController
from src.services.message_bus import MessageBus
from src.services.metrics import LOG_COLUMNS, compute_metrics
from src.services.onboard import OnboardNode
from src.services.sim_channel import VirtualClock, make_channels

logger = logging.getLogger('harness')

NAN = float('nan')


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    log: pd.DataFrame
    metrics: Optional[RunMetrics]
    summary: ScenarioSummary
    channel_stats: Dict[str, Dict[str, int]]


def initial_state(cfg: ScenarioConfig) -> UavState:
    if cfg.initial_position is not None:
        return UavState.hover_at(cfg.initial_position)
    return UavState.hover_at(reference_at(cfg.reference_spec(), 0)[0:3])


def _tick_row(t: float, k: int, onboard: OnboardNode, edge: EdgeController,
              decision: Optional[ControlDecision]) -> dict:
    s = onboard.state
    ref = reference_at(edge.reference, k)
    row = {
        't': t,
        'px': s.p[0], 'py': s.p[1], 'pz': s.p[2],
        'vx': s.v[0], 'vy': s.v[1], 'vz': s.v[2],
        'phi': s.phi, 'theta': s.theta,
        'refx': ref[0], 'refy': ref[1], 'refz': ref[2],
        'predx': NAN, 'predy': NAN, 'predz': NAN,
        'F': NAN, 'phid': NAN, 'thetad': NAN,
        'tau_hat': edge.tau_hat,
        'obs_x': NAN, 'obs_y': NAN, 'obs_z': NAN, 'obs_dist': NAN,
        'solver_iters': NAN, 'solver_converged': NAN,
        'pred_t': NAN,
        'tau_sample': edge.tau_sample if edge.tau_sample is not None else NAN,
        'safety': onboard.monitor.state.value,
    }
    if decision is not None:
        p_hat = decision.prediction.p_hat
        row.update({
            'predx': p_hat[0], 'predy': p_hat[1], 'predz': p_hat[2],
            'F': decision.command.F, 'phid': decision.command.phi_d, 'thetad': decision.command.theta_d,
            'solver_iters': decision.solution.iterations,
            'solver_converged': int(decision.solution.converged),
            'pred_t': decision.pred_t,
        })
    obstacle, _ = onboard.nearest_obstacle()
    if obstacle is not None:
        row.update({'obs_x': obstacle.p_o[0], 'obs_y': obstacle.p_o[1], 'obs_z': obstacle.p_o[2]})
    return row


def write_outputs(out_dir: Path, log: pd.DataFrame, summary: ScenarioSummary):
    out_dir.mkdir(parents=True, exist_ok=True)
    log.to_csv(out_dir / 'log.csv', index=False)
    (out_dir / 'summary.json').write_text(summary.model_dump_json(indent=2))
    if summary.metrics is not None:
        (out_dir / 'metrics.json').write_text(summary.metrics.model_dump_json(indent=2))


def run_scenario(cfg: ScenarioConfig, out_dir: Optional[str] = None, progress: bool = False,
                 write: bool = True) -> ScenarioResult:
    Ts = cfg.Ts
    sub = cfg.substeps
    clock = VirtualClock(Ts / sub)
    down, up = make_channels(*cfg.link_models(), cfg.blackouts)
    onboard = OnboardNode(cfg, initial_state(cfg), MessageBus('onboard'))
    edge = EdgeController(cfg)
    edge_bus = MessageBus('edge')
    held: List[tuple] = []
    rows: List[dict] = []
    error: Optional[Exception] = None
    diverged_at: Optional[float] = None

    logger.info(f"Running {cfg.scenario} for {cfg.duration_s}s at {cfg.control_rate_hz}Hz, N={cfg.horizon}, "
                f"seed={cfg.seed}")

    for k in tqdm(range(cfg.steps), desc=cfg.scenario, disable=not progress):
        t = clock.time_at(k * sub)
        onboard.launch_due(t)
        for msg in onboard.publish_odometry(t):
            up.send(msg, t)
        edge.on_messages(up.poll(t))

        try:
            decision = edge.step(k, t)
        except NonFiniteError as e:
            error, diverged_at = e, t
            break
        if decision is not None:
            command = edge_bus.stamp(decision.command, t)
            heapq.heappush(held, (t + cfg.solver_latency_s, command.seq, command))

        row = _tick_row(t, k, onboard, edge, decision)
        closest = math.inf
        try:
            for i in range(sub):
                s = clock.time_at(k * sub + i)
                while held and held[0][0] <= s:
                    send_at, _, command = heapq.heappop(held)
                    down.send(command, send_at)
                for echo in onboard.receive(down.poll(s)):
                    up.send(echo, echo.sent_at)
                _, distance = onboard.nearest_obstacle()
                closest = min(closest, distance)
                onboard.integrate(clock.resolution, s)
        except (NonFiniteError, OperatingRegimeError) as e:
            error, diverged_at = e, clock.time_at(k * sub + i)
            rows.append(row)
            break
        if math.isfinite(closest):
            row['obs_dist'] = closest
        rows.append(row)

    down.close()
    up.close()
    log = pd.DataFrame(rows, columns=LOG_COLUMNS)
    channel_stats = {
        ch.name: {'sent': ch.sent, 'delivered': ch.delivered, 'lost': ch.lost, 'pending': ch.pending}
        for ch in (down, up)
    }

    metrics = None
    if error is None:
        try:
            metrics = compute_metrics(log, cfg.transient_s, cfg.scenario, Ts)
        except EmptyLogError as e:
            logger.warning(f"No metrics for this run: {str(e)}")

    target = Path(out_dir or cfg.out_dir)
    summary = ScenarioSummary(
        status='diverged' if error is not None else 'completed',
        metrics=metrics,
        log_path=str(target / 'log.csv'),
        ticks=len(rows),
        error=str(error) if error is not None else None,
        diverged_at=diverged_at,
    )
    if write:
        write_outputs(target, log, summary)

    if error is not None:
        logger.error(f"Simulation diverged at t={diverged_at:.3f}s: {str(error)}")
        raise SimulationDivergedError(f"simulation diverged at t={diverged_at:.3f}s: {error}", diverged_at)

    logger.info(f"Finished {cfg.scenario}: rms_euclidean={metrics.rms_euclidean * 100:.2f}cm, "
                f"mean tau_hat={metrics.mean_delay_estimate * 1e3:.1f}ms" if metrics else
                f"Finished {cfg.scenario}")
    return ScenarioResult(cfg, log, metrics, summary, channel_stats)


def paired_runs(cfg: ScenarioConfig, out_dir: Optional[str] = None, progress: bool = False,
                include_obstacle_free: bool = False) -> Dict[str, ScenarioResult]:
    """With- and without-estimator runs of the same config (and the obstacle-free twin on request)."""
    base = Path(out_dir or cfg.out_dir)
    variants = {
        'with_estimator': cfg.with_overrides(scenario='obstacle' if cfg.scenario == 'obstacle' else 'track'),
        'without_estimator': cfg.with_overrides(scenario='track_no_estimator'),
    }
    if include_obstacle_free and cfg.launches:
        variants['obstacle_free'] = validate_config({**cfg.model_dump(), 'scenario': 'track', 'launches': []})
    return {label: run_scenario(variant, str(base / label), progress) for label, variant in variants.items()}


def log_digest(log: pd.DataFrame) -> str:
    """Stable hash of a log's CSV rendering, for determinism checks."""
    return hashlib.sha256(log.to_csv(index=False).encode()).hexdigest()


def summary_json(result: ScenarioResult) -> str:
    return json.dumps({'summary': json.loads(result.summary.model_dump_json()), 'channels': result.channel_stats},
                      indent=2)
