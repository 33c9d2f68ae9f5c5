"""Wall-clock workers for the two-process UDP mode.

    python -m src.services.worker --role edge --config configs/track.ini
    python -m src.services.worker --role onboard --config configs/track.ini

Bind and peer addresses default to PACED_BIND / PACED_PEER.
"""
import argparse
import logging
import os
import signal
import sys
import threading
import time
from pathlib import Path
from typing import List, Optional

import pandas as pd

from model.core.errors import ConfigError, NonFiniteError, OperatingRegimeError
from src.schemas.config_schemas import ScenarioConfig, TunnelSettings, load_config
from src.services.edge_controller import EdgeController
from src.services.harness import initial_state
from src.services.message_bus import INBOUND, OUTBOUND, MessageBus
from src.services.onboard import OnboardNode
from src.services.udp_tunnel import TunnelEndpoint, monotonic_seconds, parse_address

logger = logging.getLogger('worker')

DEFAULT_ADDRESSES = {
    'edge': ('127.0.0.1:9870', '127.0.0.1:9871'),
    'onboard': ('127.0.0.1:9871', '127.0.0.1:9870'),
}


class NodeWorker:
    role = 'node'
    tunnel_role = 'server'

    def __init__(self, cfg: ScenarioConfig, tunnel: TunnelSettings, install_signals: bool = True):
        self.cfg = cfg
        self.bus = MessageBus(self.role)
        self.endpoint = TunnelEndpoint(self.tunnel_role, tunnel, self.bus)
        self.running = True
        self.rows: List[dict] = []
        self.health_check_interval = 10
        self.health_path = os.environ.get('PACED_HEALTH_PATH', f'/tmp/paced_{self.role}_health.txt')
        self.degraded = False

        if install_signals and threading.current_thread() is threading.main_thread():
            signal.signal(signal.SIGINT, self.handle_shutdown)
            signal.signal(signal.SIGTERM, self.handle_shutdown)

        self.health_thread = threading.Thread(target=self.health_check_loop, daemon=True)

    def handle_shutdown(self, signum, frame):
        self.running = False

    def health_check_loop(self):
        while self.running:
            try:
                self.update_health_check_file()
            except Exception as e:
                logger.error(f"Health check error: {str(e)}")
            time.sleep(self.health_check_interval)

    def update_health_check_file(self):
        with open(self.health_path, 'w') as f:
            f.write(f"role: {self.role}\n")
            f.write(f"timestamp: {time.time()}\n")
            f.write(f"link: {'degraded' if self.endpoint.link_degraded() else 'up'}\n")
            f.write(f"stats: {self.endpoint.stats_line()}\n")

    def check_link(self, now: float):
        degraded = self.endpoint.link_degraded(now)
        if degraded != self.degraded:
            if degraded:
                logger.warning(f"{self.role}: tunnel link degraded")
            else:
                logger.info(f"{self.role}: tunnel link restored")
            self.degraded = degraded

    def tick(self, k: int, now: float, elapsed: float):
        raise NotImplementedError

    def run(self, out_dir: Optional[str] = None) -> bool:
        self.endpoint.start()
        self.health_thread.start()
        Ts = self.cfg.Ts
        start = monotonic_seconds()
        k = 0
        ok = True
        try:
            while self.running and k < self.cfg.steps:
                now = monotonic_seconds()
                self.tick(k, now, now - start)
                k += 1
                delay = start + k * Ts - monotonic_seconds()
                if delay > 0:
                    time.sleep(delay)
        except (NonFiniteError, OperatingRegimeError) as e:
            logger.error(f"{self.role} stopped after {k} ticks: {str(e)}")
            ok = False
        finally:
            self.running = False
            self.endpoint.stop()
            self.write_log(Path(out_dir or self.cfg.out_dir))
        return ok

    def write_log(self, out_dir: Path):
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f'{self.role}_log.csv'
        pd.DataFrame(self.rows).to_csv(path, index=False)
        logger.info(f"{self.role} wrote {len(self.rows)} rows to {path}")


class EdgeWorker(NodeWorker):
    role = 'edge'
    tunnel_role = 'server'

    def __init__(self, cfg: ScenarioConfig, tunnel: TunnelSettings, install_signals: bool = True):
        super().__init__(cfg, tunnel, install_signals)
        self.edge = EdgeController(cfg)

    def tick(self, k: int, now: float, elapsed: float):
        self.edge.on_messages(self.bus.drain(INBOUND))
        self.check_link(now)
        decision = self.edge.step(k, now)
        row = {'t': elapsed, 'tau_hat': self.edge.tau_hat, 'tau_sample': self.edge.tau_sample}
        if decision is not None:
            self.bus.publish(decision.command, now)
            p_hat = decision.prediction.p_hat
            row.update({
                'predx': p_hat[0], 'predy': p_hat[1], 'predz': p_hat[2],
                'F': decision.command.F, 'phid': decision.command.phi_d, 'thetad': decision.command.theta_d,
                'solver_iters': decision.solution.iterations,
                'solver_converged': int(decision.solution.converged),
            })
        self.rows.append(row)


class OnboardWorker(NodeWorker):
    role = 'onboard'
    tunnel_role = 'client'

    def __init__(self, cfg: ScenarioConfig, tunnel: TunnelSettings, install_signals: bool = True):
        super().__init__(cfg, tunnel, install_signals)
        self.node = OnboardNode(cfg, initial_state(cfg), self.bus)

    def tick(self, k: int, now: float, elapsed: float):
        self.node.launch_due(elapsed)
        for msg in self.node.publish_odometry(now):
            self.bus.put(OUTBOUND, msg)
        self.check_link(now)
        dt = self.cfg.Ts / self.cfg.substeps
        for i in range(self.cfg.substeps):
            if i:
                time.sleep(max(0.0, now + i * dt - monotonic_seconds()))
            s = monotonic_seconds()
            # the tunnel client echoes commands itself
            self.node.receive(self.bus.drain(INBOUND), echo=False)
            self.node.integrate(dt, s)
        state = self.node.state
        _, distance = self.node.nearest_obstacle()
        self.rows.append({
            't': elapsed,
            'px': state.p[0], 'py': state.p[1], 'pz': state.p[2],
            'vx': state.v[0], 'vy': state.v[1], 'vz': state.v[2],
            'phi': state.phi, 'theta': state.theta,
            'obs_dist': distance if distance != float('inf') else None,
            'safety': self.node.monitor.state.value,
        })


def tunnel_settings(role: str, bind: Optional[str] = None, peer: Optional[str] = None,
                    **extra) -> TunnelSettings:
    default_bind, default_peer = DEFAULT_ADDRESSES[role]
    bind = bind or os.environ.get('PACED_BIND', default_bind)
    peer = peer or os.environ.get('PACED_PEER', default_peer)
    return TunnelSettings(bind=parse_address(bind), peer=parse_address(peer), **extra)


def run_udp(role: str, cfg: ScenarioConfig, bind: Optional[str] = None, peer: Optional[str] = None,
            out_dir: Optional[str] = None) -> bool:
    settings = tunnel_settings(role, bind, peer)
    worker_cls = EdgeWorker if role == 'edge' else OnboardWorker
    logger.info(f"Starting {role} worker, bind {settings.bind}, peer {settings.peer}")
    return worker_cls(cfg, settings).run(out_dir)


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get('PACED_LOG_LEVEL', 'INFO'),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.StreamHandler()
        ]
    )
    parser = argparse.ArgumentParser(description="UDP-mode worker for the edge or onboard side")
    parser.add_argument("--role", choices=["edge", "onboard"], default=os.environ.get('PACED_ROLE', 'edge'))
    parser.add_argument("--config", type=str, help="Scenario INI file")
    parser.add_argument("--bind", type=str, help="HOST:PORT to bind")
    parser.add_argument("--peer", type=str, help="HOST:PORT of the other side")
    parser.add_argument("--out", type=str, help="Output directory")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        logger.error(str(e))
        return 1
    return 0 if run_udp(args.role, cfg, args.bind, args.peer, args.out) else 1


if __name__ == "__main__":
    sys.exit(main())
