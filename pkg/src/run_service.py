#!/usr/bin/env python3
"""
Command-line entry point.

Usage:
    python -m src.run_service run --scenario track --config configs/track.ini --seed 7 --out runs/track
    python -m src.run_service run --udp edge --config configs/track.ini --bind 127.0.0.1:9870 --peer 127.0.0.1:9871
    python -m src.run_service metrics --log runs/track/log.csv
    python -m src.run_service plotdata --log runs/track/log.csv > tidy.csv
    python -m src.run_service compare --config configs/track.ini --out runs/compare
    python -m src.run_service tunnel --role server --bind 127.0.0.1:9870 --peer 127.0.0.1:9871 --rate 30
"""

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import pandas as pd

from model.core.dynamics import GRAVITY
from model.core.errors import ConfigError, EmptyLogError, SimulationDivergedError
from src.schemas.config_schemas import DelayModelConfig, load_config
from src.schemas.message_schemas import ControlCommand
from src.services.harness import paired_runs, run_scenario
from src.services.message_bus import MessageBus
from src.services.metrics import comparison_table, compute_metrics, plot_data
from src.services.udp_tunnel import STATS_HEADER, TunnelEndpoint, monotonic_seconds
from src.services.worker import run_udp, tunnel_settings

logger = logging.getLogger('paced')


def _scenario_name(value):
    return value.replace('-', '_') if value else None


class PacedCli:
    def __init__(self, args):
        self.args = args

    def _config(self):
        args = self.args
        return load_config(
            args.config,
            scenario=_scenario_name(getattr(args, 'scenario', None)),
            seed=getattr(args, 'seed', None),
            out_dir=getattr(args, 'out', None),
            duration_s=getattr(args, 'duration', None),
        )

    def run(self):
        cfg = self._config()
        if self.args.udp:
            return run_udp(self.args.udp, cfg, self.args.bind, self.args.peer, self.args.out)
        try:
            result = run_scenario(cfg, progress=self.args.progress)
        except SimulationDivergedError as e:
            print(f"Error: {e}")
            return False
        print(result.metrics.model_dump_json(indent=2) if result.metrics else result.summary.model_dump_json(indent=2))
        return True

    def metrics(self):
        log = pd.read_csv(self.args.log)
        metrics = compute_metrics(log, self.args.transient)
        print(metrics.model_dump_json(indent=2))
        return True

    def plotdata(self):
        log = pd.read_csv(self.args.log)
        plot_data(log).to_csv(sys.stdout, index=False)
        return True

    def compare(self):
        cfg = self._config()
        results = paired_runs(cfg, progress=self.args.progress, include_obstacle_free=self.args.obstacle_free)
        table = comparison_table({label: r.metrics for label, r in results.items() if r.metrics is not None})
        out_dir = Path(self.args.out or cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        table.to_csv(out_dir / 'comparison.csv', index=False)
        print(table.to_string(index=False, float_format=lambda v: f"{v:.2f}"))
        return True

    def tunnel(self):
        args = self.args
        role = 'edge' if args.role == 'server' else 'onboard'
        inject = None
        if args.inject_delay_ms:
            inject = DelayModelConfig(kind=args.inject_kind, base=args.inject_delay_ms / 1000.0,
                                      lower=0.0, upper=max(args.inject_delay_ms / 500.0, 0.001))
        settings = tunnel_settings(role, args.bind, args.peer, echo=args.echo == 'on',
                                   stats_interval=args.stats_interval, inject=inject)
        bus = MessageBus(f'tunnel-{args.role}')
        endpoint = TunnelEndpoint(args.role, settings, bus)
        endpoint.start()
        print(STATS_HEADER, flush=True)

        start = monotonic_seconds()
        next_probe = start
        next_stats = start + args.stats_interval
        sent = 0
        try:
            while args.duration is None or monotonic_seconds() - start < args.duration:
                now = monotonic_seconds()
                if args.role == 'server' and args.rate > 0 and (args.count is None or sent < args.count):
                    if now >= next_probe:
                        bus.publish(ControlCommand(GRAVITY, 0.0, 0.0), now)
                        sent += 1
                        next_probe += 1.0 / args.rate
                elif args.role == 'server' and args.count is not None and sent >= args.count:
                    time.sleep(max(settings.link_timeout, 0.5))
                    break
                bus.drain('inbound')
                if now >= next_stats:
                    print(endpoint.stats_line(now), flush=True)
                    next_stats += args.stats_interval
                time.sleep(0.001)
        except KeyboardInterrupt:
            pass
        finally:
            print(endpoint.stats_line(), flush=True)
            endpoint.stop()
        return True


def build_parser():
    parser = argparse.ArgumentParser(prog="paced", description="Delay-compensated NMPC flight stack")
    parser.add_argument("--log-level", type=str, default=os.environ.get('PACED_LOG_LEVEL', 'INFO'))
    subparsers = parser.add_subparsers(dest="command", help="Command to execute")

    run_parser = subparsers.add_parser("run", help="Run a closed-loop scenario")
    run_parser.add_argument("--scenario", choices=["track", "track-no-estimator", "obstacle"])
    run_parser.add_argument("--config", type=str, help="Scenario INI file")
    run_parser.add_argument("--seed", type=int)
    run_parser.add_argument("--out", type=str, help="Output directory")
    run_parser.add_argument("--duration", type=float, help="Override duration in seconds")
    run_parser.add_argument("--udp", choices=["edge", "onboard"], help="Run one side of the UDP two-process mode")
    run_parser.add_argument("--bind", type=str, help="HOST:PORT to bind (UDP mode)")
    run_parser.add_argument("--peer", type=str, help="HOST:PORT of the other side (UDP mode)")
    run_parser.add_argument("--progress", action="store_true", help="Show a progress bar")

    metrics_parser = subparsers.add_parser("metrics", help="Compute RMS metrics from a run log")
    metrics_parser.add_argument("--log", type=str, required=True)
    metrics_parser.add_argument("--transient", type=float, default=3.0, help="Seconds excluded at the start")

    plot_parser = subparsers.add_parser("plotdata", help="Emit tidy CSV for plotting")
    plot_parser.add_argument("--log", type=str, required=True)

    compare_parser = subparsers.add_parser("compare", help="Paired runs with and without the estimator")
    compare_parser.add_argument("--config", type=str)
    compare_parser.add_argument("--seed", type=int)
    compare_parser.add_argument("--out", type=str)
    compare_parser.add_argument("--duration", type=float)
    compare_parser.add_argument("--obstacle-free", action="store_true", help="Also run the obstacle-free twin")
    compare_parser.add_argument("--progress", action="store_true")

    tunnel_parser = subparsers.add_parser("tunnel", help="Standalone tunnel endpoint with probe traffic")
    tunnel_parser.add_argument("--role", choices=["server", "client"], required=True)
    tunnel_parser.add_argument("--bind", type=str)
    tunnel_parser.add_argument("--peer", type=str)
    tunnel_parser.add_argument("--echo", choices=["on", "off"], default="on")
    tunnel_parser.add_argument("--stats-interval", type=float, default=1.0)
    tunnel_parser.add_argument("--rate", type=float, default=30.0, help="Probe commands per second (server)")
    tunnel_parser.add_argument("--count", type=int, help="Stop after this many probes (server)")
    tunnel_parser.add_argument("--duration", type=float, help="Stop after this many seconds")
    tunnel_parser.add_argument("--inject-delay-ms", type=float, default=0.0)
    tunnel_parser.add_argument("--inject-kind", choices=["constant", "random_walk", "sinusoidal"],
                               default="constant")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=args.log_level.upper(),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.StreamHandler()
        ]
    )

    if not args.command:
        parser.print_help()
        return 1

    cli = PacedCli(args)
    try:
        if args.command == "run":
            return 0 if cli.run() else 1
        elif args.command == "metrics":
            return 0 if cli.metrics() else 1
        elif args.command == "plotdata":
            return 0 if cli.plotdata() else 1
        elif args.command == "compare":
            return 0 if cli.compare() else 1
        elif args.command == "tunnel":
            return 0 if cli.tunnel() else 1
    except (ConfigError, EmptyLogError) as e:
        print(f"Error: {e}")
        return 1
    except FileNotFoundError as e:
        print(f"Error: {e}")
        return 1

    parser.print_help()
    return 1


if __name__ == "__main__":
    sys.exit(main())
