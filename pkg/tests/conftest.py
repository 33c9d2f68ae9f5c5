import os
import shutil
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from model.core.dynamics import UavParams, UavState
from model.core.nmpc import McpBounds, McpWeights, OcpProblem, rollout
from model.core.solver import NmpcSolver
from src.schemas.config_schemas import DelayModelConfig, ScenarioConfig, validate_config
from src.services.message_bus import MessageBus

CONFIG_DIR = Path(__file__).parent.parent / "configs"


@pytest.fixture
def params():
    return UavParams()


@pytest.fixture
def frictionless():
    return UavParams(A=(0.0, 0.0, 0.0))


@pytest.fixture
def hover_state():
    return UavState.hover_at((0.0, 0.0, 1.0))


@pytest.fixture
def make_problem(params):
    """Builds an OcpProblem whose reference is the hover rollout unless one is given."""
    def _make(N=10, Ts=1.0 / 30.0, x0=None, ref=None, u_prev=None, weights=None, bounds=None,
              obstacles=None, u_hover=None, uav=None):
        uav = uav or params
        x0 = np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]) if x0 is None else np.asarray(x0, dtype=float)
        hover = np.array([uav.gravity, 0.0, 0.0]) if u_hover is None else np.asarray(u_hover, dtype=float)
        if ref is None:
            ref = rollout(x0, np.tile(hover, (N, 1)), uav, Ts)
        return OcpProblem(
            x0=x0,
            ref=np.asarray(ref, dtype=float),
            u_prev=hover.copy() if u_prev is None else np.asarray(u_prev, dtype=float),
            weights=weights or McpWeights(),
            bounds=bounds or McpBounds(),
            params=uav,
            N=N,
            Ts=Ts,
            obstacles=obstacles or [],
            u_hover=hover,
        )

    return _make


@pytest.fixture
def solver():
    return NmpcSolver()


@pytest.fixture
def message_bus():
    return MessageBus('test')


@pytest.fixture
def constant_delay():
    def _make(base, **kwargs):
        return DelayModelConfig(kind='constant', base=base, **kwargs)

    return _make


@pytest.fixture
def short_config():
    """A few seconds of circle tracking with a short horizon, cheap enough for unit runs."""
    def _make(**overrides):
        data = {
            'scenario': 'track',
            'duration_s': 2.0,
            'horizon': 10,
            'substeps': 2,
            'seed': 7,
            'transient_s': 0.5,
            'delay': {'kind': 'constant', 'base': 0.06},
        }
        data.update(overrides)
        return validate_config(data)

    return _make


@pytest.fixture
def default_config():
    return ScenarioConfig()


@pytest.fixture
def config_dir():
    return CONFIG_DIR


@pytest.fixture
def temp_dir():
    temp_path = Path(__file__).parent / "temp"
    os.makedirs(temp_path, exist_ok=True)
    yield temp_path

    shutil.rmtree(temp_path, ignore_errors=True)
