import pytest

from model.core.errors import ConfigError
from src.schemas.config_schemas import (
    DelayModelConfig,
    ScenarioConfig,
    config_from_ini,
    load_config,
    parse_value,
    validate_config,
)


class TestParseValue:
    @pytest.mark.parametrize('raw, expected', [
        ('42', 42),
        ('-3', -3),
        ('0.067', 0.067),
        ('1e-3', 0.001),
        ('true', True),
        ('Off', False),
        ('none', None),
        ('circle', 'circle'),
        ('8, 8, 20', [8, 8, 20]),
        ('2.0, -1.5,', [2.0, -1.5]),
    ])
    def test_values(self, raw, expected):
        assert parse_value(raw) == expected


class TestIni:
    def test_shipped_track(self, config_dir):
        cfg = load_config(str(config_dir / 'track.ini'))
        assert cfg.scenario == 'track'
        assert cfg.steps == 3600
        assert cfg.Ts == pytest.approx(1.0 / 30.0)
        assert cfg.delay.kind == 'random_walk'
        assert (cfg.delay.lower, cfg.delay.upper) == (0.04, 0.1)
        assert cfg.reference.kind == 'circle'
        assert cfg.out_dir == 'runs/track'

    def test_shipped_obstacle(self, config_dir):
        cfg = load_config(str(config_dir / 'obstacle.ini'))
        assert cfg.scenario == 'obstacle'
        assert [launch.t for launch in cfg.launches] == [20.0, 40.0]
        assert cfg.launches[0].relative
        assert cfg.launches[1].p0 == (-1.5, 1.5, 0.3)

    def test_shipped_zero_delay(self, config_dir):
        cfg = load_config(str(config_dir / 'zero_delay.ini'))
        down, up = cfg.link_models()
        assert down.nominal_mean == up.nominal_mean == 0.0

    def test_sections(self):
        cfg = config_from_ini(
            "[scenario]\nhorizon = 20\nblackouts = 1.0, 2.0, 5.0, 5.5\n"
            "[uav]\nm = 1.2\n"
            "[weights]\nQ_u = 1, 2, 3\n"
            "[solver]\nrho0 = 50\n"
            "[delay.up]\nkind = constant\nbase = 0.02\n"
            "[safety]\ntimeout_s = 0.3\n"
        )
        assert cfg.horizon == 20
        assert cfg.blackouts == [(1.0, 2.0), (5.0, 5.5)]
        assert cfg.uav.m == 1.2
        assert cfg.weights.Q_u == (1.0, 2.0, 3.0)
        assert cfg.solver.rho0 == 50
        assert cfg.safety.timeout_s == 0.3
        assert cfg.link_models()[1].base == 0.02

    def test_launch_order(self):
        cfg = config_from_ini(
            "[scenario]\nscenario = obstacle\n"
            "[launch.10]\nt = 9\np0 = 0, 0, 0\n"
            "[launch.2]\nt = 3\np0 = 1, 0, 0\n"
        )
        assert [launch.t for launch in cfg.launches] == [3.0, 9.0]

    def test_waypoint_file(self, temp_dir):
        (temp_dir / 'path.csv').write_text("time_s,x,y,z\n0,0,0,1\n2,1,0,1\n")
        cfg = config_from_ini("[reference]\nwaypoint_file = path.csv\n", temp_dir)
        assert cfg.reference.kind == 'waypoints'
        assert cfg.reference.waypoints[1] == (2.0, 1.0, 0.0, 1.0)

    def test_trace_path_relative(self, temp_dir):
        cfg = config_from_ini("[delay]\nkind = trace\ntrace_path = d.txt\n", temp_dir)
        assert cfg.delay.trace_path == str(temp_dir / 'd.txt')

    @pytest.mark.parametrize('text', [
        "[mystery]\na = 1\n",
        "[scenario]\nhorizon = 0\n",
        "[scenario]\nscenario = obstacle\n",
        "[scenario]\nblackouts = 1.0, 2.0, 3.0\n",
        "[scenario]\nblackouts = 2.0, 1.0\n",
        "[delay]\nlower = 0.2\nupper = 0.1\n",
        "[reference]\nwaypoint_file = missing.csv\n",
        "not an ini file",
    ])
    def test_rejected(self, text, temp_dir):
        with pytest.raises(ConfigError):
            config_from_ini(text, temp_dir)

    def test_missing_file(self, temp_dir):
        with pytest.raises(ConfigError):
            load_config(str(temp_dir / 'nope.ini'))


class TestScenarioConfig:
    def test_defaults(self, default_config):
        assert default_config.horizon == 60
        assert default_config.use_estimator
        assert default_config.steps == 3600

    def test_no_estimator(self):
        assert not ScenarioConfig(scenario='track_no_estimator').use_estimator

    def test_overrides(self, default_config):
        cfg = default_config.with_overrides(seed=3, out_dir=None)
        assert cfg.seed == 3
        assert cfg.out_dir == default_config.out_dir
        assert default_config.with_overrides() is default_config
        with pytest.raises(ConfigError):
            default_config.with_overrides(duration_s=-1.0)

    def test_link_split(self):
        cfg = validate_config({'delay': {'kind': 'constant', 'base': 0.06}, 'seed': 5})
        down, up = cfg.link_models()
        assert down.nominal_mean + up.nominal_mean == pytest.approx(0.06)
        assert down.nominal_mean == pytest.approx(0.03)
        assert (down.seed, up.seed) == (10, 11)

    def test_uneven_split(self):
        cfg = validate_config({'delay': {'kind': 'constant', 'base': 0.1}, 'downlink_share': 0.25})
        down, up = cfg.link_models()
        assert (down.nominal_mean, up.nominal_mean) == pytest.approx((0.025, 0.075))

    def test_explicit_links(self):
        cfg = validate_config({'delay_down': {'kind': 'constant', 'base': 0.01}})
        down, up = cfg.link_models()
        assert down.nominal_mean == 0.01
        assert up.nominal_mean == pytest.approx(0.5 * DelayModelConfig().nominal_mean)

    def test_reference_uses_control_rate(self):
        cfg = validate_config({'control_rate_hz': 50})
        assert cfg.reference_spec().Ts == pytest.approx(0.02)
