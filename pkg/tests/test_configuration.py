import json
import math
from pathlib import Path

import numpy as np
import pytest

from quasiergodic.configuration import OUTPUT_ENV_VAR, ExperimentConfig, load_config
from quasiergodic.errors import ConfigError, UnknownSystem

SETTINGS = Path(__file__).resolve().parents[1] / "experiment_settings.json"


def minimal(**sections):
    data = {"system": {"name": "harmonic_oscillator"}, "seeds": {"points": [[1.0, 0.0]]}}
    data.update(sections)
    return data


class TestSections:
    def test_defaults_fill_missing_keys(self):
        config = ExperimentConfig.from_dict(minimal())
        assert config.schedule == [100.0, 200.0, 400.0]
        assert config.tolerances["equivalence_cells"] == 2.0
        assert config.section("sensitivity")["probes"] == 8
        assert config.section("sensitivity")["saturation"] == 0.005

    def test_unknown_section_and_key(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(minimal(plots={}))
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(minimal(grid={"h": 0.1, "resolution": 0.1}))

    def test_required_values(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"seeds": {"points": [[1.0, 0.0]]}})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"system": {"name": "harmonic_oscillator"}})

    def test_sampler_needs_rng_seed(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(minimal(seeds={"sampler": "uniform", "count": 4}))

    @pytest.mark.parametrize("section", [
        {"horizons": {"schedule": [200.0, 100.0]}},
        {"tolerances": {"average_tol": 0.0}},
        {"grid": {"h": -0.1}},
        {"observables": [{"index": 0}]},
        {"sensitivity": {"eps_grid": [1e-4, 1e-2]}},
        {"sensitivity": {"eps_grid": []}},
        {"sensitivity": {"tail_window": [60.0, 20.0]}},
        {"sensitivity": {"max_hops": 0}},
        {"sensitivity": {"saturation": 1.5}},
        {"sensitivity": {"t_step": -1.0}},
        {"regularity": {"eps_grid": [0.0]}},
        {"regularity": {"delta_grid": ["wide"]}},
        {"regularity": {"t_grid": [-1.0]}},
        {"regularity": {"pair_budget": 0}},
        {"regularity": {"horizon": 0.0}},
    ])
    def test_invalid_values(self, section):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(minimal(**section))


class TestResolution:
    def test_shipped_settings_load(self):
        config = load_config(SETTINGS)
        system = config.build_system()
        assert system.name == "coupled_oscillators"
        assert system.integrator.method == "DOP853"
        assert [obs.name for obs in config.observables(system)] == ["I1", "I2", "q1^2"]
        assert config.seed_points(system).shape == (2, 4)

    def test_overrides_replace_keys(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps(minimal(grid={"h": 0.1})))
        config = load_config(path, {"grid": {"h": 0.05}, "system": {"params": {"omega": 2.0}}})
        system = config.build_system()
        assert config.grid_h(system) == 0.05
        assert system.parameters["omega"] == 2.0

    def test_missing_and_broken_files(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.json")
        broken = tmp_path / "broken.json"
        broken.write_text("{")
        with pytest.raises(ConfigError):
            load_config(broken)

    def test_unknown_system(self):
        with pytest.raises(UnknownSystem):
            ExperimentConfig.from_dict(minimal(system={"name": "duffing"})).build_system()

    def test_integrator_defaults(self):
        integrator = ExperimentConfig.from_dict(minimal()).integrator()
        assert integrator.max_step == math.inf
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(minimal(integrator={"method": "Euler"})).integrator()

    def test_default_grid_follows_the_box(self, oscillator):
        config = ExperimentConfig.from_dict(minimal())
        assert config.grid_h(oscillator) == pytest.approx(oscillator.space.scale / 200)

    def test_sampled_seeds_are_reproducible(self, oscillator):
        config = ExperimentConfig.from_dict(minimal(seeds={"sampler": "uniform", "count": 5, "rng_seed": 7}))
        first = config.seed_points(oscillator)
        assert first.shape == (5, 2)
        assert np.array_equal(first, config.seed_points(oscillator))

    def test_seed_dimension_checked(self, oscillator):
        config = ExperimentConfig.from_dict(minimal(seeds={"points": [[1.0, 0.0, 0.0]]}))
        with pytest.raises(ConfigError):
            config.seed_points(oscillator)


class TestOutputDirectory:
    def test_configured_directory_wins(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_ENV_VAR, str(tmp_path / "env"))
        config = ExperimentConfig.from_dict(minimal(output={"directory": str(tmp_path / "cfg")}))
        assert config.output_directory() == tmp_path / "cfg"
        assert (tmp_path / "cfg").is_dir()

    def test_environment_variable(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_ENV_VAR, str(tmp_path / "env"))
        assert ExperimentConfig.from_dict(minimal()).output_directory() == tmp_path / "env"

    def test_per_user_fallback(self, tmp_path, monkeypatch):
        monkeypatch.delenv(OUTPUT_ENV_VAR, raising=False)
        monkeypatch.setattr(Path, "home", classmethod(lambda cls: tmp_path))
        path = ExperimentConfig.from_dict(minimal()).output_directory()
        assert path.name == "runs"
        assert path.parent.name == "quasiergodic"
        assert tmp_path in path.parents
