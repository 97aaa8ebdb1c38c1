"""
Unit tests for config.py - run file parsing and validation

Run with: uv run pytest tests/ -v
"""

import json
import tempfile

import pytest
from pathlib import Path

import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from config import (
    ConfigError,
    config_from_dict,
    config_hash,
    config_to_dict,
    parse_config,
    validate_choice,
    validate_float,
    validate_int,
    validate_momentum,
    write_resolved,
)


def minimal():
    return {
        "cell": {"shape": "triangular", "n_cells_x": 4, "n_cells_y": 4, "r_s": 10.0, "nu_m": 0.25},
        "hamiltonian": {"v_m_over_w": 2.0},
    }


class TestValidators:
    """Tests for the field validators"""

    def test_int(self):
        assert validate_int(3, 1) == (True, 3, "")
        assert not validate_int(True)[0]
        assert not validate_int(2.5)[0]
        assert "at least 2" in validate_int(1, 2)[2]

    def test_float(self):
        assert validate_float(2) == (True, 2.0, "")
        assert not validate_float(float("nan"))[0]
        assert not validate_float(0.0, positive=True)[0]
        assert not validate_float(-1.0, non_negative=True)[0]

    def test_choice_normalizes(self):
        assert validate_choice(" BCS ", ("slater", "bcs")) == (True, "bcs", "")
        assert not validate_choice("jastrow", ("slater", "bcs"))[0]

    def test_momentum(self):
        assert validate_momentum(0.0)[0]
        assert not validate_momentum(1.0)[0]


class TestConfigFromDict:
    """Tests for config_from_dict"""

    def test_defaults_filled(self):
        config = config_from_dict(minimal())
        assert config.cell.n_up == 4 and config.cell.n_down == 4
        assert config.hamiltonian.r_s == 10.0
        assert config.hamiltonian.phi_degrees == 60.0
        assert config.ansatz.mode == "slater"
        assert config.ansatz.pair_width == 26
        assert config.optimizer.momentum == 0.9
        assert config.sampler.walkers == 1024
        assert config.sampler.warmup_sweeps == 2000
        assert config.phases == ("train",)

    def test_odd_electron_count_puts_extra_up(self):
        raw = minimal()
        raw["cell"].update(n_cells_x=3, n_cells_y=3, nu_m=0.5)
        config = config_from_dict(raw)
        assert (config.cell.n_up, config.cell.n_down) == (5, 4)

    def test_unknown_key(self):
        raw = minimal()
        raw["sampler"] = {"walkers": 8, "stepsize": 0.1}
        with pytest.raises(ConfigError, match="sampler.stepsize: unknown key"):
            config_from_dict(raw)

    def test_unknown_top_level_key(self):
        raw = minimal()
        raw["verbose"] = True
        with pytest.raises(ConfigError, match="verbose: unknown key"):
            config_from_dict(raw)

    def test_missing_section(self):
        raw = minimal()
        del raw["cell"]
        with pytest.raises(ConfigError, match="cell: required section"):
            config_from_dict(raw)

    def test_missing_moire_depth(self):
        raw = minimal()
        raw["hamiltonian"] = {"phi_degrees": 60.0}
        with pytest.raises(ConfigError, match="hamiltonian.v_m_over_w"):
            config_from_dict(raw)

    def test_errors_are_collected(self):
        raw = minimal()
        raw["sampler"] = {"walkers": 1, "init": "grid"}
        with pytest.raises(ConfigError) as excinfo:
            config_from_dict(raw)
        assert len(excinfo.value.errors) == 2

    def test_inconsistent_electron_count(self):
        raw = minimal()
        raw["cell"].update(n_up=5, n_down=4)
        with pytest.raises(ConfigError, match="inconsistent"):
            config_from_dict(raw)

    def test_one_spin_count_given(self):
        raw = minimal()
        raw["cell"]["n_up"] = 4
        with pytest.raises(ConfigError, match="both n_up and n_down"):
            config_from_dict(raw)

    def test_bcs_needs_balanced_spins(self):
        raw = minimal()
        raw["cell"].update(n_cells_x=3, n_cells_y=3, nu_m=0.5)
        raw["ansatz"] = {"mode": "bcs"}
        with pytest.raises(ConfigError, match="bcs needs n_up == n_down"):
            config_from_dict(raw)

    def test_schema_version(self):
        raw = minimal()
        raw["schema_version"] = 2
        with pytest.raises(ConfigError, match="schema_version"):
            config_from_dict(raw)

    def test_momentum_out_of_range(self):
        raw = minimal()
        raw["optimizer"] = {"momentum": 1.0}
        with pytest.raises(ConfigError, match="optimizer.momentum"):
            config_from_dict(raw)

    def test_widths_become_tuples(self):
        raw = minimal()
        raw["ansatz"] = {"jastrow_widths": [16, 1]}
        assert config_from_dict(raw).ansatz.jastrow_widths == (16, 1)


class TestParseConfig:
    """Tests for parse_config and the resolved copy"""

    def test_json_error_has_line_and_column(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "config.json"
            path.write_text('{\n  "cell": {,\n}\n')
            with pytest.raises(ConfigError, match=r"config.json:2:\d+"):
                parse_config(path)

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="cannot read"):
            parse_config(Path("/nonexistent/config.json"))

    def test_resolved_copy_reparses(self):
        config = config_from_dict(minimal())
        with tempfile.TemporaryDirectory() as tmpdir:
            path = write_resolved(config, Path(tmpdir) / "run" / "config.resolved.json")
            assert parse_config(path) == config
            assert json.loads(path.read_text())["sampler"]["walkers"] == 1024

    def test_hash_is_stable(self):
        a = config_from_dict(minimal())
        b = config_from_dict(config_to_dict(a))
        assert config_hash(a) == config_hash(b)
        raw = minimal()
        raw["seed"] = 1
        assert config_hash(config_from_dict(raw)) != config_hash(a)
