import json
import pytest
import sys
import os

sys.path.append(os.path.join(os.path.dirname(__file__), "..", "src"))
from config import ConfigError, build_scenario, load_document, load_scenario, load_sweep
from latency_model import Mode, preset
from models import TcontClass
from sim_engine import Scenario

MINIMAL = {
    "onus": [{"onu_id": 1, "alloc_ids": [{"alloc_id": 5, "class": "low_latency"}]}],
    "traffic": [{"alloc_id": 5, "period_us": 1000}],
}


def write_config(tmp_path, doc, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=2))
    return path


class TestLoadDocument:
    """Test strict key validation"""

    def test_unknown_top_level_key(self):
        text = '{\n  "seed": 1,\n  "sed": 2\n}'
        with pytest.raises(ConfigError) as excinfo:
            load_document(text)
        assert excinfo.value.key == "sed"
        assert excinfo.value.line == 3

    def test_unknown_nested_key(self):
        """Nested keys are reported with their dotted path"""
        text = json.dumps({"dba": {"reserved_fraction": 0.1, "reserve": 0.2}}, indent=2)
        with pytest.raises(ConfigError) as excinfo:
            load_document(text)
        assert excinfo.value.key == "dba.reserve"
        assert excinfo.value.line == 4

    def test_unknown_key_in_list_item(self):
        doc = {"onus": [{"onu_id": 1, "alloc_ids": [{"alloc_id": 5, "klass": "assured"}]}]}
        with pytest.raises(ConfigError) as excinfo:
            load_document(json.dumps(doc))
        assert excinfo.value.key == "onus.alloc_ids.klass"

    def test_wrong_type(self):
        with pytest.raises(ConfigError, match="expected int"):
            load_document('{"seed": "seven"}')

    def test_bool_is_not_an_int(self):
        with pytest.raises(ConfigError):
            load_document('{"seed": true}')

    def test_int_accepted_as_float(self):
        assert load_document('{"dba": {"reserved_fraction": 0}}') == {"dba": {"reserved_fraction": 0}}

    def test_invalid_json(self):
        with pytest.raises(ConfigError) as excinfo:
            load_document('{\n  "seed": 1,\n}')
        assert excinfo.value.line == 3


class TestBuildScenario:
    """Test turning documents into scenarios"""

    def test_minimal_defaults(self):
        scenario = build_scenario(MINIMAL)
        assert scenario.mode == Mode.FAST_INTERCEPT
        assert scenario.seed == 1
        assert scenario.duration_frames == 1000
        assert scenario.params == preset("s2")
        assert scenario.onus[0].alloc_ids[0].tcont_class == TcontClass.LOW_LATENCY
        assert scenario.dba_cfg.reserved_fraction == 0.1

    def test_preset_and_param_overrides(self):
        doc = dict(MINIMAL, preset="s3", params={"fiber_one_way": 25.0})
        scenario = build_scenario(doc)
        assert scenario.params.dba_compute == 77.55
        assert scenario.params.fiber_one_way == 25.0

    def test_unknown_param(self):
        doc = dict(MINIMAL, params={"warp": 1.0})
        text = json.dumps(doc, indent=2)
        with pytest.raises(ConfigError) as excinfo:
            build_scenario(load_document(text), text)
        assert excinfo.value.key == "params.warp"
        assert excinfo.value.line is not None

    def test_arguments_override_file(self):
        doc = dict(MINIMAL, seed=3, pin_variance=False, mode="classical")
        scenario = build_scenario(doc, seed=9, pin_variance=True, mode=Mode.VIRTUAL_PON, preset_name="s3")
        assert (scenario.seed, scenario.pin_variance, scenario.mode) == (9, True, Mode.VIRTUAL_PON)
        assert scenario.params == preset("s3")

    def test_unknown_mode(self):
        with pytest.raises(ConfigError, match="unknown mode"):
            build_scenario(dict(MINIMAL, mode="turbo"))

    def test_unknown_class(self):
        doc = {"onus": [{"onu_id": 1, "alloc_ids": [{"alloc_id": 5, "class": "platinum"}]}]}
        with pytest.raises(ConfigError) as excinfo:
            build_scenario(doc)
        assert excinfo.value.key == "onus.alloc_ids.class"

    def test_out_of_range_value_located(self):
        doc = dict(MINIMAL, dba={"reserved_fraction": 2.0})
        text = json.dumps(doc, indent=2)
        with pytest.raises(ConfigError) as excinfo:
            build_scenario(load_document(text), text)
        assert excinfo.value.key == "dba.reserved_fraction"
        assert excinfo.value.line is not None

    def test_alloc_weight_feeds_dba(self):
        doc = {
            "onus": [{"onu_id": 1, "alloc_ids": [{"alloc_id": 5, "class": "assured", "weight": 4}]}],
            "dba": {"weights": {"assured": 3}},
        }
        scenario = build_scenario(doc)
        assert scenario.dba_cfg.alloc_weights == {5: 4.0}
        assert scenario.dba_cfg.weights[TcontClass.ASSURED] == 3.0

    def test_short_duration(self):
        with pytest.raises(ConfigError, match="duration_frames"):
            build_scenario(dict(MINIMAL, duration_frames=2))


class TestFiles:
    """Test loading from disk"""

    def test_shipped_configs_load(self, configs_dir):
        for name in ("default.json", "measured.json"):
            assert isinstance(load_scenario(configs_dir / name), Scenario)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_scenario(tmp_path / "nope.json")

    def test_sweep_entries(self, configs_dir):
        entries = load_sweep(configs_dir / "sweep.json")
        assert len(entries) == 6
        assert all(isinstance(e, Scenario) for e in entries)
        assert entries[0].mode == Mode.CLASSICAL_OEM
        assert entries[3].dba_cfg.reserved_fraction == 0.01
        assert entries[4].policy.preempt_enabled
        assert entries[2].name == "reserve-2"

    def test_bad_sweep_entry_kept_in_place(self, tmp_path):
        doc = dict(MINIMAL, sweep=[{"seed": 2}, {"colour": "red"}, {"reserved_fraction": 5.0}, {"mode": "virtual"}])
        entries = load_sweep(write_config(tmp_path, doc))
        assert isinstance(entries[0], Scenario)
        assert isinstance(entries[1], ConfigError)
        assert entries[1].key == "sweep.colour"
        assert isinstance(entries[2], ConfigError)
        assert entries[3].mode == Mode.VIRTUAL_PON

    def test_file_without_sweep_is_one_entry(self, tmp_path):
        entries = load_sweep(write_config(tmp_path, MINIMAL))
        assert len(entries) == 1
