import math
import pytest
import sys
import os
from dataclasses import fields

sys.path.append(os.path.join(os.path.dirname(__file__), "..", "src"))
from latency_model import (
    DEFAULT_PRESET,
    MEASURED,
    MODE_STAGES,
    PRESETS,
    STAGE_LABELS,
    LatencyParams,
    Mode,
    budget_table,
    compute_budget,
    parse_modes,
    preset,
    reduction_percent,
    reported_percent,
    stage_labels,
    stage_values,
)
from models import ConfigError


class TestBudgets:
    """Test the analytic per-mode totals"""

    def test_published_budget(self):
        """Default parameters: 374.5, 418.5 and 237 us"""
        params = LatencyParams()
        assert compute_budget(params, Mode.CLASSICAL_OEM).total_us == pytest.approx(374.5, abs=0.01)
        assert compute_budget(params, Mode.VIRTUAL_PON).total_us == pytest.approx(418.5, abs=0.01)
        assert compute_budget(params, Mode.FAST_INTERCEPT).total_us == pytest.approx(237.0, abs=0.01)

    def test_measured_preset(self):
        """Measured inputs give 237.5 us on the fast path"""
        params = preset("s3")
        assert compute_budget(params, Mode.FAST_INTERCEPT).total_us == pytest.approx(237.5, abs=0.01)
        assert compute_budget(params, Mode.CLASSICAL_OEM).total_us == pytest.approx(375.05, abs=0.01)
        assert compute_budget(params, Mode.VIRTUAL_PON).total_us == pytest.approx(417.01, abs=0.01)

    def test_virtual_adds_two_nic_crossings(self):
        params = LatencyParams()
        classical = compute_budget(params, Mode.CLASSICAL_OEM).total_us
        virtual = compute_budget(params, Mode.VIRTUAL_PON).total_us
        assert virtual - classical == pytest.approx(2 * params.nic_cpu_one_way)

    def test_total_is_sum_of_stages(self):
        for name, params in PRESETS.items():
            for mode in Mode:
                budget = compute_budget(params, mode)
                assert budget.total_us == math.fsum(v for _, v in budget.stages), name
                assert [label for label, _ in budget.stages] == list(stage_labels(mode))

    def test_fast_path_independent_of_cpu_stages(self):
        """CPU compute, collection window and NIC crossings are off the fast path"""
        base = compute_budget(LatencyParams(), Mode.FAST_INTERCEPT).total_us
        changed = LatencyParams(dba_compute=500.0, dba_window_mean=300.0, nic_cpu_one_way=99.0)
        assert compute_budget(changed, Mode.FAST_INTERCEPT).total_us == base

    @pytest.mark.parametrize(
        "field_name,label",
        [
            ("dba_compute", "e_dba_compute"),
            ("nic_cpu_one_way", "c_nic_to_cpu"),
            ("bwmap_modify", "f2_bwmap_modify"),
            ("dba_window_mean", "d_dba_window"),
        ],
    )
    def test_parameter_changes_only_modes_using_it(self, field_name, label):
        base = LatencyParams()
        changed = LatencyParams(**{field_name: getattr(base, field_name) + 10.0})
        for mode in Mode:
            delta = compute_budget(changed, mode).total_us - compute_budget(base, mode).total_us
            if label in MODE_STAGES[mode]:
                assert delta > 0
            else:
                assert delta == 0

    def test_head_start_hides_fast_compute(self):
        """With enough head start the serial addition is just the rewrite"""
        params = LatencyParams(fast_dba_compute=9.0, fast_head_start=8.0, bwmap_modify=2.0)
        assert params.fast_excess == 0.0
        slow = LatencyParams(fast_dba_compute=15.0, fast_head_start=8.0, bwmap_modify=2.0)
        assert slow.fast_excess == pytest.approx(5.0)
        budget = compute_budget(slow, Mode.FAST_INTERCEPT)
        assert budget.stage("f1_fast_excess") + budget.stage("f2_bwmap_modify") == pytest.approx(7.0)

    def test_draws_and_fiber_override(self):
        values = dict(
            stage_values(
                LatencyParams(),
                Mode.CLASSICAL_OEM,
                draws={"a_piggyback_wait": 1.0},
                fiber_one_way=10.0,
            )
        )
        assert values["a_piggyback_wait"] == 1.0
        assert values["b_fiber_up"] == values["h_fiber_down"] == 10.0


class TestReductions:
    """Test percentage reductions"""

    def test_published_reductions(self):
        params = LatencyParams()
        classical = compute_budget(params, Mode.CLASSICAL_OEM)
        virtual = compute_budget(params, Mode.VIRTUAL_PON)
        fast = compute_budget(params, Mode.FAST_INTERCEPT)
        assert reported_percent(reduction_percent(classical, fast)) == 37
        assert reported_percent(reduction_percent(virtual, fast)) == 43

    def test_measured_fast_total_reductions(self):
        """237.5 against 374.5 and 418.5"""
        params = LatencyParams()
        classical = compute_budget(params, Mode.CLASSICAL_OEM)
        virtual = compute_budget(params, Mode.VIRTUAL_PON)
        fast = compute_budget(preset("s3"), Mode.FAST_INTERCEPT)
        assert reduction_percent(classical, fast) == pytest.approx(36.58, abs=0.01)
        assert reduction_percent(virtual, fast) == pytest.approx(43.25, abs=0.01)
        assert reported_percent(reduction_percent(classical, fast)) == 37
        assert reported_percent(reduction_percent(virtual, fast)) == 43

    def test_identity(self):
        budget = compute_budget(LatencyParams(), Mode.VIRTUAL_PON)
        assert reduction_percent(budget, budget) == 0.0

    def test_rounds_half_up(self):
        assert reported_percent(36.5) == 37
        assert reported_percent(36.49) == 36


class TestParams:
    """Test presets and overrides"""

    def test_default_preset(self):
        assert DEFAULT_PRESET == "s2"
        assert preset("s2") == LatencyParams()

    def test_unknown_preset_lists_available(self):
        with pytest.raises(ConfigError, match="s2, s3"):
            preset("s9")

    def test_measured_constants(self):
        """Hardware timings are carried verbatim"""
        assert MEASURED == {
            "netdev_round_trip": 393.0,
            "dpdk_round_trip": 119.51,
            "nic_cpu_rtt": 41.96,
            "dba_compute": 77.55,
            "enf_total": 7.47,
            "bwmap_modify": 2.5,
        }
        s3 = preset("s3")
        assert s3.dba_compute == MEASURED["dba_compute"]
        assert s3.fast_dba_compute == MEASURED["enf_total"]
        assert s3.bwmap_modify == MEASURED["bwmap_modify"]
        assert 2 * s3.nic_cpu_one_way == pytest.approx(MEASURED["nic_cpu_rtt"])

    def test_negative_rejected(self):
        with pytest.raises(ConfigError) as excinfo:
            LatencyParams(fiber_one_way=-1.0)
        assert excinfo.value.key == "params.fiber_one_way"

    def test_overrides(self):
        params = LatencyParams().with_overrides(fiber_one_way=25.0)
        assert params.fiber_one_way == 25.0
        with pytest.raises(ConfigError):
            LatencyParams().with_overrides(warp_factor=9.0)

    def test_to_dict_covers_every_field(self):
        assert set(LatencyParams().to_dict()) == {f.name for f in fields(LatencyParams)}


class TestTables:
    def test_parse_modes(self):
        assert parse_modes("all") == [Mode.CLASSICAL_OEM, Mode.VIRTUAL_PON, Mode.FAST_INTERCEPT]
        assert parse_modes("fast, classical") == [Mode.FAST_INTERCEPT, Mode.CLASSICAL_OEM]
        with pytest.raises(ConfigError):
            parse_modes("quantum")

    def test_budget_table(self):
        """One row per mode with every stage column"""
        rows = budget_table(LatencyParams(), parse_modes("all"))
        assert [row["mode"] for row in rows] == ["classical", "virtual", "fast"]
        for row in rows:
            assert all(label in row for label in STAGE_LABELS)
        fast = rows[2]
        assert fast["total_us"] == pytest.approx(237.0)
        assert fast["reduction_vs_classical"] == 37
        assert fast["reduction_vs_virtual"] == 43
        assert fast["c_nic_to_cpu"] == 0.0
