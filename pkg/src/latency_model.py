"""
Upstream latency budget for the three deployments.

Stages, from a packet reaching the ONU queue to the ONU transmitting it:
  a  wait for a piggy-back opportunity        d  DBA collection window
  b  DBRu fibre propagation                   e  DBA computation
  c  NIC -> CPU (virtual deployments only)    f  wait for the next downstream map
  f1 fast computation not hidden by the head start
  f2 in-NIC map rewrite                       g  CPU -> NIC (virtual only)
  h  map fibre propagation                    i  offset of the grant in the frame
"""

import math
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

from models import ConfigError


class Mode(Enum):
    CLASSICAL_OEM = "classical"
    VIRTUAL_PON = "virtual"
    FAST_INTERCEPT = "fast"


STAGE_LABELS = (
    "a_piggyback_wait",
    "b_fiber_up",
    "c_nic_to_cpu",
    "d_dba_window",
    "e_dba_compute",
    "f_bwmap_wait",
    "f1_fast_excess",
    "f2_bwmap_modify",
    "g_cpu_to_nic",
    "h_fiber_down",
    "i_grant_offset",
)

# Stages drawn uniformly on [0, 2 * mean] by the simulator
STOCHASTIC_STAGES = {
    "a_piggyback_wait": "piggyback_wait_mean",
    "d_dba_window": "dba_window_mean",
    "f_bwmap_wait": "bwmap_wait_mean",
    "i_grant_offset": "grant_offset_mean",
}

MODE_STAGES = {
    Mode.CLASSICAL_OEM: (
        "a_piggyback_wait",
        "b_fiber_up",
        "d_dba_window",
        "e_dba_compute",
        "f_bwmap_wait",
        "h_fiber_down",
        "i_grant_offset",
    ),
    Mode.VIRTUAL_PON: (
        "a_piggyback_wait",
        "b_fiber_up",
        "c_nic_to_cpu",
        "d_dba_window",
        "e_dba_compute",
        "f_bwmap_wait",
        "g_cpu_to_nic",
        "h_fiber_down",
        "i_grant_offset",
    ),
    Mode.FAST_INTERCEPT: (
        "a_piggyback_wait",
        "b_fiber_up",
        "f_bwmap_wait",
        "f1_fast_excess",
        "f2_bwmap_modify",
        "h_fiber_down",
        "i_grant_offset",
    ),
}


@dataclass(frozen=True)
class LatencyParams:
    """Per-stage durations in microseconds. Defaults are the published budget."""

    frame_period: float = 125.0
    piggyback_wait_mean: float = 62.5
    fiber_one_way: float = 50.0
    nic_cpu_one_way: float = 22.0
    dba_window_mean: float = 62.5
    dba_compute: float = 77.0
    bwmap_wait_mean: float = 62.5
    fast_dba_compute: float = 7.55
    fast_head_start: float = 8.0
    bwmap_modify: float = 2.0
    grant_offset_mean: float = 10.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, (int, float)) or value < 0:
                raise ConfigError(
                    f"latency parameter {f.name} must be a non-negative number, got {value!r}",
                    key=f"params.{f.name}",
                )
        if self.frame_period <= 0:
            raise ConfigError("frame_period must be positive", key="params.frame_period")

    @property
    def fast_excess(self) -> float:
        # The fast computation includes the rewrite; only what outlasts both
        # the head start and the rewrite adds serially
        return max(0.0, self.fast_dba_compute - self.fast_head_start - self.bwmap_modify)

    def with_overrides(self, **overrides: float) -> "LatencyParams":
        known = {f.name for f in fields(self)}
        for key in overrides:
            if key not in known:
                raise ConfigError(f"unknown latency parameter {key!r}", key=f"params.{key}")
        return replace(self, **overrides)

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


PRESETS: Dict[str, LatencyParams] = {
    # Worked budget: 374.5 / 418.5 / 237 us
    "s2": LatencyParams(),
    # Measured on the DPDK + SmartNIC setup: 237.5 us on the fast path
    "s3": LatencyParams(
        nic_cpu_one_way=20.98,
        dba_compute=77.55,
        fast_dba_compute=7.47,
        bwmap_modify=2.5,
    ),
}
DEFAULT_PRESET = "s2"

# Hardware timings taken as model inputs, in microseconds
MEASURED = {
    "netdev_round_trip": 393.0,
    "dpdk_round_trip": 119.51,
    "nic_cpu_rtt": 41.96,
    "dba_compute": 77.55,
    "enf_total": 7.47,
    "bwmap_modify": 2.5,
}


def preset(name: str) -> LatencyParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; available presets: {', '.join(sorted(PRESETS))}",
            key="preset",
        ) from None


@dataclass(frozen=True)
class LatencyBudget:
    mode: Mode
    stages: Tuple[Tuple[str, float], ...]
    total_us: float

    def stage(self, label: str) -> float:
        return dict(self.stages).get(label, 0.0)


def stage_labels(mode: Mode) -> Tuple[str, ...]:
    return MODE_STAGES[mode]


def stage_values(
    params: LatencyParams,
    mode: Mode,
    draws: Optional[Mapping[str, float]] = None,
    fiber_one_way: Optional[float] = None,
) -> List[Tuple[str, float]]:
    """Stage durations for one mode; `draws` replaces the mean of stochastic stages"""
    fiber = params.fiber_one_way if fiber_one_way is None else fiber_one_way
    fixed = {
        "a_piggyback_wait": params.piggyback_wait_mean,
        "b_fiber_up": fiber,
        "c_nic_to_cpu": params.nic_cpu_one_way,
        "d_dba_window": params.dba_window_mean,
        "e_dba_compute": params.dba_compute,
        "f_bwmap_wait": params.bwmap_wait_mean,
        "f1_fast_excess": params.fast_excess,
        "f2_bwmap_modify": params.bwmap_modify,
        "g_cpu_to_nic": params.nic_cpu_one_way,
        "h_fiber_down": fiber,
        "i_grant_offset": params.grant_offset_mean,
    }
    if draws:
        fixed.update(draws)
    return [(label, fixed[label]) for label in MODE_STAGES[mode]]


def compute_budget(params: LatencyParams, mode: Mode) -> LatencyBudget:
    stages = tuple(stage_values(params, mode))
    return LatencyBudget(
        mode=mode,
        stages=stages,
        total_us=math.fsum(value for _, value in stages),
    )


def reduction_percent(budget_a: LatencyBudget, budget_b: LatencyBudget) -> float:
    """How much shorter b is than a, in percent"""
    if budget_a.total_us <= 0:
        raise ValueError(f"reference budget must be positive, got {budget_a.total_us}")
    return 100.0 * (1.0 - budget_b.total_us / budget_a.total_us)


def reported_percent(value: float) -> int:
    """Round half up, the way the figures are reported"""
    return math.floor(value + 0.5)


def parse_modes(spec: str) -> List[Mode]:
    """'all' or a comma list of mode names ('classical,fast')"""
    if spec.strip() == "all":
        return list(Mode)
    modes = []
    for name in spec.split(","):
        name = name.strip()
        try:
            modes.append(Mode(name))
        except ValueError:
            raise ConfigError(
                f"unknown mode {name!r}; choose from all, {', '.join(m.value for m in Mode)}",
                key="modes",
            ) from None
    return modes


def budget_table(params: LatencyParams, modes: Iterable[Mode]) -> List[Dict[str, object]]:
    """One row per mode: every stage column, the total and the reductions"""
    classical = compute_budget(params, Mode.CLASSICAL_OEM)
    virtual = compute_budget(params, Mode.VIRTUAL_PON)
    rows = []
    for mode in modes:
        budget = compute_budget(params, mode)
        row: Dict[str, object] = {"mode": mode.value}
        for label in STAGE_LABELS:
            row[label] = budget.stage(label)
        row["total_us"] = budget.total_us
        row["reduction_vs_classical"] = reported_percent(reduction_percent(classical, budget))
        row["reduction_vs_virtual"] = reported_percent(reduction_percent(virtual, budget))
        rows.append(row)
    return rows
