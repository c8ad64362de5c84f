import os
import sys
from pathlib import Path

import pytest

sys.path.append(os.path.join(os.path.dirname(__file__), "..", "src"))
from dba_standard import DbaConfig
from fast_intercept import InterceptPolicy
from latency_model import PRESETS, Mode
from models import AllocIdSpec, OnuSpec, TcontClass
from sim_engine import Scenario, TrafficStream

TESTDATA = Path(__file__).resolve().parent.parent / "testdata"
CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def testdata_dir():
    return TESTDATA


@pytest.fixture
def configs_dir():
    return CONFIGS


@pytest.fixture
def mixed_onus():
    """Two ONUs, each with one low-latency and one other T-CONT"""
    return [
        OnuSpec(
            onu_id=1,
            alloc_ids=[
                AllocIdSpec(256, TcontClass.LOW_LATENCY),
                AllocIdSpec(257, TcontClass.BEST_EFFORT),
            ],
        ),
        OnuSpec(
            onu_id=2,
            alloc_ids=[
                AllocIdSpec(258, TcontClass.LOW_LATENCY),
                AllocIdSpec(259, TcontClass.ASSURED),
            ],
        ),
    ]


@pytest.fixture
def single_packet_scenario():
    """Build a one-packet scenario with every stochastic stage pinned"""

    def build(mode: Mode, preset: str = "s3", **overrides) -> Scenario:
        fields = dict(
            onus=[OnuSpec(1, [AllocIdSpec(5, TcontClass.LOW_LATENCY)])],
            traffic=[TrafficStream(alloc_id=5, period_us=1e9, offset_us=10.0, count=1)],
            seed=1,
            duration_frames=10,
            params=PRESETS[preset],
            mode=mode,
            pin_variance=True,
            name=f"single-{mode.value}",
        )
        fields.update(overrides)
        return Scenario(**fields)

    return build


@pytest.fixture
def loaded_scenario(mixed_onus):
    """Low-latency plus background load on both ONUs"""
    return Scenario(
        onus=mixed_onus,
        traffic=[
            TrafficStream(alloc_id=256, rate_pps=4000, packet_bytes=100),
            TrafficStream(alloc_id=258, rate_pps=4000, packet_bytes=200),
            TrafficStream(alloc_id=257, rate_pps=8000, packet_bytes=1500),
            TrafficStream(alloc_id=259, rate_pps=4000, packet_bytes=1000),
        ],
        seed=42,
        duration_frames=400,
        dba_cfg=DbaConfig(),
        policy=InterceptPolicy(),
        mode=Mode.FAST_INTERCEPT,
        name="loaded",
    )
