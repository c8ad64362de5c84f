"""
Frame-synchronous simulator of the upstream scheduling pipeline.

A simpy process ticks once per downstream frame. Each tick runs one scheduling
cycle end to end: new packets join the ONU queues, polled Alloc-IDs report
their occupancy in upstream bursts, the bursts pass the eNF (fast-path
deployments) on their way to the CPU DBA, the DBA's map is rewritten by the eNF,
crosses the wire codec, and the ONUs spend their grants on queued packets.

One cycle is collapsed into one tick. A packet's latency is the sum of the
stage durations of the path that carried its last byte, plus one frame period
for every extra cycle it waited because earlier grants were too small.
"""

import asyncio
import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Deque, Dict, List, Optional, Union

import numpy as np
import simpy

from dba_standard import DbaConfig, DemandLedger, StandardDba
from fast_intercept import (
    FastInterceptNf,
    InterceptPolicy,
    check_no_double_grant,
    fast_path_viable,
)
from latency_model import (
    STAGE_LABELS,
    STOCHASTIC_STAGES,
    LatencyParams,
    Mode,
    stage_values,
)
from models import (
    FAST_ORIGINS,
    MAX_U32,
    MIN_GRANT_BYTES,
    Allocation,
    Bwmap,
    ConfigError,
    Dbru,
    GrantOrigin,
    InvariantViolation,
    OnuSpec,
    TcontClass,
    UpstreamBurst,
    class_map,
)
from pon_codec import decode_burst, decode_bwmap, encode_burst, encode_bwmap
from run_stats import ClassSummary, summarize

logger = logging.getLogger(__name__)

BACKLOG_LABEL = "backlog"
BREAKDOWN_LABELS = STAGE_LABELS + (BACKLOG_LABEL,)


@dataclass
class TrafficStream:
    """Arrivals for one Alloc-ID: Poisson at rate_pps, or one packet every period_us"""

    alloc_id: int
    rate_pps: float = 0.0
    packet_bytes: int = 100
    period_us: Optional[float] = None
    offset_us: float = 0.0
    count: Optional[int] = None

    def validate(self) -> None:
        if self.packet_bytes < 1:
            raise ConfigError("packet_bytes must be at least 1", key="traffic.packet_bytes")
        if self.period_us is not None and self.period_us <= 0:
            raise ConfigError("period_us must be positive", key="traffic.period_us")
        if self.period_us is None and self.rate_pps < 0:
            raise ConfigError("rate_pps must not be negative", key="traffic.rate_pps")
        if self.offset_us < 0:
            raise ConfigError("offset_us must not be negative", key="traffic.offset_us")
        if self.count is not None and self.count < 0:
            raise ConfigError("count must not be negative", key="traffic.count")


@dataclass
class Scenario:
    onus: List[OnuSpec]
    traffic: List[TrafficStream]
    seed: int = 1
    duration_frames: int = 1000
    dba_cfg: DbaConfig = field(default_factory=DbaConfig)
    policy: InterceptPolicy = field(default_factory=InterceptPolicy)
    params: LatencyParams = field(default_factory=LatencyParams)
    mode: Mode = Mode.FAST_INTERCEPT
    # Stochastic stages take their means
    pin_variance: bool = False
    queue_depth_bytes: Optional[int] = None
    drain_frames: int = 16
    max_packets: Optional[int] = None
    # Keep the encoded BWmaps of the first N frames
    capture_frames: int = 0
    name: str = ""

    def validate(self) -> None:
        if self.duration_frames < 10:
            raise ConfigError(
                f"duration_frames must be at least 10, got {self.duration_frames}",
                key="duration_frames",
            )
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer", key="seed")
        if self.drain_frames < 0:
            raise ConfigError("drain_frames must not be negative", key="drain_frames")
        if self.capture_frames < 0:
            raise ConfigError("capture_frames must not be negative", key="capture_frames")
        if self.queue_depth_bytes is not None and self.queue_depth_bytes < 1:
            raise ConfigError("queue_depth_bytes must be positive", key="queue_depth_bytes")
        try:
            classes = class_map(self.onus)
        except InvariantViolation as e:
            raise ConfigError(str(e), key="onus") from None
        onu_ids = [onu.onu_id for onu in self.onus]
        if len(set(onu_ids)) != len(onu_ids):
            raise ConfigError("onu_id declared more than once", key="onus.onu_id")
        for stream in self.traffic:
            stream.validate()
            if stream.alloc_id not in classes:
                raise ConfigError(
                    f"traffic stream references undeclared Alloc-ID {stream.alloc_id}",
                    key="traffic.alloc_id",
                )
            if (
                self.queue_depth_bytes is not None
                and stream.packet_bytes > self.queue_depth_bytes
            ):
                raise ConfigError(
                    f"packet of {stream.packet_bytes} bytes never fits a queue of "
                    f"{self.queue_depth_bytes} bytes",
                    key="traffic.packet_bytes",
                )


@dataclass
class PacketSample:
    alloc_id: int
    tcont_class: TcontClass
    arrival_us: float
    transmit_us: float
    path: Mode
    stages: Dict[str, float]

    @property
    def latency_us(self) -> float:
        return self.transmit_us - self.arrival_us


@dataclass
class RunResult:
    scenario_name: str
    mode: Mode
    seed: int
    samples: List[PacketSample]
    summary: Dict[TcontClass, ClassSummary]
    frames: int = 0
    dropped_packets: int = 0
    unserved_packets: int = 0
    store_dropped: int = 0
    low_latency_reports: int = 0
    prompt_fast_grants: int = 0
    fast_path_viable: bool = True
    # Frames in which the CPU DBA was asked to serve low-latency demand
    fallback_frames: int = 0
    wire_frames: List[bytes] = field(default_factory=list)


@dataclass
class _Packet:
    seq: int
    alloc_id: int
    arrival_us: float
    arrival_frame: int
    size: int
    draws: Dict[str, float]
    remaining: int = 0

    def __post_init__(self):
        self.remaining = self.size


class _Onu:
    def __init__(self, spec: OnuSpec):
        self.spec = spec
        self.queues: Dict[int, Deque[_Packet]] = {a.alloc_id: deque() for a in spec.alloc_ids}
        self.queued: Dict[int, int] = {a.alloc_id: 0 for a in spec.alloc_ids}
        self.sent_last_frame = 0


class PonSimulation:
    """One run of one scenario. Not thread-safe; build one per run."""

    def __init__(self, scenario: Scenario):
        scenario.validate()
        self.scenario = scenario
        self.params = scenario.params
        self.period = scenario.params.frame_period
        self.rng = np.random.default_rng(scenario.seed)
        self.classes = class_map(scenario.onus)
        self.onus = [_Onu(spec) for spec in scenario.onus]
        self.onu_by_alloc = {a: onu for onu in self.onus for a in onu.queues}

        self.viable = True
        cfg = scenario.dba_cfg
        self.enf: Optional[FastInterceptNf] = None
        if scenario.mode == Mode.FAST_INTERCEPT:
            self.viable = fast_path_viable(cfg.reserved_bytes, scenario.policy)
            if self.viable:
                cfg = replace(cfg, low_latency_exclusive=True)
                self.enf = FastInterceptNf(self.classes, scenario.policy, cfg.frame_capacity_bytes)
            else:
                logger.warning(
                    f"Scenario {scenario.name or scenario.seed}: no reserved window and "
                    "preemption off, low-latency traffic falls back to the CPU DBA"
                )
        if self.enf is None:
            cfg = replace(cfg, reserved_fraction=0.0, low_latency_exclusive=False)
        self.cfg = cfg
        self.dba = StandardDba(DemandLedger.from_onus(scenario.onus), cfg)
        self.standard_path = (
            Mode.CLASSICAL_OEM if scenario.mode == Mode.CLASSICAL_OEM else Mode.VIRTUAL_PON
        )

        self.samples: List[PacketSample] = []
        self.previous_map: Optional[Bwmap] = None
        # keyed by stream index; several streams may feed one Alloc-ID
        self.next_arrival: Dict[int, float] = {}
        self.generated: Dict[int, int] = {}
        self.packets_total = 0
        self.dropped = 0
        self.low_latency_reports = 0
        self.prompt_fast_grants = 0
        self.fallback_frames = 0
        self.wire_frames: List[bytes] = []
        self.frames = 0

    # arrivals

    def _draws(self, count: int) -> List[Dict[str, float]]:
        means = {label: getattr(self.params, attr) for label, attr in STOCHASTIC_STAGES.items()}
        if self.scenario.pin_variance:
            return [dict(means) for _ in range(count)]
        labels = list(means)
        scale = np.array([2.0 * means[label] for label in labels])
        matrix = self.rng.uniform(size=(count, len(labels))) * scale
        return [dict(zip(labels, (float(v) for v in row))) for row in matrix]

    def _arrival_times(self, index: int, stream: TrafficStream, frame_start: float) -> List[float]:
        frame_end = frame_start + self.period
        if stream.period_us is not None:
            t = self.next_arrival.get(index, stream.offset_us)
            times = []
            while t < frame_end:
                if t >= frame_start:
                    times.append(t)
                t += stream.period_us
            self.next_arrival[index] = t
            return times
        lam = stream.rate_pps * self.period * 1e-6
        count = int(self.rng.poisson(lam)) if lam > 0 else 0
        return sorted(frame_start + float(x) for x in self.rng.uniform(0.0, self.period, count))

    def _generate_arrivals(self, frame_sn: int) -> None:
        frame_start = frame_sn * self.period
        cap = self.scenario.max_packets
        arrivals = []
        for index, stream in enumerate(self.scenario.traffic):
            times = self._arrival_times(index, stream, frame_start)
            if stream.count is not None:
                times = times[: max(0, stream.count - self.generated.get(index, 0))]
            if cap is not None:
                times = times[: max(0, cap - self.packets_total)]
            if not times:
                continue
            self.generated[index] = self.generated.get(index, 0) + len(times)
            self.packets_total += len(times)
            arrivals.extend(
                (t, index, stream, draws) for t, draws in zip(times, self._draws(len(times)))
            )

        # streams sharing an Alloc-ID interleave in time order
        arrivals.sort(key=lambda item: (item[0], item[1]))
        depth = self.scenario.queue_depth_bytes
        first_seq = self.packets_total - len(arrivals) + 1
        for seq, (t, _, stream, draws) in enumerate(arrivals, first_seq):
            onu = self.onu_by_alloc[stream.alloc_id]
            if depth is not None and onu.queued[stream.alloc_id] + stream.packet_bytes > depth:
                self.dropped += 1
                logger.debug(f"Frame {frame_sn}: queue {stream.alloc_id} full, packet dropped")
                continue
            onu.queues[stream.alloc_id].append(
                _Packet(
                    seq=seq,
                    alloc_id=stream.alloc_id,
                    arrival_us=t,
                    arrival_frame=frame_sn,
                    size=stream.packet_bytes,
                    draws=draws,
                )
            )
            onu.queued[stream.alloc_id] += stream.packet_bytes

    # upstream

    def _upstream(self, frame_sn: int) -> List[UpstreamBurst]:
        polled = set(self.dba.polled_ids(self.previous_map))
        bursts = []
        for onu in self.onus:
            dbrus = [
                Dbru(
                    alloc_id=alloc_id,
                    occupancy_bytes=min(onu.queued[alloc_id], MAX_U32),
                    low_latency=self.classes[alloc_id] == TcontClass.LOW_LATENCY,
                )
                for alloc_id in sorted(onu.queues)
                if alloc_id in polled
            ]
            burst = UpstreamBurst(
                frame_sn=frame_sn,
                onu_id=onu.spec.onu_id,
                dbrus=dbrus,
                payload_bytes=min(onu.sent_last_frame, MAX_U32),
            ).validate(polled)
            bursts.append(decode_burst(encode_burst(burst)))
        return bursts

    # downstream

    def _carries_data(self, alloc: Allocation) -> bool:
        # Low-latency polling grants from an exclusive CPU DBA only carry the report;
        # anything larger is a fallback grant
        return not (
            alloc.origin == GrantOrigin.STANDARD_DBA
            and self.cfg.low_latency_exclusive
            and self.classes[alloc.alloc_id] == TcontClass.LOW_LATENCY
            and alloc.grant_size_bytes <= MIN_GRANT_BYTES
        )

    def _serve(self, bwmap: Bwmap, frame_sn: int) -> None:
        for onu in self.onus:
            onu.sent_last_frame = 0
        for alloc in bwmap.allocations:
            if not self._carries_data(alloc):
                continue
            onu = self.onu_by_alloc[alloc.alloc_id]
            queue = onu.queues[alloc.alloc_id]
            budget = alloc.grant_size_bytes
            while budget > 0 and queue:
                packet = queue[0]
                take = min(budget, packet.remaining)
                packet.remaining -= take
                budget -= take
                onu.queued[alloc.alloc_id] -= take
                onu.sent_last_frame += take
                if packet.remaining == 0:
                    queue.popleft()
                    self._complete(packet, alloc.origin, onu, frame_sn)
            if onu.queued[alloc.alloc_id] < 0:
                raise InvariantViolation(
                    f"frame {frame_sn}: queue {alloc.alloc_id} went negative"
                )

    def _complete(self, packet: _Packet, origin: GrantOrigin, onu: _Onu, frame_sn: int) -> None:
        path = Mode.FAST_INTERCEPT if origin in FAST_ORIGINS else self.standard_path
        stages = dict.fromkeys(BREAKDOWN_LABELS, 0.0)
        stages.update(
            stage_values(self.params, path, packet.draws, onu.spec.fiber_one_way_us)
        )
        stages[BACKLOG_LABEL] = (frame_sn - packet.arrival_frame) * self.period
        self.samples.append(
            PacketSample(
                alloc_id=packet.alloc_id,
                tcont_class=self.classes[packet.alloc_id],
                arrival_us=packet.arrival_us,
                transmit_us=packet.arrival_us + math.fsum(stages.values()),
                path=path,
                stages=stages,
            )
        )

    def step(self, frame_sn: int) -> None:
        """One scheduling cycle"""
        if frame_sn < self.scenario.duration_frames:
            self._generate_arrivals(frame_sn)

        reported_low_latency = set()
        for burst in self._upstream(frame_sn):
            if self.enf is not None:
                burst = self.enf.on_upstream(burst)
                reported_low_latency.update(
                    d.alloc_id for d in burst.dbrus if d.low_latency and d.occupancy_bytes > 0
                )
            self.dba.on_burst(burst)

        fallback = self.enf.fallback_ids if self.enf is not None else frozenset()
        bwmap = self.dba.next_bwmap(frame_sn, fallback)
        if fallback:
            self.fallback_frames += 1
        if self.enf is not None:
            bwmap = self.enf.on_downstream(bwmap)
            check_no_double_grant(bwmap)
            self.low_latency_reports += len(reported_low_latency)
            fast_served = {
                a.alloc_id
                for a in bwmap.allocations
                if a.origin in (GrantOrigin.FAST_INTERCEPT, GrantOrigin.PREEMPTING)
            }
            self.prompt_fast_grants += len(reported_low_latency & fast_served)

        capacity = self.cfg.frame_capacity_bytes
        wire = encode_bwmap(bwmap, capacity)
        if self.frames < self.scenario.capture_frames:
            self.wire_frames.append(wire)
        bwmap = decode_bwmap(wire, capacity)
        self._serve(bwmap, frame_sn)
        self.previous_map = bwmap
        self.frames += 1

    def _backlogged(self) -> bool:
        return any(q for onu in self.onus for q in onu.queues.values())

    def _frame_clock(self, env: simpy.Environment):
        frame_sn = 0
        last = self.scenario.duration_frames + self.scenario.drain_frames
        while frame_sn < self.scenario.duration_frames or (
            frame_sn < last and self._backlogged()
        ):
            self.step(frame_sn)
            frame_sn += 1
            yield env.timeout(self.period)

    def run(self) -> RunResult:
        env = simpy.Environment()
        env.process(self._frame_clock(env))
        env.run()

        unserved = sum(len(q) for onu in self.onus for q in onu.queues.values())
        if unserved:
            logger.warning(
                f"Scenario {self.scenario.name or self.scenario.seed}: "
                f"{unserved} packets still queued after {self.frames} frames"
            )
        store_dropped = self.enf.store.dropped if self.enf is not None else 0
        return RunResult(
            scenario_name=self.scenario.name,
            mode=self.scenario.mode,
            seed=self.scenario.seed,
            samples=self.samples,
            summary=summarize(self.samples),
            frames=self.frames,
            dropped_packets=self.dropped,
            unserved_packets=unserved,
            store_dropped=store_dropped,
            low_latency_reports=self.low_latency_reports,
            prompt_fast_grants=self.prompt_fast_grants,
            fast_path_viable=self.viable,
            fallback_frames=self.fallback_frames,
            wire_frames=self.wire_frames,
        )


def run(scenario: Scenario) -> RunResult:
    logger.info(
        f"Running scenario {scenario.name or '(unnamed)'}: mode={scenario.mode.value} "
        f"seed={scenario.seed} frames={scenario.duration_frames}"
    )
    logger.debug(f"Latency parameters: {scenario.params.to_dict()}")
    result = PonSimulation(scenario).run()
    logger.info(
        f"Scenario {scenario.name or '(unnamed)'} done: {len(result.samples)} packets "
        f"in {result.frames} frames, {result.dropped_packets} dropped"
    )
    return result


async def sweep_async(
    scenarios: List[Scenario], max_workers: int = 4
) -> List[Union[RunResult, ConfigError]]:
    """Run scenarios concurrently; results stay aligned with the input order"""
    semaphore = asyncio.Semaphore(max(1, max_workers))

    async def run_one(index: int, scenario: Scenario) -> Union[RunResult, ConfigError]:
        async with semaphore:
            try:
                return await asyncio.to_thread(run, scenario)
            except ConfigError as e:
                logger.error(f"Sweep scenario {index} ({scenario.name or 'unnamed'}) rejected: {e}")
                return e

    return list(await asyncio.gather(*(run_one(i, s) for i, s in enumerate(scenarios))))


def sweep(
    scenarios: List[Scenario], max_workers: int = 4
) -> List[Union[RunResult, ConfigError]]:
    if not scenarios:
        return []
    return asyncio.run(sweep_async(scenarios, max_workers))
