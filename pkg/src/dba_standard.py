"""
CPU-side standard DBA.

Status-reporting scheduler: DBRus carry absolute queue occupancy, the ledger
keeps the latest report per Alloc-ID, and every service interval the
remaining frame capacity is shared out by weighted round-robin. The start of
each frame is left unallocated for the fast path.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

from models import (
    DEFAULT_FRAME_CAPACITY,
    MIN_GRANT_BYTES,
    Allocation,
    Bwmap,
    ConfigError,
    Dbru,
    GrantOrigin,
    InvariantViolation,
    OnuSpec,
    PonError,
    TcontClass,
    UpstreamBurst,
    check_alloc_id,
)

logger = logging.getLogger(__name__)


class UnknownAllocId(PonError):
    pass


class CapacityExhausted(PonError):
    """The mandatory polling grants alone do not fit the frame"""


def default_weights() -> Dict[TcontClass, float]:
    return {
        TcontClass.LOW_LATENCY: 1.0,
        TcontClass.ASSURED: 2.0,
        TcontClass.BEST_EFFORT: 1.0,
    }


@dataclass
class DbaConfig:
    frame_capacity_bytes: int = DEFAULT_FRAME_CAPACITY
    reserved_fraction: float = 0.1
    service_interval_frames: int = 1
    weights: Dict[TcontClass, float] = field(default_factory=default_weights)
    # Assured tier is served to exhaustion before BestEffort gets anything
    strict_priority: bool = True
    # Bytes per round-robin visit for weight 1.0
    quantum_bytes: int = 64
    # Low-latency ids are left to the fast path and only polled here
    low_latency_exclusive: bool = True
    alloc_weights: Dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.frame_capacity_bytes < MIN_GRANT_BYTES:
            raise ConfigError(
                f"frame capacity {self.frame_capacity_bytes} below minimum grant",
                key="dba.frame_capacity_bytes",
            )
        if not 0.0 <= self.reserved_fraction <= 1.0:
            raise ConfigError(
                f"reserved_fraction must be in [0, 1], got {self.reserved_fraction}",
                key="dba.reserved_fraction",
            )
        if self.reserved_fraction > 0 and self.reserved_bytes < MIN_GRANT_BYTES:
            raise ConfigError(
                f"reserved window of {self.reserved_bytes} bytes cannot hold one "
                f"minimum grant ({MIN_GRANT_BYTES} bytes)",
                key="dba.reserved_fraction",
            )
        if self.service_interval_frames < 1:
            raise ConfigError(
                "service_interval_frames must be at least 1",
                key="dba.service_interval_frames",
            )
        if self.quantum_bytes < 1:
            raise ConfigError("quantum_bytes must be at least 1", key="dba.quantum_bytes")
        weights = default_weights()
        for cls, weight in self.weights.items():
            weights[TcontClass(cls)] = weight
        self.weights = weights
        for cls, weight in self.weights.items():
            if weight <= 0:
                raise ConfigError(
                    f"weight for {cls.value} must be positive, got {weight}",
                    key=f"dba.weights.{cls.value}",
                )
        for alloc_id, weight in self.alloc_weights.items():
            if weight <= 0:
                raise ConfigError(
                    f"weight for Alloc-ID {alloc_id} must be positive, got {weight}",
                    key="onus.alloc_ids.weight",
                )

    @property
    def reserved_bytes(self) -> int:
        return math.floor(self.reserved_fraction * self.frame_capacity_bytes)

    @property
    def reserved_window(self) -> Tuple[int, int]:
        return (0, self.reserved_bytes)

    def quantum_for(self, alloc_id: int, tcont_class: TcontClass) -> int:
        weight = self.alloc_weights.get(alloc_id, self.weights[tcont_class])
        return max(1, round(weight * self.quantum_bytes))


@dataclass
class DemandLedger:
    """Outstanding demand per registered Alloc-ID"""

    classes: Dict[int, TcontClass] = field(default_factory=dict)
    onu_of: Dict[int, int] = field(default_factory=dict)
    demand: Dict[int, int] = field(default_factory=dict)
    last_update: Dict[int, int] = field(default_factory=dict)

    @classmethod
    def from_onus(cls, onus: Iterable[OnuSpec]) -> "DemandLedger":
        ledger = cls()
        for onu in onus:
            for spec in onu.alloc_ids:
                ledger.register(spec.alloc_id, spec.tcont_class, onu.onu_id)
        return ledger

    def register(self, alloc_id: int, tcont_class: TcontClass, onu_id: int = 0) -> None:
        check_alloc_id(alloc_id)
        if alloc_id in self.classes:
            raise InvariantViolation(f"Alloc-ID {alloc_id} already registered")
        self.classes[alloc_id] = tcont_class
        self.onu_of[alloc_id] = onu_id
        self.demand[alloc_id] = 0

    def ids_of(self, tcont_class: TcontClass) -> List[int]:
        return sorted(a for a, c in self.classes.items() if c == tcont_class)

    def apply_grants(self, bwmap: Bwmap) -> None:
        """Take this DBA's own grants off the outstanding demand"""
        for alloc_id, granted in bwmap.bytes_by_alloc([GrantOrigin.STANDARD_DBA]).items():
            if alloc_id in self.demand:
                self.demand[alloc_id] = max(0, self.demand[alloc_id] - granted)


def ingest_dbru(ledger: DemandLedger, dbru: Dbru, frame_sn: int) -> DemandLedger:
    """Record a report; occupancy is absolute, so it replaces the previous value"""
    tcont_class = ledger.classes.get(dbru.alloc_id)
    if tcont_class is None:
        raise UnknownAllocId(f"DBRu for unregistered Alloc-ID {dbru.alloc_id}")
    if dbru.low_latency != (tcont_class == TcontClass.LOW_LATENCY):
        raise InvariantViolation(
            f"DBRu for Alloc-ID {dbru.alloc_id} has low_latency={dbru.low_latency} "
            f"but the T-CONT is {tcont_class.value}"
        )
    ledger.demand[dbru.alloc_id] = dbru.occupancy_bytes
    ledger.last_update[dbru.alloc_id] = frame_sn
    return ledger


def weighted_round_robin(
    entries: List[Tuple[int, int, int]], capacity: int
) -> Tuple[Dict[int, int], int]:
    """Share `capacity` bytes among (alloc_id, quantum, want) entries.

    Visiting order is the list order; each visit hands out up to one quantum.
    Rounds where every backlogged id takes a full quantum are done in bulk.
    Returns the bytes granted per id and the capacity left over.
    """
    granted = {alloc_id: 0 for alloc_id, _, _ in entries}
    remaining = {alloc_id: want for alloc_id, _, want in entries}
    active = [(alloc_id, quantum) for alloc_id, quantum, want in entries if want > 0]

    while active and capacity > 0:
        round_cost = sum(quantum for _, quantum in active)
        full_rounds = min(
            min(remaining[alloc_id] // quantum for alloc_id, quantum in active),
            capacity // round_cost,
        )
        if full_rounds > 0:
            for alloc_id, quantum in active:
                granted[alloc_id] += full_rounds * quantum
                remaining[alloc_id] -= full_rounds * quantum
            capacity -= full_rounds * round_cost
        else:
            for alloc_id, quantum in active:
                take = min(quantum, remaining[alloc_id], capacity)
                granted[alloc_id] += take
                remaining[alloc_id] -= take
                capacity -= take
                if capacity == 0:
                    break
        active = [(a, q) for a, q in active if remaining[a] > 0]

    return granted, capacity


def _service_tiers(
    ledger: DemandLedger, cfg: DbaConfig, fallback_ids: Iterable[int] = ()
) -> List[List[int]]:
    tiers = []
    low_latency = ledger.ids_of(TcontClass.LOW_LATENCY)
    if not cfg.low_latency_exclusive:
        tiers.append(low_latency)
    else:
        fallback = set(fallback_ids)
        tiers.append([alloc_id for alloc_id in low_latency if alloc_id in fallback])
    assured = ledger.ids_of(TcontClass.ASSURED)
    best_effort = ledger.ids_of(TcontClass.BEST_EFFORT)
    if cfg.strict_priority:
        tiers.extend([assured, best_effort])
    else:
        tiers.append(assured + best_effort)
    return [tier for tier in tiers if tier]


def _polling_budget(ledger: DemandLedger, cfg: DbaConfig) -> int:
    available = cfg.frame_capacity_bytes - cfg.reserved_bytes
    mandatory = len(ledger.classes) * MIN_GRANT_BYTES
    if mandatory > available:
        raise CapacityExhausted(
            f"{len(ledger.classes)} polling grants need {mandatory} bytes, "
            f"only {available} outside the reserved window"
        )
    return available - mandatory


def _layout(frame_sn: int, cfg: DbaConfig, grants: Dict[int, int]) -> Bwmap:
    cursor = cfg.reserved_bytes
    allocations = []
    for alloc_id in sorted(grants):
        size = grants[alloc_id]
        allocations.append(
            Allocation(
                alloc_id=alloc_id,
                start_time_bytes=cursor,
                grant_size_bytes=size,
                dbru_requested=True,
                origin=GrantOrigin.STANDARD_DBA,
            )
        )
        cursor += size
    return Bwmap(
        frame_sn=frame_sn,
        reserved_window=cfg.reserved_window,
        allocations=allocations,
    ).validate(cfg.frame_capacity_bytes)


def compute_bwmap(
    ledger: DemandLedger, cfg: DbaConfig, frame_sn: int, fallback_ids: Iterable[int] = ()
) -> Bwmap:
    """Build the frame's map: reserved window first, then one grant per Alloc-ID.

    `fallback_ids` are low-latency ids the fast path cannot serve this frame;
    they get the top tier even when low-latency ids are otherwise only polled.
    """
    leftover = _polling_budget(ledger, cfg)
    # Every id is polled; the polling bytes count toward its demand
    grants = {alloc_id: MIN_GRANT_BYTES for alloc_id in ledger.classes}

    for tier in _service_tiers(ledger, cfg, fallback_ids):
        entries = [
            (
                alloc_id,
                cfg.quantum_for(alloc_id, ledger.classes[alloc_id]),
                max(0, ledger.demand.get(alloc_id, 0) - MIN_GRANT_BYTES),
            )
            for alloc_id in tier
        ]
        shares, leftover = weighted_round_robin(entries, leftover)
        for alloc_id, share in shares.items():
            grants[alloc_id] += share

    bwmap = _layout(frame_sn, cfg, grants)
    logger.debug(
        f"Frame {frame_sn}: standard DBA granted {bwmap.total_granted()} bytes "
        f"to {len(grants)} Alloc-IDs, {leftover} bytes idle, reserve {cfg.reserved_window}"
    )
    return bwmap


def idle_bwmap(ledger: DemandLedger, cfg: DbaConfig, frame_sn: int) -> Bwmap:
    """Map for frames inside a service interval: reserve plus polling grants"""
    _polling_budget(ledger, cfg)
    return _layout(frame_sn, cfg, {alloc_id: MIN_GRANT_BYTES for alloc_id in ledger.classes})


class StandardDba:
    """The scheduler task that owns one PON's ledger"""

    def __init__(self, ledger: DemandLedger, cfg: DbaConfig):
        self.ledger = ledger
        self.cfg = cfg

    def on_burst(self, burst: UpstreamBurst) -> None:
        for dbru in burst.dbrus:
            ingest_dbru(self.ledger, dbru, burst.frame_sn)

    def next_bwmap(self, frame_sn: int, fallback_ids: Iterable[int] = ()) -> Bwmap:
        if frame_sn % self.cfg.service_interval_frames == 0:
            bwmap = compute_bwmap(self.ledger, self.cfg, frame_sn, fallback_ids)
        else:
            bwmap = idle_bwmap(self.ledger, self.cfg, frame_sn)
        self.ledger.apply_grants(bwmap)
        return bwmap

    def polled_ids(self, bwmap: Optional[Bwmap]) -> List[int]:
        """Alloc-IDs allowed to piggy-back a DBRu in the frame `bwmap` covers"""
        if bwmap is None:
            return sorted(self.ledger.classes)
        return sorted({a.alloc_id for a in bwmap.allocations if a.dbru_requested})
