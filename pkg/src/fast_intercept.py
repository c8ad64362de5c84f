"""
In-NIC fast path.

Upstream, every DBRu in transit is copied into a small register store and the
burst continues to the CPU untouched. Downstream, the next map coming from the
CPU is rewritten: low-latency requests are packed into the reserved window,
leftover reserve is spare-filled with other requests, and if the reserve is
too small best-effort grants can be shrunk to admit the rest.
"""

import logging
import math
import threading
from dataclasses import dataclass, replace
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple

from models import (
    DEFAULT_FRAME_CAPACITY,
    MIN_GRANT_BYTES,
    Allocation,
    Bwmap,
    ConfigError,
    Dbru,
    GrantOrigin,
    InvariantViolation,
    PonError,
    TcontClass,
    UpstreamBurst,
)

logger = logging.getLogger(__name__)

DEFAULT_STORE_CAPACITY = 64


class StoreFull(PonError):
    pass


@dataclass(frozen=True)
class StoreEntry:
    occupancy_bytes: int
    arrival_frame_sn: int
    low_latency: bool


class RegisterStore:
    """Fast-memory snapshot of DBRus seen in transit, one entry per Alloc-ID"""

    def __init__(self, capacity: int = DEFAULT_STORE_CAPACITY):
        if capacity < 1:
            raise ConfigError("register store capacity must be at least 1", key="policy.store_capacity")
        self.capacity = capacity
        self.dropped = 0
        self.lock = threading.RLock()
        self._entries: Dict[int, StoreEntry] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, alloc_id: int) -> bool:
        return alloc_id in self._entries

    def get(self, alloc_id: int) -> Optional[StoreEntry]:
        return self._entries.get(alloc_id)

    def record(self, dbru: Dbru, frame_sn: int) -> None:
        with self.lock:
            if dbru.alloc_id not in self._entries and len(self._entries) >= self.capacity:
                self.dropped += 1
                raise StoreFull(
                    f"register store full ({self.capacity} entries), "
                    f"dropping DBRu for Alloc-ID {dbru.alloc_id}"
                )
            self._entries[dbru.alloc_id] = StoreEntry(
                occupancy_bytes=dbru.occupancy_bytes,
                arrival_frame_sn=frame_sn,
                low_latency=dbru.low_latency,
            )

    def consume(self, alloc_id: int, granted: int) -> None:
        """Deduct granted bytes; an entry with nothing left is cleared"""
        with self.lock:
            entry = self._entries.get(alloc_id)
            if entry is None:
                return
            left = entry.occupancy_bytes - granted
            if left <= 0:
                del self._entries[alloc_id]
            else:
                self._entries[alloc_id] = replace(entry, occupancy_bytes=left)

    def discard(self, alloc_id: int) -> None:
        with self.lock:
            self._entries.pop(alloc_id, None)

    def snapshot(self) -> List[Tuple[int, StoreEntry]]:
        with self.lock:
            return sorted(self._entries.items())

    def low_latency_backlog(self) -> Dict[int, int]:
        with self.lock:
            return {
                alloc_id: entry.occupancy_bytes
                for alloc_id, entry in sorted(self._entries.items())
                if entry.low_latency and entry.occupancy_bytes > 0
            }


@dataclass
class InterceptPolicy:
    spare_fill_enabled: bool = True
    preempt_enabled: bool = False
    # Share of the map's best-effort bytes that may be reclaimed per frame
    max_preempt_fraction: float = 0.5
    store_capacity: int = DEFAULT_STORE_CAPACITY

    def __post_init__(self):
        if not 0.0 <= self.max_preempt_fraction <= 1.0:
            raise ConfigError(
                f"max_preempt_fraction must be in [0, 1], got {self.max_preempt_fraction}",
                key="policy.max_preempt_fraction",
            )
        if self.store_capacity < 1:
            raise ConfigError("store_capacity must be at least 1", key="policy.store_capacity")


def intercept_burst(
    store: RegisterStore, burst: UpstreamBurst
) -> Tuple[RegisterStore, UpstreamBurst]:
    """Copy every DBRu into the store; the burst itself is passed on as is"""
    with store.lock:
        for dbru in burst.dbrus:
            try:
                store.record(dbru, burst.frame_sn)
            except StoreFull as e:
                logger.warning(f"Frame {burst.frame_sn}: {e} (dropped so far: {store.dropped})")
    return store, burst


def plan_fast_grants(
    store: RegisterStore,
    reserved_window: Tuple[int, int],
    policy: InterceptPolicy,
    already_granted: Optional[Mapping[int, int]] = None,
) -> List[Allocation]:
    """Pack stored requests into the reserved window.

    Low-latency entries go first in ascending Alloc-ID order, then (with
    spare-fill) the other entries. `already_granted` holds bytes the CPU map
    already gives an Alloc-ID; they are taken off that id's spare-fill demand.
    """
    offset, length = reserved_window
    cursor = offset
    end = offset + length
    grants: List[Allocation] = []
    already_granted = already_granted or {}

    with store.lock:
        entries = store.snapshot()
        for alloc_id, entry in entries:
            if not entry.low_latency and already_granted.get(alloc_id):
                store.consume(alloc_id, already_granted[alloc_id])

        low_latency = [alloc_id for alloc_id, entry in entries if entry.low_latency]
        others = [alloc_id for alloc_id, entry in entries if not entry.low_latency]
        passes = [(GrantOrigin.FAST_INTERCEPT, low_latency)]
        if policy.spare_fill_enabled:
            passes.append((GrantOrigin.SPARE_FILL, others))

        for origin, alloc_ids in passes:
            for alloc_id in alloc_ids:
                entry = store.get(alloc_id)
                if entry is None:
                    continue
                if entry.occupancy_bytes == 0:
                    store.discard(alloc_id)
                    continue
                room = end - cursor
                if room < MIN_GRANT_BYTES:
                    return grants
                size = min(max(entry.occupancy_bytes, MIN_GRANT_BYTES), room)
                grants.append(
                    Allocation(
                        alloc_id=alloc_id,
                        start_time_bytes=cursor,
                        grant_size_bytes=size,
                        dbru_requested=False,
                        origin=origin,
                    )
                )
                cursor += size
                store.consume(alloc_id, size)
    return grants


def _victims(
    allocations: Iterable[Allocation], classes: Mapping[int, TcontClass]
) -> List[Allocation]:
    return [
        a
        for a in allocations
        if a.origin == GrantOrigin.STANDARD_DBA
        and classes.get(a.alloc_id) == TcontClass.BEST_EFFORT
    ]


def _preempt_budget(victims: List[Allocation], policy: InterceptPolicy) -> int:
    return math.floor(
        policy.max_preempt_fraction * sum(a.grant_size_bytes for a in victims)
    )


def reclaimable_bytes(
    allocations: Iterable[Allocation],
    policy: InterceptPolicy,
    classes: Mapping[int, TcontClass],
) -> int:
    """Bytes preemption could hand out in this map"""
    if not policy.preempt_enabled:
        return 0
    victims = _victims(allocations, classes)
    budget = _preempt_budget(victims, policy)
    total = 0
    for victim in sorted(victims, key=lambda a: (-a.grant_size_bytes, a.alloc_id)):
        room = min(victim.grant_size_bytes - MIN_GRANT_BYTES, budget - total)
        if room >= MIN_GRANT_BYTES:
            total += room
    return total


def _preempt(
    allocations: List[Allocation],
    overflow: Mapping[int, int],
    policy: InterceptPolicy,
    classes: Mapping[int, TcontClass],
) -> List[Allocation]:
    victims = _victims(allocations, classes)
    budget = _preempt_budget(victims, policy)
    pending = [
        [alloc_id, max(need, MIN_GRANT_BYTES)]
        for alloc_id, need in sorted(overflow.items())
        if need > 0
    ]
    out = {id(a): [a] for a in allocations}

    for victim in sorted(victims, key=lambda a: (-a.grant_size_bytes, a.alloc_id)):
        if not pending or budget < MIN_GRANT_BYTES:
            break
        # The victim keeps its start and its reporting opportunity
        room = min(victim.grant_size_bytes - MIN_GRANT_BYTES, budget)
        pieces = []
        taken = 0
        while pending and room - taken >= MIN_GRANT_BYTES:
            alloc_id, need = pending[0]
            piece = min(need, room - taken)
            pieces.append((alloc_id, piece))
            taken += piece
            need -= piece
            if need < MIN_GRANT_BYTES:
                # anything left under one minimum grant waits for the next frame
                pending.pop(0)
            else:
                pending[0][1] = need
        if not taken:
            continue

        budget -= taken
        shrunk = replace(victim, grant_size_bytes=victim.grant_size_bytes - taken)
        replacement = [shrunk]
        cursor = shrunk.end_bytes
        for alloc_id, piece in pieces:
            replacement.append(
                Allocation(
                    alloc_id=alloc_id,
                    start_time_bytes=cursor,
                    grant_size_bytes=piece,
                    dbru_requested=False,
                    origin=GrantOrigin.PREEMPTING,
                )
            )
            cursor += piece
        out[id(victim)] = replacement
        logger.debug(
            f"Preempted {taken} bytes from best-effort Alloc-ID {victim.alloc_id} "
            f"for {[alloc_id for alloc_id, _ in pieces]}"
        )

    return [a for original in allocations for a in out[id(original)]]


def rewrite_bwmap(
    bwmap: Bwmap,
    grants: Iterable[Allocation],
    policy: InterceptPolicy,
    overflow: Optional[Mapping[int, int]] = None,
    classes: Optional[Mapping[int, TcontClass]] = None,
    frame_capacity: int = DEFAULT_FRAME_CAPACITY,
) -> Bwmap:
    """Insert fast grants into the map, preempting best-effort space if allowed"""
    grants = list(grants)
    preempting = bool(policy.preempt_enabled and overflow and classes)
    if not grants and not preempting:
        return bwmap

    for grant in grants:
        if grant.origin not in (GrantOrigin.FAST_INTERCEPT, GrantOrigin.SPARE_FILL):
            raise InvariantViolation(
                f"fast grant for Alloc-ID {grant.alloc_id} has origin {grant.origin.name}"
            )
        if not grant.inside(bwmap.reserved_window):
            raise InvariantViolation(
                f"fast grant for Alloc-ID {grant.alloc_id} at "
                f"[{grant.start_time_bytes}, {grant.end_bytes}) outside reserved "
                f"window {bwmap.reserved_window}"
            )

    allocations = list(bwmap.allocations)
    if preempting:
        allocations = _preempt(allocations, overflow, policy, classes)

    merged = sorted(allocations + grants, key=lambda a: (a.start_time_bytes, a.end_bytes))
    return Bwmap(
        frame_sn=bwmap.frame_sn,
        reserved_window=bwmap.reserved_window,
        allocations=merged,
    ).validate(frame_capacity)


def check_no_double_grant(bwmap: Bwmap) -> None:
    """An Alloc-ID with fast grants may hold only a polling grant from the CPU"""
    fast_ids = sorted(
        {a.alloc_id for a in bwmap.allocations if a.origin == GrantOrigin.FAST_INTERCEPT}
    )
    for alloc_id in fast_ids:
        for alloc in bwmap.grants_for(alloc_id):
            if alloc.origin == GrantOrigin.STANDARD_DBA and alloc.grant_size_bytes > MIN_GRANT_BYTES:
                raise InvariantViolation(
                    f"frame {bwmap.frame_sn}: Alloc-ID {alloc_id} granted "
                    f"{alloc.grant_size_bytes} data bytes by the CPU DBA and also "
                    "served by the fast path"
                )


def fast_path_viable(reserved_bytes: int, policy: InterceptPolicy) -> bool:
    return reserved_bytes >= MIN_GRANT_BYTES or (
        policy.preempt_enabled and policy.max_preempt_fraction > 0
    )


class FastInterceptNf:
    """The stateful eNF: one register store shared by both directions.

    With no usable reserved window the fast path lives on preemption alone. In
    a map with nothing to reclaim it hands its low-latency ids to the CPU DBA
    (`fallback_ids`), which then serves them in its next map.
    """

    def __init__(
        self,
        classes: Mapping[int, TcontClass],
        policy: InterceptPolicy,
        frame_capacity: int = DEFAULT_FRAME_CAPACITY,
    ):
        self.classes = dict(classes)
        self.policy = policy
        self.frame_capacity = frame_capacity
        self.store = RegisterStore(policy.store_capacity)
        self.low_latency_ids = frozenset(
            alloc_id for alloc_id, cls in self.classes.items() if cls == TcontClass.LOW_LATENCY
        )
        self.fallback_ids: FrozenSet[int] = frozenset()
        self.fast_bytes = 0
        self.spare_bytes = 0
        self.preempted_bytes = 0
        self.fallback_bytes = 0

    def on_upstream(self, burst: UpstreamBurst) -> UpstreamBurst:
        _, burst = intercept_burst(self.store, burst)
        return burst

    def on_downstream(self, bwmap: Bwmap) -> Bwmap:
        with self.store.lock:
            standard = bwmap.bytes_by_alloc([GrantOrigin.STANDARD_DBA])
            # Low-latency data grants from the CPU only exist while falling back
            for alloc_id in sorted(self.low_latency_ids):
                granted = standard.get(alloc_id, 0)
                if granted > MIN_GRANT_BYTES:
                    self.store.consume(alloc_id, granted)
                    self.fallback_bytes += granted
            grants = plan_fast_grants(
                self.store, bwmap.reserved_window, self.policy, already_granted=standard
            )
            overflow = self.store.low_latency_backlog() if self.policy.preempt_enabled else None
            rewritten = rewrite_bwmap(
                bwmap,
                grants,
                self.policy,
                overflow=overflow,
                classes=self.classes,
                frame_capacity=self.frame_capacity,
            )
            for alloc in rewritten.allocations:
                if alloc.origin == GrantOrigin.PREEMPTING:
                    self.store.consume(alloc.alloc_id, alloc.grant_size_bytes)
            self._update_fallback(bwmap)

        self.fast_bytes += rewritten.total_granted([GrantOrigin.FAST_INTERCEPT])
        self.spare_bytes += rewritten.total_granted([GrantOrigin.SPARE_FILL])
        self.preempted_bytes += rewritten.total_granted([GrantOrigin.PREEMPTING])
        return rewritten

    def _update_fallback(self, bwmap: Bwmap) -> None:
        if bwmap.reserved_window[1] >= MIN_GRANT_BYTES:
            self.fallback_ids = frozenset()
            return
        room = reclaimable_bytes(bwmap.allocations, self.policy, self.classes)
        fallback = frozenset() if room >= MIN_GRANT_BYTES else self.low_latency_ids
        if fallback and not self.fallback_ids:
            logger.debug(
                f"Frame {bwmap.frame_sn}: nothing to preempt, low-latency traffic "
                "handed to the CPU DBA"
            )
        self.fallback_ids = fallback
