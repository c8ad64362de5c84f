from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Tuple

# Alloc-ID is a 14-bit identifier carried in a 16-bit field
MAX_ALLOC_ID = 16383
MAX_U16 = 0xFFFF
MAX_U32 = 0xFFFFFFFF

# 9.95328 Gb/s * 125 us / 8
DEFAULT_FRAME_CAPACITY = 155_520
# Room for one piggy-backed DBRu
MIN_GRANT_BYTES = 8
FRAME_PERIOD_US = 125.0


class PonError(Exception):
    """Base class for every error raised by the scheduler stack"""


class InvariantViolation(PonError):
    """A value broke one of its structural invariants"""


class TcontClass(Enum):
    LOW_LATENCY = "low_latency"
    ASSURED = "assured"
    BEST_EFFORT = "best_effort"


class GrantOrigin(Enum):
    """Who produced an allocation. The value is the 2-bit wire code."""

    STANDARD_DBA = 0
    FAST_INTERCEPT = 1
    SPARE_FILL = 2
    PREEMPTING = 3


# Origins that must sit inside the reserved window
RESERVED_ORIGINS = (GrantOrigin.FAST_INTERCEPT, GrantOrigin.SPARE_FILL)
FAST_ORIGINS = (
    GrantOrigin.FAST_INTERCEPT,
    GrantOrigin.SPARE_FILL,
    GrantOrigin.PREEMPTING,
)


def check_alloc_id(alloc_id: int) -> int:
    if not isinstance(alloc_id, int) or isinstance(alloc_id, bool):
        raise InvariantViolation(f"Alloc-ID must be an int, got {alloc_id!r}")
    if alloc_id < 0 or alloc_id > MAX_ALLOC_ID:
        raise InvariantViolation(
            f"Alloc-ID {alloc_id} outside [0, {MAX_ALLOC_ID}] (upper 2 bits reserved)"
        )
    return alloc_id


def _check_u32(name: str, value: int) -> None:
    if not isinstance(value, int) or value < 0 or value > MAX_U32:
        raise InvariantViolation(f"{name} must fit in 32 unsigned bits, got {value!r}")


@dataclass(frozen=True)
class Dbru:
    """Buffer occupancy report for one Alloc-ID"""

    alloc_id: int
    occupancy_bytes: int
    low_latency: bool = False

    def __post_init__(self):
        check_alloc_id(self.alloc_id)
        _check_u32("occupancy_bytes", self.occupancy_bytes)


@dataclass(frozen=True)
class Allocation:
    """One upstream grant inside a frame"""

    alloc_id: int
    start_time_bytes: int
    grant_size_bytes: int
    dbru_requested: bool = False
    origin: GrantOrigin = GrantOrigin.STANDARD_DBA

    def __post_init__(self):
        check_alloc_id(self.alloc_id)
        _check_u32("start_time_bytes", self.start_time_bytes)
        _check_u32("grant_size_bytes", self.grant_size_bytes)

    @property
    def end_bytes(self) -> int:
        return self.start_time_bytes + self.grant_size_bytes

    def inside(self, window: Tuple[int, int]) -> bool:
        offset, length = window
        return self.start_time_bytes >= offset and self.end_bytes <= offset + length


@dataclass(frozen=True)
class Bwmap:
    """Per-frame list of upstream grants"""

    frame_sn: int
    reserved_window: Tuple[int, int] = (0, 0)
    allocations: Tuple[Allocation, ...] = ()

    def __post_init__(self):
        # Accept lists from callers but store an immutable tuple
        object.__setattr__(self, "allocations", tuple(self.allocations))
        object.__setattr__(self, "reserved_window", tuple(self.reserved_window))

    def validate(self, frame_capacity: int = DEFAULT_FRAME_CAPACITY) -> "Bwmap":
        """Raise InvariantViolation unless the map is well formed"""
        _check_u32("frame_sn", self.frame_sn)
        offset, length = self.reserved_window
        _check_u32("reserved offset", offset)
        _check_u32("reserved length", length)
        if offset + length > frame_capacity:
            raise InvariantViolation(
                f"reserved window ({offset}, {length}) exceeds frame capacity {frame_capacity}"
            )
        if len(self.allocations) > MAX_U16:
            raise InvariantViolation(f"too many allocations: {len(self.allocations)}")

        previous_end = 0
        total = 0
        for index, alloc in enumerate(self.allocations):
            if alloc.grant_size_bytes < MIN_GRANT_BYTES:
                raise InvariantViolation(
                    f"allocation {index} (Alloc-ID {alloc.alloc_id}) smaller than "
                    f"minimum grant: {alloc.grant_size_bytes} < {MIN_GRANT_BYTES}"
                )
            if alloc.start_time_bytes < previous_end:
                raise InvariantViolation(
                    f"allocation {index} (Alloc-ID {alloc.alloc_id}) starts at "
                    f"{alloc.start_time_bytes}, overlapping or out of order "
                    f"(previous grant ends at {previous_end})"
                )
            if alloc.end_bytes > frame_capacity:
                raise InvariantViolation(
                    f"allocation {index} (Alloc-ID {alloc.alloc_id}) ends at "
                    f"{alloc.end_bytes}, past frame capacity {frame_capacity}"
                )
            if alloc.origin in RESERVED_ORIGINS and not alloc.inside(
                self.reserved_window
            ):
                raise InvariantViolation(
                    f"{alloc.origin.name} allocation for Alloc-ID {alloc.alloc_id} "
                    f"lies outside reserved window {self.reserved_window}"
                )
            previous_end = alloc.end_bytes
            total += alloc.grant_size_bytes

        if total > frame_capacity:
            raise InvariantViolation(
                f"granted {total} bytes, more than frame capacity {frame_capacity}"
            )
        return self

    def grants_for(self, alloc_id: int) -> List[Allocation]:
        return [a for a in self.allocations if a.alloc_id == alloc_id]

    def total_granted(self, origins: Optional[Iterable[GrantOrigin]] = None) -> int:
        wanted = set(origins) if origins is not None else None
        return sum(
            a.grant_size_bytes
            for a in self.allocations
            if wanted is None or a.origin in wanted
        )

    def bytes_by_alloc(self, origins: Optional[Iterable[GrantOrigin]] = None) -> Dict[int, int]:
        wanted = set(origins) if origins is not None else None
        granted: Dict[int, int] = {}
        for alloc in self.allocations:
            if wanted is None or alloc.origin in wanted:
                granted[alloc.alloc_id] = (
                    granted.get(alloc.alloc_id, 0) + alloc.grant_size_bytes
                )
        return granted


@dataclass(frozen=True)
class UpstreamBurst:
    """One ONU's upstream transmission in a frame"""

    frame_sn: int
    onu_id: int
    dbrus: Tuple[Dbru, ...] = ()
    payload_bytes: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dbrus", tuple(self.dbrus))

    def validate(self, polled: Optional[Iterable[int]] = None) -> "UpstreamBurst":
        """Check field ranges, and if `polled` is given that every DBRu was asked for"""
        _check_u32("frame_sn", self.frame_sn)
        _check_u32("payload_bytes", self.payload_bytes)
        if not 0 <= self.onu_id <= MAX_U16:
            raise InvariantViolation(f"onu_id {self.onu_id} does not fit in 16 bits")
        if len(self.dbrus) > MAX_U16:
            raise InvariantViolation(f"too many DBRus: {len(self.dbrus)}")
        if polled is not None:
            allowed = set(polled)
            for dbru in self.dbrus:
                if dbru.alloc_id not in allowed:
                    raise InvariantViolation(
                        f"DBRu for Alloc-ID {dbru.alloc_id} in frame {self.frame_sn} "
                        "without a dbru_requested grant"
                    )
        return self


@dataclass
class AllocIdSpec:
    """One T-CONT queue declared by a scenario"""

    alloc_id: int
    tcont_class: TcontClass = TcontClass.BEST_EFFORT
    weight: Optional[float] = None

    def __post_init__(self):
        check_alloc_id(self.alloc_id)
        if isinstance(self.tcont_class, str):
            self.tcont_class = TcontClass(self.tcont_class)


@dataclass
class OnuSpec:
    onu_id: int
    alloc_ids: List[AllocIdSpec] = field(default_factory=list)
    fiber_one_way_us: Optional[float] = None  # None means the scenario-wide value


def class_map(onus: Iterable[OnuSpec]) -> Dict[int, TcontClass]:
    """Alloc-ID -> T-CONT class for a set of ONUs; duplicates are rejected"""
    classes: Dict[int, TcontClass] = {}
    for onu in onus:
        for spec in onu.alloc_ids:
            if spec.alloc_id in classes:
                raise InvariantViolation(
                    f"Alloc-ID {spec.alloc_id} declared more than once"
                )
            classes[spec.alloc_id] = spec.tcont_class
    return classes


class ConfigError(PonError):
    """A scenario or configuration value is invalid"""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.message = message
        self.key = key
        self.line = line
        where = ""
        if key is not None:
            where += f" [key: {key}"
            where += f", line {line}]" if line is not None else "]"
        super().__init__(f"{message}{where}")
