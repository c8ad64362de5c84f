"""
Fixed-width big-endian wire format for bandwidth maps and upstream bursts.

Bwmap:
  header  [frame_sn: u32][reserved_offset: u32][reserved_length: u32][alloc_count: u16]
  record  [alloc_id: u16][flags: u8][start_time_bytes: u32][grant_size_bytes: u32][reserved: u32]
          flags bit0 = dbru_requested, bits1-2 = origin, bits3-7 zero; reserved word zero

UpstreamBurst:
  header  [frame_sn: u32][onu_id: u16][payload_bytes: u32][dbru_count: u16]
  record  [alloc_id: u16][occupancy_bytes: u32][flags: u8]
          flags bit0 = low_latency, bits1-7 zero
"""

import logging
import struct
from pathlib import Path
from typing import Union

from models import (
    DEFAULT_FRAME_CAPACITY,
    MAX_ALLOC_ID,
    Allocation,
    Bwmap,
    Dbru,
    GrantOrigin,
    PonError,
    UpstreamBurst,
)

logger = logging.getLogger(__name__)

BWMAP_HEADER = struct.Struct(">IIIH")
BWMAP_RECORD = struct.Struct(">HBIII")
BURST_HEADER = struct.Struct(">IHIH")
BURST_RECORD = struct.Struct(">HIB")

_DBRU_REQUESTED = 0x01
_ORIGIN_SHIFT = 1
_ORIGIN_MASK = 0x06
_BWMAP_FLAG_MASK = _DBRU_REQUESTED | _ORIGIN_MASK
_LOW_LATENCY = 0x01


class FramingError(PonError):
    """Byte sequence does not have the length its header declares"""


class Truncated(FramingError):
    pass


class TrailingBytes(FramingError):
    pass


class BadFlags(PonError):
    """Reserved flag bits or reserved fields are non-zero"""


def bwmap_length(alloc_count: int) -> int:
    return BWMAP_HEADER.size + BWMAP_RECORD.size * alloc_count


def burst_length(dbru_count: int) -> int:
    return BURST_HEADER.size + BURST_RECORD.size * dbru_count


def encode_bwmap(bwmap: Bwmap, frame_capacity: int = DEFAULT_FRAME_CAPACITY) -> bytes:
    bwmap.validate(frame_capacity)
    offset, length = bwmap.reserved_window
    parts = [BWMAP_HEADER.pack(bwmap.frame_sn, offset, length, len(bwmap.allocations))]
    for alloc in bwmap.allocations:
        flags = (_DBRU_REQUESTED if alloc.dbru_requested else 0) | (
            alloc.origin.value << _ORIGIN_SHIFT
        )
        parts.append(
            BWMAP_RECORD.pack(
                alloc.alloc_id,
                flags,
                alloc.start_time_bytes,
                alloc.grant_size_bytes,
                0,
            )
        )
    return b"".join(parts)


def _check_length(data: bytes, expected: int, what: str) -> None:
    if len(data) < expected:
        raise Truncated(f"{what}: need {expected} bytes, got {len(data)}")
    if len(data) > expected:
        raise TrailingBytes(
            f"{what}: declared length {expected} bytes, got {len(data)}"
        )


def decode_bwmap(data: bytes, frame_capacity: int = DEFAULT_FRAME_CAPACITY) -> Bwmap:
    data = bytes(data)
    if len(data) < BWMAP_HEADER.size:
        raise Truncated(
            f"bwmap header is {BWMAP_HEADER.size} bytes, got {len(data)}"
        )
    frame_sn, offset, length, count = BWMAP_HEADER.unpack_from(data, 0)
    _check_length(data, bwmap_length(count), f"bwmap with {count} allocations")

    allocations = []
    for index in range(count):
        alloc_id, flags, start, size, reserved = BWMAP_RECORD.unpack_from(
            data, BWMAP_HEADER.size + index * BWMAP_RECORD.size
        )
        if flags & ~_BWMAP_FLAG_MASK:
            raise BadFlags(f"allocation {index}: reserved flag bits set in 0x{flags:02x}")
        if reserved:
            raise BadFlags(f"allocation {index}: reserved word is 0x{reserved:08x}")
        if alloc_id > MAX_ALLOC_ID:
            raise BadFlags(f"allocation {index}: Alloc-ID 0x{alloc_id:04x} uses reserved bits")
        allocations.append(
            Allocation(
                alloc_id=alloc_id,
                start_time_bytes=start,
                grant_size_bytes=size,
                dbru_requested=bool(flags & _DBRU_REQUESTED),
                origin=GrantOrigin((flags & _ORIGIN_MASK) >> _ORIGIN_SHIFT),
            )
        )
    bwmap = Bwmap(frame_sn=frame_sn, reserved_window=(offset, length), allocations=allocations)
    return bwmap.validate(frame_capacity)


def encode_burst(burst: UpstreamBurst) -> bytes:
    burst.validate()
    parts = [
        BURST_HEADER.pack(burst.frame_sn, burst.onu_id, burst.payload_bytes, len(burst.dbrus))
    ]
    for dbru in burst.dbrus:
        parts.append(
            BURST_RECORD.pack(
                dbru.alloc_id,
                dbru.occupancy_bytes,
                _LOW_LATENCY if dbru.low_latency else 0,
            )
        )
    return b"".join(parts)


def decode_burst(data: bytes) -> UpstreamBurst:
    data = bytes(data)
    if len(data) < BURST_HEADER.size:
        raise Truncated(f"burst header is {BURST_HEADER.size} bytes, got {len(data)}")
    frame_sn, onu_id, payload_bytes, count = BURST_HEADER.unpack_from(data, 0)
    _check_length(data, burst_length(count), f"burst with {count} DBRus")

    dbrus = []
    for index in range(count):
        alloc_id, occupancy, flags = BURST_RECORD.unpack_from(
            data, BURST_HEADER.size + index * BURST_RECORD.size
        )
        if flags & ~_LOW_LATENCY:
            raise BadFlags(f"DBRu {index}: reserved flag bits set in 0x{flags:02x}")
        if alloc_id > MAX_ALLOC_ID:
            raise BadFlags(f"DBRu {index}: Alloc-ID 0x{alloc_id:04x} uses reserved bits")
        dbrus.append(
            Dbru(alloc_id=alloc_id, occupancy_bytes=occupancy, low_latency=bool(flags & _LOW_LATENCY))
        )
    return UpstreamBurst(frame_sn=frame_sn, onu_id=onu_id, dbrus=dbrus, payload_bytes=payload_bytes)


def write_message(path: Union[str, Path], data: bytes) -> None:
    """Store one encoded message per file"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    logger.debug(f"Wrote {len(data)} bytes to {path}")


def read_message(path: Union[str, Path]) -> bytes:
    return Path(path).read_bytes()
