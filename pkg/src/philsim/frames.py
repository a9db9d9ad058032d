"""Binary wire format of the per-step interface frame.

Layout (little-endian, 46 bytes)::

    offset  size  field
    0       4     magic 0x50484C46 ("PHLF")
    4       1     version (1)
    5       1     kind (low 7 bits) | 0x80 when a dp frame is not ready
    6       4     seq, u32
    10      8     step_index, u64
    18      24    payload, 3 x f64
    42      4     CRC32 over bytes 0..41
"""
from __future__ import annotations

import enum
import math
import struct
import zlib
from dataclasses import dataclass

from .errors import FrameError

MAGIC = 0x50484C46
VERSION = 1
NOT_READY = 0x80
_BODY = struct.Struct("<IBBIQ3d")
_CRC = struct.Struct("<I")
FRAME_SIZE = _BODY.size + _CRC.size


class FrameKind(enum.IntEnum):
    VOLTAGE = 0
    CURRENT = 1
    DP_VOLTAGE = 2
    DP_CURRENT = 3

    @property
    def is_dp(self) -> bool:
        return self in (FrameKind.DP_VOLTAGE, FrameKind.DP_CURRENT)


@dataclass(frozen=True)
class InterfaceFrame:
    seq: int
    step_index: int
    kind: FrameKind
    payload: tuple
    ready: bool = True


def encode_frame(frame: InterfaceFrame) -> bytes:
    if not all(math.isfinite(x) for x in frame.payload):
        raise FrameError(f"non-finite payload in frame seq={frame.seq}: {frame.payload}")
    if len(frame.payload) != 3:
        raise FrameError("payload must hold exactly three values")
    kind = int(frame.kind) | (0 if frame.ready else NOT_READY)
    body = _BODY.pack(MAGIC, VERSION, kind, frame.seq & 0xFFFFFFFF, frame.step_index, *frame.payload)
    return body + _CRC.pack(zlib.crc32(body))


def decode_frame(data: bytes) -> InterfaceFrame:
    if len(data) != FRAME_SIZE:
        raise FrameError(f"frame must be {FRAME_SIZE} bytes, got {len(data)}")
    body, (crc,) = data[: _BODY.size], _CRC.unpack(data[_BODY.size :])
    if zlib.crc32(body) != crc:
        raise FrameError("CRC mismatch")
    magic, version, kind, seq, step_index, a, b, c = _BODY.unpack(body)
    if magic != MAGIC:
        raise FrameError(f"bad magic 0x{magic:08X}")
    if version != VERSION:
        raise FrameError(f"unsupported frame version {version}")
    try:
        fk = FrameKind(kind & ~NOT_READY)
    except ValueError:
        raise FrameError(f"unknown frame kind {kind & ~NOT_READY}") from None
    return InterfaceFrame(seq, step_index, fk, (a, b, c), ready=not (kind & NOT_READY))
