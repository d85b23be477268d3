"""Master/worker wire protocol.

Frame layout (little-endian)::

    u32 length      # bytes that follow: 1 + 4 + len(body)
    u8  type
    u32 round
    ... body

Bodies:

* HELLO       utf-8 role string
* ASSIGN      u32 worker index, u32 worker count, then three u32-length-prefixed
              blobs: config text, HEMODEL1 model, HEDATA01 partition
* ROUND_DONE  HEMODEL1 model
* AGGREGATED  HEMODEL1 model
* FINISH      empty
* ERROR       utf-8 message
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from ..errors import ProtocolError

MAX_FRAME = 1 << 31
_LEN = struct.Struct("<I")
_HEAD = struct.Struct("<BI")


class MsgType(enum.IntEnum):
    HELLO = 1
    ASSIGN = 2
    ROUND_DONE = 3
    AGGREGATED = 4
    FINISH = 5
    ERROR = 6


@dataclass(frozen=True)
class Message:
    type: MsgType
    round: int = 0
    body: bytes = b""

    @property
    def text(self) -> str:
        return self.body.decode("utf-8", errors="replace")


def encode(msg: Message) -> bytes:
    payload = _HEAD.pack(int(msg.type), msg.round) + msg.body
    return _LEN.pack(len(payload)) + payload


def decode_payload(payload: bytes) -> Message:
    if len(payload) < _HEAD.size:
        raise ProtocolError(f"frame payload too short ({len(payload)} bytes)")
    kind, rnd = _HEAD.unpack_from(payload)
    try:
        kind = MsgType(kind)
    except ValueError:
        raise ProtocolError(f"unknown message type {kind}") from None
    return Message(kind, rnd, bytes(payload[_HEAD.size :]))


def decode(frame: bytes) -> Message:
    if len(frame) < _LEN.size:
        raise ProtocolError("truncated frame header")
    (n,) = _LEN.unpack_from(frame)
    if len(frame) != _LEN.size + n:
        raise ProtocolError(f"frame length {len(frame) - _LEN.size} != declared {n}")
    return decode_payload(frame[_LEN.size :])


def pack_blobs(*blobs: bytes) -> bytes:
    return b"".join(_LEN.pack(len(b)) + b for b in blobs)


def unpack_blobs(data: bytes, count: int, offset: int = 0) -> list[bytes]:
    out = []
    pos = offset
    for _ in range(count):
        if pos + 4 > len(data):
            raise ProtocolError("truncated blob length")
        (n,) = _LEN.unpack_from(data, pos)
        pos += 4
        if pos + n > len(data):
            raise ProtocolError("truncated blob")
        out.append(data[pos : pos + n])
        pos += n
    if pos != len(data):
        raise ProtocolError(f"{len(data) - pos} trailing bytes in message body")
    return out


def assign_body(index: int, count: int, config_text: str, model: bytes, partition: bytes) -> bytes:
    return struct.pack("<II", index, count) + pack_blobs(config_text.encode("utf-8"), model, partition)


def parse_assign(body: bytes) -> tuple[int, int, str, bytes, bytes]:
    if len(body) < 8:
        raise ProtocolError("ASSIGN body too short")
    index, count = struct.unpack_from("<II", body)
    cfg, model, part = unpack_blobs(body, 3, 8)
    return index, count, cfg.decode("utf-8"), model, part
