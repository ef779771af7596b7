"""
DNP3 link / transport / application codec.

Wire layout of one frame::

    05 64 LEN CTRL DST(le16) SRC(le16) HCRC(le16)      10-octet link header
    [ <=16 data octets ][ CRC le16 ] ...                chunked user data

User data is one transport octet (FIR, FIN, 6-bit sequence) followed by the
application fragment: ``APP_CTRL FUNC`` and then either class designators
(READ) or object blocks.

Object blocks use a compact layout rather than the DNP3 group/variation
catalog::

    TAG START(le16) COUNT(le16) POINT*COUNT

    TAG   0x01 BI, 0x02 BO, 0x03 AI, 0x04 AO, 0x05 Counter
    POINT BI/BO: 1 octet (control or status code)
          AI/AO: status octet + IEEE-754 float32 (le)
          Counter: status octet + uint32 (le)

A READ class designator is the 3-octet group-60 header ``3C <class+1> 06``.

Offsets returned by :func:`parse_points` and :func:`locate_point` are
positions in the *pre-chunking* user data (transport octet at offset 0), so
``offset // 16`` is the ordinal of the chunk that carries the octet.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Sequence, Union

from dnp3mitm.crc import (
    BLOCK_SIZE,
    CHUNK_SIZE,
    CRC_SIZE,
    ChunkCrcMismatch,
    TruncatedChunk,
    chunk_payload,
    chunked_length,
    crc16_dnp,
    crc_bytes,
    unchunk_payload,
    wire_offset,
)
from dnp3mitm.errors import CodecError

SYNC = b"\x05\x64"
DNP_HDR_SIZE = 10
CHUNK_DATA_SIZE = BLOCK_SIZE
MAX_USER_DATA = 250
CONTROL_CLOSE = 0x41
CONTROL_TRIP = 0x81
STATUS_OK = 0x00
STATUS_ERROR = 0x04

LINK_CTRL_FROM_MASTER = 0xC4
LINK_CTRL_FROM_OUTSTATION = 0x44

CLASS_GROUP = 0x3C
CLASS_QUALIFIER = 0x06

__all__ = [
    "ApplicationFragment",
    "BadSync",
    "ChunkCrcMismatch",
    "CodecError",
    "Dnp3Packet",
    "Dnp3Point",
    "EmptyPointSet",
    "FunctionCode",
    "HeaderCrcMismatch",
    "InvalidControlCode",
    "LinkHeader",
    "MalformedObjectBlock",
    "NonFiniteValue",
    "ObjectBlock",
    "PayloadTooLarge",
    "PointNotFound",
    "PointType",
    "TrailingOctets",
    "TransportOctet",
    "TruncatedChunk",
    "TruncatedFrame",
    "UnknownFunctionCode",
    "UnknownObjectLayout",
    "build_direct_operate_analog",
    "build_direct_operate_binary",
    "build_read_request",
    "build_read_response",
    "decode_frame",
    "encode_frame",
    "hexdump",
    "locate_point",
    "parse_hexdump",
    "parse_points",
    "patch_user_data",
]


class BadSync(CodecError):
    pass


class HeaderCrcMismatch(CodecError):
    pass


class TruncatedFrame(CodecError):
    pass


class TrailingOctets(CodecError):
    pass


class UnknownObjectLayout(CodecError):
    pass


class MalformedObjectBlock(CodecError):
    pass


class PayloadTooLarge(CodecError):
    pass


class InvalidControlCode(CodecError):
    pass


class NonFiniteValue(CodecError):
    pass


class EmptyPointSet(CodecError):
    pass


class PointNotFound(CodecError, LookupError):
    pass


class PointType(IntEnum):
    BI = 0x01
    BO = 0x02
    AI = 0x03
    AO = 0x04
    COUNTER = 0x05

    @property
    def width(self) -> int:
        return 1 if self in (PointType.BI, PointType.BO) else 5

    @property
    def is_binary(self) -> bool:
        return self in (PointType.BI, PointType.BO)


# Response ordering used when building poll responses.
CANONICAL_ORDER = (PointType.BI, PointType.AI, PointType.BO, PointType.AO, PointType.COUNTER)


class FunctionCode(IntEnum):
    CONFIRM = 0x00
    READ = 0x01
    WRITE = 0x02
    SELECT = 0x03
    OPERATE = 0x04
    DIRECT_OPERATE = 0x05
    DIRECT_OPERATE_NR = 0x06
    FREEZE = 0x07
    IMMEDIATE_FREEZE_NR = 0x08
    FREEZE_CLEAR = 0x09
    FREEZE_CLEAR_NR = 0x10
    COLD_RESTART = 0x13
    ENABLE_SPONTANEOUS = 0x14
    DISABLE_SPONTANEOUS = 0x15
    ASSIGN_CLASSES = 0x16
    DELAY_MEASUREMENT = 0x17
    SOLICITED_RESPONSE = 0x81
    UNSOLICITED_RESPONSE = 0x82


@dataclass(frozen=True)
class UnknownFunctionCode:
    """A function octet outside the known table, kept verbatim."""

    value: int

    def __int__(self) -> int:
        return self.value


Function = Union[FunctionCode, UnknownFunctionCode]


def function_from_octet(code: int) -> Function:
    try:
        return FunctionCode(code)
    except ValueError:
        return UnknownFunctionCode(code)


@dataclass(frozen=True)
class LinkHeader:
    control: int
    destination: int
    source: int
    # Derived on encode; populated by decode_frame for inspection only.
    length: int | None = field(default=None, compare=False)
    header_crc: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class TransportOctet:
    fir: bool = True
    fin: bool = True
    sequence: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.sequence < 64:
            raise ValueError(f"transport sequence must be 0-63, got {self.sequence}")

    def to_octet(self) -> int:
        return (0x40 if self.fir else 0) | (0x80 if self.fin else 0) | self.sequence

    @classmethod
    def from_octet(cls, octet: int) -> "TransportOctet":
        return cls(fir=bool(octet & 0x40), fin=bool(octet & 0x80), sequence=octet & 0x3F)


@dataclass(frozen=True)
class ObjectBlock:
    point_type: PointType
    start_index: int
    count: int
    payload: bytes

    def __post_init__(self) -> None:
        if not 0 <= self.start_index <= 0xFFFF or not 0 <= self.count <= 0xFFFF:
            raise MalformedObjectBlock("start/count must fit 16 bits")
        if self.count and self.start_index + self.count - 1 > 0xFFFF:
            raise MalformedObjectBlock("block index range exceeds 16 bits")
        if len(self.payload) != self.count * self.point_type.width:
            raise MalformedObjectBlock(
                f"{self.point_type.name} block of {self.count} points needs "
                f"{self.count * self.point_type.width} octets, got {len(self.payload)}"
            )

    def to_bytes(self) -> bytes:
        return (
            bytes([self.point_type])
            + self.start_index.to_bytes(2, "little")
            + self.count.to_bytes(2, "little")
            + self.payload
        )


@dataclass(frozen=True)
class ApplicationFragment:
    app_control: int
    function: Function
    objects: tuple[ObjectBlock, ...] = ()
    class_designators: tuple[int, ...] = ()

    def to_bytes(self) -> bytes:
        out = bytearray([self.app_control & 0xFF, int(self.function) & 0xFF])
        if self.function == FunctionCode.READ:
            for cls in self.class_designators:
                out += bytes([CLASS_GROUP, cls + 1, CLASS_QUALIFIER])
        else:
            for block in self.objects:
                out += block.to_bytes()
        return bytes(out)


@dataclass(frozen=True)
class Dnp3Packet:
    link: LinkHeader
    transport: TransportOctet
    app: ApplicationFragment

    @property
    def function(self) -> Function:
        return self.app.function

    def user_data(self) -> bytes:
        return bytes([self.transport.to_octet()]) + self.app.to_bytes()


@dataclass(frozen=True)
class Dnp3Point:
    point_type: PointType
    point_index: int
    value: float | int
    status: int = STATUS_OK
    # Location in the chunked payload; filled in by parse_points.
    chunk_index: tuple[int, ...] = field(default=(), compare=False)
    offset: int | None = field(default=None, compare=False)


# --------------------------------------------------------------------------
# Encoding
# --------------------------------------------------------------------------


def _f32(value: float) -> float:
    try:
        return struct.unpack("<f", struct.pack("<f", value))[0]
    except OverflowError as exc:
        raise NonFiniteValue(f"{value!r} does not fit a single-precision float") from exc


def encode_point(point_type: PointType, value: float | int, status: int = STATUS_OK) -> bytes:
    if point_type.is_binary:
        return bytes([int(value) & 0xFF])
    if point_type == PointType.COUNTER:
        return bytes([status]) + int(value).to_bytes(4, "little")
    try:
        return bytes([status]) + struct.pack("<f", value)
    except OverflowError as exc:
        raise NonFiniteValue(f"{value!r} does not fit a single-precision float") from exc


def decode_point(point_type: PointType, raw: bytes) -> tuple[float | int, int]:
    """Return ``(value, status)`` for one encoded point."""
    if point_type.is_binary:
        return raw[0], STATUS_OK
    if point_type == PointType.COUNTER:
        return int.from_bytes(raw[1:5], "little"), raw[0]
    return struct.unpack("<f", raw[1:5])[0], raw[0]


def encode_frame(packet: Dnp3Packet) -> bytes:
    user = packet.user_data()
    if len(user) > MAX_USER_DATA:
        raise PayloadTooLarge(f"{len(user)} user-data octets exceed {MAX_USER_DATA}")
    link = packet.link
    head = (
        SYNC
        + bytes([5 + len(user), link.control & 0xFF])
        + link.destination.to_bytes(2, "little")
        + link.source.to_bytes(2, "little")
    )
    return head + crc_bytes(head) + chunk_payload(user)


# --------------------------------------------------------------------------
# Decoding
# --------------------------------------------------------------------------


def _decode_objects(body: bytes, function: Function) -> tuple[tuple[ObjectBlock, ...], tuple[int, ...]]:
    if function == FunctionCode.READ:
        if len(body) % 3:
            raise UnknownObjectLayout("READ body is not a sequence of class designators")
        classes = []
        for i in range(0, len(body), 3):
            group, var, qual = body[i : i + 3]
            if group != CLASS_GROUP or qual != CLASS_QUALIFIER or not 1 <= var <= 4:
                raise UnknownObjectLayout(f"unsupported READ designator {body[i:i+3].hex(' ')}")
            classes.append(var - 1)
        return (), tuple(classes)

    blocks = []
    pos = 0
    while pos < len(body):
        if len(body) - pos < 5:
            raise MalformedObjectBlock(f"object header truncated at application octet {pos + 2}")
        tag = body[pos]
        try:
            ptype = PointType(tag)
        except ValueError:
            raise UnknownObjectLayout(f"unknown object tag 0x{tag:02x}") from None
        start = int.from_bytes(body[pos + 1 : pos + 3], "little")
        count = int.from_bytes(body[pos + 3 : pos + 5], "little")
        size = count * ptype.width
        payload = body[pos + 5 : pos + 5 + size]
        if len(payload) != size:
            raise MalformedObjectBlock(
                f"{ptype.name} block declares {count} points but only {len(payload)} octets remain"
            )
        blocks.append(ObjectBlock(ptype, start, count, payload))
        pos += 5 + size
    return tuple(blocks), ()


def decode_application(data: bytes) -> ApplicationFragment:
    if len(data) < 2:
        raise TruncatedFrame("application fragment shorter than its 2-octet header")
    function = function_from_octet(data[1])
    objects, classes = _decode_objects(data[2:], function)
    return ApplicationFragment(data[0], function, objects, classes)


def split_frame(data: bytes) -> tuple[LinkHeader, bytes]:
    """Validate the link header and chunk CRCs; return header and user data."""
    if len(data) >= 1 and data[0] != SYNC[0] or len(data) >= 2 and data[1] != SYNC[1]:
        raise BadSync(f"expected sync 05 64, got {bytes(data[:2]).hex(' ')}")
    if len(data) < DNP_HDR_SIZE:
        raise TruncatedFrame(f"{len(data)} octets is shorter than the 10-octet link header")
    if crc_bytes(data[:8]) != bytes(data[8:10]):
        raise HeaderCrcMismatch(
            f"header CRC {bytes(data[8:10]).hex(' ')} != computed {crc_bytes(data[:8]).hex(' ')}"
        )
    length = data[2]
    user_len = length - 5
    if user_len < 1:
        raise TruncatedFrame(f"length octet {length} leaves no room for the transport octet")
    expected = DNP_HDR_SIZE + chunked_length(user_len)
    if len(data) < expected:
        raise TruncatedFrame(f"frame declares {expected} octets, only {len(data)} present")
    if len(data) > expected:
        raise TrailingOctets(f"{len(data) - expected} octets after the declared frame end")
    user = unchunk_payload(bytes(data[DNP_HDR_SIZE:expected]), base_offset=DNP_HDR_SIZE)
    header = LinkHeader(
        control=data[3],
        destination=int.from_bytes(data[4:6], "little"),
        source=int.from_bytes(data[6:8], "little"),
        length=length,
        header_crc=int.from_bytes(data[8:10], "little"),
    )
    return header, user


def decode_frame(data: bytes) -> Dnp3Packet:
    header, user = split_frame(data)
    return Dnp3Packet(header, TransportOctet.from_octet(user[0]), decode_application(user[1:]))


# --------------------------------------------------------------------------
# Builders
# --------------------------------------------------------------------------


def _app_control(seq: int) -> int:
    return 0xC0 | (seq & 0x0F)


def build_direct_operate_binary(
    dest: int, src: int, index: int, control: int, *, app_seq: int = 0, transport_seq: int = 0
) -> Dnp3Packet:
    if control not in (CONTROL_CLOSE, CONTROL_TRIP):
        raise InvalidControlCode(f"control code 0x{control:02x} is neither CLOSE (0x41) nor TRIP (0x81)")
    block = ObjectBlock(PointType.BO, index, 1, bytes([control]))
    return Dnp3Packet(
        LinkHeader(LINK_CTRL_FROM_MASTER, dest, src),
        TransportOctet(True, True, transport_seq & 0x3F),
        ApplicationFragment(_app_control(app_seq), FunctionCode.DIRECT_OPERATE, (block,)),
    )


def build_direct_operate_analog(
    dest: int, src: int, index: int, value: float, *, app_seq: int = 0, transport_seq: int = 0
) -> Dnp3Packet:
    if not math.isfinite(value):
        raise NonFiniteValue(f"setpoint {value!r} is not finite")
    block = ObjectBlock(PointType.AO, index, 1, encode_point(PointType.AO, value))
    return Dnp3Packet(
        LinkHeader(LINK_CTRL_FROM_MASTER, dest, src),
        TransportOctet(True, True, transport_seq & 0x3F),
        ApplicationFragment(_app_control(app_seq), FunctionCode.DIRECT_OPERATE, (block,)),
    )


def build_read_request(dest: int, src: int, *, app_seq: int = 0, transport_seq: int = 0) -> Dnp3Packet:
    """Class 0 (static data) integrity poll."""
    return Dnp3Packet(
        LinkHeader(LINK_CTRL_FROM_MASTER, dest, src),
        TransportOctet(True, True, transport_seq & 0x3F),
        ApplicationFragment(_app_control(app_seq), FunctionCode.READ, class_designators=(0,)),
    )


def _runs(points: Sequence[Dnp3Point]) -> Iterable[list[Dnp3Point]]:
    run: list[Dnp3Point] = []
    for p in points:
        if run and p.point_index != run[-1].point_index + 1:
            yield run
            run = []
        run.append(p)
    if run:
        yield run


def build_read_response(
    dest: int,
    src: int,
    points: Iterable[Dnp3Point],
    *,
    app_seq: int = 0,
    transport_seq: int = 0,
    function: FunctionCode = FunctionCode.SOLICITED_RESPONSE,
) -> Dnp3Packet:
    """Solicited response carrying ``points`` in BI, AI, BO, AO order.

    Consecutive indices of one type share an object block; gaps start a new
    block.
    """
    pts = list(points)
    if not pts:
        raise EmptyPointSet("a response needs at least one point")
    order = {t: i for i, t in enumerate(CANONICAL_ORDER)}
    pts.sort(key=lambda p: (order[p.point_type], p.point_index))
    seen = set()
    for p in pts:
        key = (p.point_type, p.point_index)
        if key in seen:
            raise ValueError(f"duplicate point {p.point_type.name}[{p.point_index}]")
        seen.add(key)

    blocks = []
    for ptype in CANONICAL_ORDER:
        typed = [p for p in pts if p.point_type == ptype]
        for run in _runs(typed):
            payload = b"".join(encode_point(ptype, p.value, p.status) for p in run)
            blocks.append(ObjectBlock(ptype, run[0].point_index, len(run), payload))
    return Dnp3Packet(
        LinkHeader(LINK_CTRL_FROM_OUTSTATION, dest, src),
        TransportOctet(True, True, transport_seq & 0x3F),
        ApplicationFragment(_app_control(app_seq), function, tuple(blocks)),
    )


# --------------------------------------------------------------------------
# Point extraction and location
# --------------------------------------------------------------------------

_APP_BODY_START = 3  # transport octet + app control + function


def _chunks_of(offset: int, width: int) -> tuple[int, ...]:
    return tuple(sorted({o // BLOCK_SIZE for o in range(offset, offset + width)}))


def _walk(packet: Dnp3Packet) -> Iterable[tuple[ObjectBlock, int, int]]:
    """Yield ``(block, point_index, offset)`` for every point in ``packet``."""
    pos = _APP_BODY_START
    for block in packet.app.objects:
        pos += 5
        width = block.point_type.width
        for k in range(block.count):
            yield block, block.start_index + k, pos + k * width
        pos += block.count * width


def parse_points(packet: Dnp3Packet) -> list[Dnp3Point]:
    if packet.function not in (FunctionCode.SOLICITED_RESPONSE, FunctionCode.UNSOLICITED_RESPONSE):
        raise MalformedObjectBlock(f"function {packet.function!r} does not carry point data")
    user = packet.user_data()
    points = []
    for block, index, offset in _walk(packet):
        width = block.point_type.width
        raw = user[offset : offset + width]
        if len(raw) != width:
            raise MalformedObjectBlock(f"{block.point_type.name}[{index}] truncated")
        value, status = decode_point(block.point_type, raw)
        points.append(
            Dnp3Point(
                block.point_type,
                index,
                value,
                status,
                chunk_index=_chunks_of(offset, width),
                offset=offset,
            )
        )
    return points


def locate_point(
    packet: Dnp3Packet, point_type: PointType, point_index: int
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Octets to edit for one point, and the chunks whose CRC they affect.

    Binary points yield the single control/status octet; analog and counter
    points yield the 4 value octets that follow the status octet.
    """
    for block, index, offset in _walk(packet):
        if block.point_type == point_type and index == point_index:
            if point_type.is_binary:
                offsets = (offset,)
            else:
                offsets = tuple(range(offset + 1, offset + 5))
            return offsets, _chunks_of(offsets[0], len(offsets))
    raise PointNotFound(f"{point_type.name}[{point_index}] not present in packet")


# --------------------------------------------------------------------------
# In-place edits on encoded frames
# --------------------------------------------------------------------------


def patch_user_data(
    frame: bytes, data_offset: int, new: bytes, *, recompute_crc: bool = True
) -> tuple[bytes, tuple[int, ...]]:
    """Overwrite user-data octets of an encoded frame without re-encoding.

    The edit is applied chunk by chunk, so a value straddling a block
    boundary is written as two partial writes. Only the CRCs of the touched
    chunks are recomputed. Returns the new frame and the touched chunk
    ordinals.
    """
    buf = bytearray(frame)
    user_len = buf[2] - 5
    if data_offset < 0 or data_offset + len(new) > user_len:
        raise PointNotFound(
            f"octets {data_offset}..{data_offset + len(new) - 1} outside {user_len}-octet user data"
        )
    touched = []
    for i, octet in enumerate(new):
        o = data_offset + i
        buf[DNP_HDR_SIZE + wire_offset(o)] = octet
        if o // BLOCK_SIZE not in touched:
            touched.append(o // BLOCK_SIZE)
    if recompute_crc:
        for chunk in touched:
            start = DNP_HDR_SIZE + chunk * CHUNK_SIZE
            size = min(BLOCK_SIZE, user_len - chunk * BLOCK_SIZE)
            buf[start + size : start + size + CRC_SIZE] = crc_bytes(buf[start : start + size])
    return bytes(buf), tuple(touched)


def read_user_data(frame: bytes, data_offset: int, size: int) -> bytes:
    """Read user-data octets straight from an encoded frame (no CRC checks)."""
    return bytes(frame[DNP_HDR_SIZE + wire_offset(o)] for o in range(data_offset, data_offset + size))


def chunk_crcs(frame: bytes) -> list[bytes]:
    """CRC octet pairs of every data chunk, in order."""
    user_len = frame[2] - 5
    out = []
    for chunk in range(-(-user_len // BLOCK_SIZE)):
        size = min(BLOCK_SIZE, user_len - chunk * BLOCK_SIZE)
        start = DNP_HDR_SIZE + chunk * CHUNK_SIZE + size
        out.append(bytes(frame[start : start + CRC_SIZE]))
    return out


# --------------------------------------------------------------------------
# Hex rendering
# --------------------------------------------------------------------------


def hexdump(data: bytes) -> str:
    """Two lowercase hex digits per octet, space separated, 16 per line."""
    return "\n".join(data[i : i + 16].hex(" ") for i in range(0, len(data), 16))


def parse_hexdump(text: str) -> bytes:
    return bytes.fromhex("".join(text.split()))


def is_valid_header_crc(frame: bytes) -> bool:
    return len(frame) >= DNP_HDR_SIZE and crc16_dnp(frame[:8]) == int.from_bytes(frame[8:10], "little")
