"""Capture records and the JSON Lines capture file."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Iterator

from dnp3mitm import codec
from dnp3mitm.netsim.wire import Frame

CAPTURE_SCHEMA = "dnp3mitm-capture"
CAPTURE_VERSION = 1

DIRECTIONS = ("in", "out", "pass")


def summarize_dnp3(payload: bytes) -> dict | None:
    """Short decode of a transport payload, or ``None`` if it is not DNP3.

    A payload whose link header is intact but whose chunk CRCs fail is
    still summarized, with ``crc_valid`` false and the function octet read
    from the raw bytes.
    """
    if len(payload) < codec.DNP_HDR_SIZE or payload[:2] != codec.SYNC:
        return None
    try:
        packet = codec.decode_frame(payload)
    except codec.CodecError:
        if not codec.is_valid_header_crc(payload) or len(payload) < 13:
            return {"function": None, "points": None, "crc_valid": False}
        function = codec.function_from_octet(payload[12])
        return {"function": _fc_name(function), "points": None, "crc_valid": False}
    return {"function": _fc_name(packet.function), "points": _points_summary(packet), "crc_valid": True}


def _fc_name(function) -> str:
    return f"0x{int(function):02x}"


def _points_summary(packet: codec.Dnp3Packet) -> list[str]:
    out = []
    user = packet.user_data()
    for block, index, offset in codec._walk(packet):
        raw = user[offset : offset + block.point_type.width]
        value, status = codec.decode_point(block.point_type, raw)
        if block.point_type.is_binary:
            out.append(f"{block.point_type.name}[{index}]=0x{value:02x}")
        else:
            out.append(f"{block.point_type.name}[{index}]={value:g}")
    return out


@dataclass(frozen=True)
class CaptureRecord:
    id: int
    ts_ms: float
    point: str
    direction: str
    src_mac: str
    dst_mac: str
    src_ip: str | None
    dst_ip: str | None
    kind: str
    seq: int | None
    ack: int | None
    retransmission: bool
    raw: str
    dnp3: dict | None

    def frame(self) -> Frame:
        return Frame.from_bytes(bytes.fromhex(self.raw))

    @property
    def function(self) -> str | None:
        return self.dnp3["function"] if self.dnp3 else None

    @property
    def payload(self) -> bytes:
        seg = self.frame().segment
        return seg.payload if seg is not None else b""

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def make_record(rec_id: int, ts_ms: float, point: str, direction: str, frame: Frame) -> CaptureRecord:
    sealed = frame.sealed()
    raw = sealed.to_bytes()
    if sealed.arp is not None:
        src_ip, dst_ip = sealed.arp.sender_ip, sealed.arp.target_ip
        seq = ack = None
        dnp3 = None
    else:
        src_ip, dst_ip = sealed.ip.src, sealed.ip.dst
        seq, ack = sealed.ip.segment.seq, sealed.ip.segment.ack
        dnp3 = summarize_dnp3(sealed.ip.segment.payload)
    return CaptureRecord(
        rec_id,
        ts_ms,
        point,
        direction,
        sealed.src,
        sealed.dst,
        src_ip,
        dst_ip,
        sealed.kind,
        seq,
        ack,
        frame.retransmission,
        raw.hex(),
        dnp3,
    )


class CaptureLog:
    """In-memory capture shared by every tap of one scenario run."""

    def __init__(self) -> None:
        self.records: list[CaptureRecord] = []
        self._listeners = []

    def add(self, ts_ms: float, point: str, direction: str, frame: Frame) -> CaptureRecord:
        record = make_record(len(self.records), ts_ms, point, direction, frame)
        self.records.append(record)
        for listener in self._listeners:
            listener(record)
        return record

    def subscribe(self, listener) -> None:
        """Call ``listener(record)`` synchronously for every new record."""
        self._listeners.append(listener)

    def at(self, point: str) -> list[CaptureRecord]:
        return [r for r in self.records if r.point == point]

    def write(self, path: str | Path) -> None:
        write_capture(path, self.records)


def write_capture(path: str | Path, records: Iterable[CaptureRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"schema": CAPTURE_SCHEMA, "version": CAPTURE_VERSION}) + "\n")
        for record in records:
            fh.write(record.to_json() + "\n")


def iter_capture(path: str | Path) -> Iterator[CaptureRecord]:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("schema") != CAPTURE_SCHEMA:
            raise ValueError(f"{path}: not a capture file (header {header!r})")
        for line in fh:
            if line.strip():
                yield CaptureRecord(**json.loads(line))


def read_capture(path: str | Path) -> list[CaptureRecord]:
    return list(iter_capture(path))
