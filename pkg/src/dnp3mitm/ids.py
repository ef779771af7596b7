"""Rule-based IDS stationed on the substation router's LAN interface.

Two preprocessors feed five rules plus a CRC check:

* ARP whitelist (R1-R3). ``R1`` fires when a whitelisted sender IP shows up
  with a sender MAC that disagrees with the Ethernet source or the
  whitelist. ``R2`` is the same test on the target side of a reply. ``R3``
  fires on an unsolicited reply that would bind a whitelisted IP to a
  foreign MAC.
* DNP3 on port 20000. A frame with a bad link or chunk CRC raises
  ``CRC_FAIL`` and is not evaluated further; otherwise ``R4`` matches
  DIRECT OPERATE and ``R5`` OPERATE toward a protected outstation.

Alert log format, one alert per line after a header::

    [ts_ms] [RULE] "message" src -> dst [rec:N]

``rec:N`` is the id of the capture record that raised the alert.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

from dnp3mitm import codec
from dnp3mitm.netsim.capture import CaptureRecord
from dnp3mitm.netsim.wire import ARP_REPLY, ARP_REQUEST, Frame

ALERT_LOG_HEADER = "# dnp3mitm alert log v1"
DNP3_PORT = 20000


class RuleId(str, Enum):
    R1 = "R1"
    R2 = "R2"
    R3 = "R3"
    R4 = "R4"
    R5 = "R5"
    CRC_FAIL = "CRC_FAIL"

    @property
    def is_arp(self) -> bool:
        return self in (RuleId.R1, RuleId.R2, RuleId.R3)


MESSAGES = {
    RuleId.R1: "ARPSPOOF_ETHERFRAME_ARP_MISMATCH_SRC",
    RuleId.R2: "ARPSPOOF_ETHERFRAME_ARP_MISMATCH_DST",
    RuleId.R3: "ARPSPOOF_ARP_CACHE_OVERWRITE_ATTACK",
    RuleId.R4: "DNP3 Snort DIRECT OPERATE",
    RuleId.R5: "DNP3 Snort OPERATE",
    RuleId.CRC_FAIL: "DNP3 Link-Layer Frame contains bad CRC",
}


@dataclass(frozen=True)
class WhitelistEntry:
    ip: str
    mac: str


@dataclass(frozen=True)
class AlertRecord:
    ts_ms: float
    rule: RuleId
    message: str
    src: str
    dst: str
    record_id: int

    def to_line(self) -> str:
        return f'[{self.ts_ms:.3f}] [{self.rule.value}] "{self.message}" {self.src} -> {self.dst} [rec:{self.record_id}]'


_LINE = re.compile(r'^\[(?P<ts>[0-9.]+)\] \[(?P<rule>\w+)\] "(?P<msg>[^"]*)" (?P<src>\S+) -> (?P<dst>\S+) \[rec:(?P<rec>\d+)\]$')


def parse_alert_line(line: str) -> AlertRecord:
    m = _LINE.match(line.strip())
    if m is None:
        raise ValueError(f"not an alert line: {line!r}")
    return AlertRecord(float(m["ts"]), RuleId(m["rule"]), m["msg"], m["src"], m["dst"], int(m["rec"]))


def build_whitelist(entries: Iterable[WhitelistEntry]) -> dict[str, str]:
    table: dict[str, str] = {}
    for e in entries:
        if e.ip in table and table[e.ip] != e.mac:
            raise ValueError(f"whitelist has two MACs for {e.ip}")
        table[e.ip] = e.mac.lower()
    return table


@dataclass
class Ids:
    whitelist: dict[str, str]
    protected: set[str] = field(default_factory=set)
    dnp3_port: int = DNP3_PORT
    alerts: list[AlertRecord] = field(default_factory=list)
    _asked: set[tuple[str, str]] = field(default_factory=set)

    def _alert(self, record: CaptureRecord, rule: RuleId, src: str, dst: str) -> AlertRecord:
        alert = AlertRecord(record.ts_ms, rule, MESSAGES[rule], src, dst, record.id)
        self.alerts.append(alert)
        return alert

    def inspect(self, record: CaptureRecord) -> list[AlertRecord]:
        if record.kind == "ARP":
            return self.inspect_arp(record)
        return self.inspect_dnp3(record)

    def inspect_arp(self, record: CaptureRecord, frame: Frame | None = None) -> list[AlertRecord]:
        frame = frame or record.frame()
        arp = frame.arp
        if arp is None:
            return []
        out = []
        src, dst = arp.sender_ip, arp.target_ip
        wl_sender = self.whitelist.get(arp.sender_ip)
        if wl_sender is not None and (arp.sender_mac != frame.src or arp.sender_mac != wl_sender):
            out.append(self._alert(record, RuleId.R1, src, dst))
        if arp.op == ARP_REPLY:
            wl_target = self.whitelist.get(arp.target_ip)
            if wl_target is not None and (frame.dst != arp.target_mac or arp.target_mac != wl_target):
                out.append(self._alert(record, RuleId.R2, src, dst))
            solicited = (arp.target_ip, arp.sender_ip) in self._asked
            self._asked.discard((arp.target_ip, arp.sender_ip))
            if wl_sender is not None and arp.sender_mac != wl_sender and not solicited:
                out.append(self._alert(record, RuleId.R3, src, dst))
        elif arp.op == ARP_REQUEST:
            self._asked.add((arp.sender_ip, arp.target_ip))
        return out

    def inspect_dnp3(self, record: CaptureRecord, frame: Frame | None = None) -> list[AlertRecord]:
        frame = frame or record.frame()
        seg = frame.segment
        if seg is None or not seg.payload:
            return []
        if self.dnp3_port not in (seg.src_port, seg.dst_port):
            return []
        payload = seg.payload
        if payload[:2] != codec.SYNC:
            return []
        src, dst = frame.ip.src, frame.ip.dst
        try:
            packet = codec.decode_frame(payload)
        except (codec.HeaderCrcMismatch, codec.ChunkCrcMismatch):
            return [self._alert(record, RuleId.CRC_FAIL, src, dst)]
        except codec.CodecError:
            return []
        to_server = seg.dst_port == self.dnp3_port and (not self.protected or dst in self.protected)
        if not to_server:
            return []
        if packet.function == codec.FunctionCode.DIRECT_OPERATE:
            return [self._alert(record, RuleId.R4, src, dst)]
        if packet.function == codec.FunctionCode.OPERATE:
            return [self._alert(record, RuleId.R5, src, dst)]
        return []


class AlertSink:
    """Append-only alert log writer."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        with open(self.path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(ALERT_LOG_HEADER + "\n")

    def write(self, alert: AlertRecord) -> None:
        with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(alert.to_line() + "\n")


def write_alert_log(path: str | Path, alerts: Iterable[AlertRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(ALERT_LOG_HEADER + "\n")
        for alert in alerts:
            fh.write(alert.to_line() + "\n")


def read_alert_log(path: str | Path) -> list[AlertRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != ALERT_LOG_HEADER:
        raise ValueError(f"{path}: missing alert log header")
    return [parse_alert_line(line) for line in lines[1:] if line.strip()]
