"""Byte-level Ethernet / ARP / IPv4 / transport encodings for the simulated LAN.

The transport header is a compact 16-octet stand-in for TCP::

    SPORT(be16) DPORT(be16) SEQ(be32) ACK(be32) FLAGS RSVD CSUM(be16)

``CSUM`` is the ones'-complement sum over the header (checksum zeroed) and
the payload. A :class:`Segment` whose ``checksum`` is ``None`` gets a fresh
checksum when encoded, which is how modified payloads are re-sealed.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass, field, replace

from dnp3mitm.errors import CodecError

ETH_HDR = 14
ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_ARP = 0x0806
IP_PROTO_TRANSPORT = 6
BROADCAST = "ff:ff:ff:ff:ff:ff"
ZERO_MAC = "00:00:00:00:00:00"

ARP_REQUEST = 1
ARP_REPLY = 2

FLAG_ACK = 0x10
FLAG_PSH = 0x08
SEGMENT_HDR = 16


class WireError(CodecError):
    """Raised when octets do not parse as a simulated LAN frame."""


def mac_to_bytes(mac: str) -> bytes:
    return bytes(int(p, 16) for p in mac.split(":"))


def mac_from_bytes(raw: bytes) -> str:
    return ":".join(f"{b:02x}" for b in raw)


def ip_to_bytes(ip: str) -> bytes:
    return ipaddress.IPv4Address(ip).packed


def ip_from_bytes(raw: bytes) -> str:
    return str(ipaddress.IPv4Address(bytes(raw)))


def ones_complement_sum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return (~total) & 0xFFFF


@dataclass(frozen=True)
class ArpPacket:
    op: int
    sender_mac: str
    sender_ip: str
    target_mac: str
    target_ip: str

    def to_bytes(self) -> bytes:
        return (
            struct.pack("!HHBBH", 1, ETHERTYPE_IPV4, 6, 4, self.op)
            + mac_to_bytes(self.sender_mac)
            + ip_to_bytes(self.sender_ip)
            + mac_to_bytes(self.target_mac)
            + ip_to_bytes(self.target_ip)
        )

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ArpPacket":
        if len(raw) != 28:
            raise WireError(f"ARP body is {len(raw)} octets, expected 28")
        _, _, _, _, op = struct.unpack("!HHBBH", raw[:8])
        return cls(
            op,
            mac_from_bytes(raw[8:14]),
            ip_from_bytes(raw[14:18]),
            mac_from_bytes(raw[18:24]),
            ip_from_bytes(raw[24:28]),
        )


@dataclass(frozen=True)
class Segment:
    src_port: int
    dst_port: int
    seq: int
    ack: int
    flags: int = FLAG_ACK
    payload: bytes = b""
    checksum: int | None = field(default=None, compare=False)

    def _header(self, checksum: int) -> bytes:
        return struct.pack(
            "!HHIIBBH", self.src_port, self.dst_port, self.seq, self.ack, self.flags, 0, checksum
        )

    def compute_checksum(self) -> int:
        return ones_complement_sum(self._header(0) + self.payload)

    def sealed(self) -> "Segment":
        return replace(self, checksum=self.compute_checksum())

    def to_bytes(self) -> bytes:
        checksum = self.compute_checksum() if self.checksum is None else self.checksum
        return self._header(checksum) + self.payload

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Segment":
        if len(raw) < SEGMENT_HDR:
            raise WireError("transport header truncated")
        sport, dport, seq, ack, flags, _, csum = struct.unpack("!HHIIBBH", raw[:SEGMENT_HDR])
        return cls(sport, dport, seq, ack, flags, bytes(raw[SEGMENT_HDR:]), csum)

    @property
    def checksum_valid(self) -> bool:
        return self.checksum is None or self.checksum == self.compute_checksum()


@dataclass(frozen=True)
class IPv4:
    src: str
    dst: str
    segment: Segment
    ttl: int = 64

    def to_bytes(self) -> bytes:
        body = self.segment.to_bytes()
        header = struct.pack(
            "!BBHHHBBH4s4s",
            0x45,
            0,
            20 + len(body),
            0,
            0,
            self.ttl,
            IP_PROTO_TRANSPORT,
            0,
            ip_to_bytes(self.src),
            ip_to_bytes(self.dst),
        )
        csum = ones_complement_sum(header)
        return header[:10] + struct.pack("!H", csum) + header[12:] + body

    @classmethod
    def from_bytes(cls, raw: bytes) -> "IPv4":
        if len(raw) < 20 or raw[0] != 0x45:
            raise WireError("not a 20-octet IPv4 header")
        total = struct.unpack("!H", raw[2:4])[0]
        if total != len(raw):
            raise WireError(f"IPv4 total length {total} != {len(raw)}")
        if ones_complement_sum(bytes(raw[:20])) != 0:
            raise WireError("IPv4 header checksum mismatch")
        if raw[9] != IP_PROTO_TRANSPORT:
            raise WireError(f"unsupported IP protocol {raw[9]}")
        return cls(ip_from_bytes(raw[12:16]), ip_from_bytes(raw[16:20]), Segment.from_bytes(raw[20:]), raw[8])


@dataclass(frozen=True)
class Frame:
    """One Ethernet frame carrying either ARP or IPv4.

    ``retransmission`` is simulator metadata (never on the wire): the sender
    marks timer-driven resends so that taps can flag them.
    """

    dst: str
    src: str
    arp: ArpPacket | None = None
    ip: IPv4 | None = None
    retransmission: bool = field(default=False, compare=False)

    @property
    def kind(self) -> str:
        return "ARP" if self.arp is not None else "TRANSPORT"

    @property
    def segment(self) -> Segment | None:
        return self.ip.segment if self.ip is not None else None

    def to_bytes(self) -> bytes:
        if self.arp is not None:
            ethertype, body = ETHERTYPE_ARP, self.arp.to_bytes()
        elif self.ip is not None:
            ethertype, body = ETHERTYPE_IPV4, self.ip.to_bytes()
        else:
            raise WireError("frame carries neither ARP nor IPv4")
        return mac_to_bytes(self.dst) + mac_to_bytes(self.src) + struct.pack("!H", ethertype) + body

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Frame":
        if len(raw) < ETH_HDR:
            raise WireError("Ethernet header truncated")
        dst, src = mac_from_bytes(raw[0:6]), mac_from_bytes(raw[6:12])
        ethertype = struct.unpack("!H", raw[12:14])[0]
        if ethertype == ETHERTYPE_ARP:
            return cls(dst, src, arp=ArpPacket.from_bytes(raw[ETH_HDR:]))
        if ethertype == ETHERTYPE_IPV4:
            return cls(dst, src, ip=IPv4.from_bytes(raw[ETH_HDR:]))
        raise WireError(f"unsupported ethertype 0x{ethertype:04x}")

    def with_macs(self, dst: str, src: str) -> "Frame":
        return replace(self, dst=dst, src=src)

    def with_payload(self, payload: bytes) -> "Frame":
        """Swap the transport payload and drop the stale checksum."""
        if self.ip is None:
            raise WireError("ARP frames carry no transport payload")
        seg = replace(self.ip.segment, payload=payload, checksum=None)
        return replace(self, ip=replace(self.ip, segment=seg))

    def sealed(self) -> "Frame":
        """Copy with the transport checksum filled in."""
        if self.ip is None or self.ip.segment.checksum is not None:
            return self
        return replace(self, ip=replace(self.ip, segment=self.ip.segment.sealed()))
