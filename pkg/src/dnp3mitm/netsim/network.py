"""Nodes, shared media, ARP and a minimal reliable transport.

Topology used by the scenarios::

    master --(WAN link)-- router ==(LAN hub)== outstations, adversary

The LAN is a shared segment: every attached interface sees every frame,
accepts the ones addressed to it, and a promiscuous tap can record the rest
with direction ``"pass"``.
"""

from __future__ import annotations

import ipaddress
import logging
from dataclasses import dataclass, field, replace
from typing import Callable

from dnp3mitm.errors import SimulationError
from dnp3mitm.netsim.capture import CaptureLog
from dnp3mitm.netsim.sim import Simulator, ms
from dnp3mitm.netsim.wire import (
    ARP_REPLY,
    ARP_REQUEST,
    BROADCAST,
    FLAG_ACK,
    FLAG_PSH,
    ZERO_MAC,
    ArpPacket,
    Frame,
    IPv4,
    Segment,
)

log = logging.getLogger(__name__)

DEFAULT_LINK_LATENCY_MS = 1.0
DEFAULT_RTO_MS = 7000.0
ARP_RETRY_MS = 1000.0
ARP_ATTEMPTS = 3
MAX_RETRANSMISSIONS = 30


class ArpTimeout(SimulationError):
    pass


class ConnClosed(SimulationError):
    pass


TapFn = Callable[[str, Frame], None]


class Medium:
    """Shared segment with a fixed one-way latency."""

    def __init__(self, sim: Simulator, name: str, latency_ms: float = DEFAULT_LINK_LATENCY_MS):
        self.sim = sim
        self.name = name
        self.latency = ms(latency_ms)
        self.ports: list["Interface"] = []

    def attach(self, iface: "Interface") -> None:
        self.ports.append(iface)
        iface.medium = self

    def transmit(self, sender: "Interface", frame: Frame) -> None:
        for port in self.ports:
            if port is not sender:
                self.sim.after(self.latency, lambda p=port: p.receive(frame), f"{self.name}->{port.label}")


class Interface:
    def __init__(self, node: "Node", name: str, mac: str, ip: str, prefix: int = 24):
        self.node = node
        self.name = name
        self.mac = mac
        self.ip = ip
        self.network = ipaddress.IPv4Network(f"{ip}/{prefix}", strict=False)
        self.medium: Medium | None = None
        self.taps: list[TapFn] = []
        # When set, frames not addressed to this NIC are still shown to taps.
        self.observe_all = False
        # When set, the node records its own "in" events (e.g. after queueing).
        self.manual_in_tap = False

    @property
    def label(self) -> str:
        return f"{self.node.name}:{self.name}"

    def tap(self, direction: str, frame: Frame) -> None:
        for fn in self.taps:
            fn(direction, frame)

    def send(self, frame: Frame) -> None:
        frame = frame.sealed()
        self.tap("out", frame)
        self.medium.transmit(self, frame)

    def accepts(self, frame: Frame) -> bool:
        return frame.dst == self.mac or frame.dst == BROADCAST

    def receive(self, frame: Frame) -> None:
        if self.accepts(frame):
            if not self.manual_in_tap:
                self.tap("in", frame)
            self.node.on_frame(self, frame)
        elif self.observe_all:
            self.tap("pass", frame)


def tap(iface: Interface, sink: CaptureLog, *, promiscuous: bool = False) -> None:
    """Record every frame traversing ``iface`` into ``sink``."""
    sim = iface.node.sim
    iface.observe_all = iface.observe_all or promiscuous
    iface.taps.append(lambda direction, frame: sink.add(sim.now_ms, iface.label, direction, frame))


@dataclass
class ArpEntry:
    mac: str
    updated_ms: float


@dataclass
class _PendingArp:
    frames: list[Frame] = field(default_factory=list)
    attempts: int = 0
    timer: object = None


class Node:
    """An IP host with ARP, optional default gateway and transport endpoints."""

    def __init__(self, sim: Simulator, name: str):
        self.sim = sim
        self.name = name
        self.interfaces: list[Interface] = []
        self.arp_table: dict[str, ArpEntry] = {}
        self.gateway: str | None = None
        self.conns: dict[tuple[int, str, int], TransportConn] = {}
        self._pending_arp: dict[str, _PendingArp] = {}
        self.arp_failures: list[tuple[float, str]] = []

    # -- addressing ----------------------------------------------------------

    def add_interface(self, name: str, mac: str, ip: str, prefix: int = 24) -> Interface:
        iface = Interface(self, name, mac, ip, prefix)
        self.interfaces.append(iface)
        return iface

    @property
    def ip(self) -> str:
        return self.interfaces[0].ip

    @property
    def mac(self) -> str:
        return self.interfaces[0].mac

    def owns_ip(self, ip: str) -> bool:
        return any(i.ip == ip for i in self.interfaces)

    def route(self, dst_ip: str) -> tuple[Interface, str]:
        """Outgoing interface and next-hop IP for ``dst_ip``."""
        addr = ipaddress.IPv4Address(dst_ip)
        for iface in self.interfaces:
            if addr in iface.network:
                return iface, dst_ip
        if self.gateway is None:
            raise SimulationError(f"{self.name}: no route to {dst_ip}")
        iface, _ = self.route(self.gateway)
        return iface, self.gateway

    # -- ARP -----------------------------------------------------------------

    def learn(self, ip: str, mac: str) -> None:
        self.arp_table[ip] = ArpEntry(mac, self.sim.now_ms)
        pending = self._pending_arp.pop(ip, None)
        if pending is not None:
            if pending.timer is not None:
                pending.timer.cancel()
            iface, _ = self.route(ip)
            for frame in pending.frames:
                iface.send(replace(frame, dst=mac))

    def lookup(self, ip: str) -> str | None:
        entry = self.arp_table.get(ip)
        return entry.mac if entry else None

    def _send_arp_request(self, iface: Interface, ip: str) -> None:
        iface.send(Frame(BROADCAST, iface.mac, arp=ArpPacket(ARP_REQUEST, iface.mac, iface.ip, ZERO_MAC, ip)))

    def resolve_async(self, iface: Interface, ip: str, frame: Frame | None) -> None:
        """Queue ``frame`` until ``ip`` resolves; start an ARP exchange if needed."""
        pending = self._pending_arp.get(ip)
        if pending is None:
            pending = self._pending_arp[ip] = _PendingArp()
            self._arp_attempt(iface, ip)
        if frame is not None:
            pending.frames.append(frame)

    def _arp_attempt(self, iface: Interface, ip: str) -> None:
        pending = self._pending_arp.get(ip)
        if pending is None:
            return
        if pending.attempts >= ARP_ATTEMPTS:
            del self._pending_arp[ip]
            self.arp_failures.append((self.sim.now_ms, ip))
            log.warning("%s: ARP for %s timed out, dropping %d frame(s)", self.name, ip, len(pending.frames))
            return
        pending.attempts += 1
        self._send_arp_request(iface, ip)
        pending.timer = self.sim.after(ms(ARP_RETRY_MS), lambda: self._arp_attempt(iface, ip), "arp-retry")

    def handle_arp(self, iface: Interface, frame: Frame) -> None:
        arp = frame.arp
        if arp.op == ARP_REQUEST:
            if arp.target_ip == iface.ip:
                self.learn(arp.sender_ip, arp.sender_mac)
                reply = ArpPacket(ARP_REPLY, iface.mac, iface.ip, arp.sender_mac, arp.sender_ip)
                iface.send(Frame(arp.sender_mac, iface.mac, arp=reply))
        elif arp.op == ARP_REPLY and arp.target_ip == iface.ip:
            # Replies are accepted whether or not we asked: the weakness
            # cache poisoning relies on.
            self.learn(arp.sender_ip, arp.sender_mac)

    # -- IP ------------------------------------------------------------------

    def send_ip(self, packet: IPv4, *, retransmission: bool = False) -> None:
        iface, hop = self.route(packet.dst)
        frame = Frame(ZERO_MAC, iface.mac, ip=packet, retransmission=retransmission)
        self.emit_to(iface, hop, frame)

    def emit_to(self, iface: Interface, hop_ip: str, frame: Frame) -> None:
        mac = self.lookup(hop_ip)
        if mac is None:
            self.resolve_async(iface, hop_ip, frame)
        else:
            iface.send(replace(frame, dst=mac))

    def on_frame(self, iface: Interface, frame: Frame) -> None:
        if frame.arp is not None:
            self.handle_arp(iface, frame)
        elif self.owns_ip(frame.ip.dst):
            self.deliver_local(frame)
        else:
            self.forward(iface, frame)

    def forward(self, iface: Interface, frame: Frame) -> None:
        """Hosts drop transit traffic; routers and the adversary override."""

    def deliver_local(self, frame: Frame) -> None:
        seg = frame.ip.segment
        conn = self.conns.get((seg.dst_port, frame.ip.src, seg.src_port))
        if conn is not None:
            conn.on_segment(seg)

    def connect(self, local_port: int, remote_ip: str, remote_port: int, isn: int = 0, **kwargs) -> "TransportConn":
        conn = TransportConn(self, local_port, remote_ip, remote_port, isn, **kwargs)
        self.conns[(local_port, remote_ip, remote_port)] = conn
        return conn


class Router(Node):
    """Forwards IPv4 between its interfaces using its own ARP table."""

    def forward(self, iface: Interface, frame: Frame) -> None:
        out, hop = self.route(frame.ip.dst)
        self.emit_to(out, hop, Frame(ZERO_MAC, out.mac, ip=frame.ip, retransmission=frame.retransmission))


def arp_poison(attacker: Interface, victim_ip: str, victim_mac: str, impersonated_ip: str) -> Frame:
    """Send an unsolicited ARP reply binding ``impersonated_ip`` to the attacker."""
    frame = Frame(
        victim_mac,
        attacker.mac,
        arp=ArpPacket(ARP_REPLY, attacker.mac, impersonated_ip, victim_mac, victim_ip),
    )
    attacker.send(frame)
    return frame


def arp_restore(attacker: Interface, victim_ip: str, victim_mac: str, owner_ip: str, owner_mac: str) -> Frame:
    """Re-bind ``owner_ip`` to its real MAC in the victim's cache."""
    frame = Frame(victim_mac, owner_mac, arp=ArpPacket(ARP_REPLY, owner_mac, owner_ip, victim_mac, victim_ip))
    attacker.send(frame)
    return frame


def arp_resolve(node: Node, ip: str, *, timeout_ms: float = ARP_RETRY_MS * ARP_ATTEMPTS) -> str:
    """Blocking resolution for use outside event callbacks.

    Runs the simulator forward until the reply is cached or the retry budget
    is spent.
    """
    if (mac := node.lookup(ip)) is not None:
        return mac
    iface, _ = node.route(ip)
    node.resolve_async(iface, ip, None)
    deadline = node.sim.now + ms(timeout_ms)
    step = ms(1)
    while node.sim.now < deadline:
        node.sim.run_until(min(node.sim.now + step, deadline))
        if (mac := node.lookup(ip)) is not None:
            return mac
    node._pending_arp.pop(ip, None)
    raise ArpTimeout(f"{node.name}: no ARP reply for {ip}")


@dataclass
class _Unacked:
    segment: Segment
    sent_ms: float
    retransmissions: int = 0
    timer: object = None


class TransportConn:
    """Reliable byte-stream endpoint with a fixed retransmission timeout.

    Sequence and ack numbers count payload octets. Every emitted segment
    carries the current cumulative ack, so a reply piggybacks the ack of the
    request it answers; data that produces no reply is acknowledged with a
    pure ACK.
    """

    def __init__(
        self,
        node: Node,
        local_port: int,
        remote_ip: str,
        remote_port: int,
        isn: int = 0,
        *,
        rto_ms: float = DEFAULT_RTO_MS,
        max_retransmissions: int = MAX_RETRANSMISSIONS,
    ):
        self.node = node
        self.local_port = local_port
        self.remote_ip = remote_ip
        self.remote_port = remote_port
        self.snd_nxt = isn
        self.snd_una = isn
        self.rcv_nxt: int | None = None
        self.rto = ms(rto_ms)
        self.max_retransmissions = max_retransmissions
        self.unacked: dict[int, _Unacked] = {}
        self.out_of_order: dict[int, Segment] = {}
        self.on_data: Callable[[bytes, Segment], None] | None = None
        self.closed = False
        self.retransmissions = 0
        self.duplicates = 0
        self._ack_owed = False

    def set_peer_isn(self, isn: int) -> None:
        """Stand-in for the handshake: both ends agree on initial numbers."""
        self.rcv_nxt = isn

    @property
    def expected_ack(self) -> int:
        return self.snd_nxt

    def _emit(self, seg: Segment, retransmission: bool = False) -> None:
        self._ack_owed = False
        self.node.send_ip(IPv4(self.node.ip, self.remote_ip, seg), retransmission=retransmission)

    def send_app_data(self, payload: bytes) -> Segment:
        if self.closed:
            raise ConnClosed(f"{self.node.name}:{self.local_port} -> {self.remote_ip}:{self.remote_port}")
        seg = Segment(
            self.local_port,
            self.remote_port,
            self.snd_nxt,
            self.rcv_nxt or 0,
            FLAG_ACK | FLAG_PSH,
            payload,
        ).sealed()
        self.snd_nxt += len(payload)
        entry = _Unacked(seg, self.node.sim.now_ms)
        self.unacked[seg.seq] = entry
        self._arm(entry)
        self._emit(seg)
        return seg

    def _arm(self, entry: _Unacked) -> None:
        entry.timer = self.node.sim.after(self.rto, lambda: self._expire(entry), "rto")

    def _expire(self, entry: _Unacked) -> None:
        if entry.segment.seq not in self.unacked:
            return
        if entry.retransmissions >= self.max_retransmissions:
            log.warning("%s: giving up on seq %d", self.node.name, entry.segment.seq)
            del self.unacked[entry.segment.seq]
            self.closed = True
            return
        entry.retransmissions += 1
        self.retransmissions += 1
        self._arm(entry)
        self._emit(entry.segment, retransmission=True)

    def _on_ack(self, ack: int) -> None:
        for seq in sorted(self.unacked):
            entry = self.unacked[seq]
            end = seq + len(entry.segment.payload)
            if end <= ack:
                entry.timer.cancel()
                del self.unacked[seq]
        self.snd_una = max(self.snd_una, ack)

    def on_segment(self, seg: Segment) -> None:
        if seg.flags & FLAG_ACK:
            self._on_ack(seg.ack)
        if not seg.payload:
            return
        if self.rcv_nxt is None:
            self.rcv_nxt = seg.seq
        if seg.seq < self.rcv_nxt:
            self.duplicates += 1
            self._pure_ack()
            return
        if seg.seq > self.rcv_nxt:
            self.out_of_order.setdefault(seg.seq, seg)
            self._pure_ack()
            return
        ready = [seg]
        self.rcv_nxt += len(seg.payload)
        while self.rcv_nxt in self.out_of_order:
            nxt = self.out_of_order.pop(self.rcv_nxt)
            ready.append(nxt)
            self.rcv_nxt += len(nxt.payload)
        self._ack_owed = True
        for s in ready:
            if self.on_data is not None:
                self.on_data(s.payload, s)
        if self._ack_owed:
            self._pure_ack()

    def _pure_ack(self) -> None:
        self._emit(Segment(self.local_port, self.remote_port, self.snd_nxt, self.rcv_nxt, FLAG_ACK).sealed())


def pair(a: TransportConn, b: TransportConn) -> None:
    a.set_peer_isn(b.snd_nxt)
    b.set_peer_isn(a.snd_nxt)
