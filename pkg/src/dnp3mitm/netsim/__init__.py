"""Deterministic discrete-event model of the substation network."""

from dnp3mitm.netsim.capture import CaptureLog, CaptureRecord, read_capture, summarize_dnp3, write_capture
from dnp3mitm.netsim.network import (
    ArpTimeout,
    ConnClosed,
    Interface,
    Medium,
    Node,
    Router,
    TransportConn,
    arp_poison,
    arp_resolve,
    arp_restore,
    pair,
    tap,
)
from dnp3mitm.netsim.sim import SchedulingInPast, SimEvent, Simulator, ms, seconds, to_ms
from dnp3mitm.netsim.wire import ArpPacket, Frame, IPv4, Segment

__all__ = [
    "ArpPacket",
    "ArpTimeout",
    "CaptureLog",
    "CaptureRecord",
    "ConnClosed",
    "Frame",
    "IPv4",
    "Interface",
    "Medium",
    "Node",
    "Router",
    "SchedulingInPast",
    "Segment",
    "SimEvent",
    "Simulator",
    "TransportConn",
    "arp_poison",
    "arp_resolve",
    "arp_restore",
    "ms",
    "pair",
    "read_capture",
    "seconds",
    "summarize_dnp3",
    "tap",
    "to_ms",
    "write_capture",
]
