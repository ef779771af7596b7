"""DNP3 master and outstation state machines plus the operator script.

The plant model is a point table: breakers are BO/BI pairs and generators
are AO (setpoint) / AI (measured output) pairs. A new setpoint shows up in
the measured value at the next poll.
"""

from __future__ import annotations

import logging
import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable

import yaml

from dnp3mitm import codec
from dnp3mitm.codec import CONTROL_CLOSE, CONTROL_TRIP, STATUS_ERROR, STATUS_OK, Dnp3Packet, Dnp3Point, PointType
from dnp3mitm.netsim.network import Node, TransportConn
from dnp3mitm.netsim.sim import Simulator, seconds

log = logging.getLogger(__name__)

DNP3_PORT = 20000
MASTER_ADDRESS = 1

BI_CLOSED = 0x81
BI_OPEN = 0x01

SCRIPT_SCHEMA = "dnp3mitm-operator/1"


# --------------------------------------------------------------------------
# Outstation
# --------------------------------------------------------------------------


def breaker_status(control: int) -> int:
    """BI mirror of a BO control code."""
    return BI_CLOSED if control == CONTROL_CLOSE else BI_OPEN


@dataclass
class OutstationState:
    outstation_id: int
    bi: list[int]
    bo: list[int]
    ai: list[float]
    ao: list[float]

    @classmethod
    def default(cls, outstation_id: int, rng: random.Random, n_bi=10, n_bo=10, n_ai=5, n_ao=5) -> "OutstationState":
        """Breakers closed; generator setpoints are whole MW so they are exact in float32."""
        ao = [float(rng.randrange(100, 500)) for _ in range(n_ao)]
        ai = [ao[i] if i < n_ao else float(rng.randrange(100, 500)) for i in range(n_ai)]
        return cls(
            outstation_id,
            bi=[BI_CLOSED] * n_bi,
            bo=[CONTROL_CLOSE] * n_bo,
            ai=ai,
            ao=ao,
        )

    def table(self, ptype: PointType) -> list:
        return {PointType.BI: self.bi, PointType.BO: self.bo, PointType.AI: self.ai, PointType.AO: self.ao}[ptype]

    def settle(self) -> None:
        """Generators adopt their setpoints."""
        for i in range(min(len(self.ai), len(self.ao))):
            self.ai[i] = self.ao[i]

    def points(self) -> list[Dnp3Point]:
        out = []
        for ptype in (PointType.BI, PointType.AI, PointType.BO, PointType.AO):
            for i, v in enumerate(self.table(ptype)):
                out.append(Dnp3Point(ptype, i, v))
        return out

    def operate(self, ptype: PointType, index: int, raw: bytes) -> Dnp3Point:
        """Apply one DIRECT OPERATE point and return the echo point."""
        table = self.table(ptype) if ptype in (PointType.BO, PointType.AO) else None
        if table is None or not 0 <= index < len(table):
            if ptype.is_binary:
                return Dnp3Point(ptype, index, STATUS_ERROR)
            value, _ = codec.decode_point(ptype, raw)
            return Dnp3Point(ptype, index, value, STATUS_ERROR)
        value, _ = codec.decode_point(ptype, raw)
        if ptype == PointType.BO:
            if value not in (CONTROL_CLOSE, CONTROL_TRIP):
                return Dnp3Point(ptype, index, STATUS_ERROR)
            table[index] = value
            if index < len(self.bi):
                self.bi[index] = breaker_status(value)
            return Dnp3Point(ptype, index, value)
        table[index] = value
        return Dnp3Point(ptype, index, value, STATUS_OK)


def outstation_handle(state: OutstationState, packet: Dnp3Packet) -> Dnp3Packet | None:
    """Reply to a decoded request addressed to ``state``."""
    if packet.link.destination != state.outstation_id:
        return None
    fn = packet.function
    src, dest = state.outstation_id, packet.link.source
    app_seq = packet.app.app_control & 0x0F
    if fn == codec.FunctionCode.READ:
        state.settle()
        return codec.build_read_response(dest, src, state.points(), app_seq=app_seq)
    if fn == codec.FunctionCode.DIRECT_OPERATE:
        echoes = []
        user = packet.user_data()
        for block, index, offset in codec._walk(packet):
            raw = user[offset : offset + block.point_type.width]
            echoes.append(state.operate(block.point_type, index, raw))
        if not echoes:
            return None
        return codec.build_read_response(dest, src, echoes, app_seq=app_seq)
    return None


class Outstation(Node):
    """Network node wrapping an :class:`OutstationState`."""

    def __init__(self, sim: Simulator, name: str, state: OutstationState):
        super().__init__(sim, name)
        self.state = state
        self.conn: TransportConn | None = None
        self.handled = 0

    def attach_conn(self, conn: TransportConn) -> None:
        self.conn = conn
        conn.on_data = self._on_data

    def _on_data(self, payload: bytes, seg) -> None:
        try:
            request = codec.decode_frame(payload)
        except codec.CodecError as exc:
            log.info("%s: dropping undecodable request: %s", self.name, exc)
            return
        response = outstation_handle(self.state, request)
        self.handled += 1
        if response is not None:
            self.conn.send_app_data(codec.encode_frame(response))


# --------------------------------------------------------------------------
# Operator script
# --------------------------------------------------------------------------


class ScriptError(ValueError):
    pass


@dataclass(frozen=True)
class Trigger:
    at_s: float | None = None
    every_s: float | None = None
    offset_s: float = 0.0
    point: PointType | None = None
    index: int = 0
    below: float | None = None
    above: float | None = None
    # Threshold as a fraction of the nominal value of ``point``/``index``.
    below_fraction: float | None = None

    @property
    def is_time(self) -> bool:
        return self.at_s is not None or self.every_s is not None


@dataclass(frozen=True)
class Action:
    kind: str  # "binary" | "analog"
    index: int
    control: int | None = None
    value: float | str | None = None  # number or "nominal"
    outstations: tuple[int, ...] | str = "all"  # ids, "all" or "matched"
    # Seconds between successive targets; an operator works through them one by one.
    spacing_s: float = 0.0


@dataclass(frozen=True)
class Rule:
    name: str
    trigger: Trigger
    action: Action
    repeat: bool = False


@dataclass(frozen=True)
class OperatorScript:
    rules: tuple[Rule, ...] = ()

    @classmethod
    def from_dict(cls, data: dict) -> "OperatorScript":
        return cls(tuple(_parse_rule(i, r) for i, r in enumerate(data.get("rules", []))))

    @classmethod
    def load(cls, path: str | Path) -> "OperatorScript":
        data = yaml.safe_load(Path(path).read_text()) or {}
        if data.get("schema", SCRIPT_SCHEMA) != SCRIPT_SCHEMA:
            raise ScriptError(f"unsupported operator script schema {data.get('schema')!r}")
        return cls.from_dict(data)


_CONTROL_NAMES = {"close": CONTROL_CLOSE, "trip": CONTROL_TRIP}


def _parse_rule(pos: int, raw: dict) -> Rule:
    where = f"rules[{pos}]"
    try:
        trig = dict(raw["trigger"])
        act = dict(raw["action"])
    except (KeyError, TypeError) as exc:
        raise ScriptError(f"{where}: needs 'trigger' and 'action' mappings") from exc
    if "point" in trig:
        trig["point"] = PointType[str(trig["point"]).upper()]
    try:
        trigger = Trigger(**trig)
    except TypeError as exc:
        raise ScriptError(f"{where}.trigger: {exc}") from exc
    if not trigger.is_time and trigger.point is None:
        raise ScriptError(f"{where}.trigger: needs at_s, every_s or point")
    if trigger.every_s is not None and trigger.every_s <= 0:
        raise ScriptError(f"{where}.trigger.every_s must be positive")

    kind = act.get("type")
    if kind not in ("binary", "analog"):
        raise ScriptError(f"{where}.action.type must be 'binary' or 'analog'")
    targets = act.get("outstations", "all")
    if isinstance(targets, list):
        targets = tuple(int(t) for t in targets)
    elif targets not in ("all", "matched"):
        raise ScriptError(f"{where}.action.outstations must be a list, 'all' or 'matched'")
    if targets == "matched" and trigger.is_time:
        raise ScriptError(f"{where}: 'matched' targets need a point trigger")
    control = value = None
    if kind == "binary":
        c = act.get("control")
        control = _CONTROL_NAMES.get(str(c).lower()) if isinstance(c, str) else c
        if control not in (CONTROL_CLOSE, CONTROL_TRIP):
            raise ScriptError(f"{where}.action.control must be close/trip (0x41/0x81)")
    else:
        value = act.get("value")
        if value != "nominal" and not isinstance(value, (int, float)):
            raise ScriptError(f"{where}.action.value must be a number or 'nominal'")
    spacing = act.get("spacing_s", 0.0)
    if isinstance(spacing, bool) or not isinstance(spacing, (int, float)) or spacing < 0:
        raise ScriptError(f"{where}.action.spacing_s must be a non-negative number")
    action = Action(kind, int(act.get("index", 0)), control, value, targets, float(spacing))
    return Rule(str(raw.get("name", f"rule{pos}")), trigger, action, bool(raw.get("repeat", False)))


def default_script() -> OperatorScript:
    """Breaker 7 CLOSE and a generator setpoint every minute, plus a restore rule."""
    return OperatorScript.from_dict(
        {
            "rules": [
                {
                    "name": "close-breaker-7",
                    "trigger": {"every_s": 60, "offset_s": 20},
                    "action": {"type": "binary", "index": 7, "control": "close", "spacing_s": 1.0},
                },
                {
                    "name": "hold-setpoint",
                    "trigger": {"every_s": 60, "offset_s": 40},
                    "action": {"type": "analog", "index": 0, "value": "nominal", "spacing_s": 1.0},
                },
                {
                    "name": "restore-generator",
                    "trigger": {"point": "AI", "index": 0, "below_fraction": 0.5},
                    "action": {"type": "analog", "index": 0, "value": "nominal", "outstations": "matched"},
                },
            ]
        }
    )


# --------------------------------------------------------------------------
# Master
# --------------------------------------------------------------------------


class MatchVerdict(str, Enum):
    MATCH = "MATCH"
    MISMATCH = "MISMATCH"


class UncorrelatedResponse(LookupError):
    pass


@dataclass
class PendingCommand:
    outstation: int
    rule: str
    point_type: PointType
    index: int
    intent: float | int
    request_ack: int | None = None
    sent_ms: float | None = None


@dataclass
class _Request:
    kind: str  # "poll" | "command"
    packet: Dnp3Packet
    command: PendingCommand | None = None
    ack: int | None = None
    sent_ms: float | None = None
    timer: Any = None


@dataclass
class _Channel:
    outstation: int
    ip: str
    conn: TransportConn
    queue: deque = field(default_factory=deque)
    outstanding: _Request | None = None
    app_seq: int = 0


def master_verify_ack(response: Dnp3Packet, response_seq: int, pending: Iterable[PendingCommand]) -> tuple[PendingCommand, MatchVerdict, Any]:
    """Correlate a response with a pending command and judge the echo.

    The response's transport sequence number must equal the ack number the
    command was sent with. Returns the command, the verdict and the echoed
    value.
    """
    for cmd in pending:
        if cmd.request_ack == response_seq:
            break
    else:
        raise UncorrelatedResponse(f"no pending command sent with ack {response_seq}")
    echoed = None
    try:
        for p in codec.parse_points(response):
            if p.point_type == cmd.point_type and p.point_index == cmd.index:
                echoed = p
    except codec.CodecError:
        pass
    if echoed is None:
        return cmd, MatchVerdict.MISMATCH, None
    if cmd.point_type.is_binary:
        ok = echoed.value == cmd.intent
    else:
        ok = echoed.status == STATUS_OK and echoed.value == codec._f32(float(cmd.intent))
    return cmd, (MatchVerdict.MATCH if ok else MatchVerdict.MISMATCH), echoed.value


@dataclass
class MasterLogEntry:
    ts_ms: float
    event: str
    outstation: int
    detail: dict


class Master(Node):
    """Polls every outstation and runs the operator script.

    Each outstation channel has a FIFO of requests with at most one in
    flight, so a response always answers the request in flight. A poll
    that comes due while the previous one is still queued or in flight is
    skipped and logged as missed.
    """

    def __init__(
        self,
        sim: Simulator,
        name: str = "master",
        *,
        polling_interval_s: float = 60.0,
        script: OperatorScript | None = None,
        address: int = MASTER_ADDRESS,
        response_timeout_s: float = 20.0,
    ):
        super().__init__(sim, name)
        self.address = address
        self.response_timeout_s = response_timeout_s
        self.polling_interval_s = polling_interval_s
        self.script = script if script is not None else OperatorScript()
        self.channels: dict[int, _Channel] = {}
        self.snapshot: dict[int, dict[tuple[PointType, int], float | int]] = {}
        self.nominal: dict[int, dict[int, float]] = {}
        self.pending: list[PendingCommand] = []
        self.log: list[MasterLogEntry] = []
        self._fired_once: set[tuple[str, int]] = set()

    # -- setup ---------------------------------------------------------------

    def add_outstation(self, outstation: int, ip: str, conn: TransportConn) -> None:
        self.channels[outstation] = _Channel(outstation, ip, conn)
        conn.on_data = lambda payload, seg, o=outstation: self._on_data(o, payload, seg)

    def start(self, duration_s: float) -> None:
        """Schedule polls and time-triggered rules for a run of ``duration_s``."""
        k = 0
        while k * self.polling_interval_s < duration_s:
            self.sim.at(seconds(k * self.polling_interval_s), self.master_poll_cycle, "poll")
            k += 1
        for rule in self.script.rules:
            t = rule.trigger
            if t.at_s is not None and t.at_s < duration_s:
                self.sim.at(seconds(t.at_s), lambda r=rule: self._fire_time_rule(r), rule.name)
            if t.every_s is not None:
                k = 0
                while t.offset_s + k * t.every_s < duration_s:
                    self.sim.at(seconds(t.offset_s + k * t.every_s), lambda r=rule: self._fire_time_rule(r), rule.name)
                    k += 1

    def _record(self, event: str, outstation: int, **detail) -> None:
        self.log.append(MasterLogEntry(self.sim.now_ms, event, outstation, detail))

    # -- polling -------------------------------------------------------------

    def master_poll_cycle(self) -> None:
        for oid, ch in self.channels.items():
            busy = (ch.outstanding is not None and ch.outstanding.kind == "poll") or any(
                r.kind == "poll" for r in ch.queue
            )
            if busy:
                self._record("missed_poll", oid)
                continue
            self._enqueue(ch, _Request("poll", codec.build_read_request(oid, self.address)))

    # -- commands ------------------------------------------------------------

    def _fire_time_rule(self, rule: Rule) -> None:
        targets = list(self.channels) if rule.action.outstations == "all" else list(rule.action.outstations)
        targets = [oid for oid in targets if oid in self.channels]
        spacing = rule.action.spacing_s
        for k, oid in enumerate(targets):
            if k == 0 or spacing == 0:
                self.operator_issue_command(rule, oid)
            else:
                self.sim.after(seconds(k * spacing), lambda o=oid: self.operator_issue_command(rule, o), rule.name)

    def _intent(self, rule: Rule, oid: int) -> float | int | None:
        a = rule.action
        if a.kind == "binary":
            return a.control
        if a.value == "nominal":
            return self.nominal.get(oid, {}).get(a.index)
        return float(a.value)

    def operator_issue_command(self, rule: Rule, outstation: int) -> PendingCommand | None:
        intent = self._intent(rule, outstation)
        if intent is None:
            self._record("command_skipped", outstation, rule=rule.name, reason="nominal unknown")
            return None
        ch = self.channels[outstation]
        a = rule.action
        if a.kind == "binary":
            packet = codec.build_direct_operate_binary(outstation, self.address, a.index, intent)
            ptype = PointType.BO
        else:
            packet = codec.build_direct_operate_analog(outstation, self.address, a.index, intent)
            ptype = PointType.AO
        cmd = PendingCommand(outstation, rule.name, ptype, a.index, intent)
        self._enqueue(ch, _Request("command", packet, cmd))
        return cmd

    def _check_predicates(self, oid: int) -> None:
        snap = self.snapshot.get(oid, {})
        for rule in self.script.rules:
            t = rule.trigger
            if t.point is None:
                continue
            value = snap.get((t.point, t.index))
            if value is None:
                continue
            hit = False
            if t.below is not None and value < t.below:
                hit = True
            if t.above is not None and value > t.above:
                hit = True
            if t.below_fraction is not None:
                nominal = self.nominal.get(oid, {}).get(t.index)
                if nominal is not None and value < t.below_fraction * nominal:
                    hit = True
            if not hit:
                continue
            if not rule.repeat and (rule.name, oid) in self._fired_once:
                continue
            self._fired_once.add((rule.name, oid))
            targets = [oid] if rule.action.outstations == "matched" else (
                list(self.channels) if rule.action.outstations == "all" else list(rule.action.outstations)
            )
            for target in targets:
                if target in self.channels:
                    self.operator_issue_command(rule, target)

    # -- channel machinery ---------------------------------------------------

    def _enqueue(self, ch: _Channel, req: _Request) -> None:
        ch.queue.append(req)
        self._pump(ch)

    def _pump(self, ch: _Channel) -> None:
        if ch.outstanding is not None or not ch.queue:
            return
        req = ch.queue.popleft()
        # Stamp the application sequence at send time.
        packet = req.packet
        app = codec.ApplicationFragment(0xC0 | ch.app_seq, packet.app.function, packet.app.objects, packet.app.class_designators)
        req.packet = codec.Dnp3Packet(packet.link, packet.transport, app)
        ch.app_seq = (ch.app_seq + 1) & 0x0F
        seg = ch.conn.send_app_data(codec.encode_frame(req.packet))
        req.ack = seg.ack
        req.sent_ms = self.sim.now_ms
        ch.outstanding = req
        req.timer = self.sim.after(seconds(self.response_timeout_s), lambda: self._timeout(ch, req), "app-timeout")
        if req.command is not None:
            req.command.request_ack = seg.ack
            req.command.sent_ms = req.sent_ms
            self.pending.append(req.command)
            self._record(
                "command_sent",
                ch.outstation,
                rule=req.command.rule,
                point=f"{req.command.point_type.name}[{req.command.index}]",
                intent=req.command.intent,
            )

    def _timeout(self, ch: _Channel, req: _Request) -> None:
        if ch.outstanding is not req:
            return
        self._record("response_timeout", ch.outstation, kind=req.kind)
        ch.outstanding = None
        self._pump(ch)

    @staticmethod
    def _shape_ok(req: _Request, response: Dnp3Packet) -> bool:
        if response.function != codec.FunctionCode.SOLICITED_RESPONSE:
            return False
        types = {b.point_type for b in response.app.objects}
        if req.kind == "poll":
            return PointType.BI in types
        return req.command.point_type in types and len(response.app.objects) == 1

    def _on_data(self, oid: int, payload: bytes, seg) -> None:
        ch = self.channels[oid]
        try:
            response = codec.decode_frame(payload)
        except codec.CodecError as exc:
            self._record("bad_response", oid, error=str(exc))
            return
        req = ch.outstanding
        if req is None or seg.seq != req.ack or not self._shape_ok(req, response):
            self._record("uncorrelated_response", oid, seq=seg.seq)
            return
        req.timer.cancel()
        if req.kind == "poll":
            self._apply_poll(oid, response)
        else:
            try:
                cmd, verdict, echoed = master_verify_ack(response, seg.seq, self.pending)
            except UncorrelatedResponse:
                self._record("uncorrelated_response", oid, seq=seg.seq)
            else:
                self.pending.remove(cmd)
                self._record(
                    "verdict",
                    oid,
                    rule=cmd.rule,
                    point=f"{cmd.point_type.name}[{cmd.index}]",
                    intent=cmd.intent,
                    echoed=echoed,
                    verdict=verdict.value,
                )
        ch.outstanding = None
        self._pump(ch)
        if req.kind == "poll":
            self._check_predicates(oid)

    def _apply_poll(self, oid: int, response: Dnp3Packet) -> None:
        try:
            points = codec.parse_points(response)
        except codec.CodecError as exc:
            self._record("bad_response", oid, error=str(exc))
            return
        snap = self.snapshot.setdefault(oid, {})
        for p in points:
            snap[(p.point_type, p.point_index)] = p.value
        nominal = self.nominal.setdefault(oid, {})
        for p in points:
            if p.point_type == PointType.AO and p.point_index not in nominal:
                nominal[p.point_index] = p.value
        self._record("poll_response", oid, points=len(points))

    # -- queries -------------------------------------------------------------

    def verdicts(self) -> list[MasterLogEntry]:
        return [e for e in self.log if e.event == "verdict"]
