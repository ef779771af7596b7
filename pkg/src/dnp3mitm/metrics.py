"""Post-run analytics over capture and alert logs."""

from __future__ import annotations

import json
import statistics
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from dnp3mitm.ids import AlertRecord
from dnp3mitm.mitm import PacketClass, ProcessingSample, classify
from dnp3mitm.netsim.capture import CaptureRecord

RTO_MS = 7000.0
WAN_POINT = "router:wan"
MASTER_POINT = "master:eth0"
ADVERSARY_POINT = "adversary:eth0"


def _r(x: float | None, nd: int = 6) -> float | None:
    return None if x is None else round(x, nd)


# --------------------------------------------------------------------------
# Retransmissions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RetransmissionStats:
    n_r: int
    t_r: float
    r_r: float | None
    undefined: bool = False


def retransmission_rate(capture: Iterable[CaptureRecord], point: str | None = WAN_POINT) -> RetransmissionStats:
    """R_R = N_R / T_R over records flagged as retransmissions.

    ``T_R`` is the span in seconds between the first and last
    retransmission. With no retransmissions the rate is 0; with exactly one
    the span is zero and the rate is reported as undefined.
    """
    times = sorted(r.ts_ms for r in capture if r.retransmission and (point is None or r.point == point))
    n = len(times)
    if n == 0:
        return RetransmissionStats(0, 0.0, 0.0)
    span = (times[-1] - times[0]) / 1000.0
    if n == 1 or span == 0:
        return RetransmissionStats(n, span, None, undefined=True)
    return RetransmissionStats(n, span, n / span)


# --------------------------------------------------------------------------
# RTT
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RttSample:
    transaction: int
    peer: str
    request_ms: float
    response_ms: float
    rtt_ms: float
    function: str | None

    @property
    def above_rto(self) -> bool:
        return self.rtt_ms > RTO_MS


@dataclass
class RttReport:
    samples: list[RttSample]
    unmatched: list[CaptureRecord]
    mean_ms: float | None
    max_ms: float | None
    frac_above_rto: float

    def summary(self) -> dict:
        return {
            "count": len(self.samples),
            "unmatched": len(self.unmatched),
            "mean_ms": _r(self.mean_ms),
            "max_ms": _r(self.max_ms),
            "frac_above_rto": _r(self.frac_above_rto),
        }


def _summarize_rtt(samples: list[RttSample], unmatched: list[CaptureRecord]) -> RttReport:
    rtts = [s.rtt_ms for s in samples]
    return RttReport(
        samples,
        unmatched,
        statistics.fmean(rtts) if rtts else None,
        max(rtts) if rtts else None,
        (sum(1 for s in samples if s.above_rto) / len(samples)) if samples else 0.0,
    )


def rtt_report(capture: Iterable[CaptureRecord], point: str = MASTER_POINT) -> RttReport:
    """Pair each request with the first response whose sequence number is
    the request's ack number, timed from the request's first transmission."""
    records = [r for r in capture if r.point == point and r.kind == "TRANSPORT" and r.dnp3]
    first_tx: dict[tuple[str, int], CaptureRecord] = {}
    for r in records:
        if r.direction == "out":
            key = (r.dst_ip, r.seq)
            if key not in first_tx:
                first_tx[key] = r
    responses: dict[tuple[str, int], list[CaptureRecord]] = {}
    for r in records:
        if r.direction == "in":
            responses.setdefault((r.src_ip, r.seq), []).append(r)
    samples, unmatched = [], []
    for (peer, _), req in sorted(first_tx.items(), key=lambda kv: kv[1].id):
        match = next((x for x in responses.get((peer, req.ack), []) if x.ts_ms > req.ts_ms), None)
        if match is None:
            unmatched.append(req)
            continue
        samples.append(RttSample(req.seq, peer, req.ts_ms, match.ts_ms, match.ts_ms - req.ts_ms, req.function))
    return _summarize_rtt(samples, unmatched)


def rtt_by_phase(report: RttReport, phases: dict[str, tuple[float, float]]) -> dict[str, dict]:
    """RTT summaries restricted to requests issued inside each ``[start, stop)`` ms window."""
    out = {}
    for name, (start, stop) in phases.items():
        chosen = [s for s in report.samples if start <= s.request_ms < stop]
        lost = [u for u in report.unmatched if start <= u.ts_ms < stop]
        out[name] = _summarize_rtt(chosen, lost).summary()
    return out


# --------------------------------------------------------------------------
# Processing time at the adversary
# --------------------------------------------------------------------------


def processing_samples(capture: Iterable[CaptureRecord], point: str = ADVERSARY_POINT) -> list[ProcessingSample]:
    """Service times from the adversary's ingress/egress records.

    Records are paired FIFO. The node serves one frame at a time, so service
    of a frame starts at its arrival or at the previous departure, whichever
    is later; queueing delay is excluded.
    """
    ins: list[CaptureRecord] = []
    outs: list[CaptureRecord] = []
    for r in capture:
        if r.point != point or r.kind != "TRANSPORT":
            continue
        (ins if r.direction == "in" else outs).append(r)
    samples = []
    prev_out = float("-inf")
    for a, b in zip(ins, outs):
        start = max(a.ts_ms, prev_out)
        samples.append(ProcessingSample(classify(bytes.fromhex(a.raw)), b.ts_ms - start))
        prev_out = b.ts_ms
    return samples


def processing_report(capture: Iterable[CaptureRecord], point: str = ADVERSARY_POINT) -> dict[str, dict]:
    by_class: dict[PacketClass, list[float]] = {}
    for s in processing_samples(capture, point):
        by_class.setdefault(s.packet_class, []).append(s.delay_ms)
    report = {}
    for cls in PacketClass:
        xs = by_class.get(cls)
        if not xs:
            continue
        report[cls.value] = {
            "count": len(xs),
            "mean_ms": _r(statistics.fmean(xs)),
            "stddev_ms": _r(statistics.stdev(xs) if len(xs) > 1 else 0.0),
        }
    return report


# --------------------------------------------------------------------------
# Alert / traffic correlation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CorrelationBucket:
    minute: int
    arp_alerts: int
    direct_operates: int

    @property
    def compromised(self) -> bool:
        return self.arp_alerts > 0 and self.direct_operates > 0


def correlation_report(
    capture: Iterable[CaptureRecord],
    alerts: Iterable[AlertRecord],
    *,
    point: str = WAN_POINT,
    bucket_ms: float = 60_000.0,
) -> list[CorrelationBucket]:
    """One bucket per minute: ARP alerts and DIRECT OPERATE packets seen at ``point``."""
    arp: dict[int, int] = {}
    ops: dict[int, int] = {}
    last = 0
    for a in alerts:
        if a.rule.is_arp:
            m = int(a.ts_ms // bucket_ms)
            arp[m] = arp.get(m, 0) + 1
            last = max(last, m)
    for r in capture:
        if r.point == point and r.function == "0x05":
            m = int(r.ts_ms // bucket_ms)
            ops[m] = ops.get(m, 0) + 1
        last = max(last, int(r.ts_ms // bucket_ms))
    return [CorrelationBucket(m, arp.get(m, 0), ops.get(m, 0)) for m in range(last + 1)]


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------


@dataclass
class MetricsReport:
    retransmission: RetransmissionStats
    rtt: dict
    rtt_phases: dict
    processing: dict
    correlation: list[CorrelationBucket]
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        rt = asdict(self.retransmission)
        rt["t_r"] = _r(rt["t_r"])
        rt["r_r"] = _r(rt["r_r"])
        return {
            "retransmission": rt,
            "rtt": self.rtt,
            "rtt_phases": self.rtt_phases,
            "processing": self.processing,
            "correlation": [
                {**asdict(b), "compromised": b.compromised} for b in self.correlation
            ],
            **({"extra": self.extra} if self.extra else {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def to_text(self) -> str:
        d = self.to_dict()
        rt = d["retransmission"]
        lines = ["== retransmission =="]
        rate = "undefined" if rt["undefined"] else f"{rt['r_r']:.6f}/s"
        lines.append(f"N_R={rt['n_r']}  T_R={rt['t_r']:.3f}s  R_R={rate}")
        lines.append("")
        lines.append("== rtt ==")
        lines.append(_fmt_rtt("all", d["rtt"]))
        for name, s in d["rtt_phases"].items():
            lines.append(_fmt_rtt(name, s))
        lines.append("")
        lines.append("== processing ==")
        if not d["processing"]:
            lines.append("(no adversary traffic)")
        for cls, s in d["processing"].items():
            lines.append(f"{cls:<14} n={s['count']:<6} mean={s['mean_ms']:.3f}ms  sd={s['stddev_ms']:.3f}ms")
        lines.append("")
        lines.append("== correlation ==")
        lines.append("minute  arp_alerts  direct_operates  compromised")
        for b in d["correlation"]:
            lines.append(f"{b['minute']:>6}  {b['arp_alerts']:>10}  {b['direct_operates']:>15}  {'yes' if b['compromised'] else 'no'}")
        return "\n".join(lines) + "\n"


def _fmt_rtt(name: str, s: dict) -> str:
    mean = "-" if s["mean_ms"] is None else f"{s['mean_ms']:.3f}ms"
    mx = "-" if s["max_ms"] is None else f"{s['max_ms']:.3f}ms"
    return f"{name:<8} n={s['count']:<6} unmatched={s['unmatched']:<4} mean={mean}  max={mx}  >RTO={s['frac_above_rto']:.4f}"


def build_report(
    capture: Sequence[CaptureRecord],
    alerts: Sequence[AlertRecord],
    phases: dict[str, tuple[float, float]] | None = None,
) -> MetricsReport:
    rtt = rtt_report(capture)
    return MetricsReport(
        retransmission_rate(capture),
        rtt.summary(),
        rtt_by_phase(rtt, phases or {}),
        processing_report(capture),
        correlation_report(capture, alerts),
    )


def compare(baseline: dict, attack: dict) -> dict:
    """Deltas (attack minus baseline) between two metrics dictionaries."""

    def delta(a, b):
        if a is None or b is None:
            return None
        return _r(b - a)

    out = {
        "retransmission": {
            k: delta(baseline["retransmission"][k], attack["retransmission"][k]) for k in ("n_r", "t_r", "r_r")
        },
        "rtt": {k: delta(baseline["rtt"][k], attack["rtt"][k]) for k in ("count", "mean_ms", "max_ms", "frac_above_rto")},
        "processing": {},
        "compromised_minutes": delta(
            sum(b["compromised"] for b in baseline["correlation"]),
            sum(b["compromised"] for b in attack["correlation"]),
        ),
    }
    for cls in sorted(set(baseline["processing"]) | set(attack["processing"])):
        a = baseline["processing"].get(cls, {}).get("mean_ms")
        b = attack["processing"].get(cls, {}).get("mean_ms")
        out["processing"][cls] = delta(a if a is not None else 0.0, b if b is not None else 0.0)
    return out
