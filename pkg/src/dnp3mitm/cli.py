"""Command line: run scenarios, sweep matrices, inspect frames and captures.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from dnp3mitm import __version__, codec
from dnp3mitm.crc import BLOCK_SIZE, CHUNK_SIZE, CRC_SIZE, crc_bytes
from dnp3mitm.netsim.capture import CAPTURE_SCHEMA, CaptureRecord, read_capture
from dnp3mitm.netsim.wire import Frame, WireError
from dnp3mitm.scenario import (
    ConfigInvalid,
    load_scenario,
    load_sweep,
    run_scenario,
    run_sweep,
    sweep_table,
    write_artifacts,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


# --------------------------------------------------------------------------
# Inspection
# --------------------------------------------------------------------------


def _chunk_lines(frame: bytes) -> tuple[list[str], bool]:
    """Per-chunk CRC verdicts, tolerant of damaged frames."""
    lines = []
    ok = True
    pos = codec.DNP_HDR_SIZE
    user_len = max(frame[2] - 5, 0) if len(frame) > 2 else 0
    remaining = user_len
    chunk = 0
    while remaining > 0:
        take = min(BLOCK_SIZE, remaining)
        block = frame[pos : pos + take]
        crc = frame[pos + take : pos + take + CRC_SIZE]
        if len(block) < take or len(crc) < CRC_SIZE:
            lines.append(f"  chunk {chunk}: TRUNCATED at octet offset {pos}")
            ok = False
            break
        want = crc_bytes(block)
        if want == crc:
            lines.append(f"  chunk {chunk}: octets {pos}-{pos + take + CRC_SIZE - 1} crc {crc.hex(' ')} OK")
        else:
            lines.append(
                f"  chunk {chunk}: CRC MISMATCH at chunk {chunk} (octet offset {pos}) "
                f"crc {crc.hex(' ')} expected {want.hex(' ')}"
            )
            ok = False
        pos += take + CRC_SIZE
        remaining -= take
        chunk += 1
    return lines, ok


def _user_data_unchecked(frame: bytes) -> bytes:
    user_len = frame[2] - 5
    out = bytearray()
    pos = codec.DNP_HDR_SIZE
    while user_len > 0 and pos < len(frame):
        take = min(BLOCK_SIZE, user_len)
        out += frame[pos : pos + take]
        pos += CHUNK_SIZE
        user_len -= take
    return bytes(out)


def describe_dnp3(frame: bytes) -> list[str]:
    """Layered decode of one DNP3 link frame."""
    lines = ["DNP3 link frame (%d octets)" % len(frame)]
    if frame[:2] != codec.SYNC:
        lines.append(f"  error at octet offset 0: expected sync 05 64, got {frame[:2].hex(' ')}")
        return lines
    if len(frame) < codec.DNP_HDR_SIZE:
        lines.append(f"  error at octet offset {len(frame)}: frame shorter than the 10-octet header")
        return lines
    header_ok = codec.is_valid_header_crc(frame)
    lines.append(
        f"link: len={frame[2]} ctrl=0x{frame[3]:02x} dst={int.from_bytes(frame[4:6], 'little')} "
        f"src={int.from_bytes(frame[6:8], 'little')} header crc {frame[8:10].hex(' ')} "
        + ("OK" if header_ok else f"MISMATCH (octet offset 8, expected {crc_bytes(frame[:8]).hex(' ')})")
    )
    lines.append("chunks:")
    chunk_lines, chunks_ok = _chunk_lines(frame)
    lines.extend(chunk_lines)
    user = _user_data_unchecked(frame)
    if not user:
        return lines
    t = codec.TransportOctet.from_octet(user[0])
    lines.append(f"transport: 0x{user[0]:02x} fir={int(t.fir)} fin={int(t.fin)} seq={t.sequence}")
    try:
        app = codec.decode_application(user[1:])
    except codec.CodecError as exc:
        lines.append(f"application: error: {exc}")
        return lines
    lines.append(f"application: ctrl=0x{app.app_control:02x} fc=0x{int(app.function):02x} {getattr(app.function, 'name', 'UNKNOWN')}")
    packet = codec.Dnp3Packet(codec.LinkHeader(frame[3], 0, 0), t, app)
    for block, offset in _blocks(packet):
        lines.append(f"  object {block.point_type.name} start={block.start_index} count={block.count} (first value at offset {offset})")
    try:
        points = _points(packet)
    except codec.CodecError as exc:
        lines.append(f"  points: error: {exc}")
        points = []
    for p in points:
        value = f"0x{p.value:02x}" if p.point_type.is_binary else f"{p.value:g}"
        chunks = ",".join(str(c) for c in p.chunk_index)
        lines.append(f"    {p.point_type.name}[{p.point_index}] = {value} status=0x{p.status:02x} (offset {p.offset}, chunk {chunks})")
    if not (header_ok and chunks_ok):
        lines.append("verdict: INVALID (CRC)")
    else:
        lines.append("verdict: OK")
    return lines


def _points(packet: codec.Dnp3Packet) -> list[codec.Dnp3Point]:
    # Requests carry point values too (DIRECT OPERATE), so decode every block.
    user = packet.user_data()
    points = []
    for block, index, offset in codec._walk(packet):
        width = block.point_type.width
        value, status = codec.decode_point(block.point_type, user[offset : offset + width])
        chunks = tuple(sorted({o // codec.BLOCK_SIZE for o in range(offset, offset + width)}))
        points.append(codec.Dnp3Point(block.point_type, index, value, status, chunk_index=chunks, offset=offset))
    return points


def _blocks(packet: codec.Dnp3Packet):
    seen = set()
    for block, _, offset in codec._walk(packet):
        if id(block) not in seen:
            seen.add(id(block))
            yield block, offset


def describe_bytes(data: bytes) -> list[str]:
    """Decode raw octets: a DNP3 frame, or an Ethernet frame carrying one."""
    if data[:2] == codec.SYNC:
        return describe_dnp3(data)
    try:
        frame = Frame.from_bytes(data)
    except (WireError, codec.CodecError, ValueError, IndexError) as exc:
        return [f"not a DNP3 or Ethernet frame: {exc}"]
    lines = [f"ethernet: {frame.src} -> {frame.dst} {frame.kind}"]
    if frame.arp is not None:
        a = frame.arp
        op = {1: "request", 2: "reply"}.get(a.op, str(a.op))
        lines.append(f"arp {op}: {a.sender_ip} is-at {a.sender_mac}; target {a.target_ip} {a.target_mac}")
        return lines
    seg = frame.segment
    lines.append(f"ipv4: {frame.ip.src} -> {frame.ip.dst} ttl={frame.ip.ttl}")
    lines.append(
        f"segment: {seg.src_port} -> {seg.dst_port} seq={seg.seq} ack={seg.ack} flags=0x{seg.flags:02x} "
        f"len={len(seg.payload)} checksum {'OK' if seg.checksum_valid else 'BAD'}"
    )
    if seg.payload:
        lines.extend(describe_dnp3(seg.payload))
    return lines


def record_line(r: CaptureRecord) -> str:
    """One-line summary of a capture record."""
    head = f"#{r.id:<6} {r.ts_ms:12.3f} {r.point:<16} {r.direction:<4} {r.kind:<9}"
    if r.kind == "ARP":
        frame = r.frame()
        op = "reply" if frame.arp.op == 2 else "request"
        return f"{head} {op} {frame.arp.sender_ip} is-at {frame.arp.sender_mac} -> {frame.arp.target_ip}"
    text = f"{head} {r.src_ip} -> {r.dst_ip} seq={r.seq} ack={r.ack}"
    if r.retransmission:
        text += " RETRANSMISSION"
    if r.dnp3:
        text += f" fc={r.dnp3['function']}"
        if r.dnp3.get("points"):
            shown = r.dnp3["points"][:4]
            more = len(r.dnp3["points"]) - len(shown)
            text += " " + " ".join(shown) + (f" (+{more})" if more > 0 else "")
        if not r.dnp3["crc_valid"]:
            text += " CRC-INVALID"
    return text


def inspect_target(target: str) -> list[str]:
    """Inspect a hex string, a hex-dump file or a capture file."""
    path = Path(target)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
        first = text.lstrip().split("\n", 1)[0]
        if first.startswith("{") and CAPTURE_SCHEMA in first:
            return [record_line(r) for r in read_capture(path)]
        data = codec.parse_hexdump(text)
    else:
        data = codec.parse_hexdump(target)
    if not data:
        raise ValueError("no octets to inspect")
    return describe_bytes(data)


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dnp3mitm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--out-dir", default=".", help="directory for artifacts (default: current)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE", help="set a config field; dotted keys reach nested blocks")

    p_run = sub.add_parser("run", help="run one scenario file")
    p_run.add_argument("file")
    common(p_run)

    p_sweep = sub.add_parser("sweep", help="run a matrix of scenarios")
    p_sweep.add_argument("file")
    common(p_sweep)
    p_sweep.add_argument("--jobs", type=int, default=1, help="cells to run in parallel")
    p_sweep.add_argument("--no-artifacts", action="store_true", help="only write the comparison table")

    p_inspect = sub.add_parser("inspect", help="decode a frame (hex) or summarize a capture file")
    p_inspect.add_argument("target", nargs="+", help="hex octets, a hex-dump file, or a capture file")
    return parser


def _cmd_run(args) -> int:
    cfg, raw = load_scenario(args.file, args.override, args.seed)
    result = run_scenario(cfg)
    arts = write_artifacts(result, args.out_dir, config_bytes=raw, config_file=str(args.file), overrides=args.override)
    print(result.report.to_text(), end="")
    for key, path in vars(arts).items():
        print(f"{key}: {path}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    base, cells, _ = load_sweep(args.file, args.override, args.seed)
    start = time.perf_counter()
    out_dir = None if args.no_artifacts else args.out_dir
    rows = run_sweep(base, cells, out_dir, jobs=args.jobs)
    table = sweep_table(rows)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.file).name.split(".")[0]
    (out / f"{stem}.sweep.txt").write_text(table, encoding="utf-8")
    (out / f"{stem}.sweep.json").write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    print(table, end="")
    print(f"{len(rows)} cells in {time.perf_counter() - start:.1f}s")
    return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_RUNTIME


def _cmd_inspect(args) -> int:
    target = " ".join(args.target)
    try:
        lines = inspect_target(target)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print("\n".join(lines))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "sweep": _cmd_sweep, "inspect": _cmd_inspect}
    try:
        return handlers[args.command](args)
    except ConfigInvalid as exc:
        print("configuration error:", file=sys.stderr)
        for err in exc.errors:
            print(f"  {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
