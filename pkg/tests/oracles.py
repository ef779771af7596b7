"""Independent reference implementations used to freeze expected values.

These deliberately avoid the package's own code paths: the CRC runs
MSB-first on bit-reversed octets with the unreflected polynomial, and the
chunk walker recovers data positions by stepping through the wire bytes.
"""

from __future__ import annotations


def _reverse_bits(value: int, width: int) -> int:
    out = 0
    for _ in range(width):
        out = (out << 1) | (value & 1)
        value >>= 1
    return out


def crc16_dnp_bitwise(data: bytes) -> int:
    crc = 0x0000
    for byte in data:
        crc ^= _reverse_bits(byte, 8) << 8
        for _ in range(8):
            if crc & 0x8000:
                crc = ((crc << 1) ^ 0x3D65) & 0xFFFF
            else:
                crc = (crc << 1) & 0xFFFF
    return _reverse_bits(crc, 16) ^ 0xFFFF


def wire_data_positions(frame: bytes) -> list[tuple[int, int]]:
    """For every user-data octet in a link frame: (wire position, chunk ordinal)."""
    user_len = frame[2] - 5
    out = []
    pos = 10
    chunk = 0
    remaining = user_len
    while remaining > 0:
        take = min(16, remaining)
        out.extend((pos + k, chunk) for k in range(take))
        pos += take + 2
        remaining -= take
        chunk += 1
    return out


def find_value_chunks(frame: bytes, value_octets: bytes) -> list[int]:
    """Brute-force: locate ``value_octets`` among the user-data octets and
    return the chunk ordinals they occupy. Asserts the match is unique."""
    positions = wire_data_positions(frame)
    data = bytes(frame[p] for p, _ in positions)
    hits = [i for i in range(len(data)) if data.startswith(value_octets, i)]
    assert len(hits) == 1, f"value octets found {len(hits)} times"
    start = hits[0]
    return sorted({positions[i][1] for i in range(start, start + len(value_octets))})


def crc_positions(frame: bytes, chunk: int) -> list[int]:
    """Wire positions of the two CRC octets that close ``chunk``."""
    last = max(p for p, c in wire_data_positions(frame) if c == chunk)
    return [last + 1, last + 2]


def differing_positions(a: bytes, b: bytes) -> set[int]:
    assert len(a) == len(b)
    return {i for i in range(len(a)) if a[i] != b[i]}


def value_wire_positions(frame: bytes, value_octets: bytes) -> list[int]:
    """Brute-force wire positions of a unique octet string in the user data."""
    positions = wire_data_positions(frame)
    data = bytes(frame[p] for p, _ in positions)
    hits = [i for i in range(len(data)) if data.startswith(value_octets, i)]
    assert len(hits) == 1, f"value octets found {len(hits)} times"
    return [positions[i][0] for i in range(hits[0], hits[0] + len(value_octets))]
