"""
CRC-16/DNP and the 16-octet data-chunk framing used by DNP3 link frames.

Parameters: polynomial 0x3D65 (reflected 0xA6BC), init 0x0000, final XOR
0xFFFF. The CRC is transmitted low octet first.
"""

from __future__ import annotations

from dnp3mitm.errors import CodecError

BLOCK_SIZE = 16
CRC_SIZE = 2
CHUNK_SIZE = BLOCK_SIZE + CRC_SIZE

_REFLECTED_POLY = 0xA6BC


def _build_table() -> tuple[int, ...]:
    table = []
    for i in range(256):
        crc = i
        for _ in range(8):
            crc = (crc >> 1) ^ _REFLECTED_POLY if crc & 1 else crc >> 1
        table.append(crc)
    return tuple(table)


_TABLE = _build_table()


class ChunkError(CodecError):
    """Base class for chunk framing failures."""


class ChunkCrcMismatch(ChunkError):
    def __init__(self, chunk: int, offset: int = 0):
        self.chunk = chunk
        self.offset = offset
        super().__init__(f"CRC MISMATCH at chunk {chunk} (octet offset {offset})")


class TruncatedChunk(ChunkError):
    def __init__(self, offset: int, remaining: int):
        self.offset = offset
        self.remaining = remaining
        super().__init__(
            f"truncated chunk at octet offset {offset}: {remaining} octet(s) cannot hold data + CRC"
        )


def crc16_dnp(data: bytes | bytearray | memoryview) -> int:
    """Return the CRC-16/DNP of ``data``.

    >>> hex(crc16_dnp(b"123456789"))
    '0xea82'
    """
    crc = 0
    for byte in data:
        crc = (crc >> 8) ^ _TABLE[(crc ^ byte) & 0xFF]
    return crc ^ 0xFFFF


def crc_bytes(data: bytes | bytearray | memoryview) -> bytes:
    """CRC of ``data`` in wire order (little-endian)."""
    return crc16_dnp(data).to_bytes(2, "little")


def verify(block: bytes | bytearray, crc_le: bytes | bytearray) -> bool:
    return len(crc_le) == 2 and crc_bytes(block) == bytes(crc_le)


def chunk_payload(payload: bytes) -> bytes:
    """Split ``payload`` into 16-octet blocks, each followed by its CRC."""
    out = bytearray()
    for start in range(0, len(payload), BLOCK_SIZE):
        block = payload[start : start + BLOCK_SIZE]
        out += block
        out += crc_bytes(block)
    return bytes(out)


def unchunk_payload(chunked: bytes, base_offset: int = 0) -> bytes:
    """Strip and verify the per-block CRCs of a chunked payload.

    ``base_offset`` only affects the offsets reported in errors, so callers can
    report positions relative to a whole frame.
    """
    data = bytearray()
    pos = 0
    ordinal = 0
    while pos < len(chunked):
        remaining = len(chunked) - pos
        if remaining < CRC_SIZE + 1:
            raise TruncatedChunk(base_offset + pos, remaining)
        take = min(BLOCK_SIZE, remaining - CRC_SIZE)
        block = chunked[pos : pos + take]
        if not verify(block, chunked[pos + take : pos + take + CRC_SIZE]):
            raise ChunkCrcMismatch(ordinal, base_offset + pos)
        data += block
        pos += take + CRC_SIZE
        ordinal += 1
    if not data:
        raise TruncatedChunk(base_offset, len(chunked))
    return bytes(data)


def chunked_length(data_length: int) -> int:
    """Wire length of ``data_length`` octets once chunked."""
    return data_length + CRC_SIZE * (-(-data_length // BLOCK_SIZE))


def wire_offset(data_offset: int) -> int:
    """Position of data octet ``data_offset`` inside the chunked payload."""
    return (data_offset // BLOCK_SIZE) * CHUNK_SIZE + data_offset % BLOCK_SIZE
