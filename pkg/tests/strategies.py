"""Random valid-packet generators (hypothesis strategies and a seeded corpus)."""

from __future__ import annotations

import random
import struct

from hypothesis import strategies as st

from dnp3mitm.codec import (
    MAX_USER_DATA,
    ApplicationFragment,
    Dnp3Packet,
    FunctionCode,
    LinkHeader,
    ObjectBlock,
    PointType,
    TransportOctet,
    UnknownFunctionCode,
    encode_frame,
)

_KNOWN = [int(f) for f in FunctionCode]
_UNKNOWN = [c for c in range(256) if c not in _KNOWN]


def _fits(packet: Dnp3Packet) -> bool:
    return len(packet.user_data()) <= MAX_USER_DATA


def random_block(rng: random.Random, max_points: int = 12) -> ObjectBlock:
    ptype = rng.choice(list(PointType))
    count = rng.randint(0, max_points)
    start = rng.randint(0, 0xFFFF - max(count - 1, 0))
    if ptype.is_binary:
        payload = bytes(rng.getrandbits(8) for _ in range(count))
    else:
        payload = b""
        for _ in range(count):
            payload += bytes([rng.getrandbits(8)])
            if ptype == PointType.COUNTER:
                payload += rng.getrandbits(32).to_bytes(4, "little")
            else:
                # any finite float32 bit pattern
                payload += struct.pack("<f", struct.unpack("<f", struct.pack("<f", rng.uniform(-1e6, 1e6)))[0])
    return ObjectBlock(ptype, start, count, payload)


def random_packet(rng: random.Random) -> Dnp3Packet:
    while True:
        link = LinkHeader(rng.getrandbits(8), rng.getrandbits(16), rng.getrandbits(16))
        transport = TransportOctet(rng.random() < 0.5, rng.random() < 0.5, rng.randrange(64))
        roll = rng.random()
        if roll < 0.15:
            app = ApplicationFragment(
                rng.getrandbits(8), FunctionCode.READ, class_designators=tuple(rng.randrange(4) for _ in range(rng.randint(0, 4)))
            )
        else:
            if roll < 0.25:
                function = UnknownFunctionCode(rng.choice(_UNKNOWN))
            else:
                function = FunctionCode(rng.choice([c for c in _KNOWN if c != FunctionCode.READ]))
            blocks = tuple(random_block(rng) for _ in range(rng.randint(0, 5)))
            app = ApplicationFragment(rng.getrandbits(8), function, blocks)
        packet = Dnp3Packet(link, transport, app)
        if _fits(packet):
            return packet


def corpus(n: int, seed: int = 1234) -> list[Dnp3Packet]:
    rng = random.Random(seed)
    return [random_packet(rng) for _ in range(n)]


@st.composite
def packets(draw) -> Dnp3Packet:
    seed = draw(st.integers(min_value=0, max_value=2**32 - 1))
    return random_packet(random.Random(seed))


@st.composite
def frames(draw) -> bytes:
    return encode_frame(draw(packets()))
