import math
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnp3mitm import codec as c
from dnp3mitm.crc import (
    ChunkCrcMismatch,
    TruncatedChunk,
    chunk_payload,
    crc16_dnp,
    crc_bytes,
    unchunk_payload,
    verify,
)
from oracles import crc16_dnp_bitwise, find_value_chunks
from strategies import frames, packets


# -- CRC ---------------------------------------------------------------------


def test_crc_empty_is_final_xor():
    assert crc16_dnp(b"") == 0xFFFF


def test_crc_check_value_matches_bitwise_oracle():
    assert crc16_dnp_bitwise(b"123456789") == 0xEA82
    assert crc16_dnp(b"123456789") == 0xEA82


@given(st.binary(max_size=64))
def test_crc_table_agrees_with_bitwise(data):
    assert crc16_dnp(data) == crc16_dnp_bitwise(data)


@given(st.binary(min_size=8, max_size=8))
def test_header_crc_self_consistent(header):
    value = crc16_dnp_bitwise(header)
    assert verify(header, value.to_bytes(2, "little"))


# -- chunking ----------------------------------------------------------------


def test_full_block_gets_one_crc():
    block = bytes(range(16))
    out = chunk_payload(block)
    assert len(out) == 18
    assert out[16:] == crc_bytes(block)


def test_seventeen_octets_make_two_chunks():
    out = chunk_payload(bytes(17))
    assert len(out) == 18 + 3


def test_partial_chunk_length():
    assert len(chunk_payload(b"abcde")) == 7


@given(st.binary(min_size=1, max_size=300))
def test_chunk_round_trip(payload):
    assert unchunk_payload(chunk_payload(payload)) == payload


@given(st.binary(min_size=1, max_size=80), st.data())
def test_any_flipped_data_octet_fails_its_chunk(payload, data):
    chunked = bytearray(chunk_payload(payload))
    pos = data.draw(st.integers(0, len(chunked) - 1))
    bit = data.draw(st.integers(0, 7))
    chunked[pos] ^= 1 << bit
    with pytest.raises(ChunkCrcMismatch) as info:
        unchunk_payload(bytes(chunked))
    assert info.value.chunk == pos // 18


def test_two_octets_is_truncated():
    with pytest.raises(TruncatedChunk):
        unchunk_payload(b"\x00\x01")


# -- frames ------------------------------------------------------------------


def test_direct_operate_close_breaker_seven():
    pkt = c.build_direct_operate_binary(4, 1, 7, c.CONTROL_CLOSE)
    user = pkt.user_data()
    assert user[2] == 0x05
    assert user.find(b"\x07\x00") < user.find(b"\x41")
    assert bytes([0x05]) in user and b"\x07\x00" in user and user[-1] == 0x41


def test_trip_differs_only_in_control_octet():
    close = c.encode_frame(c.build_direct_operate_binary(4, 1, 7, c.CONTROL_CLOSE))
    trip = c.encode_frame(c.build_direct_operate_binary(4, 1, 7, c.CONTROL_TRIP))
    (offsets, chunks) = c.locate_point(c.decode_frame(close), c.PointType.BO, 7)
    diff = [i for i in range(len(close)) if close[i] != trip[i]]
    wire = 10 + offsets[0]
    # control octet plus its chunk CRC
    assert wire in diff
    assert set(diff) - {wire} <= {len(close) - 2, len(close) - 1}


def test_invalid_control_code():
    with pytest.raises(c.InvalidControlCode):
        c.build_direct_operate_binary(4, 1, 7, 0x42)


def test_analog_operate_encodes_float():
    pkt = c.build_direct_operate_analog(4, 1, 2, 20.0)
    block = pkt.app.objects[0]
    assert block.point_type == c.PointType.AO
    assert block.payload == b"\x00" + struct.pack("<f", 20.0)


def test_analog_zero_is_all_zero_octets():
    block = c.build_direct_operate_analog(4, 1, 0, 0.0).app.objects[0]
    assert block.payload[1:] == b"\x00\x00\x00\x00"


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_analog_non_finite(bad):
    with pytest.raises(c.NonFiniteValue):
        c.build_direct_operate_analog(4, 1, 0, bad)


def test_encode_is_deterministic():
    pkt = c.build_direct_operate_binary(4, 1, 7, c.CONTROL_CLOSE)
    assert c.encode_frame(pkt) == c.encode_frame(pkt)


@settings(max_examples=300)
@given(packets())
def test_round_trip(pkt):
    frame = c.encode_frame(pkt)
    assert c.decode_frame(frame) == pkt
    assert c.encode_frame(c.decode_frame(frame)) == frame


@settings(max_examples=300)
@given(packets())
def test_chunk_arithmetic(pkt):
    L = len(pkt.user_data())
    assert len(c.encode_frame(pkt)) == 10 + -(-L // 16) * 2 + L


def test_bad_sync():
    frame = bytearray(c.encode_frame(c.build_read_request(4, 1)))
    frame[0] = 0x06
    with pytest.raises(c.BadSync):
        c.decode_frame(bytes(frame))


@pytest.mark.parametrize("octet", range(2, 8))
def test_header_mutation_detected(octet):
    frame = bytearray(c.encode_frame(c.build_direct_operate_binary(4, 1, 7, c.CONTROL_CLOSE)))
    for bit in range(8):
        mutated = bytearray(frame)
        mutated[octet] ^= 1 << bit
        with pytest.raises(c.HeaderCrcMismatch):
            c.decode_frame(bytes(mutated))


def test_truncated_and_trailing():
    frame = c.encode_frame(c.build_read_request(4, 1))
    with pytest.raises(c.TruncatedFrame):
        c.decode_frame(frame[:-1])
    with pytest.raises(c.TruncatedFrame):
        c.decode_frame(frame[:6])
    with pytest.raises(c.TrailingOctets):
        c.decode_frame(frame + b"\x00")


def test_unknown_object_tag():
    head = b"\xc0\xc0\x05"  # transport, app control, function
    body = b"\x09\x00\x00\x01\x00\x41"
    pkt_bytes = c.SYNC + bytes([5 + len(head + body), 0xC4, 4, 0, 1, 0])
    frame = pkt_bytes + crc_bytes(pkt_bytes) + chunk_payload(head + body)
    with pytest.raises(c.UnknownObjectLayout):
        c.decode_frame(frame)


def test_unknown_function_kept_verbatim():
    pkt = c.Dnp3Packet(
        c.LinkHeader(0xC4, 4, 1), c.TransportOctet(), c.ApplicationFragment(0xC0, c.UnknownFunctionCode(0x42))
    )
    back = c.decode_frame(c.encode_frame(pkt))
    assert back.function == c.UnknownFunctionCode(0x42)


def test_payload_too_large():
    block = c.ObjectBlock(c.PointType.BI, 0, 250, bytes(250))
    pkt = c.Dnp3Packet(
        c.LinkHeader(0x44, 1, 4), c.TransportOctet(), c.ApplicationFragment(0xC0, c.FunctionCode.SOLICITED_RESPONSE, (block,))
    )
    with pytest.raises(c.PayloadTooLarge):
        c.encode_frame(pkt)


# -- read request / response -------------------------------------------------


def test_read_codes():
    req = c.build_read_request(4, 1)
    assert int(req.function) == 0x01
    assert req.app.class_designators == (0,)
    resp = c.build_read_response(1, 4, [c.Dnp3Point(c.PointType.BI, 0, 0x81)])
    assert int(resp.function) == 0x81


def test_two_point_response():
    pts = [c.Dnp3Point(c.PointType.BI, 0, 0x81), c.Dnp3Point(c.PointType.AI, 0, 100.0)]
    pkt = c.build_read_response(1, 4, pts)
    assert len(pkt.app.objects) == 2
    assert c.parse_points(c.decode_frame(c.encode_frame(pkt))) == pts


def test_empty_response_rejected():
    with pytest.raises(c.EmptyPointSet):
        c.build_read_response(1, 4, [])


def test_single_bi_in_first_chunk():
    pkt = c.build_read_response(1, 4, [c.Dnp3Point(c.PointType.BI, 0, 0x81)])
    (pt,) = c.parse_points(pkt)
    assert pt.chunk_index == (0,)


def forty_point_response():
    pts = []
    for i in range(10):
        pts.append(c.Dnp3Point(c.PointType.BI, i, 0x81))
        pts.append(c.Dnp3Point(c.PointType.BO, i, 0x41))
        pts.append(c.Dnp3Point(c.PointType.AI, i, 100.0 + 7.25 * i))
        pts.append(c.Dnp3Point(c.PointType.AO, i, 1000.0 + 3.5 * i))
    return c.build_read_response(1, 4, pts)


def test_forty_points_straddles_match_brute_force():
    pkt = forty_point_response()
    frame = c.encode_frame(pkt)
    L = len(pkt.user_data())
    assert -(-L // 16) >= 3
    straddlers = 0
    for pt in c.parse_points(pkt):
        if pt.point_type.is_binary:
            continue
        # arithmetic from layout: status + 4 value octets at pt.offset
        expected = sorted({o // 16 for o in range(pt.offset, pt.offset + 5)})
        assert list(pt.chunk_index) == expected
        # the 4 value octets found by scanning the wire bytes
        value_chunks = find_value_chunks(frame, struct.pack("<f", pt.value))
        assert set(value_chunks) <= set(pt.chunk_index)
        if len(pt.chunk_index) == 2:
            straddlers += 1
    assert straddlers > 0


def test_crafted_ai3_straddles_chunks_one_and_two():
    # BI block: 5 + n octets; AI block header 5 octets; AI[k] at 3 + 5 + n + 5 + 5k.
    # Choose n so that AI[3]'s five octets cover offsets 30..34 (chunk 1 ends at 31).
    # 3 + 5 + n + 5 + 15 = 30  ->  n = 2
    pts = [c.Dnp3Point(c.PointType.BI, i, 0x01) for i in range(2)]
    pts += [c.Dnp3Point(c.PointType.AI, i, 11.0 * (i + 1)) for i in range(4)]
    pkt = c.build_read_response(1, 4, pts)
    ai3 = [p for p in c.parse_points(pkt) if p.point_type == c.PointType.AI and p.point_index == 3][0]
    assert ai3.offset == 30
    assert ai3.chunk_index == (1, 2)
    assert find_value_chunks(c.encode_frame(pkt), struct.pack("<f", 44.0)) == [1, 2]


@given(
    st.lists(st.integers(0, 40), unique=True, max_size=10),
    st.lists(st.integers(0, 40), unique=True, max_size=6),
    st.lists(st.integers(0, 40), unique=True, max_size=10),
    st.lists(st.integers(0, 40), unique=True, max_size=6),
)
def test_parse_inverts_build(bi, ai, bo, ao):
    pts = (
        [c.Dnp3Point(c.PointType.BI, i, 0x81) for i in bi]
        + [c.Dnp3Point(c.PointType.AI, i, float(i) * 1.5) for i in ai]
        + [c.Dnp3Point(c.PointType.BO, i, 0x41) for i in bo]
        + [c.Dnp3Point(c.PointType.AO, i, float(i) - 0.25) for i in ao]
    )
    if not pts:
        return
    pkt = c.build_read_response(1, 4, pts)
    order = {t: n for n, t in enumerate(c.CANONICAL_ORDER)}
    assert c.parse_points(pkt) == sorted(pts, key=lambda p: (order[p.point_type], p.point_index))


# -- locate_point --------------------------------------------------------------


def test_locate_binary_control_octet():
    pkt = c.build_direct_operate_binary(4, 1, 7, c.CONTROL_CLOSE)
    offsets, chunks = c.locate_point(pkt, c.PointType.BO, 7)
    assert pkt.user_data()[offsets[0]] == 0x41
    assert chunks == (0,)


def test_locate_analog_value_span():
    pkt = c.build_direct_operate_analog(4, 1, 3, 480.0)
    offsets, _ = c.locate_point(pkt, c.PointType.AO, 3)
    user = pkt.user_data()
    status_at = offsets[0] - 1
    assert user[status_at] == c.STATUS_OK
    assert user[offsets[0] : offsets[-1] + 1] == struct.pack("<f", 480.0)


def test_locate_absent():
    with pytest.raises(c.PointNotFound):
        c.locate_point(c.build_direct_operate_binary(4, 1, 7, c.CONTROL_CLOSE), c.PointType.BO, 8)


@settings(max_examples=200)
@given(st.data())
def test_patch_at_located_chunks_keeps_frame_valid(data):
    pkt = forty_point_response()
    frame = c.encode_frame(pkt)
    ptype = data.draw(st.sampled_from([c.PointType.BI, c.PointType.BO, c.PointType.AI, c.PointType.AO]))
    index = data.draw(st.integers(0, 9))
    offsets, chunks = c.locate_point(pkt, ptype, index)
    new = bytes(data.draw(st.integers(0, 255)) for _ in offsets)
    patched, touched = c.patch_user_data(frame, offsets[0], new)
    assert touched == chunks
    decoded = c.decode_frame(patched)
    assert decoded.user_data()[offsets[0] : offsets[-1] + 1] == new
    before, after = c.chunk_crcs(frame), c.chunk_crcs(patched)
    for k in range(len(before)):
        if k not in chunks:
            assert before[k] == after[k]


# -- hexdump -----------------------------------------------------------------


def test_hexdump_layout():
    frame = c.encode_frame(c.build_direct_operate_binary(4, 1, 7, c.CONTROL_CLOSE))
    text = c.hexdump(frame)
    lines = text.splitlines()
    assert all(len(line.split(" ")) == 16 for line in lines[:-1])
    assert text == text.lower()
    assert c.parse_hexdump(text) == frame


GOLDEN_CLOSE_7 = "05 64 0e c4 04 00 01 00 88 c8 c0 c0 05 02 07 00\n01 00 41 95 15"


def test_golden_close_breaker_seven():
    frame = c.encode_frame(c.build_direct_operate_binary(4, 1, 7, c.CONTROL_CLOSE))
    assert c.hexdump(frame) == GOLDEN_CLOSE_7
    # the golden header CRC agrees with the independent oracle
    assert crc16_dnp_bitwise(frame[:8]).to_bytes(2, "little") == frame[8:10]
    assert crc16_dnp_bitwise(frame[10:19]).to_bytes(2, "little") == frame[19:21]


@settings(max_examples=100)
@given(frames())
def test_decode_then_encode_is_identity(frame):
    assert c.encode_frame(c.decode_frame(frame)) == frame
