import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hexplore import comms
from hexplore.comms import (
    CAT_MAP,
    CAT_POSE,
    EDGE_RECORD_BYTES,
    HEADER_BYTES,
    SV_RECORD_BYTES,
    BadMagic,
    BadVersion,
    MapIncrement,
    NetworkBus,
    PathFrame,
    PoseFrame,
    RouteFrame,
    TruncatedFrame,
    decode,
    encode_map,
    encode_path,
    encode_pose,
    encode_route,
)
from hexplore.supervoxels import NORMAL_UNDEFINED, SupervoxelRecord, pack_key


def test_layout_sizes():
    assert HEADER_BYTES == 16
    assert SV_RECORD_BYTES == 24
    assert EDGE_RECORD_BYTES == 20


record_strategy = st.builds(
    SupervoxelRecord,
    key=st.tuples(
        st.integers(-1000, 1000), st.integers(-1000, 1000), st.integers(-40, 40)
    ).map(pack_key),
    center=st.tuples(
        st.floats(-500, 500, width=32),
        st.floats(-500, 500, width=32),
        st.floats(-50, 50, width=32),
    ),
    normal_oct=st.one_of(
        st.just(NORMAL_UNDEFINED), st.integers(0, 0xFFFE)
    ),
    kind=st.integers(0, 1),
    covered=st.booleans(),
    requirement=st.integers(0, 63),
    version=st.integers(0, 255),
    updated_at=st.just(0),
)


@given(
    st.lists(record_strategy, max_size=20),
    st.lists(
        st.tuples(
            st.integers(0, 2**40), st.integers(0, 2**40),
            st.floats(0.015625, 100, width=32),
        ),
        max_size=10,
    ),
    st.integers(0, 65535),
    st.integers(0, 2**32 - 1),
)
@settings(max_examples=200)
def test_map_frame_byte_identity(records, edges, sender, tick):
    inc = MapIncrement(sender, tick, tuple(records), tuple(edges))
    wire = encode_map(inc)
    assert len(wire) == HEADER_BYTES + 24 * len(records) + 20 * len(edges)
    back = decode(wire)
    assert isinstance(back, MapIncrement)
    assert back.sender == sender and back.window_end == tick
    assert len(back.records) == len(records)
    # decode then re-encode must give the exact same bytes
    assert encode_map(back) == wire


def test_map_record_fields_survive():
    rec = SupervoxelRecord(
        key=pack_key((3, -4, 1)),
        center=(1.5, -2.25, 0.5),
        normal_oct=1234,
        kind=1,
        covered=True,
        requirement=2,
        version=7,
        updated_at=99,
    )
    inc = MapIncrement(5, 1000, (rec,), ())
    back = decode(encode_map(inc)).records[0]
    assert back.key == rec.key
    assert back.center == rec.center  # exactly representable values
    assert back.normal_oct == 1234
    assert back.kind == 1 and back.covered is True
    assert back.requirement == 2 and back.version == 7
    assert back.updated_at == 1000  # stamped with the window end


def test_pose_roundtrip():
    f = PoseFrame(3, 42, (1.0, 2.0, 0.5), 1.25, True, 1)
    wire = encode_pose(f)
    back = decode(wire)
    assert back == f
    assert encode_pose(back) == wire


def test_path_roundtrip():
    f = PathFrame(1, 7, ((0.0, 0.0, 0.0), (1.5, 2.0, 0.25)))
    back = decode(encode_path(f))
    assert back == f


def test_route_roundtrip():
    f = RouteFrame(
        2,
        9,
        (
            (0, ((1.0, 1.0, 0.0), (4.0, 5.0, 0.0))),
            (1, ()),
            (3, ((2.0, 2.0, 0.5),)),
        ),
    )
    wire = encode_route(f)
    back = decode(wire)
    assert back == f
    assert encode_route(back) == wire


def test_decode_rejects_bad_magic():
    wire = bytearray(encode_pose(PoseFrame(0, 0, (0, 0, 0), 0.0, False, 0)))
    wire[0] ^= 0xFF
    with pytest.raises(BadMagic):
        decode(bytes(wire))


def test_decode_rejects_bad_version():
    wire = bytearray(encode_pose(PoseFrame(0, 0, (0, 0, 0), 0.0, False, 0)))
    wire[4] = 99
    with pytest.raises(BadVersion):
        decode(bytes(wire))


def test_decode_rejects_truncation():
    rec = SupervoxelRecord(
        key=1, center=(0.0, 0.0, 0.0), normal_oct=0, kind=0,
        covered=False, requirement=1, version=1, updated_at=0,
    )
    wire = encode_map(MapIncrement(0, 0, (rec,), ()))
    with pytest.raises(TruncatedFrame):
        decode(wire[:-1])
    with pytest.raises(TruncatedFrame):
        decode(wire[:10])


# ---------- bus ----------

def test_bus_enforces_delivery_delay():
    bus = NetworkBus(latency_ticks=1)
    bus.publish(0, CAT_POSE, b"x" * 20, tick=5)
    assert bus.collect(1, tick=5) == []          # same tick: not yet visible
    got = bus.collect(1, tick=6)
    assert [(s, c) for s, c, _ in got] == [(0, CAT_POSE)]
    assert bus.collect(1, tick=7) == []          # delivered once


def test_bus_skips_own_frames():
    bus = NetworkBus()
    bus.publish(0, CAT_MAP, b"y" * 30, tick=0)
    assert bus.collect(0, tick=2) == []
    assert len(bus.collect(1, tick=2)) == 1


def test_bus_counts_bytes_once_per_publish():
    bus = NetworkBus()
    bus.publish(0, CAT_MAP, b"z" * 100, tick=0)
    bus.collect(1, 2)
    bus.collect(2, 2)
    bus.collect(3, 2)
    assert bus.sent_bytes[(0, CAT_MAP)] == 100
    assert bus.category_bytes(CAT_MAP) == 100
    assert bus.total_bytes() == 100


def test_bus_preserves_order():
    bus = NetworkBus()
    for t in range(4):
        bus.publish(0, CAT_POSE, bytes([t]), tick=t)
    got = bus.collect(1, tick=10)
    assert [d[0] for _, _, d in got] == [0, 1, 2, 3]
