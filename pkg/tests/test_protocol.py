import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from synth import encoded_stream, random_frame
from iris_ring.errors import FormatError, PayloadLengthMismatch, TruncatedPacket
from iris_ring.protocol import (
    LAST_PACKET_BYTES,
    PACKET_SIZE,
    PACKETS_PER_FRAME,
    PAYLOAD_SIZE,
    ZERO_IMU,
    ButtonEvent,
    Frame,
    FrameAssembler,
    FrameInvalidated,
    ImuEvent,
    ImuSample,
    RingPacket,
    StatusFlags,
    assembler_push,
    decode_packet,
    encode_packet,
    frame_payloads,
    read_capture,
    write_capture,
)
from iris_ring.ringsim import packetize_frame

s16 = st.integers(-32768, 32767)
packets = st.builds(
    RingPacket,
    seq=st.integers(0, 255),
    flags=st.builds(StatusFlags, st.booleans(), st.booleans(), st.booleans()),
    imu=st.builds(ImuSample, st.tuples(s16, s16, s16), st.tuples(s16, s16, s16)),
    camera_payload=st.binary(min_size=PAYLOAD_SIZE, max_size=PAYLOAD_SIZE),
)


def test_geometry():
    # ceil(19200 / 233) = 83, remainder 19200 - 82 * 233 = 94
    assert PACKETS_PER_FRAME == 83
    assert LAST_PACKET_BYTES == 94
    assert PAYLOAD_SIZE == 233 and PACKET_SIZE == 247


def test_zero_packet_is_all_zero_bytes():
    p = RingPacket(0, StatusFlags(), ZERO_IMU, bytes(PAYLOAD_SIZE))
    assert encode_packet(p) == bytes(247)
    assert decode_packet(bytes(247)) == p


def test_seq_and_sof_layout():
    raw = encode_packet(RingPacket(7, StatusFlags(start_of_frame=True), ZERO_IMU, bytes(PAYLOAD_SIZE)))
    assert raw[0] == 0x07 and raw[1] == 0x01
    assert raw[2:] == bytes(245)


@settings(max_examples=1000, deadline=None)
@given(packets)
def test_round_trip_and_hand_layout(p):
    raw = encode_packet(p)
    assert len(raw) == PACKET_SIZE
    assert raw == oracles.packet_bytes(
        p.seq, p.flags.start_of_frame, p.flags.imu_valid, p.flags.button_pressed,
        p.imu.accel, p.imu.gyro, p.camera_payload,
    )
    assert decode_packet(raw) == p


@pytest.mark.parametrize("n", [0, 1, 246, 248])
def test_wrong_length_is_truncated(n):
    with pytest.raises(TruncatedPacket):
        decode_packet(bytes(n))


def test_bad_payload_length():
    with pytest.raises(PayloadLengthMismatch):
        encode_packet(RingPacket(0, StatusFlags(), ZERO_IMU, bytes(232)))


@given(st.integers(0, 255))
def test_reserved_flag_bits_ignored(b):
    f = StatusFlags.from_byte(b)
    assert f == StatusFlags.from_byte(b & 0x07)
    assert f.to_byte() == b & 0x07


def test_imu_scaling():
    s = ImuSample((8192, -8192, 32767), (16384, 0, 0))
    assert s.accel_g()[:2] == (1.0, -1.0)
    assert s.gyro_dps()[0] == 1000.0
    assert ImuSample.from_g(0, 0, 1).accel == (0, 0, 8192)
    assert ImuSample.from_g(0, 0, 9).accel == (0, 0, 32767)


def test_frame_payloads_pad_last_packet():
    pixels = bytes(range(256)) * 75
    parts = frame_payloads(pixels)
    assert len(parts) == 83 and all(len(p) == 233 for p in parts)
    assert parts[-1][94:] == bytes(139)
    assert b"".join(parts)[:19200] == pixels


def test_frame_rejects_wrong_size():
    with pytest.raises(PayloadLengthMismatch):
        Frame(bytes(100))


# -- reassembly


def _run(packets):
    a = FrameAssembler()
    frames, events = [], []
    for p in packets:
        f, ev = a.push(p)
        if f is not None:
            frames.append(f)
        events += ev
    return a, frames, events


def test_one_frame_closed_by_next_sof():
    frames, pk, _ = encoded_stream(2, seed=1)
    a, out, events = _run(pk[:84])
    assert [f.pixels for f in out] == [frames[0].pixels]
    assert out[0].first_seq == 0
    assert a.frames_ok == 1
    assert not any(isinstance(e, FrameInvalidated) for e in events)


def test_frame_waits_for_next_sof():
    _, pk, _ = encoded_stream(1, seed=1)
    _, out, _ = _run(pk[:83])
    assert out == []


def test_dropped_packet_invalidates_frame():
    _, pk, _ = encoded_stream(2, seed=1)
    run = pk[:41] + pk[42:84]
    a, out, events = _run(run)
    assert out == []
    inval = [e for e in events if isinstance(e, FrameInvalidated)]
    assert inval == [FrameInvalidated(0, "gap", 41)]
    assert a.frames_invalid == 1


def test_missing_sof_merges_into_long_frame_and_is_rejected():
    frames, pk, _ = encoded_stream(3, seed=2)
    # clear the SOF of frame 1 so frames 0 and 1 run together
    p = pk[83]
    pk[83] = RingPacket(p.seq, StatusFlags(False, p.flags.imu_valid, p.flags.button_pressed), p.imu, p.camera_payload)
    _, out, events = _run(pk)
    assert [f.pixels for f in out] == [frames[2].pixels]
    assert FrameInvalidated(0, "long", 166) in events


def test_imu_events_survive_invalid_frames():
    f = random_frame(random.Random(3))
    imu = [ImuSample((i, 0, 0)) for i in range(83)]
    pk = packetize_frame(f, 0, imu=imu) + packetize_frame(f, 83, imu=imu)
    run = pk[:10] + pk[11:]
    _, _, events = _run(run)
    imu_events = [e for e in events if isinstance(e, ImuEvent)]
    assert len(imu_events) == len(run)
    assert [e.seq for e in imu_events] == [p.seq for p in run]


def test_button_transitions_reported():
    _, pk, _ = encoded_stream(3, seed=4)
    _, _, events = _run(pk)
    buttons = [e for e in events if isinstance(e, ButtonEvent)]
    assert [b.pressed for b in buttons] == [False, True, False]
    assert buttons[1].seq == 83 and buttons[2].seq == 166


def test_seq_wrap_is_not_a_gap():
    frames, pk, _ = encoded_stream(3, seed=5, seq_start=200)
    assert any(p.seq == 255 for p in pk) and pk[-1].seq == (200 + 249) & 0xFF
    _, out, events = _run(pk)
    assert [f.pixels for f in out] == [f.pixels for f in frames]
    assert not any(isinstance(e, FrameInvalidated) for e in events)


def test_liveness_without_drops():
    frames, pk, _ = encoded_stream(10, seed=6)
    _, out, _ = _run(pk[:-1])  # no closing SOF: last frame unterminated
    assert len(out) == len(frames) - 1


def test_frame_trace_matches_packets():
    f = random_frame(random.Random(7))
    imu = [ImuSample((i, 1, 2)) for i in range(5)]
    pk = packetize_frame(f, 0, button=True, imu=imu) + packetize_frame(f, 83)[:1]
    _, out, _ = _run(pk)
    trace = out[0].imu_trace
    assert len(trace) == 83
    assert [t.imu for t in trace[:5]] == imu and all(t.imu is None for t in trace[5:])
    assert all(t.button for t in trace)


def test_functional_push_matches_class():
    _, pk, _ = encoded_stream(2, seed=8)
    state = FrameAssembler()
    got = []
    for p in pk:
        state, f, _ = assembler_push(state, p)
        if f:
            got.append(f)
    assert len(got) == 2


def test_batch_feed_equals_push():
    _, pk, _ = encoded_stream(4, seed=9)
    rng = random.Random(9)
    kept = [p for p in pk if rng.random() > 0.01]
    _, frames1, events1 = _run(kept)
    frames2, events2 = FrameAssembler().feed(kept)
    assert frames1 == frames2 and events1 == events2


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 334), max_size=6), st.integers(0, 255))
def test_no_frame_mixes_sources(drops, start):
    frames, pk, owner = encoded_stream(4, seed=start, imu_per_frame=3, seq_start=start)
    keep = [i for i in range(len(pk)) if i not in set(drops)]
    kept = [pk[i] for i in keep]
    out, events = FrameAssembler().feed(kept)
    sources = {f.pixels for f in frames}
    assert all(f.pixels in sources for f in out)
    # a frame is delivered exactly when all its packets and the next SOF survive
    expect = [
        k for k in range(4)
        if all(i in keep for i in range(83 * k, 83 * k + 84))
    ]
    assert [f.pixels for f in out] == [frames[k].pixels for k in expect]
    n_imu = sum(1 for p in kept if p.flags.imu_valid)
    assert sum(isinstance(e, ImuEvent) for e in events) == n_imu


def test_capture_round_trip(tmp_path):
    _, pk, _ = encoded_stream(2, seed=10)
    path = tmp_path / "cap.bin"
    assert write_capture(path, pk) == len(pk)
    assert list(read_capture(path)) == pk
    assert path.stat().st_size == 4 + 247 * len(pk)


def test_truncated_capture(tmp_path):
    _, pk, _ = encoded_stream(1, seed=11)
    path = tmp_path / "cap.bin"
    write_capture(path, pk)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(FormatError):
        list(read_capture(path))
