"""Ring-to-phone BLE packet codec and frame reassembly.

Wire layout of one 247-byte packet (all multi-byte fields little-endian)::

    [0]        seq        u8, wraps 255 -> 0
    [1]        flags      bit0 start-of-frame, bit1 IMU valid, bit2 button
    [2:14]     imu        s16 ax, ay, az, gx, gy, gz
    [14:247]   camera     233 bytes of row-major 8-bit pixels

A 160x120 frame spans 83 packets; the last one carries 94 pixel bytes and
139 bytes of zero padding. The end of a frame is only known when the next
start-of-frame packet arrives.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, NamedTuple

from .errors import FormatError, PayloadLengthMismatch, TruncatedPacket

PACKET_SIZE = 247
HEADER_SIZE = 14
PAYLOAD_SIZE = PACKET_SIZE - HEADER_SIZE  # 233

FRAME_WIDTH = 160
FRAME_HEIGHT = 120
FRAME_BYTES = FRAME_WIDTH * FRAME_HEIGHT
PACKETS_PER_FRAME = math.ceil(FRAME_BYTES / PAYLOAD_SIZE)  # 83
LAST_PACKET_BYTES = FRAME_BYTES - (PACKETS_PER_FRAME - 1) * PAYLOAD_SIZE  # 94

FLAG_SOF = 0x01
FLAG_IMU_VALID = 0x02
FLAG_BUTTON = 0x04

ACCEL_FULL_SCALE_G = 4.0
GYRO_FULL_SCALE_DPS = 2000.0

_IMU = struct.Struct("<6h")
_HEADER = struct.Struct("<BB6h")
_ZERO_PAYLOAD = bytes(PAYLOAD_SIZE)


@dataclass(frozen=True)
class StatusFlags:
    start_of_frame: bool = False
    imu_valid: bool = False
    button_pressed: bool = False

    def to_byte(self) -> int:
        return (
            (FLAG_SOF if self.start_of_frame else 0)
            | (FLAG_IMU_VALID if self.imu_valid else 0)
            | (FLAG_BUTTON if self.button_pressed else 0)
        )

    @classmethod
    def from_byte(cls, b: int) -> StatusFlags:
        # bits 3-7 are reserved and ignored
        return cls(bool(b & FLAG_SOF), bool(b & FLAG_IMU_VALID), bool(b & FLAG_BUTTON))


@dataclass(frozen=True)
class ImuSample:
    """Raw accelerometer and gyroscope counts, axis order x, y, z."""

    accel: tuple[int, int, int] = (0, 0, 0)
    gyro: tuple[int, int, int] = (0, 0, 0)

    def accel_g(self) -> tuple[float, float, float]:
        k = ACCEL_FULL_SCALE_G / 32768
        return (self.accel[0] * k, self.accel[1] * k, self.accel[2] * k)

    def gyro_dps(self) -> tuple[float, float, float]:
        k = GYRO_FULL_SCALE_DPS / 32768
        return (self.gyro[0] * k, self.gyro[1] * k, self.gyro[2] * k)

    @classmethod
    def from_g(cls, ax: float, ay: float, az: float) -> ImuSample:
        """Build a sample from accelerations in g (gyro zero), saturating at full scale."""
        k = 32768 / ACCEL_FULL_SCALE_G
        counts = tuple(max(-32768, min(32767, round(a * k))) for a in (ax, ay, az))
        return cls(accel=counts)  # type: ignore[arg-type]

    def to_bytes(self) -> bytes:
        return _IMU.pack(*self.accel, *self.gyro)


ZERO_IMU = ImuSample()


@dataclass(frozen=True)
class RingPacket:
    seq: int
    flags: StatusFlags
    imu: ImuSample
    camera_payload: bytes


def encode_packet(p: RingPacket) -> bytes:
    """Serialize a packet to its 247-byte wire form."""
    if len(p.camera_payload) != PAYLOAD_SIZE:
        raise PayloadLengthMismatch(
            f"camera payload is {len(p.camera_payload)} bytes, expected {PAYLOAD_SIZE}"
        )
    head = _HEADER.pack(p.seq & 0xFF, p.flags.to_byte(), *p.imu.accel, *p.imu.gyro)
    return head + bytes(p.camera_payload)


def decode_packet(raw: bytes) -> RingPacket:
    if len(raw) != PACKET_SIZE:
        raise TruncatedPacket(f"packet is {len(raw)} bytes, expected {PACKET_SIZE}")
    seq, flags, ax, ay, az, gx, gy, gz = _HEADER.unpack_from(raw)
    return RingPacket(
        seq=seq,
        flags=StatusFlags.from_byte(flags),
        imu=ImuSample((ax, ay, az), (gx, gy, gz)),
        camera_payload=bytes(raw[HEADER_SIZE:]),
    )


class TraceEntry(NamedTuple):
    """Per-packet input captured alongside a frame."""

    imu: ImuSample | None
    button: bool


@dataclass
class Frame:
    pixels: bytes
    first_seq: int = 0
    width: int = FRAME_WIDTH
    height: int = FRAME_HEIGHT
    source_packets: tuple[RingPacket, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if len(self.pixels) != self.width * self.height:
            raise PayloadLengthMismatch(
                f"frame has {len(self.pixels)} pixel bytes, expected {self.width * self.height}"
            )

    @property
    def imu_trace(self) -> list[TraceEntry]:
        """IMU sample (None unless flagged valid) and button state of each source packet."""
        return [
            TraceEntry(p.imu if p.flags.imu_valid else None, p.flags.button_pressed)
            for p in self.source_packets
        ]


def frame_payloads(pixels: bytes) -> list[bytes]:
    """Tile frame pixels into 83 packet payloads, zero-padding the last."""
    if len(pixels) != FRAME_BYTES:
        raise PayloadLengthMismatch(f"frame has {len(pixels)} bytes, expected {FRAME_BYTES}")
    out = [pixels[i : i + PAYLOAD_SIZE] for i in range(0, FRAME_BYTES, PAYLOAD_SIZE)]
    out[-1] = out[-1] + bytes(PAYLOAD_SIZE - len(out[-1]))
    return out


# -- reassembly ---------------------------------------------------------------


class FrameInvalidated(NamedTuple):
    first_seq: int
    reason: str  # "gap", "short" or "long"
    packets: int


class ImuEvent(NamedTuple):
    seq: int
    imu: ImuSample
    button: bool


class ButtonEvent(NamedTuple):
    seq: int
    pressed: bool


AssemblerEvent = FrameInvalidated | ImuEvent | ButtonEvent


class FrameAssembler:
    """Rebuilds frames from an in-order (possibly lossy) packet stream.

    A sequence gap invalidates the frame in progress at once; packets are
    buffered again only from the next start-of-frame. Input samples are
    reported for every packet regardless of frame validity.
    """

    __slots__ = (
        "last_seq", "collecting", "first_seq", "buf",
        "button", "frames_ok", "frames_invalid", "packets_seen",
    )

    def __init__(self):
        self.last_seq: int | None = None
        self.collecting = False
        self.first_seq = 0
        self.buf: list[RingPacket] = []
        self.button: bool | None = None
        self.frames_ok = 0
        self.frames_invalid = 0
        self.packets_seen = 0

    def push(self, p: RingPacket) -> tuple[Frame | None, list[AssemblerEvent]]:
        frames, events = self.feed((p,))
        return (frames[0] if frames else None), events

    def feed(self, packets: Iterable[RingPacket]) -> tuple[list[Frame], list[AssemblerEvent]]:
        """Push a batch of packets in arrival order; returns frames and events in order."""
        frames: list[Frame] = []
        events: list[AssemblerEvent] = []
        emit = events.append
        last = self.last_seq
        collecting = self.collecting
        buf = self.buf
        button_state = self.button
        n = 0
        for p in packets:
            n += 1
            flags = p.flags
            seq = p.seq
            if collecting and seq != (last + 1) & 0xFF:
                emit(FrameInvalidated(self.first_seq, "gap", len(buf)))
                self.frames_invalid += 1
                collecting = False
            last = seq
            if flags.start_of_frame:
                if collecting:
                    frame = self._close(buf, emit)
                    if frame is not None:
                        frames.append(frame)
                collecting = True
                self.first_seq = seq
                buf = [p]
            elif collecting:
                buf.append(p)
            button = flags.button_pressed
            if flags.imu_valid:
                emit(ImuEvent(seq, p.imu, button))
            if button is not button_state:
                button_state = button
                emit(ButtonEvent(seq, button))
        self.packets_seen += n
        self.last_seq = last
        self.collecting = collecting
        self.buf = buf if collecting else []
        self.button = button_state
        return frames, events

    def _close(self, buf: list[RingPacket], emit) -> Frame | None:
        n = len(buf)
        if n != PACKETS_PER_FRAME:
            emit(FrameInvalidated(self.first_seq, "short" if n < PACKETS_PER_FRAME else "long", n))
            self.frames_invalid += 1
            return None
        pixels = b"".join([p.camera_payload for p in buf])[:FRAME_BYTES]
        self.frames_ok += 1
        return Frame(pixels, self.first_seq, source_packets=tuple(buf))


def assembler_push(
    state: FrameAssembler, p: RingPacket
) -> tuple[FrameAssembler, Frame | None, list[AssemblerEvent]]:
    """Functional-style wrapper around FrameAssembler.push (state is updated in place)."""
    frame, events = state.push(p)
    return state, frame, events


# -- capture files --------------------------------------------------------------


def write_capture(path: str | Path, packets: Iterable[RingPacket | bytes]) -> int:
    """Write a packet log: u32 LE count, then 247-byte records. Returns the count."""
    records = [p if isinstance(p, (bytes, bytearray)) else encode_packet(p) for p in packets]
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(records)))
        for r in records:
            if len(r) != PACKET_SIZE:
                raise TruncatedPacket(f"record is {len(r)} bytes")
            f.write(r)
    return len(records)


def _read_exact(f: BinaryIO, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise FormatError(f"capture truncated: wanted {n} bytes, got {len(b)}")
    return b


def read_capture(path: str | Path) -> Iterator[RingPacket]:
    with open(path, "rb") as f:
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        for _ in range(count):
            yield decode_packet(_read_exact(f, PACKET_SIZE))
