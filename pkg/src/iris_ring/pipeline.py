"""Trace-driven simulation of the ring and the phone pipeline end to end.

The ring side replays an IMU/button CSV through the power state machine and,
while ACTIVE, streams binned camera frames of whatever scene it points at,
four packets per connection interval. The phone side reassembles frames,
recognizes gestures from the per-packet input and drives the orchestrator.
Everything observable is written to a line-oriented timeline.
"""

from __future__ import annotations

import heapq
import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .gesture import GestureConfig, GestureRecognizer
from .instances import EmbeddingDb, PatchProjectionEmbedder
from .orchestrator import DeviceRegistry, MockTransport, Orchestrator, Session
from .perception import SyntheticDetector, SyntheticScene
from .pgm import read_pgm
from .protocol import (
    FrameAssembler,
    FrameInvalidated,
    ImuEvent,
    RingPacket,
    StatusFlags,
    ZERO_IMU,
    frame_payloads,
)
from .ringsim import (
    Action,
    EventKind,
    FsmContext,
    LinkConfig,
    PowerLog,
    PowerProfile,
    PowerState,
    SimEvent,
    TraceSample,
    energy_used,
    fsm_step,
    image_to_frame,
)

TAIL_MS = 4000

_BARE = re.compile(r"^[\w.:+\-/]+$")


def kv(key: str, value) -> str:
    s = str(value)
    return f"{key}={s}" if _BARE.match(s) else f"{key}={json.dumps(s)}"


@dataclass
class SceneSpec:
    image: np.ndarray
    detections: SyntheticScene


@dataclass
class Scenario:
    scenes: dict[str, SceneSpec]
    pointing: list[tuple[int, str]]
    home_network: list[tuple[int, bool]] = field(default_factory=lambda: [(0, True)])
    corrections: list[tuple[int, str]] = field(default_factory=list)
    drop_prob: float = 0.0
    end_ms: int | None = None

    def scene_at(self, t_ms: float) -> str:
        current = self.pointing[0][1]
        for t, s in self.pointing:
            if t <= t_ms:
                current = s
        return current

    @classmethod
    def load(cls, path: str | Path, images_dir: str | Path) -> Scenario:
        data = json.loads(Path(path).read_text())
        images_dir = Path(images_dir)
        try:
            scenes = {
                sid: SceneSpec(read_pgm(images_dir / spec["image"]), SyntheticScene.from_json(spec))
                for sid, spec in data["scenes"].items()
            }
            pointing = sorted((int(p["t_ms"]), p["scene"]) for p in data["pointing"])
            home = [(int(h["t_ms"]), bool(h["connected"])) for h in data.get("home_network", [{"t_ms": 0, "connected": True}])]
            corrections = [(int(c["t_ms"]), str(c["device"])) for c in data.get("corrections", [])]
            drop = float(data.get("link", {}).get("drop_prob", 0.0))
            end_ms = data.get("end_ms")
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: bad scenario: {exc}") from None
        if not pointing:
            raise FormatError(f"{path}: scenario needs at least one pointing entry")
        for _, s in pointing:
            if s not in scenes:
                raise FormatError(f"{path}: pointing refers to unknown scene {s!r}")
        return cls(scenes, pointing, home, corrections, drop, None if end_ms is None else int(end_ms))


# event priorities at equal timestamps
_NET, _IMU, _CORRECT, _INTERVAL = range(4)


@dataclass
class SimResult:
    timeline: list[str]
    packets: list[RingPacket]
    power_segments: list[tuple[PowerState, float]]
    energy_mah: float
    registry: DeviceRegistry
    transport: MockTransport
    db: EmbeddingDb


class Simulation:
    def __init__(
        self,
        scenario: Scenario,
        trace: list[TraceSample],
        registry: DeviceRegistry,
        db: EmbeddingDb | None = None,
        seed: int = 0,
        link: LinkConfig = LinkConfig(),
        profile: PowerProfile = PowerProfile(),
        gesture_config: GestureConfig = GestureConfig(),
    ):
        self.scenario = scenario
        self.trace = trace
        self.link = link
        self.profile = profile
        self.rng = random.Random(seed)
        self.db = db if db is not None else EmbeddingDb()
        self.embedder = PatchProjectionEmbedder(self.db.grid, self.db.dim)
        self.detector = SyntheticDetector(seed)
        self.frames = {}
        for sid, spec in scenario.scenes.items():
            frame = image_to_frame(spec.image)
            self.frames[sid] = frame
            self.detector.add_scene(frame, spec.detections)
        self.registry = registry
        self.transport = MockTransport(registry)
        self.orch = Orchestrator(registry, self.db, self.detector, self.embedder, self.transport)
        self.session = Session(self.orch)
        self.recognizer = GestureRecognizer(gesture_config)
        self.assembler = FrameAssembler()

        self.timeline: list[str] = []
        self.sent: list[RingPacket] = []
        self.dropped = 0
        # ring state
        self.state = PowerState.SLEEP
        self.ctx = FsmContext()
        self.power = PowerLog(PowerState.SLEEP, 0.0)
        self.seq = 0
        self.button = False
        self.imu_fifo: list = []
        self.payloads: list[bytes] = []
        self.streaming = False

    def emit(self, t: float, kind: str, *detail: str) -> None:
        line = f"{int(t)} {kind}"
        if detail:
            line += " " + " ".join(detail)
        self.timeline.append(line)

    # ring side

    def _fsm(self, t: float, kind: EventKind) -> None:
        new, actions = fsm_step(self.state, SimEvent(t, kind), self.ctx)
        if new is not self.state:
            self.power.switch(t, new)
            self.emit(t, "power", kv("state", new.value), kv("cause", kind.value))
            self.state = new
        for a in actions:
            if a is Action.START_STREAMING:
                self.streaming = True
                self.payloads = []
                self.imu_fifo = []
                self.session.reset_stream()
                self.emit(t, "stream", "start")
                heapq.heappush(self.queue, (t, _INTERVAL, self._n(), None))
            elif a is Action.STOP_STREAMING:
                self.streaming = False
                self.emit(t, "stream", "stop")
                self._phone_flush(t)

    def _n(self) -> int:
        self._counter += 1
        return self._counter

    def _interval(self, t: float) -> None:
        if not self.streaming:
            return
        self._fsm(t, EventKind.TICK)
        if not self.streaming:
            return
        for _ in range(self.link.packets_per_interval):
            sof = False
            if not self.payloads:
                scene = self.scenario.scene_at(t)
                self.payloads = frame_payloads(self.frames[scene].pixels)
                self.emit(t, "capture", kv("scene", scene), kv("seq", self.seq))
                sof = True
            imu = self.imu_fifo.pop(0) if self.imu_fifo else None
            pkt = RingPacket(
                seq=self.seq,
                flags=StatusFlags(sof, imu is not None, self.button),
                imu=imu or ZERO_IMU,
                camera_payload=self.payloads.pop(0),
            )
            self.seq = (self.seq + 1) & 0xFF
            self.sent.append(pkt)
            if self.scenario.drop_prob > 0 and self.rng.random() < self.scenario.drop_prob:
                self.dropped += 1
                continue
            self._phone_packet(t, pkt)
        heapq.heappush(self.queue, (t + self.link.connection_interval_ms, _INTERVAL, self._n(), None))

    def _imu(self, t: float, s: TraceSample) -> None:
        if s.button != self.button:
            self.button = s.button
            self._fsm(t, EventKind.BUTTON_DOWN if s.button else EventKind.BUTTON_UP)
        if self.streaming:
            self.imu_fifo.append(s.imu)

    # phone side

    def _phone_packet(self, t: float, pkt: RingPacket) -> None:
        frame, events = self.assembler.push(pkt)
        accel = None
        for ev in events:
            if isinstance(ev, FrameInvalidated):
                self.emit(t, "frame_invalid", kv("first_seq", ev.first_seq), kv("reason", ev.reason), kv("packets", ev.packets))
            elif isinstance(ev, ImuEvent):
                accel = ev.imu.accel_g()
        outcomes = []
        if frame is not None:
            self.emit(t, "frame", kv("first_seq", frame.first_seq))
            outcomes += self.session.on_frame(t, frame)
        for g in self.recognizer.process_sample(t, pkt.flags.button_pressed, accel):
            outcomes += self._gesture(t, g)
        self._log_outcomes(t, outcomes)

    def _gesture(self, t, g):
        detail = [g.kind.value] + ([f"{g.degrees:+g}"] if g.degrees is not None else []) + [kv("at", f"{g.t_ms:g}")]
        self.emit(t, "gesture", *detail)
        return self.session.on_gesture(g)

    def _phone_flush(self, t: float) -> None:
        outcomes = []
        for g in self.recognizer.flush(t):
            outcomes += self._gesture(t, g)
        self._log_outcomes(t, outcomes)

    def _log_outcomes(self, t, outcomes) -> None:
        for g, out in outcomes:
            self.emit(t, out.kind.value, kv("gesture", g.kind.value), *out.format().split(" ", 1)[1:])

    def _correct(self, t: float, device_key: str) -> None:
        dev = self.registry.find(device_key)
        try:
            self.orch.correct(dev.uuid, added_at=int(t))
        except Exception as exc:  # surfaced in the timeline, simulation continues
            self.emit(t, "correct_failed", kv("device", dev.name), kv("error", type(exc).__name__))
            return
        self.emit(t, "correct", kv("device", dev.name), kv("db_size", len(self.db)))

    def run(self) -> SimResult:
        self.queue: list = []
        self._counter = 0
        for t, connected in self.scenario.home_network:
            heapq.heappush(self.queue, (t, _NET, self._n(), connected))
        for s in self.trace:
            heapq.heappush(self.queue, (s.t_ms, _IMU, self._n(), s))
        for t, dev in self.scenario.corrections:
            heapq.heappush(self.queue, (t, _CORRECT, self._n(), dev))
        last = max([0] + [q[0] for q in self.queue])
        end = self.scenario.end_ms if self.scenario.end_ms is not None else last + TAIL_MS
        self.emit(0, "power", kv("state", self.state.value), "cause=init")

        while self.queue and self.queue[0][0] <= end:
            t, prio, _, payload = heapq.heappop(self.queue)
            if prio == _NET:
                self._fsm(t, EventKind.HOME_NETWORK_DETECTED if payload else EventKind.HOME_NETWORK_LOST)
            elif prio == _IMU:
                self._imu(t, payload)
            elif prio == _CORRECT:
                self._correct(t, payload)
            else:
                self._interval(t)

        self._phone_flush(end)
        self._log_outcomes(end, self.session.drain())
        segments = self.power.close(end)
        mah = energy_used(segments, self.profile)
        per_state = {s: 0.0 for s in PowerState}
        for s, d in segments:
            per_state[s] += d
        self.emit(
            end, "summary",
            kv("packets_sent", len(self.sent)), kv("packets_dropped", self.dropped),
            kv("frames_ok", self.assembler.frames_ok), kv("frames_invalid", self.assembler.frames_invalid),
        )
        self.emit(
            end, "energy", kv("mAh", f"{mah:.6f}"),
            *(kv(f"{s.value.lower()}_ms", f"{per_state[s]:g}") for s in PowerState),
        )
        for dev in self.transport.devices:
            self.emit(end, "device", kv("name", dev.name), kv("uuid", dev.uuid), *dev.describe_state().split())
        return SimResult(self.timeline, self.sent, segments, mah, self.registry, self.transport, self.db)


def simulate(scenario, trace, registry, db=None, seed=0, **kw) -> SimResult:
    return Simulation(scenario, trace, registry, db, seed, **kw).run()
