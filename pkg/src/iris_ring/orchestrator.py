"""Phone-side pipeline: target selection, gesture-to-command mapping, dispatch, undo."""

from __future__ import annotations

import copy
import enum
import itertools
import json
import logging
import uuid as uuidlib
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .errors import (
    CapabilityMismatch,
    EmptyDatabase,
    FormatError,
    NothingToUndo,
    TransportFailure,
    UnknownDevice,
)
from .gesture import GestureEvent, GestureKind, map_rotation
from .instances import EmbeddingDb, PatchEmbedding, resolve_instance, undo_correct
from .perception import DeviceClass, coda
from .protocol import Frame

log = logging.getLogger(__name__)

LEVEL_RANGE = (0, 100)

# Door and handle detections stand in for a lock too small to see from afar.
CLASS_FALLBACK = {
    DeviceClass.DOOR: DeviceClass.SMART_LOCK,
    DeviceClass.DOOR_HANDLE: DeviceClass.SMART_LOCK,
}
NON_ACTIONABLE = frozenset({DeviceClass.WINDOW, DeviceClass.BACKGROUND})
TOGGLE_ONLY = frozenset({DeviceClass.SMART_LOCK, DeviceClass.BLINDS})


class Capability(enum.Enum):
    TOGGLE = "Toggle"
    GRANULAR = "Granular"


@dataclass
class DeviceState:
    power: bool = False
    level: int | None = None


@dataclass
class DeviceRecord:
    uuid: uuidlib.UUID
    device_class: DeviceClass
    name: str
    capabilities: frozenset[Capability]
    state: DeviceState = field(default_factory=DeviceState)

    def __post_init__(self):
        if Capability.GRANULAR in self.capabilities:
            if self.device_class in TOGGLE_ONLY:
                raise CapabilityMismatch(f"{self.device_class.value} devices support toggling only")
            if self.state.level is None:
                self.state.level = LEVEL_RANGE[0]
            if not LEVEL_RANGE[0] <= self.state.level <= LEVEL_RANGE[1]:
                raise ValueError(f"{self.name}: level {self.state.level} outside {LEVEL_RANGE}")

    @property
    def granular(self) -> bool:
        return Capability.GRANULAR in self.capabilities

    def describe_state(self) -> str:
        s = f"power={'on' if self.state.power else 'off'}"
        if self.state.level is not None:
            s += f" level={self.state.level}"
        return s


class DeviceRegistry:
    """The home's device library keyed by uuid."""

    def __init__(self, records=()):
        self._records: dict[uuidlib.UUID, DeviceRecord] = {}
        for r in records:
            self.add(r)

    def add(self, record: DeviceRecord) -> None:
        if record.uuid in self._records:
            raise ValueError(f"duplicate device uuid {record.uuid}")
        self._records[record.uuid] = record

    def __contains__(self, uid) -> bool:
        return uid in self._records

    def __getitem__(self, uid) -> DeviceRecord:
        try:
            return self._records[uid]
        except KeyError:
            raise UnknownDevice(f"device {uid} is not registered") from None

    def __iter__(self):
        return iter(self._records.values())

    def __len__(self):
        return len(self._records)

    def of_class(self, cls: DeviceClass) -> list[DeviceRecord]:
        return [r for r in self._records.values() if r.device_class is cls]

    def find(self, key: str) -> DeviceRecord:
        """Look a device up by uuid string or by name."""
        for r in self._records.values():
            if r.name == key or str(r.uuid) == key:
                return r
        raise UnknownDevice(f"no device named or identified as {key!r}")

    def copy(self) -> DeviceRegistry:
        return DeviceRegistry(copy.deepcopy(list(self._records.values())))

    @classmethod
    def from_json(cls, data) -> DeviceRegistry:
        if isinstance(data, dict):
            data = data.get("devices", [])
        records = []
        try:
            for d in data:
                st = d.get("initial_state", {})
                records.append(
                    DeviceRecord(
                        uuid=uuidlib.UUID(d["uuid"]),
                        device_class=DeviceClass.parse(d["class"]),
                        name=d.get("name", d["uuid"]),
                        capabilities=frozenset(Capability(c) for c in d.get("capabilities", ["Toggle"])),
                        state=DeviceState(bool(st.get("power", False)), st.get("level")),
                    )
                )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad registry entry: {exc}") from None
        return cls(records)

    @classmethod
    def load(cls, path: str | Path) -> DeviceRegistry:
        return cls.from_json(json.loads(Path(path).read_text()))

    def to_json(self) -> list[dict]:
        return [
            {
                "uuid": str(r.uuid),
                "class": r.device_class.value,
                "name": r.name,
                "capabilities": sorted(c.value for c in r.capabilities),
                "initial_state": {"power": r.state.power, "level": r.state.level},
            }
            for r in self._records.values()
        ]


# -- commands and transport -------------------------------------------------------


class CommandAction(enum.Enum):
    TOGGLE = "Toggle"
    SET_LEVEL_DELTA = "SetLevelDelta"


@dataclass(frozen=True)
class Command:
    id: int
    target: uuidlib.UUID
    action: CommandAction
    delta: int = 0
    issued_at: float = 0.0
    undoes: int | None = None

    def describe(self) -> str:
        s = f"id={self.id} action={self.action.value}"
        if self.action is CommandAction.SET_LEVEL_DELTA:
            s += f" delta={self.delta:+d}"
        if self.undoes is not None:
            s += f" undoes={self.undoes}"
        return s


@dataclass(frozen=True)
class Ack:
    command_id: int
    state: DeviceState
    duplicate: bool = False


class DeviceTransport(Protocol):
    def send(self, c: Command) -> Ack: ...


class MockTransport:
    """In-memory home hub: applies commands to its own registry copy.

    Each command id is applied at most once; replays are acknowledged without
    effect. ``fail_next`` makes the next n sends raise TransportFailure.
    """

    def __init__(self, registry: DeviceRegistry):
        self.devices = registry.copy()
        self.applied: set[int] = set()
        self.timeline: list[str] = []
        self.fail_next = 0

    def send(self, c: Command) -> Ack:
        if self.fail_next > 0:
            self.fail_next -= 1
            self.timeline.append(f"{c.issued_at:g} fail {c.describe()}")
            raise TransportFailure(f"command {c.id} not delivered")
        dev = self.devices[c.target]
        if c.id in self.applied:
            return Ack(c.id, copy.copy(dev.state), duplicate=True)
        if c.action is CommandAction.TOGGLE:
            dev.state.power = not dev.state.power
        else:
            if not dev.granular:
                raise CapabilityMismatch(f"{dev.name} has no level control")
            lo, hi = LEVEL_RANGE
            dev.state.level = min(hi, max(lo, dev.state.level + c.delta))
        self.applied.add(c.id)
        self.timeline.append(f"{c.issued_at:g} apply {c.describe()} {dev.describe_state()}")
        return Ack(c.id, copy.copy(dev.state))


def mock_transport(registry: DeviceRegistry) -> MockTransport:
    return MockTransport(registry)


# -- interaction handling -----------------------------------------------------------


class OutcomeKind(enum.Enum):
    DISPATCHED = "dispatched"
    TARGETED = "targeted"
    NO_TARGET = "no_target"
    IGNORED = "ignored"
    UNDONE = "undone"
    NOTHING_TO_UNDO = "nothing_to_undo"
    TRANSPORT_FAILURE = "transport_failure"
    NONE = "none"


@dataclass
class Outcome:
    kind: OutcomeKind
    device: DeviceRecord | None = None
    command: Command | None = None
    detail: str = ""
    score: float | None = None
    embedded: bool = False

    def format(self) -> str:
        parts = [self.kind.value]
        if self.device is not None:
            parts.append(f"device={self.device.name}")
        if self.command is not None:
            parts.append(self.command.describe())
        if self.score is not None:
            parts.append(f"score={self.score:.6f}")
        if self.detail:
            parts.append(self.detail)
        return " ".join(parts)


@dataclass
class Target:
    device: DeviceRecord | None
    query: PatchEmbedding | None = None
    score: float | None = None
    reason: str = ""


@dataclass
class UndoRecord:
    command: Command
    applied_delta: int
    frame: Frame | None
    query: PatchEmbedding | None
    hold_id: int | None = None


@dataclass
class _Hold:
    id: int
    target: Target
    carry: float = 0.0
    warned: bool = False


class Orchestrator:
    """One user session: resolves what the ring points at and drives devices.

    Undo is single-level: only the most recent command (or the net effect of
    the most recent rotation hold) can be reversed.
    """

    def __init__(self, registry: DeviceRegistry, db: EmbeddingDb, detector, embedder, transport: DeviceTransport, level_range=LEVEL_RANGE):
        self.registry = registry
        self.db = db
        self.detector = detector
        self.embedder = embedder
        self.transport = transport
        self.level_range = level_range
        self._ids = itertools.count(1)
        self._hold_ids = itertools.count(1)
        self.last: UndoRecord | None = None
        self.pending_correction: UndoRecord | None = None
        self._hold: _Hold | None = None

    # target selection

    def resolve_target(self, frame: Frame) -> Target:
        box = coda(self.detector.detect(frame), frame.width, frame.height)
        if box is None:
            return Target(None, reason="nothing_detected")
        cls = CLASS_FALLBACK.get(box.class_id, box.class_id)
        if cls in NON_ACTIONABLE:
            return Target(None, reason=f"non_actionable class={cls.value}")
        devices = self.registry.of_class(cls)
        if len(devices) == 1:
            return Target(devices[0], reason=f"class={cls.value} single_instance")
        if not self.db.entries:
            why = "no_device" if not devices else "ambiguous_no_references"
            return Target(None, reason=f"{why} class={cls.value}")
        query = self.embedder.embed(frame)
        try:
            res = resolve_instance(query, self.db, cls if devices else None)
        except EmptyDatabase:
            return Target(None, query, reason=f"no_references class={cls.value}")
        if res.device_uuid not in self.registry:
            return Target(None, query, res.score, reason="unregistered_reference")
        scope = f"class={cls.value}" if devices else f"unseen_class={cls.value}"
        return Target(self.registry[res.device_uuid], query, res.score, reason=scope)

    # gestures

    def handle(self, frame: Frame | None, gesture: GestureEvent) -> Outcome:
        kind = gesture.kind
        if kind is GestureKind.DOUBLE_CLICK:
            try:
                return self.undo_last(gesture.t_ms)
            except NothingToUndo:
                return Outcome(OutcomeKind.NOTHING_TO_UNDO)
        if kind is GestureKind.HOLD_END:
            self._hold = None
            return Outcome(OutcomeKind.NONE, detail="hold_end")
        if kind is GestureKind.ROTATE_DELTA:
            return self._rotate(gesture)

        if frame is None:
            return Outcome(OutcomeKind.NO_TARGET, detail="no_frame")
        target = self.resolve_target(frame)
        if kind is GestureKind.HOLD_START:
            self._hold = _Hold(next(self._hold_ids), target)
            if target.device is None:
                return Outcome(OutcomeKind.NO_TARGET, detail=target.reason, embedded=target.query is not None)
            return Outcome(OutcomeKind.TARGETED, target.device, score=target.score, detail=target.reason, embedded=target.query is not None)

        # Click
        if target.device is None:
            return Outcome(OutcomeKind.NO_TARGET, detail=target.reason, embedded=target.query is not None)
        cmd = Command(next(self._ids), target.device.uuid, CommandAction.TOGGLE, issued_at=gesture.t_ms)
        out = self._dispatch(cmd, target.device, frame, target.query)
        out.score, out.embedded = target.score, target.query is not None
        out.detail = " ".join(x for x in (out.detail, target.reason) if x)
        return out

    def _rotate(self, gesture: GestureEvent) -> Outcome:
        hold = self._hold
        if hold is None or hold.target.device is None:
            return Outcome(OutcomeKind.NO_TARGET, detail="no_hold_target")
        dev = hold.target.device
        if not dev.granular:
            # no level control: rotation is ignored
            if not hold.warned:
                log.info("rotation ignored for toggle-only device %s", dev.name)
            hold.warned = True
            return Outcome(OutcomeKind.IGNORED, dev, detail="capability_mismatch")
        inc = map_rotation(gesture.degrees, self.level_range) + hold.carry
        step = int(round(inc)) if abs(inc - round(inc)) < 1e-9 else int(inc)
        hold.carry = inc - step
        if step == 0:
            return Outcome(OutcomeKind.NONE, dev, detail="accumulating")
        cmd = Command(next(self._ids), dev.uuid, CommandAction.SET_LEVEL_DELTA, step, gesture.t_ms)
        return self._dispatch(cmd, dev, None, hold.target.query, hold_id=hold.id)

    def _dispatch(self, cmd: Command, dev: DeviceRecord, frame, query, hold_id=None) -> Outcome:
        before = dev.state.level
        try:
            ack = self.transport.send(cmd)
        except TransportFailure as exc:
            return Outcome(OutcomeKind.TRANSPORT_FAILURE, dev, cmd, detail=str(exc))
        dev.state = copy.copy(ack.state)
        applied = 0
        if cmd.action is CommandAction.SET_LEVEL_DELTA and before is not None:
            applied = dev.state.level - before
        if cmd.undoes is None:
            last = self.last
            if hold_id is not None and last is not None and last.hold_id == hold_id:
                last.applied_delta += applied
                last.command = cmd
            else:
                self.last = UndoRecord(cmd, applied, frame, query, hold_id)
        return Outcome(OutcomeKind.DISPATCHED, dev, cmd, detail=dev.describe_state())

    # undo and correction

    def undo_last(self, t_ms: float = 0.0) -> Outcome:
        """Reverse the last command; its query is then offered for correction."""
        rec = self.last
        if rec is None:
            raise NothingToUndo("no command to undo")
        self.last = None
        dev = self.registry[rec.command.target]
        if rec.command.action is CommandAction.TOGGLE:
            inv = Command(next(self._ids), dev.uuid, CommandAction.TOGGLE, issued_at=t_ms, undoes=rec.command.id)
        else:
            inv = Command(next(self._ids), dev.uuid, CommandAction.SET_LEVEL_DELTA, -rec.applied_delta, t_ms, undoes=rec.command.id)
        out = self._dispatch(inv, dev, None, None)
        if out.kind is OutcomeKind.DISPATCHED:
            out.kind = OutcomeKind.UNDONE
            self.pending_correction = rec
        else:
            self.last = rec
        return out

    def correct(self, device_uuid: uuidlib.UUID, added_at: int = 0) -> PatchEmbedding:
        """Store the last undone query as a reference for the device the user meant."""
        rec = self.pending_correction
        query = None
        if rec is not None:
            query = rec.query
            if query is None and rec.frame is not None:
                query = self.embedder.embed(rec.frame)
        undo_correct(self.db, query, device_uuid, self.registry, added_at=added_at)
        self.pending_correction = None
        return query


def handle_interaction(frame, gesture, registry, db, detector, embedder, transport=None) -> Outcome:
    """One-shot interaction without session state (no undo history carried over)."""
    orch = Orchestrator(registry, db, detector, embedder, transport or MockTransport(registry))
    return orch.handle(frame, gesture)


class Session:
    """Pairs gestures with frames on a single event loop.

    A gesture uses the newest frame assembled at or before its timestamp
    (click release or hold start). If no frame of the current stream exists
    yet, the gesture waits for the next one.
    """

    FRAME_HISTORY = 8

    def __init__(self, orchestrator: Orchestrator):
        self.orch = orchestrator
        self.frames: deque[tuple[float, Frame]] = deque(maxlen=self.FRAME_HISTORY)
        self.waiting: list[GestureEvent] = []

    def reset_stream(self) -> None:
        self.frames.clear()

    def on_frame(self, t_ms: float, frame: Frame) -> list[tuple[GestureEvent, Outcome]]:
        self.frames.append((t_ms, frame))
        waiting, self.waiting = self.waiting, []
        out = []
        for g in waiting:
            out.extend(self.on_gesture(g))
        return out

    def _frame_for(self, t_ms: float) -> Frame | None:
        best = None
        for ft, f in self.frames:
            if ft <= t_ms:
                best = f
        if best is None and self.frames:
            best = self.frames[0][1]
        return best

    def on_gesture(self, g: GestureEvent) -> list[tuple[GestureEvent, Outcome]]:
        if self.waiting:
            # outcomes apply in event order
            self.waiting.append(g)
            return []
        needs_frame = g.kind in (GestureKind.CLICK, GestureKind.HOLD_START)
        frame = self._frame_for(g.t_ms) if needs_frame else None
        if needs_frame and frame is None:
            self.waiting.append(g)
            return []
        return [(g, self.orch.handle(frame, g))]

    def drain(self) -> list[tuple[GestureEvent, Outcome]]:
        """Resolve gestures still waiting when the stream ends (no frame available)."""
        waiting, self.waiting = self.waiting, []
        return [(g, self.orch.handle(None, g)) for g in waiting]
