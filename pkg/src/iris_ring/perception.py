"""Detection interface, centered-object selection (CODA) and a synthetic detector."""

from __future__ import annotations

import enum
import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .errors import FormatError
from .protocol import FRAME_HEIGHT, FRAME_WIDTH, Frame

CAMERA_FOV_DEG = 87.0


class DeviceClass(enum.Enum):
    LIGHTS = "Lights"
    SPEAKER = "Speaker"
    SMART_LOCK = "SmartLock"
    TV = "Tv"
    BLINDS = "Blinds"
    DOOR = "Door"
    DOOR_HANDLE = "DoorHandle"
    WINDOW = "Window"
    BACKGROUND = "Background"

    @classmethod
    def parse(cls, name: str) -> DeviceClass:
        for c in cls:
            if name.lower() in (c.value.lower(), c.name.lower()):
                return c
        raise ValueError(f"unknown device class {name!r}")


AUXILIARY_CLASSES = frozenset({DeviceClass.DOOR, DeviceClass.DOOR_HANDLE, DeviceClass.WINDOW})


@dataclass(frozen=True)
class BoundingBox:
    cx: float
    cy: float
    w: float
    h: float
    class_id: DeviceClass
    confidence: float = 1.0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError("box extent must be positive")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "class": self.class_id.value, "cx": self.cx, "cy": self.cy,
            "w": self.w, "h": self.h, "confidence": self.confidence,
        }

    @classmethod
    def from_dict(cls, d: dict) -> BoundingBox:
        return cls(
            cx=float(d["cx"]), cy=float(d["cy"]), w=float(d["w"]), h=float(d["h"]),
            class_id=DeviceClass.parse(d["class"]), confidence=float(d.get("confidence", 1.0)),
        )


class Detector(Protocol):
    def detect(self, frame: Frame) -> list[BoundingBox]: ...


def center_distance(box: BoundingBox, image_w: float, image_h: float) -> float:
    return math.hypot(box.cx - image_w / 2, box.cy - image_h / 2)


def coda(boxes: list[BoundingBox], image_w: float = FRAME_WIDTH, image_h: float = FRAME_HEIGHT) -> BoundingBox | None:
    """Pick the non-background box whose center is nearest the image center.

    Ties go to the higher confidence, then the earlier box.
    """
    best = None
    best_key = None
    for i, b in enumerate(boxes):
        if b.class_id is DeviceClass.BACKGROUND:
            continue
        key = (center_distance(b, image_w, image_h), -b.confidence, i)
        if best_key is None or key < best_key:
            best, best_key = b, key
    return best


def angular_error(dx_px: float, dy_px: float, fov_deg: float = CAMERA_FOV_DEG, res_px: float = FRAME_WIDTH) -> tuple[float, float]:
    """Pixel offsets to pointing error in degrees using a uniform degrees-per-pixel."""
    if res_px <= 0:
        raise ValueError("res_px must be positive")
    per_px = fov_deg / res_px
    return dx_px * per_px, dy_px * per_px


@dataclass
class SyntheticScene:
    """Ground-truth object placements for one scene (pixel coords in the 160x120 frame)."""

    boxes: list[BoundingBox] = field(default_factory=list)
    jitter_px: float = 0.0
    drop_prob: float = 0.0

    @classmethod
    def from_json(cls, data) -> SyntheticScene:
        if isinstance(data, list):
            data = {"boxes": data}
        try:
            return cls(
                boxes=[BoundingBox.from_dict(b) for b in data.get("boxes", [])],
                jitter_px=float(data.get("jitter_px", 0.0)),
                drop_prob=float(data.get("drop_prob", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad scene description: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> SyntheticScene:
        return cls.from_json(json.loads(Path(path).read_text()))


def synthetic_detect(frame: Frame, scenario: SyntheticScene, rng: random.Random | None = None) -> list[BoundingBox]:
    """Emit the scenario's boxes, optionally jittered/dropped with a seeded RNG.

    Without an explicit ``rng`` the noise is seeded from the frame content, so
    repeated calls on the same frame give identical output.
    """
    if rng is None:
        rng = random.Random(hashlib.sha256(frame.pixels).digest())
    out = []
    for b in scenario.boxes:
        if scenario.drop_prob > 0 and rng.random() < scenario.drop_prob:
            continue
        cx, cy = b.cx, b.cy
        if scenario.jitter_px > 0:
            cx = min(frame.width, max(0.0, cx + rng.gauss(0.0, scenario.jitter_px)))
            cy = min(frame.height, max(0.0, cy + rng.gauss(0.0, scenario.jitter_px)))
        out.append(BoundingBox(cx, cy, b.w, b.h, b.class_id, b.confidence))
    return out


class SyntheticDetector:
    """Detector double that recognizes known frames by content hash.

    Frames not registered with ``add_scene`` produce no detections.
    """

    def __init__(self, seed: int = 0):
        self._scenes: dict[bytes, SyntheticScene] = {}
        self._rng = random.Random(seed)
        self.calls = 0

    def add_scene(self, frame: Frame, scene: SyntheticScene) -> None:
        self._scenes[hashlib.sha256(frame.pixels).digest()] = scene

    def detect(self, frame: Frame) -> list[BoundingBox]:
        self.calls += 1
        scene = self._scenes.get(hashlib.sha256(frame.pixels).digest())
        if scene is None:
            return []
        return synthetic_detect(frame, scene, self._rng)
