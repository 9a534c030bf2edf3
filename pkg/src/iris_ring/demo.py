"""Procedurally generated demo home: two blinds and a speaker.

``write_demo`` lays out every input ``iris simulate`` needs: sensor images,
a scene file, an IMU/button trace, a device registry and a reference
database. The script clicks at the second blinds, then press-holds at the
speaker while rolling the wrist by 45 degrees.
"""

from __future__ import annotations

import hashlib
import json
import math
import uuid
from pathlib import Path

import numpy as np

from .instances import EmbeddingDb, PatchProjectionEmbedder, add_reference
from .orchestrator import DeviceRegistry
from .perception import DeviceClass
from .pgm import write_pgm
from .protocol import ImuSample
from .ringsim import TraceSample, image_to_frame, write_imu_csv

BLINDS_1 = uuid.UUID("00000000-0000-4000-8000-00000000b001")
BLINDS_2 = uuid.UUID("00000000-0000-4000-8000-00000000b002")
SPEAKER = uuid.UUID("00000000-0000-4000-8000-00000000a001")

CLICK_AT_MS = 1000
HOLD_AT_MS = 6000
HOLD_END_MS = 8500
ROLL_START_MS, ROLL_END_MS = 6700, 7900
ROLL_DEG = 45.0
SPEAKER_LEVEL = 30


def _rng(seed: int, name: str) -> np.random.Generator:
    h = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return np.random.default_rng(int.from_bytes(h[:8], "little"))


def room_image(seed: int, room: str, obj: str, shift: int = 0, noise: float = 0.0) -> np.ndarray:
    """A 320x320 grayscale 'room' with one device drawn at the center."""
    rng = _rng(seed, room)
    coarse = rng.uniform(30, 200, size=(6, 6))
    xs = np.linspace(0, 5, 320)
    # separable bilinear upsampling of the coarse field
    rows = np.array([np.interp(xs, np.arange(6), r) for r in coarse])
    img = np.array([np.interp(xs, np.arange(6), c) for c in rows.T]).T
    for _ in range(4):  # furniture
        y, x = rng.integers(0, 260, size=2)
        h, w = rng.integers(20, 60, size=2)
        img[y : y + h, x : x + w] = rng.uniform(0, 255)
    if obj == "blinds":
        for k in range(10):
            img[110 + 10 * k : 115 + 10 * k, 120:200] = 230
    elif obj == "speaker":
        img[120:200, 135:185] = 20
        yy, xx = np.mgrid[0:320, 0:320]
        img[(yy - 175) ** 2 + (xx - 160) ** 2 < 15 ** 2] = 120
    if shift:
        img = np.roll(img, shift, axis=1)
    if noise:
        img = img + _rng(seed, f"{room}/noise/{shift}").normal(0, noise, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _box(cls: str, cx=80, cy=60, w=40, h=50, conf=0.9) -> dict:
    return {"class": cls, "cx": cx, "cy": cy, "w": w, "h": h, "confidence": conf}


def demo_trace(end_ms: int = 11000, step_ms: int = 10) -> list[TraceSample]:
    samples = []
    for t in range(0, end_ms + 1, step_ms):
        pressed = CLICK_AT_MS <= t < CLICK_AT_MS + 100 or HOLD_AT_MS <= t < HOLD_END_MS
        frac = min(1.0, max(0.0, (t - ROLL_START_MS) / (ROLL_END_MS - ROLL_START_MS)))
        roll = math.radians(ROLL_DEG * frac)
        samples.append(TraceSample(t, ImuSample.from_g(0.0, math.sin(roll), math.cos(roll)), pressed))
    return samples


def write_demo(out_dir: str | Path, seed: int = 0) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images = {
        "blinds1": room_image(seed, "living", "blinds"),
        "blinds2": room_image(seed, "bedroom", "blinds"),
        "speaker": room_image(seed, "kitchen", "speaker"),
        "blinds1_ref": room_image(seed, "living", "blinds", shift=6, noise=4.0),
        "blinds2_ref": room_image(seed, "bedroom", "blinds", shift=-6, noise=4.0),
    }
    for name, img in images.items():
        write_pgm(out / f"{name}.pgm", img)

    scene = {
        "scenes": {
            "blinds1": {"image": "blinds1.pgm", "boxes": [_box("Blinds"), _box("Lights", 20, 15, 12, 12, 0.7)]},
            "blinds2": {"image": "blinds2.pgm", "boxes": [_box("Blinds", 82, 58), _box("Window", 140, 30, 30, 40, 0.8)]},
            "speaker": {"image": "speaker.pgm", "boxes": [_box("Speaker", 79, 63, 25, 40), _box("Background", 80, 60, 150, 110, 0.3)]},
        },
        "pointing": [{"t_ms": 0, "scene": "blinds2"}, {"t_ms": 4500, "scene": "speaker"}],
        "home_network": [{"t_ms": 0, "connected": True}],
    }
    (out / "scene.json").write_text(json.dumps(scene, indent=2) + "\n")

    registry = DeviceRegistry.from_json([
        {"uuid": str(BLINDS_1), "class": "Blinds", "name": "blinds-1", "capabilities": ["Toggle"]},
        {"uuid": str(BLINDS_2), "class": "Blinds", "name": "blinds-2", "capabilities": ["Toggle"]},
        {"uuid": str(SPEAKER), "class": "Speaker", "name": "speaker", "capabilities": ["Toggle", "Granular"],
         "initial_state": {"power": True, "level": SPEAKER_LEVEL}},
    ])
    (out / "registry.json").write_text(json.dumps(registry.to_json(), indent=2) + "\n")

    write_imu_csv(out / "trace.csv", demo_trace())

    db = EmbeddingDb()
    embedder = PatchProjectionEmbedder(db.grid, db.dim)
    for t, (name, uid) in enumerate([("blinds1_ref", BLINDS_1), ("blinds2_ref", BLINDS_2)], start=1):
        add_reference(db, image_to_frame(images[name]), embedder, uid, DeviceClass.BLINDS, registry, label=name, added_at=t)
    db.save(out / "db.irdb")
    return {
        "scene": out / "scene.json", "images": out, "imu": out / "trace.csv",
        "registry": out / "registry.json", "db": out / "db.irdb",
    }
