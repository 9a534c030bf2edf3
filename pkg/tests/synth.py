"""Seeded synthetic data shared by the test modules."""

import random
import uuid

import numpy as np

from iris_ring.instances import (
    EmbeddingDb,
    PatchEmbedding,
    SceneClusters,
    SceneEmbedder,
    add_embedding,
    add_reference,
    resolve_instance,
)
from iris_ring.orchestrator import Capability, DeviceRecord, DeviceRegistry
from iris_ring.perception import DeviceClass
from iris_ring.protocol import FRAME_BYTES, Frame, ImuSample
from iris_ring.ringsim import packetize_frame


def random_frame(rng: random.Random) -> Frame:
    return Frame(rng.randbytes(FRAME_BYTES))


def imu_run(n, base=0):
    return [ImuSample((base + i, -i, 8192), (i, 0, -i)) for i in range(n)]


def encoded_stream(n_frames, seed=0, imu_per_frame=20, seq_start=0):
    """Frames, packets, and the frame index of every packet; a closing SOF packet is appended."""
    rng = random.Random(seed)
    frames = [random_frame(rng) for _ in range(n_frames)]
    packets, owner = [], []
    for k, f in enumerate(frames):
        packets += packetize_frame(f, (seq_start + len(packets)) & 0xFF, button=k % 2 == 1, imu=imu_run(imu_per_frame, k))
        owner += [k] * 83
    closing = packetize_frame(frames[0], (seq_start + len(packets)) & 0xFF)[0]
    packets.append(closing)
    owner.append(n_frames)
    return frames, packets, owner


def uid(n: int) -> uuid.UUID:
    return uuid.UUID(int=n + 1)


def registry_of(classes, granular=()):
    recs = []
    for i, cls in enumerate(classes):
        caps = {Capability.TOGGLE}
        if i in granular:
            caps.add(Capability.GRANULAR)
        recs.append(DeviceRecord(uid(i), cls, f"{cls.value.lower()}-{i}", frozenset(caps)))
    return DeviceRegistry(recs)


def reference_sweep(seed=0, n_devices=18, n_queries=200, max_refs=5, views=3, noise=0.3, grid=4, dim=382):
    """Resolve accuracy as references per device go 1..max_refs.

    Every device is seen from ``views`` distinct, mutually unrelated scenes.
    Reference k of a device is a noisy sample of view k mod views, so three
    references cover every view; queries are noisy samples of random views.
    The reference sets are nested (k references are the first k of k+1).
    """
    clusters = SceneClusters(seed, grid, dim)
    rng = np.random.default_rng(seed)
    refs = {
        d: [clusters.sample(f"dev{d}/view{k % views}", rng, noise) for k in range(max_refs)]
        for d in range(n_devices)
    }
    queries = []
    for _ in range(n_queries):
        d = int(rng.integers(n_devices))
        v = int(rng.integers(views))
        queries.append((d, clusters.sample(f"dev{d}/view{v}", rng, noise)))
    reg = registry_of([DeviceClass.LIGHTS] * n_devices)
    accuracy = []
    for k in range(1, max_refs + 1):
        db = EmbeddingDb(grid, dim)
        t = 0
        for d in range(n_devices):
            for e in refs[d][:k]:
                t += 1
                add_embedding(db, e, uid(d), DeviceClass.LIGHTS, reg, added_at=t)
        hits = sum(resolve_instance(q, db).device_uuid == uid(d) for d, q in queries)
        accuracy.append(hits / n_queries)
    return accuracy, clusters


class CorrectionScenario:
    """Two devices; a bright 'on' state dominates the scene appearance.

    A is referenced only while off, B once while on. A query of A while on
    looks more like B-on than A-off until the user corrects it.
    """

    ON = 0.7
    DEVICE = 0.3

    def __init__(self, seed=0, grid=4, dim=382):
        self.clusters = SceneClusters(seed, grid, dim)
        self.embedder = SceneEmbedder(self.clusters)
        self.registry = registry_of([DeviceClass.LIGHTS, DeviceClass.LIGHTS])
        self.a, self.b = uid(0), uid(1)
        self.db = EmbeddingDb(grid, dim)
        rng = random.Random(seed)
        self.frames = {}
        for name, mix in {
            "a_off": {"A": self.DEVICE, "off": self.ON},
            "a_off2": {"A": self.DEVICE, "off": self.ON, "pose2": 0.1},
            "b_on": {"B": self.DEVICE, "on": self.ON},
            "a_on": {"A": self.DEVICE, "on": self.ON},
        }.items():
            f = random_frame(rng)
            self.embedder.register(f, mix)
            self.frames[name] = f
        add_reference(self.db, self.frames["a_off"], self.embedder, self.a, DeviceClass.LIGHTS, self.registry, added_at=1)
        add_reference(self.db, self.frames["a_off2"], self.embedder, self.a, DeviceClass.LIGHTS, self.registry, added_at=2)
        add_reference(self.db, self.frames["b_on"], self.embedder, self.b, DeviceClass.LIGHTS, self.registry, added_at=3)

    def query(self) -> PatchEmbedding:
        return self.embedder.embed(self.frames["a_on"])

    def resolve(self):
        return resolve_instance(self.query(), self.db, DeviceClass.LIGHTS)

    def correct(self):
        add_reference(self.db, self.frames["a_on"], self.embedder, self.a, DeviceClass.LIGHTS, self.registry, added_at=4)
