"""Patch-grid embedding store and instance resolution.

A scene is summarized as a G x G grid of D-dimensional patch vectors. Two
scenes are compared by matching every query patch to its most similar
reference patch (cosine) and averaging those maxima over the query patches.
"""

from __future__ import annotations

import hashlib
import struct
import time
import uuid as uuidlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import (
    DegenerateEmbedding,
    EmptyDatabase,
    FormatError,
    NoPendingQuery,
    ShapeMismatch,
    UnknownDevice,
)
from .perception import DeviceClass
from .protocol import Frame

DEFAULT_GRID = 4
DEFAULT_DIM = 382

DB_MAGIC = b"IRDB"
DB_VERSION = 1
_DB_HEADER = struct.Struct("<4sHHII")
_CLASS_CODES = list(DeviceClass)


class PatchEmbedding:
    """A (grid*grid, dim) matrix of patch vectors; row norms are cached."""

    __slots__ = ("grid", "dim", "data", "_unit")

    def __init__(self, data, grid: int | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 3:
            if arr.shape[0] != arr.shape[1]:
                raise ShapeMismatch(f"patch grid must be square, got {arr.shape[:2]}")
            grid = arr.shape[0]
            arr = arr.reshape(grid * grid, arr.shape[2])
        if arr.ndim != 2:
            raise ShapeMismatch(f"expected a 2-D patch matrix, got shape {arr.shape}")
        if grid is None:
            grid = int(round(arr.shape[0] ** 0.5))
        if grid * grid != arr.shape[0]:
            raise ShapeMismatch(f"{arr.shape[0]} patches do not form a {grid}x{grid} grid")
        self.grid = grid
        self.dim = arr.shape[1]
        self.data = arr
        self._unit: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return (self.grid, self.dim)

    def unit(self) -> np.ndarray:
        """Row-normalized patches. Raises DegenerateEmbedding on a zero row."""
        if self._unit is None:
            norms = np.linalg.norm(self.data, axis=1)
            if not np.all(norms > 0):
                raise DegenerateEmbedding("embedding has a zero-norm patch")
            self._unit = self.data / norms[:, None]
        return self._unit

    def __repr__(self):
        return f"PatchEmbedding(grid={self.grid}, dim={self.dim})"


def _check_pair(q: PatchEmbedding, r: PatchEmbedding) -> None:
    if q.shape != r.shape:
        raise ShapeMismatch(f"query {q.shape} vs reference {r.shape}")


def scene_similarity(q: PatchEmbedding, r: PatchEmbedding) -> float:
    """Mean over query patches of the best cosine match among reference patches.

    Not symmetric: swapping the arguments changes which side is averaged.
    """
    _check_pair(q, r)
    return float((q.unit() @ r.unit().T).max(axis=1).mean())


@dataclass(eq=False)
class ReferenceEntry:
    embedding: PatchEmbedding
    device_uuid: uuidlib.UUID
    device_class: DeviceClass
    label: str = ""
    added_at: int = 0  # ms


@dataclass(frozen=True)
class Match:
    entry: ReferenceEntry
    score: float


@dataclass(frozen=True)
class Resolution:
    device_uuid: uuidlib.UUID
    score: float
    ranked: list[Match]


class EmbeddingDb:
    """Reference entries plus a per-class index of entry positions.

    Single writer, many readers: mutate only from one thread.
    """

    def __init__(self, grid: int = DEFAULT_GRID, dim: int = DEFAULT_DIM):
        self.grid = grid
        self.dim = dim
        self.entries: list[ReferenceEntry] = []
        self.by_class: dict[DeviceClass, list[int]] = {}

    def __len__(self):
        return len(self.entries)

    def add(self, entry: ReferenceEntry) -> None:
        emb = entry.embedding
        if emb.shape != (self.grid, self.dim):
            raise ShapeMismatch(f"database holds {(self.grid, self.dim)} embeddings, got {emb.shape}")
        emb.unit()  # rejects zero rows at ingest
        self.by_class.setdefault(entry.device_class, []).append(len(self.entries))
        self.entries.append(entry)

    def class_entries(self, cls: DeviceClass) -> list[ReferenceEntry]:
        return [self.entries[i] for i in self.by_class.get(cls, [])]

    def subset(self, cls: DeviceClass) -> EmbeddingDb:
        """A new database holding only ``cls`` entries (shared, in original order)."""
        sub = EmbeddingDb(self.grid, self.dim)
        for e in self.class_entries(cls):
            sub.add(e)
        return sub

    def devices(self) -> set[uuidlib.UUID]:
        return {e.device_uuid for e in self.entries}

    def check_index(self) -> bool:
        rebuilt: dict[DeviceClass, list[int]] = {}
        for i, e in enumerate(self.entries):
            rebuilt.setdefault(e.device_class, []).append(i)
        return rebuilt == self.by_class

    # -- persistence -----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        parts = [_DB_HEADER.pack(DB_MAGIC, DB_VERSION, self.grid, self.dim, len(self.entries))]
        for e in self.entries:
            label = e.label.encode("utf-8")
            parts.append(e.device_uuid.bytes)
            parts.append(struct.pack("<BH", _CLASS_CODES.index(e.device_class), len(label)))
            parts.append(label)
            parts.append(struct.pack("<Q", e.added_at))
            parts.append(e.embedding.data.astype("<f4").tobytes())
        Path(path).write_bytes(b"".join(parts))

    @classmethod
    def load(cls, path: str | Path) -> EmbeddingDb:
        buf = Path(path).read_bytes()
        try:
            magic, version, grid, dim, count = _DB_HEADER.unpack_from(buf, 0)
        except struct.error:
            raise FormatError(f"{path}: file too short for a database header") from None
        if magic != DB_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != DB_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        db = cls(grid, dim)
        off = _DB_HEADER.size
        nfloats = grid * grid * dim
        try:
            for _ in range(count):
                uid = uuidlib.UUID(bytes=buf[off : off + 16])
                code, llen = struct.unpack_from("<BH", buf, off + 16)
                off += 19
                label = buf[off : off + llen].decode("utf-8")
                off += llen
                (added_at,) = struct.unpack_from("<Q", buf, off)
                off += 8
                data = np.frombuffer(buf, dtype="<f4", count=nfloats, offset=off)
                off += 4 * nfloats
                db.add(ReferenceEntry(PatchEmbedding(data.reshape(grid * grid, dim), grid), uid, _CLASS_CODES[code], label, added_at))
        except (struct.error, ValueError, IndexError) as exc:
            raise FormatError(f"{path}: corrupt entry: {exc}") from None
        if off != len(buf):
            raise FormatError(f"{path}: {len(buf) - off} trailing bytes")
        return db


def _rank_key(m: Match, index: int):
    return (-m.score, -m.entry.added_at, -index)


def resolve_instance(q: PatchEmbedding, db: EmbeddingDb, class_hint: DeviceClass | None = None) -> Resolution:
    """Score the query against candidate references and return the best device.

    With a class hint only that class's references are searched, unless the
    class has none, in which case the whole database is. Ties favour the most
    recently added reference.
    """
    if not db.entries:
        raise EmptyDatabase("no reference embeddings stored")
    if class_hint is not None and db.by_class.get(class_hint):
        candidates = db.class_entries(class_hint)
    else:
        candidates = db.entries
    if q.shape != (db.grid, db.dim):
        raise ShapeMismatch(f"query {q.shape} vs database {(db.grid, db.dim)}")
    qu = q.unit()
    scored = []
    for i, e in enumerate(candidates):
        s = float((qu @ e.embedding.unit().T).max(axis=1).mean())
        scored.append((Match(e, s), i))
    scored.sort(key=lambda mi: _rank_key(*mi))
    ranked = [m for m, _ in scored]
    best = ranked[0]
    return Resolution(best.entry.device_uuid, best.score, ranked)


class Embedder(Protocol):
    def embed(self, frame: Frame) -> PatchEmbedding: ...


def add_reference(
    db: EmbeddingDb,
    frame: Frame,
    embedder: Embedder,
    device_uuid: uuidlib.UUID,
    device_class: DeviceClass,
    registry,
    label: str = "",
    added_at: int | None = None,
) -> EmbeddingDb:
    """Embed ``frame`` and store it as a reference for a registered device."""
    if device_uuid not in registry:
        raise UnknownDevice(f"device {device_uuid} is not registered")
    return add_embedding(db, embedder.embed(frame), device_uuid, device_class, registry, label, added_at)


def add_embedding(db, embedding, device_uuid, device_class, registry, label="", added_at=None) -> EmbeddingDb:
    if device_uuid not in registry:
        raise UnknownDevice(f"device {device_uuid} is not registered")
    if added_at is None:
        added_at = int(time.time() * 1000)
    db.add(ReferenceEntry(embedding, device_uuid, device_class, label, added_at))
    return db


def undo_correct(
    db: EmbeddingDb,
    last_query: PatchEmbedding | None,
    correct_device: uuidlib.UUID,
    registry,
    added_at: int | None = None,
    label: str = "correction",
) -> EmbeddingDb:
    """Keep a misresolved query as a new reference for the device the user meant.

    ``registry`` maps device uuid to a record with a ``device_class``
    attribute. Reversing the dispatched command is the orchestrator's job.
    """
    if last_query is None:
        raise NoPendingQuery("no query to correct")
    if correct_device not in registry:
        raise UnknownDevice(f"device {correct_device} is not registered")
    cls = registry[correct_device].device_class
    return add_embedding(db, last_query, correct_device, cls, registry, label, added_at)


# -- embedders -------------------------------------------------------------------

EMBEDDER_SEED = 1215  # fixed projection weights; changing it invalidates stored databases


class PatchProjectionEmbedder:
    """Deterministic stand-in for a vision transformer.

    Each patch vector is a fixed random projection of the patch's normalized
    pixels concatenated with a coarse thumbnail of the whole image, so every
    patch carries some scene context.
    """

    CELL = (6, 8)  # pooled rows, cols per patch and for the thumbnail

    def __init__(self, grid: int = DEFAULT_GRID, dim: int = DEFAULT_DIM, seed: int = EMBEDDER_SEED, context_weight: float = 0.5):
        self.grid = grid
        self.dim = dim
        self.context_weight = context_weight
        n_in = 2 * self.CELL[0] * self.CELL[1] + 1
        rng = np.random.default_rng(seed)
        self.weights = rng.standard_normal((n_in, dim)) / np.sqrt(n_in)
        self.calls = 0

    @staticmethod
    def _pool(img: np.ndarray, rows: int, cols: int) -> np.ndarray:
        h, w = img.shape
        ys = np.linspace(0, h, rows + 1).astype(int)
        xs = np.linspace(0, w, cols + 1).astype(int)
        return np.array([[img[ys[i]:ys[i + 1], xs[j]:xs[j + 1]].mean() for j in range(cols)] for i in range(rows)]).ravel()

    def embed(self, frame: Frame) -> PatchEmbedding:
        self.calls += 1
        img = np.frombuffer(frame.pixels, dtype=np.uint8).reshape(frame.height, frame.width).astype(np.float64)
        img = (img - img.mean()) / (img.std() + 1e-6)
        context = self.context_weight * self._pool(img, *self.CELL)
        ys = np.linspace(0, frame.height, self.grid + 1).astype(int)
        xs = np.linspace(0, frame.width, self.grid + 1).astype(int)
        feats = []
        for i in range(self.grid):
            for j in range(self.grid):
                local = self._pool(img[ys[i]:ys[i + 1], xs[j]:xs[j + 1]], *self.CELL)
                feats.append(np.concatenate([local, context, [1.0]]))
        return PatchEmbedding(np.array(feats) @ self.weights, self.grid)


class SceneClusters:
    """Seeded map from scene ids to cluster-center embeddings, plus noisy samples.

    Random Gaussian directions in a few hundred dimensions are nearly
    orthogonal, so distinct scenes are well separated by construction.
    """

    def __init__(self, seed: int = 0, grid: int = DEFAULT_GRID, dim: int = DEFAULT_DIM):
        self.seed = seed
        self.grid = grid
        self.dim = dim
        self._centers: dict[str, np.ndarray] = {}

    def center(self, scene_id: str) -> np.ndarray:
        c = self._centers.get(scene_id)
        if c is None:
            h = hashlib.sha256(f"{self.seed}:{scene_id}".encode()).digest()
            rng = np.random.default_rng(int.from_bytes(h[:8], "little"))
            c = rng.standard_normal((self.grid * self.grid, self.dim))
            c /= np.linalg.norm(c, axis=1, keepdims=True)
            self._centers[scene_id] = c
        return c

    def blend(self, weights: dict[str, float]) -> np.ndarray:
        """Per-patch normalized weighted mix of several scene centers."""
        mix = sum(w * self.center(s) for s, w in weights.items())
        return mix / np.linalg.norm(mix, axis=1, keepdims=True)

    def sample(self, scene, rng: np.random.Generator, noise: float = 0.3) -> PatchEmbedding:
        """Center plus isotropic noise; per-patch cosine to the center is about 1/sqrt(1+noise^2)."""
        c = self.center(scene) if isinstance(scene, str) else np.asarray(scene)
        eps = rng.standard_normal(c.shape) * (noise / np.sqrt(self.dim))
        return PatchEmbedding(c + eps, self.grid)


@dataclass
class SceneEmbedder:
    """Embedder double: frames registered to a scene embed to that scene's center.

    A scene is a scene id or a {scene id: weight} mix (see SceneClusters.blend).
    """

    clusters: SceneClusters
    scenes: dict[bytes, str | dict[str, float]] = field(default_factory=dict)
    calls: int = 0

    def register(self, frame: Frame, scene) -> None:
        self.scenes[hashlib.sha256(frame.pixels).digest()] = scene

    def embed(self, frame: Frame) -> PatchEmbedding:
        self.calls += 1
        scene = self.scenes.get(hashlib.sha256(frame.pixels).digest())
        if scene is None:
            raise KeyError("frame does not belong to a registered scene")
        data = self.clusters.blend(scene) if isinstance(scene, dict) else self.clusters.center(scene)
        return PatchEmbedding(data, self.clusters.grid)


# -- single-embedding files (query input for the CLI) ---------------------------

EMB_MAGIC = b"IREM"
_EMB_HEADER = struct.Struct("<4sHI")


def save_embedding(path: str | Path, emb: PatchEmbedding) -> None:
    """Write one embedding: magic "IREM", u16 grid, u32 dim, little-endian f32 data."""
    Path(path).write_bytes(_EMB_HEADER.pack(EMB_MAGIC, emb.grid, emb.dim) + emb.data.astype("<f4").tobytes())


def load_embedding(path: str | Path) -> PatchEmbedding:
    buf = Path(path).read_bytes()
    if len(buf) < _EMB_HEADER.size:
        raise FormatError(f"{path}: too short for an embedding header")
    magic, grid, dim = _EMB_HEADER.unpack_from(buf)
    if magic != EMB_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    n = grid * grid * dim
    if len(buf) != _EMB_HEADER.size + 4 * n:
        raise FormatError(f"{path}: expected {n} floats")
    data = np.frombuffer(buf, dtype="<f4", offset=_EMB_HEADER.size).reshape(grid * grid, dim)
    return PatchEmbedding(data, grid)
