"""Per-view embedding datasets, balanced sampling, view pairing and a toy encoder.

The two fine-tuned face branches are treated as feature providers: either a file
of precomputed embeddings or :class:`ToyEncoder` applied to images.

Random draws use numpy's ``PCG64`` bit generator seeded with the caller's integer,
so a given seed reproduces the same sample on any platform numpy supports.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fusionfer._io import atomic_write_bytes, atomic_write_text

N_CLASSES = 8
CLASS_NAMES = ("Neutral", "Anger", "Disgust", "Fear", "Happy", "Sad", "Surprise", "Other")

MAGIC = b"FFEM"
VERSION = 1
_HEADER = struct.Struct("<4sHHIQ")  # magic, version, reserved, dim, count


class ParseError(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class InsufficientClass(ValueError):
    def __init__(self, label: int, have: int, need: int):
        super().__init__(f"class {label} ({CLASS_NAMES[label]}) has {have} records, need {need}")
        self.label = label


class LabelConflict(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class EmbeddingRecord:
    sample_id: str
    video_id: str
    frame_index: int
    label: int
    vector: np.ndarray


class EmbeddingSet:
    """Immutable column-wise store of :class:`EmbeddingRecord` rows."""

    def __init__(self, sample_ids, video_ids, frame_index, labels, vectors, dim=None):
        self.sample_ids = tuple(str(s) for s in sample_ids)
        self.video_ids = tuple(str(v) for v in video_ids)
        self.frame_index = np.asarray(frame_index, dtype=np.int64).reshape(-1)
        self.labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        n = len(self.sample_ids)
        vectors = np.asarray(vectors, dtype=np.float64)
        if n == 0:
            vectors = vectors.reshape(0, dim or (vectors.shape[-1] if vectors.ndim == 2 else 0))
        if vectors.ndim != 2 or vectors.shape[0] != n:
            raise ShapeMismatch(f"expected {n} vectors, got array of shape {vectors.shape}")
        if not (len(self.video_ids) == len(self.frame_index) == len(self.labels) == n):
            raise ShapeMismatch("column lengths differ")
        if n and (self.labels.min() < 0 or self.labels.max() >= N_CLASSES):
            raise ValueError(f"labels must lie in 0..{N_CLASSES - 1}")
        self.vectors = vectors
        for a in (self.frame_index, self.labels, self.vectors):
            a.flags.writeable = False

    @classmethod
    def from_records(cls, records, dim=None) -> "EmbeddingSet":
        records = list(records)
        dims = {len(r.vector) for r in records}
        if len(dims) > 1:
            raise DimensionMismatch(f"ragged vectors, dimensions {sorted(dims)}")
        vecs = np.array([np.asarray(r.vector, dtype=np.float64) for r in records]) if records else None
        return cls(
            [r.sample_id for r in records],
            [r.video_id for r in records],
            [r.frame_index for r in records],
            [r.label for r in records],
            vecs if records else np.zeros((0, dim or 0)),
            dim=dim,
        )

    def __len__(self) -> int:
        return len(self.sample_ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __getitem__(self, i: int) -> EmbeddingRecord:
        return EmbeddingRecord(
            self.sample_ids[i], self.video_ids[i], int(self.frame_index[i]), int(self.labels[i]), self.vectors[i]
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def take(self, idx) -> "EmbeddingSet":
        idx = np.asarray(idx, dtype=np.intp).reshape(-1)
        return EmbeddingSet(
            [self.sample_ids[i] for i in idx],
            [self.video_ids[i] for i in idx],
            self.frame_index[idx],
            self.labels[idx],
            self.vectors[idx],
            dim=self.dim,
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=N_CLASSES)


# ---------------------------------------------------------------------------
# serialization


def save_embeddings(ds: EmbeddingSet, path) -> None:
    """Write ``ds`` in the binary format (vectors stored as little-endian float32)."""
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, 0, ds.dim, len(ds)))
    vecs = ds.vectors.astype("<f4")
    for i in range(len(ds)):
        for s in (ds.sample_ids[i], ds.video_ids[i]):
            b = s.encode("utf-8")
            buf.write(struct.pack("<H", len(b)))
            buf.write(b)
        buf.write(struct.pack("<qB", int(ds.frame_index[i]), int(ds.labels[i])))
        buf.write(vecs[i].tobytes())
    atomic_write_bytes(path, buf.getvalue())


def save_embeddings_csv(ds: EmbeddingSet, path) -> None:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["sample_id", "video_id", "frame_index", "label"] + [f"v{j}" for j in range(ds.dim)])
    for r in ds:
        w.writerow([r.sample_id, r.video_id, r.frame_index, r.label] + [repr(float(x)) for x in r.vector])
    atomic_write_text(path, out.getvalue())


def _parse_binary(data: bytes, path) -> EmbeddingSet:
    try:
        magic, version, _, dim, count = _HEADER.unpack_from(data, 0)
        if version != VERSION:
            raise ParseError(f"{path}: unsupported embedding file version {version}")
        off = _HEADER.size
        ids, vids, frames, labels = [], [], [], []
        vecs = np.empty((count, dim), dtype=np.float64)
        for i in range(count):
            for dest in (ids, vids):
                (n,) = struct.unpack_from("<H", data, off)
                off += 2
                dest.append(data[off : off + n].decode("utf-8"))
                off += n
            frame, label = struct.unpack_from("<qB", data, off)
            off += 9
            vecs[i] = np.frombuffer(data, dtype="<f4", count=dim, offset=off)
            off += 4 * dim
            frames.append(frame)
            labels.append(label)
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"{path}: truncated or corrupt embedding file ({exc})") from exc
    if off != len(data):
        raise ParseError(f"{path}: {len(data) - off} trailing bytes")
    try:
        return EmbeddingSet(ids, vids, frames, labels, vecs, dim=dim)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _parse_csv(text: str, path) -> EmbeddingSet:
    records = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), 1):
        if not row or (lineno == 1 and row[0] == "sample_id"):
            continue
        if len(row) < 5:
            raise ParseError(f"{path}:{lineno}: expected sample_id,video_id,frame_index,label,v0..")
        try:
            label = int(row[3])
            if not 0 <= label < N_CLASSES:
                raise ValueError(f"label {label} out of range")
            records.append(
                EmbeddingRecord(row[0], row[1], int(row[2]), label, np.array([float(x) for x in row[4:]]))
            )
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    dims = {len(r.vector) for r in records}
    if len(dims) > 1:
        raise DimensionMismatch(f"{path}: ragged vectors, dimensions {sorted(dims)}")
    return EmbeddingSet.from_records(records)


def load_embeddings(path) -> EmbeddingSet:
    """Load a binary (``FFEM`` magic) or CSV embedding file; record order is kept."""
    data = Path(path).read_bytes()
    if data[:4] == MAGIC:
        return _parse_binary(data, path)
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: neither a binary embedding file nor UTF-8 CSV") from exc
    return _parse_csv(text, path)


# ---------------------------------------------------------------------------
# sampling and pairing


def uniform_class_sample(ds: EmbeddingSet, n_per_class: int, seed: int) -> EmbeddingSet:
    """Draw exactly ``n_per_class`` records of every class, without replacement.

    Classes are visited in label order; the concatenated draw is then shuffled
    with the same generator.
    """
    if n_per_class < 0:
        raise ValueError("n_per_class must be non-negative")
    rng = make_rng(seed)
    counts = ds.class_counts()
    picked = []
    for c in range(N_CLASSES):
        if counts[c] < n_per_class:
            raise InsufficientClass(c, int(counts[c]), n_per_class)
        idx = np.flatnonzero(ds.labels == c)
        picked.append(rng.choice(idx, size=n_per_class, replace=False))
    order = np.concatenate(picked)
    return ds.take(order[rng.permutation(len(order))])


@dataclass(frozen=True)
class PairedDataset:
    main: EmbeddingSet
    aux: EmbeddingSet
    dropped_main: int = 0
    dropped_aux: int = 0

    def __len__(self) -> int:
        return len(self.main)

    @property
    def labels(self) -> np.ndarray:
        return self.main.labels

    def report(self) -> str:
        return (
            f"paired: {len(self)}\n"
            f"dropped (main only): {self.dropped_main}\n"
            f"dropped (aux only): {self.dropped_aux}\n"
        )


def pair_views(main: EmbeddingSet, aux: EmbeddingSet) -> PairedDataset:
    """Inner-join the two views on ``sample_id``, keeping main-view order."""
    aux_pos = {sid: i for i, sid in enumerate(aux.sample_ids)}
    if len(aux_pos) != len(aux) or len(set(main.sample_ids)) != len(main):
        raise ValueError("duplicate sample_id within a view")
    mi, ai = [], []
    for i, sid in enumerate(main.sample_ids):
        j = aux_pos.get(sid)
        if j is None:
            continue
        if main.labels[i] != aux.labels[j]:
            raise LabelConflict(f"sample {sid!r}: main label {main.labels[i]}, aux label {aux.labels[j]}")
        mi.append(i)
        ai.append(j)
    return PairedDataset(main.take(mi), aux.take(ai), len(main) - len(mi), len(aux) - len(ai))


# ---------------------------------------------------------------------------
# toy feature provider


@dataclass
class ToyEncoder:
    """Linear image encoder: ``weight @ (pixels / 255) + bias``."""

    weight: np.ndarray
    bias: np.ndarray

    @classmethod
    def random(cls, d_out: int, n_pixels: int, seed: int = 0) -> "ToyEncoder":
        rng = make_rng(seed)
        bound = 1.0 / np.sqrt(n_pixels)
        return cls(rng.uniform(-bound, bound, (d_out, n_pixels)), np.zeros(d_out))

    def encode(self, img: np.ndarray) -> np.ndarray:
        x = np.asarray(img).reshape(-1)
        if x.size != self.weight.shape[1]:
            raise ShapeMismatch(f"image has {x.size} values, encoder expects {self.weight.shape[1]}")
        return self.weight @ (x.astype(np.float64) / 255.0) + self.bias


def encode(enc: ToyEncoder, img: np.ndarray) -> np.ndarray:
    return enc.encode(img)
