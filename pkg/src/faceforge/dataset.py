"""Training-pair storage: ingest (embedding, parameter) records produced by
upstream pipelines, filter by estimated age, split deterministically, and
compute target-normalization statistics.

Records arrive either as `Record` objects or as JSON-lines (one object per
line: id, embedding, params, age, source). On disk they live in an indexed
binary container so random access is O(1).
"""
from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .regressor import DimsProfile, NormStats

DATASET_MAGIC = b"T2F1"
DATASET_VERSION = 1

SOURCE_TAGS = ("image", "text", "other")


class DatasetError(ValueError):
    """Ingestion, format, or consistency failure."""


@dataclass(frozen=True)
class Record:
    id: str
    embedding: np.ndarray
    params: np.ndarray
    estimated_age: float
    source: str = "image"

    def validate(self, embed_dim: int, params_dim: int) -> None:
        if self.source not in SOURCE_TAGS:
            raise DatasetError(f"record {self.id}: unknown source {self.source!r}")
        if self.embedding.shape != (embed_dim,):
            raise DatasetError(
                f"record {self.id}: embedding length {self.embedding.shape[0]} != {embed_dim}")
        if self.params.shape != (params_dim,):
            raise DatasetError(
                f"record {self.id}: params length {self.params.shape[0]} != {params_dim}")


@dataclass
class Dataset:
    """In-memory dataset with its declared dims profile."""

    records: list[Record]
    embed_dim: int
    profile: DimsProfile

    def __len__(self) -> int:
        return len(self.records)

    def record(self, i: int) -> Record:
        if not 0 <= i < len(self.records):
            raise DatasetError(f"record index {i} out of range [0, {len(self.records)})")
        return self.records[i]

    def arrays(self, ids: list[str] | None = None) -> tuple[np.ndarray, np.ndarray]:
        recs = self.records if ids is None else [r for r in self.records if r.id in set(ids)]
        x = np.stack([r.embedding for r in recs])
        y = np.stack([r.params for r in recs])
        return x, y


def record_from_json_line(line: str) -> Record:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"bad JSON record: {exc}") from exc
    try:
        return Record(
            id=str(obj["id"]),
            embedding=np.asarray(obj["embedding"], dtype=np.float64),
            params=np.asarray(obj["params"], dtype=np.float64),
            estimated_age=float(obj["age"]),
            source=obj.get("source", "other"),
        )
    except KeyError as exc:
        raise DatasetError(f"record missing field {exc}") from exc


def read_jsonl(path: str | Path) -> Iterator[Record]:
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield record_from_json_line(line)


def ingest(records: Iterable[Record], embed_dim: int, profile: DimsProfile,
           min_age: float = 18.0) -> tuple[Dataset, list[str]]:
    """Keeps records with estimated_age >= min_age ("older than 18" read as
    adult-inclusive) and finite values; returns the dataset plus per-record
    rejection diagnostics."""
    kept: list[Record] = []
    diagnostics: list[str] = []
    for rec in records:
        rec.validate(embed_dim, profile.total)
        if not (np.all(np.isfinite(rec.embedding)) and np.all(np.isfinite(rec.params))
                and np.isfinite(rec.estimated_age)):
            diagnostics.append(f"{rec.id}: rejected, non-finite values")
            continue
        if rec.estimated_age < min_age:
            diagnostics.append(f"{rec.id}: rejected, age {rec.estimated_age} < {min_age}")
            continue
        kept.append(rec)
    if not kept:
        raise DatasetError("no records survived ingestion")
    return Dataset(kept, embed_dim, profile), diagnostics


def _split_key(record_id: str, seed: int) -> bytes:
    return hashlib.sha256(f"{seed}:{record_id}".encode()).digest()


def split(dataset: Dataset, validation_fraction: float = 0.1,
          seed: int = 42) -> tuple[list[str], list[str]]:
    """Deterministic, ingestion-order-independent split: records ordered by
    a seeded hash of their id, validation takes the prefix."""
    if not 0.0 < validation_fraction < 1.0:
        raise DatasetError("validation_fraction must be in (0, 1)")
    if len(dataset) < 2:
        raise DatasetError("need at least 2 records to split")
    ordered = sorted((r.id for r in dataset.records),
                     key=lambda rid: _split_key(rid, seed))
    n_val = int(round(len(ordered) * validation_fraction))
    n_val = min(max(n_val, 1), len(ordered) - 1)
    return ordered[n_val:], ordered[:n_val]


def compute_stats(dataset: Dataset, train_ids: list[str],
                  normalize_embeddings: bool = True) -> NormStats:
    """Per-dimension mean and population (1/N) std over the train split only.
    Dimensions with std < 1e-8 are clamped to 1 and flagged."""
    wanted = set(train_ids)
    rows = np.stack([r.params for r in dataset.records if r.id in wanted])
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)  # population convention
    clamped = [int(i) for i in np.nonzero(std < 1e-8)[0]]
    std = std.copy()
    std[std < 1e-8] = 1.0
    return NormStats(mean=mean, std=std,
                     normalize_embeddings=normalize_embeddings,
                     clamped_dims=clamped)


def summarize(dataset: Dataset, age_bins: int = 8) -> dict:
    ages = np.array([r.estimated_age for r in dataset.records])
    counts, edges = np.histogram(ages, bins=age_bins)
    params = np.stack([r.params for r in dataset.records])
    group_ranges = {}
    off = 0
    for name, size in dataset.profile.group_sizes():
        sl = params[:, off:off + size]
        group_ranges[name] = {
            "min": float(sl.min()) if size else 0.0,
            "max": float(sl.max()) if size else 0.0,
        }
        off += size
    sources: dict[str, int] = {}
    for r in dataset.records:
        sources[r.source] = sources.get(r.source, 0) + 1
    return {
        "count": len(dataset),
        "embed_dim": dataset.embed_dim,
        "params_dim": dataset.profile.total,
        "age_histogram": {
            "edges": [float(e) for e in edges],
            "counts": [int(c) for c in counts],
        },
        "sources": sources,
        "group_ranges": group_ranges,
    }


# ---------------------------------------------------------------------------
# Binary container: magic "T2F1", version u16, count u32, E u32, params_dim
# u32, profile (S, Ex, pose_joints, D u32 each), record block, index block
# (u64 offset per record), CRC32 footer. Values stored float64 so the round
# trip is lossless. Population-std convention is implied by the version.

_HEADER = struct.Struct("<HII4I")
_SOURCE_CODE = {tag: i for i, tag in enumerate(SOURCE_TAGS)}


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    parts = [DATASET_MAGIC,
             _HEADER.pack(DATASET_VERSION, len(dataset), dataset.embed_dim,
                          dataset.profile.n_shape, dataset.profile.n_expression,
                          dataset.profile.pose_joints, dataset.profile.n_detail)]
    offsets = []
    pos = 4 + _HEADER.size
    for rec in dataset.records:
        rid = rec.id.encode("utf-8")
        blob = (struct.pack("<H", len(rid)) + rid
                + struct.pack("<B", _SOURCE_CODE[rec.source])
                + struct.pack("<d", rec.estimated_age)
                + rec.embedding.astype("<f8").tobytes()
                + rec.params.astype("<f8").tobytes())
        offsets.append(pos)
        parts.append(blob)
        pos += len(blob)
    parts.append(np.asarray(offsets, dtype="<u8").tobytes())
    blob = b"".join(parts)
    crc = zlib.crc32(blob) & 0xFFFFFFFF
    Path(path).write_bytes(blob + struct.pack("<I", crc))


def read_dataset(path: str | Path) -> Dataset:
    buf = Path(path).read_bytes()
    if len(buf) < 4 + _HEADER.size + 4 or buf[:4] != DATASET_MAGIC:
        raise DatasetError("not a dataset file (bad magic)")
    stored_crc = struct.unpack("<I", buf[-4:])[0]
    if zlib.crc32(buf[:-4]) & 0xFFFFFFFF != stored_crc:
        raise DatasetError("dataset file checksum failure")
    version, count, embed_dim, s, ex, pj, d = _HEADER.unpack_from(buf, 4)
    if version != DATASET_VERSION:
        raise DatasetError(f"unsupported dataset version {version}")
    profile = DimsProfile(n_shape=s, n_expression=ex, pose_joints=pj, n_detail=d)
    params_dim = profile.total
    index = np.frombuffer(buf[-4 - 8 * count:-4], dtype="<u8") if count else np.zeros(0, dtype="<u8")
    records = []
    off = 4 + _HEADER.size
    for i in range(count):
        if off != int(index[i]):
            raise DatasetError(f"index offset mismatch at record {i}")
        (id_len,) = struct.unpack_from("<H", buf, off)
        off += 2
        rid = buf[off:off + id_len].decode("utf-8")
        off += id_len
        source = SOURCE_TAGS[buf[off]]
        off += 1
        (age,) = struct.unpack_from("<d", buf, off)
        off += 8
        emb = np.frombuffer(buf, dtype="<f8", count=embed_dim, offset=off).astype(np.float64)
        off += 8 * embed_dim
        par = np.frombuffer(buf, dtype="<f8", count=params_dim, offset=off).astype(np.float64)
        off += 8 * params_dim
        records.append(Record(rid, emb, par, age, source))
    if off != len(buf) - 4 - 8 * count:
        raise DatasetError("unexpected end of dataset file")
    return Dataset(records, embed_dim, profile)
