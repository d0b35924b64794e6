"""Dataset and embedding file formats.

Binary layout (little-endian throughout):

    bytes 0..3    magic "MMR1"
    bytes 4..27   six uint32 fields: version (1), n_samples, d_audio,
                  d_video, n_classes, flags (bit 0 = multi-label)
    then per sample: d_audio float32 (audio), d_video float32 (video),
    n_classes float32 (label vector)

A plain-text CSV with header audio_0..,video_0..,label_0.. is accepted
as an ingestion alternative. Embedding dumps for external visualization
are CSV as well.
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..models import Dataset, MultiModalSample

MAGIC = b"MMR1"
VERSION = 1
_HEADER = struct.Struct("<6I")
HEADER_SIZE = 4 + _HEADER.size


def save_dataset(dataset: Dataset, path) -> None:
    xa, xv, y = dataset.as_arrays()
    flags = 1 if dataset.multi_label else 0
    payload = np.concatenate(
        [xa.astype("<f4"), xv.astype("<f4"), y.astype("<f4")], axis=1
    ).tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(
            _HEADER.pack(
                VERSION, len(dataset), dataset.d_audio, dataset.d_video,
                dataset.n_classes, flags,
            )
        )
        fh.write(payload)


def load_dataset(path) -> Dataset:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise FormatError(f"bad dataset magic {blob[:4]!r} at byte 0")
    if len(blob) < HEADER_SIZE:
        raise FormatError(f"dataset truncated inside header at byte {len(blob)}")
    version, n, d_a, d_v, k, flags = _HEADER.unpack(blob[4:HEADER_SIZE])
    if version != VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    row_floats = d_a + d_v + k
    expected = HEADER_SIZE + 4 * row_floats * n
    if len(blob) != expected:
        raise FormatError(
            f"dataset payload ends at byte {len(blob)}, expected {expected} "
            f"({n} samples of {row_floats} float32 each after byte {HEADER_SIZE})"
        )
    rows = np.frombuffer(blob, dtype="<f4", offset=HEADER_SIZE).reshape(n, row_floats)
    rows = rows.astype(np.float64)
    samples = [
        MultiModalSample(r[:d_a], r[d_a : d_a + d_v], r[d_a + d_v :]) for r in rows
    ]
    return Dataset(
        samples=samples, d_audio=d_a, d_video=d_v, n_classes=k,
        multi_label=bool(flags & 1),
    )


def _csv_header(d_a: int, d_v: int, k: int) -> list[str]:
    return (
        [f"audio_{i}" for i in range(d_a)]
        + [f"video_{i}" for i in range(d_v)]
        + [f"label_{i}" for i in range(k)]
    )


def save_dataset_csv(dataset: Dataset, path) -> None:
    xa, xv, y = dataset.as_arrays()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_csv_header(dataset.d_audio, dataset.d_video, dataset.n_classes))
        for row in np.concatenate([xa, xv, y], axis=1):
            writer.writerow([repr(float(v)) for v in row])


def load_dataset_csv(path, multi_label: bool = False) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("CSV dataset has no header row") from None
        d_a = sum(1 for h in header if h.startswith("audio_"))
        d_v = sum(1 for h in header if h.startswith("video_"))
        k = sum(1 for h in header if h.startswith("label_"))
        if d_a == 0 or d_v == 0 or k == 0:
            raise FormatError(
                "CSV header must contain audio_*, video_* and label_* columns"
            )
        if len(header) != d_a + d_v + k:
            raise FormatError(f"CSV header has {len(header)} columns, "
                              f"expected {d_a + d_v + k} recognized ones")
        samples = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"CSV line {line_no} has {len(row)} fields")
            try:
                vals = np.array([float(v) for v in row], dtype=np.float64)
            except ValueError as exc:
                raise FormatError(f"CSV line {line_no}: {exc}") from None
            samples.append(
                MultiModalSample(vals[:d_a], vals[d_a : d_a + d_v], vals[d_a + d_v :])
            )
    return Dataset(samples=samples, d_audio=d_a, d_video=d_v, n_classes=k,
                   multi_label=multi_label)


def save_embeddings_csv(path, embeddings: np.ndarray, labels: np.ndarray,
                        splits: list[str] | None = None) -> None:
    emb = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    y = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    if splits is None:
        splits = [""] * emb.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["sample_index", "split"]
            + [f"label_{i}" for i in range(y.shape[1])]
            + [f"b_{i}" for i in range(emb.shape[1])]
        )
        for i in range(emb.shape[0]):
            writer.writerow(
                [i, splits[i]]
                + [repr(float(v)) for v in y[i]]
                + [repr(float(v)) for v in emb[i]]
            )


def load_embeddings_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """(embeddings, labels) back from a dump written by save_embeddings_csv."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("embeddings CSV has no header row") from None
        label_cols = [i for i, h in enumerate(header) if h.startswith("label_")]
        emb_cols = [i for i, h in enumerate(header) if h.startswith("b_")]
        if not label_cols or not emb_cols:
            raise FormatError("embeddings CSV must contain label_* and b_* columns")
        labels, rows = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                labels.append([float(row[i]) for i in label_cols])
                rows.append([float(row[i]) for i in emb_cols])
            except (ValueError, IndexError) as exc:
                raise FormatError(f"embeddings CSV line {line_no}: {exc}") from None
    return np.array(rows, dtype=np.float64), np.array(labels, dtype=np.float64)
