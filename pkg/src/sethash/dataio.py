"""Dataset files: a versioned binary format plus a CSV ingestion path.

Binary layout (all integers little-endian):

    magic   4 bytes  b"SSET"
    version u32      currently 1
    d       u32      feature dimension
    N       u32      number of sets
    flags   u32      bit 0: labels present
    then per set:
        id_len  u16, id bytes (utf-8)
        label   i32  (-1 sentinel when unlabeled)
        n       u32  number of points
        points  n*d float32 values, row-major

CSV ingestion accepts columns ``set_id,label,f1..fd`` with one row per point;
an empty label field means unlabeled.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .core import PointSet, SetDataset
from .errors import DataFormatError, FormatVersionError, MissingFileError

MAGIC = b"SSET"
VERSION = 1
LABEL_SENTINEL = -1

__all__ = ["save_dataset", "load_dataset", "load_dataset_csv", "read_path"]


def read_path(path: str | Path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise MissingFileError(f"no such file: {p}")
    return p


def save_dataset(data: SetDataset, path: str | Path) -> None:
    """Write a dataset in the binary format. Deterministic byte-for-byte."""
    labeled = data.labeled
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIII", VERSION, data.dim, len(data), 1 if labeled else 0))
        for s in data.sets:
            ident = s.id.encode("utf-8")
            if len(ident) > 0xFFFF:
                raise DataFormatError(f"set id too long: {s.id[:32]}...")
            fh.write(struct.pack("<H", len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<i", s.label if s.label is not None else LABEL_SENTINEL))
            fh.write(struct.pack("<I", s.n))
            fh.write(s.points.astype("<f4").tobytes())


def load_dataset(path: str | Path) -> SetDataset:
    """Read a dataset written by :func:`save_dataset`."""
    p = read_path(path)
    raw = p.read_bytes()
    if len(raw) < 20 or raw[:4] != MAGIC:
        raise FormatVersionError(f"{p}: not a dataset file (bad magic)")
    version, dim, count, flags = struct.unpack_from("<IIII", raw, 4)
    if version != VERSION:
        raise FormatVersionError(f"{p}: unsupported dataset version {version} (expected {VERSION})")
    labeled = bool(flags & 1)
    off = 20
    sets: list[PointSet] = []
    try:
        for _ in range(count):
            (id_len,) = struct.unpack_from("<H", raw, off)
            off += 2
            ident = raw[off : off + id_len].decode("utf-8")
            off += id_len
            (label,) = struct.unpack_from("<i", raw, off)
            off += 4
            (n,) = struct.unpack_from("<I", raw, off)
            off += 4
            nbytes = n * dim * 4
            pts = np.frombuffer(raw, dtype="<f4", count=n * dim, offset=off).astype(np.float64)
            off += nbytes
            sets.append(
                PointSet(
                    id=ident,
                    points=pts.reshape(n, dim),
                    label=None if (not labeled or label == LABEL_SENTINEL) else int(label),
                )
            )
    except (struct.error, ValueError) as exc:
        raise DataFormatError(f"{p}: truncated or corrupt dataset file ({exc})") from exc
    if off != len(raw):
        raise DataFormatError(f"{p}: {len(raw) - off} trailing bytes after the last record")
    return SetDataset(tuple(sets))


def load_dataset_csv(path: str | Path) -> SetDataset:
    """Ingest ``set_id,label,f1..fd`` rows, one point per row.

    Points are grouped by ``set_id`` in first-appearance order; the label must
    be identical for all rows of one set.
    """
    p = read_path(path)
    with open(p, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{p}: empty CSV")
        header = [h.strip() for h in header]
        if len(header) < 3 or header[0] != "set_id" or header[1] != "label":
            raise DataFormatError(f"{p}: expected header set_id,label,f1..fd, got {header[:3]}")
        dim = len(header) - 2
        order: list[str] = []
        rows: dict[str, list[list[float]]] = {}
        labels: dict[str, int | None] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 2:
                raise DataFormatError(f"{p}:{lineno}: expected {dim + 2} columns, got {len(row)}")
            sid = row[0].strip()
            label_text = row[1].strip()
            label = int(label_text) if label_text else None
            try:
                values = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise DataFormatError(f"{p}:{lineno}: bad feature value ({exc})") from exc
            if sid not in rows:
                order.append(sid)
                rows[sid] = []
                labels[sid] = label
            elif labels[sid] != label:
                raise DataFormatError(f"{p}:{lineno}: set {sid!r} has conflicting labels")
            rows[sid].append(values)
    sets = tuple(
        PointSet(id=sid, points=np.array(rows[sid], dtype=np.float64), label=labels[sid])
        for sid in order
    )
    return SetDataset(sets)
