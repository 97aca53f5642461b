"""Exact Hamming-space retrieval over packed binary codes.

Queries are answered by a full linear scan with hardware popcounts; results
are ordered by (distance, id) so rankings are stable and reproducible.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import HashCode
from .errors import DataFormatError, DimensionMismatchError, FormatVersionError, MissingFileError

INDEX_MAGIC = b"SSCD"
INDEX_VERSION = 1

__all__ = [
    "RankedResult",
    "CodeIndex",
    "build_index",
    "rank",
    "lookup_radius",
    "save_code_index",
    "load_code_index",
]


@dataclass(frozen=True)
class RankedResult:
    id: str
    distance: int
    rank: int


@dataclass(frozen=True)
class CodeIndex:
    """Immutable store of equal-length hash codes with ids and optional labels."""

    words: np.ndarray  # (n, words_per_code) uint64
    nbits: int
    ids: tuple[str, ...]
    labels: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        words = np.ascontiguousarray(np.asarray(self.words, dtype=np.uint64))
        if words.ndim != 2:
            raise DataFormatError("code index words must be 2-D")
        expected = (self.nbits + 63) // 64
        if words.shape != (len(self.ids), expected):
            raise DataFormatError(
                f"expected shape ({len(self.ids)}, {expected}) for {self.nbits}-bit codes, got {words.shape}"
            )
        if self.labels is not None and len(self.labels) != len(self.ids):
            raise DataFormatError("labels must align with ids")
        words.setflags(write=False)
        object.__setattr__(self, "words", words)
        object.__setattr__(self, "ids", tuple(self.ids))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(int(l) for l in self.labels))
        # cached for query-time tie-breaking; not a dataclass field
        object.__setattr__(self, "_ids_array", np.array(self.ids))

    def __len__(self) -> int:
        return len(self.ids)

    def code(self, i: int) -> HashCode:
        return HashCode(words=self.words[i].copy(), nbits=self.nbits)


def build_index(
    codes: Sequence[HashCode],
    ids: Sequence[str],
    labels: Sequence[int] | None = None,
) -> CodeIndex:
    """Index a batch of codes.  Ids must be unique, code lengths uniform."""
    if len(codes) != len(ids):
        raise DataFormatError(f"{len(codes)} codes but {len(ids)} ids")
    if len(set(ids)) != len(ids):
        raise DataFormatError("duplicate ids in index input")
    if codes:
        nbits = codes[0].nbits
        for c in codes:
            if c.nbits != nbits:
                raise DimensionMismatchError(f"mixed code lengths: {nbits} and {c.nbits}")
        words = np.stack([c.words for c in codes])
    else:
        nbits = 1
        words = np.zeros((0, 1), dtype=np.uint64)
    return CodeIndex(words=words, nbits=nbits, ids=tuple(ids), labels=tuple(labels) if labels is not None else None)


def _distances(index: CodeIndex, query: HashCode) -> np.ndarray:
    if len(index) and query.nbits != index.nbits:
        raise DimensionMismatchError(f"query has {query.nbits} bits, index stores {index.nbits}")
    if not len(index):
        return np.zeros(0, dtype=np.int64)
    return np.bitwise_count(index.words ^ query.words[None, :]).sum(axis=1).astype(np.int64)


def _ordered_prefix(index: CodeIndex, dists: np.ndarray, limit: int) -> np.ndarray:
    """Indices of the ``limit`` best entries under (distance, id) order.

    Entries beyond the limit-th distance cannot appear in the result, so only
    candidates at or below that distance enter the exact tie-break sort.
    """
    n = len(index)
    if limit <= 0 or n == 0:
        return np.zeros(0, dtype=np.int64)
    ids_arr: np.ndarray = index._ids_array  # type: ignore[attr-defined]
    if limit >= n:
        cand = np.arange(n)
    else:
        kth = np.partition(dists, limit - 1)[limit - 1]
        cand = np.flatnonzero(dists <= kth)
    order = np.lexsort((ids_arr[cand], dists[cand]))[:limit]
    return cand[order]


def rank(index: CodeIndex, query: HashCode, k: int) -> list[RankedResult]:
    """The k nearest codes by exact Hamming distance, ties broken by id."""
    if k < 0:
        raise DataFormatError(f"k must be >= 0, got {k}")
    dists = _distances(index, query)
    order = _ordered_prefix(index, dists, min(k, len(index)))
    return [
        RankedResult(id=index.ids[int(i)], distance=int(dists[int(i)]), rank=pos + 1)
        for pos, i in enumerate(order)
    ]


def lookup_radius(index: CodeIndex, query: HashCode, radius: int) -> list[RankedResult]:
    """Every code within the given Hamming radius, in ranking order."""
    if radius < 0:
        raise DataFormatError(f"radius must be >= 0, got {radius}")
    dists = _distances(index, query)
    within = np.flatnonzero(dists <= radius)
    ids_arr: np.ndarray = index._ids_array  # type: ignore[attr-defined]
    order = within[np.lexsort((ids_arr[within], dists[within]))]
    return [
        RankedResult(id=index.ids[int(i)], distance=int(dists[int(i)]), rank=pos + 1)
        for pos, i in enumerate(order)
    ]


def save_code_index(index: CodeIndex, path: str | Path) -> None:
    """Persist codes: header (bits, count) + packed rows + id/label table."""
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<I", INDEX_VERSION))
        fh.write(struct.pack("<III", index.nbits, len(index), 1 if index.labels is not None else 0))
        fh.write(index.words.astype("<u8").tobytes())
        table = json.dumps(
            {"ids": list(index.ids), "labels": list(index.labels) if index.labels is not None else None},
            sort_keys=True,
        ).encode("utf-8")
        fh.write(struct.pack("<Q", len(table)))
        fh.write(table)


def load_code_index(path: str | Path) -> CodeIndex:
    p = Path(path)
    if not p.is_file():
        raise MissingFileError(f"no such file: {p}")
    raw = p.read_bytes()
    if len(raw) < 20 or raw[:4] != INDEX_MAGIC:
        raise FormatVersionError(f"{p}: not a code index file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != INDEX_VERSION:
        raise FormatVersionError(f"{p}: unsupported code index version {version}")
    nbits, count, flags = struct.unpack_from("<III", raw, 8)
    wpc = (nbits + 63) // 64
    off = 20
    words = (
        np.frombuffer(raw, dtype="<u8", count=count * wpc, offset=off)
        .reshape(count, wpc)
        .astype(np.uint64)
    )
    off += count * wpc * 8
    (tlen,) = struct.unpack_from("<Q", raw, off)
    off += 8
    table = json.loads(raw[off : off + tlen])
    labels = table["labels"] if flags & 1 else None
    return CodeIndex(
        words=words,
        nbits=nbits,
        ids=tuple(table["ids"]),
        labels=tuple(labels) if labels is not None else None,
    )
