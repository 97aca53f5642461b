"""Core data model: point sets, datasets, hash codes, and deterministic splitting.

Sign convention used everywhere a sign is turned into a bit: values >= 0 map
to bit 1, values < 0 map to bit 0.  Zero is deliberately treated as positive
so that every voting and thresholding rule in the package is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DataFormatError, DegenerateDataError, DimensionMismatchError

__all__ = [
    "PointSet",
    "SetDataset",
    "TrainSplit",
    "HashCode",
    "split_qr",
    "hamming_distance",
    "signs_to_bits",
    "rng_for",
    "child_seed",
]

# Purpose indices for the seed-derivation scheme.  All randomness in the
# package flows from one user seed expanded as
# ``numpy.random.SeedSequence(seed, spawn_key=(purpose, *context))`` so any
# stage can be reproduced in isolation.
SEED_SPLIT = 0
SEED_POOL = 1
SEED_SWEEP = 2
SEED_SYNTH = 3
SEED_LSH = 4
SEED_BOOST = 5


def rng_for(seed: int, *path: int) -> np.random.Generator:
    """Derive a named random generator from the run seed.

    ``path`` is a tuple of small integers identifying the consumer, e.g.
    ``(SEED_BOOST, outer_iteration, side, bit)``.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(path)))


def child_seed(seed: int, *path: int) -> int:
    """Derive a plain integer seed for APIs that take one."""
    return int(np.random.SeedSequence(seed, spawn_key=tuple(path)).generate_state(1)[0])


def signs_to_bits(values: np.ndarray) -> np.ndarray:
    """Map real values to bits: >= 0 becomes 1, < 0 becomes 0."""
    return (np.asarray(values) >= 0).astype(np.uint8)


@dataclass(frozen=True)
class PointSet:
    """One set of d-dimensional feature vectors with an optional class label."""

    id: str
    points: np.ndarray
    label: int | None = None

    def __post_init__(self) -> None:
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.ndim != 2:
            raise DataFormatError(f"set {self.id!r}: points must be a 2-D array, got ndim={pts.ndim}")
        if pts.shape[0] < 1 or pts.shape[1] < 1:
            raise DataFormatError(f"set {self.id!r}: need at least one point and one dimension")
        if not np.all(np.isfinite(pts)):
            raise DataFormatError(f"set {self.id!r}: non-finite feature values")
        if self.label is not None and self.label < 1:
            raise DataFormatError(f"set {self.id!r}: labels must be positive integers, got {self.label}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.points.mean(axis=0)


@dataclass(frozen=True)
class SetDataset:
    """An ordered collection of point sets sharing one feature dimension."""

    sets: tuple[PointSet, ...]

    def __post_init__(self) -> None:
        sets = tuple(self.sets)
        if not sets:
            raise DegenerateDataError("dataset contains no sets")
        dims = {s.dim for s in sets}
        if len(dims) != 1:
            raise DimensionMismatchError(f"sets disagree on feature dimension: {sorted(dims)}")
        ids = [s.id for s in sets]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DataFormatError(f"duplicate set ids: {dupes[:5]}")
        object.__setattr__(self, "sets", sets)

    def __len__(self) -> int:
        return len(self.sets)

    def __iter__(self):
        return iter(self.sets)

    def __getitem__(self, i: int) -> PointSet:
        return self.sets[i]

    @property
    def dim(self) -> int:
        return self.sets[0].dim

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.sets)

    @property
    def labeled(self) -> bool:
        return all(s.label is not None for s in self.sets)

    @property
    def labels(self) -> tuple[int, ...]:
        if not self.labeled:
            raise DataFormatError("dataset is not fully labeled")
        return tuple(s.label for s in self.sets)  # type: ignore[misc]

    @property
    def label_count(self) -> int:
        return max(self.labels)

    def sorted_by_label_id(self) -> "SetDataset":
        """Return a copy ordered by (label, id); unlabeled sets sort by id."""
        key = (lambda s: (s.label, s.id)) if self.labeled else (lambda s: s.id)
        return SetDataset(tuple(sorted(self.sets, key=key)))

    def subset(self, ids: Iterable[str]) -> "SetDataset":
        wanted = set(ids)
        return SetDataset(tuple(s for s in self.sets if s.id in wanted))


@dataclass(frozen=True)
class TrainSplit:
    """Two disjoint halves of a training pool, conventionally named q and r."""

    q: SetDataset
    r: SetDataset

    def __post_init__(self) -> None:
        if self.q.dim != self.r.dim:
            raise DimensionMismatchError(f"q dim {self.q.dim} != r dim {self.r.dim}")
        overlap = set(self.q.ids) & set(self.r.ids)
        if overlap:
            raise DataFormatError(f"q and r share ids: {sorted(overlap)[:5]}")


def split_qr(
    data: SetDataset,
    fraction: float,
    seed: int,
    stratified: bool = True,
) -> TrainSplit:
    """Partition a dataset into q and r halves, deterministically for a seed.

    With ``stratified=True`` (default) every label lands on both sides when it
    has at least two members, and per-label allocations are balanced with a
    largest-remainder rule so the overall sizes track ``fraction`` closely
    (for fraction 0.5 the sides differ by at most one set).
    """
    if not 0.0 < fraction < 1.0:
        raise DataFormatError(f"fraction must be in (0, 1), got {fraction}")
    if len(data) < 2:
        raise DegenerateDataError("cannot split a dataset with fewer than 2 sets")

    rng = rng_for(seed, SEED_SPLIT)

    if stratified:
        if not data.labeled:
            raise DataFormatError("stratified split requires labels on every set")
        groups: dict[int, list[PointSet]] = {}
        for s in data.sets:
            groups.setdefault(s.label, []).append(s)  # type: ignore[arg-type]
        for label, members in groups.items():
            if len(members) < 2:
                raise DegenerateDataError(
                    f"label {label} has only {len(members)} set; stratified split needs >= 2 per label"
                )
        target_q = round(fraction * len(data))
        labels_sorted = sorted(groups)
        base: dict[int, int] = {}
        remainders: list[tuple[float, int]] = []
        for label in labels_sorted:
            ideal = fraction * len(groups[label])
            base[label] = int(np.floor(ideal))
            remainders.append((-(ideal - base[label]), label))
        # Hand out the leftover slots by largest fractional remainder.
        extra = target_q - sum(base.values())
        for _, label in sorted(remainders):
            if extra <= 0:
                break
            if base[label] + 1 <= len(groups[label]) - 1:
                base[label] += 1
                extra -= 1
        q_sets: list[PointSet] = []
        r_sets: list[PointSet] = []
        for label in labels_sorted:
            members = sorted(groups[label], key=lambda s: s.id)
            take = min(max(base[label], 1), len(members) - 1)
            order = rng.permutation(len(members))
            chosen = set(order[:take].tolist())
            for pos, s in enumerate(members):
                (q_sets if pos in chosen else r_sets).append(s)
    else:
        members = sorted(data.sets, key=lambda s: s.id)
        take = min(max(round(fraction * len(members)), 1), len(members) - 1)
        order = rng.permutation(len(members))
        chosen = set(order[:take].tolist())
        q_sets = [s for pos, s in enumerate(members) if pos in chosen]
        r_sets = [s for pos, s in enumerate(members) if pos not in chosen]

    q = SetDataset(tuple(q_sets)).sorted_by_label_id()
    r = SetDataset(tuple(r_sets)).sorted_by_label_id()
    return TrainSplit(q=q, r=r)


@dataclass(frozen=True)
class HashCode:
    """A fixed-length bit string packed into little-endian 64-bit words.

    Bits beyond ``nbits`` in the last word are always zero.
    """

    words: np.ndarray
    nbits: int

    def __post_init__(self) -> None:
        words = np.ascontiguousarray(np.asarray(self.words, dtype=np.uint64))
        if self.nbits < 1:
            raise DataFormatError("hash codes need at least one bit")
        expected = (self.nbits + 63) // 64
        if words.shape != (expected,):
            raise DataFormatError(f"expected {expected} words for {self.nbits} bits, got shape {words.shape}")
        tail = self.nbits % 64
        if tail and (int(words[-1]) >> tail) != 0:
            raise DataFormatError("padding bits beyond the code length must be zero")
        words.setflags(write=False)
        object.__setattr__(self, "words", words)

    @classmethod
    def from_bits(cls, bits: Sequence[int] | np.ndarray) -> "HashCode":
        arr = np.asarray(bits, dtype=np.uint8)
        if arr.ndim != 1 or arr.size < 1:
            raise DataFormatError("bits must be a non-empty 1-D sequence")
        if not np.all((arr == 0) | (arr == 1)):
            raise DataFormatError("bits must be 0 or 1")
        packed = np.packbits(arr, bitorder="little")
        nwords = (arr.size + 63) // 64
        buf = np.zeros(nwords * 8, dtype=np.uint8)
        buf[: packed.size] = packed
        return cls(words=buf.view("<u8").astype(np.uint64), nbits=arr.size)

    @classmethod
    def from_signs(cls, values: np.ndarray) -> "HashCode":
        return cls.from_bits(signs_to_bits(values))

    @property
    def bits(self) -> np.ndarray:
        raw = self.words.astype("<u8").tobytes()
        return np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")[: self.nbits]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HashCode):
            return NotImplemented
        return self.nbits == other.nbits and bool(np.array_equal(self.words, other.words))

    def __hash__(self) -> int:
        return hash((self.nbits, self.words.tobytes()))


def hamming_distance(a: HashCode, b: HashCode) -> int:
    """Number of differing bits between two codes of equal length."""
    if a.nbits != b.nbits:
        raise DimensionMismatchError(f"code lengths differ: {a.nbits} vs {b.nbits}")
    return int(np.bitwise_count(a.words ^ b.words).sum())
