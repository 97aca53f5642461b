import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sethash.core import HashCode
from sethash.errors import DataFormatError, DimensionMismatchError, FormatVersionError
from sethash.index import (
    build_index,
    load_code_index,
    lookup_radius,
    rank,
    save_code_index,
)


def random_db(rng, n, nbits, labeled=False):
    bits = rng.integers(0, 2, (n, nbits))
    codes = [HashCode.from_bits(row) for row in bits]
    ids = [f"item{i:04d}" for i in range(n)]
    labels = rng.integers(1, 5, n).tolist() if labeled else None
    return build_index(codes, ids, labels), bits, ids


def brute_rank(bits, ids, qbits, k):
    """Unpacked-bit linear scan, sorted by (distance, id)."""
    rows = sorted(
        ((int(np.sum(row != qbits)), ids[i]) for i, row in enumerate(bits)),
        key=lambda t: (t[0], t[1]),
    )
    return rows[:k]


class TestBuildIndex:
    def test_empty_index_valid(self):
        index = build_index([], [])
        assert len(index) == 0
        assert rank(index, HashCode.from_bits([1, 0]), 5) == []
        assert lookup_radius(index, HashCode.from_bits([1]), 1) == []

    def test_1577_entries(self, rng):
        index, _, _ = random_db(rng, 1577, 24)
        assert len(index) == 1577

    def test_duplicate_ids_rejected(self, rng):
        codes = [HashCode.from_bits([1, 0]), HashCode.from_bits([0, 1])]
        with pytest.raises(DataFormatError):
            build_index(codes, ["same", "same"])

    def test_mixed_lengths_rejected(self):
        with pytest.raises(DimensionMismatchError):
            build_index([HashCode.from_bits([1]), HashCode.from_bits([1, 0])], ["a", "b"])


class TestRank:
    def test_exact_match_first(self, rng):
        index, bits, ids = random_db(rng, 30, 16)
        query = HashCode.from_bits(bits[7])
        results = rank(index, query, 3)
        assert results[0].distance == 0
        assert any(r.id == ids[7] for r in results if r.distance == 0)

    def test_k_beyond_size_returns_all_sorted(self, rng):
        index, bits, ids = random_db(rng, 12, 8)
        results = rank(index, HashCode.from_bits(bits[0]), 100)
        assert len(results) == 12
        dists = [r.distance for r in results]
        assert dists == sorted(dists)

    def test_large_k_cap(self, rng):
        index, bits, _ = random_db(rng, 40, 8)
        results = rank(index, HashCode.from_bits(bits[0]), 1600)
        assert len(results) == 40

    def test_matches_brute_force(self, rng):
        for trial in range(60):
            n = int(rng.integers(1, 50))
            nbits = int(rng.integers(1, 65))
            index, bits, ids = random_db(rng, n, nbits)
            qbits = rng.integers(0, 2, nbits)
            k = int(rng.integers(1, n + 3))
            got = [(r.distance, r.id) for r in rank(index, HashCode.from_bits(qbits), k)]
            assert got == brute_rank(bits, ids, qbits, k)

    def test_rank_mismatched_length_rejected(self, rng):
        index, _, _ = random_db(rng, 4, 8)
        with pytest.raises(DimensionMismatchError):
            rank(index, HashCode.from_bits([1, 0]), 2)

    def test_deterministic_tie_break(self):
        codes = [HashCode.from_bits([0, 0]), HashCode.from_bits([0, 0]), HashCode.from_bits([1, 1])]
        index = build_index(codes, ["b", "a", "c"])
        results = rank(index, HashCode.from_bits([0, 0]), 3)
        assert [r.id for r in results] == ["a", "b", "c"]
        assert [r.rank for r in results] == [1, 2, 3]


class TestLookupRadius:
    def test_radius_full_length_returns_everything(self, rng):
        index, _, _ = random_db(rng, 25, 10)
        results = lookup_radius(index, HashCode.from_bits(rng.integers(0, 2, 10)), 10)
        assert len(results) == 25

    def test_radius_zero_exact_only(self, rng):
        index, bits, ids = random_db(rng, 25, 6)
        query = HashCode.from_bits(bits[3])
        results = lookup_radius(index, query, 0)
        expected = {ids[i] for i, row in enumerate(bits) if np.array_equal(row, bits[3])}
        assert {r.id for r in results} == expected

    def test_matches_brute_force(self, rng):
        for trial in range(40):
            n = int(rng.integers(1, 40))
            nbits = int(rng.integers(1, 33))
            index, bits, ids = random_db(rng, n, nbits)
            qbits = rng.integers(0, 2, nbits)
            radius = int(rng.integers(0, nbits + 1))
            got = {r.id for r in lookup_radius(index, HashCode.from_bits(qbits), radius)}
            expected = {ids[i] for i, row in enumerate(bits) if np.sum(row != qbits) <= radius}
            assert got == expected

    @given(st.integers(0, 2**32 - 1), st.integers(1, 32))
    @settings(max_examples=40, deadline=None)
    def test_radius_nesting(self, seed, nbits):
        rng = np.random.default_rng(seed)
        index, bits, _ = random_db(rng, 20, nbits)
        query = HashCode.from_bits(rng.integers(0, 2, nbits))
        radius = int(rng.integers(0, nbits))
        inner = {r.id for r in lookup_radius(index, query, radius)}
        outer = {r.id for r in lookup_radius(index, query, radius + 1)}
        assert inner <= outer

    def test_rank_and_radius_agree_at_extremes(self, rng):
        index, bits, _ = random_db(rng, 30, 12)
        query = HashCode.from_bits(rng.integers(0, 2, 12))
        via_rank = {r.id for r in rank(index, query, len(index))}
        via_radius = {r.id for r in lookup_radius(index, query, 12)}
        assert via_rank == via_radius


class TestPersistence:
    def test_roundtrip(self, tmp_path, rng):
        index, _, _ = random_db(rng, 17, 24, labeled=True)
        path = tmp_path / "codes.bin"
        save_code_index(index, path)
        loaded = load_code_index(path)
        assert loaded.ids == index.ids
        assert loaded.labels == index.labels
        assert loaded.nbits == index.nbits
        np.testing.assert_array_equal(loaded.words, index.words)

    def test_roundtrip_unlabeled(self, tmp_path, rng):
        index, _, _ = random_db(rng, 5, 7)
        path = tmp_path / "codes.bin"
        save_code_index(index, path)
        assert load_code_index(path).labels is None

    def test_version_mismatch(self, tmp_path, rng):
        index, _, _ = random_db(rng, 3, 8)
        path = tmp_path / "codes.bin"
        save_code_index(index, path)
        raw = bytearray(path.read_bytes())
        raw[4] = 9
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatVersionError):
            load_code_index(path)

    def test_deterministic_bytes(self, tmp_path, rng):
        index, _, _ = random_db(rng, 9, 16, labeled=True)
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_code_index(index, p1)
        save_code_index(index, p2)
        assert p1.read_bytes() == p2.read_bytes()
