import numpy as np
import pytest

from sethash.core import HashCode, PointSet
from sethash.errors import DataFormatError, DegenerateDataError
from sethash.evaluate import (
    EvalConfig,
    MetricReport,
    average_precision,
    emit_curves,
    evaluate,
    lsh_baseline_train,
    parse_curves,
)
from sethash.index import RankedResult, build_index, rank

from conftest import make_cluster_dataset


def ranking_from(ids):
    return [RankedResult(id=i, distance=pos, rank=pos + 1) for pos, i in enumerate(ids)]


def ap_prefix_oracle(ranking, relevant):
    """Enumerate every prefix; sum precision at prefixes ending in a hit."""
    total = 0.0
    for k in range(1, len(ranking) + 1):
        if ranking[k - 1].id in relevant:
            prefix_hits = sum(1 for r in ranking[:k] if r.id in relevant)
            total += prefix_hits / k
    return total / len(relevant)


class TestAveragePrecision:
    def test_hand_value(self):
        # hits at ranks 1 and 3, two relevant: (1/1 + 2/3) / 2
        ranking = ranking_from(["r1", "x", "r2"])
        ap = average_precision(ranking, {"r1", "r2"})
        assert ap == pytest.approx(0.8333333333333333, abs=1e-12)

    def test_perfect_prefix(self):
        ranking = ranking_from(["a", "b", "c", "d"])
        assert average_precision(ranking, {"a", "b"}) == 1.0

    def test_nothing_retrieved(self):
        ranking = ranking_from(["x", "y"])
        assert average_precision(ranking, {"zzz"}) == 0.0

    def test_empty_relevant_rejected(self):
        with pytest.raises(DegenerateDataError):
            average_precision(ranking_from(["a"]), set())

    def test_matches_prefix_oracle(self, rng):
        for trial in range(80):
            n = int(rng.integers(1, 21))
            ids = [f"d{i}" for i in range(n)]
            rng.shuffle(ids)
            relevant = {i for i in ids if rng.random() < 0.4}
            if not relevant:
                relevant = {ids[0]}
            ranking = ranking_from(ids)
            got = average_precision(ranking, relevant)
            assert got == pytest.approx(ap_prefix_oracle(ranking, relevant), abs=1e-12)


def labeled_db(rng, n, nbits, n_classes):
    labels = [(i % n_classes) + 1 for i in range(n)]
    bits = rng.integers(0, 2, (n, nbits))
    codes = [HashCode.from_bits(row) for row in bits]
    return build_index(codes, [f"d{i}" for i in range(n)], labels), codes, labels


class TestEvaluate:
    def test_perfect_codes_map_one(self):
        # one unique code per class; queries identical to database codes
        patterns = {1: [0, 0, 0, 0], 2: [1, 1, 0, 0], 3: [1, 1, 1, 1]}
        codes, labels = [], []
        for label, bits in patterns.items():
            for _ in range(4):
                codes.append(HashCode.from_bits(bits))
                labels.append(label)
        index = build_index(codes, [f"d{i}" for i in range(len(codes))], labels)
        queries = [(HashCode.from_bits(bits), label) for label, bits in patterns.items()]
        report = evaluate(index, queries, EvalConfig(cutoffs=(4, 12), radii=(0,)))
        assert report.map == 1.0
        assert report.precision_at_radius[0][1] == 1.0

    def test_random_codes_map_near_class_prior(self, rng):
        # 10 balanced classes with random 24-bit codes: expected MAP is near
        # 0.1 (the class prior), Monte-Carlo averaged over 10 seeds.
        maps = []
        for seed in range(10):
            local = np.random.default_rng(seed)
            index, _, _ = labeled_db(local, 200, 24, 10)
            qbits = local.integers(0, 2, (20, 24))
            queries = [(HashCode.from_bits(b), (i % 10) + 1) for i, b in enumerate(qbits)]
            maps.append(evaluate(index, queries, EvalConfig(cutoffs=(10,), radii=())).map)
        assert np.mean(maps) == pytest.approx(0.1, abs=0.03)

    def test_counting_identity(self, rng):
        index, codes, labels = labeled_db(rng, 40, 16, 4)
        queries = [(codes[0], labels[0])]
        cutoffs = (1, 5, 17, 40, 100)
        report = evaluate(index, queries, EvalConfig(cutoffs=cutoffs, radii=()))
        ranking = rank(index, codes[0], len(index))
        relevant = {index.ids[i] for i in range(len(index)) if index.labels[i] == labels[0]}
        for (k, prec) in report.precision_at_k:
            got = sum(1 for r in ranking[: min(k, len(ranking))] if r.id in relevant)
            assert prec * k == pytest.approx(got, abs=1e-9)

    def test_recall_nondecreasing(self, rng):
        index, codes, labels = labeled_db(rng, 60, 12, 3)
        queries = [(codes[i], labels[i]) for i in range(5)]
        report = evaluate(index, queries, EvalConfig(cutoffs=(5, 10, 30, 60), radii=()))
        recalls = [v for _, v in report.recall_at_k]
        assert all(b >= a - 1e-12 for a, b in zip(recalls, recalls[1:]))
        assert recalls[-1] == pytest.approx(1.0, abs=1e-12)

    def test_empty_bucket_policies(self):
        db_code = HashCode.from_bits([0] * 16)
        far_query = HashCode.from_bits([1] * 16)
        index = build_index([db_code], ["only"], [1])
        zero = evaluate(index, [(far_query, 1)], EvalConfig(cutoffs=(1,), radii=(2,)))
        assert zero.precision_at_radius == ((2, 0.0),)
        skip = evaluate(
            index, [(far_query, 1)], EvalConfig(cutoffs=(1,), radii=(2,), empty_bucket_zero=False)
        )
        assert skip.precision_at_radius == ((2, 0.0),)
        assert skip.query_count == 1

    def test_queries_without_relevant_items_excluded(self, rng):
        index, codes, _ = labeled_db(rng, 10, 8, 2)
        report = evaluate(index, [(codes[0], 99)], EvalConfig(cutoffs=(5,), radii=()))
        assert report.query_count == 0 and report.map == 0.0

    def test_unlabeled_index_rejected(self, rng):
        bits = rng.integers(0, 2, (4, 8))
        index = build_index([HashCode.from_bits(b) for b in bits], [f"d{i}" for i in range(4)])
        with pytest.raises(DataFormatError):
            evaluate(index, [(HashCode.from_bits(bits[0]), 1)], EvalConfig())

    def test_map_invariant_under_id_relabeling(self, rng):
        n = 30
        labels = [(i % 3) + 1 for i in range(n)]
        bits = rng.integers(0, 2, (n, 12))
        codes = [HashCode.from_bits(b) for b in bits]
        idx_a = build_index(codes, [f"a{i:03d}" for i in range(n)], labels)
        idx_b = build_index(codes, [f"zz{i:03d}" for i in range(n)], labels)
        queries = [(codes[i], labels[i]) for i in range(6)]
        map_a = evaluate(idx_a, queries, EvalConfig(cutoffs=(10,), radii=())).map
        map_b = evaluate(idx_b, queries, EvalConfig(cutoffs=(10,), radii=())).map
        assert map_a == pytest.approx(map_b, abs=1e-12)


class TestLshBaseline:
    def test_identical_sets_identical_codes(self):
        data = make_cluster_dataset(2, 3, seed=1)
        model = lsh_baseline_train(data, 16, seed=0)
        twin = PointSet("twin", data.sets[0].points.copy())
        assert model.encode(data.sets[0]) == model.encode(twin)

    def test_permutation_invariance(self, rng):
        data = make_cluster_dataset(2, 2, points_per_set=9, seed=2)
        model = lsh_baseline_train(data, 12, seed=1)
        original = data.sets[0]
        shuffled = PointSet("shuffled", original.points[rng.permutation(original.n)])
        assert model.encode(original) == model.encode(shuffled)

    def test_antipodal_means_complementary(self, rng):
        data = make_cluster_dataset(2, 2, dim=8, seed=3)
        model = lsh_baseline_train(data, 32, seed=2)
        pts = rng.standard_normal((5, 8)) + 10.0
        pos = PointSet("pos", pts)
        neg = PointSet("neg", -pts)
        bits_pos = model.encode(pos).bits
        bits_neg = model.encode(neg).bits
        assert np.all(bits_pos != bits_neg)

    def test_deterministic(self):
        data = make_cluster_dataset(2, 2, seed=4)
        m1 = lsh_baseline_train(data, 8, seed=5)
        m2 = lsh_baseline_train(data, 8, seed=5)
        np.testing.assert_array_equal(m1.planes, m2.planes)


class TestCurves:
    def _report(self):
        return MetricReport(
            map=0.625,
            precision_at_k=((10, 0.5), (40, 0.25), (100, 0.125)),
            recall_at_k=((10, 0.2), (40, 0.6), (100, 1.0)),
            precision_at_radius=((2, 0.75),),
            query_count=7,
        )

    def test_row_counts(self, tmp_path):
        path = tmp_path / "report.csv"
        emit_curves(self._report(), path)
        lines = path.read_text().strip().splitlines()
        rows = [l.split(",") for l in lines[1:]]
        assert sum(1 for r in rows if r[0] == "precision_at_k") == 3
        assert sum(1 for r in rows if r[0] == "recall_at_k") == 3

    def test_roundtrip_exact(self, tmp_path):
        report = self._report()
        path = tmp_path / "report.csv"
        emit_curves(report, path)
        back = parse_curves(path)
        assert back.map == report.map
        assert back.precision_at_k == report.precision_at_k
        assert back.recall_at_k == report.recall_at_k
        assert back.precision_at_radius == report.precision_at_radius

    def test_empty_sections_omitted(self, tmp_path):
        report = MetricReport(map=0.5)
        path = tmp_path / "report.csv"
        emit_curves(report, path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 2  # header + map row

    def test_roundtrip_random_floats(self, tmp_path, rng):
        report = MetricReport(
            map=float(rng.random()),
            precision_at_k=tuple((int(k), float(rng.random())) for k in (3, 9, 27)),
            recall_at_k=tuple((int(k), float(rng.random())) for k in (3, 9, 27)),
            precision_at_radius=((2, float(rng.random())),),
        )
        path = tmp_path / "r.csv"
        emit_curves(report, path)
        back = parse_curves(path)
        assert back.map == report.map
        assert back.precision_at_k == report.precision_at_k
