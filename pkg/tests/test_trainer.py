import itertools

import numpy as np
import pytest

from sethash.core import SetDataset, TrainSplit, rng_for, split_qr
from sethash.errors import DataFormatError, DegenerateDataError, DimensionMismatchError, FormatVersionError
from sethash.trainer import (
    TrainerConfig,
    cross_train,
    label_pairing,
    load_model,
    objective_dc,
    objective_ds,
    optimize_codes_ds,
    optimize_codes_joint,
    save_model,
    train,
)

from conftest import make_cluster_dataset, two_cluster_kernels


def oracle_ds(codes, labels, nu3):
    """Independent pairwise double loop."""
    total = 0.0
    n = codes.shape[1]
    for m in range(n):
        for k in range(m + 1, n):
            d = int(np.sum(codes[:, m] != codes[:, k]))
            total += d if labels[m] == labels[k] else -nu3 * d
    return total


def oracle_dc(hq, hr, lq, lr, nu4):
    total = 0.0
    for m in range(hq.shape[1]):
        for k in range(hr.shape[1]):
            d = int(np.sum(hq[:, m] != hr[:, k]))
            total += d if lq[m] == lr[k] else -nu4 * d
    return total


class TestObjectives:
    def test_ds_identical_codes(self):
        codes = np.ones((3, 4), dtype=np.uint8)
        assert objective_ds(codes, np.array([1, 1, 2, 2]), nu3=1.0) == 0.0

    def test_ds_two_class_hand_value(self):
        # Per-class identical codes, classes differing in both bits: intra
        # distances 0, four inter pairs of distance 2 -> -8 at nu3=1.
        codes = np.array([[1, 1, 0, 0], [0, 0, 1, 1]], dtype=np.uint8)
        labels = np.array([1, 1, 2, 2])
        assert objective_ds(codes, labels, nu3=1.0) == -8.0

    def test_ds_flip_increasing_intra_increases(self):
        codes = np.array([[1, 1, 0, 0], [0, 0, 1, 1]], dtype=np.uint8)
        labels = np.array([1, 1, 2, 2])
        before = objective_ds(codes, labels, nu3=0.0)
        flipped = codes.copy()
        flipped[0, 0] ^= 1  # only intra distances change at nu3=0
        assert objective_ds(flipped, labels, nu3=0.0) > before

    def test_ds_matches_oracle(self, rng):
        for _ in range(20):
            r, n = int(rng.integers(1, 6)), int(rng.integers(2, 9))
            codes = rng.integers(0, 2, (r, n)).astype(np.uint8)
            labels = rng.integers(1, 4, n)
            nu3 = float(rng.uniform(0, 2))
            assert objective_ds(codes, labels, nu3) == pytest.approx(oracle_ds(codes, labels, nu3), abs=1e-9)

    def test_dc_matched_codes_zero_intra(self):
        hq = np.array([[1, 0], [0, 1]], dtype=np.uint8)
        labels = np.array([1, 2])
        assert objective_dc(hq, hq.copy(), labels, labels, nu4=0.0) == 0.0

    def test_dc_single_pair_hand_value(self):
        hq = np.array([[1], [1], [1], [0], [0], [0], [0], [0]], dtype=np.uint8)
        hr = np.array([[0], [0], [0], [0], [0], [0], [0], [0]], dtype=np.uint8)
        # codes differ in 3 of 8 bits and the labels differ -> D_c = -3
        assert objective_dc(hq, hr, np.array([1]), np.array([2]), nu4=1.0) == -3.0

    def test_dc_nu4_zero_is_pure_intra(self, rng):
        hq = rng.integers(0, 2, (4, 3)).astype(np.uint8)
        hr = rng.integers(0, 2, (4, 5)).astype(np.uint8)
        lq = rng.integers(1, 3, 3)
        lr = rng.integers(1, 3, 5)
        got = objective_dc(hq, hr, lq, lr, nu4=0.0)
        intra_only = sum(
            int(np.sum(hq[:, m] != hr[:, k]))
            for m in range(3)
            for k in range(5)
            if lq[m] == lr[k]
        )
        assert got == intra_only

    def test_dc_matches_oracle(self, rng):
        for _ in range(10):
            r = int(rng.integers(1, 5))
            hq = rng.integers(0, 2, (r, 4)).astype(np.uint8)
            hr = rng.integers(0, 2, (r, 6)).astype(np.uint8)
            lq = rng.integers(1, 4, 4)
            lr = rng.integers(1, 4, 6)
            nu4 = float(rng.uniform(0, 2))
            assert objective_dc(hq, hr, lq, lr, nu4) == pytest.approx(oracle_dc(hq, hr, lq, lr, nu4), abs=1e-9)


class TestOptimizeCodes:
    TOY_LABELS = np.array([1, 1, 2, 2])

    def toy_global_min(self):
        best = None
        for bits in itertools.product([0, 1], repeat=8):
            h = np.array(bits, dtype=np.uint8).reshape(2, 4)
            v = oracle_ds(h, self.TOY_LABELS, 1.0)
            best = v if best is None else min(best, v)
        return best

    def test_local_optimum_is_fixed_point(self):
        codes = np.array([[1, 1, 0, 0], [0, 0, 1, 1]], dtype=np.uint8)
        out = optimize_codes_ds(codes, self.TOY_LABELS, nu3=1.0, balance_tol=0.5, rng=rng_for(0, 2))
        np.testing.assert_array_equal(out, codes)

    def test_toy_reaches_exhaustive_optimum_from_every_init(self):
        target = self.toy_global_min()
        assert target == -8.0
        for bits in itertools.product([0, 1], repeat=8):
            init = np.array(bits, dtype=np.uint8).reshape(2, 4)
            out = optimize_codes_ds(init, self.TOY_LABELS, nu3=1.0, balance_tol=0.5, rng=rng_for(0, 2))
            assert objective_ds(out, self.TOY_LABELS, 1.0) == target

    def test_descent_trace_strictly_decreasing(self, rng):
        for trial in range(10):
            codes = rng.integers(0, 2, (6, 12)).astype(np.uint8)
            labels = rng.integers(1, 4, 12)
            out, trace = optimize_codes_ds(
                codes, labels, nu3=0.5, balance_tol=0.2, rng=rng_for(trial, 2), track=True
            )
            seq = trace.values
            assert all(b < a for a, b in zip(seq, seq[1:]))
            if seq:  # incremental bookkeeping agrees with a fresh evaluation
                assert objective_ds(out, labels, 0.5) == pytest.approx(seq[-1], abs=1e-6)

    def test_balance_enforced_on_random_instances(self, rng):
        tol = 0.2
        for trial in range(10):
            bits, n = 8, 20
            codes = rng.integers(0, 2, (bits, n)).astype(np.uint8)
            labels = rng.integers(1, 4, n)
            out = optimize_codes_ds(codes, labels, nu3=0.3, balance_tol=tol, rng=rng_for(trial, 3))
            row_ones = out.sum(axis=1)
            col_ones = out.sum(axis=0)
            assert np.all(row_ones >= (0.5 - tol) * n) and np.all(row_ones <= (0.5 + tol) * n)
            assert np.all(col_ones >= (0.5 - tol) * bits) and np.all(col_ones <= (0.5 + tol) * bits)

    def test_joint_refinement_descends(self, rng):
        for trial in range(5):
            hq = rng.integers(0, 2, (4, 8)).astype(np.uint8)
            hr = rng.integers(0, 2, (4, 8)).astype(np.uint8)
            lq = rng.integers(1, 3, 8)
            lr = rng.integers(1, 3, 8)
            out_q, out_r, trace = optimize_codes_joint(
                hq, hr, lq, lr,
                alpha=1.0, beta=1.0, nu3_q=0.5, nu3_r=0.5, nu4=0.5,
                balance_tol=0.5, rng=rng_for(trial, 4), track=True,
            )
            seq = trace.values
            assert all(b < a for a, b in zip(seq, seq[1:]))
            def joint(a, b):
                return (
                    objective_ds(a, lq, 0.5) + objective_ds(b, lr, 0.5)
                    + objective_dc(a, b, lq, lr, 0.5)
                )
            if seq:
                assert joint(out_q, out_r) == pytest.approx(seq[-1], abs=1e-6)
            assert joint(out_q, out_r) <= joint(hq, hr) + 1e-9


class TestLabelPairing:
    def test_balanced_pairs_within_label(self):
        lq = np.array([1, 1, 2, 2])
        lr = np.array([1, 1, 2, 2])
        np.testing.assert_array_equal(label_pairing(lq, lr), [0, 1, 2, 3])

    def test_unbalanced_cycles_within_label(self):
        lq = np.array([1, 1, 1, 2])
        lr = np.array([1, 2, 2])
        pairing = label_pairing(lq, lr)
        np.testing.assert_array_equal(pairing, [0, 0, 0, 1])

    def test_missing_label_falls_back(self):
        lq = np.array([3, 3])
        lr = np.array([1, 2])
        pairing = label_pairing(lq, lr)
        assert set(pairing) <= {0, 1}


class TestCrossTrain:
    def _cfg(self, **kw):
        defaults = dict(bits=2, rounds=3, seed=0, max_outer=1)
        defaults.update(kw)
        return TrainerConfig(**defaults)

    def test_constant_bit_gives_constant_split(self):
        tk, labels = two_cluster_kernels(3, 3)
        codes_q = np.array([[1, 1, 1, 0, 0, 0], [1, 1, 1, 1, 1, 1]], dtype=np.uint8)
        codes_r = codes_q.copy()
        pairing = np.arange(6)
        splits_q, _, _, _, info = cross_train(
            codes_q, codes_r, tk, tk, self._cfg(), pairing, pairing
        )
        assert (0, 1) in info["degenerate"]
        margins = [1 if v >= 0 else 0 for v in range(1)]
        # every evaluation of the degenerate split returns bit 1
        from sethash.boosting import eval_split_on_matrix

        out = eval_split_on_matrix(splits_q[1], tk)
        assert np.all(out == 1)

    def test_cluster_indicator_codes_reproduced(self):
        tk, labels = two_cluster_kernels(4, 4)
        bit = ((labels + 1) // 2).astype(np.uint8)  # 1 for the positive cluster
        codes = np.stack([bit, 1 - bit])
        pairing = np.arange(8)
        splits_q, splits_r, new_q, new_r, _ = cross_train(
            codes, codes, tk, tk, self._cfg(), pairing, pairing
        )
        np.testing.assert_array_equal(new_q, codes)
        np.testing.assert_array_equal(new_r, codes)

    def test_minimal_configuration_counts(self):
        tk, labels = two_cluster_kernels(2, 2)
        codes = np.array([[1, 1, 0, 0]], dtype=np.uint8)
        pairing = np.arange(4)
        splits_q, splits_r, _, _, _ = cross_train(
            codes, codes, tk, tk, self._cfg(bits=1, rounds=1), pairing, pairing
        )
        assert len(splits_q) == 1 and len(splits_r) == 1
        assert len(splits_q[0].learners) == 1 and len(splits_r[0].learners) == 1


def small_split(seed=0, classes=3, per_class=8, dim=6):
    data = make_cluster_dataset(classes, per_class, points_per_set=8, dim=dim, spread=0.5, seed=seed)
    return split_qr(data, 0.5, seed=seed)


class TestTrain:
    def test_deterministic_models(self, tmp_path):
        split = small_split(seed=1)
        cfg = TrainerConfig(bits=4, rounds=4, seed=3, max_outer=3)
        m1 = train(split, cfg)
        m2 = train(split, cfg)
        p1, p2 = tmp_path / "a.ish", tmp_path / "b.ish"
        save_model(m1, p1)
        save_model(m2, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_max_outer_one_still_emits(self):
        split = small_split(seed=2)
        model = train(split, TrainerConfig(bits=3, rounds=2, seed=0, max_outer=1))
        assert model.outer_iterations == 1
        assert len(model.splits_q) == 3 and len(model.splits_r) == 3

    def test_intra_closer_than_inter_on_held_out(self):
        # Well-separated classes: encodings of fresh sets must place same-class
        # pairs nearer in Hamming space than cross-class pairs on average.
        data = make_cluster_dataset(2, 14, points_per_set=10, dim=8, spread=0.5, seed=7)
        held_out = SetDataset(data.sets[10:14] + data.sets[24:28])
        pool = SetDataset(data.sets[:10] + data.sets[14:24])
        split = split_qr(pool, 0.5, seed=7)
        model = train(split, TrainerConfig(bits=8, rounds=5, seed=7, max_outer=5))
        codes = [model.encode(s, side="query") for s in held_out.sets]
        labels = [s.label for s in held_out.sets]
        intra, inter = [], []
        from sethash.core import hamming_distance

        for i in range(len(codes)):
            for j in range(i + 1, len(codes)):
                d = hamming_distance(codes[i], codes[j])
                (intra if labels[i] == labels[j] else inter).append(d)
        assert np.mean(intra) < np.mean(inter)

    def test_encode_reproduces_training_codes(self):
        split = small_split(seed=4)
        model = train(split, TrainerConfig(bits=4, rounds=3, seed=1, max_outer=2))
        q_sorted = split.q.sorted_by_label_id()
        r_sorted = split.r.sorted_by_label_id()
        for i, s in enumerate(q_sorted.sets):
            np.testing.assert_array_equal(model.encode(s, side="query").bits, model.train_codes_q[:, i])
        for i, s in enumerate(r_sorted.sets):
            np.testing.assert_array_equal(model.encode(s, side="database").bits, model.train_codes_r[:, i])

    def test_save_load_roundtrip_encodes_identically(self, tmp_path):
        split = small_split(seed=5)
        model = train(split, TrainerConfig(bits=4, rounds=3, seed=2, max_outer=2))
        path = tmp_path / "model.ish"
        save_model(model, path)
        loaded = load_model(path)
        probe = split.q.sets[0]
        assert loaded.encode(probe, side="query") == model.encode(probe, side="query")
        assert loaded.params == model.params
        assert loaded.config == model.config

    def test_model_version_mismatch(self, tmp_path):
        split = small_split(seed=6)
        model = train(split, TrainerConfig(bits=2, rounds=2, seed=0, max_outer=1))
        path = tmp_path / "model.ish"
        save_model(model, path)
        raw = bytearray(path.read_bytes())
        raw[4] = 42
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatVersionError):
            load_model(path)

    def test_unlabeled_training_rejected(self):
        data = make_cluster_dataset(2, 4, seed=1, labeled=False)
        q = SetDataset(data.sets[:4])
        r = SetDataset(data.sets[4:])
        with pytest.raises(DataFormatError):
            train(TrainSplit(q=q, r=r), TrainerConfig(bits=2, rounds=2))

    def test_too_many_bits_rejected(self):
        split = small_split()
        with pytest.raises(DegenerateDataError):
            train(split, TrainerConfig(bits=500, rounds=2))

    def test_encode_dimension_mismatch(self):
        split = small_split(seed=8, dim=6)
        model = train(split, TrainerConfig(bits=2, rounds=2, seed=0, max_outer=1))
        other = make_cluster_dataset(2, 2, dim=9, seed=0)
        with pytest.raises(DimensionMismatchError):
            model.encode(other.sets[0], side="query")

    def test_identical_queries_identical_codes(self):
        split = small_split(seed=9)
        model = train(split, TrainerConfig(bits=3, rounds=2, seed=0, max_outer=1))
        probe = split.q.sets[0]
        twin = type(probe)(id="twin", points=probe.points.copy(), label=None)
        assert model.encode(probe, side="query") == model.encode(twin, side="query")

    def test_degenerate_splits_survive_serialization(self, tmp_path):
        # Force a single-class pseudo-label bit by training with one bit on a
        # two-set-per-side split whose kernel PCA signs collapse.
        from sethash.boosting import StrongSplit, WeakLearner
        from sethash.kernels import STATISTICAL, KernelParams

        split = small_split(seed=10)
        model = train(split, TrainerConfig(bits=2, rounds=2, seed=0, max_outer=1))
        constant = StrongSplit(
            (WeakLearner(STATISTICAL, *sorted(model.anchors)[:2], epsilon=2.0),), (1.0,)
        )
        model.splits_q = (model.splits_q[0], constant)
        model.degenerate_bits = ((0, 1),)
        path = tmp_path / "m.ish"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.degenerate_bits == ((0, 1),)
        probe = split.q.sets[0]
        assert loaded.encode(probe, side="query") == model.encode(probe, side="query")
        assert loaded.encode(probe, side="query").bits[1] == 1  # the constant bit

    def test_boosting_progress_recorded(self):
        # With every per-round error below one half, the final training error
        # of each boosted split cannot exceed its round-one error.
        tk, labels = two_cluster_kernels(5, 5)
        from sethash.boosting import boost

        noisy = labels.copy()
        noisy[0] = -noisy[0]
        split, state = boost(noisy, tk, n_rounds=6, seed=0)
        if all(e < 0.5 for e in state.raw_round_errors):
            assert state.strong_errors[-1] <= state.strong_errors[0]
