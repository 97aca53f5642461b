"""End-to-end training of set hash models.

The training loop alternates between discrete code optimization and boosting:

1. initial codes come from kernel PCA on the statistical kernel matrix of
   each training side (sign of the projections);
2. per-side codes are improved by greedy bit-flip descent on the within-side
   objective (intra-label Hamming sums minus a weighted inter-label term)
   under bit-wise and sample-wise balance constraints;
3. each side's strong splits are boosted using the *other* side's code bits
   as pseudo-labels (cross-training), then codes are re-encoded through the
   trained splits;
4. both sides are refined jointly with a cross-side objective added, splits
   are retrained, and the loop repeats until the fraction of changed bits
   drops below the configured tolerance or the iteration cap is hit.

The emitted model carries the trained splits for both sides plus every anchor
point set a learner references, so new queries can be encoded from scratch.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .boosting import (
    StrongSplit,
    TrainingKernels,
    WeakLearner,
    boost,
    eval_split_on_matrix,
    split_margin,
)
from .core import (
    SEED_BOOST,
    SEED_SWEEP,
    HashCode,
    PointSet,
    SetDataset,
    TrainSplit,
    child_seed,
    rng_for,
    signs_to_bits,
)
from .errors import (
    DataFormatError,
    DegenerateDataError,
    DimensionMismatchError,
    FormatVersionError,
    MissingFileError,
)
from .kernels import (
    STATISTICAL,
    STRUCTURAL,
    KernelMatrix,
    KernelParams,
    SetFeatures,
    cached_kernel_matrix,
    kernel_pca_init,
    pair_kernel,
)

__all__ = [
    "TrainerConfig",
    "HashModel",
    "objective_ds",
    "objective_dc",
    "optimize_codes_ds",
    "optimize_codes_joint",
    "label_pairing",
    "cross_train",
    "train",
    "save_model",
    "load_model",
]

MODEL_MAGIC = b"SSHM"
MODEL_VERSION = 1

QUERY_SIDE = "query"
DATABASE_SIDE = "database"


@dataclass(frozen=True)
class TrainerConfig:
    """Everything the training loop needs besides the data."""

    bits: int = 24
    rounds: int = 15
    alpha: float = 1.0
    beta: float = 1.0
    nu1: float = 0.0
    nu2: float = 1.0
    nu3: float | None = None  # None: intra/inter pair-count ratio per side
    nu4: float | None = None  # None: cross-side pair-count ratio
    max_outer: int = 10
    conv_tol: float = 1e-3
    balance_tol: float = 0.1
    max_sweeps: int = 20
    pool_cap: int = 20000
    seed: int = 0
    kernel: KernelParams = field(default_factory=KernelParams)

    def __post_init__(self) -> None:
        if self.bits < 1:
            raise DataFormatError(f"bits must be >= 1, got {self.bits}")
        if self.rounds < 1:
            raise DataFormatError(f"rounds must be >= 1, got {self.rounds}")
        if self.max_outer < 1:
            raise DataFormatError(f"max_outer must be >= 1, got {self.max_outer}")
        if not 0.0 < self.conv_tol < 1.0:
            raise DataFormatError(f"conv_tol must be in (0, 1), got {self.conv_tol}")
        if self.balance_tol < 0:
            raise DataFormatError(f"balance_tol must be >= 0, got {self.balance_tol}")


# ---------------------------------------------------------------------------
# Code objectives


def _pairwise_hamming(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    xa = a.astype(np.int64)
    xb = b.astype(np.int64)
    return xa.T @ (1 - xb) + (1 - xa).T @ xb


def objective_ds(codes: np.ndarray, labels: np.ndarray, nu3: float) -> float:
    """Within-side objective: intra-label Hamming sum minus nu3 * inter sum.

    ``codes`` is a (bits, n) 0/1 matrix; pairs are unordered.
    """
    codes = np.asarray(codes)
    labels = np.asarray(labels)
    if codes.ndim != 2 or codes.shape[1] != labels.shape[0]:
        raise DataFormatError("codes must be (bits, n) with one label per column")
    dists = _pairwise_hamming(codes, codes)
    iu = np.triu_indices(codes.shape[1], k=1)
    same = labels[iu[0]] == labels[iu[1]]
    pair_d = dists[iu]
    return float(pair_d[same].sum() - nu3 * pair_d[~same].sum())


def objective_dc(
    codes_q: np.ndarray,
    codes_r: np.ndarray,
    labels_q: np.ndarray,
    labels_r: np.ndarray,
    nu4: float,
) -> float:
    """Cross-side objective over all (q column, r column) pairs."""
    codes_q = np.asarray(codes_q)
    codes_r = np.asarray(codes_r)
    if codes_q.shape[0] != codes_r.shape[0]:
        raise DimensionMismatchError("both sides must use the same number of bits")
    dists = _pairwise_hamming(codes_q, codes_r)
    same = np.asarray(labels_q)[:, None] == np.asarray(labels_r)[None, :]
    return float(dists[same].sum() - nu4 * dists[~same].sum())


def _auto_nu3(labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    n = labels.shape[0]
    same = int(sum(c * (c - 1) // 2 for c in np.bincount(labels)))
    total = n * (n - 1) // 2
    inter = total - same
    return same / inter if inter else 1.0


def _auto_nu4(labels_q: np.ndarray, labels_r: np.ndarray) -> float:
    same = int((np.asarray(labels_q)[:, None] == np.asarray(labels_r)[None, :]).sum())
    inter = labels_q.shape[0] * labels_r.shape[0] - same
    return same / inter if inter else 1.0


# ---------------------------------------------------------------------------
# Greedy bit-flip descent with balance constraints


class _Side:
    """Mutable per-side bookkeeping for O(1) flip deltas."""

    def __init__(self, codes: np.ndarray, labels: np.ndarray, n_labels: int):
        self.h = np.ascontiguousarray(codes, dtype=np.uint8).copy()
        self.lab = np.asarray(labels, dtype=np.int64)
        bits, n = self.h.shape
        self.n = n
        self.cnt = np.zeros((bits, n_labels + 1, 2), dtype=np.int64)
        for r in range(bits):
            for i in range(n):
                self.cnt[r, self.lab[i], self.h[r, i]] += 1
        self.rowones = self.h.sum(axis=1).astype(np.int64)
        self.colones = self.h.sum(axis=0).astype(np.int64)

    def ds_delta(self, r: int, i: int, nu3: float) -> float:
        b = self.h[r, i]
        l = self.lab[i]
        same_intra = self.cnt[r, l, b] - 1
        diff_intra = self.cnt[r, l, 1 - b]
        tot_b = self.rowones[r] if b == 1 else self.n - self.rowones[r]
        same_inter = tot_b - self.cnt[r, l, b]
        diff_inter = (self.n - tot_b) - self.cnt[r, l, 1 - b]
        return float(same_intra - diff_intra) - nu3 * float(same_inter - diff_inter)

    def dc_delta(self, other: "_Side", r: int, i: int, nu4: float) -> float:
        b = self.h[r, i]
        l = self.lab[i]
        same_intra = other.cnt[r, l, b]
        diff_intra = other.cnt[r, l, 1 - b]
        tot_b = other.rowones[r] if b == 1 else other.n - other.rowones[r]
        same_inter = tot_b - other.cnt[r, l, b]
        diff_inter = (other.n - tot_b) - other.cnt[r, l, 1 - b]
        return float(same_intra - diff_intra) - nu4 * float(same_inter - diff_inter)

    def flip(self, r: int, i: int) -> None:
        b = self.h[r, i]
        self.cnt[r, self.lab[i], b] -= 1
        self.cnt[r, self.lab[i], 1 - b] += 1
        step = -1 if b == 1 else 1
        self.rowones[r] += step
        self.colones[i] += step
        self.h[r, i] = 1 - b


def _band_dev(count: int, lo: float, hi: float) -> float:
    if count < lo:
        return lo - count
    if count > hi:
        return count - hi
    return 0.0


@dataclass
class CodeOptimizationTrace:
    """Objective values recorded during flip descent (for verification)."""

    initial: float
    values: list[float] = field(default_factory=list)
    repair_flips: int = 0
    descent_flips: int = 0
    sweeps: int = 0


class _FlipOptimizer:
    """Shared engine: repair balance violations, then strictly-improving flips.

    Row balance is measured over the concatenated columns of all sides;
    column balance per individual column.  A descent flip is admissible when
    the objective strictly decreases and neither count leaves its band (a
    count already outside may only move inward).
    """

    def __init__(
        self,
        sides: list[_Side],
        delta_fn,
        balance_tol: float,
        objective0: float,
    ):
        self.sides = sides
        self.delta_fn = delta_fn
        self.bits = sides[0].h.shape[0]
        total_cols = sum(s.n for s in sides)
        self.row_lo = (0.5 - balance_tol) * total_cols
        self.row_hi = (0.5 + balance_tol) * total_cols
        self.col_lo = (0.5 - balance_tol) * self.bits
        self.col_hi = (0.5 + balance_tol) * self.bits
        self.trace = CodeOptimizationTrace(initial=objective0)
        self.current = objective0
        self.coords = [(si, r, i) for si, s in enumerate(sides) for r in range(self.bits) for i in range(s.n)]

    def _row_count(self, r: int) -> int:
        return int(sum(s.rowones[r] for s in self.sides))

    def _counts_after(self, si: int, r: int, i: int) -> tuple[int, int]:
        side = self.sides[si]
        step = -1 if side.h[r, i] == 1 else 1
        return self._row_count(r) + step, int(side.colones[i]) + step

    def _devs(self, si: int, r: int, i: int) -> tuple[float, float, float, float]:
        side = self.sides[si]
        row_before = _band_dev(self._row_count(r), self.row_lo, self.row_hi)
        col_before = _band_dev(int(side.colones[i]), self.col_lo, self.col_hi)
        row_after_count, col_after_count = self._counts_after(si, r, i)
        return (
            row_before,
            col_before,
            _band_dev(row_after_count, self.row_lo, self.row_hi),
            _band_dev(col_after_count, self.col_lo, self.col_hi),
        )

    def repair(self) -> None:
        """Flip codes into the balance bands, hurting the objective least."""
        limit = 4 * len(self.coords)
        for _ in range(limit):
            violation = sum(
                _band_dev(self._row_count(r), self.row_lo, self.row_hi) for r in range(self.bits)
            ) + sum(
                _band_dev(int(s.colones[i]), self.col_lo, self.col_hi)
                for s in self.sides
                for i in range(s.n)
            )
            if violation == 0:
                return
            best = None  # (dev_change, obj_delta, coord)
            for coord in self.coords:
                si, r, i = coord
                row_b, col_b, row_a, col_a = self._devs(si, r, i)
                if row_b == 0 and col_b == 0:
                    continue
                change = (row_a - row_b) + (col_a - col_b)
                if change >= 0:
                    continue
                cand = (change, self.delta_fn(si, r, i), coord)
                if best is None or cand < best:
                    best = cand
            if best is None:
                return
            _, obj_delta, (si, r, i) = best
            self.sides[si].flip(r, i)
            self.current += obj_delta
            self.trace.repair_flips += 1

    def _admissible(self, si: int, r: int, i: int) -> bool:
        row_b, col_b, row_a, col_a = self._devs(si, r, i)
        row_ok = row_a == 0 or row_a < row_b
        col_ok = col_a == 0 or col_a < col_b
        return row_ok and col_ok

    def descend(self, rng: np.random.Generator, max_sweeps: int) -> None:
        for _ in range(max_sweeps):
            self.trace.sweeps += 1
            flipped = 0
            for idx in rng.permutation(len(self.coords)):
                si, r, i = self.coords[int(idx)]
                delta = self.delta_fn(si, r, i)
                if delta < 0 and self._admissible(si, r, i):
                    self.sides[si].flip(r, i)
                    self.current += delta
                    self.trace.values.append(self.current)
                    flipped += 1
            self.trace.descent_flips += flipped
            if flipped == 0:
                break


def optimize_codes_ds(
    codes: np.ndarray,
    labels: np.ndarray,
    nu3: float,
    balance_tol: float = 0.1,
    max_sweeps: int = 20,
    rng: np.random.Generator | None = None,
    track: bool = False,
):
    """Greedy bit-flip descent on the within-side objective.

    Sweeps the (bit, column) coordinates in seeded random order, accepting a
    flip only when the objective strictly decreases and the bit-wise /
    sample-wise balance bands are respected.  Returns the optimized codes,
    plus the objective trace when ``track`` is set.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if rng is None:
        rng = rng_for(0, SEED_SWEEP)
    side = _Side(codes, labels, int(labels.max()))
    obj0 = objective_ds(side.h, labels, nu3)
    opt = _FlipOptimizer(
        [side],
        lambda si, r, i: side.ds_delta(r, i, nu3),
        balance_tol,
        obj0,
    )
    opt.repair()
    opt.current = objective_ds(side.h, labels, nu3)
    opt.descend(rng, max_sweeps)
    return (side.h, opt.trace) if track else side.h


def optimize_codes_joint(
    codes_q: np.ndarray,
    codes_r: np.ndarray,
    labels_q: np.ndarray,
    labels_r: np.ndarray,
    alpha: float,
    beta: float,
    nu3_q: float,
    nu3_r: float,
    nu4: float,
    balance_tol: float = 0.1,
    max_sweeps: int = 20,
    rng: np.random.Generator | None = None,
    track: bool = False,
):
    """Joint refinement of both sides' codes.

    Descends on alpha * (within-side objectives) + beta * (cross-side
    objective), with row balance measured over the concatenation of both
    sides' columns.
    """
    labels_q = np.asarray(labels_q, dtype=np.int64)
    labels_r = np.asarray(labels_r, dtype=np.int64)
    if rng is None:
        rng = rng_for(0, SEED_SWEEP)
    n_labels = int(max(labels_q.max(), labels_r.max()))
    side_q = _Side(codes_q, labels_q, n_labels)
    side_r = _Side(codes_r, labels_r, n_labels)
    sides = [side_q, side_r]
    nu3s = [nu3_q, nu3_r]

    def joint_objective() -> float:
        return float(
            alpha * (objective_ds(side_q.h, labels_q, nu3_q) + objective_ds(side_r.h, labels_r, nu3_r))
            + beta * objective_dc(side_q.h, side_r.h, labels_q, labels_r, nu4)
        )

    def delta(si: int, r: int, i: int) -> float:
        own = sides[si]
        other = sides[1 - si]
        return alpha * own.ds_delta(r, i, nu3s[si]) + beta * own.dc_delta(other, r, i, nu4)

    opt = _FlipOptimizer(sides, delta, balance_tol, joint_objective())
    opt.repair()
    opt.current = joint_objective()
    opt.descend(rng, max_sweeps)
    if track:
        return side_q.h, side_r.h, opt.trace
    return side_q.h, side_r.h


# ---------------------------------------------------------------------------
# Cross-training


def label_pairing(labels_a: np.ndarray, labels_b: np.ndarray) -> np.ndarray:
    """Partner index in side b for every position in side a.

    Positions are paired within each label group (cycling over the smaller
    group when counts differ) so pseudo-labels stay class-consistent; labels
    missing on side b fall back to cyclic pairing over all of b.
    """
    labels_a = np.asarray(labels_a)
    labels_b = np.asarray(labels_b)
    out = np.empty(labels_a.shape[0], dtype=np.int64)
    by_label_b: dict[int, np.ndarray] = {
        int(l): np.flatnonzero(labels_b == l) for l in np.unique(labels_b)
    }
    for l in np.unique(labels_a):
        a_pos = np.flatnonzero(labels_a == l)
        b_pos = by_label_b.get(int(l))
        if b_pos is None or b_pos.size == 0:
            for j, p in enumerate(a_pos):
                out[p] = p % labels_b.shape[0]
        else:
            for j, p in enumerate(a_pos):
                out[p] = b_pos[j % b_pos.size]
    return out


def _constant_split(sign: int, ids: Sequence[str]) -> StrongSplit:
    if len(ids) < 2:
        raise DegenerateDataError("need at least two training sets to build a split")
    a, b = sorted(ids)[:2]
    # Kernel values live in (0, 1], so |K(a,x) - K(b,x)| < 1 and an epsilon of
    # +-2 fixes the learner's output regardless of the target.
    eps = 2.0 if sign >= 0 else -2.0
    return StrongSplit(
        learners=(WeakLearner(kernel_id=STATISTICAL, anchor_a=a, anchor_b=b, epsilon=eps),),
        weights=(1.0,),
    )


def _bits_to_labels(bits: np.ndarray) -> np.ndarray:
    return bits.astype(np.float64) * 2.0 - 1.0


def _train_side(
    kernels: TrainingKernels,
    label_codes: np.ndarray,
    pairing: np.ndarray,
    cfg: TrainerConfig,
    penalty: float,
    side: int,
    seed_path: tuple[int, ...],
    info: dict,
) -> list[StrongSplit]:
    splits: list[StrongSplit] = []
    for rp in range(label_codes.shape[0]):
        pseudo = _bits_to_labels(label_codes[rp, pairing])
        if np.all(pseudo == pseudo[0]):
            splits.append(_constant_split(int(pseudo[0]), kernels.ids))
            info["degenerate"].append((side, rp))
            continue
        split, state = boost(
            pseudo,
            kernels,
            n_rounds=cfg.rounds,
            pool_cap=cfg.pool_cap,
            seed=child_seed(cfg.seed, SEED_BOOST, *seed_path, side, rp),
            weight_penalty=penalty,
        )
        splits.append(split)
        info["states"][(side, rp)] = state
    return splits


def cross_train(
    codes_q: np.ndarray,
    codes_r: np.ndarray,
    kernels_q: TrainingKernels,
    kernels_r: TrainingKernels,
    cfg: TrainerConfig,
    pair_q: np.ndarray,
    pair_r: np.ndarray,
    seed_path: tuple[int, ...] = (0,),
) -> tuple[list[StrongSplit], list[StrongSplit], np.ndarray, np.ndarray, dict]:
    """Train one strong split per bit on each side, swapping codes as labels.

    Bit r' of side q is trained on q's kernels with pseudo-labels taken from
    side r's bit r' through the label-aligned pairing.  The blocks update
    sequentially: q's codes are re-encoded through the fresh q splits before
    they serve as pseudo-labels for the r side, which keeps the coupled
    updates from oscillating between the sides.  A bit whose pseudo-labels
    are single-class yields a recorded constant split rather than an error.

    Returns (splits_q, splits_r, re-encoded q codes, re-encoded r codes,
    diagnostics).
    """
    info: dict = {"degenerate": [], "states": {}}
    splits_q = _train_side(kernels_q, codes_r, pair_q, cfg, cfg.nu1, 0, seed_path, info)
    new_q = _encode_side(splits_q, kernels_q)
    splits_r = _train_side(kernels_r, new_q, pair_r, cfg, cfg.nu1 * cfg.nu2, 1, seed_path, info)
    new_r = _encode_side(splits_r, kernels_r)
    return splits_q, splits_r, new_q, new_r, info


def _encode_side(splits: Sequence[StrongSplit], kernels: TrainingKernels) -> np.ndarray:
    return np.stack([signs_to_bits(eval_split_on_matrix(s, kernels)) for s in splits])


# ---------------------------------------------------------------------------
# The model


@dataclass
class HashModel:
    """Trained hash functions for both sides plus everything needed to encode.

    ``splits_q`` encode queries, ``splits_r`` encode database entries.  The
    anchors dictionary holds every training set referenced by any learner;
    their kernel features are recomputed (deterministically) on demand.
    """

    splits_q: tuple[StrongSplit, ...]
    splits_r: tuple[StrongSplit, ...]
    params: KernelParams
    config: TrainerConfig
    anchors: dict[str, PointSet]
    dim: int
    converged: bool = True
    outer_iterations: int = 0
    nu_values: dict = field(default_factory=dict)
    train_ids_q: tuple[str, ...] = ()
    train_ids_r: tuple[str, ...] = ()
    train_codes_q: np.ndarray | None = None
    train_codes_r: np.ndarray | None = None
    degenerate_bits: tuple[tuple[int, int], ...] = ()
    _feature_cache: dict = field(default_factory=dict, repr=False)

    @property
    def bits(self) -> int:
        return len(self.splits_q)

    def _splits_for(self, side: str) -> tuple[StrongSplit, ...]:
        if side == QUERY_SIDE:
            return self.splits_q
        if side == DATABASE_SIDE:
            return self.splits_r
        raise DataFormatError(f"side must be {QUERY_SIDE!r} or {DATABASE_SIDE!r}, got {side!r}")

    def _anchor_features(self, anchor_id: str) -> SetFeatures:
        feats = self._feature_cache.get(anchor_id)
        if feats is None:
            try:
                anchor = self.anchors[anchor_id]
            except KeyError as exc:
                raise DataFormatError(f"model does not store anchor set {anchor_id!r}") from exc
            feats = SetFeatures.compute(anchor, self.params)
            self._feature_cache[anchor_id] = feats
        return feats

    def kernel_values_for(self, target: PointSet, side: str) -> dict[str, dict[str, float]]:
        """Kernel similarities from ``target`` to every anchor the side needs."""
        if target.dim != self.dim:
            raise DimensionMismatchError(
                f"model expects dimension {self.dim}, set {target.id!r} has {target.dim}"
            )
        feats = SetFeatures.compute(target, self.params)
        values: dict[str, dict[str, float]] = {STATISTICAL: {}, STRUCTURAL: {}}
        needed: set[str] = set()
        for split in self._splits_for(side):
            needed |= split.anchor_ids
        for aid in sorted(needed):
            afeats = self._anchor_features(aid)
            values[STATISTICAL][aid] = pair_kernel(STATISTICAL, afeats, feats, self.params)
            values[STRUCTURAL][aid] = pair_kernel(STRUCTURAL, afeats, feats, self.params)
        return values

    def encode(self, target: PointSet, side: str = QUERY_SIDE) -> HashCode:
        """Hash one point set; ``side`` selects the query or database model."""
        values = self.kernel_values_for(target, side)
        bits = np.array(
            [1 if split_margin(s, values) >= 0 else 0 for s in self._splits_for(side)],
            dtype=np.uint8,
        )
        return HashCode.from_bits(bits)

    def encode_dataset(self, data: SetDataset, side: str = QUERY_SIDE) -> list[HashCode]:
        return [self.encode(s, side) for s in data.sets]


# ---------------------------------------------------------------------------
# Training loop


def train(
    split: TrainSplit,
    cfg: TrainerConfig,
    kernel_cache: str | Path | None = None,
    threads: int | None = None,
) -> HashModel:
    """Run the full training pipeline on a labeled q/r split."""
    if not (split.q.labeled and split.r.labeled):
        raise DataFormatError("training requires labels on every set of both sides")
    q = split.q.sorted_by_label_id()
    r = split.r.sorted_by_label_id()
    if len(q) < 2 or len(r) < 2:
        raise DegenerateDataError("each training side needs at least 2 sets")
    if cfg.bits > min(len(q), len(r)):
        raise DegenerateDataError(
            f"bits={cfg.bits} exceeds the smaller training side ({min(len(q), len(r))} sets)"
        )

    combined = SetDataset(q.sets + r.sets)
    params = cfg.kernel.resolve(combined)
    labels_q = np.array(q.labels, dtype=np.int64)
    labels_r = np.array(r.labels, dtype=np.int64)
    nu3_q = cfg.nu3 if cfg.nu3 is not None else _auto_nu3(labels_q)
    nu3_r = cfg.nu3 if cfg.nu3 is not None else _auto_nu3(labels_r)
    nu4 = cfg.nu4 if cfg.nu4 is not None else _auto_nu4(labels_q, labels_r)

    tk = {}
    for side_name, data in (("q", q), ("r", r)):
        mats = [
            cached_kernel_matrix(data, data, kid, params, kernel_cache, threads=threads)
            for kid in (STATISTICAL, STRUCTURAL)
        ]
        tk[side_name] = TrainingKernels(mats)

    codes_q = signs_to_bits(kernel_pca_init_from(tk["q"], cfg.bits)).T
    codes_r = signs_to_bits(kernel_pca_init_from(tk["r"], cfg.bits)).T

    pair_q = label_pairing(labels_q, labels_r)
    pair_r = label_pairing(labels_r, labels_q)

    splits_q: list[StrongSplit] = []
    splits_r: list[StrongSplit] = []
    info: dict = {}
    converged = False
    outer_done = 0
    for outer in range(1, cfg.max_outer + 1):
        before_q = codes_q.copy()
        before_r = codes_r.copy()

        # Sweep orders are derived per stage but not per iteration: each outer
        # pass then applies the same deterministic map, so the loop can reach
        # an exact fixed point instead of wandering between equivalent optima.
        codes_q = optimize_codes_ds(
            codes_q, labels_q, nu3_q, cfg.balance_tol, cfg.max_sweeps, rng_for(cfg.seed, SEED_SWEEP, 0)
        )
        codes_r = optimize_codes_ds(
            codes_r, labels_r, nu3_r, cfg.balance_tol, cfg.max_sweeps, rng_for(cfg.seed, SEED_SWEEP, 1)
        )
        splits_q, splits_r, codes_q, codes_r, _ = cross_train(
            codes_q, codes_r, tk["q"], tk["r"], cfg, pair_q, pair_r, seed_path=(0,)
        )
        codes_q, codes_r = optimize_codes_joint(
            codes_q,
            codes_r,
            labels_q,
            labels_r,
            cfg.alpha,
            cfg.beta,
            nu3_q,
            nu3_r,
            nu4,
            cfg.balance_tol,
            cfg.max_sweeps,
            rng_for(cfg.seed, SEED_SWEEP, 2),
        )
        splits_q, splits_r, final_q, final_r, info = cross_train(
            codes_q, codes_r, tk["q"], tk["r"], cfg, pair_q, pair_r, seed_path=(1,)
        )
        outer_done = outer
        changed = int(np.sum(codes_q != before_q) + np.sum(codes_r != before_r))
        if changed / (cfg.bits * (len(q) + len(r))) < cfg.conv_tol:
            converged = True
            break

    anchor_ids: set[str] = set()
    for s in (*splits_q, *splits_r):
        anchor_ids |= s.anchor_ids
    by_id = {s.id: s for s in combined.sets}
    anchors = {aid: by_id[aid] for aid in sorted(anchor_ids)}

    return HashModel(
        splits_q=tuple(splits_q),
        splits_r=tuple(splits_r),
        params=params,
        config=cfg,
        anchors=anchors,
        dim=q.dim,
        converged=converged,
        outer_iterations=outer_done,
        nu_values={"nu3_q": nu3_q, "nu3_r": nu3_r, "nu4": nu4},
        train_ids_q=q.ids,
        train_ids_r=r.ids,
        train_codes_q=final_q,
        train_codes_r=final_r,
        degenerate_bits=tuple(info.get("degenerate", ())),
    )


def kernel_pca_init_from(kernels: TrainingKernels, bits: int) -> np.ndarray:
    """Kernel PCA projections from a side's statistical kernel matrix."""
    km = KernelMatrix(
        kernel_id=STATISTICAL,
        row_ids=kernels.ids,
        col_ids=kernels.ids,
        values=kernels.matrices[STATISTICAL],
    )
    return kernel_pca_init(km, bits)


# ---------------------------------------------------------------------------
# Model serialization


def _split_to_json(split: StrongSplit) -> dict:
    return {
        "weights": list(split.weights),
        "learners": [
            {"kernel_id": f.kernel_id, "anchor_a": f.anchor_a, "anchor_b": f.anchor_b, "epsilon": f.epsilon}
            for f in split.learners
        ],
    }


def _split_from_json(obj: dict) -> StrongSplit:
    return StrongSplit(
        learners=tuple(
            WeakLearner(
                kernel_id=l["kernel_id"], anchor_a=l["anchor_a"], anchor_b=l["anchor_b"], epsilon=l["epsilon"]
            )
            for l in obj["learners"]
        ),
        weights=tuple(obj["weights"]),
    )


def _codes_to_json(codes: np.ndarray | None) -> list[str] | None:
    if codes is None:
        return None
    return ["".join("1" if b else "0" for b in row) for row in codes]


def _codes_from_json(rows: list[str] | None) -> np.ndarray | None:
    if rows is None:
        return None
    return np.array([[1 if ch == "1" else 0 for ch in row] for row in rows], dtype=np.uint8)


def save_model(model: HashModel, path: str | Path) -> None:
    """Write a model as a versioned binary file (header JSON + anchor payload)."""
    anchor_ids = sorted(model.anchors)
    header = {
        "format_version": MODEL_VERSION,
        "dim": model.dim,
        "bits": model.bits,
        "params": {
            "mu": model.params.mu,
            "gamma_g": model.params.gamma_g,
            "gamma_s": model.params.gamma_s,
            "cov_ridge": model.params.cov_ridge,
        },
        "config": {
            "bits": model.config.bits,
            "rounds": model.config.rounds,
            "alpha": model.config.alpha,
            "beta": model.config.beta,
            "nu1": model.config.nu1,
            "nu2": model.config.nu2,
            "nu3": model.config.nu3,
            "nu4": model.config.nu4,
            "max_outer": model.config.max_outer,
            "conv_tol": model.config.conv_tol,
            "balance_tol": model.config.balance_tol,
            "max_sweeps": model.config.max_sweeps,
            "pool_cap": model.config.pool_cap,
            "seed": model.config.seed,
            "kernel": {
                "mu": model.config.kernel.mu,
                "gamma_g": model.config.kernel.gamma_g,
                "gamma_s": model.config.kernel.gamma_s,
                "cov_ridge": model.config.kernel.cov_ridge,
            },
        },
        "converged": model.converged,
        "outer_iterations": model.outer_iterations,
        "nu_values": model.nu_values,
        "splits_q": [_split_to_json(s) for s in model.splits_q],
        "splits_r": [_split_to_json(s) for s in model.splits_r],
        "train_ids_q": list(model.train_ids_q),
        "train_ids_r": list(model.train_ids_r),
        "train_codes_q": _codes_to_json(model.train_codes_q),
        "train_codes_r": _codes_to_json(model.train_codes_r),
        "degenerate_bits": [list(x) for x in model.degenerate_bits],
        "anchors": [
            {"id": aid, "label": model.anchors[aid].label, "n": model.anchors[aid].n}
            for aid in anchor_ids
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", MODEL_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for aid in anchor_ids:
            fh.write(model.anchors[aid].points.astype("<f8").tobytes())


def load_model(path: str | Path) -> HashModel:
    p = Path(path)
    if not p.is_file():
        raise MissingFileError(f"no such file: {p}")
    raw = p.read_bytes()
    if len(raw) < 16 or raw[:4] != MODEL_MAGIC:
        raise FormatVersionError(f"{p}: not a model file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != MODEL_VERSION:
        raise FormatVersionError(f"{p}: unsupported model version {version} (expected {MODEL_VERSION})")
    (hlen,) = struct.unpack_from("<Q", raw, 8)
    header = json.loads(raw[16 : 16 + hlen])
    dim = header["dim"]
    off = 16 + hlen
    anchors: dict[str, PointSet] = {}
    for meta in header["anchors"]:
        n = meta["n"]
        pts = np.frombuffer(raw, dtype="<f8", count=n * dim, offset=off).reshape(n, dim).copy()
        off += n * dim * 8
        anchors[meta["id"]] = PointSet(id=meta["id"], points=pts, label=meta["label"])
    kcfg = header["config"]["kernel"]
    cfg = TrainerConfig(
        bits=header["config"]["bits"],
        rounds=header["config"]["rounds"],
        alpha=header["config"]["alpha"],
        beta=header["config"]["beta"],
        nu1=header["config"]["nu1"],
        nu2=header["config"]["nu2"],
        nu3=header["config"]["nu3"],
        nu4=header["config"]["nu4"],
        max_outer=header["config"]["max_outer"],
        conv_tol=header["config"]["conv_tol"],
        balance_tol=header["config"]["balance_tol"],
        max_sweeps=header["config"]["max_sweeps"],
        pool_cap=header["config"]["pool_cap"],
        seed=header["config"]["seed"],
        kernel=KernelParams(
            mu=kcfg["mu"], gamma_g=kcfg["gamma_g"], gamma_s=kcfg["gamma_s"], cov_ridge=kcfg["cov_ridge"]
        ),
    )
    params = KernelParams(
        mu=header["params"]["mu"],
        gamma_g=header["params"]["gamma_g"],
        gamma_s=header["params"]["gamma_s"],
        cov_ridge=header["params"]["cov_ridge"],
    )
    return HashModel(
        splits_q=tuple(_split_from_json(s) for s in header["splits_q"]),
        splits_r=tuple(_split_from_json(s) for s in header["splits_r"]),
        params=params,
        config=cfg,
        anchors=anchors,
        dim=dim,
        converged=header["converged"],
        outer_iterations=header["outer_iterations"],
        nu_values=header["nu_values"],
        train_ids_q=tuple(header["train_ids_q"]),
        train_ids_r=tuple(header["train_ids_r"]),
        train_codes_q=_codes_from_json(header["train_codes_q"]),
        train_codes_r=_codes_from_json(header["train_codes_r"]),
        degenerate_bits=tuple(tuple(x) for x in header["degenerate_bits"]),
    )
