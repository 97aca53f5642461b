"""Boosted binary splits built from kernel-comparison weak learners.

A weak learner compares a target set's kernel similarity to a positive anchor
against its similarity to a negative anchor, plus a threshold:

    predict(x) = sign(K(anchor_a, x) - K(anchor_b, x) + epsilon)

with sign(0) = +1.  A strong split is a weighted vote over several of these.
Learner selection runs an exponential-loss boosting loop: per round the pool
is scanned for the candidate whose best threshold minimizes the weighted 0/1
error (which coincides with the exponential-loss optimum for sign-valued
learners), weights are then multiplicatively updated and renormalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .core import rng_for, SEED_POOL
from .errors import DataFormatError, DegenerateDataError
from .kernels import KernelMatrix

DELTA_CLAMP = 1e-6
EARLY_STOP = 0.5 - 1e-6

__all__ = [
    "WeakLearner",
    "StrongSplit",
    "BoostState",
    "TrainingKernels",
    "eval_weak",
    "enumerate_pool",
    "select_weak",
    "boost",
    "eval_split",
    "split_margin",
    "eval_split_on_matrix",
]


@dataclass(frozen=True)
class WeakLearner:
    """One kernel-comparison cut: (kernel, positive anchor, negative anchor, threshold)."""

    kernel_id: str
    anchor_a: str
    anchor_b: str
    epsilon: float = 0.0

    def __post_init__(self) -> None:
        if self.anchor_a == self.anchor_b:
            raise DataFormatError(f"anchors must differ, both are {self.anchor_a!r}")


@dataclass(frozen=True)
class StrongSplit:
    """Sign of a weighted vote over weak learners; produces one hash bit."""

    learners: tuple[WeakLearner, ...]
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.learners) < 1:
            raise DataFormatError("a strong split needs at least one learner")
        if len(self.learners) != len(self.weights):
            raise DataFormatError("learners and weights must have equal length")
        if not all(np.isfinite(w) for w in self.weights):
            raise DataFormatError("split weights must be finite")
        object.__setattr__(self, "learners", tuple(self.learners))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    @property
    def anchor_ids(self) -> set[str]:
        out: set[str] = set()
        for f in self.learners:
            out.add(f.anchor_a)
            out.add(f.anchor_b)
        return out


@dataclass
class BoostState:
    """Diagnostics from one boosting run.

    ``round_errors`` holds the per-round weighted errors clamped into
    (0, 0.5); ``strong_errors`` the unweighted training error of the vote
    after each round.
    """

    sample_weights: np.ndarray
    round_errors: list[float] = field(default_factory=list)
    raw_round_errors: list[float] = field(default_factory=list)
    strong_errors: list[float] = field(default_factory=list)
    stopped_early: bool = False


class TrainingKernels:
    """Kernel matrices over one training side, addressable by kernel id."""

    def __init__(self, matrices: Sequence[KernelMatrix]):
        if not matrices:
            raise DataFormatError("need at least one kernel matrix")
        ids = matrices[0].row_ids
        for m in matrices:
            if not m.is_square or m.row_ids != ids:
                raise DataFormatError("training kernel matrices must be square over the same sets")
        self.ids: tuple[str, ...] = ids
        self.index: dict[str, int] = {sid: i for i, sid in enumerate(ids)}
        self.matrices: dict[str, np.ndarray] = {m.kernel_id: m.values for m in matrices}
        self.kernel_ids: tuple[str, ...] = tuple(sorted(self.matrices))

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, kernel_id: str, anchor: str) -> np.ndarray:
        return self.matrices[kernel_id][self.index[anchor]]


def _as_training_kernels(kernels: Sequence[KernelMatrix] | TrainingKernels) -> TrainingKernels:
    return kernels if isinstance(kernels, TrainingKernels) else TrainingKernels(kernels)


def eval_weak(f: WeakLearner, krow_a: np.ndarray, krow_b: np.ndarray, target_idx: int) -> int:
    """Evaluate one learner for one target given the anchors' kernel rows."""
    margin = krow_a[target_idx] - krow_b[target_idx] + f.epsilon
    return 1 if margin >= 0 else -1


def enumerate_pool(
    labels: np.ndarray,
    kernels: Sequence[KernelMatrix] | TrainingKernels,
    pool_cap: int = 20000,
    seed: int = 0,
) -> list[WeakLearner]:
    """All (kernel, positive anchor, negative anchor) candidates, capped.

    Candidates are ordered by (kernel_id, anchor_a, anchor_b); when the full
    pool exceeds ``pool_cap`` a seeded uniform subsample of that size is taken
    (order preserved).  Thresholds are left at 0 and chosen during selection.
    """
    tk = _as_training_kernels(kernels)
    labels = np.asarray(labels)
    if labels.shape != (len(tk),):
        raise DataFormatError(f"labels shape {labels.shape} does not match {len(tk)} sets")
    pos = [tk.ids[i] for i in range(len(tk)) if labels[i] == 1]
    neg = [tk.ids[i] for i in range(len(tk)) if labels[i] == -1]
    if not pos or not neg:
        raise DegenerateDataError("weak-learner pool needs both a positive and a negative sample")
    pos.sort()
    neg.sort()
    total = len(tk.kernel_ids) * len(pos) * len(neg)
    if pool_cap < 1:
        raise DataFormatError(f"pool_cap must be >= 1, got {pool_cap}")
    if total > pool_cap:
        rng = rng_for(seed, SEED_POOL)
        keep = np.sort(rng.choice(total, size=pool_cap, replace=False))
    else:
        keep = np.arange(total)
    pool: list[WeakLearner] = []
    na, nb = len(pos), len(neg)
    for flat in keep.tolist():
        m, rem = divmod(flat, na * nb)
        ai, bi = divmod(rem, nb)
        pool.append(WeakLearner(kernel_id=tk.kernel_ids[m], anchor_a=pos[ai], anchor_b=neg[bi]))
    return pool


class _PoolScores:
    """Per-candidate score rows with their sort structure, grouped by kernel.

    Scores depend only on the kernel matrices, so boosting computes this once
    and reuses it across rounds; only the weight cumsums change per round.
    """

    def __init__(self, pool: Sequence["WeakLearner"], tk: "TrainingKernels"):
        self.order_index = sorted(
            range(len(pool)), key=lambda i: (pool[i].kernel_id, pool[i].anchor_a, pool[i].anchor_b)
        )
        self.pool = pool
        self.groups: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = []
        pos = 0
        for kid in tk.kernel_ids:
            members = [i for i in self.order_index if pool[i].kernel_id == kid]
            if not members:
                continue
            values = tk.matrices[kid]
            a_idx = np.array([tk.index[pool[i].anchor_a] for i in members])
            b_idx = np.array([tk.index[pool[i].anchor_b] for i in members])
            scores = values[a_idx] - values[b_idx]
            order = np.argsort(scores, axis=1, kind="stable")
            s_sorted = np.take_along_axis(scores, order, axis=1)
            c, n = scores.shape
            valid = np.ones((c, n + 1), dtype=bool)
            valid[:, 1:n] = s_sorted[:, :-1] < s_sorted[:, 1:]
            # positions of these members in the global candidate ordering
            global_pos = np.arange(pos, pos + len(members))
            pos += len(members)
            self.groups.append((global_pos, order, s_sorted, valid, scores))

    def select(
        self, labels: np.ndarray, weights: np.ndarray, weight_penalty: float
    ) -> tuple["WeakLearner", float]:
        wpos = weights * (labels == 1)
        wneg = weights * (labels == -1)
        best: tuple[float, int, float, float] | None = None  # (score, order pos, delta, epsilon)
        for global_pos, order, s_sorted, valid, _ in self.groups:
            pos_sorted = wpos[order]
            neg_sorted = wneg[order]
            c, n = order.shape
            zeros = np.zeros((c, 1))
            cum_pos = np.concatenate([zeros, np.cumsum(pos_sorted, axis=1)], axis=1)
            cum_neg = np.concatenate([zeros, np.cumsum(neg_sorted, axis=1)], axis=1)
            err = np.where(valid, cum_pos + (cum_neg[:, -1:] - cum_neg), np.inf)
            best_k = np.argmin(err, axis=1)
            errs = err[np.arange(c), best_k]
            if weight_penalty > 0.0:
                sel = errs + weight_penalty * np.abs([_lambda_for(e) for e in errs])
            else:
                sel = errs
            local = int(np.argmin(sel))
            score = float(sel[local])
            order_pos = int(global_pos[local])
            if best is None or score < best[0] or (score == best[0] and order_pos < best[1]):
                eps = _cut_to_epsilon(s_sorted[local], int(best_k[local]))
                best = (score, order_pos, float(errs[local]), eps)
        assert best is not None
        _, order_pos, delta, eps = best
        chosen = self.pool[self.order_index[order_pos]]
        return replace(chosen, epsilon=eps), delta


def _cut_to_epsilon(s_sorted: np.ndarray, k: int) -> float:
    """Map a cut index back to the learner threshold epsilon = -cut value."""
    n = s_sorted.size
    sentinel = float(np.max(np.abs(s_sorted))) + 1.0 if n else 1.0
    if k == 0:
        cut = -sentinel
    elif k == n:
        cut = sentinel
    else:
        cut = (float(s_sorted[k - 1]) + float(s_sorted[k])) / 2.0
    return -cut


def _lambda_for(delta: float) -> float:
    clamped = min(max(delta, DELTA_CLAMP), 0.5 - DELTA_CLAMP)
    return 0.5 * float(np.log((1.0 - clamped) / clamped))


def select_weak(
    pool: Sequence[WeakLearner],
    labels: np.ndarray,
    weights: np.ndarray,
    kernels: Sequence[KernelMatrix] | TrainingKernels,
    weight_penalty: float = 0.0,
) -> tuple[WeakLearner, float]:
    """Pick the pool candidate whose optimal threshold has least weighted error.

    The threshold search covers midpoints of the sorted per-sample score
    differences plus sentinels beyond both extremes, which exactly optimizes
    the weighted 0/1 error.  Ties go to the earliest candidate in
    (kernel_id, anchor_a, anchor_b) order and, within a candidate, to the
    lowest cut.  ``weight_penalty`` > 0 adds penalty * |vote weight| to each
    candidate's selection score, discouraging overconfident learners.
    """
    if not pool:
        raise DegenerateDataError("empty weak-learner pool")
    tk = _as_training_kernels(kernels)
    labels = np.asarray(labels, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    return _PoolScores(pool, tk).select(labels, weights, weight_penalty)


def boost(
    labels: np.ndarray,
    kernels: Sequence[KernelMatrix] | TrainingKernels,
    n_rounds: int,
    pool_cap: int = 20000,
    seed: int = 0,
    weight_penalty: float = 0.0,
) -> tuple[StrongSplit, BoostState]:
    """Run exponential-loss boosting for one hash bit.

    Stops early once the best achievable weighted error reaches 0.5 (no
    signal left); the returned split always carries at least one learner.
    Per-round errors are clamped into (0, 0.5) before computing vote weights
    so the weights stay finite.
    """
    if n_rounds < 1:
        raise DataFormatError(f"n_rounds must be >= 1, got {n_rounds}")
    tk = _as_training_kernels(kernels)
    labels = np.asarray(labels, dtype=np.float64)
    n = len(tk)
    pool = enumerate_pool(labels, tk, pool_cap=pool_cap, seed=seed)
    scored = _PoolScores(pool, tk)

    w = np.full(n, 1.0 / n)
    margin = np.zeros(n)
    learners: list[WeakLearner] = []
    lambdas: list[float] = []
    state = BoostState(sample_weights=w)

    for _ in range(n_rounds):
        f, delta = scored.select(labels, w, weight_penalty)
        if delta >= EARLY_STOP and learners:
            state.stopped_early = True
            break
        lam = _lambda_for(delta)
        preds = np.where(
            tk.row(f.kernel_id, f.anchor_a) - tk.row(f.kernel_id, f.anchor_b) + f.epsilon >= 0, 1.0, -1.0
        )
        learners.append(f)
        lambdas.append(lam)
        state.raw_round_errors.append(float(delta))
        state.round_errors.append(min(max(float(delta), DELTA_CLAMP), 0.5 - DELTA_CLAMP))
        margin = margin + lam * preds
        strong_preds = np.where(margin >= 0, 1.0, -1.0)
        state.strong_errors.append(float(np.mean(strong_preds != labels)))
        w = w * np.exp(-lam * labels * preds)
        w = w / w.sum()
        if delta >= EARLY_STOP:
            state.stopped_early = True
            break
    state.sample_weights = w
    return StrongSplit(learners=tuple(learners), weights=tuple(lambdas)), state


def split_margin(split: StrongSplit, kernel_values: Mapping[str, Mapping[str, float]]) -> float:
    """Weighted vote margin for one target.

    ``kernel_values[kernel_id][anchor_id]`` must hold the target's kernel
    similarity to every anchor the split references.
    """
    total = 0.0
    for f, lam in zip(split.learners, split.weights):
        try:
            ka = kernel_values[f.kernel_id][f.anchor_a]
            kb = kernel_values[f.kernel_id][f.anchor_b]
        except KeyError as exc:
            raise DataFormatError(f"missing kernel value for anchor {exc}") from exc
        vote = 1.0 if ka - kb + f.epsilon >= 0 else -1.0
        total += lam * vote
    return total


def eval_split(split: StrongSplit, kernel_values: Mapping[str, Mapping[str, float]]) -> int:
    """Sign of the weighted vote, sign(0) = +1."""
    return 1 if split_margin(split, kernel_values) >= 0 else -1


def eval_split_on_matrix(split: StrongSplit, kernels: Sequence[KernelMatrix] | TrainingKernels) -> np.ndarray:
    """Evaluate a split for every training set at once; returns +-1 array."""
    tk = _as_training_kernels(kernels)
    margin = np.zeros(len(tk))
    for f, lam in zip(split.learners, split.weights):
        s = tk.row(f.kernel_id, f.anchor_a) - tk.row(f.kernel_id, f.anchor_b) + f.epsilon
        margin = margin + lam * np.where(s >= 0, 1.0, -1.0)
    return np.where(margin >= 0, 1, -1)
