"""Shared test helpers: synthetic datasets and fabricated kernel instances."""

from __future__ import annotations

import numpy as np
import pytest

from sethash.core import PointSet, SetDataset
from sethash.kernels import KERNEL_IDS, KernelMatrix
from sethash.boosting import TrainingKernels


def make_cluster_dataset(
    n_classes: int,
    sets_per_class: int,
    points_per_set: int = 10,
    dim: int = 8,
    spread: float = 0.6,
    center_scale: float = 3.0,
    seed: int = 0,
    labeled: bool = True,
) -> SetDataset:
    """Gaussian class centers with per-set jitter; mirrors the synth generator."""
    rng = np.random.default_rng(seed)
    centers = center_scale * rng.standard_normal((n_classes, dim))
    sets = []
    idx = 0
    for c in range(n_classes):
        for _ in range(sets_per_class):
            offset = spread * rng.standard_normal(dim)
            pts = centers[c] + offset + 0.5 * spread * rng.standard_normal((points_per_set, dim))
            sets.append(PointSet(id=f"set{idx:04d}", points=pts, label=(c + 1) if labeled else None))
            idx += 1
    return SetDataset(tuple(sets))


def random_point_set(rng: np.random.Generator, set_id: str, n: int, dim: int, label: int | None = None) -> PointSet:
    return PointSet(id=set_id, points=rng.standard_normal((n, dim)), label=label)


def fabricated_kernels(rng: np.random.Generator, n: int) -> TrainingKernels:
    """Random symmetric unit-diagonal matrices posing as kernel matrices."""
    ids = tuple(f"s{i:03d}" for i in range(n))
    mats = []
    for kid in KERNEL_IDS:
        v = rng.random((n, n))
        v = (v + v.T) / 2.0
        np.fill_diagonal(v, 1.0)
        mats.append(KernelMatrix(kernel_id=kid, row_ids=ids, col_ids=ids, values=v))
    return TrainingKernels(mats)


def two_cluster_kernels(n_pos: int, n_neg: int, within: float = 0.9, across: float = 0.1) -> tuple[TrainingKernels, np.ndarray]:
    """Block-structured kernels where one hypercut separates the clusters."""
    n = n_pos + n_neg
    ids = tuple(f"s{i:03d}" for i in range(n))
    labels = np.array([1.0] * n_pos + [-1.0] * n_neg)
    block = np.where(labels[:, None] == labels[None, :], within, across)
    np.fill_diagonal(block, 1.0)
    mats = [KernelMatrix(kernel_id=kid, row_ids=ids, col_ids=ids, values=block.copy()) for kid in KERNEL_IDS]
    return TrainingKernels(mats), labels


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
