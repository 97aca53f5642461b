"""Set similarity kernels and kernel PCA.

Two kernels are provided:

* ``structural`` — compares the point clouds of two sets directly.  Each set
  gets a binary affinity graph (edge iff point distance <= mu); every point is
  weighted by the reciprocal of its graph degree, and the kernel is the
  degree-weighted average of a Gaussian base similarity over all cross-set
  point pairs, normalized so the value lies in (0, 1].
* ``statistical`` — a Gaussian kernel on the log-Euclidean distance between
  regularized set covariance matrices.

Both are exactly symmetric at the floating-point level: the structural kernel
canonicalizes argument order by set id, and the statistical kernel's distance
computation is order-invariant by construction.
"""

from __future__ import annotations

import hashlib
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import PointSet, SetDataset
from .errors import DataFormatError, DegenerateDataError, DimensionMismatchError, FormatVersionError

STRUCTURAL = "structural"
STATISTICAL = "statistical"
# Lexicographic order; also the tie-break order for weak-learner selection.
KERNEL_IDS = (STATISTICAL, STRUCTURAL)

EIGENVALUE_FLOOR = 1e-12
SUBSAMPLE_CAP = 2048

__all__ = [
    "STRUCTURAL",
    "STATISTICAL",
    "KERNEL_IDS",
    "KernelParams",
    "AffinityMatrix",
    "CovarianceDescriptor",
    "KernelMatrix",
    "build_affinity",
    "structural_kernel",
    "covariance",
    "statistical_kernel",
    "kernel_matrix",
    "kernel_pca_init",
    "SetFeatures",
    "save_kernel_matrix",
    "load_kernel_matrix",
    "cached_kernel_matrix",
]


def _sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # Explicit differences keep the result bitwise-symmetric under argument
    # swap and avoid the cancellation of the dot-product shortcut.
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


@dataclass(frozen=True)
class KernelParams:
    """Kernel hyperparameters.  ``None`` means "derive from training data".

    * ``mu``: affinity distance threshold; None selects, per set, the median
      pairwise point distance within that set.
    * ``gamma_g``: bandwidth of the Gaussian base similarity; None resolves to
      1 / (2 m^2) with m the mean pairwise point distance over a deterministic
      subsample of the training points.
    * ``gamma_s``: bandwidth of the covariance kernel; None resolves to the
      mean pairwise log-Euclidean distance between training descriptors.
    * ``cov_ridge``: scale of the trace-proportional ridge added to every
      covariance matrix before taking the matrix logarithm.
    """

    mu: float | None = None
    gamma_g: float | None = None
    gamma_s: float | None = None
    cov_ridge: float = 1e-3

    def __post_init__(self) -> None:
        if self.mu is not None and self.mu <= 0:
            raise DataFormatError(f"mu must be positive, got {self.mu}")
        if self.gamma_g is not None and self.gamma_g <= 0:
            raise DataFormatError(f"gamma_g must be positive, got {self.gamma_g}")
        if self.gamma_s is not None and self.gamma_s <= 0:
            raise DataFormatError(f"gamma_s must be positive, got {self.gamma_s}")
        if self.cov_ridge < 0:
            raise DataFormatError(f"cov_ridge must be non-negative, got {self.cov_ridge}")

    @property
    def resolved(self) -> bool:
        return self.gamma_g is not None and self.gamma_s is not None

    def resolve(self, data: SetDataset) -> "KernelParams":
        """Fill in data-derived bandwidths; already-set values are kept.

        Deterministic: the point subsample is a fixed stride over the stacked
        training points, no randomness involved.
        """
        gamma_g = self.gamma_g
        gamma_s = self.gamma_s
        if gamma_g is None:
            stacked = np.vstack([s.points for s in data.sets])
            if stacked.shape[0] > SUBSAMPLE_CAP:
                stride = int(np.ceil(stacked.shape[0] / SUBSAMPLE_CAP))
                stacked = stacked[::stride]
            d2 = _sq_dists(stacked, stacked)
            iu = np.triu_indices(stacked.shape[0], k=1)
            m = float(np.mean(np.sqrt(d2[iu]))) if iu[0].size else 0.0
            gamma_g = 1.0 / (2.0 * m * m) if m > 0 else 1.0
        if gamma_s is None:
            logs = np.stack([covariance(s, self.cov_ridge).log_matrix.ravel() for s in data.sets])
            d2 = _sq_dists(logs, logs)
            iu = np.triu_indices(logs.shape[0], k=1)
            m = float(np.mean(np.sqrt(d2[iu]))) if iu[0].size else 0.0
            gamma_s = m if m > 0 else 1.0
        return replace(self, gamma_g=gamma_g, gamma_s=gamma_s)


@dataclass(frozen=True)
class AffinityMatrix:
    """Binary within-set adjacency: 1 iff point distance <= mu, diagonal all 1."""

    entries: np.ndarray
    row_degrees: np.ndarray

    def __post_init__(self) -> None:
        e = np.asarray(self.entries, dtype=bool)
        deg = np.asarray(self.row_degrees, dtype=np.int64)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise DataFormatError("affinity matrix must be square")
        if not np.all(e == e.T) or not np.all(np.diag(e)):
            raise DataFormatError("affinity matrix must be symmetric with an all-ones diagonal")
        if not np.array_equal(deg, e.sum(axis=1)):
            raise DataFormatError("row degrees do not match entries")
        e.setflags(write=False)
        deg.setflags(write=False)
        object.__setattr__(self, "entries", e)
        object.__setattr__(self, "row_degrees", deg)


def build_affinity(point_set: PointSet, mu: float | None = None) -> AffinityMatrix:
    """Quantize pairwise distances into a binary affinity graph.

    ``mu=None`` uses the median pairwise distance within the set, which keeps
    the graph meaningful regardless of feature scale.
    """
    pts = point_set.points
    dists = np.sqrt(np.maximum(_sq_dists(pts, pts), 0.0))
    if mu is None:
        iu = np.triu_indices(pts.shape[0], k=1)
        mu = float(np.median(dists[iu])) if iu[0].size else 0.0
    elif mu <= 0:
        raise DataFormatError(f"mu must be positive, got {mu}")
    entries = dists <= mu
    np.fill_diagonal(entries, True)
    entries &= entries.T
    return AffinityMatrix(entries=entries, row_degrees=entries.sum(axis=1))


def structural_kernel(
    xi: PointSet,
    xj: PointSet,
    ai: AffinityMatrix,
    aj: AffinityMatrix,
    gamma_g: float,
) -> float:
    """Degree-weighted Gaussian similarity between two point clouds.

    Each point contributes with weight 1/degree; the value is the weighted
    mean of exp(-gamma_g * ||x - y||^2) over all cross-set point pairs,
    hence in (0, 1] and symmetric.
    """
    if xi.dim != xj.dim:
        raise DimensionMismatchError(f"sets {xi.id!r} and {xj.id!r} have different dimensions")
    # Canonical argument order makes the pair value bitwise-reproducible no
    # matter which way round the caller asks.
    if xj.id < xi.id:
        xi, xj = xj, xi
        ai, aj = aj, ai
    wi = 1.0 / ai.row_degrees.astype(np.float64)
    wj = 1.0 / aj.row_degrees.astype(np.float64)
    base = np.exp(-gamma_g * _sq_dists(xi.points, xj.points))
    value = float(wi @ base @ wj) / (float(wi.sum()) * float(wj.sum()))
    return min(value, 1.0)


@dataclass(frozen=True)
class CovarianceDescriptor:
    """A regularized set covariance matrix with its matrix logarithm cached."""

    matrix: np.ndarray
    log_matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.float64)
        lm = np.asarray(self.log_matrix, dtype=np.float64)
        if m.shape != lm.shape or m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DataFormatError("covariance and log matrices must be square and the same shape")
        m.setflags(write=False)
        lm.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "log_matrix", lm)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def covariance(point_set: PointSet, cov_ridge: float = 1e-3) -> CovarianceDescriptor:
    """Set covariance (1/n normalization) with a trace-scaled ridge.

    The ridge is ``cov_ridge * max(trace(C)/d, 1e-12) * I``; it makes the
    matrix logarithm well defined even when n < d leaves C rank-deficient.
    The log is taken through a symmetric eigendecomposition with eigenvalues
    clamped at 1e-12.
    """
    pts = point_set.points
    n, d = pts.shape
    centered = pts - pts.mean(axis=0)
    c = centered.T @ centered / n
    c = (c + c.T) / 2.0
    lam = cov_ridge * max(float(np.trace(c)) / d, EIGENVALUE_FLOOR)
    c = c + lam * np.eye(d)
    evals, evecs = np.linalg.eigh(c)
    log_m = (evecs * np.log(np.maximum(evals, EIGENVALUE_FLOOR))) @ evecs.T
    log_m = (log_m + log_m.T) / 2.0
    return CovarianceDescriptor(matrix=c, log_matrix=log_m)


def statistical_kernel(ci: CovarianceDescriptor, cj: CovarianceDescriptor, gamma_s: float) -> float:
    """Gaussian kernel on the Frobenius distance between matrix logarithms.

    Equals 1 exactly iff the log matrices coincide.
    """
    if ci.dim != cj.dim:
        raise DimensionMismatchError("covariance descriptors have different dimensions")
    diff = ci.log_matrix - cj.log_matrix
    d2 = float(np.einsum("ij,ij->", diff, diff))
    return float(np.exp(-d2 / (2.0 * gamma_s * gamma_s)))


@dataclass(frozen=True)
class SetFeatures:
    """Per-set quantities needed to evaluate kernels against that set."""

    point_set: PointSet
    affinity: AffinityMatrix
    descriptor: CovarianceDescriptor

    @classmethod
    def compute(cls, point_set: PointSet, params: KernelParams) -> "SetFeatures":
        return cls(
            point_set=point_set,
            affinity=build_affinity(point_set, params.mu),
            descriptor=covariance(point_set, params.cov_ridge),
        )


def pair_kernel(kernel_id: str, fi: SetFeatures, fj: SetFeatures, params: KernelParams) -> float:
    if not params.resolved:
        raise DataFormatError("kernel params must be resolved before evaluation")
    if kernel_id == STRUCTURAL:
        return structural_kernel(fi.point_set, fj.point_set, fi.affinity, fj.affinity, params.gamma_g)
    if kernel_id == STATISTICAL:
        return statistical_kernel(fi.descriptor, fj.descriptor, params.gamma_s)
    raise DataFormatError(f"unknown kernel id {kernel_id!r}")


@dataclass(frozen=True)
class KernelMatrix:
    """Pairwise set similarities under one named kernel."""

    kernel_id: str
    row_ids: tuple[str, ...]
    col_ids: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.kernel_id not in KERNEL_IDS:
            raise DataFormatError(f"unknown kernel id {self.kernel_id!r}")
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (len(self.row_ids), len(self.col_ids)):
            raise DataFormatError("kernel matrix shape does not match id lists")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "row_ids", tuple(self.row_ids))
        object.__setattr__(self, "col_ids", tuple(self.col_ids))

    @property
    def is_square(self) -> bool:
        return self.row_ids == self.col_ids


def kernel_matrix(
    rows: SetDataset,
    cols: SetDataset,
    kernel_id: str,
    params: KernelParams,
    threads: int | None = None,
) -> KernelMatrix:
    """Assemble the full pairwise kernel matrix.

    When ``rows`` and ``cols`` are the same dataset only the upper triangle is
    computed and mirrored, so the result is exactly symmetric.  Entries are
    computed through the same pairwise functions used for single evaluations,
    which keeps training-time and encoding-time values bit-identical.
    """
    if rows.dim != cols.dim:
        raise DimensionMismatchError(f"row dim {rows.dim} != col dim {cols.dim}")
    row_feats = [SetFeatures.compute(s, params) for s in rows.sets]
    same = rows.ids == cols.ids
    col_feats = row_feats if same else [SetFeatures.compute(s, params) for s in cols.sets]
    values = np.empty((len(rows), len(cols)), dtype=np.float64)

    def fill_row(i: int) -> None:
        start = i if same else 0
        for j in range(start, len(cols)):
            values[i, j] = pair_kernel(kernel_id, row_feats[i], col_feats[j], params)

    nthreads = threads or 1
    if nthreads > 1:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            list(pool.map(fill_row, range(len(rows))))
    else:
        for i in range(len(rows)):
            fill_row(i)
    if same:
        iu = np.triu_indices(len(rows), k=1)
        values[(iu[1], iu[0])] = values[iu]
    return KernelMatrix(kernel_id=kernel_id, row_ids=rows.ids, col_ids=cols.ids, values=values)


def kernel_pca_init(kernel: KernelMatrix, n_components: int) -> np.ndarray:
    """Project training sets onto the top principal components in kernel space.

    The kernel matrix is double-centered and eigendecomposed; column k of the
    result is the centered matrix applied to eigenvector k (equivalently the
    eigenvector scaled by its eigenvalue).  Eigenvector signs are fixed by
    making each vector's largest-magnitude entry positive, so the output is
    reproducible across runs.
    """
    if not kernel.is_square:
        raise DataFormatError("kernel PCA needs a square kernel matrix over one dataset")
    n = len(kernel.row_ids)
    if n_components < 1 or n_components > n:
        raise DegenerateDataError(f"n_components must be in [1, {n}], got {n_components}")
    k = kernel.values
    row_mean = k.mean(axis=1, keepdims=True)
    col_mean = k.mean(axis=0, keepdims=True)
    centered = k - row_mean - col_mean + k.mean()
    centered = (centered + centered.T) / 2.0
    evals, evecs = np.linalg.eigh(centered)
    order = np.argsort(evals)[::-1][:n_components]
    top_vecs = evecs[:, order]
    top_vals = evals[order]
    flip = top_vecs[np.argmax(np.abs(top_vecs), axis=0), np.arange(n_components)] < 0
    top_vecs[:, flip] *= -1.0
    return top_vecs * top_vals


# ---------------------------------------------------------------------------
# Disk cache for kernel matrices

CACHE_MAGIC = b"SSKC"
CACHE_VERSION = 1


def _params_digest(kernel_id: str, params: KernelParams, rows: SetDataset, cols: SetDataset) -> str:
    h = hashlib.sha256()
    h.update(kernel_id.encode())
    h.update(
        json.dumps(
            {"mu": params.mu, "gamma_g": params.gamma_g, "gamma_s": params.gamma_s, "cov_ridge": params.cov_ridge},
            sort_keys=True,
        ).encode()
    )
    for ds in (rows, cols):
        for s in ds.sets:
            h.update(s.id.encode())
            h.update(s.points.tobytes())
    return h.hexdigest()


def save_kernel_matrix(kernel: KernelMatrix, path: str | Path, digest: str = "") -> None:
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<I", CACHE_VERSION))
        header = json.dumps(
            {
                "kernel_id": kernel.kernel_id,
                "digest": digest,
                "row_ids": list(kernel.row_ids),
                "col_ids": list(kernel.col_ids),
            },
            sort_keys=True,
        ).encode()
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(kernel.values.astype("<f8").tobytes())


def load_kernel_matrix(path: str | Path) -> tuple[KernelMatrix, str]:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != CACHE_MAGIC:
        raise FormatVersionError(f"{path}: not a kernel cache file")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CACHE_VERSION:
        raise FormatVersionError(f"{path}: unsupported kernel cache version {version}")
    (hlen,) = struct.unpack_from("<I", raw, 8)
    header = json.loads(raw[12 : 12 + hlen])
    rows = header["row_ids"]
    cols = header["col_ids"]
    values = np.frombuffer(raw, dtype="<f8", offset=12 + hlen).reshape(len(rows), len(cols))
    km = KernelMatrix(
        kernel_id=header["kernel_id"], row_ids=tuple(rows), col_ids=tuple(cols), values=values.copy()
    )
    return km, header["digest"]


def cached_kernel_matrix(
    rows: SetDataset,
    cols: SetDataset,
    kernel_id: str,
    params: KernelParams,
    cache_dir: str | Path | None,
    threads: int | None = None,
) -> KernelMatrix:
    """kernel_matrix with an optional content-addressed disk cache."""
    if cache_dir is None:
        return kernel_matrix(rows, cols, kernel_id, params, threads=threads)
    digest = _params_digest(kernel_id, params, rows, cols)
    cache_path = Path(cache_dir) / f"{digest}.kmat"
    if cache_path.is_file():
        km, stored = load_kernel_matrix(cache_path)
        if stored == digest and km.kernel_id == kernel_id:
            return km
    km = kernel_matrix(rows, cols, kernel_id, params, threads=threads)
    Path(cache_dir).mkdir(parents=True, exist_ok=True)
    save_kernel_matrix(km, cache_path, digest=digest)
    return km
