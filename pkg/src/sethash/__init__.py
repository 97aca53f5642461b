"""Set-to-set hashing: kernel set representations, boosted binary hash
functions, and exact Hamming-space retrieval with an evaluation harness."""

from .core import (
    HashCode,
    PointSet,
    SetDataset,
    TrainSplit,
    hamming_distance,
    split_qr,
)
from .errors import (
    ConfigError,
    DataFormatError,
    DegenerateDataError,
    DimensionMismatchError,
    FormatVersionError,
    MissingFileError,
    SetHashError,
)
from .kernels import (
    STATISTICAL,
    STRUCTURAL,
    AffinityMatrix,
    CovarianceDescriptor,
    KernelMatrix,
    KernelParams,
    build_affinity,
    covariance,
    kernel_matrix,
    kernel_pca_init,
    statistical_kernel,
    structural_kernel,
)
from .boosting import (
    BoostState,
    StrongSplit,
    WeakLearner,
    boost,
    enumerate_pool,
    eval_split,
    eval_weak,
    select_weak,
)
from .trainer import (
    HashModel,
    TrainerConfig,
    cross_train,
    load_model,
    objective_dc,
    objective_ds,
    optimize_codes_ds,
    optimize_codes_joint,
    save_model,
    train,
)
from .index import (
    CodeIndex,
    RankedResult,
    build_index,
    load_code_index,
    lookup_radius,
    rank,
    save_code_index,
)
from .evaluate import (
    EvalConfig,
    LshBaseline,
    MetricReport,
    average_precision,
    emit_curves,
    evaluate,
    lsh_baseline_train,
    parse_curves,
)

__version__ = "0.1.0"
