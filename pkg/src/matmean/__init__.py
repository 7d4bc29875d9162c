"""Tests for structured means of matrix-valued observations.

A small number of subjects each contribute one r x c matrix; the package
tests whether the columns of the common mean matrix share values within
prescribed groups, without assuming normality or any covariance structure.
Baselines (row-wise ANOVA / Kruskal-Wallis with multiplicity corrections,
pairwise two-sample mean tests), a Monte Carlo harness with canned study
designs, and a batch CLI round out the toolkit.
"""

from .baselines import (
    PairwiseCqSummary,
    PValueVector,
    adjust_pvalues,
    anova_rowwise,
    chen_qin_two_sample,
    kruskal_rowwise,
    pairwise_cq_procedure,
)
from .core import (
    DataStack,
    GroupPartition,
    ProjectionMatrix,
    build_projection,
    deviation,
)
from .covariance import (
    Ar1Factor,
    BlockDiagonalCovariance,
    CompoundCovariance,
    CompoundFactor,
    DenseCovariance,
    DenseFactor,
    IdentityCovariance,
    KroneckerCovariance,
    covariance_from_dict,
    sqrt_factor,
)
from .engine import (
    TestResult,
    analytic_power,
    compute_gram,
    deviation_estimate,
    mean_matrix_test,
    test_known_difference,
    test_known_matrix,
    trace_cov_sq_fast,
    trace_cov_sq_naive,
    trace_ratio_diagnostic,
    z_quantile,
)
from .io import LoadedStack, load_stack, read_row_sets, write_stack_file
from .presets import PRESET_NAMES, build_preset
from .simulate import (
    MethodOutcome,
    MultiplicativeMean,
    NoiseScenario,
    RejectionReport,
    RightBlockMean,
    SimConfig,
    SparseMean,
    ZeroMean,
    calibrate_mean,
    gen_noise,
    gen_stack,
    monte_carlo,
    replicate_rng,
)

__version__ = "0.1.0"

__all__ = [
    "Ar1Factor",
    "BlockDiagonalCovariance",
    "CompoundCovariance",
    "CompoundFactor",
    "DataStack",
    "DenseCovariance",
    "DenseFactor",
    "GroupPartition",
    "IdentityCovariance",
    "KroneckerCovariance",
    "LoadedStack",
    "MethodOutcome",
    "MultiplicativeMean",
    "NoiseScenario",
    "PRESET_NAMES",
    "PairwiseCqSummary",
    "ProjectionMatrix",
    "PValueVector",
    "RejectionReport",
    "RightBlockMean",
    "SimConfig",
    "SparseMean",
    "TestResult",
    "ZeroMean",
    "adjust_pvalues",
    "analytic_power",
    "anova_rowwise",
    "build_preset",
    "build_projection",
    "calibrate_mean",
    "chen_qin_two_sample",
    "compute_gram",
    "covariance_from_dict",
    "deviation",
    "deviation_estimate",
    "gen_noise",
    "gen_stack",
    "kruskal_rowwise",
    "load_stack",
    "mean_matrix_test",
    "monte_carlo",
    "pairwise_cq_procedure",
    "read_row_sets",
    "replicate_rng",
    "sqrt_factor",
    "test_known_difference",
    "test_known_matrix",
    "trace_cov_sq_fast",
    "trace_cov_sq_naive",
    "trace_ratio_diagnostic",
    "write_stack_file",
    "z_quantile",
]
