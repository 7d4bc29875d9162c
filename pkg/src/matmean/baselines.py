"""Competitor procedures: row-wise tests and a pairwise two-sample scan.

These are the methods a practitioner would reach for first: run a
one-way ANOVA or Kruskal-Wallis test on every row across the column
groups, correct for multiplicity, and reject if anything survives; or
compare every pair of columns with a high-dimensional two-sample mean
test under a Bonferroni correction.  They are included both as
baselines for simulation studies and because they answer a different
question (which rows differ) than the matrix-level test.

Row-wise pooling treats the N subject values within a row/column-group
cell as independent replicates, which is only valid when the noise has
no cross-correlation.  The simulation tables restrict the comparison
accordingly; outside that regime these baselines are reported for
size distortion, not as valid tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import DataStack, GroupPartition
from .engine import TestResult, trace_cov_sq_fast, z_quantile
from scipy.special import ndtr

__all__ = [
    "PValueVector",
    "PairwiseCqSummary",
    "anova_rowwise",
    "kruskal_rowwise",
    "adjust_pvalues",
    "chen_qin_two_sample",
    "pairwise_cq_procedure",
]

# rows whose within-group sum of squares falls below this relative
# level are reported as degenerate rather than fed to an F tail
_DEGENERATE_RTOL = 1e-10

_METHODS = ("raw", "fdr", "bonferroni")


@dataclass(frozen=True)
class PValueVector:
    """One p-value per row, plus which correction produced them.

    ``degenerate_rows`` lists rows whose p was pinned to 1 because the
    data could not support the test (for example a constant row).
    """

    values: np.ndarray
    method: str
    degenerate_rows: tuple[int, ...] = ()

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError("p-value vector must be a nonempty 1-d array")
        if not np.isfinite(vals).all() or (vals < 0.0).any() or (vals > 1.0).any():
            raise ValueError("p-values must lie in [0, 1]")
        if self.method not in _METHODS:
            raise ValueError(f"method must be one of {_METHODS}, got {self.method!r}")
        bad = [b for b in self.degenerate_rows if not 0 <= b < vals.size]
        if bad:
            raise ValueError(f"degenerate row indices out of range: {bad}")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "degenerate_rows", tuple(self.degenerate_rows))

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def min_value(self) -> float:
        return float(self.values.min())


def _pooled_layout(stack: DataStack, partition: GroupPartition):
    """Shared checks for the row-wise tests; returns the group indicator."""
    n, _, c = stack.values.shape
    if partition.n_cols != c:
        raise ValueError(
            f"partition covers {partition.n_cols} columns, stack has {c}"
        )
    g = partition.n_groups
    if g < 2:
        raise ValueError("row-wise tests need at least 2 column groups")
    if n < 2:
        raise ValueError("pooling needs at least 2 subjects per column")
    if n * c - g < 1:
        raise ValueError("not enough pooled observations for the error term")
    indicator = np.zeros((c, g))
    assign = np.asarray(partition.assignment) - 1
    indicator[np.arange(c), assign] = 1.0
    return indicator, assign


def anova_rowwise(stack: DataStack, partition: GroupPartition) -> PValueVector:
    """One-way F test per row, pooling subjects within column groups.

    For each of the r rows, the N values in every column are pooled by
    the column's group, giving N*c_q replicates per group, and a
    standard one-way ANOVA is run across the g groups.  Rows with no
    within-group variation are flagged and given p = 1.
    """
    indicator, _ = _pooled_layout(stack, partition)
    vals = stack.values
    n, r, c = vals.shape
    g = partition.n_groups
    counts = n * np.asarray(partition.sizes, dtype=float)
    n_tot = n * c

    col_sum = vals.sum(axis=0)
    col_sumsq = (vals * vals).sum(axis=0)
    group_sum = col_sum @ indicator
    fitted = (group_sum * group_sum / counts).sum(axis=1)
    total = col_sum.sum(axis=1)
    total_sq = col_sumsq.sum(axis=1)
    ss_between = fitted - total * total / n_tot
    ss_within = total_sq - fitted

    scale = np.maximum(total_sq, 1.0)
    degenerate = ss_within <= _DEGENERATE_RTOL * scale
    df1, df2 = g - 1, n_tot - g
    p = np.ones(r)
    live = ~degenerate
    if live.any():
        f = (ss_between[live] / df1) / (ss_within[live] / df2)
        p[live] = stats.f.sf(np.maximum(f, 0.0), df1, df2)
    return PValueVector(p, "raw", tuple(np.flatnonzero(degenerate).tolist()))


def kruskal_rowwise(stack: DataStack, partition: GroupPartition) -> PValueVector:
    """Kruskal-Wallis test per row with mid-rank tie correction.

    Same pooling as anova_rowwise but on ranks, so it is exactly
    invariant under monotone transformations of a row.  All-tied rows
    are flagged and given p = 1.
    """
    indicator, assign = _pooled_layout(stack, partition)
    vals = stack.values
    n, r, c = vals.shape
    g = partition.n_groups
    counts = n * np.asarray(partition.sizes, dtype=float)
    n_tot = n * c

    flat = vals.transpose(1, 0, 2).reshape(r, n_tot)
    ranks = stats.rankdata(flat, axis=1)
    # flattening is subject-major, so the group labels tile per subject
    labels = np.tile(indicator, (n, 1))
    rank_sum = ranks @ labels
    h = 12.0 / (n_tot * (n_tot + 1)) * (rank_sum * rank_sum / counts).sum(
        axis=1
    ) - 3.0 * (n_tot + 1)

    srt = np.sort(flat, axis=1)
    all_tied = srt[:, 0] == srt[:, -1]
    has_ties = (srt[:, 1:] == srt[:, :-1]).any(axis=1)
    correction = np.ones(r)
    for b in np.flatnonzero(has_ties & ~all_tied):
        _, tie_counts = np.unique(flat[b], return_counts=True)
        tie_sum = float((tie_counts.astype(float) ** 3 - tie_counts).sum())
        correction[b] = 1.0 - tie_sum / (n_tot**3 - n_tot)

    p = np.ones(r)
    live = ~all_tied
    if live.any():
        p[live] = stats.chi2.sf(np.maximum(h[live] / correction[live], 0.0), g - 1)
    return PValueVector(p, "raw", tuple(np.flatnonzero(all_tied).tolist()))


def _bonferroni(p: np.ndarray, m: int | None = None) -> np.ndarray:
    return np.minimum(1.0, p * (p.size if m is None else m))


def _bh_stepup(p: np.ndarray) -> np.ndarray:
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    adj_sorted = np.minimum.accumulate(scaled[::-1])[::-1]
    adj = np.empty(m)
    adj[order] = np.minimum(adj_sorted, 1.0)
    return adj


def adjust_pvalues(raw: PValueVector, method: str) -> PValueVector:
    """Multiplicity adjustment: Benjamini-Hochberg step-up or Bonferroni.

    The step-up values are computed by the usual reversed cumulative
    minimum, so they are monotone in the sorted order and never exceed
    the Bonferroni values.
    """
    if raw.method != "raw":
        raise ValueError(f"expected raw p-values, got method={raw.method!r}")
    if method == "bonferroni":
        adjusted = _bonferroni(raw.values)
    elif method == "fdr":
        adjusted = _bh_stepup(raw.values)
    else:
        raise ValueError(f"method must be 'fdr' or 'bonferroni', got {method!r}")
    return PValueVector(adjusted, method, raw.degenerate_rows)


def _offdiag_mean(gram: np.ndarray) -> float:
    n = gram.shape[0]
    return float(gram.sum() - np.trace(gram)) / (n * (n - 1))


def _cross_trace_estimate(cross: np.ndarray) -> float:
    """Unbiased estimate of tr(Sigma_1 Sigma_2) from the cross gram.

    Expands the product of two pair-averages over mutually distinct
    indices; inclusion-exclusion on the index coincidences reduces all
    four sums to row/column marginals of the cross gram, so the cost
    stays O(n1 * n2).
    """
    n1, n2 = cross.shape
    if min(n1, n2) < 2:
        raise ValueError("cross-trace estimate needs at least 2 per group")
    sq = cross * cross
    row_sum = cross.sum(axis=1)
    col_sum = cross.sum(axis=0)
    row_sq = sq.sum(axis=1)
    col_sq = sq.sum(axis=0)
    total = float(cross.sum())
    total_sq = float(sq.sum())
    t1 = total_sq / (n1 * n2)
    t2a = float((col_sum * col_sum - col_sq).sum()) / (n1 * (n1 - 1) * n2)
    t2b = float((row_sum * row_sum - row_sq).sum()) / (n1 * n2 * (n2 - 1))
    t3 = (
        total * total - float(row_sum @ row_sum) - float(col_sum @ col_sum) + total_sq
    ) / (n1 * (n1 - 1) * n2 * (n2 - 1))
    return t1 - t2a - t2b + t3


def _cq_from_grams(
    gram_a: np.ndarray,
    gram_b: np.ndarray,
    cross: np.ndarray,
    dim: int,
    alpha: float,
) -> TestResult:
    n1 = gram_a.shape[0]
    n2 = gram_b.shape[0]
    loc = (
        _offdiag_mean(gram_a)
        + _offdiag_mean(gram_b)
        - 2.0 * float(cross.sum()) / (n1 * n2)
    )
    var = (
        2.0 * trace_cov_sq_fast(gram_a) / (n1 * (n1 - 1))
        + 2.0 * trace_cov_sq_fast(gram_b) / (n2 * (n2 - 1))
        + 4.0 * _cross_trace_estimate(cross) / (n1 * n2)
    )
    common = dict(
        n_used=n1 + n2,
        r_used=dim,
        c_used=2,
        orientation="columns",
        alpha=alpha,
        dropped_columns=(),
    )
    if var <= 0.0:
        return TestResult(
            statistic=float("nan"),
            p_value=float("nan"),
            deviation_est=loc,
            trace_cov_sq=var,
            reject=None,
            failure="unstable variance estimate (nonpositive plug-in variance)",
            **common,
        )
    stat = loc / np.sqrt(var)
    return TestResult(
        statistic=float(stat),
        p_value=float(ndtr(-stat)),
        deviation_est=loc,
        trace_cov_sq=var,
        reject=bool(stat >= z_quantile(alpha)),
        **common,
    )


def chen_qin_two_sample(group1, group2, alpha: float = 0.05) -> TestResult:
    """High-dimensional two-sample mean test on two sets of vectors.

    The location statistic sums the off-diagonal gram averages within
    each group minus twice the cross average, so it estimates the
    squared mean difference without any covariance inversion.  The
    plug-in variance combines the per-group variance-scale traces with
    an unbiased cross-trace estimate.

    In the returned TestResult ``deviation_est`` is the location
    statistic and ``trace_cov_sq`` the composite variance estimate
    (there is no single-trace denominator in the two-sample case).
    """
    x = np.asarray(group1, dtype=float)
    y = np.asarray(group2, dtype=float)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ValueError(
            f"groups must be 2-d with a common dimension, got {x.shape} and {y.shape}"
        )
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("group data contain non-finite values")
    if x.shape[0] < 4 or y.shape[0] < 4:
        raise ValueError("each group needs at least 4 vectors")
    ga = x @ x.T
    ga = np.tril(ga) + np.tril(ga, -1).T
    gb = y @ y.T
    gb = np.tril(gb) + np.tril(gb, -1).T
    return _cq_from_grams(ga, gb, x @ y.T, x.shape[1], alpha)


@dataclass(frozen=True)
class PairwiseCqSummary:
    """All-pairs two-sample scan over columns with Bonferroni control.

    ``p_values`` are the raw one-sided p per pair (NaN where the pair
    test failed); ``adjusted`` multiplies by the full pair count.  The
    family-wise decision rejects when any adjusted p falls below alpha.
    """

    pairs: tuple[tuple[int, int], ...]
    p_values: tuple[float, ...]
    adjusted: tuple[float, ...]
    alpha: float
    reject: bool | None
    failed_pairs: tuple[int, ...] = ()
    failure: str | None = None

    @property
    def ok(self) -> bool:
        return self.failure is None


def pairwise_cq_procedure(stack: DataStack, alpha: float = 0.05) -> PairwiseCqSummary:
    """Run the two-sample test on every column pair of the stack.

    Each column is treated as a group of N r-vectors (dependence
    between columns is deliberately ignored; that is the procedure
    under study).  One big gram over all column vectors feeds every
    pair, so the stack is touched once.
    """
    n, r, c = stack.values.shape
    if n < 4:
        raise ValueError("pairwise scan needs at least 4 subjects")
    if c < 2:
        raise ValueError("pairwise scan needs at least 2 columns")
    flat = stack.values.transpose(2, 0, 1).reshape(c * n, r)
    big = flat @ flat.T
    big = np.tril(big) + np.tril(big, -1).T

    def block(a: int, b: int) -> np.ndarray:
        return big[a * n : (a + 1) * n, b * n : (b + 1) * n]

    pairs = [(a, b) for a in range(c) for b in range(a + 1, c)]
    raw = []
    failed = []
    for idx, (a, b) in enumerate(pairs):
        res = _cq_from_grams(block(a, a), block(b, b), block(a, b), r, alpha)
        if res.ok:
            raw.append(res.p_value)
        else:
            raw.append(float("nan"))
            failed.append(idx)
    raw_arr = np.asarray(raw)
    m = len(pairs)
    adjusted = np.where(np.isnan(raw_arr), np.nan, np.minimum(1.0, raw_arr * m))
    valid = ~np.isnan(adjusted)
    if not valid.any():
        return PairwiseCqSummary(
            pairs=tuple(pairs),
            p_values=tuple(raw_arr.tolist()),
            adjusted=tuple(adjusted.tolist()),
            alpha=alpha,
            reject=None,
            failed_pairs=tuple(failed),
            failure="every pair test failed",
        )
    reject = bool((adjusted[valid] < alpha).any())
    return PairwiseCqSummary(
        pairs=tuple(pairs),
        p_values=tuple(raw_arr.tolist()),
        adjusted=tuple(adjusted.tolist()),
        alpha=alpha,
        reject=reject,
        failed_pairs=tuple(failed),
    )
