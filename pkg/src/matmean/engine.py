"""Tests for grouped column-mean structure in stacks of matrices.

The workhorse statistic compares subjects pairwise through the gram
matrix of their projected, vectorized data.  Averaging the off-diagonal
gram entries over ordered pairs gives an unbiased estimate of the
squared projected mean; a three-part U-statistic over distinct index
tuples estimates the variance scale.  Their ratio is asymptotically
standard normal when the grouped-mean hypothesis holds, with rejection
for large positive values.

All estimators work for any number of subjects N >= 4, with cost
O(N^2 r c + N r c^2) per test; no per-row covariance estimation is
involved, so r may vastly exceed N.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .core import (
    DataStack,
    GroupPartition,
    ProjectionMatrix,
    build_projection,
    deviation,
    drop_singletons,
)

__all__ = [
    "TestResult",
    "compute_gram",
    "deviation_estimate",
    "trace_cov_sq_naive",
    "trace_cov_sq_fast",
    "mean_matrix_test",
    "test_known_matrix",
    "test_known_difference",
    "analytic_power",
    "trace_ratio_diagnostic",
]

MIN_SUBJECTS = 4


def z_quantile(alpha: float) -> float:
    """Upper-tail standard normal quantile used as the rejection cutoff."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    return float(ndtri(1.0 - alpha))


@dataclass(frozen=True)
class TestResult:
    """Outcome of a one-sided standardized mean-structure test.

    ``deviation_est`` estimates the squared projected mean (zero under
    the hypothesis) and ``trace_cov_sq`` the variance-scale trace used
    in the denominator.  ``failure`` is set instead of a statistic when
    the data are too degenerate to standardize; all float fields are
    NaN in that case.
    """

    statistic: float
    p_value: float
    deviation_est: float
    trace_cov_sq: float
    n_used: int
    r_used: int
    c_used: int
    orientation: str
    alpha: float
    reject: bool | None
    failure: str | None = None
    dropped_columns: tuple[int, ...] = ()

    @property
    def ok(self) -> bool:
        return self.failure is None

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "deviation_est": self.deviation_est,
            "trace_cov_sq": self.trace_cov_sq,
            "n_used": self.n_used,
            "r_used": self.r_used,
            "c_used": self.c_used,
            "orientation": self.orientation,
            "alpha": self.alpha,
            "reject": self.reject,
            "failure": self.failure,
            "dropped_columns": list(self.dropped_columns),
        }


def compute_gram(stack: DataStack, projection: ProjectionMatrix) -> np.ndarray:
    """N x N gram matrix of the projected, vectorized subject data.

    Entry (i, j) is the Frobenius inner product of X_i P and X_j P,
    which equals tr(X_i' X_j P) because P is idempotent.  Projecting
    each subject once keeps the cost at O(N r c^2 + N^2 r c).
    """
    if stack.n_cols != projection.n_cols:
        raise ValueError(
            f"stack has {stack.n_cols} columns, projection expects "
            f"{projection.n_cols}"
        )
    xp = stack.values @ projection.values
    y = xp.reshape(stack.n_subjects, -1)
    g = y @ y.T
    # enforce exact symmetry; BLAS output can differ in the last ulp
    lower = np.tril(g)
    return lower + np.tril(g, -1).T


def deviation_estimate(gram: np.ndarray) -> float:
    """Average off-diagonal gram entry over ordered pairs.

    Unbiased for the squared projected mean: diagonal entries are
    excluded precisely because they carry the noise variance.
    """
    n = _gram_size(gram, minimum=2)
    off_sum = float(gram.sum() - np.trace(gram))
    return off_sum / (n * (n - 1))


def trace_cov_sq_naive(gram: np.ndarray) -> float:
    """Reference implementation of the variance-scale estimator.

    Sums over explicit ordered tuples of distinct indices, so the cost
    is O(N^4).  Kept as the oracle for the fast version; do not use on
    large N.
    """
    n = _gram_size(gram, minimum=MIN_SUBJECTS)
    a = np.asarray(gram, dtype=float)
    term1 = sum(a[i, j] ** 2 for i, j in itertools.permutations(range(n), 2))
    term2 = sum(
        a[i, j] * a[i, k] for i, j, k in itertools.permutations(range(n), 3)
    )
    term3 = sum(
        a[i, j] * a[k, l] for i, j, k, l in itertools.permutations(range(n), 4)
    )
    d2 = n * (n - 1)
    d3 = d2 * (n - 2)
    d4 = d3 * (n - 3)
    return term1 / d2 - 2.0 * term2 / d3 + term3 / d4


def trace_cov_sq_fast(gram: np.ndarray) -> float:
    """O(N^2) evaluation of the variance-scale estimator.

    With b the gram matrix with its diagonal zeroed, the three tuple
    sums reduce to S2, sum_i row_i^2 - S2, and S1^2 - 2 S2 - 4 P3,
    where S1 and S2 are the total sum and total squared sum of b and
    P3 the middle quantity.
    """
    n = _gram_size(gram, minimum=MIN_SUBJECTS)
    b = np.asarray(gram, dtype=float).copy()
    np.fill_diagonal(b, 0.0)
    s1 = float(b.sum())
    s2 = float((b * b).sum())
    rows = b.sum(axis=1)
    p3 = float(rows @ rows) - s2
    quad = s1 * s1 - 2.0 * s2 - 4.0 * p3
    d2 = n * (n - 1)
    d3 = d2 * (n - 2)
    d4 = d3 * (n - 3)
    return s2 / d2 - 2.0 * p3 / d3 + quad / d4


def _gram_size(gram: np.ndarray, minimum: int) -> int:
    gram = np.asarray(gram)
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        raise ValueError(f"gram matrix must be square, got shape {gram.shape}")
    n = gram.shape[0]
    if n < minimum:
        raise ValueError(f"need at least {minimum} subjects, got {n}")
    return n


def _standardized_result(
    y: np.ndarray,
    alpha: float,
    r_used: int,
    c_used: int,
    orientation: str,
    dropped: tuple[int, ...] = (),
) -> TestResult:
    """Shared tail end of every test: gram, estimates, one-sided p."""
    n = y.shape[0]
    if n < MIN_SUBJECTS:
        raise ValueError(
            f"the variance estimator needs at least {MIN_SUBJECTS} subjects, got {n}"
        )
    g = y @ y.T
    gram = np.tril(g) + np.tril(g, -1).T
    dev = deviation_estimate(gram)
    tsq = trace_cov_sq_fast(gram)
    common = dict(
        n_used=n,
        r_used=r_used,
        c_used=c_used,
        orientation=orientation,
        alpha=alpha,
        dropped_columns=dropped,
    )
    if tsq <= 0.0:
        return TestResult(
            statistic=float("nan"),
            p_value=float("nan"),
            deviation_est=dev,
            trace_cov_sq=tsq,
            reject=None,
            failure="unstable variance estimate (nonpositive trace estimate)",
            **common,
        )
    stat = dev / np.sqrt(2.0 * tsq / (n * (n - 1)))
    p = float(ndtr(-stat))
    return TestResult(
        statistic=float(stat),
        p_value=p,
        deviation_est=dev,
        trace_cov_sq=tsq,
        reject=bool(stat >= z_quantile(alpha)),
        **common,
    )


def mean_matrix_test(
    stack: DataStack,
    partition: GroupPartition,
    alpha: float = 0.05,
    orientation: str = "columns",
) -> TestResult:
    """Test whether column means coincide within each group.

    Columns in singleton groups are removed first; they cannot move
    the statistic and only sit outside every comparison.  Pass
    ``orientation="rows"`` to test a grouping of the rows instead, in
    which case the partition must cover the r rows.

    Returns a TestResult; when the projected data are fully degenerate
    (for example identical subjects with group-constant columns) the
    result carries a ``failure`` message instead of a statistic.
    """
    if orientation not in ("columns", "rows"):
        raise ValueError(f"orientation must be 'columns' or 'rows', got {orientation!r}")
    work = stack.transposed() if orientation == "rows" else stack
    if partition.n_cols != work.n_cols:
        raise ValueError(
            f"partition covers {partition.n_cols} columns but the "
            f"{orientation} dimension is {work.n_cols}"
        )
    if partition.max_group_size < 2:
        raise ValueError(
            "partition needs at least one group of size >= 2; "
            "all groups are singletons"
        )
    dropped = partition.singleton_columns()
    work, partition = drop_singletons(work, partition)
    projection = build_projection(partition)
    xp = work.values @ projection.values
    y = xp.reshape(work.n_subjects, -1)
    return _standardized_result(
        y,
        alpha,
        r_used=work.n_rows,
        c_used=work.n_cols,
        orientation=orientation,
        dropped=dropped,
    )


def test_known_matrix(stack: DataStack, m0: np.ndarray, alpha: float = 0.05) -> TestResult:
    """Test whether the mean matrix equals a fully specified ``m0``.

    Subjects are centered by ``m0`` and compared without any column
    projection, so every entry contributes and no group-size rule
    applies.
    """
    m0 = np.asarray(m0, dtype=float)
    if m0.shape != (stack.n_rows, stack.n_cols):
        raise ValueError(
            f"m0 has shape {m0.shape}, expected {(stack.n_rows, stack.n_cols)}"
        )
    if not np.isfinite(m0).all():
        raise ValueError("m0 contains non-finite values")
    y = (stack.values - m0).reshape(stack.n_subjects, -1)
    return _standardized_result(
        y, alpha, r_used=stack.n_rows, c_used=stack.n_cols, orientation="columns"
    )


def test_known_difference(
    stack: DataStack,
    mu0: np.ndarray | float,
    col_a: int,
    col_b: int,
    alpha: float = 0.05,
) -> TestResult:
    """Test whether column ``col_a`` exceeds column ``col_b`` by ``mu0``.

    ``mu0`` may be a scalar or a length-r vector; it is subtracted
    from column ``col_a`` and the two columns are then tested as one
    group of two.  Equivalent to embedding the pair in a full
    partition with every other column a singleton.
    """
    c = stack.n_cols
    if not (0 <= col_a < c and 0 <= col_b < c) or col_a == col_b:
        raise ValueError(
            f"need two distinct column indices in 0..{c - 1}, got {col_a}, {col_b}"
        )
    mu0 = np.asarray(mu0, dtype=float)
    if mu0.ndim not in (0, 1) or (mu0.ndim == 1 and mu0.shape[0] != stack.n_rows):
        raise ValueError(f"mu0 must be a scalar or length-{stack.n_rows} vector")
    if not np.isfinite(mu0).all():
        raise ValueError("mu0 contains non-finite values")
    pair = np.stack(
        [stack.values[:, :, col_a] - mu0, stack.values[:, :, col_b]], axis=2
    )
    sub = DataStack(pair)
    projection = build_projection(GroupPartition((1, 1)))
    xp = sub.values @ projection.values
    y = xp.reshape(sub.n_subjects, -1)
    return _standardized_result(
        y, alpha, r_used=stack.n_rows, c_used=2, orientation="columns"
    )


def _materialize_sigma(sigma, r: int, c: int) -> np.ndarray:
    if hasattr(sigma, "materialize"):
        return np.asarray(sigma.materialize(r, c), dtype=float)
    sig = np.asarray(sigma, dtype=float)
    if sig.shape != (r * c, r * c):
        raise ValueError(
            f"covariance has shape {sig.shape}, expected {(r * c, r * c)}"
        )
    return sig


def analytic_power(
    m: np.ndarray,
    projection: ProjectionMatrix,
    sigma,
    n_subjects: int,
    alpha: float = 0.05,
    regime: str = "weak_signal",
) -> float:
    """Asymptotic power at mean ``m`` under a known covariance.

    Two closed forms cover the two limit regimes.  ``weak_signal``
    applies when the null variance term dominates:

        Phi(-z_alpha + N * dev / sqrt(2 tr(Omega^2)))

    where dev is the squared projected mean and Omega the covariance
    of the projected vectorized data.  ``strong_signal`` applies when
    the mean term dominates:

        Phi(sqrt(N) * dev / (2 sqrt(v' Sigma v))),   v = vec(M P).

    The covariance is materialized, so r*c is capped; use these for
    planning at moderate sizes.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[1] != projection.n_cols:
        raise ValueError(
            f"mean matrix shape {m.shape} does not match projection on "
            f"{projection.n_cols} columns"
        )
    if regime not in ("weak_signal", "strong_signal"):
        raise ValueError(
            f"regime must be 'weak_signal' or 'strong_signal', got {regime!r}"
        )
    r, c = m.shape
    sig = _materialize_sigma(sigma, r, c)
    dev = deviation(m, projection)
    if regime == "weak_signal":
        k = np.kron(projection.values, np.eye(r))
        omega = k @ sig @ k
        tr2 = float((omega * omega).sum())
        if tr2 <= 0.0:
            raise ValueError("degenerate covariance: tr(Omega^2) is zero")
        return float(ndtr(-z_quantile(alpha) + n_subjects * dev / np.sqrt(2.0 * tr2)))
    mp_vec = (m @ projection.values).ravel(order="F")
    quad = float(mp_vec @ sig @ mp_vec)
    if quad <= 0.0:
        raise ValueError(
            "strong-signal regime needs a nonzero projected mean under Sigma"
        )
    return float(ndtr(np.sqrt(n_subjects) * dev / (2.0 * np.sqrt(quad))))


def trace_ratio_diagnostic(sigma, projection: ProjectionMatrix, n_rows: int) -> float:
    """tr(Omega^4) / tr(Omega^2)^2 for the projected covariance.

    Small values indicate no eigenvalue direction dominates, which is
    what the normal limit of the test statistic rests on.  Materializes
    the covariance, so r*c is capped.
    """
    c = projection.n_cols
    sig = _materialize_sigma(sigma, n_rows, c)
    k = np.kron(projection.values, np.eye(n_rows))
    omega = k @ sig @ k
    tr2 = float((omega * omega).sum())
    if tr2 <= 0.0:
        raise ValueError("degenerate covariance: tr(Omega^2) is zero")
    om2 = omega @ omega
    tr4 = float((om2 * om2).sum())
    return tr4 / (tr2 * tr2)
