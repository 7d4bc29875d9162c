"""Generative model and Monte Carlo harness for size/power studies.

A simulated subject is X = M + W, where W carries the configured
covariance on vec(X) and the raw noise entries come from one of three
standardized distributions: normal, centralized gamma (skewness 1), or
a half-and-half mixture by rows.  Mean matrices are calibrated so a
fixed signal-size ratio is met exactly, which makes power comparable
across dimensions.

Replicate k of a run draws from its own counter-based RNG stream, so
results are identical no matter how replicates are scheduled across
threads.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .baselines import adjust_pvalues, anova_rowwise, kruskal_rowwise, pairwise_cq_procedure
from .core import DataStack, GroupPartition
from .covariance import covariance_from_dict, sqrt_factor
from .engine import mean_matrix_test

__all__ = [
    "NoiseScenario",
    "ZeroMean",
    "RightBlockMean",
    "SparseMean",
    "MultiplicativeMean",
    "SimConfig",
    "MethodOutcome",
    "RejectionReport",
    "sqrt_factor",
    "gen_noise",
    "gen_stack",
    "calibrate_mean",
    "mean_from_dict",
    "replicate_rng",
    "monte_carlo",
    "WORKERS_ENV_VAR",
]

WORKERS_ENV_VAR = "MATMEAN_WORKERS"

_SCENARIO_TAGS = ("normal", "gamma", "mixture")

# gamma noise: shape 4, rate 1/2, standardized as (z - 8) / 4
_GAMMA_SHAPE = 4.0
_GAMMA_SCALE = 2.0
_GAMMA_MEAN = 8.0
_GAMMA_SD = 4.0

_CALIBRATION_TOL = 1e-9


@dataclass(frozen=True)
class NoiseScenario:
    """Distribution of the raw noise entries; all have mean 0, variance 1."""

    tag: str

    def __post_init__(self):
        if self.tag not in _SCENARIO_TAGS:
            raise ValueError(f"scenario tag must be one of {_SCENARIO_TAGS}, got {self.tag!r}")

    @classmethod
    def from_tag(cls, tag: str) -> "NoiseScenario":
        return cls(str(tag).strip().lower())

    def kurtosis_profile(self, n_rows: int) -> np.ndarray:
        """Per-row excess kurtosis of the raw entries (diagnostic only)."""
        gamma_excess = 6.0 / _GAMMA_SHAPE
        if self.tag == "normal":
            return np.zeros(n_rows)
        if self.tag == "gamma":
            return np.full(n_rows, gamma_excess)
        out = np.full(n_rows, gamma_excess)
        out[: n_rows // 2] = 0.0
        return out


def _noise_batch(scenario: NoiseScenario, n: int, r: int, c: int, rng) -> np.ndarray:
    if scenario.tag == "normal":
        return rng.standard_normal((n, r, c))
    if scenario.tag == "gamma":
        raw = rng.gamma(_GAMMA_SHAPE, _GAMMA_SCALE, size=(n, r, c))
        return (raw - _GAMMA_MEAN) / _GAMMA_SD
    top = r // 2
    z = np.empty((n, r, c))
    # draw order is part of the determinism contract: normal rows first
    z[:, :top, :] = rng.standard_normal((n, top, c))
    raw = rng.gamma(_GAMMA_SHAPE, _GAMMA_SCALE, size=(n, r - top, c))
    z[:, top:, :] = (raw - _GAMMA_MEAN) / _GAMMA_SD
    return z


def gen_noise(scenario: NoiseScenario, r: int, c: int, rng) -> np.ndarray:
    """One r x c matrix of iid standardized noise for the scenario."""
    return _noise_batch(scenario, 1, r, c, rng)[0]


# ---------------------------------------------------------------------------
# mean configurations

_DENOMINATORS = ("dims", "sigma")


def _calibration_denominator(denominator: str, r: int, c: int, sigma) -> float:
    if denominator == "dims":
        return math.sqrt(r * (c - 1))
    if denominator == "sigma":
        row = getattr(sigma, "row", None)
        col = getattr(sigma, "col", None)
        if row is None or col is None:
            raise ValueError(
                "sigma-normalized calibration needs a kronecker covariance"
            )
        row_mat = row.build()
        col_mat = col.build()
        return math.sqrt(
            float((row_mat * row_mat).sum()) * float((col_mat * col_mat).sum())
        )
    raise ValueError(f"denominator must be one of {_DENOMINATORS}, got {denominator!r}")


def _check_ratio(m: np.ndarray, target: float, denom: float) -> None:
    realized = float((m * m).sum()) / denom
    if abs(realized - target) > _CALIBRATION_TOL * max(1.0, abs(target)):
        raise ValueError(
            f"calibration failed: realized ratio {realized!r} vs target {target!r}"
        )


@dataclass(frozen=True)
class ZeroMean:
    """Null mean matrix."""

    def build(self, r: int, c: int, sigma) -> np.ndarray:
        return np.zeros((r, c))

    def to_dict(self) -> dict:
        return {"kind": "zero"}


@dataclass(frozen=True)
class RightBlockMean:
    """M = [0 | t J] with the constant t solved from the signal ratio.

    The first ``zero_cols`` columns are zero and the remaining
    ``effect_cols`` share the constant t chosen so that the squared
    mean norm over the calibration denominator equals ``target``.
    """

    zero_cols: int
    effect_cols: int
    target: float
    denominator: str = "dims"

    def __post_init__(self):
        if self.zero_cols < 0 or self.effect_cols < 1:
            raise ValueError("right-block mean needs effect_cols >= 1, zero_cols >= 0")
        if self.target <= 0.0:
            raise ValueError("calibration target must be positive")

    def build(self, r: int, c: int, sigma) -> np.ndarray:
        if self.zero_cols + self.effect_cols != c:
            raise ValueError(
                f"right-block widths {self.zero_cols}+{self.effect_cols} != c = {c}"
            )
        denom = _calibration_denominator(self.denominator, r, c, sigma)
        t = math.sqrt(self.target * denom / (r * self.effect_cols))
        m = np.zeros((r, c))
        m[:, self.zero_cols :] = t
        _check_ratio(m, self.target, denom)
        return m

    def to_dict(self) -> dict:
        return {
            "kind": "right_block",
            "zero_cols": self.zero_cols,
            "effect_cols": self.effect_cols,
            "target": self.target,
            "denominator": self.denominator,
        }


@dataclass(frozen=True)
class SparseMean:
    """Columns [0 | u 1'] where the vector u is mostly zero.

    ``zero_fraction`` of the r entries of u are zero (leading
    positions); the ceil((1-zero_fraction) r) trailing entries are
    nonzero with equal or linearly increasing magnitudes, rescaled so
    the signal ratio hits ``target`` exactly.
    """

    zero_fraction: float
    allocation: str
    target: float
    effect_cols: int = 1
    denominator: str = "dims"

    def __post_init__(self):
        if not 0.0 <= self.zero_fraction < 1.0:
            raise ValueError("zero_fraction must lie in [0, 1)")
        if self.allocation not in ("equal", "linear"):
            raise ValueError(f"allocation must be 'equal' or 'linear', got {self.allocation!r}")
        if self.target <= 0.0:
            raise ValueError("calibration target must be positive")
        if self.effect_cols < 1:
            raise ValueError("sparse mean needs at least one effect column")

    def nonzero_count(self, r: int) -> int:
        # the fraction is a decimal by intent; going through its repr
        # avoids binary-float residue like ceil(0.01 * 1000) == 11
        return int(math.ceil((1 - Fraction(str(self.zero_fraction))) * r))

    def build(self, r: int, c: int, sigma) -> np.ndarray:
        if self.effect_cols >= c:
            raise ValueError(
                f"sparse mean needs effect_cols < c, got {self.effect_cols} >= {c}"
            )
        m_nonzero = self.nonzero_count(r)
        if m_nonzero < 1:
            raise ValueError("sparse mean has no nonzero entries to calibrate")
        denom = _calibration_denominator(self.denominator, r, c, sigma)
        if self.allocation == "equal":
            shape = np.ones(m_nonzero)
        else:
            shape = np.arange(1, m_nonzero + 1, dtype=float)
        scale = math.sqrt(
            self.target * denom / (self.effect_cols * float(shape @ shape))
        )
        u = np.zeros(r)
        u[r - m_nonzero :] = scale * shape
        m = np.zeros((r, c))
        m[:, c - self.effect_cols :] = u[:, None]
        _check_ratio(m, self.target, denom)
        return m

    def to_dict(self) -> dict:
        return {
            "kind": "sparse",
            "zero_fraction": self.zero_fraction,
            "allocation": self.allocation,
            "target": self.target,
            "effect_cols": self.effect_cols,
            "denominator": self.denominator,
        }


@dataclass(frozen=True)
class MultiplicativeMean:
    """M = [base J | t J] with a fixed multiplier, no calibration.

    The base block spans floor(0.9 c) columns and the boosted block
    the rest, so the widths always cover c (for c a multiple of 10
    this is the exact 0.9/0.1 split).
    """

    t: float
    base: float = 1.0

    def build(self, r: int, c: int, sigma) -> np.ndarray:
        base_cols = (9 * c) // 10
        if base_cols == 0 or base_cols == c:
            raise ValueError(f"multiplicative split needs c >= 2, got c = {c}")
        m = np.full((r, c), self.base)
        m[:, base_cols:] = self.t
        return m

    def to_dict(self) -> dict:
        return {"kind": "multiplicative", "t": self.t, "base": self.base}


def calibrate_mean(spec, r: int, c: int, sigma) -> np.ndarray:
    """Mean matrix for a spec at the given shape, calibrated exactly."""
    return spec.build(r, c, sigma)


def mean_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "zero":
        return ZeroMean()
    if kind == "right_block":
        return RightBlockMean(
            zero_cols=int(d["zero_cols"]),
            effect_cols=int(d["effect_cols"]),
            target=float(d["target"]),
            denominator=str(d.get("denominator", "dims")),
        )
    if kind == "sparse":
        return SparseMean(
            zero_fraction=float(d["zero_fraction"]),
            allocation=str(d["allocation"]),
            target=float(d["target"]),
            effect_cols=int(d.get("effect_cols", 1)),
            denominator=str(d.get("denominator", "dims")),
        )
    if kind == "multiplicative":
        return MultiplicativeMean(t=float(d["t"]), base=float(d.get("base", 1.0)))
    raise ValueError(f"unknown mean kind {kind!r}")


# ---------------------------------------------------------------------------
# configs and reports

_METHOD_NAMES = ("proposed", "anova", "kw", "cq")

# each coarse method expands to the outcome columns it reports
_METHOD_OUTCOMES = {
    "proposed": ("proposed",),
    "anova": ("anova_fdr", "anova_bon"),
    "kw": ("kw_fdr", "kw_bon"),
    "cq": ("cq_bon",),
}


@dataclass(frozen=True)
class SimConfig:
    """Complete description of one simulation run."""

    n_subjects: int
    n_rows: int
    n_cols: int
    scenario: NoiseScenario
    covariance: object
    mean: object
    partition: GroupPartition
    alpha: float = 0.05
    replicates: int = 1000
    seed: int = 0
    methods: tuple[str, ...] = ("proposed",)

    def __post_init__(self):
        if min(self.n_subjects, self.n_rows, self.n_cols) < 1:
            raise ValueError("dimensions must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.replicates < 1:
            raise ValueError("replicates must be positive")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        methods = tuple(self.methods)
        if not methods:
            raise ValueError("at least one method is required")
        unknown = [m for m in methods if m not in _METHOD_NAMES]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; valid: {_METHOD_NAMES}")
        if len(set(methods)) != len(methods):
            raise ValueError("duplicate method names")
        object.__setattr__(self, "methods", methods)
        if self.partition.n_cols != self.n_cols:
            raise ValueError(
                f"partition covers {self.partition.n_cols} columns, config has {self.n_cols}"
            )
        self.covariance.check_dims(self.n_rows, self.n_cols)

    def outcome_names(self) -> tuple[str, ...]:
        out = []
        for m in self.methods:
            out.extend(_METHOD_OUTCOMES[m])
        return tuple(out)

    def to_dict(self) -> dict:
        return {
            "n_subjects": self.n_subjects,
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "scenario": self.scenario.tag,
            "covariance": self.covariance.to_dict(),
            "mean": self.mean.to_dict(),
            "partition": list(self.partition.assignment),
            "alpha": self.alpha,
            "replicates": self.replicates,
            "seed": self.seed,
            "methods": list(self.methods),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        return cls(
            n_subjects=int(d["n_subjects"]),
            n_rows=int(d["n_rows"]),
            n_cols=int(d["n_cols"]),
            scenario=NoiseScenario.from_tag(d["scenario"]),
            covariance=covariance_from_dict(d["covariance"]),
            mean=mean_from_dict(d["mean"]),
            partition=GroupPartition(tuple(int(g) for g in d["partition"])),
            alpha=float(d.get("alpha", 0.05)),
            replicates=int(d.get("replicates", 1000)),
            seed=int(d.get("seed", 0)),
            methods=tuple(d.get("methods", ("proposed",))),
        )


@dataclass(frozen=True)
class MethodOutcome:
    """Rejection tally for one reported method column."""

    method: str
    rejections: int
    valid: int
    errors: int

    @property
    def proportion(self) -> float:
        return self.rejections / self.valid if self.valid else float("nan")

    @property
    def std_error(self) -> float:
        if not self.valid:
            return float("nan")
        p = self.proportion
        return math.sqrt(p * (1.0 - p) / self.valid)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "rejections": self.rejections,
            "valid": self.valid,
            "errors": self.errors,
            "proportion": self.proportion,
            "std_error": self.std_error,
        }


_REPORT_CSV_HEADER = "method,rejections,valid,errors,proportion,std_error"


@dataclass(frozen=True)
class RejectionReport:
    """Monte Carlo outcome: one rejection proportion per method column.

    The CSV form deliberately excludes elapsed time so identical runs
    produce identical bytes.
    """

    config: SimConfig
    outcomes: tuple[MethodOutcome, ...]
    replicates: int
    elapsed_seconds: float

    def outcome(self, method: str) -> MethodOutcome:
        for out in self.outcomes:
            if out.method == method:
                return out
        raise KeyError(f"no outcome for method {method!r}")

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "replicates": self.replicates,
            "elapsed_seconds": self.elapsed_seconds,
            "outcomes": [out.to_dict() for out in self.outcomes],
        }

    def to_csv(self) -> str:
        lines = [_REPORT_CSV_HEADER]
        for out in self.outcomes:
            lines.append(
                f"{out.method},{out.rejections},{out.valid},{out.errors},"
                f"{out.proportion!r},{out.std_error!r}"
            )
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# the harness


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Independent counter-based stream for one replicate.

    Streams are defined by (seed, index) alone, so any execution order
    or thread assignment reproduces the same draws.
    """
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(seq))


def gen_stack(config: SimConfig, rng, *, root=None, mean=None) -> DataStack:
    """One stack of N subjects from the configured generative model.

    ``root`` and ``mean`` allow a caller that loops over replicates to
    reuse the covariance factorization and calibrated mean.
    """
    r, c = config.n_rows, config.n_cols
    if root is None:
        root = sqrt_factor(config.covariance, r, c)
    if mean is None:
        mean = calibrate_mean(config.mean, r, c, config.covariance)
    z = _noise_batch(config.scenario, config.n_subjects, r, c, rng)
    return DataStack(root.apply(z) + mean)


def _worker_count(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV_VAR, "1"))
    if workers < 1:
        raise ValueError(f"worker count must be positive, got {workers}")
    return workers


def monte_carlo(config: SimConfig, workers: int | None = None) -> RejectionReport:
    """Rejection proportions over independent replicates.

    Every configured method is run on the same stack within a
    replicate, mirroring how competing tests are compared on common
    draws.  ANOVA and Kruskal-Wallis treat each column as its own
    treatment (the no-column-effect family) with the family-wise rule
    "reject iff the smallest adjusted p-value is below alpha".

    Per-replicate failures (flagged results or errors) are excluded
    from the denominators and reported per method; the run aborts if
    any method fails on more than 1% of replicates.
    """
    if config.replicates < 100:
        raise ValueError("monte_carlo needs at least 100 replicates")
    n, r, c = config.n_subjects, config.n_rows, config.n_cols
    needs_columns = set(config.methods) & {"anova", "kw", "cq"}
    if needs_columns and c < 2:
        raise ValueError("column-wise baselines need at least 2 columns")
    if "proposed" in config.methods or "cq" in config.methods:
        if n < 4:
            raise ValueError("proposed and cq methods need at least 4 subjects")

    root = sqrt_factor(config.covariance, r, c)
    mean = calibrate_mean(config.mean, r, c, config.covariance)
    per_column = GroupPartition(tuple(range(1, c + 1)))
    names = config.outcome_names()
    # slots: +1 reject, 0 accept, -1 error; one row per outcome column
    slots = {name: np.zeros(config.replicates, dtype=np.int8) for name in names}
    alpha = config.alpha

    def run_one(k: int) -> None:
        rng = replicate_rng(config.seed, k)
        stack = gen_stack(config, rng, root=root, mean=mean)
        for method in config.methods:
            try:
                if method == "proposed":
                    res = mean_matrix_test(stack, config.partition, alpha=alpha)
                    slots["proposed"][k] = _verdict(res.reject if res.ok else None)
                elif method == "anova":
                    raw = anova_rowwise(stack, per_column)
                    slots["anova_fdr"][k] = _verdict(
                        adjust_pvalues(raw, "fdr").min_value < alpha
                    )
                    slots["anova_bon"][k] = _verdict(
                        adjust_pvalues(raw, "bonferroni").min_value < alpha
                    )
                elif method == "kw":
                    raw = kruskal_rowwise(stack, per_column)
                    slots["kw_fdr"][k] = _verdict(
                        adjust_pvalues(raw, "fdr").min_value < alpha
                    )
                    slots["kw_bon"][k] = _verdict(
                        adjust_pvalues(raw, "bonferroni").min_value < alpha
                    )
                else:
                    summary = pairwise_cq_procedure(stack, alpha=alpha)
                    slots["cq_bon"][k] = _verdict(
                        summary.reject if summary.ok else None
                    )
            except (ValueError, FloatingPointError, np.linalg.LinAlgError):
                for name in _METHOD_OUTCOMES[method]:
                    slots[name][k] = -1

    started = time.perf_counter()
    n_workers = _worker_count(workers)
    if n_workers == 1:
        for k in range(config.replicates):
            run_one(k)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(run_one, range(config.replicates)))
    elapsed = time.perf_counter() - started

    outcomes = []
    for name in names:
        col = slots[name]
        errors = int((col == -1).sum())
        if errors > 0.01 * config.replicates:
            raise RuntimeError(
                f"method {name!r} failed on {errors} of {config.replicates} "
                f"replicates; aborting the run"
            )
        outcomes.append(
            MethodOutcome(
                method=name,
                rejections=int((col == 1).sum()),
                valid=config.replicates - errors,
                errors=errors,
            )
        )
    return RejectionReport(
        config=config,
        outcomes=tuple(outcomes),
        replicates=config.replicates,
        elapsed_seconds=elapsed,
    )


def _verdict(reject: bool | None) -> int:
    if reject is None:
        return -1
    return 1 if reject else 0
