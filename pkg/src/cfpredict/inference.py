"""Uncertainty for performance estimates and simulation bookkeeping.

The bootstrap here resamples the test rows only: the prediction model
is taken as fixed (fit once, as deployed) and the question is how
variable the performance estimate is over test sets. The estimator
callback receives a full dataset whose test part has been resampled, so
nuisance models are refit inside every replicate, propagating their
estimation noise into the interval.

``mc_summary`` aggregates repeated-simulation output: mean, spread,
bias against a known truth, and the root-n scalings that make results
comparable across test set sizes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.stats import norm

from .core import Dataset, PositivityError, SequentialDataset
from .glm import RankDeficiencyError
from .perf import NoComparablePairsError

_MAX_FAILURE_SHARE = 0.10

_RESAMPLE_ERRORS = (PositivityError, RankDeficiencyError, NoComparablePairsError,
                    np.linalg.LinAlgError)


@dataclass(frozen=True)
class BootstrapResult:
    point: float
    se: float
    ci: tuple
    n_replicates: int
    n_failed: int
    ci_method: str
    seed: int = 0

    def to_json(self) -> dict:
        return {"point": float(self.point), "se": float(self.se),
                "ci": [float(self.ci[0]), float(self.ci[1])],
                "n_replicates": int(self.n_replicates),
                "n_failed": int(self.n_failed),
                "ci_method": self.ci_method,
                "seed": int(self.seed)}


def _resampled(data: Union[Dataset, SequentialDataset], idx: np.ndarray):
    """Replace the test part by the rows indexed into it, keeping the
    training part untouched."""
    test_rows = np.flatnonzero(data.split == 0)
    train_rows = np.flatnonzero(data.split == 1)
    order = np.concatenate([train_rows, test_rows[idx]])
    if isinstance(data, SequentialDataset):
        ids = None if data.ids is None else data.ids[order]
        return SequentialDataset(tuple(xk[order] for xk in data.xs),
                                 data.a[order], data.y[order],
                                 data.split[order], data.outcome, ids, data.names)
    return Dataset(data.x[order], data.a[order], data.y[order],
                   data.split[order], data.outcome, data.names)


def bootstrap(data: Union[Dataset, SequentialDataset],
              estimator: Callable[[Union[Dataset, SequentialDataset]], float],
              n_replicates: int = 1000, seed: int = 0,
              ci_method: str = "percentile", alpha: float = 0.05) -> BootstrapResult:
    """Nonparametric bootstrap over test rows (test subjects for
    sequential data).

    ``estimator`` maps a dataset to a float and is called once on the
    original data for the point estimate and once per replicate.
    Replicates where it raises a positivity, rank, or no-pairs error
    are dropped; more than 10 percent dropped aborts the run.

    The confidence interval is the percentile interval by default;
    ``ci_method="wald"`` gives point +/- z * se instead. Results are
    deterministic given ``seed``.
    """
    if ci_method not in ("percentile", "wald"):
        raise ValueError(f"unknown ci method {ci_method!r}")
    if n_replicates < 2:
        raise ValueError("need at least two bootstrap replicates")
    n_test = int(np.sum(data.split == 0))
    if n_test == 0:
        raise ValueError("no test rows to resample")

    point = float(estimator(data))
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, n_test, size=(n_replicates, n_test))
    values = []
    failed = 0
    for r in range(n_replicates):
        try:
            values.append(float(estimator(_resampled(data, draws[r]))))
        except _RESAMPLE_ERRORS:
            failed += 1
    if failed > _MAX_FAILURE_SHARE * n_replicates:
        raise RuntimeError(
            f"{failed} of {n_replicates} bootstrap replicates failed; "
            "the estimator is too unstable on resampled test sets")
    values = np.asarray(values)
    se = float(np.std(values, ddof=1))
    if ci_method == "percentile":
        lo, hi = np.quantile(values, [alpha / 2.0, 1.0 - alpha / 2.0])
    else:
        z = float(norm.ppf(1.0 - alpha / 2.0))
        lo, hi = point - z * se, point + z * se
    return BootstrapResult(point, se, (float(lo), float(hi)),
                           len(values), failed, ci_method, int(seed))


@dataclass(frozen=True)
class McSummary:
    """Repeated-simulation summary of one estimator against a truth."""

    n_reps: int
    n_test: int
    truth: float
    mean: float
    sd: float
    bias: float
    rel_bias: float
    sqrt_n_sd: float
    sqrt_n_bias: float

    def to_json(self) -> dict:
        return {"n_reps": int(self.n_reps), "n_test": int(self.n_test),
                "truth": float(self.truth), "mean": float(self.mean),
                "sd": float(self.sd), "bias": float(self.bias),
                "rel_bias": float(self.rel_bias),
                "sqrt_n_sd": float(self.sqrt_n_sd),
                "sqrt_n_bias": float(self.sqrt_n_bias)}


def mc_summary(estimates: Sequence[float], truth: float, n_test: int) -> McSummary:
    """Summarise Monte Carlo replicates of an estimator.

    Bias is mean - truth; relative bias divides by the truth (zero
    truth is rejected); the root-n columns multiply sd and bias by
    sqrt(n_test) to put different test sizes on one scale.
    """
    values = np.asarray(list(estimates), dtype=float)
    if values.ndim != 1 or values.size < 2:
        raise ValueError("need at least two replicate estimates")
    if not np.isfinite(values).all():
        raise ValueError("replicate estimates must be finite")
    if truth == 0.0:
        raise ValueError("relative bias undefined for zero truth")
    if n_test <= 0:
        raise ValueError("n_test must be positive")
    mean = float(values.mean())
    sd = float(values.std(ddof=1))
    bias = mean - truth
    root_n = float(np.sqrt(n_test))
    return McSummary(values.size, n_test, float(truth), mean, sd, bias,
                     bias / truth, root_n * sd, root_n * bias)
