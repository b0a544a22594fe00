"""Data structures shared across the package.

Observational data are held in :class:`Dataset` (one row per subject,
time-fixed treatment) or :class:`SequentialDataset` (treatment assigned
at several decision points). Both carry a train/test split indicator:
model fitting routines only look at training rows, performance
estimators only at test rows.

Treatment strategies are described by regime objects. A
:class:`StaticRegime` assigns the same arm to everyone; a
:class:`StochasticRegime` assigns arm 1 with a covariate-dependent
probability.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

TRAIN = 1
TEST = 0

_RESERVED_COLUMNS = ("A", "Y", "D")


class PositivityError(RuntimeError):
    """A treatment arm required by the target strategy is absent (or
    effectively absent) from the relevant subset of the data."""


def _as_float_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2:
        raise ValueError("covariates must form a 2-d array")
    return x


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# losses


@dataclass(frozen=True)
class Loss:
    """Pointwise loss L(y, prediction), evaluated elementwise.

    Only losses that are linear in indicator expansions of a binary
    outcome are supported, which is what makes conditional-loss
    modelling by outcome regression possible downstream.
    """

    kind: str

    def __post_init__(self):
        if self.kind not in ("squared", "absolute"):
            raise ValueError(f"unknown loss kind {self.kind!r}")

    def __call__(self, y, pred) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        pred = np.asarray(pred, dtype=float)
        if self.kind == "squared":
            return (y - pred) ** 2
        return np.abs(y - pred)


SQUARED = Loss("squared")
ABSOLUTE = Loss("absolute")


def get_loss(kind: str) -> Loss:
    return Loss(kind)


# ---------------------------------------------------------------------------
# treatment strategies


@dataclass(frozen=True)
class StaticRegime:
    """Assign arm ``a`` to every subject."""

    a: int

    def __post_init__(self):
        if self.a not in (0, 1):
            raise ValueError("static regime arm must be 0 or 1")

    def to_json(self) -> dict:
        return {"type": "static", "a": int(self.a)}


@dataclass(frozen=True)
class StochasticRegime:
    """Assign arm 1 with probability ``prob_treat(x)``.

    Parameters
    ----------
    prob_treat : callable
        Maps an (n, d) covariate matrix to an (n,) array of
        probabilities in [0, 1].
    label : str
        Short description used when serialising results.
    """

    prob_treat: Callable[[np.ndarray], np.ndarray]
    label: str = "stochastic"

    def probabilities(self, x: np.ndarray) -> np.ndarray:
        p = np.asarray(self.prob_treat(_as_float_matrix(x)), dtype=float)
        p = np.broadcast_to(p, (len(_as_float_matrix(x)),)).astype(float)
        if np.any(~np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
            raise ValueError("stochastic regime produced probabilities outside [0, 1]")
        return p

    def to_json(self) -> dict:
        return {"type": "stochastic", "label": self.label}


Regime = Union[StaticRegime, StochasticRegime]


# ---------------------------------------------------------------------------
# predictor subsets


@dataclass(frozen=True)
class PredictorSubset:
    """Column indices of the covariates a deployed model may use.

    The tailoring target is a conditional expectation given these
    columns only; the remaining covariates are still available to
    adjustment models.
    """

    indices: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(set(idx)) != len(idx):
            raise ValueError("duplicate predictor indices")
        if any(i < 0 for i in idx):
            raise ValueError("negative predictor index")
        object.__setattr__(self, "indices", idx)

    def validate_for(self, dim: int) -> None:
        bad = [i for i in self.indices if i >= dim]
        if bad:
            raise ValueError(f"predictor indices {bad} out of range for {dim} columns")

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = _as_float_matrix(x)
        self.validate_for(x.shape[1])
        return x[:, list(self.indices)]


def subset_columns(x: np.ndarray, subset: PredictorSubset) -> np.ndarray:
    """Project a covariate matrix onto a predictor subset."""
    return subset.apply(x)


# ---------------------------------------------------------------------------
# single time point data


@dataclass(frozen=True)
class Observation:
    """One subject's row: covariates, treatment received, outcome, split."""

    x: np.ndarray
    a: int
    y: float
    split: int


@dataclass(frozen=True)
class Dataset:
    """Covariates, binary treatment, outcome and a train/test indicator.

    Parameters
    ----------
    x : (n, d) array
    a : (n,) array of 0/1 treatment received
    y : (n,) array; in {0, 1} when ``outcome == "binary"``
    split : (n,) array of 0/1, or "train"/"test" to flag every row
    outcome : "binary" or "continuous"
    names : optional covariate column names (defaults to x1..xd)

    Arrays are copied and marked read-only; derived subsets are new
    objects.
    """

    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    split: np.ndarray
    outcome: str
    names: Optional[tuple] = None

    def __post_init__(self):
        x = _frozen(_as_float_matrix(self.x))
        a = np.asarray(self.a)
        y = np.asarray(self.y, dtype=float)
        n = x.shape[0]
        if self.outcome not in ("binary", "continuous"):
            raise ValueError("outcome must be 'binary' or 'continuous'")
        if a.shape != (n,) or y.shape != (n,):
            raise ValueError("x, a, y must have matching first dimension")
        if not np.isin(a, (0, 1)).all():
            raise ValueError("treatment column must be coded 0/1")
        if self.outcome == "binary" and not np.isin(y, (0.0, 1.0)).all():
            raise ValueError("binary outcome must be coded 0/1")
        if not np.isfinite(x).all() or not np.isfinite(y).all():
            raise ValueError("covariates and outcomes must be finite")
        split = self.split
        if isinstance(split, str):
            code = {"train": TRAIN, "test": TEST}.get(split)
            if code is None:
                raise ValueError("split string must be 'train' or 'test'")
            split = np.full(n, code, dtype=np.int8)
        split = np.asarray(split)
        if split.shape != (n,) or not np.isin(split, (TRAIN, TEST)).all():
            raise ValueError("split must be an (n,) array of 0 (test) / 1 (train)")
        names = self.names
        if names is not None:
            names = tuple(str(c) for c in names)
            if len(names) != x.shape[1]:
                raise ValueError("names do not match covariate count")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "a", _frozen(a.astype(np.int8)))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "split", _frozen(split.astype(np.int8)))
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def n_train(self) -> int:
        return int(np.sum(self.split == TRAIN))

    @property
    def n_test(self) -> int:
        return int(np.sum(self.split == TEST))

    def row(self, i: int) -> Observation:
        return Observation(self.x[i], int(self.a[i]), float(self.y[i]), int(self.split[i]))

    def subset(self, mask: np.ndarray) -> "Dataset":
        mask = np.asarray(mask)
        return Dataset(self.x[mask], self.a[mask], self.y[mask],
                       self.split[mask], self.outcome, self.names)

    def training(self) -> "Dataset":
        return self.subset(self.split == TRAIN)

    def testing(self) -> "Dataset":
        return self.subset(self.split == TEST)

    def replace_split(self, split) -> "Dataset":
        return Dataset(self.x, self.a, self.y, split, self.outcome, self.names)


def split_dataset(data: Dataset, fraction_train: float = 0.5, seed: int = 0,
                  exact: bool = False) -> Dataset:
    """Assign a fresh train/test split.

    By default each row is flagged train independently with probability
    ``fraction_train``. With ``exact=True`` a random subset of size
    ``round(fraction_train * n)`` is flagged instead, so the split sizes
    are deterministic given ``n``.
    """
    if not 0.0 < fraction_train < 1.0:
        raise ValueError("fraction_train must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    n = data.n
    if exact:
        k = int(round(fraction_train * n))
        split = np.zeros(n, dtype=np.int8)
        split[rng.permutation(n)[:k]] = TRAIN
    else:
        split = (rng.random(n) < fraction_train).astype(np.int8)
    return data.replace_split(split)


# ---------------------------------------------------------------------------
# sequential (multiple decision point) data


@dataclass(frozen=True)
class SequentialObservation:
    """One subject's history across decision points 0..K."""

    xs: tuple
    a: np.ndarray
    y: float
    split: int


@dataclass(frozen=True)
class SequentialDataset:
    """Covariate and treatment histories over decision points 0..K.

    Parameters
    ----------
    xs : sequence of K+1 arrays, xs[k] of shape (n, d_k)
        Covariates measured just before treatment decision k.
    a : (n, K+1) array of 0/1 treatments actually received
    y : (n,) end-of-follow-up outcome
    split : (n,) 0/1 train indicator, or "train"/"test"
    outcome : "binary" or "continuous"
    ids : optional (n,) subject identifiers
    """

    xs: tuple
    a: np.ndarray
    y: np.ndarray
    split: np.ndarray
    outcome: str
    ids: Optional[np.ndarray] = None
    names: Optional[tuple] = None

    def __post_init__(self):
        xs = tuple(_frozen(_as_float_matrix(xk)) for xk in self.xs)
        if not xs:
            raise ValueError("at least one decision point required")
        n = xs[0].shape[0]
        if any(xk.shape[0] != n for xk in xs):
            raise ValueError("covariate blocks must share the number of subjects")
        a = np.asarray(self.a)
        if a.ndim == 1:
            a = a.reshape(-1, 1)
        if a.shape != (n, len(xs)) or not np.isin(a, (0, 1)).all():
            raise ValueError("treatment matrix must be (n, K+1) of 0/1")
        y = np.asarray(self.y, dtype=float)
        if y.shape != (n,):
            raise ValueError("y must be an (n,) array")
        if self.outcome not in ("binary", "continuous"):
            raise ValueError("outcome must be 'binary' or 'continuous'")
        if self.outcome == "binary" and not np.isin(y, (0.0, 1.0)).all():
            raise ValueError("binary outcome must be coded 0/1")
        split = self.split
        if isinstance(split, str):
            code = {"train": TRAIN, "test": TEST}.get(split)
            if code is None:
                raise ValueError("split string must be 'train' or 'test'")
            split = np.full(n, code, dtype=np.int8)
        split = np.asarray(split)
        if split.shape != (n,) or not np.isin(split, (TRAIN, TEST)).all():
            raise ValueError("split must be an (n,) array of 0 (test) / 1 (train)")
        ids = self.ids
        if ids is not None:
            ids = _frozen(np.asarray(ids))
            if ids.shape != (n,):
                raise ValueError("ids must be an (n,) array")
        names = self.names
        if names is not None:
            names = tuple(str(c) for c in names)
            if len(names) != xs[0].shape[1]:
                raise ValueError("names do not match covariate count")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "a", _frozen(a.astype(np.int8)))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "split", _frozen(split.astype(np.int8)))
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.xs[0].shape[0]

    @property
    def horizon(self) -> int:
        """K, the index of the last decision point."""
        return len(self.xs) - 1

    @property
    def n_test(self) -> int:
        return int(np.sum(self.split == TEST))

    def row(self, i: int) -> SequentialObservation:
        return SequentialObservation(tuple(xk[i] for xk in self.xs),
                                     self.a[i], float(self.y[i]), int(self.split[i]))

    def subset(self, mask: np.ndarray) -> "SequentialDataset":
        mask = np.asarray(mask)
        ids = None if self.ids is None else self.ids[mask]
        return SequentialDataset(tuple(xk[mask] for xk in self.xs),
                                 self.a[mask], self.y[mask], self.split[mask],
                                 self.outcome, ids, self.names)

    def testing(self) -> "SequentialDataset":
        return self.subset(self.split == TEST)

    def baseline(self) -> Dataset:
        """Collapse to a single-time dataset: baseline covariates, first
        treatment. Useful when K = 0."""
        return Dataset(self.xs[0], self.a[:, 0], self.y, self.split,
                       self.outcome, self.names)


# ---------------------------------------------------------------------------
# file ingestion


def load_csv(path, outcome: str, split_seed: int = 0,
             fraction_train: float = 0.5) -> Dataset:
    """Read a wide-format CSV: covariate columns plus A, Y and optional D.

    D = 1 flags training rows and D = 0 test rows. When the column is
    absent a Bernoulli(fraction_train) split keyed by ``split_seed`` is
    drawn.
    """
    import pandas as pd

    frame = pd.read_csv(path)
    for col in ("A", "Y"):
        if col not in frame.columns:
            raise ValueError(f"input is missing required column {col!r}")
    covars = [c for c in frame.columns if c not in _RESERVED_COLUMNS]
    if not covars:
        raise ValueError("input has no covariate columns")
    x = frame[covars].to_numpy(dtype=float)
    a = frame["A"].to_numpy()
    y = frame["Y"].to_numpy(dtype=float)
    if "D" in frame.columns:
        data = Dataset(x, a, y, frame["D"].to_numpy(), outcome, tuple(covars))
    else:
        data = Dataset(x, a, y, np.zeros(len(frame), dtype=np.int8), outcome, tuple(covars))
        data = split_dataset(data, fraction_train, split_seed)
    return data


def load_sequential_csv(path, outcome: str, split_seed: int = 0,
                        fraction_train: float = 0.5) -> SequentialDataset:
    """Read long-format sequential data: columns id, t, covariates, A, Y
    and optional D, one row per subject and decision point.

    Every subject must appear at each decision point 0..K. Y and D are
    taken from the subject's final row; covariate sets are shared across
    times (d_k identical), which matches the long layout.
    """
    import pandas as pd

    frame = pd.read_csv(path)
    for col in ("id", "t", "A", "Y"):
        if col not in frame.columns:
            raise ValueError(f"input is missing required column {col!r}")
    covars = [c for c in frame.columns if c not in _RESERVED_COLUMNS + ("id", "t")]
    if not covars:
        raise ValueError("input has no covariate columns")
    frame = frame.sort_values(["id", "t"], kind="mergesort")
    times = np.sort(frame["t"].unique())
    if not np.array_equal(times, np.arange(len(times))):
        raise ValueError("decision times must be 0..K with no gaps")
    counts = frame.groupby("id", sort=True)["t"].count()
    if not (counts == len(times)).all():
        raise ValueError("every subject must have one row per decision time")
    xs, amat = [], []
    for t in times:
        block = frame[frame["t"] == t]
        xs.append(block[covars].to_numpy(dtype=float))
        amat.append(block["A"].to_numpy())
    last = frame[frame["t"] == times[-1]]
    y = last["Y"].to_numpy(dtype=float)
    ids = last["id"].to_numpy()
    a = np.column_stack(amat)
    names = tuple(covars)
    if "D" in frame.columns:
        split = last["D"].to_numpy()
        return SequentialDataset(xs, a, y, split, outcome, ids, names)
    rng = np.random.default_rng(split_seed)
    split = (rng.random(len(y)) < fraction_train).astype(np.int8)
    return SequentialDataset(xs, a, y, split, outcome, ids, names)
