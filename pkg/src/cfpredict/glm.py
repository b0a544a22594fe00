"""Minimal weighted GLM engine used by every fitting routine here.

Two families are enough for this package: Gaussian with identity link
(weighted least squares) and binomial with logit link (Newton scoring).
Design matrices are described declaratively by :class:`DesignSpec` so a
fitted model can rebuild its regressors from raw covariates at
prediction time, including spline bases whose knots were learned during
fitting.

Nothing here is meant to compete with a full regression package; the
point is exact control over the numerics (QR based solves, explicit
convergence criteria) and a serialisable description of the design.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

GAUSSIAN = "gaussian"
BINOMIAL = "binomial"

_FAMILIES = (GAUSSIAN, BINOMIAL)

_MAX_ITER = 100
_TOL = 1e-8


class RankDeficiencyError(RuntimeError):
    """The weighted design matrix does not have full column rank."""


# ---------------------------------------------------------------------------
# design descriptions


@dataclass(frozen=True)
class Term:
    """One block of regressors derived from a single covariate column.

    transform
        "linear"   -> x
        "power"    -> x**k                     (k >= 2)
        "spline"   -> natural cubic spline basis with ``df`` columns:
                      boundary knots at the training extremes, df - 1
                      interior knots at training quantiles, second
                      derivative pinned to zero beyond the boundary.
    """

    col: int
    transform: str = "linear"
    k: int = 2
    df: int = 4
    knots: Optional[tuple] = None

    def __post_init__(self):
        if self.col < 0:
            raise ValueError("column index must be nonnegative")
        if self.transform not in ("linear", "power", "spline"):
            raise ValueError(f"unknown transform {self.transform!r}")
        if self.transform == "power" and self.k < 2:
            raise ValueError("power terms need exponent k >= 2")
        if self.transform == "spline" and self.df < 3:
            raise ValueError("spline terms need df >= 3")

    @property
    def n_columns(self) -> int:
        return self.df if self.transform == "spline" else 1

    def to_json(self) -> dict:
        out = {"col": int(self.col), "transform": self.transform}
        if self.transform == "power":
            out["k"] = int(self.k)
        if self.transform == "spline":
            out["df"] = int(self.df)
            if self.knots is not None:
                out["knots"] = [float(v) for v in self.knots]
        return out

    @staticmethod
    def from_json(obj: dict) -> "Term":
        knots = obj.get("knots")
        return Term(col=int(obj["col"]), transform=obj.get("transform", "linear"),
                    k=int(obj.get("k", 2)), df=int(obj.get("df", 4)),
                    knots=None if knots is None else tuple(float(v) for v in knots))


def _spline_knots(x: np.ndarray, df: int) -> tuple:
    """All df + 1 knots for a df-column natural basis: the training
    extremes plus df - 1 interior quantiles."""
    probs = np.arange(1, df) / df
    knots = np.concatenate([[np.min(x)], np.quantile(x, probs), [np.max(x)]])
    if np.any(np.diff(knots) <= 0):
        raise ValueError("spline knots are not distinct; the column has too "
                         "few unique values for this df")
    return tuple(float(k) for k in knots)


def _spline_columns(x: np.ndarray, knots: Sequence[float]) -> np.ndarray:
    # standard natural cubic basis: x plus K - 2 curvature terms built
    # from scaled truncated cubes, linear beyond the boundary knots
    knots = np.asarray(knots, dtype=float)
    last = knots[-1]

    def d(knot):
        return (np.clip(x - knot, 0.0, None) ** 3
                - np.clip(x - last, 0.0, None) ** 3) / (last - knot)

    d_ref = d(knots[-2])
    cols = [x]
    for knot in knots[:-2]:
        cols.append(d(knot) - d_ref)
    return np.column_stack(cols)


@dataclass(frozen=True)
class DesignSpec:
    """Declarative design matrix: a list of terms plus an intercept flag.

    Column indices in terms refer to the full covariate matrix, so the
    same spec can be applied to any dataset with compatible columns.
    Spline knots start unset; :meth:`fit` resolves them against a
    training matrix and returns a frozen copy.
    """

    terms: tuple
    intercept: bool = True

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms and not self.intercept:
            raise ValueError("design needs at least one term or an intercept")
        object.__setattr__(self, "terms", terms)

    @property
    def n_columns(self) -> int:
        return int(self.intercept) + sum(t.n_columns for t in self.terms)

    @property
    def columns_used(self) -> tuple:
        return tuple(sorted({t.col for t in self.terms}))

    def fit(self, x: np.ndarray) -> "DesignSpec":
        """Resolve data-dependent pieces (spline knots) against ``x``."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        fitted = []
        for t in self.terms:
            if t.col >= x.shape[1]:
                raise ValueError(f"term column {t.col} out of range")
            if t.transform == "spline" and t.knots is None:
                fitted.append(replace(t, knots=_spline_knots(x[:, t.col], t.df)))
            else:
                fitted.append(t)
        return DesignSpec(tuple(fitted), self.intercept)

    def to_json(self) -> dict:
        return {"intercept": bool(self.intercept),
                "terms": [t.to_json() for t in self.terms]}

    @staticmethod
    def from_json(obj: dict) -> "DesignSpec":
        return DesignSpec(tuple(Term.from_json(t) for t in obj["terms"]),
                          bool(obj.get("intercept", True)))

    @staticmethod
    def main_effects(cols: Sequence[int], intercept: bool = True) -> "DesignSpec":
        return DesignSpec(tuple(Term(int(c)) for c in cols), intercept)

    @staticmethod
    def polynomial(col: int, degree: int, intercept: bool = True) -> "DesignSpec":
        terms = [Term(col)]
        for k in range(2, degree + 1):
            terms.append(Term(col, "power", k=k))
        return DesignSpec(tuple(terms), intercept)

    @staticmethod
    def splines(cols: Sequence[int], df: int = 4, intercept: bool = True) -> "DesignSpec":
        return DesignSpec(tuple(Term(int(c), "spline", df=df) for c in cols), intercept)


def build_design(x: np.ndarray, spec: DesignSpec) -> np.ndarray:
    """Evaluate a design spec on raw covariates.

    Spline terms must already carry knots (call ``spec.fit`` on the
    training matrix first); building a spline term without knots is an
    error rather than a silent refit, so train-time and predict-time
    bases always agree.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    n = x.shape[0]
    blocks = []
    if spec.intercept:
        blocks.append(np.ones((n, 1)))
    for t in spec.terms:
        if t.col >= x.shape[1]:
            raise ValueError(f"term column {t.col} out of range")
        col = x[:, t.col]
        if t.transform == "linear":
            blocks.append(col.reshape(-1, 1))
        elif t.transform == "power":
            blocks.append((col ** t.k).reshape(-1, 1))
        else:
            if t.knots is None:
                raise ValueError("spline term has unresolved knots; fit the spec first")
            blocks.append(_spline_columns(col, t.knots))
    return np.hstack(blocks)


# ---------------------------------------------------------------------------
# fitting


@dataclass(frozen=True)
class GlmFit:
    """Coefficients plus whatever is needed to predict from raw covariates."""

    coef: np.ndarray
    family: str
    spec: Optional[DesignSpec] = None
    converged: bool = True
    iterations: int = 1

    def __post_init__(self):
        coef = np.array(self.coef, dtype=float, copy=True)
        coef.setflags(write=False)
        object.__setattr__(self, "coef", coef)

    def to_json(self) -> dict:
        if self.spec is None:
            raise ValueError("cannot serialise a fit without its design spec")
        return {"family": self.family, "coef": [float(b) for b in self.coef],
                "design": self.spec.to_json()}

    @staticmethod
    def from_json(obj: dict) -> "GlmFit":
        return GlmFit(np.asarray(obj["coef"], dtype=float), obj["family"],
                      DesignSpec.from_json(obj["design"]))


def _check_rank(r: np.ndarray) -> None:
    diag = np.abs(np.diag(r))
    if diag.size == 0:
        raise RankDeficiencyError("empty design")
    if np.min(diag) <= np.max(diag) * np.finfo(float).eps * max(r.shape):
        raise RankDeficiencyError("design matrix is rank deficient after weighting")


def _solve_wls(design: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    sw = np.sqrt(w)
    q, r = np.linalg.qr(design * sw[:, None])
    _check_rank(r)
    return np.linalg.solve(r, q.T @ (y * sw))


def fit_glm(design: np.ndarray, y: np.ndarray, weights: Optional[np.ndarray] = None,
            family: str = GAUSSIAN, spec: Optional[DesignSpec] = None) -> GlmFit:
    """Fit a weighted GLM on an already-built design matrix.

    Parameters
    ----------
    design : (n, p) array
    y : (n,) response; 0/1 for the binomial family
    weights : (n,) nonnegative case weights, default all ones
    family : "gaussian" (identity link) or "binomial" (logit link)
    spec : optional DesignSpec recorded for later prediction

    Gaussian fits solve the weighted least squares problem through a QR
    factorisation. Binomial fits run Newton scoring from beta = 0 and
    stop when the coefficient update and the weighted score are both
    below 1e-8 in max norm; hitting the 100 iteration cap raises a
    convergence warning and flags the result.

    Raises
    ------
    RankDeficiencyError
        If the weighted design loses full column rank.
    ValueError
        On malformed shapes, negative weights, or fewer positively
        weighted rows than columns.
    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if design.ndim != 2:
        raise ValueError("design must be 2-d")
    n, p = design.shape
    if y.shape != (n,):
        raise ValueError("response length does not match design")
    if family not in _FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,):
            raise ValueError("weights length does not match design")
        if np.any(w < 0) or np.any(~np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
    if int(np.sum(w > 0)) < p:
        raise ValueError("fewer positively weighted rows than design columns")

    if family == GAUSSIAN:
        beta = _solve_wls(design, y, w)
        return GlmFit(beta, family, spec, True, 1)

    if not np.isin(y[w > 0], (0.0, 1.0)).all():
        raise ValueError("binomial family needs a 0/1 response")
    beta = np.zeros(p)
    converged = False
    iters = 0
    for iters in range(1, _MAX_ITER + 1):
        eta = design @ beta
        mu = expit(eta)
        info_w = w * mu * (1.0 - mu)
        score = design.T @ (w * (y - mu))
        hess = (design * info_w[:, None]).T @ design
        try:
            delta = np.linalg.solve(hess, score)
        except np.linalg.LinAlgError:
            raise RankDeficiencyError(
                "singular information matrix in logistic fit "
                "(rank deficient design or complete separation)")
        if not np.all(np.isfinite(delta)):
            raise RankDeficiencyError("logistic scoring produced non-finite updates")
        beta = beta + delta
        if max(np.max(np.abs(delta)), np.max(np.abs(score))) < _TOL:
            converged = True
            break
    if not converged:
        warnings.warn("logistic fit did not converge within "
                      f"{_MAX_ITER} iterations", RuntimeWarning)
    return GlmFit(beta, family, spec, converged, iters)


def fit_glm_data(x: np.ndarray, y: np.ndarray, spec: DesignSpec,
                 weights: Optional[np.ndarray] = None,
                 family: str = GAUSSIAN) -> GlmFit:
    """Resolve ``spec`` on ``x``, build the design, and fit."""
    fitted_spec = spec.fit(x)
    return fit_glm(build_design(x, fitted_spec), y, weights, family, fitted_spec)


def predict_glm(fit: GlmFit, x: np.ndarray) -> np.ndarray:
    """Mean-scale predictions from raw covariates.

    Requires the fit to carry its design spec. A 1-d input is treated as
    a single row.
    """
    if fit.spec is None:
        raise ValueError("fit has no design spec; predict from the design matrix instead")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x.reshape(1, -1)
    eta = build_design(x, fit.spec) @ fit.coef
    out = expit(eta) if fit.family == BINOMIAL else eta
    return out[0] if single else out


def linear_predictor(fit: GlmFit, design: np.ndarray) -> np.ndarray:
    return np.asarray(design, dtype=float) @ fit.coef


def weighted_loglik(design: np.ndarray, y: np.ndarray, w: np.ndarray,
                    beta: np.ndarray, family: str) -> float:
    """Weighted log likelihood (Gaussian: up to the variance constant)."""
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    eta = design @ np.asarray(beta, dtype=float)
    if family == BINOMIAL:
        # log expit identities keep this stable for large |eta|
        return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))
    if family == GAUSSIAN:
        return float(-0.5 * np.sum(w * (y - eta) ** 2))
    raise ValueError(f"unknown family {family!r}")
