"""Fit prediction models aimed at outcomes under a treatment strategy.

A deployed risk model is a map from a subset of covariates X* to a
predicted outcome. When the goal is the outcome that would be seen if
everyone received arm ``a``, fitting by ordinary regression of the
factual Y on X* answers the wrong question whenever treatment is
associated with X*. Two fitting strategies that target
E[Y | X*, everyone gets arm a] are provided:

``fit_tailored_standardized``
    Two stage regression. Stage one regresses Y on adjustment
    covariates X within the arm-a training rows; stage two regresses
    the stage-one fitted values on X* across all training rows.

``fit_tailored_ipw``
    Single weighted regression of Y on X* with inverse probability of
    treatment weights I(A = a) / Pr[A = a | X] estimated from the
    training rows.

``fit_plain`` gives the conventional unweighted regression for
comparison and for settings where tailoring is not wanted.

All fitting uses only the rows flagged as training.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Dataset, PositivityError, PredictorSubset, StaticRegime, StochasticRegime
from .glm import (BINOMIAL, GAUSSIAN, DesignSpec, GlmFit, build_design,
                  fit_glm, predict_glm)

_SCHEMA_VERSION = 1

DEFAULT_CLIP = (0.01, 0.99)


def _default_family(outcome: str) -> str:
    return BINOMIAL if outcome == "binary" else GAUSSIAN


@dataclass(frozen=True)
class FittedModel:
    """A prediction model ready to score new covariate rows.

    Fields
    ------
    glm : the underlying regression (stage two for standardization)
    predictors : covariate columns the model is allowed to read
    method : "plain", "ipw" or "standardized"
    target : strategy the model was tailored to (None = factual fit)
    outcome : "binary" or "continuous"
    bound : optional (lo, hi) clamp applied to predictions
    """

    glm: GlmFit
    predictors: PredictorSubset
    method: str
    target: Optional[object]
    outcome: str
    bound: Optional[tuple] = None

    def __post_init__(self):
        if self.method not in ("plain", "ipw", "standardized"):
            raise ValueError(f"unknown fitting method {self.method!r}")
        if self.glm.spec is None:
            raise ValueError("model needs a design spec to predict from covariates")
        used = set(self.glm.spec.columns_used)
        if not used <= set(self.predictors.indices):
            raise ValueError("model design reads columns outside the predictor subset")

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Score raw covariate rows (full covariate matrix, not the subset)."""
        out = predict_glm(self.glm, x)
        if self.bound is not None:
            out = np.clip(out, self.bound[0], self.bound[1])
        return out

    def to_json(self) -> dict:
        if isinstance(self.target, StaticRegime):
            target = self.target.to_json()
        elif isinstance(self.target, StochasticRegime):
            target = self.target.to_json()
        else:
            target = None
        return {"schema_version": _SCHEMA_VERSION,
                "kind": "fitted-model",
                "method": self.method,
                "outcome": self.outcome,
                "target": target,
                "predictors": [int(i) for i in self.predictors.indices],
                "bound": None if self.bound is None else [float(self.bound[0]), float(self.bound[1])],
                "glm": self.glm.to_json()}

    @staticmethod
    def from_json(obj: dict) -> "FittedModel":
        if obj.get("kind") != "fitted-model":
            raise ValueError("not a serialised model record")
        target_obj = obj.get("target")
        if target_obj is None:
            target = None
        elif target_obj.get("type") == "static":
            target = StaticRegime(int(target_obj["a"]))
        else:
            raise ValueError("only static targets can be restored from file")
        bound = obj.get("bound")
        return FittedModel(GlmFit.from_json(obj["glm"]),
                           PredictorSubset(tuple(obj["predictors"])),
                           obj["method"], target, obj["outcome"],
                           None if bound is None else (float(bound[0]), float(bound[1])))


def _predictors_for(spec: DesignSpec, predictors: Optional[PredictorSubset],
                    dim: int) -> PredictorSubset:
    subset = predictors if predictors is not None else PredictorSubset(spec.columns_used)
    subset.validate_for(dim)
    return subset


def fit_plain(data: Dataset, model_spec: DesignSpec,
              family: Optional[str] = None,
              predictors: Optional[PredictorSubset] = None) -> FittedModel:
    """Unweighted regression of the factual outcome on the model terms."""
    train = data.training()
    if train.n == 0:
        raise ValueError("no training rows")
    family = family or _default_family(data.outcome)
    spec = model_spec.fit(train.x)
    fit = fit_glm(build_design(train.x, spec), train.y, None, family, spec)
    bound = (0.0, 1.0) if (data.outcome == "binary" and family == GAUSSIAN) else None
    return FittedModel(fit, _predictors_for(spec, predictors, data.dim),
                       "plain", None, data.outcome, bound)


def fit_tailored_ipw(data: Dataset, target_a: int, model_spec: DesignSpec,
                     propensity_spec: DesignSpec,
                     family: Optional[str] = None,
                     predictors: Optional[PredictorSubset] = None,
                     clip: tuple = DEFAULT_CLIP,
                     truncate: Optional[float] = 0.995) -> FittedModel:
    """Weighted regression targeting outcomes under arm ``target_a``.

    A logistic model for treatment is fit on the training rows, the
    target-arm probabilities are clipped to ``clip``, and rows actually
    in the target arm get weight one over that probability (all other
    rows get zero). By default positive weights are capped at their
    99.5th percentile; pass ``truncate=None`` to disable the cap, e.g.
    in simulation studies where raw weights are wanted.
    """
    if target_a not in (0, 1):
        raise ValueError("target arm must be 0 or 1")
    train = data.training()
    if train.n == 0:
        raise ValueError("no training rows")
    in_arm = train.a == target_a
    if not in_arm.any():
        raise PositivityError(f"no training rows received arm {target_a}")
    family = family or _default_family(data.outcome)

    pspec = propensity_spec.fit(train.x)
    pfit = fit_glm(build_design(train.x, pspec), train.a.astype(float),
                   None, BINOMIAL, pspec)
    p1 = predict_glm(pfit, train.x)
    e = np.clip(p1 if target_a == 1 else 1.0 - p1, clip[0], clip[1])
    w = np.where(in_arm, 1.0 / e, 0.0)
    if truncate is not None:
        if not 0.0 < truncate <= 1.0:
            raise ValueError("truncate must be a quantile in (0, 1]")
        cap = np.quantile(w[in_arm], truncate)
        w = np.minimum(w, cap)

    spec = model_spec.fit(train.x)
    fit = fit_glm(build_design(train.x, spec), train.y, w, family, spec)
    bound = (0.0, 1.0) if (data.outcome == "binary" and family == GAUSSIAN) else None
    return FittedModel(fit, _predictors_for(spec, predictors, data.dim),
                       "ipw", StaticRegime(target_a), data.outcome, bound)


def fit_tailored_standardized(data: Dataset, target_a: int,
                              outcome_spec: DesignSpec,
                              model_spec: Optional[DesignSpec] = None,
                              family: Optional[str] = None,
                              predictors: Optional[PredictorSubset] = None,
                              draws: int = 0, seed: int = 0) -> FittedModel:
    """Two stage regression targeting outcomes under arm ``target_a``.

    Stage one fits ``outcome_spec`` to the training rows that received
    the target arm. Stage two regresses the stage-one fitted values,
    evaluated at every training row, on ``model_spec`` with a Gaussian
    family; its predictions are clamped to [0, 1] for binary outcomes.

    With ``model_spec=None`` the stage-one fit itself is returned
    (appropriate when the model may use all adjustment covariates).

    ``draws > 0`` replaces the fitted values by that many simulated
    outcomes per row from the stage-one fit (rows are stacked), which
    adds Monte Carlo noise but can be convenient when the second stage
    is fit by software that wants raw responses.
    """
    if target_a not in (0, 1):
        raise ValueError("target arm must be 0 or 1")
    train = data.training()
    if train.n == 0:
        raise ValueError("no training rows")
    in_arm = train.a == target_a
    if not in_arm.any():
        raise PositivityError(f"no training rows received arm {target_a}")
    family = family or _default_family(data.outcome)

    ospec = outcome_spec.fit(train.x[in_arm])
    stage1 = fit_glm(build_design(train.x[in_arm], ospec), train.y[in_arm],
                     None, family, ospec)
    if model_spec is None:
        if draws:
            warnings.warn("draws ignored without a second stage", RuntimeWarning)
        bound = (0.0, 1.0) if (data.outcome == "binary" and family == GAUSSIAN) else None
        return FittedModel(stage1, _predictors_for(ospec, predictors, data.dim),
                           "standardized", StaticRegime(target_a), data.outcome, bound)

    mu = predict_glm(stage1, train.x)
    x2 = train.x
    resp = mu
    if draws > 0:
        rng = np.random.default_rng(seed)
        if family == BINOMIAL:
            sim = rng.binomial(1, np.clip(mu, 0.0, 1.0), size=(draws, train.n)).astype(float)
        else:
            resid = train.y[in_arm] - predict_glm(stage1, train.x[in_arm])
            sd = float(np.sqrt(np.mean(resid ** 2)))
            sim = mu[None, :] + sd * rng.standard_normal((draws, train.n))
        x2 = np.tile(train.x, (draws, 1))
        resp = sim.reshape(-1)

    spec = model_spec.fit(train.x)
    stage2 = fit_glm(build_design(x2, spec), resp, None, GAUSSIAN, spec)
    bound = (0.0, 1.0) if data.outcome == "binary" else None
    return FittedModel(stage2, _predictors_for(spec, predictors, data.dim),
                       "standardized", StaticRegime(target_a), data.outcome, bound)
