"""Nuisance models for counterfactual performance estimation.

Two nuisances appear in the estimators: the propensity of receiving the
target arm given covariates, e_a(x) = Pr[A = a | X = x], and the
conditional expected loss h_a(x) = E[L(Y, model(x)) | X = x, A = a].
Both are always fit on the test split, never on the rows the prediction
model was trained on.

For a binary outcome the conditional loss comes from a model for
q_a(x) = Pr[Y = 1 | X = x, A = a] through the exact expansion

    h_a(x) = q_a(x) L(1, model(x)) + (1 - q_a(x)) L(0, model(x)),

which holds for any loss evaluated at a fixed prediction. For a
continuous outcome the observed losses are regressed on covariates
directly and the fit is floored at zero.

Besides regression-based nuisances there are stratum-mean ("saturated")
versions for low-cardinality covariates and wrappers for nuisances
known by design (e.g. the randomisation probability in a trial).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import Dataset, Loss, PositivityError
from .glm import BINOMIAL, GAUSSIAN, DesignSpec, GlmFit, build_design, fit_glm, predict_glm
from .tailor import DEFAULT_CLIP, FittedModel


# ---------------------------------------------------------------------------
# mean-function backends (regression fit, stratum table, known function)


class _GlmMean:
    def __init__(self, fit: GlmFit):
        self.fit = fit

    def values(self, x: np.ndarray) -> np.ndarray:
        return np.atleast_1d(predict_glm(self.fit, x))


class _StratumMean:
    """Empirical mean of a response within each distinct covariate row."""

    def __init__(self, x: np.ndarray, resp: np.ndarray):
        table = {}
        sums = {}
        counts = {}
        for row, v in zip(np.asarray(x, dtype=float), np.asarray(resp, dtype=float)):
            key = row.tobytes()
            sums[key] = sums.get(key, 0.0) + v
            counts[key] = counts.get(key, 0) + 1
        for key in sums:
            table[key] = sums[key] / counts[key]
        self.table = table

    def values(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        out = np.empty(x.shape[0])
        for i, row in enumerate(x):
            key = row.tobytes()
            if key not in self.table:
                raise PositivityError("covariate pattern absent from the stratum table")
            out[i] = self.table[key]
        return out


class _Fn:
    def __init__(self, fn: Callable[[np.ndarray], np.ndarray]):
        self.fn = fn

    def values(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        return np.broadcast_to(np.asarray(self.fn(x), dtype=float), (x.shape[0],)).copy()


# ---------------------------------------------------------------------------
# propensity


@dataclass(frozen=True)
class PropensityModel:
    """Estimated Pr[A = target_a | X], clipped away from 0 and 1.

    The backend always models Pr[A = 1 | X]; orientation to the target
    arm and clipping happen at evaluation.
    """

    backend: object
    target_a: int
    clip: Optional[tuple] = DEFAULT_CLIP

    def prob(self, x: np.ndarray) -> np.ndarray:
        p1 = self.backend.values(x)
        p = p1 if self.target_a == 1 else 1.0 - p1
        if self.clip is not None:
            p = np.clip(p, self.clip[0], self.clip[1])
        return p


def fit_propensity(data: Dataset, spec: DesignSpec, target_a: int,
                   clip: Optional[tuple] = DEFAULT_CLIP,
                   saturated: bool = False) -> PropensityModel:
    """Fit the treatment model on the test rows.

    ``saturated=True`` replaces the logistic fit by the empirical
    treatment frequency within each distinct covariate row (sensible
    only for a handful of discrete covariates); pass ``clip=None`` there
    to keep the frequencies exact.
    """
    if target_a not in (0, 1):
        raise ValueError("target arm must be 0 or 1")
    test = data.testing()
    if test.n == 0:
        raise ValueError("no test rows")
    if (test.a == target_a).sum() == 0:
        raise PositivityError(f"no test rows received arm {target_a}")
    if saturated:
        return PropensityModel(_StratumMean(test.x, (test.a == 1).astype(float)),
                               target_a, clip)
    fitted = spec.fit(test.x)
    fit = fit_glm(build_design(test.x, fitted), test.a.astype(float),
                  None, BINOMIAL, fitted)
    return PropensityModel(_GlmMean(fit), target_a, clip)


def known_propensity(prob_a1: Callable[[np.ndarray], np.ndarray], target_a: int,
                     clip: Optional[tuple] = None) -> PropensityModel:
    """Wrap a known treatment mechanism. ``prob_a1`` maps covariate rows
    to Pr[A = 1 | X], e.g. a constant in a marginally randomised trial."""
    return PropensityModel(_Fn(prob_a1), target_a, clip)


# ---------------------------------------------------------------------------
# conditional loss


@dataclass(frozen=True)
class BinaryCondLoss:
    """Conditional loss for a binary outcome via the q-expansion."""

    q_backend: object
    model: FittedModel
    loss: Loss

    def h(self, x: np.ndarray) -> np.ndarray:
        q = self.q_backend.values(x)
        mu = np.atleast_1d(self.model.predict(x))
        return q * self.loss(1.0, mu) + (1.0 - q) * self.loss(0.0, mu)

    def q(self, x: np.ndarray) -> np.ndarray:
        return self.q_backend.values(x)


@dataclass(frozen=True)
class ContinuousCondLoss:
    """Direct regression of observed losses; predictions floored at 0."""

    backend: object

    def h(self, x: np.ndarray) -> np.ndarray:
        return np.clip(self.backend.values(x), 0.0, None)

    def q(self, x: np.ndarray) -> np.ndarray:
        raise ValueError("outcome probabilities are only defined for binary outcomes")


def fit_cond_loss(data: Dataset, model: FittedModel, spec: DesignSpec,
                  target_a: int, loss: Loss, saturated: bool = False):
    """Fit the conditional loss nuisance on the test rows of the target arm.

    Binary outcomes get a logistic model for Pr[Y = 1 | X, A = target]
    (or its stratum-mean version) and the loss expansion; continuous
    outcomes get a Gaussian regression of the realised losses.
    """
    if target_a not in (0, 1):
        raise ValueError("target arm must be 0 or 1")
    test = data.testing()
    in_arm = test.a == target_a
    if not in_arm.any():
        raise PositivityError(f"no test rows received arm {target_a}")
    x_arm = test.x[in_arm]
    if data.outcome == "binary":
        if saturated:
            backend = _StratumMean(x_arm, test.y[in_arm])
        else:
            fitted = spec.fit(x_arm)
            fit = fit_glm(build_design(x_arm, fitted), test.y[in_arm],
                          None, BINOMIAL, fitted)
            backend = _GlmMean(fit)
        return BinaryCondLoss(backend, model, loss)
    losses = loss(test.y[in_arm], model.predict(x_arm))
    if saturated:
        backend = _StratumMean(x_arm, losses)
    else:
        fitted = spec.fit(x_arm)
        fit = fit_glm(build_design(x_arm, fitted), losses, None, GAUSSIAN, fitted)
        backend = _GlmMean(fit)
    return ContinuousCondLoss(backend)


def known_cond_loss_binary(q_fn: Callable[[np.ndarray], np.ndarray],
                           model: FittedModel, loss: Loss) -> BinaryCondLoss:
    """Conditional loss from a known Pr[Y = 1 | X, A = a] function."""
    return BinaryCondLoss(_Fn(q_fn), model, loss)


def known_cond_loss(h_fn: Callable[[np.ndarray], np.ndarray]) -> ContinuousCondLoss:
    """Conditional loss from a known h_a function (no flooring applied
    beyond zero, so supply a nonnegative function)."""
    return ContinuousCondLoss(_Fn(h_fn))


# ---------------------------------------------------------------------------
# bundle


@dataclass(frozen=True)
class NuisanceSet:
    """Nuisances for one target arm. Either component may be omitted;
    estimators that need the missing one will refuse to run."""

    target_a: int
    loss: Loss
    propensity: Optional[PropensityModel] = None
    cond_loss: Optional[object] = None

    def __post_init__(self):
        if self.propensity is None and self.cond_loss is None:
            raise ValueError("nuisance set needs at least one component")
        if self.propensity is not None and self.propensity.target_a != self.target_a:
            raise ValueError("propensity model is oriented to a different arm")

    def e_a(self, x: np.ndarray) -> np.ndarray:
        if self.propensity is None:
            raise ValueError("this nuisance set has no propensity model")
        return self.propensity.prob(x)

    def h_a(self, x: np.ndarray) -> np.ndarray:
        if self.cond_loss is None:
            raise ValueError("this nuisance set has no conditional loss model")
        return self.cond_loss.h(x)

    def q_a(self, x: np.ndarray) -> np.ndarray:
        if self.cond_loss is None:
            raise ValueError("this nuisance set has no conditional loss model")
        return self.cond_loss.q(x)


def fit_nuisances(data: Dataset, model: FittedModel, target_a: int, loss: Loss,
                  propensity_spec: DesignSpec, cond_loss_spec: DesignSpec,
                  clip: Optional[tuple] = DEFAULT_CLIP,
                  saturated: bool = False) -> NuisanceSet:
    """Fit both nuisances on the test split and bundle them."""
    prop = fit_propensity(data, propensity_spec, target_a,
                          None if saturated else clip, saturated)
    cond = fit_cond_loss(data, model, cond_loss_spec, target_a, loss, saturated)
    return NuisanceSet(target_a, loss, prop, cond)
