"""Performance under treatment strategies spanning several decision points.

The estimand is the expected loss of a baseline prediction model if
treatment at times 0..K had followed a given strategy. Two estimators
are provided, mirroring the single time point ones:

``loss_ipw_sequential``
    Weight each subject who followed the strategy at every decision
    point by the inverse product of per-time propensities
    Pr[A_k = a^g_k | history], optionally stabilised by a numerator
    model using baseline covariates only.

``loss_ice_sequential``
    Iterated conditional expectations: starting from the realised
    losses, regress backwards through time, at each step fitting on the
    subjects whose treatment so far agrees with the strategy and
    predicting for everyone still in scope.

With a single decision point (K = 0) both reduce to the time-fixed
IPW and conditional-loss estimators.

Strategies are :class:`SequentialRegime` objects: a rule per time that
maps the observed history to the arm the strategy would assign. The
package evaluates rules on observed histories; for subjects who have
followed the strategy so far those coincide with the strategy's own
histories, and only such subjects ever receive weight.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Loss, PositivityError, SequentialDataset
from .glm import BINOMIAL, GAUSSIAN, DesignSpec, build_design, fit_glm, predict_glm
from .nuisance import _StratumMean
from .perf import PerfEstimate
from .tailor import DEFAULT_CLIP, FittedModel


@dataclass(frozen=True)
class SequentialRegime:
    """Treatment strategy over decision points 0..K.

    ``assign(k, xs, a_prefix)`` returns the (n,) array of arms the
    strategy dictates at time k, given covariate blocks xs[0..k] and the
    treatments received before k (an (n, k) array).
    """

    assign: Callable[[int, tuple, np.ndarray], np.ndarray]
    horizon: int
    label: str = "sequential"

    @staticmethod
    def static(arms: Sequence[int]) -> "SequentialRegime":
        arms = tuple(int(a) for a in arms)
        if any(a not in (0, 1) for a in arms):
            raise ValueError("arms must be 0 or 1")

        def rule(k, xs, a_prefix):
            return np.full(xs[0].shape[0], arms[k], dtype=np.int8)

        return SequentialRegime(rule, len(arms) - 1,
                                "static:" + "".join(str(a) for a in arms))

    def targets_and_followers(self, data: SequentialDataset):
        """Arms the strategy assigns at each time, evaluated on observed
        histories, plus the cumulative agreement indicator.

        Returns (targets, followers): both (n, K+1); followers[:, k]
        flags rows whose observed treatment matches the strategy at
        every time up to and including k.
        """
        if self.horizon != data.horizon:
            raise ValueError("strategy and data cover different numbers of decision points")
        n = data.n
        targets = np.zeros((n, data.horizon + 1), dtype=np.int8)
        followers = np.zeros((n, data.horizon + 1), dtype=bool)
        agree = np.ones(n, dtype=bool)
        for k in range(data.horizon + 1):
            tk = np.asarray(self.assign(k, data.xs[: k + 1], data.a[:, :k]))
            if tk.shape != (n,) or not np.isin(tk, (0, 1)).all():
                raise ValueError(f"strategy rule at time {k} must return n binary arms")
            targets[:, k] = tk
            agree = agree & (data.a[:, k] == tk)
            followers[:, k] = agree
        return targets, followers

    def to_json(self) -> dict:
        return {"type": "sequential", "label": self.label,
                "horizon": int(self.horizon)}


def _history_matrix(data: SequentialDataset, k: int) -> np.ndarray:
    return np.hstack([data.xs[j] for j in range(k + 1)])


def _default_history_spec(data: SequentialDataset, k: int) -> DesignSpec:
    return DesignSpec.main_effects(range(_history_matrix(data, k).shape[1]))


@dataclass(frozen=True)
class SequentialWeights:
    """Inverse probability weights for one strategy on the test rows."""

    weights: np.ndarray
    followers: np.ndarray  # (n_test, K+1) cumulative agreement
    targets: np.ndarray
    stabilized: bool

    @property
    def n_followers(self) -> int:
        return int(self.followers[:, -1].sum())


def sequential_weights(data: SequentialDataset, regime: SequentialRegime,
                       specs: Optional[Sequence[DesignSpec]] = None,
                       numerator_specs: Optional[Sequence[DesignSpec]] = None,
                       stabilize: bool = False,
                       clip: Optional[tuple] = DEFAULT_CLIP,
                       saturated: bool = False) -> SequentialWeights:
    """Estimate the strategy-following weights on the test rows.

    At each time k a treatment model is fit among test subjects whose
    history agrees with the strategy before k: by default a logistic
    regression on the covariate history (concatenated blocks x_0..x_k,
    main effects), or the stratum-mean frequency when ``saturated``.
    ``specs`` overrides the per-time design, indexed into the
    concatenated history matrix.

    Followers of the whole strategy get the inverse product of their
    per-time target-arm probabilities; everyone else gets zero. With
    ``stabilize=True`` the product of numerator probabilities from
    per-time models on baseline covariates only (``numerator_specs``
    to override) multiplies the weight, shrinking its spread.

    Raises :class:`PositivityError` when a time point has no agreeing
    subjects left or its risk set contains a single treatment level.
    """
    test = data.testing()
    if test.n == 0:
        raise ValueError("no test rows")
    targets, followers = regime.targets_and_followers(test)
    horizon = test.horizon

    denom = np.ones(test.n)
    numer = np.ones(test.n)
    at_risk = np.ones(test.n, dtype=bool)
    for k in range(horizon + 1):
        if not at_risk.any():
            raise PositivityError(f"no subjects following the strategy before time {k}")
        a_k = test.a[at_risk, k].astype(float)
        if a_k.min() == a_k.max():
            raise PositivityError(
                f"time {k}: risk set contains a single treatment level")
        hist = _history_matrix(test, k)
        if saturated:
            backend = _StratumMean(hist[at_risk], a_k)
            p1 = backend.values(hist[at_risk])
        else:
            spec = (specs[k] if specs is not None else _default_history_spec(test, k))
            fitted = spec.fit(hist[at_risk])
            fit = fit_glm(build_design(hist[at_risk], fitted), a_k,
                          None, BINOMIAL, fitted)
            p1 = predict_glm(fit, hist[at_risk])
        tk = targets[at_risk, k]
        pr = np.where(tk == 1, p1, 1.0 - p1)
        if not saturated and clip is not None:
            pr = np.clip(pr, clip[0], clip[1])
        denom[at_risk] *= pr
        if stabilize:
            base = test.xs[0]
            if saturated:
                nbackend = _StratumMean(base[at_risk], a_k)
                n1 = nbackend.values(base[at_risk])
            else:
                nspec = (numerator_specs[k] if numerator_specs is not None
                         else DesignSpec.main_effects(range(base.shape[1])))
                nfitted = nspec.fit(base[at_risk])
                nfit = fit_glm(build_design(base[at_risk], nfitted), a_k,
                               None, BINOMIAL, nfitted)
                n1 = predict_glm(nfit, base[at_risk])
            npr = np.where(tk == 1, n1, 1.0 - n1)
            if not saturated and clip is not None:
                npr = np.clip(npr, clip[0], clip[1])
            numer[at_risk] *= npr
        at_risk = followers[:, k]

    w = np.where(followers[:, -1], numer / denom, 0.0)
    if not stabilize:
        low = w[followers[:, -1]] < 1.0 - 1e-9
        if low.any():
            raise AssertionError("unstabilised follower weights fell below one")
    return SequentialWeights(w, followers, targets, stabilize)


def loss_ipw_sequential(data: SequentialDataset, model: FittedModel,
                        regime: SequentialRegime, loss: Loss,
                        weights: Optional[SequentialWeights] = None,
                        **weight_kwargs) -> PerfEstimate:
    """Weighted mean loss under the strategy.

    The model is scored on baseline covariates; each test row
    contributes its weight times its observed loss, divided by the
    number of test rows. Pass a precomputed :class:`SequentialWeights`
    to reuse weights across models; extra keyword arguments go to
    :func:`sequential_weights` otherwise.
    """
    test = data.testing()
    if test.n == 0:
        raise ValueError("no test rows")
    if weights is None:
        weights = sequential_weights(data, regime, **weight_kwargs)
    if weights.weights.shape != (test.n,):
        raise ValueError("weights were computed for a different test set")
    losses = loss(test.y, model.predict(test.xs[0]))
    value = float(np.mean(weights.weights * losses))
    return PerfEstimate("ipw", f"loss:{loss.kind}", regime.to_json(), test.n, value)


def loss_ice_sequential(data: SequentialDataset, model: FittedModel,
                        regime: SequentialRegime, loss: Loss,
                        specs: Optional[Sequence[DesignSpec]] = None,
                        saturated: bool = False) -> PerfEstimate:
    """Iterated conditional expectation estimate of the loss under the
    strategy.

    The recursion starts from realised losses L(Y, model(x_0)) and walks
    time backwards: at time k it regresses the current value on the
    covariate history, fitting only on subjects who agree with the
    strategy through time k, then replaces the value of every subject
    agreeing through k-1 by the fitted prediction. The time-0 pass
    fits on strategy-agreeing subjects and predicts for all test rows;
    the estimate is the mean of those predictions.

    Regressions are Gaussian on the history main effects by default;
    ``specs`` (one per time) overrides the design, ``saturated`` uses
    stratum means instead.
    """
    test = data.testing()
    if test.n == 0:
        raise ValueError("no test rows")
    targets, followers = regime.targets_and_followers(test)
    values = loss(test.y, model.predict(test.xs[0]))

    for k in range(test.horizon, -1, -1):
        in_scope = followers[:, k - 1] if k > 0 else np.ones(test.n, dtype=bool)
        fit_rows = followers[:, k]
        if not fit_rows.any():
            raise PositivityError(f"time {k}: no subjects agree with the strategy")
        hist = _history_matrix(test, k)
        if saturated:
            backend = _StratumMean(hist[fit_rows], values[fit_rows])
            preds = backend.values(hist[in_scope])
        else:
            spec = (specs[k] if specs is not None else _default_history_spec(test, k))
            fitted = spec.fit(hist[fit_rows])
            fit = fit_glm(build_design(hist[fit_rows], fitted), values[fit_rows],
                          None, GAUSSIAN, fitted)
            preds = predict_glm(fit, hist[in_scope])
        values = values.copy()
        values[in_scope] = preds

    return PerfEstimate("ice", f"loss:{loss.kind}", regime.to_json(),
                        test.n, float(np.mean(values)))
