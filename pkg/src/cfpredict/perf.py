"""Estimate model performance under a hypothetical treatment strategy.

Given a prediction model, a target strategy, and test data in which
treatment was not assigned according to that strategy, the observable
mean loss (the "naive" estimate) generally differs from the loss the
model would incur if the strategy were followed. The estimators here
correct for that using the nuisance models from :mod:`cfpredict.nuisance`:

``loss_naive``   mean observed loss, no correction (biased benchmark)
``loss_cl``      mean of the fitted conditional loss h_a over test rows
``loss_ipw``     inverse probability weighted mean of observed losses
``loss_dr``      doubly robust combination: consistent when either the
                 conditional loss model or the propensity model is right

Discrimination (AUC) and calibration curves get analogous plug-ins:
an outcome-model version built from q_a(x) = Pr[Y = 1 | X, A = a] and a
weighted version using the propensity. A doubly robust AUC is not
offered; pairwise estimands do not fit the one-step correction used for
means, so only the two plug-ins are exposed.

``cv_select`` picks among candidate model-fitting recipes by k-fold
cross validation, scoring each fold with any of the loss estimators so
selection can target the strategy of interest rather than the factual
data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .core import (Dataset, Loss, PositivityError, StaticRegime,
                   StochasticRegime, SQUARED)
from .glm import DesignSpec
from .nuisance import NuisanceSet, fit_cond_loss, fit_propensity
from .tailor import (DEFAULT_CLIP, FittedModel, fit_plain, fit_tailored_ipw,
                     fit_tailored_standardized)

_SCHEMA_VERSION = 1

_BLOCK = 1024  # row block size for pairwise accumulations


class NoComparablePairsError(RuntimeError):
    """AUC needs at least one case and one non-case among the usable rows."""


@dataclass(frozen=True)
class PerfEstimate:
    """One performance estimate, scalar or curve, ready to serialise."""

    estimator: str
    measure: str
    target: Optional[dict]
    n_test: int
    value: Optional[float] = None
    curve_x: Optional[np.ndarray] = None
    curve_y: Optional[np.ndarray] = None
    se: Optional[float] = None

    def with_se(self, se: float) -> "PerfEstimate":
        return PerfEstimate(self.estimator, self.measure, self.target,
                            self.n_test, self.value, self.curve_x,
                            self.curve_y, float(se))

    def to_json(self) -> dict:
        out = {"schema_version": _SCHEMA_VERSION,
               "estimator": self.estimator,
               "measure": self.measure,
               "target": self.target,
               "n_test": int(self.n_test)}
        if self.value is not None:
            out["value"] = float(self.value)
        if self.curve_x is not None:
            out["curve"] = {"x": [float(v) for v in self.curve_x],
                            "y": [float(v) for v in self.curve_y]}
        if self.se is not None:
            out["se"] = float(self.se)
        return out


def _test_part(data: Dataset) -> Dataset:
    test = data.testing()
    if test.n == 0:
        raise ValueError("no test rows to evaluate on")
    return test


def _arm_weights(test: Dataset, nuis: NuisanceSet) -> np.ndarray:
    """I(A = a) / e_a(X) on test rows, with the division only taken on
    target-arm rows so an (unused) zero propensity elsewhere is harmless."""
    ind = test.a == nuis.target_a
    e = nuis.e_a(test.x)
    w = np.zeros(test.n)
    w[ind] = 1.0 / e[ind]
    return w


def _target_json(target) -> Optional[dict]:
    if target is None:
        return None
    return target.to_json()


# ---------------------------------------------------------------------------
# expected loss


def loss_naive(data: Dataset, model: FittedModel, loss: Loss = SQUARED) -> PerfEstimate:
    """Mean observed loss on the test rows, ignoring treatment."""
    test = _test_part(data)
    value = float(np.mean(loss(test.y, model.predict(test.x))))
    return PerfEstimate("naive", f"loss:{loss.kind}", None, test.n, value)


def loss_cl(data: Dataset, nuis: NuisanceSet) -> PerfEstimate:
    """Average the fitted conditional loss over every test row."""
    test = _test_part(data)
    value = float(np.mean(nuis.h_a(test.x)))
    return PerfEstimate("cl", f"loss:{nuis.loss.kind}", _target_json(StaticRegime(nuis.target_a)),
                        test.n, value)


def loss_ipw(data: Dataset, model: FittedModel, nuis: NuisanceSet) -> PerfEstimate:
    """Weight target-arm losses by inverse propensity; average over all
    test rows (other rows contribute zero)."""
    test = _test_part(data)
    w = _arm_weights(test, nuis)
    losses = nuis.loss(test.y, model.predict(test.x))
    value = float(np.mean(w * losses))
    return PerfEstimate("ipw", f"loss:{nuis.loss.kind}", _target_json(StaticRegime(nuis.target_a)),
                        test.n, value)


def loss_dr(data: Dataset, model: FittedModel, nuis: NuisanceSet) -> PerfEstimate:
    """Doubly robust estimate: conditional-loss mean plus a weighted
    residual correction from the target-arm rows."""
    test = _test_part(data)
    w = _arm_weights(test, nuis)
    h = nuis.h_a(test.x)
    losses = nuis.loss(test.y, model.predict(test.x))
    value = float(np.mean(h + w * (losses - h)))
    return PerfEstimate("dr", f"loss:{nuis.loss.kind}", _target_json(StaticRegime(nuis.target_a)),
                        test.n, value)


def loss_cl_stochastic(data: Dataset, regime: StochasticRegime,
                       nuis1: NuisanceSet, nuis0: NuisanceSet) -> PerfEstimate:
    """Conditional-loss estimate under a strategy assigning arm 1 with
    covariate-dependent probability: mix the two arms' h functions."""
    if nuis1.target_a != 1 or nuis0.target_a != 0:
        raise ValueError("pass arm-1 nuisances first, arm-0 second")
    test = _test_part(data)
    pi = regime.probabilities(test.x)
    value = float(np.mean(pi * nuis1.h_a(test.x) + (1.0 - pi) * nuis0.h_a(test.x)))
    return PerfEstimate("cl", f"loss:{nuis1.loss.kind}", _target_json(regime), test.n, value)


def loss_ipw_stochastic(data: Dataset, model: FittedModel, regime: StochasticRegime,
                        nuis1: NuisanceSet, nuis0: NuisanceSet) -> PerfEstimate:
    """Weighted estimate under a stochastic strategy: each subject's
    observed loss is weighted by the strategy's probability of the arm
    they actually received over the propensity of that arm."""
    if nuis1.target_a != 1 or nuis0.target_a != 0:
        raise ValueError("pass arm-1 nuisances first, arm-0 second")
    test = _test_part(data)
    pi = regime.probabilities(test.x)
    losses = nuis1.loss(test.y, model.predict(test.x))
    w = np.zeros(test.n)
    on1 = test.a == 1
    w[on1] = pi[on1] / nuis1.e_a(test.x)[on1]
    w[~on1] = (1.0 - pi[~on1]) / nuis0.e_a(test.x)[~on1]
    value = float(np.mean(w * losses))
    return PerfEstimate("ipw", f"loss:{nuis1.loss.kind}", _target_json(regime), test.n, value)


# ---------------------------------------------------------------------------
# discrimination


def _pairwise_auc(pred_i: np.ndarray, pred_j: np.ndarray,
                  w_i: np.ndarray, w_j: np.ndarray,
                  same_index: bool) -> float:
    """Weighted share of (i, j) pairs with pred_i > pred_j, ties counted
    half. ``same_index=True`` means the two row sets are the same rows,
    so diagonal pairs are excluded."""
    num = 0.0
    den = 0.0
    for start in range(0, len(pred_i), _BLOCK):
        stop = min(start + _BLOCK, len(pred_i))
        pi = pred_i[start:stop, None]
        wi = w_i[start:stop, None]
        gt = (pi > pred_j[None, :]).astype(float)
        eq = (pi == pred_j[None, :]).astype(float)
        wmat = wi * w_j[None, :]
        if same_index:
            for r in range(start, stop):
                wmat[r - start, r] = 0.0
        num += float(np.sum(wmat * (gt + 0.5 * eq)))
        den += float(np.sum(wmat))
    if den <= 0.0:
        raise NoComparablePairsError("no weighted case/non-case pairs")
    return num / den


def auc(data: Dataset, model: FittedModel, kind: str = "naive",
        nuis: Optional[NuisanceSet] = None) -> PerfEstimate:
    """Area under the ROC curve for the model's predictions.

    kind
        "naive"  observed outcomes, all test rows, any treatment
        "om"     outcome-model plug-in: every ordered pair of test rows
                 weighted by q_a(x_i) (1 - q_a(x_j))
        "ipw"    target-arm pairs with observed case/non-case status,
                 weighted by 1 / (e_a(x_i) e_a(x_j))

    Ties in the predictions count one half. Raises
    :class:`NoComparablePairsError` when no usable pair exists.
    """
    if data.outcome != "binary":
        raise ValueError("AUC requires a binary outcome")
    test = _test_part(data)
    pred = np.asarray(model.predict(test.x))

    if kind == "naive":
        pos = test.y == 1.0
        n1 = int(pos.sum())
        n0 = test.n - n1
        if n1 == 0 or n0 == 0:
            raise NoComparablePairsError("test rows lack cases or non-cases")
        ranks = rankdata(pred)
        value = (float(np.sum(ranks[pos])) - n1 * (n1 + 1) / 2.0) / (n1 * n0)
        return PerfEstimate("naive", "auc", None, test.n, float(value))

    if nuis is None:
        raise ValueError(f"{kind!r} AUC needs nuisance models")
    target = _target_json(StaticRegime(nuis.target_a))

    if kind == "om":
        q = nuis.q_a(test.x)
        value = _pairwise_auc(pred, pred, q, 1.0 - q, same_index=True)
        return PerfEstimate("om", "auc", target, test.n, value)

    if kind == "ipw":
        arm = test.a == nuis.target_a
        e = nuis.e_a(test.x)
        cases = arm & (test.y == 1.0)
        noncases = arm & (test.y == 0.0)
        if not cases.any() or not noncases.any():
            raise NoComparablePairsError(
                f"arm {nuis.target_a} test rows lack cases or non-cases")
        value = _pairwise_auc(pred[cases], pred[noncases],
                              1.0 / e[cases], 1.0 / e[noncases], same_index=False)
        return PerfEstimate("ipw", "auc", target, test.n, value)

    raise ValueError(f"unknown AUC kind {kind!r}")


# ---------------------------------------------------------------------------
# calibration


def _tricube(u: np.ndarray) -> np.ndarray:
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    out[inside] = (1.0 - np.abs(u[inside]) ** 3) ** 3
    return out


def _calibration_inputs(data: Dataset, model: FittedModel, kind: str,
                        nuis: Optional[NuisanceSet]):
    """Predictions, response values, and base weights for one curve kind."""
    test = _test_part(data)
    pred = np.asarray(model.predict(test.x))
    if kind == "naive":
        return test, pred, test.y.astype(float), np.ones(test.n)
    if nuis is None:
        raise ValueError(f"{kind!r} calibration needs nuisance models")
    if kind == "ipw":
        return test, pred, test.y.astype(float), _arm_weights(test, nuis)
    if kind == "om":
        return test, pred, nuis.q_a(test.x), np.ones(test.n)
    raise ValueError(f"unknown calibration kind {kind!r}")


def calibration(data: Dataset, model: FittedModel, kind: str = "naive",
                nuis: Optional[NuisanceSet] = None, method: str = "binned",
                bins: int = 10, bandwidth: Optional[float] = None,
                grid_points: int = 100) -> PerfEstimate:
    """Calibration curve: observed (or reconstructed) outcome frequency
    as a function of predicted value.

    method="binned"
        Split test rows into ``bins`` equal-count groups by prediction;
        each point is (mean prediction, weighted mean response). An IPW
        bin with zero total weight raises :class:`PositivityError`.
    method="local-linear"
        Weighted local linear fit with a tricube kernel on a grid over
        the prediction range. The bandwidth defaults to 0.3 times the
        range; grid points with no kernel support come back NaN, and a
        locally singular design falls back to the weighted mean.
    """
    if data.outcome != "binary":
        raise ValueError("calibration curves require a binary outcome")
    test, pred, resp, base_w = _calibration_inputs(data, model, kind, nuis)
    target = None if kind == "naive" else _target_json(StaticRegime(nuis.target_a))

    if method == "binned":
        if bins < 1 or test.n < bins:
            raise ValueError("need at least as many test rows as bins")
        order = np.argsort(pred, kind="stable")
        xs, ys = [], []
        for b, idx in enumerate(np.array_split(order, bins)):
            wsum = float(np.sum(base_w[idx]))
            if wsum <= 0.0:
                raise PositivityError(f"calibration bin {b} has zero weight")
            xs.append(float(np.mean(pred[idx])))
            ys.append(float(np.sum(base_w[idx] * resp[idx]) / wsum))
        return PerfEstimate(kind, "calibration", target, test.n,
                            curve_x=np.asarray(xs), curve_y=np.asarray(ys))

    if method == "local-linear":
        lo, hi = float(np.min(pred)), float(np.max(pred))
        if hi == lo:
            wsum = float(np.sum(base_w))
            if wsum <= 0.0:
                raise PositivityError("calibration weights are all zero")
            y0 = float(np.sum(base_w * resp) / wsum)
            return PerfEstimate(kind, "calibration", target, test.n,
                                curve_x=np.asarray([lo]), curve_y=np.asarray([y0]))
        bw = bandwidth if bandwidth is not None else 0.3 * (hi - lo)
        if bw <= 0.0:
            raise ValueError("bandwidth must be positive")
        grid = np.linspace(lo, hi, grid_points)
        ys = np.empty(grid_points)
        for g, x0 in enumerate(grid):
            wloc = _tricube((pred - x0) / bw) * base_w
            wsum = float(np.sum(wloc))
            if wsum <= 0.0:
                ys[g] = np.nan
                continue
            d = pred - x0
            s1 = float(np.sum(wloc * d))
            s2 = float(np.sum(wloc * d * d))
            det = wsum * s2 - s1 * s1
            b0 = float(np.sum(wloc * resp))
            b1 = float(np.sum(wloc * d * resp))
            scale = wsum * s2
            if det <= 1e-12 * max(scale, 1e-300):
                ys[g] = b0 / wsum
            else:
                ys[g] = (s2 * b0 - s1 * b1) / det
        return PerfEstimate(kind, "calibration", target, test.n,
                            curve_x=grid, curve_y=ys)

    raise ValueError(f"unknown calibration method {method!r}")


# ---------------------------------------------------------------------------
# cross-validated model selection


@dataclass(frozen=True)
class CandidateModel:
    """A named model-fitting recipe that cv_select can fit on any fold."""

    name: str
    method: str  # "plain" | "ipw" | "standardized"
    model_spec: DesignSpec
    family: Optional[str] = None
    propensity_spec: Optional[DesignSpec] = None
    outcome_spec: Optional[DesignSpec] = None
    clip: tuple = DEFAULT_CLIP
    truncate: Optional[float] = 0.995

    def fit(self, data: Dataset, target_a: Optional[int]) -> FittedModel:
        if self.method == "plain":
            return fit_plain(data, self.model_spec, self.family)
        if target_a is None:
            raise ValueError(f"candidate {self.name!r} needs a target arm")
        if self.method == "ipw":
            if self.propensity_spec is None:
                raise ValueError(f"candidate {self.name!r} needs a propensity spec")
            return fit_tailored_ipw(data, target_a, self.model_spec,
                                    self.propensity_spec, self.family,
                                    clip=self.clip, truncate=self.truncate)
        if self.method == "standardized":
            if self.outcome_spec is None:
                raise ValueError(f"candidate {self.name!r} needs an outcome spec")
            return fit_tailored_standardized(data, target_a, self.outcome_spec,
                                             self.model_spec, self.family)
        raise ValueError(f"unknown candidate method {self.method!r}")


@dataclass(frozen=True)
class CvResult:
    selected: int
    names: tuple
    scores: np.ndarray       # mean score per candidate
    fold_scores: np.ndarray  # (n_candidates, k)

    def to_json(self) -> dict:
        return {"schema_version": _SCHEMA_VERSION,
                "kind": "cv-selection",
                "selected": int(self.selected),
                "selected_name": self.names[self.selected],
                "names": list(self.names),
                "scores": [float(v) for v in self.scores],
                "fold_scores": [[float(v) for v in row] for row in self.fold_scores]}


def cv_select(data: Dataset, candidates: Sequence[CandidateModel], k: int = 5,
              estimator: str = "dr", target_a: Optional[int] = None,
              loss: Loss = SQUARED,
              propensity_spec: Optional[DesignSpec] = None,
              cond_loss_spec: Optional[DesignSpec] = None,
              clip: tuple = DEFAULT_CLIP, seed: int = 0) -> CvResult:
    """Choose among candidate recipes by k-fold cross validation on the
    training rows.

    Each fold is held out once: candidates are fit on the remaining
    folds and scored on the held-out fold with the requested loss
    estimator ("naive", "cl", "ipw" or "dr"); nuisances are refit on
    each held-out fold. The candidate with the smallest mean score
    wins, ties going to the earlier index. A fold that lacks a
    treatment arm needed by the estimator aborts the run with a
    :class:`PositivityError` naming the fold.
    """
    if not candidates:
        raise ValueError("no candidates given")
    if estimator not in ("naive", "cl", "ipw", "dr"):
        raise ValueError(f"unknown estimator {estimator!r}")
    if estimator != "naive":
        if target_a is None:
            raise ValueError("counterfactual estimators need a target arm")
        if estimator in ("ipw", "dr") and propensity_spec is None:
            raise ValueError("ipw/dr scoring needs a propensity spec")
        if estimator in ("cl", "dr") and cond_loss_spec is None:
            raise ValueError("cl/dr scoring needs a conditional loss spec")
    train = data.training()
    if k < 2:
        raise ValueError("k must be at least 2")
    if train.n < k:
        raise ValueError("fewer training rows than folds")

    rng = np.random.default_rng(seed)
    folds = np.array_split(rng.permutation(train.n), k)
    fold_scores = np.empty((len(candidates), k))
    for f, hold in enumerate(folds):
        mask = np.zeros(train.n, dtype=bool)
        mask[hold] = True
        fit_part = train.subset(~mask).replace_split("train")
        eval_part = train.subset(mask).replace_split("test")
        try:
            prop = None
            if estimator in ("ipw", "dr"):
                prop = fit_propensity(eval_part, propensity_spec, target_a, clip)
            for c, cand in enumerate(candidates):
                model = cand.fit(fit_part, target_a)
                if estimator == "naive":
                    score = loss_naive(eval_part, model, loss).value
                else:
                    cond = None
                    if estimator in ("cl", "dr"):
                        cond = fit_cond_loss(eval_part, model, cond_loss_spec,
                                             target_a, loss)
                    nuis = NuisanceSet(target_a, loss, prop, cond)
                    if estimator == "cl":
                        score = loss_cl(eval_part, nuis).value
                    elif estimator == "ipw":
                        score = loss_ipw(eval_part, model, nuis).value
                    else:
                        score = loss_dr(eval_part, model, nuis).value
                fold_scores[c, f] = score
        except PositivityError as err:
            raise PositivityError(f"fold {f}: {err}") from err
    scores = fold_scores.mean(axis=1)
    return CvResult(int(np.argmin(scores)), tuple(c.name for c in candidates),
                    scores, fold_scores)
