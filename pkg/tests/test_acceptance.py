"""End-to-end acceptance checks.

Each test ends by printing a single "[acceptance] <label>: PASS/FAIL"
line that stays visible without -s, then asserts, so the terminal
always carries one verdict per check. The two full simulation studies
and the bootstrap study dominate the runtime of this file (a couple of
minutes in total); everything else is fast.
"""
import math
import time

import numpy as np
import pytest
from scipy.special import expit

from cfpredict.cli import main as cli_main
from cfpredict.core import (Dataset, PredictorSubset, SequentialDataset,
                            SQUARED, StochasticRegime, split_dataset)
from cfpredict.glm import (BINOMIAL, GAUSSIAN, DesignSpec, GlmFit, fit_glm,
                           weighted_loglik)
from cfpredict.inference import bootstrap
from cfpredict.longitudinal import (SequentialRegime, loss_ice_sequential,
                                    loss_ipw_sequential, sequential_weights)
from cfpredict.nuisance import (NuisanceSet, fit_cond_loss, fit_propensity,
                                known_cond_loss, known_cond_loss_binary,
                                known_propensity)
from cfpredict.perf import (auc, calibration, loss_cl, loss_cl_stochastic,
                            loss_dr, loss_ipw, loss_ipw_stochastic,
                            loss_naive)
from cfpredict.simulate import BinaryDgp, generate, run_experiment
from cfpredict.tailor import FittedModel, fit_plain


def _verdict(capsys, label, checks, note=""):
    """Print one PASS/FAIL line for a named list of boolean subchecks."""
    bad = [name for name, good in checks if not good]
    with capsys.disabled():
        print(f"\n[acceptance] {label}: {'FAIL' if bad else 'PASS'}{note}"
              + (f"  failed: {', '.join(bad)}" if bad else ""))
    assert not bad, f"{label}: failed subchecks {bad}"


@pytest.fixture(scope="module")
def exp2_full():
    return run_experiment(2, n_reps=2000, n=1000)


@pytest.fixture(scope="module")
def exp1_full():
    return run_experiment(1, n_reps=2000, n=1000)


# ---------------------------------------------------------------------------
# 1. benchmark 2: counterfactual loss and AUC estimation


def test_benchmark2_estimators_recover_truth(exp2_full, capsys):
    rows = {(r["scenario"], r["estimator"]): r for r in exp2_full.rows}
    truth_l = rows[("truth", "truth")]["loss_mean"]
    truth_a = rows[("truth", "truth")]["auc_mean"]

    checks = [
        ("truth loss near 0.211", abs(truth_l - 0.211) <= 0.004),
        ("truth auc near 0.784", abs(truth_a - 0.784) <= 0.005),
    ]
    for est in ("cl", "ipw", "dr"):
        v = rows[("correct", est)]["loss_mean"]
        checks.append((f"correct {est} loss unbiased",
                       abs(v - truth_l) <= 0.005))
    for est in ("cl", "ipw"):
        v = rows[("correct", est)]["auc_mean"]
        checks.append((f"correct {est} auc unbiased",
                       abs(v - truth_a) <= 0.006))
    nv = rows[("correct", "naive")]
    checks += [
        ("naive loss near 0.207", abs(nv["loss_mean"] - 0.207) <= 0.006),
        ("naive loss below truth", nv["loss_mean"] < truth_l),
        ("naive auc near 0.742", abs(nv["auc_mean"] - 0.742) <= 0.006),
        ("naive auc below truth", nv["auc_mean"] < truth_a),
    ]
    # a wrong treatment model hurts only the weighting estimator
    checks.append(("bad-propensity ipw biased near 0.221",
                   abs(rows[("e-misspecified", "ipw")]["loss_mean"] - 0.221)
                   <= 0.006))
    for est in ("cl", "dr"):
        checks.append((f"bad-propensity {est} still unbiased",
                       abs(rows[("e-misspecified", est)]["loss_mean"] - truth_l)
                       <= 0.005))
    # a wrong conditional-loss model hurts only the plug-in estimator
    checks.append(("bad-outcome cl biased near 0.217",
                   abs(rows[("h-misspecified", "cl")]["loss_mean"] - 0.217)
                   <= 0.006))
    for est in ("ipw", "dr"):
        checks.append((f"bad-outcome {est} still unbiased",
                       abs(rows[("h-misspecified", est)]["loss_mean"] - truth_l)
                       <= 0.005))
    sd = {est: rows[("correct", est)]["loss_sqrtn_sd"]
          for est in ("cl", "dr", "ipw")}
    checks.append(("mc sd ordered cl < dr < ipw",
                   sd["cl"] < sd["dr"] < sd["ipw"]))
    checks.append(("spline dr bias below 0.004",
                   abs(rows[("flexible", "dr")]["loss_mean"] - truth_l)
                   < 0.004))
    _verdict(capsys, "1 benchmark 2 loss/auc gates", checks,
             note=f" (truth loss {truth_l:.4f}, auc {truth_a:.4f})")


# ---------------------------------------------------------------------------
# 2. benchmark 1: fitting under the target regime changes the ranking


def test_benchmark1_tailored_model_ranking(exp1_full, capsys):
    rows = {(r["model"], r["spec"]): r for r in exp1_full.rows}
    checks = []
    for (mdl, spec_kind), r in sorted(rows.items()):
        se = math.sqrt(r["ipw_sd"] ** 2 + r["truth_sd"] ** 2)
        se /= math.sqrt(exp1_full.n_reps)
        checks.append((f"ipw tracks truth for {mdl}:{spec_kind}",
                       abs(r["ipw_mean"] - r["truth_mean"]) <= 2.0 * se))
    for spec_kind in ("quadratic", "linear"):
        plain = rows[("plain", spec_kind)]
        weighted = rows[("ipw", spec_kind)]
        checks.append((f"factual criterion prefers plain fit ({spec_kind})",
                       plain["naive_mean"] < weighted["naive_mean"]))
        checks.append((f"counterfactual criterion prefers weighted fit "
                       f"({spec_kind})",
                       weighted["ipw_mean"] < plain["ipw_mean"]))
    _verdict(capsys, "2 benchmark 1 tailoring gates", checks)


# ---------------------------------------------------------------------------
# 3. saturated nuisances reproduce the brute-force plug-in answer


def _brute_plugin(x, a, y, model, target):
    """Group-by-stratum plug-in: sum_s Pn(s) mean(L | X=s, A=target)."""
    loss = (y - model.predict(x)) ** 2
    total = 0.0
    for s in np.unique(x, axis=0):
        in_s = np.all(x == s, axis=1)
        total += in_s.mean() * loss[in_s & (a == target)].mean()
    return total


def _brute_two_period(x0, x1, a0, a1, loss, g0, g1):
    """Two-stage version: average over subjects of the inner standardisation."""
    total = 0.0
    for i in range(len(x0)):
        prefix = (x0 == x0[i]) & (a0 == g0)
        inner = 0.0
        for lv in np.unique(x1[prefix]):
            pr = np.mean(x1[prefix] == lv)
            cell = prefix & (x1 == lv) & (a1 == g1)
            inner += pr * loss[cell].mean()
        total += inner
    return total / len(x0)


def test_saturated_estimators_match_brute_force(capsys):
    rng = np.random.default_rng(20250814)
    start = time.perf_counter()
    flat_spec = DesignSpec((), True)
    model = FittedModel(GlmFit(np.array([-0.3, 0.9, -1.1]), BINOMIAL,
                               DesignSpec.main_effects([0, 1])),
                        PredictorSubset((0, 1)), "plain", None, "binary")

    worst_fixed = 0.0
    for _ in range(30):
        n = int(rng.integers(16, 65))
        while True:
            x = rng.integers(0, 2, size=(n, 2)).astype(float)
            a = rng.integers(0, 2, size=n)
            y = rng.integers(0, 2, size=n).astype(float)
            if all(len(np.unique(a[np.all(x == s, axis=1)])) == 2
                   for s in np.unique(x, axis=0)):
                break
        data = Dataset(x, a, y, np.zeros(n, dtype=int), "binary")
        nsets = {}
        for arm in (0, 1):
            nsets[arm] = NuisanceSet(
                arm, SQUARED,
                fit_propensity(data, flat_spec, arm, None, True),
                fit_cond_loss(data, model, flat_spec, arm, SQUARED, True))
        for arm in (0, 1):
            ref = _brute_plugin(x, a, y, model, arm)
            for v in (loss_cl(data, nsets[arm]).value,
                      loss_ipw(data, model, nsets[arm]).value,
                      loss_dr(data, model, nsets[arm]).value):
                worst_fixed = max(worst_fixed, abs(v - ref))
        p = float(rng.random())
        regime = StochasticRegime(lambda z, _p=p: np.full(len(z), _p))
        mix = (p * _brute_plugin(x, a, y, model, 1)
               + (1 - p) * _brute_plugin(x, a, y, model, 0))
        worst_fixed = max(
            worst_fixed,
            abs(loss_cl_stochastic(data, regime, nsets[1], nsets[0]).value
                - mix),
            abs(loss_ipw_stochastic(data, model, regime,
                                    nsets[1], nsets[0]).value - mix))

    worst_seq = 0.0
    seq_model = FittedModel(GlmFit(np.array([0.1, 0.7]), BINOMIAL,
                                   DesignSpec.main_effects([0])),
                            PredictorSubset((0,)), "plain", None, "binary")
    for _ in range(30):
        n = int(rng.integers(24, 80))
        while True:
            x0 = rng.integers(0, 2, size=n).astype(float)
            a0 = rng.integers(0, 2, size=n)
            x1 = rng.integers(0, 2, size=n).astype(float)
            a1 = rng.integers(0, 2, size=n)
            y = rng.integers(0, 2, size=n).astype(float)
            g0, g1 = int(rng.integers(0, 2)), int(rng.integers(0, 2))
            ok = all((x0 == v).sum() > 0
                     and len(np.unique(a0[x0 == v])) == 2 for v in (0.0, 1.0))
            for v0 in (0.0, 1.0):
                for v1 in (0.0, 1.0):
                    m = (x0 == v0) & (a0 == g0) & (x1 == v1)
                    ok = ok and m.sum() > 0 and len(np.unique(a1[m])) == 2
            if ok:
                break
        sdata = SequentialDataset((x0.reshape(-1, 1), x1.reshape(-1, 1)),
                                  np.column_stack([a0, a1]), y,
                                  np.zeros(n, dtype=int), "binary")
        loss_vals = (y - seq_model.predict(x0.reshape(-1, 1))) ** 2
        ref = _brute_two_period(x0, x1, a0, a1, loss_vals, g0, g1)
        regime = SequentialRegime.static((g0, g1))
        w = sequential_weights(sdata, regime, clip=None, saturated=True)
        worst_seq = max(
            worst_seq,
            abs(loss_ice_sequential(sdata, seq_model, regime, SQUARED,
                                    saturated=True).value - ref),
            abs(loss_ipw_sequential(sdata, seq_model, regime, SQUARED,
                                    weights=w).value - ref))

    elapsed = time.perf_counter() - start
    checks = [
        ("single-period estimators match plug-in", worst_fixed <= 1e-10),
        ("two-period estimators match plug-in", worst_seq <= 1e-10),
        ("runs in under a second", elapsed < 1.0),
    ]
    _verdict(capsys, "3 saturated estimators equal brute-force plug-in",
             checks, note=f" (max diff {max(worst_fixed, worst_seq):.1e}, "
             f"{elapsed:.2f}s)")


# ---------------------------------------------------------------------------
# 4. degenerate inputs collapse the estimators into each other


def test_estimator_reduction_identities(capsys):
    rng = np.random.default_rng(4242)
    worst = {}

    def _data(n, a, rng, outcome="continuous"):
        x = rng.normal(size=(n, 2))
        y = 1.0 + 2.0 * rng.normal(size=n)
        return Dataset(x, a, y, np.zeros(n, dtype=int), outcome)

    def _model(rng):
        return FittedModel(GlmFit(rng.normal(size=3) * 0.5, GAUSSIAN,
                                  DesignSpec.main_effects([0, 1])),
                           PredictorSubset((0, 1)), "plain", None,
                           "continuous")

    def _h(rng):
        c = float(rng.uniform(0.2, 2.0))
        return lambda z, _c=c: np.abs(z[:, 0]) + _c

    def _e(rng):
        b = float(rng.uniform(-1.0, 1.0))
        return lambda z, _b=b: expit(_b * z[:, 0])

    # everyone already on the target arm with unit propensity: dr == naive
    worst["dr equals naive"] = 0.0
    for _ in range(40):
        n = int(rng.integers(12, 40))
        target = int(rng.integers(0, 2))
        data = _data(n, np.full(n, target), rng)
        model = _model(rng)
        ones = ((lambda z: np.ones(len(z))) if target == 1
                else (lambda z: np.zeros(len(z))))
        nuis = NuisanceSet(target, SQUARED, known_propensity(ones, target),
                           known_cond_loss(_h(rng)))
        diff = abs(loss_dr(data, model, nuis).value
                   - loss_naive(data, model, SQUARED).value)
        worst["dr equals naive"] = max(worst["dr equals naive"], diff)

    # zero conditional loss removes the augmentation term: dr == ipw
    worst["dr equals ipw"] = 0.0
    for _ in range(40):
        n = int(rng.integers(12, 40))
        target = int(rng.integers(0, 2))
        data = _data(n, rng.integers(0, 2, size=n), rng)
        model = _model(rng)
        nuis = NuisanceSet(target, SQUARED,
                           known_propensity(_e(rng), target),
                           known_cond_loss(lambda z: np.zeros(len(z))))
        diff = abs(loss_dr(data, model, nuis).value
                   - loss_ipw(data, model, nuis).value)
        worst["dr equals ipw"] = max(worst["dr equals ipw"], diff)

    # no rows on the target arm leaves only the plug-in term: dr == cl
    worst["dr equals cl"] = 0.0
    for _ in range(40):
        n = int(rng.integers(12, 40))
        target = int(rng.integers(0, 2))
        data = _data(n, np.full(n, 1 - target), rng)
        model = _model(rng)
        nuis = NuisanceSet(target, SQUARED,
                           known_propensity(_e(rng), target),
                           known_cond_loss(_h(rng)))
        diff = abs(loss_dr(data, model, nuis).value
                   - loss_cl(data, nuis).value)
        worst["dr equals cl"] = max(worst["dr equals cl"], diff)

    # a degenerate stochastic rule is the matching static regime
    worst["stochastic equals static"] = 0.0
    for _ in range(40):
        n = int(rng.integers(12, 40))
        arm = int(rng.integers(0, 2))
        data = _data(n, rng.integers(0, 2, size=n), rng)
        model = _model(rng)
        nsets = {v: NuisanceSet(v, SQUARED, known_propensity(_e(rng), v),
                                known_cond_loss(_h(rng)))
                 for v in (0, 1)}
        regime = StochasticRegime(
            lambda z, _v=arm: np.full(len(z), float(_v)))
        d_cl = abs(loss_cl_stochastic(data, regime,
                                      nsets[1], nsets[0]).value
                   - loss_cl(data, nsets[arm]).value)
        d_ipw = abs(loss_ipw_stochastic(data, model, regime,
                                        nsets[1], nsets[0]).value
                    - loss_ipw(data, model, nsets[arm]).value)
        worst["stochastic equals static"] = max(
            worst["stochastic equals static"], d_cl, d_ipw)

    # a single decision point is the time-fixed problem
    worst["one-period equals time-fixed"] = 0.0
    flat_spec = DesignSpec((), True)
    for _ in range(40):
        n = int(rng.integers(24, 60))
        g = int(rng.integers(0, 2))
        while True:
            x = rng.integers(0, 2, size=(n, 1)).astype(float)
            a = rng.integers(0, 2, size=n)
            y = rng.integers(0, 2, size=n).astype(float)
            if all(len(np.unique(a[x[:, 0] == v])) == 2 for v in (0.0, 1.0)):
                break
        data = Dataset(x, a, y, np.zeros(n, dtype=int), "binary")
        sdata = SequentialDataset((x,), a.reshape(-1, 1), y,
                                  np.zeros(n, dtype=int), "binary")
        model = FittedModel(GlmFit(np.array([0.2, -0.8]), BINOMIAL,
                                   DesignSpec.main_effects([0])),
                            PredictorSubset((0,)), "plain", None, "binary")
        regime = SequentialRegime.static((g,))
        prop = fit_propensity(data, flat_spec, g, None, True)
        cond = fit_cond_loss(data, model, flat_spec, g, SQUARED, True)
        w = sequential_weights(sdata, regime, clip=None, saturated=True)
        d_ipw = abs(loss_ipw_sequential(sdata, model, regime, SQUARED,
                                        weights=w).value
                    - loss_ipw(data, model,
                               NuisanceSet(g, SQUARED, prop, None)).value)
        d_ice = abs(loss_ice_sequential(sdata, model, regime, SQUARED,
                                        saturated=True).value
                    - loss_cl(data, NuisanceSet(g, SQUARED, None,
                                                cond)).value)
        worst["one-period equals time-fixed"] = max(
            worst["one-period equals time-fixed"], d_ipw, d_ice)

    tol = {"dr equals naive": 1e-12, "dr equals ipw": 1e-14,
           "dr equals cl": 1e-14, "stochastic equals static": 1e-14,
           "one-period equals time-fixed": 1e-12}
    checks = [(name, worst[name] <= tol[name]) for name in worst]
    _verdict(capsys, "4 reduction identities (200 cases)", checks,
             note=f" (max diff {max(worst.values()):.1e})")


# ---------------------------------------------------------------------------
# 5. AUC agrees with a dense quadratic reference


def _auc_reference(pred, y, kind, e=None, q=None, a=None):
    gt = np.subtract.outer(pred, pred)
    s = (gt > 0).astype(float) + 0.5 * (gt == 0)
    if kind == "naive":
        cases, non = y == 1.0, y == 0.0
        return s[np.ix_(cases, non)].sum() / (cases.sum() * non.sum())
    if kind == "om":
        wm = np.outer(q, 1.0 - q)
        np.fill_diagonal(wm, 0.0)
        return float((wm * s).sum() / wm.sum())
    arm = a == 1
    cases, non = arm & (y == 1.0), arm & (y == 0.0)
    wm = np.outer(1.0 / e[cases], 1.0 / e[non])
    return float((wm * s[np.ix_(cases, non)]).sum() / wm.sum())


def test_auc_matches_quadratic_reference(capsys):
    rng = np.random.default_rng(909)
    worst = 0.0
    for trial in range(100):
        kind = ("naive", "om", "ipw")[trial % 3]
        n = int(rng.integers(8, 201))
        while True:
            e = rng.uniform(0.15, 0.9, size=n)
            pred = np.round(rng.uniform(0.0, 1.0, size=n), 1)
            q = rng.uniform(0.05, 0.95, size=n)
            a = rng.integers(0, 2, size=n)
            y = (rng.random(n) < q).astype(float)
            arm = a == 1
            if (0.0 < y.mean() < 1.0 and (arm & (y == 1.0)).any()
                    and (arm & (y == 0.0)).any()):
                break
        x = np.column_stack([e, pred, q])
        data = Dataset(x, a, y, np.zeros(n, dtype=int), "binary")
        model = FittedModel(GlmFit(np.array([0.0, 0.0, 1.0, 0.0]), GAUSSIAN,
                                   DesignSpec.main_effects([0, 1, 2])),
                            PredictorSubset((0, 1, 2)), "plain", None,
                            "binary")
        nuis = NuisanceSet(1, SQUARED,
                           known_propensity(lambda z: z[:, 0], 1),
                           known_cond_loss_binary(lambda z: z[:, 2], model,
                                                  SQUARED))
        got = auc(data, model, kind, None if kind == "naive" else nuis).value
        ref = _auc_reference(pred, y, kind, e=e, q=q, a=a)
        worst = max(worst, abs(got - ref) / max(1.0, abs(ref)))
    checks = [("blocked auc equals dense auc", worst <= 1e-12)]
    _verdict(capsys, "5 auc matches quadratic reference (100 cases)", checks,
             note=f" (max rel diff {worst:.1e})")


# ---------------------------------------------------------------------------
# 6. the regression core agrees with textbook linear algebra


def test_glm_matches_reference_solvers(capsys):
    rng = np.random.default_rng(77)
    worst_wls, worst_score, worst_fd = 0.0, 0.0, 0.0
    for _ in range(25):
        n, p = 60, 4
        design = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
        w = rng.uniform(0.2, 2.0, size=n)
        y = rng.normal(size=n)
        fit = fit_glm(design, y, w, GAUSSIAN)
        ref = np.linalg.solve(design.T @ (w[:, None] * design),
                              design.T @ (w * y))
        worst_wls = max(worst_wls, float(np.max(np.abs(fit.coef - ref))))

        yb = (rng.random(n) < expit(design @ np.array([0.3, 1.0, -0.7, 0.4]))
              ).astype(float)
        wb = rng.uniform(0.5, 1.5, size=n)
        bfit = fit_glm(design, yb, wb, BINOMIAL)
        score = design.T @ (wb * (yb - expit(design @ bfit.coef)))
        worst_score = max(worst_score, float(np.max(np.abs(score))))

        beta0 = bfit.coef + rng.normal(size=p) * 0.3
        analytic = design.T @ (wb * (yb - expit(design @ beta0)))
        for j in range(p):
            step = np.zeros(p)
            step[j] = 1e-5
            fd = (weighted_loglik(design, yb, wb, beta0 + step, BINOMIAL)
                  - weighted_loglik(design, yb, wb, beta0 - step, BINOMIAL))
            fd /= 2e-5
            rel = abs(fd - analytic[j]) / max(1.0, abs(analytic[j]))
            worst_fd = max(worst_fd, rel)
    checks = [
        ("wls matches the normal equations", worst_wls <= 1e-10),
        ("logistic score vanishes at the optimum", worst_score < 1e-6),
        ("loglik gradient matches finite differences", worst_fd <= 1e-4),
    ]
    _verdict(capsys, "6 regression core reference checks", checks,
             note=f" (wls {worst_wls:.1e}, score {worst_score:.1e}, "
             f"fd {worst_fd:.1e})")


# ---------------------------------------------------------------------------
# 7. weighted calibration recovers the control-arm risk curve


def _calibration_dataset(n, seed, randomized):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2.0, 2.0, size=n)
    risk0 = expit(-0.5 + 1.2 * x)
    risk1 = expit(-0.5 + 1.2 * x - 1.5)
    pa = np.full(n, 0.5) if randomized else expit(1.5 * x)
    a = (rng.uniform(size=n) < pa).astype(float)
    risk = np.where(a == 1.0, risk1, risk0)
    y = (rng.uniform(size=n) < risk).astype(float)
    return Dataset(x[:, None], a, y, np.zeros(n, dtype=int), "binary")


def test_calibration_recovers_control_arm_risk(capsys):
    # the model below reproduces the control-arm risk exactly, so every
    # correctly reweighted binned point should sit on the diagonal
    model = FittedModel(GlmFit(np.array([-0.5, 1.2]), BINOMIAL,
                               DesignSpec.main_effects([0])),
                        PredictorSubset((0,)), "plain", None, "binary")
    devs = {}
    for label, randomized, seed in (("randomized", True, 7),
                                    ("confounded", False, 2)):
        data = _calibration_dataset(50_000, seed, randomized)
        nuis = NuisanceSet(0, SQUARED,
                           fit_propensity(data, DesignSpec.main_effects([0]),
                                          0))
        for kind in ("naive", "ipw"):
            est = calibration(data, model, kind,
                              None if kind == "naive" else nuis,
                              method="binned", bins=10)
            devs[(label, kind)] = float(np.max(np.abs(est.curve_y
                                                      - est.curve_x)))
    checks = [
        ("randomized ipw within 0.03 per bin",
         devs[("randomized", "ipw")] <= 0.03),
        ("confounded naive off by more than 0.03",
         devs[("confounded", "naive")] > 0.03),
        ("confounded ipw within 0.03 per bin",
         devs[("confounded", "ipw")] <= 0.03),
    ]
    _verdict(capsys, "7 calibration recovers the true risk curve", checks,
             note=f" (confounded naive {devs[('confounded', 'naive')]:.3f}, "
             f"ipw {devs[('confounded', 'ipw')]:.3f})")


# ---------------------------------------------------------------------------
# 8. bootstrap standard errors track the monte carlo spread


def test_bootstrap_se_tracks_mc_sd(capsys):
    spec = DesignSpec.main_effects([0, 1, 2])
    vals, ses = [], []
    for child in np.random.SeedSequence(915).spawn(200):
        s_data, s_split, s_boot = child.spawn(3)
        data = generate(BinaryDgp(1000, s_data))
        data = split_dataset(data, 0.5, s_split, exact=True)
        model = fit_plain(data, spec, BINOMIAL)
        vals.append(loss_naive(data, model, SQUARED).value)
        res = bootstrap(data,
                        lambda d: loss_naive(d, model, SQUARED).value,
                        n_replicates=500,
                        seed=int(s_boot.generate_state(1)[0]))
        ses.append(res.se)
    mc_sd = float(np.std(vals, ddof=1))
    ratio = float(np.mean(ses)) / mc_sd
    checks = [("mean bootstrap se within 30% of mc sd",
               0.7 <= ratio <= 1.3)]
    _verdict(capsys, "8 bootstrap se tracks mc sd", checks,
             note=f" (ratio {ratio:.3f})")


# ---------------------------------------------------------------------------
# 9. the same seed and config reproduce outputs byte for byte


def test_reruns_reproduce_outputs_byte_for_byte(tmp_path, capsys):
    first = run_experiment(1, n_reps=8, n=160, seed=123)
    second = run_experiment(1, n_reps=8, n=160, seed=123)
    checks = [("repeated runs give equal tables", first == second)]
    for res, tag in ((first, "a"), (second, "b")):
        res.write_csv(tmp_path / f"{tag}.csv")
        res.write_json(tmp_path / f"{tag}.json")
    for ext in ("csv", "json"):
        checks.append((f"{ext} files byte-identical",
                       (tmp_path / f"a.{ext}").read_bytes()
                       == (tmp_path / f"b.{ext}").read_bytes()))

    rng = np.random.default_rng(31)
    n = 80
    x1, x2 = rng.normal(size=n), rng.normal(size=n)
    a = (rng.random(n) < expit(0.7 * x1)).astype(int)
    y = (rng.random(n) < expit(x1 - 0.8 * a)).astype(int)
    d = (np.arange(n) < n // 2).astype(int)
    lines = ["x1,x2,A,Y,D"] + [
        f"{float(x1[i])!r},{float(x2[i])!r},{a[i]},{y[i]},{d[i]}"
        for i in range(n)]
    csv_path = tmp_path / "data.csv"
    csv_path.write_text("\n".join(lines) + "\n")
    outs = []
    for tag in ("r1", "r2"):
        out = tmp_path / f"{tag}.json"
        cfg = tmp_path / f"{tag}_cfg.json"
        cfg.write_text(__import__("json").dumps({
            "input": str(csv_path),
            "outcome": "binary",
            "target": {"type": "static", "a": 0},
            "model": {"method": "plain", "terms": ["x1", "x2"],
                      "family": "binomial"},
            "estimators": ["naive", "dr"],
            "nuisances": {"propensity_terms": ["x1", "x2"],
                          "cond_loss_terms": ["x1", "x2"]},
            "bootstrap": {"replicates": 20, "seed": 9},
            "out": str(out),
        }))
        assert cli_main(["evaluate", "--config", str(cfg)]) == 0
        outs.append(out.read_bytes())
    checks.append(("cli evaluate output byte-identical", outs[0] == outs[1]))
    _verdict(capsys, "9 reruns reproduce outputs byte for byte", checks)
