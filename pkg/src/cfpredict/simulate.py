"""Benchmark data generators and the repeated-simulation harness.

Two synthetic observational settings with known truth are built in.

Experiment 1 (continuous outcome)
    X ~ Uniform(0, 10); treatment is more likely at high X,
    Pr[A = 1 | X] = expit(-1.5 + 0.3 X); and

        Y = 1 + X + 0.5 X^2 - 3 A + sqrt(X) * eps,  eps ~ N(0, 1),

    so the outcome variance grows with X. Flags switch the treatment
    model to the decreasing form expit(1.5 - 0.3 X) and the noise scale
    from variance X to standard deviation X, since both conventions are
    common for this kind of benchmark.

Experiment 2 (binary outcome)
    X has three independent normal components with means
    (0.2, 0, 0.5) and variance 0.2 each. Treatment and outcome follow
    logistic models with a quadratic term in X1:

        Pr[A = 1 | X] = expit(0.5 - 2 X1 + 3 X1^2 + 2 X2 - X3)
        Pr[Y = 1 | X, A] = expit(0.2 + 3 X1 - 2 X1^2 + 2 X2 + X3 - 2 A).

    A main-effects-only prediction model is therefore misspecified,
    and so is any nuisance model that omits the X1^2 term.

Both generators share the random draws across treatment arms, so
potential outcomes under forced arms are coupled to the factual data
(in experiment 1, Y under arm 1 minus Y under arm 0 is exactly -3 for
every subject).

``run_experiment`` reruns the whole fit-and-evaluate pipeline on fresh
draws and tabulates each estimator against the truth computed on
independent forced-arm datasets.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

import numpy as np
from scipy.special import expit

from .core import Dataset, PositivityError, SQUARED, split_dataset
from .glm import BINOMIAL, GAUSSIAN, DesignSpec, RankDeficiencyError, Term
from .inference import mc_summary
from .nuisance import NuisanceSet, fit_cond_loss, fit_propensity
from .perf import auc, loss_cl, loss_dr, loss_ipw, loss_naive
from .tailor import FittedModel, fit_plain, fit_tailored_ipw

_SCHEMA_VERSION = 1

# effectively unclipped: the benchmark generators respect positivity by
# construction, and the reference results use raw weights
SIM_CLIP = (1e-6, 1.0 - 1e-6)

Seed = Union[int, np.random.SeedSequence]


@dataclass(frozen=True)
class ContinuousDgp:
    """Quadratic Gaussian outcome, treatment confounded by X.

    treatment_form: "increasing" (default) or "decreasing" direction of
    Pr[A = 1 | X] in X. noise: "variance" (Var[Y|X] = X, default) or
    "sd" (sd[Y|X] = X).
    """

    n: int
    seed: Seed = 0
    treatment_form: str = "increasing"
    noise: str = "variance"

    def __post_init__(self):
        if self.treatment_form not in ("increasing", "decreasing"):
            raise ValueError("treatment_form must be 'increasing' or 'decreasing'")
        if self.noise not in ("variance", "sd"):
            raise ValueError("noise must be 'variance' or 'sd'")


@dataclass(frozen=True)
class BinaryDgp:
    """Logistic outcome and treatment, both quadratic in X1."""

    n: int
    seed: Seed = 0


Dgp = Union[ContinuousDgp, BinaryDgp]


def _draw_continuous(dgp: ContinuousDgp):
    rng = np.random.default_rng(dgp.seed)
    x = rng.uniform(0.0, 10.0, dgp.n)
    u_a = rng.random(dgp.n)
    eps = rng.standard_normal(dgp.n)
    if dgp.treatment_form == "increasing":
        p_treat = expit(-1.5 + 0.3 * x)
    else:
        p_treat = expit(1.5 - 0.3 * x)
    a = (u_a < p_treat).astype(np.int8)
    scale = np.sqrt(x) if dgp.noise == "variance" else x
    base = 1.0 + x + 0.5 * x ** 2 + scale * eps
    y0 = base
    y1 = base - 3.0
    return x.reshape(-1, 1), a, y0, y1


def _draw_binary(dgp: BinaryDgp):
    rng = np.random.default_rng(dgp.seed)
    x = np.array([0.2, 0.0, 0.5]) + np.sqrt(0.2) * rng.standard_normal((dgp.n, 3))
    u_a = rng.random(dgp.n)
    u_y = rng.random(dgp.n)
    x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
    p_treat = expit(0.5 - 2.0 * x1 + 3.0 * x1 ** 2 + 2.0 * x2 - x3)
    a = (u_a < p_treat).astype(np.int8)
    eta = 0.2 + 3.0 * x1 - 2.0 * x1 ** 2 + 2.0 * x2 + x3
    y0 = (u_y < expit(eta)).astype(float)
    y1 = (u_y < expit(eta - 2.0)).astype(float)
    return x, a, y0, y1


def _draw(dgp: Dgp):
    if isinstance(dgp, ContinuousDgp):
        return _draw_continuous(dgp)
    if isinstance(dgp, BinaryDgp):
        return _draw_binary(dgp)
    raise TypeError(f"unknown generator {type(dgp).__name__}")


def _outcome_kind(dgp: Dgp) -> str:
    return "continuous" if isinstance(dgp, ContinuousDgp) else "binary"


def generate(dgp: Dgp) -> Dataset:
    """One observational draw; every row starts flagged as test, use
    :func:`cfpredict.core.split_dataset` to carve out a training part."""
    x, a, y0, y1 = _draw(dgp)
    y = np.where(a == 1, y1, y0)
    return Dataset(x, a, y, "test", _outcome_kind(dgp))


def generate_potential(dgp: Dgp):
    """The observational draw plus both potential outcome vectors."""
    x, a, y0, y1 = _draw(dgp)
    y = np.where(a == 1, y1, y0)
    return Dataset(x, a, y, "test", _outcome_kind(dgp)), y0, y1


def generate_forced(dgp: Dgp, arm: int) -> Dataset:
    """A draw in which everyone is forced onto one arm: A is constant
    and Y is that arm's potential outcome."""
    if arm not in (0, 1):
        raise ValueError("arm must be 0 or 1")
    x, _, y0, y1 = _draw(dgp)
    y = y1 if arm == 1 else y0
    a = np.full(x.shape[0], arm, dtype=np.int8)
    return Dataset(x, a, y, "test", _outcome_kind(dgp))


def truth_loss(dgp: Dgp, model: FittedModel, arm: int, loss=SQUARED) -> float:
    """Expected loss of a fixed model under the forced arm, by fresh
    simulation from the generator."""
    forced = generate_forced(dgp, arm)
    return loss_naive(forced, model, loss).value


def truth_auc(dgp: Dgp, model: FittedModel, arm: int) -> float:
    """Discrimination of a fixed model under the forced arm."""
    forced = generate_forced(dgp, arm)
    return auc(forced, model, "naive").value


# ---------------------------------------------------------------------------
# repeated-simulation harness


@dataclass(frozen=True)
class ExperimentResult:
    """Tabulated repeated-simulation output, CSV/JSON serialisable."""

    experiment: int
    n_reps: int
    n: int
    seed: int
    columns: tuple
    rows: tuple  # of dicts

    def to_json_obj(self) -> dict:
        def clean(v):
            if isinstance(v, float) and np.isnan(v):
                return None
            return v

        return {"schema_version": _SCHEMA_VERSION,
                "kind": "experiment-table",
                "experiment": self.experiment,
                "n_reps": self.n_reps, "n": self.n, "seed": self.seed,
                "columns": list(self.columns),
                "rows": [{k: clean(v) for k, v in row.items()} for row in self.rows]}

    def write_json(self, path) -> None:
        import json

        with open(path, "w") as fh:
            json.dump(self.to_json_obj(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                cells = []
                for col in self.columns:
                    v = row[col]
                    if isinstance(v, float):
                        cells.append("" if np.isnan(v) else repr(v))
                    else:
                        cells.append(str(v))
                fh.write(",".join(cells) + "\n")

    def format_table(self) -> str:
        widths = {c: max(len(c), *(len(_fmt(r[c])) for r in self.rows))
                  for c in self.columns}
        lines = ["  ".join(c.ljust(widths[c]) for c in self.columns)]
        for row in self.rows:
            lines.append("  ".join(_fmt(row[c]).ljust(widths[c]) for c in self.columns))
        return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if np.isnan(v) else f"{v:.4f}"
    return str(v)


def _split_half(data: Dataset, seed: Seed) -> Dataset:
    return split_dataset(data, 0.5, seed, exact=True)


# experiment 2 nuisance designs per scenario
_EXP2_CORRECT = DesignSpec((Term(0), Term(0, "power", k=2), Term(1), Term(2)))
_EXP2_MAIN = DesignSpec.main_effects([0, 1, 2])
_EXP2_FLEX = DesignSpec.splines([0, 1, 2], df=4)

_EXP2_SCENARIOS = (
    ("correct", _EXP2_CORRECT, _EXP2_CORRECT),
    ("e-misspecified", _EXP2_MAIN, _EXP2_CORRECT),
    ("h-misspecified", _EXP2_CORRECT, _EXP2_MAIN),
    ("flexible", _EXP2_FLEX, _EXP2_FLEX),
)


def _exp2_replicate(n: int, child: np.random.SeedSequence) -> dict:
    data_seed, split_seed, truth_seed = child.spawn(3)
    data = _split_half(generate(BinaryDgp(n, data_seed)), split_seed)
    model = fit_plain(data, _EXP2_MAIN, BINOMIAL)

    out = {}
    naive_est = loss_naive(data, model, SQUARED)
    out["loss:naive"] = naive_est.value
    out["auc:naive"] = auc(data, model, "naive").value
    for name, prop_spec, q_spec in _EXP2_SCENARIOS:
        prop = fit_propensity(data, prop_spec, 0, SIM_CLIP)
        cond = fit_cond_loss(data, model, q_spec, 0, SQUARED)
        nuis = NuisanceSet(0, SQUARED, prop, cond)
        out[f"loss:cl:{name}"] = loss_cl(data, nuis).value
        out[f"loss:ipw:{name}"] = loss_ipw(data, model, nuis).value
        out[f"loss:dr:{name}"] = loss_dr(data, model, nuis).value
        out[f"auc:om:{name}"] = auc(data, model, "om", nuis).value
        out[f"auc:ipw:{name}"] = auc(data, model, "ipw", nuis).value

    truth_dgp = BinaryDgp(n, truth_seed)
    out["truth:loss"] = truth_loss(truth_dgp, model, 0, SQUARED)
    out["truth:auc"] = truth_auc(truth_dgp, model, 0)
    out["n_test"] = data.n_test
    return out


_EXP1_QUAD = DesignSpec.polynomial(0, 2)
_EXP1_LIN = DesignSpec.main_effects([0])
_EXP1_PROP = DesignSpec.main_effects([0])

_EXP1_MODELS = (
    ("plain", "quadratic"), ("ipw", "quadratic"),
    ("plain", "linear"), ("ipw", "linear"),
)


def _exp1_replicate(n: int, child: np.random.SeedSequence,
                    treatment_form: str, noise: str) -> dict:
    data_seed, split_seed, truth_seed = child.spawn(3)
    dgp = ContinuousDgp(n, data_seed, treatment_form, noise)
    data = _split_half(generate(dgp), split_seed)

    models = {}
    for fit_kind, spec_kind in _EXP1_MODELS:
        spec = _EXP1_QUAD if spec_kind == "quadratic" else _EXP1_LIN
        if fit_kind == "plain":
            models[fit_kind, spec_kind] = fit_plain(data, spec, GAUSSIAN)
        else:
            models[fit_kind, spec_kind] = fit_tailored_ipw(
                data, 0, spec, _EXP1_PROP, GAUSSIAN,
                clip=SIM_CLIP, truncate=None)

    prop = fit_propensity(data, _EXP1_PROP, 0, SIM_CLIP)
    nuis = NuisanceSet(0, SQUARED, prop, None)
    truth_dgp = replace(dgp, seed=truth_seed)
    forced = generate_forced(truth_dgp, 0)

    out = {"n_test": data.n_test}
    for key, model in models.items():
        tag = f"{key[0]}:{key[1]}"
        out[f"naive:{tag}"] = loss_naive(data, model, SQUARED).value
        out[f"ipw:{tag}"] = loss_ipw(data, model, nuis).value
        out[f"truth:{tag}"] = loss_naive(forced, model, SQUARED).value
    return out


_REPLICATE_ERRORS = (PositivityError, RankDeficiencyError, np.linalg.LinAlgError)


def _guarded(rep_fn, child):
    try:
        return rep_fn(child)
    except _REPLICATE_ERRORS:
        return None


def _run_replicates(rep_fn, n_reps: int, seed: int, n_jobs: int):
    """Run one replicate per spawned seed, dropping numerical failures.

    More than one percent failed replicates aborts: at that point the
    summary would be conditioning on an unrepresentative subset.
    """
    children = np.random.SeedSequence(seed).spawn(n_reps)
    if n_jobs == 1:
        reps = [_guarded(rep_fn, c) for c in children]
    else:
        from joblib import Parallel, delayed

        reps = Parallel(n_jobs=n_jobs)(delayed(_guarded)(rep_fn, c) for c in children)
    kept = [r for r in reps if r is not None]
    failed = n_reps - len(kept)
    if failed > 0.01 * n_reps:
        raise RuntimeError(f"{failed} of {n_reps} replicates failed")
    return kept


def run_experiment(experiment: int, n_reps: int = 2000, n: int = 1000,
                   seed: int = 20240501, n_jobs: int = 1,
                   treatment_form: str = "increasing",
                   noise: str = "variance") -> ExperimentResult:
    """Re-run one of the built-in benchmarks end to end.

    Each replicate draws a fresh dataset of size ``n``, splits it in
    half, fits the prediction model(s) on the training half, estimates
    performance on the test half, and computes the truth on an
    independent forced-arm draw. Determinism: results depend only on
    the arguments, not on ``n_jobs``.

    Experiment 1 reports mean and Monte Carlo sd of the naive, weighted
    and true expected squared error for unweighted ("plain") and
    treatment-weighted ("ipw") fits with quadratic and linear terms.

    Experiment 2 reports, per nuisance scenario, the mean, root-n sd
    and root-n bias of each squared-error estimator and of the
    discrimination plug-ins, against truths for the never-treated
    strategy. The doubly robust rows have no discrimination analogue,
    so those cells are empty.
    """
    if experiment == 1:
        reps = _run_replicates(
            lambda c: _exp1_replicate(n, c, treatment_form, noise),
            n_reps, seed, n_jobs)
        rows = []
        for fit_kind, spec_kind in _EXP1_MODELS:
            tag = f"{fit_kind}:{spec_kind}"
            row = {"model": fit_kind, "spec": spec_kind}
            for est in ("naive", "ipw", "truth"):
                vals = np.array([r[f"{est}:{tag}"] for r in reps])
                row[f"{est}_mean"] = float(vals.mean())
                row[f"{est}_sd"] = float(vals.std(ddof=1))
            rows.append(row)
        columns = ("model", "spec", "naive_mean", "naive_sd",
                   "ipw_mean", "ipw_sd", "truth_mean", "truth_sd")
        return ExperimentResult(1, n_reps, n, seed, columns, tuple(rows))

    if experiment == 2:
        reps = _run_replicates(lambda c: _exp2_replicate(n, c),
                               n_reps, seed, n_jobs)
        n_test = reps[0]["n_test"]
        truth_l = float(np.mean([r["truth:loss"] for r in reps]))
        truth_a = float(np.mean([r["truth:auc"] for r in reps]))
        rows = []
        for scenario, _, _ in _EXP2_SCENARIOS:
            for est in ("naive", "cl", "ipw", "dr"):
                loss_key = "loss:naive" if est == "naive" else f"loss:{est}:{scenario}"
                if est == "naive":
                    auc_key = "auc:naive"
                elif est == "cl":
                    auc_key = f"auc:om:{scenario}"
                elif est == "ipw":
                    auc_key = f"auc:ipw:{scenario}"
                else:
                    auc_key = None
                row = {"scenario": scenario, "estimator": est}
                summ = mc_summary([r[loss_key] for r in reps], truth_l, n_test)
                row["loss_mean"] = summ.mean
                row["loss_sqrtn_sd"] = summ.sqrt_n_sd
                row["loss_sqrtn_bias"] = summ.sqrt_n_bias
                row["loss_pct_bias"] = 100.0 * summ.rel_bias
                if auc_key is None:
                    row.update({"auc_mean": float("nan"),
                                "auc_sqrtn_sd": float("nan"),
                                "auc_sqrtn_bias": float("nan"),
                                "auc_pct_bias": float("nan")})
                else:
                    summ_a = mc_summary([r[auc_key] for r in reps], truth_a, n_test)
                    row["auc_mean"] = summ_a.mean
                    row["auc_sqrtn_sd"] = summ_a.sqrt_n_sd
                    row["auc_sqrtn_bias"] = summ_a.sqrt_n_bias
                    row["auc_pct_bias"] = 100.0 * summ_a.rel_bias
                rows.append(row)
        truth_row = {"scenario": "truth", "estimator": "truth",
                     "loss_mean": truth_l, "auc_mean": truth_a}
        for col in ("loss_sqrtn_sd", "loss_sqrtn_bias", "loss_pct_bias",
                    "auc_sqrtn_sd", "auc_sqrtn_bias", "auc_pct_bias"):
            truth_row[col] = float("nan")
        rows.append(truth_row)
        columns = ("scenario", "estimator",
                   "loss_mean", "loss_sqrtn_sd", "loss_sqrtn_bias", "loss_pct_bias",
                   "auc_mean", "auc_sqrtn_sd", "auc_sqrtn_bias", "auc_pct_bias")
        return ExperimentResult(2, n_reps, n, seed, columns, tuple(rows))

    raise ValueError("experiment must be 1 or 2")
