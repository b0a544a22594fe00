"""Command line interface.

Four subcommands:

``cfpredict simulate``
    Re-run a built-in benchmark and write its summary table.

``cfpredict evaluate``
    Fit (or load) a prediction model and estimate its performance under
    a target strategy, driven by a JSON config.

``cfpredict tailor``
    Fit a model tailored to a strategy and save it to JSON.

``cfpredict cv``
    Pick among candidate model recipes by cross validation.

Config files reference covariates by the column names of the input CSV.
A term is {"col": <name>, "transform": "linear" | "power" | "spline",
"k": <exponent>, "df": <spline df>}; a bare name is shorthand for a
linear term. Targets are {"type": "static", "a": 0 | 1},
{"type": "stochastic", "p": <constant probability of arm 1>}, or, for
long-format input, {"type": "sequential", "rules": [...]} with one rule
per decision time: either a constant arm or
{"col": <name>, "op": "ge" | "gt" | "le" | "lt", "value": <v>,
"then": <arm>, "else": <arm>} applied to that time's covariate.

Exit codes: 0 success, 1 runtime failure (positivity violations, rank
deficient fits, too many failed bootstrap replicates), 2 malformed
usage or config. Errors print a single line
``error: <code>: <detail>`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

import numpy as np

from . import core, glm, inference, longitudinal, nuisance, perf, simulate, tailor
from .core import (Dataset, PositivityError, SequentialDataset, StaticRegime,
                   StochasticRegime, get_loss, load_csv, load_sequential_csv)
from .glm import DesignSpec, RankDeficiencyError, Term
from .longitudinal import SequentialRegime
from .nuisance import NuisanceSet, fit_cond_loss, fit_propensity
from .perf import CandidateModel, NoComparablePairsError, PerfEstimate
from .tailor import FittedModel

_SCHEMA_VERSION = 1


class CliError(Exception):
    def __init__(self, code: int, slug: str, message: str):
        super().__init__(message)
        self.code = code
        self.slug = slug
        self.message = message


def _config_error(message: str) -> CliError:
    return CliError(2, "config", message)


# ---------------------------------------------------------------------------
# config parsing helpers


def _read_config(path: str) -> dict:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise CliError(2, "io", f"config file not found: {path}")
    except json.JSONDecodeError as err:
        raise _config_error(f"config is not valid JSON: {err}")
    if not isinstance(obj, dict):
        raise _config_error("config must be a JSON object")
    return obj


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise _config_error(f"config is missing required key {key!r}")
    return cfg[key]


def _col_index(name, names: Optional[tuple]) -> int:
    if isinstance(name, int):
        return name
    if names is None:
        raise _config_error("input has no header names to resolve columns against")
    if name not in names:
        raise _config_error(f"column {name!r} not found in input header")
    return names.index(name)


def _parse_terms(raw, names: Optional[tuple], what: str) -> DesignSpec:
    if not isinstance(raw, list) or not raw:
        raise _config_error(f"{what} must be a non-empty list of terms")
    terms = []
    for entry in raw:
        if isinstance(entry, (str, int)):
            terms.append(Term(_col_index(entry, names)))
            continue
        if not isinstance(entry, dict) or "col" not in entry:
            raise _config_error(f"bad term in {what}: {entry!r}")
        try:
            terms.append(Term(_col_index(entry["col"], names),
                              entry.get("transform", "linear"),
                              k=int(entry.get("k", 2)),
                              df=int(entry.get("df", 4))))
        except ValueError as err:
            raise _config_error(f"bad term in {what}: {err}")
    return DesignSpec(tuple(terms))


def _parse_target(raw, names: Optional[tuple]):
    if raw is None:
        return None
    if not isinstance(raw, dict) or "type" not in raw:
        raise _config_error("target must be an object with a 'type'")
    kind = raw["type"]
    if kind == "static":
        a = raw.get("a")
        if a not in (0, 1):
            raise _config_error("static target needs 'a': 0 or 1")
        return StaticRegime(int(a))
    if kind == "stochastic":
        p = raw.get("p")
        if not isinstance(p, (int, float)) or not 0.0 <= p <= 1.0:
            raise _config_error("stochastic target needs 'p' in [0, 1]")
        return StochasticRegime(lambda x, _p=float(p): np.full(x.shape[0], _p),
                                label=f"p={float(p)}")
    if kind == "sequential":
        rules = raw.get("rules")
        if not isinstance(rules, list) or not rules:
            raise _config_error("sequential target needs a non-empty 'rules' list")
        parsed = []
        for r in rules:
            if isinstance(r, int) and r in (0, 1):
                parsed.append(("const", r))
            elif isinstance(r, dict) and {"col", "op", "value"} <= set(r):
                if r["op"] not in ("ge", "gt", "le", "lt"):
                    raise _config_error(f"unknown rule op {r['op']!r}")
                then = r.get("then", 1)
                other = r.get("else", 0)
                if then not in (0, 1) or other not in (0, 1):
                    raise _config_error("rule 'then'/'else' must be 0 or 1")
                parsed.append(("rule", _col_index(r["col"], names),
                               r["op"], float(r["value"]), then, other))
            else:
                raise _config_error(f"bad sequential rule: {r!r}")

        ops = {"ge": np.greater_equal, "gt": np.greater,
               "le": np.less_equal, "lt": np.less}

        def assign(k, xs, a_prefix, _parsed=parsed, _ops=ops):
            spec = _parsed[k]
            n = xs[0].shape[0]
            if spec[0] == "const":
                return np.full(n, spec[1], dtype=np.int8)
            _, col, op, value, then, other = spec
            hit = _ops[op](xs[k][:, col], value)
            return np.where(hit, then, other).astype(np.int8)

        label = "rules:" + ",".join(
            str(s[1]) if s[0] == "const" else f"{s[2]}@{s[1]}" for s in parsed)
        return SequentialRegime(assign, len(parsed) - 1, label)
    raise _config_error(f"unknown target type {kind!r}")


def _load_input(cfg: dict):
    path = _require(cfg, "input")
    outcome = _require(cfg, "outcome")
    if outcome not in ("binary", "continuous"):
        raise _config_error("outcome must be 'binary' or 'continuous'")
    fmt = cfg.get("format", "wide")
    split_cfg = cfg.get("split", {})
    seed = int(split_cfg.get("seed", 0))
    fraction = float(split_cfg.get("fraction_train", 0.5))
    try:
        if fmt == "wide":
            return load_csv(path, outcome, seed, fraction)
        if fmt == "long":
            return load_sequential_csv(path, outcome, seed, fraction)
    except FileNotFoundError:
        raise CliError(2, "io", f"input file not found: {path}")
    except ValueError as err:
        raise _config_error(str(err))
    raise _config_error("format must be 'wide' or 'long'")


def _parse_family(raw) -> Optional[str]:
    if raw is None:
        return None
    if raw not in (glm.GAUSSIAN, glm.BINOMIAL):
        raise _config_error(f"unknown family {raw!r}")
    return raw


def _fit_model_from_config(cfg: dict, data, target) -> FittedModel:
    if "model_file" in cfg:
        try:
            with open(cfg["model_file"]) as fh:
                obj = json.load(fh)
        except FileNotFoundError:
            raise CliError(2, "io", f"model file not found: {cfg['model_file']}")
        except json.JSONDecodeError as err:
            raise _config_error(f"model file is not valid JSON: {err}")
        names = data.names
        stored = obj.get("columns")
        if stored is not None and names is not None and list(names) != list(stored):
            raise _config_error("model file columns do not match the input header")
        try:
            return FittedModel.from_json(obj["model"])
        except (KeyError, ValueError) as err:
            raise _config_error(f"bad model file: {err}")

    mcfg = _require(cfg, "model")
    names = data.names
    method = mcfg.get("method", "plain")
    spec = _parse_terms(_require(mcfg, "terms"), names, "model terms")
    family = _parse_family(mcfg.get("family"))
    sequential = isinstance(data, SequentialDataset)
    fit_data = data.baseline() if sequential else data
    if sequential and method != "plain":
        raise _config_error("tailored fitting applies to wide-format input only")
    if method == "plain":
        return tailor.fit_plain(fit_data, spec, family)
    if not isinstance(target, StaticRegime):
        raise _config_error("tailored fitting needs a static target")
    clip = tuple(mcfg.get("clip", tailor.DEFAULT_CLIP))
    if method == "ipw":
        pspec = _parse_terms(_require(mcfg, "propensity_terms"), names,
                             "model propensity terms")
        truncate = mcfg.get("truncate", 0.995)
        return tailor.fit_tailored_ipw(fit_data, target.a, spec, pspec, family,
                                       clip=clip,
                                       truncate=None if truncate is None else float(truncate))
    if method == "standardized":
        ospec = _parse_terms(_require(mcfg, "outcome_terms"), names,
                             "model outcome terms")
        return tailor.fit_tailored_standardized(fit_data, target.a, ospec, spec,
                                                family,
                                                draws=int(mcfg.get("draws", 0)),
                                                seed=int(mcfg.get("seed", 0)))
    raise _config_error(f"unknown model method {method!r}")


# ---------------------------------------------------------------------------
# evaluate


_SCALAR_WIDE = ("naive", "cl", "ipw", "dr", "auc:naive", "auc:om", "auc:ipw")
_CURVES = ("calibration:naive", "calibration:ipw", "calibration:om")
_SCALAR_LONG = ("naive", "ipw", "ice")


def _evaluate_records(cfg: dict, data, model, target, loss):
    """Compute every requested estimate; returns (records, closures)
    where closures map record index -> callable for the bootstrap."""
    names = data.names
    wanted = _require(cfg, "estimators")
    if not isinstance(wanted, list) or not wanted:
        raise _config_error("estimators must be a non-empty list")
    ncfg = cfg.get("nuisances", {})
    clip = tuple(ncfg.get("clip", nuisance.DEFAULT_CLIP))
    saturated = bool(ncfg.get("saturated", False))
    cal_cfg = cfg.get("calibration", {})
    cal_method = cal_cfg.get("method", "binned")
    cal_bins = int(cal_cfg.get("bins", 10))
    cal_bw = cal_cfg.get("bandwidth")
    cal_grid = int(cal_cfg.get("grid", 100))

    sequential = isinstance(data, SequentialDataset)
    records, closures = [], {}

    if sequential:
        if not isinstance(target, SequentialRegime):
            raise _config_error("long-format input needs a sequential target")
        stabilize = bool(ncfg.get("stabilize", False))
        for est in wanted:
            if est not in _SCALAR_LONG:
                raise _config_error(f"estimator {est!r} not available for long input")
            if est == "naive":
                def run(d, _m=model, _l=loss):
                    return perf.loss_naive(d.baseline(), _m, _l)
            elif est == "ipw":
                def run(d, _m=model, _l=loss, _t=target, _c=clip, _s=stabilize,
                        _sat=saturated):
                    w = longitudinal.sequential_weights(d, _t, stabilize=_s,
                                                        clip=_c, saturated=_sat)
                    return longitudinal.loss_ipw_sequential(d, _m, _t, _l, w)
            else:
                def run(d, _m=model, _l=loss, _t=target, _sat=saturated):
                    return longitudinal.loss_ice_sequential(d, _m, _t, _l,
                                                            saturated=_sat)
            closures[len(records)] = run
            records.append(run(data))
        return records, closures

    prop_spec = cond_spec = None
    if "propensity_terms" in ncfg:
        prop_spec = _parse_terms(ncfg["propensity_terms"], names, "propensity terms")
    if "cond_loss_terms" in ncfg:
        cond_spec = _parse_terms(ncfg["cond_loss_terms"], names, "conditional loss terms")

    def needs(est):
        prop_needed = est in ("ipw", "dr", "auc:ipw", "calibration:ipw")
        cond_needed = est in ("cl", "dr", "auc:om", "calibration:om")
        return prop_needed, cond_needed

    def build_nuis(d, arm, want_prop, want_cond):
        prop = cond = None
        if want_prop:
            if prop_spec is None and not saturated:
                raise _config_error("estimator needs nuisances.propensity_terms")
            prop = fit_propensity(d, prop_spec or DesignSpec((), True), arm,
                                  None if saturated else clip, saturated)
        if want_cond:
            if cond_spec is None and not saturated:
                raise _config_error("estimator needs nuisances.cond_loss_terms")
            cond = fit_cond_loss(d, model, cond_spec or DesignSpec((), True),
                                 arm, loss, saturated)
        return NuisanceSet(arm, loss, prop, cond)

    for est in wanted:
        if est not in _SCALAR_WIDE + _CURVES:
            raise _config_error(f"unknown estimator {est!r}")
        if est == "naive":
            def run(d, _m=model, _l=loss):
                return perf.loss_naive(d, _m, _l)
        elif est in ("cl", "ipw", "dr"):
            if isinstance(target, StochasticRegime):
                if est == "dr":
                    raise _config_error("dr is not available for stochastic targets")

                def run(d, _e=est, _m=model, _t=target):
                    n1 = build_nuis(d, 1, _e == "ipw", _e == "cl")
                    n0 = build_nuis(d, 0, _e == "ipw", _e == "cl")
                    if _e == "cl":
                        return perf.loss_cl_stochastic(d, _t, n1, n0)
                    return perf.loss_ipw_stochastic(d, _m, _t, n1, n0)
            elif isinstance(target, StaticRegime):
                def run(d, _e=est, _m=model, _a=target.a):
                    want_prop, want_cond = needs(_e)
                    nuis = build_nuis(d, _a, want_prop, want_cond)
                    if _e == "cl":
                        return perf.loss_cl(d, nuis)
                    if _e == "ipw":
                        return perf.loss_ipw(d, _m, nuis)
                    return perf.loss_dr(d, _m, nuis)
            else:
                raise _config_error(f"estimator {est!r} needs a static or "
                                    "stochastic target")
        elif est.startswith("auc:"):
            kind = est.split(":", 1)[1]
            if kind == "naive":
                def run(d, _m=model):
                    return perf.auc(d, _m, "naive")
            else:
                if not isinstance(target, StaticRegime):
                    raise _config_error(f"{est} needs a static target")

                def run(d, _k=kind, _m=model, _a=target.a):
                    want_prop, want_cond = needs(f"auc:{_k}")
                    nuis = build_nuis(d, _a, want_prop, want_cond)
                    return perf.auc(d, _m, _k, nuis)
        else:
            kind = est.split(":", 1)[1]
            if kind != "naive" and not isinstance(target, StaticRegime):
                raise _config_error(f"{est} needs a static target")

            def run(d, _k=kind, _m=model,
                    _a=target.a if isinstance(target, StaticRegime) else None):
                nuis = None
                if _k != "naive":
                    want_prop, want_cond = needs(f"calibration:{_k}")
                    nuis = build_nuis(d, _a, want_prop, want_cond)
                return perf.calibration(d, _m, _k, nuis, cal_method,
                                        cal_bins, cal_bw, cal_grid)
        closures[len(records)] = run
        records.append(run(data))
    return records, closures


def cmd_evaluate(args) -> int:
    cfg = _read_config(args.config)
    data = _load_input(cfg)
    target = _parse_target(cfg.get("target"), data.names)
    loss = get_loss(cfg.get("loss", "squared"))
    model = _fit_model_from_config(cfg, data, target)
    records, closures = _evaluate_records(cfg, data, model, target, loss)

    boot_cfg = cfg.get("bootstrap")
    boot_results = {}
    if boot_cfg:
        reps = int(boot_cfg.get("replicates", 500))
        bseed = int(boot_cfg.get("seed", 0))
        method = boot_cfg.get("method", "percentile")
        for i, rec in enumerate(records):
            if rec.value is None:
                continue  # curves are not bootstrapped
            run = closures[i]
            boot = inference.bootstrap(data, lambda d, _r=run: _r(d).value,
                                       reps, bseed, method)
            boot_results[i] = boot
            records[i] = rec.with_se(boot.se)

    out = {"schema_version": _SCHEMA_VERSION,
           "kind": "evaluation",
           "input": cfg["input"],
           "n_test": int(np.sum(data.split == 0)),
           "target": None if target is None else target.to_json(),
           "loss": loss.kind,
           "estimates": []}
    for i, rec in enumerate(records):
        entry = rec.to_json()
        if i in boot_results:
            entry["bootstrap"] = boot_results[i].to_json()
        out["estimates"].append(entry)

    _write_json(cfg.get("out", "results.json"), out)
    if "calibration_out" in cfg:
        _write_curves(cfg["calibration_out"], records)
    for rec in records:
        if rec.value is not None:
            print(f"{rec.estimator:>6} {rec.measure:<16} {rec.value:.6f}"
                  + (f"  (se {rec.se:.6f})" if rec.se is not None else ""))
        else:
            print(f"{rec.estimator:>6} {rec.measure:<16} curve with "
                  f"{len(rec.curve_x)} points")
    return 0


def _write_json(path: str, obj: dict) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_curves(path: str, records) -> None:
    with open(path, "w") as fh:
        fh.write("estimator,prediction,response\n")
        for rec in records:
            if rec.curve_x is None:
                continue
            for xv, yv in zip(rec.curve_x, rec.curve_y):
                fh.write(f"{rec.estimator},{xv!r},{yv!r}\n")


# ---------------------------------------------------------------------------
# tailor


def cmd_tailor(args) -> int:
    cfg = _read_config(args.config)
    data = _load_input(cfg)
    if isinstance(data, SequentialDataset):
        raise _config_error("tailoring applies to wide-format input only")
    target = _parse_target(cfg.get("target"), data.names)
    model = _fit_model_from_config(cfg, data, target)
    out = {"schema_version": _SCHEMA_VERSION,
           "columns": None if data.names is None else list(data.names),
           "model": model.to_json()}
    path = cfg.get("out", "model.json")
    _write_json(path, out)
    print(f"wrote {model.method} model ({len(model.glm.coef)} coefficients) to {path}")
    return 0


# ---------------------------------------------------------------------------
# cv


def cmd_cv(args) -> int:
    cfg = _read_config(args.config)
    data = _load_input(cfg)
    if isinstance(data, SequentialDataset):
        raise _config_error("cv applies to wide-format input only")
    names = data.names
    target = _parse_target(cfg.get("target"), names)
    target_a = target.a if isinstance(target, StaticRegime) else None
    loss = get_loss(cfg.get("loss", "squared"))
    raw_cands = _require(cfg, "candidates")
    if not isinstance(raw_cands, list) or not raw_cands:
        raise _config_error("candidates must be a non-empty list")
    candidates = []
    for i, c in enumerate(raw_cands):
        if not isinstance(c, dict):
            raise _config_error(f"candidate {i} must be an object")
        truncate = c.get("truncate", 0.995)
        candidates.append(CandidateModel(
            name=str(c.get("name", f"candidate-{i}")),
            method=c.get("method", "plain"),
            model_spec=_parse_terms(_require(c, "terms"), names,
                                    f"candidate {i} terms"),
            family=_parse_family(c.get("family")),
            propensity_spec=(_parse_terms(c["propensity_terms"], names,
                                          f"candidate {i} propensity terms")
                             if "propensity_terms" in c else None),
            outcome_spec=(_parse_terms(c["outcome_terms"], names,
                                       f"candidate {i} outcome terms")
                          if "outcome_terms" in c else None),
            clip=tuple(c.get("clip", tailor.DEFAULT_CLIP)),
            truncate=None if truncate is None else float(truncate)))
    ncfg = cfg.get("nuisances", {})
    prop_spec = (_parse_terms(ncfg["propensity_terms"], names, "propensity terms")
                 if "propensity_terms" in ncfg else None)
    cond_spec = (_parse_terms(ncfg["cond_loss_terms"], names, "conditional loss terms")
                 if "cond_loss_terms" in ncfg else None)
    try:
        result = perf.cv_select(data, candidates,
                                k=int(cfg.get("folds", 5)),
                                estimator=cfg.get("estimator", "dr"),
                                target_a=target_a, loss=loss,
                                propensity_spec=prop_spec,
                                cond_loss_spec=cond_spec,
                                clip=tuple(ncfg.get("clip", nuisance.DEFAULT_CLIP)),
                                seed=int(cfg.get("seed", 0)))
    except ValueError as err:
        raise _config_error(str(err))
    if "out" in cfg:
        _write_json(cfg["out"], result.to_json())
    print(f"selected: {result.names[result.selected]}")
    for name, score in zip(result.names, result.scores):
        print(f"  {name}: {score:.6f}")
    return 0


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    import os

    threads = args.threads if args.threads > 0 else (os.cpu_count() or 1)
    result = simulate.run_experiment(args.experiment, args.reps, args.n,
                                     args.seed, threads,
                                     args.treatment_form, args.noise)
    os.makedirs(args.out_dir, exist_ok=True)
    stem = os.path.join(args.out_dir, f"experiment{args.experiment}_table")
    result.write_csv(stem + ".csv")
    result.write_json(stem + ".json")
    print(result.format_table())
    print(f"\nwrote {stem}.csv and {stem}.json")
    return 0


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfpredict",
        description="Fit and evaluate prediction models under hypothetical "
                    "treatment strategies.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="re-run a built-in benchmark")
    p_sim.add_argument("--experiment", type=int, choices=(1, 2), required=True)
    p_sim.add_argument("--reps", type=int, default=2000)
    p_sim.add_argument("--n", type=int, default=1000)
    p_sim.add_argument("--seed", type=int, default=20240501)
    p_sim.add_argument("--threads", type=int, default=0,
                       help="worker processes for replicates; 0 = all cores")
    p_sim.add_argument("--out-dir", default=".")
    p_sim.add_argument("--treatment-form", choices=("increasing", "decreasing"),
                       default="increasing")
    p_sim.add_argument("--noise", choices=("variance", "sd"), default="variance")
    p_sim.set_defaults(func=cmd_simulate)

    for name, fn, help_text in (
            ("evaluate", cmd_evaluate, "estimate model performance under a strategy"),
            ("tailor", cmd_tailor, "fit and save a strategy-tailored model"),
            ("cv", cmd_cv, "cross-validated model selection")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to JSON config")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return 2 if err.code not in (0, None) else 0
    try:
        return args.func(args)
    except CliError as err:
        print(f"error: {err.slug}: {err.message}", file=sys.stderr)
        return err.code
    except PositivityError as err:
        print(f"error: positivity: {err}", file=sys.stderr)
        return 1
    except RankDeficiencyError as err:
        print(f"error: rank-deficiency: {err}", file=sys.stderr)
        return 1
    except NoComparablePairsError as err:
        print(f"error: no-pairs: {err}", file=sys.stderr)
        return 1
    except RuntimeError as err:
        print(f"error: runtime: {err}", file=sys.stderr)
        return 1
    except ValueError as err:
        print(f"error: invalid: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
