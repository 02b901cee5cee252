"""Command-line interface: ``modalcomb {simulate,fit,evaluate,ppd}``.

Settings come from an optional JSON config file (``--config``) whose keys
are the long option names with dashes replaced by underscores; command-line
flags override the file.  Errors are reported as one line on stderr::

    modalcomb: error kind=config field=tau: tau must lie in (0, 1), got 1.5

Exit codes: 0 success, 2 configuration error, 3 data error, 4 sampler
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import priors as pr
from .forecast import (DataError, RollingWindowConfig, evaluate_panels, impute_missing,
                       read_panels)
from .mcmc import ChainConfig, SamplerError
from .model import FAMILIES, PRIOR_SETS, ModelSpec, TrainingWindow, fit, posterior_predictive
from .simstudy import GRIDS, SimConfig, run_grid

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SAMPLER = 0, 2, 3, 4


class ConfigError(Exception):
    def __init__(self, msg, field=None):
        super().__init__(msg)
        self.field = field


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return format(float(v), ".17g")


# ---------------------------------------------------------------------------
# argument handling

_COMMON = {
    "config": None, "seed": None, "threads": 1, "out": ".",
    "chains": None, "burn_in": None, "draws": None,
}
_DEFAULTS = {
    "simulate": {"family": "ald", "tau": None, "beta": None, "kappa": None,
                 "n_reps": 100, "n": 100, "scale": "desk", "sampler": None,
                 "beta_prior": "gamma"},
    "fit": {"panel": None, "family": "ald", "ticker": None, "rows": None,
            "prior_set": "data-defaults", "priors": None, "discount": 0.0},
    "evaluate": {"panel": None, "families": "ald,an,rg", "L": 12, "F": 24,
                 "prior_set": "data-defaults", "priors": None, "discount": 0.0,
                 "imputation": "deterministic", "point": "mean"},
    "ppd": {"panel": None, "family": "ald", "ticker": None, "target_row": None, "L": 12,
            "prior_set": "data-defaults", "priors": None, "discount": 0.0,
            "point": "mean"},
}


def _add_common(p):
    p.add_argument("--config", help="JSON file with default settings")
    p.add_argument("--seed", type=int, help="master seed (required when CI is set)")
    p.add_argument("--threads", type=int, help="worker processes (results do not depend on it)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--chains", type=int, help="number of chains")
    p.add_argument("--burn-in", type=int, help="burn-in iterations per chain")
    p.add_argument("--draws", type=int, help="kept draws per chain")


def _add_model(p, families=False):
    if families:
        p.add_argument("--families", help="comma-separated families, e.g. ald,an,rg")
    else:
        p.add_argument("--family", choices=FAMILIES)
    p.add_argument("--prior-set", choices=PRIOR_SETS)
    p.add_argument("--priors", help="JSON file mapping parameter blocks to priors")
    p.add_argument("--discount", type=float, help="exponential discount rate lambda >= 0")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="modalcomb", description="Bayesian modal regression for forecast combination")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate", help="Monte Carlo recovery study")
    _add_common(s)
    s.add_argument("--family", choices=tuple(GRIDS))
    s.add_argument("--tau", type=float, help="single tau grid value (ald, an)")
    s.add_argument("--beta", type=float, help="single beta grid value (rg)")
    s.add_argument("--kappa", type=float, help="single kappa grid value (ald_latent)")
    s.add_argument("--n-reps", type=int)
    s.add_argument("--n", type=int, help="observations per dataset")
    s.add_argument("--scale", choices=("desk", "full"), help="chain defaults: desk or full")
    s.add_argument("--sampler", choices=("gibbs", "rwm"))
    s.add_argument("--beta-prior", choices=("gamma", "inv_gamma"))

    f = sub.add_parser("fit", help="fit one training window")
    _add_common(f)
    f.add_argument("--panel", help="panel CSV")
    _add_model(f)
    f.add_argument("--ticker", help="entity to fit (default: first in file)")
    f.add_argument("--rows", help="row range start:stop within the entity (default: all)")

    e = sub.add_parser("evaluate", help="rolling-window evaluation")
    _add_common(e)
    e.add_argument("--panel", help="panel CSV")
    _add_model(e, families=True)
    e.add_argument("--L", type=int, help="window length")
    e.add_argument("--F", type=int, help="number of folds")
    e.add_argument("--imputation", choices=("deterministic", "stochastic"))
    e.add_argument("--point", choices=("mean", "median"))

    q = sub.add_parser("ppd", help="posterior predictive draws for one target row")
    _add_common(q)
    q.add_argument("--panel", help="panel CSV")
    _add_model(q)
    q.add_argument("--ticker")
    q.add_argument("--target-row", type=int, help="row to predict (default: last)")
    q.add_argument("--L", type=int, help="training rows before the target")
    q.add_argument("--point", choices=("mean", "median"))
    return parser


def _ci_mode():
    v = os.environ.get("CI", "")
    return v not in ("", "0", "false", "False")


def resolve_config(argv):
    """Parse ``argv`` and merge the config file; returns (command, settings)."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        raise ConfigError("missing subcommand (simulate, fit, evaluate, ppd)", "command")
    allowed = {**_COMMON, **_DEFAULTS[args.command]}
    cfg = dict(allowed)
    if args.config:
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}", "config") from None
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object", "config")
        unknown = sorted(set(file_cfg) - set(allowed) - {"command"})
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}", unknown[0])
        if file_cfg.get("command", args.command) != args.command:
            raise ConfigError("config file is for a different subcommand", "command")
        file_cfg.pop("command", None)
        cfg.update(file_cfg)
    for k, v in vars(args).items():
        if k in allowed and v is not None:
            cfg[k] = v
    if cfg["seed"] is None:
        if _ci_mode():
            raise ConfigError("--seed is required when CI is set", "seed")
        cfg["seed"] = 0
    _validate(args.command, cfg)
    return args.command, cfg


def _need(cond, field, msg):
    if not cond:
        raise ConfigError(msg, field)


def _validate(cmd, c):
    _need(isinstance(c["seed"], int) and c["seed"] >= 0, "seed", "seed must be a non-negative integer")
    _need(isinstance(c["threads"], int) and c["threads"] >= 1, "threads", "threads must be >= 1")
    for k in ("chains", "draws"):
        _need(c[k] is None or (isinstance(c[k], int) and c[k] >= 1), k, f"{k} must be >= 1")
    _need(c["burn_in"] is None or (isinstance(c["burn_in"], int) and c["burn_in"] >= 0),
          "burn_in", "burn_in must be >= 0")
    if cmd == "simulate":
        _need(c["family"] in GRIDS, "family", f"family must be one of {tuple(GRIDS)}")
        grid = GRIDS[c["family"]][0]
        for k in ("tau", "beta", "kappa"):
            if c[k] is not None and k != grid:
                raise ConfigError(f"--{k} does not apply to family {c['family']}", k)
        v = c[grid]
        if v is not None:
            ok = {"tau": lambda x: 0 < x < 1, "beta": lambda x: x > 0,
                  "kappa": lambda x: 0.001 < x < 4}[grid]
            rng = {"tau": "(0, 1)", "beta": "(0, inf)", "kappa": "(0.001, 4)"}[grid]
            _need(isinstance(v, (int, float)) and ok(v), grid, f"{grid} must lie in {rng}, got {v!r}")
        _need(isinstance(c["n_reps"], int) and c["n_reps"] >= 2, "n_reps", "n_reps must be >= 2")
        _need(isinstance(c["n"], int) and c["n"] >= 6, "n", "n must be >= 6")
        _need(c["scale"] in ("desk", "full"), "scale", "scale must be desk or full")
        _need(c["sampler"] in (None, "gibbs", "rwm"), "sampler", "sampler must be gibbs or rwm")
        _need(c["sampler"] != "gibbs" or c["family"] == "ald_latent", "sampler",
              "the gibbs sampler needs family ald_latent")
        _need(c["beta_prior"] in ("gamma", "inv_gamma"), "beta_prior", "beta_prior must be gamma or inv_gamma")
        return
    _need(bool(c["panel"]), "panel", "--panel is required")
    _need(c["prior_set"] in PRIOR_SETS, "prior_set", f"prior_set must be one of {PRIOR_SETS}")
    _need(isinstance(c["discount"], (int, float)) and c["discount"] >= 0, "discount", "discount must be >= 0")
    if cmd == "evaluate":
        fams = [f.strip() for f in str(c["families"]).split(",") if f.strip()]
        bad = [f for f in fams if f not in FAMILIES]
        _need(fams and not bad, "families", f"unknown families: {bad or c['families']!r}")
        c["families"] = fams
        _need(isinstance(c["F"], int) and c["F"] >= 1, "F", "F must be >= 1")
        _need(c["imputation"] in ("deterministic", "stochastic"), "imputation",
              "imputation must be deterministic or stochastic")
    else:
        _need(c["family"] in FAMILIES, "family", f"family must be one of {FAMILIES}")
    if cmd in ("evaluate", "ppd"):
        _need(isinstance(c["L"], int) and c["L"] >= 1, "L", "L must be >= 1")
        _need(c["point"] in ("mean", "median"), "point", "point must be mean or median")


def _chain_config(c, base: ChainConfig) -> ChainConfig:
    kw = {"seed": c["seed"]}
    if c["chains"] is not None:
        kw["n_chains"] = c["chains"]
    if c["burn_in"] is not None:
        kw["burn_in"] = c["burn_in"]
    if c["draws"] is not None:
        kw["draws"] = c["draws"]
    try:
        return replace(base, **kw)
    except ValueError as exc:
        raise ConfigError(str(exc), "chains") from None


def _load_priors(path):
    if path is None:
        return None
    try:
        with open(path) as fh:
            raw = json.load(fh)
        return {k: pr.prior_from_dict(v) for k, v in raw.items()}
    except (OSError, json.JSONDecodeError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad priors file: {exc}", "priors") from None


def _model_spec(c, family):
    try:
        return ModelSpec(family, priors=_load_priors(c["priors"]), discount=float(c["discount"]),
                         prior_set_name=c["prior_set"], point_estimate=c.get("point", "mean"))
    except ValueError as exc:
        raise ConfigError(str(exc), "priors") from None


def _pick_panel(panels, ticker):
    if ticker is None:
        return panels[0]
    for p in panels:
        if p.ticker == ticker:
            return p
    raise DataError(f"ticker {ticker!r} not found in panel")


def _complete_rows(panel, start, stop):
    X = np.array([impute_missing(panel, t) for t in range(start, stop)])
    return panel.y[start:stop], X


def _write_summary(draws, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "mean", "sd", "q025", "q975", "rhat", "ess"])
        for r in draws.summary():
            w.writerow([r["param"]] + [_fmt(r[k]) for k in ("mean", "sd", "q025", "q975", "rhat", "ess")])


def _check_resolved_priors(spec, m):
    try:
        spec.resolved_priors(m)
    except ValueError as exc:
        raise ConfigError(str(exc), "priors") from None


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(c, out: Path):
    family = c["family"]
    base = ChainConfig.simulation() if c["scale"] == "full" else ChainConfig.desk()
    chains = _chain_config(c, base)
    grid_name = GRIDS[family][0]
    values = None if c[grid_name] is None else [float(c[grid_name])]
    n_reps = c["n_reps"] if c["scale"] == "desk" or c["n_reps"] != 100 else 500
    cfg = SimConfig(family=family, grid_value=GRIDS[family][1][0], n_reps=n_reps, n=c["n"],
                    seed=c["seed"], chains=chains, sampler=c["sampler"], beta_prior=c["beta_prior"])
    report = run_grid(cfg, values, threads=c["threads"])
    report.to_csv(out / f"sim_{family}.csv")
    (out / f"sim_{family}.txt").write_text(report.to_text())


def cmd_fit(c, out: Path):
    panel = _pick_panel(read_panels(c["panel"]), c["ticker"])
    start, stop = 0, panel.T
    if c["rows"]:
        try:
            a, b = str(c["rows"]).split(":")
            start, stop = int(a or 0), int(b or panel.T)
        except ValueError:
            raise ConfigError("rows must look like start:stop", "rows") from None
        _need(0 <= start < stop <= panel.T, "rows", f"rows must lie within 0:{panel.T}")
    y, X = _complete_rows(panel, start, stop)
    try:
        window = TrainingWindow(y, X)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    spec = _model_spec(c, c["family"])
    _check_resolved_priors(spec, window.m)
    draws = fit(spec, window, _chain_config(c, ChainConfig.data()))
    draws.to_csv(out / "draws.csv")
    _write_summary(draws, out / "summary.csv")


def cmd_evaluate(c, out: Path):
    panels = read_panels(c["panel"])
    rw = RollingWindowConfig(c["L"], c["F"])
    for p in panels:
        rw.check(p.T)
    chains = _chain_config(c, ChainConfig.data())
    hits, wins = {}, {}
    for fam in c["families"]:
        spec = _model_spec(c, fam)
        _check_resolved_priors(spec, panels[0].m)
        reports = evaluate_panels(panels, spec, rw, chains, threads=c["threads"],
                                  stochastic_imputation=c["imputation"] == "stochastic",
                                  keep_ppd=True)
        hits[fam] = [r.hit_rate for r in reports]
        wins[fam] = [r.win_rate for r in reports]
        _write_folds(reports, out / f"folds_{fam}.csv")
        _write_asym(reports, spec, out / f"asym_{fam}.csv")
        _write_ppd(reports, out / f"ppd_{fam}.csv")
    tickers = [p.ticker for p in panels]
    _write_rates(tickers, c["families"], hits, out / "hit_rates.csv")
    _write_rates(tickers, c["families"], wins, out / "win_rates.csv")


def _write_folds(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "fold", "period", "actual", "forecast", "consensus", "hit", "win", "acceptance"])
        for r in reports:
            for f in r.folds:
                w.writerow([r.ticker, f.fold, f.period, _fmt(f.actual), _fmt(f.forecast),
                            _fmt(f.consensus), int(f.hit), int(f.win), _fmt(f.acceptance)])


def _write_asym(reports, spec, path):
    from .forecast import ASYM_QUANTILES
    name = spec.asym_name or spec.scale_name
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "fold", "param"] + [f"q{int(round(q * 1000)):03d}" for q in ASYM_QUANTILES])
        for r in reports:
            for f in r.folds:
                w.writerow([r.ticker, f.fold, name] + [_fmt(v) for v in f.asym_quantiles])


def _write_ppd(reports, path, thin=1000):
    """Centred residuals ``actual - predictive draw``, evenly thinned per fold."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "fold", "residual"])
        for r in reports:
            for f in r.folds:
                res = f.ppd_residuals
                idx = np.linspace(0, res.size - 1, min(thin, res.size)).astype(int)
                for v in res[idx]:
                    w.writerow([r.ticker, f.fold, _fmt(v)])


def _write_rates(tickers, families, rates, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker"] + list(families))
        for i, t in enumerate(tickers):
            w.writerow([t] + [_fmt(rates[f][i]) for f in families])
        w.writerow(["Mean"] + [_fmt(float(np.mean(rates[f]))) for f in families])


def cmd_ppd(c, out: Path):
    panel = _pick_panel(read_panels(c["panel"]), c["ticker"])
    t = panel.T - 1 if c["target_row"] is None else c["target_row"]
    _need(0 <= t < panel.T, "target_row", f"target_row must lie in [0, {panel.T})")
    if t - c["L"] < 0:
        raise DataError(f"need {c['L']} rows before target row {t}")
    y, X = _complete_rows(panel, t - c["L"], t)
    try:
        window = TrainingWindow(y, X)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    spec = _model_spec(c, c["family"])
    _check_resolved_priors(spec, window.m)
    chains = _chain_config(c, ChainConfig.data())
    draws = fit(spec, window, chains)
    rng = np.random.default_rng(np.random.SeedSequence([c["seed"], t, 2]))
    pred = posterior_predictive(spec, draws, impute_missing(panel, t), rng)
    actual = panel.y[t]
    with open(out / "ppd.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["draw", "prediction", "mode", "residual"])
        for i, (s, mo) in enumerate(zip(pred.samples, pred.modes)):
            w.writerow([i, _fmt(s), _fmt(mo), _fmt(actual - s)])
    with open(out / "ppd_point.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "period", "actual", "forecast", "consensus"])
        w.writerow([panel.ticker, panel.periods[t], _fmt(actual), _fmt(pred.point),
                    _fmt(panel.consensus(t))])


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "evaluate": cmd_evaluate, "ppd": cmd_ppd}


def _fail(kind, code, msg, field=None):
    where = f" field={field}" if field else ""
    msg = " ".join(str(msg).split())
    print(f"modalcomb: error kind={kind}{where}: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        cmd, c = resolve_config(sys.argv[1:] if argv is None else argv)
        out = Path(c["out"])
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[cmd](c, out)
    except ConfigError as exc:
        return _fail("config", EXIT_CONFIG, exc, exc.field)
    except DataError as exc:
        return _fail("data", EXIT_DATA, exc, exc.column)
    except (OSError, UnicodeDecodeError) as exc:
        return _fail("data", EXIT_DATA, exc)
    except SamplerError as exc:
        return _fail("sampler", EXIT_SAMPLER, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
