"""Rolling-window evaluation of combination models on forecast panels.

A panel holds, for one entity, a time-ordered truth series and an ``m``
column matrix of expert forecasts (``nan`` marks a missing forecast).  Fold
``f`` (0-based) trains on rows ``f .. f+L-1`` and forecasts row ``f+L``.
Ground truth is only reachable through :class:`GuardedTruth`, which refuses
reads past the current fold's training window and logs every access.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .mcmc import ChainConfig, PosteriorDraws, sample_batch
from .model import BatchTarget, ModelSpec, posterior_predictive

__all__ = [
    "DataError",
    "LeakageError",
    "ForecastPanel",
    "GuardedTruth",
    "RollingWindowConfig",
    "FoldResult",
    "EvalReport",
    "read_panels",
    "write_panels",
    "impute_missing",
    "run_rolling_cv",
    "evaluate_panels",
    "hit_rate",
    "win_rate",
    "surprise_sign",
    "synthetic_panel",
]

ASYM_QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)


class DataError(ValueError):
    """Malformed panel input; ``row``/``column`` locate the fault when known."""

    def __init__(self, msg, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{msg} ({', '.join(loc)})" if loc else msg)
        self.row = row
        self.column = column


class LeakageError(RuntimeError):
    """A fold tried to read ground truth outside its training window."""


@dataclass
class ForecastPanel:
    ticker: str
    periods: list
    y: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        self.periods = [str(p) for p in self.periods]
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        T = len(self.periods)
        if self.y.shape != (T,) or self.X.ndim != 2 or self.X.shape[0] != T:
            raise DataError(f"panel {self.ticker!r}: inconsistent shapes")
        if any(a >= b for a, b in zip(self.periods, self.periods[1:])):
            raise DataError(f"panel {self.ticker!r}: periods must be strictly increasing")
        if not np.all(np.isfinite(self.y)):
            raise DataError(f"panel {self.ticker!r}: actual values must be present")
        empty = np.nonzero(~self.mask.any(axis=1))[0]
        if empty.size:
            raise DataError(f"panel {self.ticker!r}: no observed forecast at period {self.periods[empty[0]]}")

    @property
    def T(self):
        return self.X.shape[0]

    @property
    def m(self):
        return self.X.shape[1]

    @property
    def mask(self):
        return np.isfinite(self.X)

    def consensus(self, t) -> float:
        """Equally weighted mean of the forecasts observed at ``t``."""
        return float(np.nanmean(self.X[t]))


class GuardedTruth:
    """Access-controlled view of a truth series.

    ``open_fold(f, limit)`` allows training reads of indices ``< limit``.
    ``reveal(f, t)`` releases the evaluation target once the fold's forecast
    is recorded.  Every access is appended to ``log`` as
    ``(fold, kind, first index, last index)``.
    """

    def __init__(self, y):
        self._y = np.asarray(y, dtype=float)
        self._fold = None
        self._limit = 0
        self.log = []
        self._forecast_done = set()

    def open_fold(self, fold, limit):
        self._fold, self._limit = fold, limit

    def read(self, start, stop) -> np.ndarray:
        if self._fold is None:
            raise LeakageError("truth read outside an open fold")
        if stop > self._limit or start < 0:
            raise LeakageError(
                f"fold {self._fold} read truth rows {start}..{stop - 1}, limit is {self._limit - 1}")
        self.log.append((self._fold, "train", start, stop - 1))
        return self._y[start:stop].copy()

    def mark_forecast(self, fold):
        self._forecast_done.add(fold)

    def reveal(self, fold, t) -> float:
        if fold not in self._forecast_done:
            raise LeakageError(f"fold {fold} asked for its target before forecasting")
        self.log.append((fold, "eval", t, t))
        return float(self._y[t])


# ---------------------------------------------------------------------------
# CSV input/output


def _parse_float(cell, row, col):
    cell = cell.strip()
    if cell == "":
        return math.nan
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"not a number: {cell!r}", row, col) from None
    if not math.isfinite(v):
        raise DataError(f"non-finite value {cell!r}", row, col)
    return v


def read_panels(path) -> list:
    """Read ``ticker,period,actual,f1..fm`` rows into one panel per ticker.

    Rows are sorted by period within each ticker; tickers keep first-seen
    order.  Empty forecast cells are missing values.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("empty panel file", 1) from None
        if header[:3] != ["ticker", "period", "actual"] or len(header) < 4:
            raise DataError("header must be ticker,period,actual,f1,...,fm", 1)
        fcols = header[3:]
        for j, name in enumerate(fcols):
            if name != f"f{j + 1}":
                raise DataError(f"expected forecast column f{j + 1}", 1, name)
        groups = {}
        for i, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(row)}", i)
            ticker, period = row[0].strip(), row[1].strip()
            if not ticker or not period:
                raise DataError("ticker and period are required", i)
            actual = _parse_float(row[2], i, "actual")
            if math.isnan(actual):
                raise DataError("missing actual value", i, "actual")
            xs = [_parse_float(c, i, fcols[j]) for j, c in enumerate(row[3:])]
            groups.setdefault(ticker, []).append((period, actual, xs, i))
    panels = []
    for ticker, rows in groups.items():
        rows.sort(key=lambda r: r[0])
        for a, b in zip(rows, rows[1:]):
            if a[0] == b[0]:
                raise DataError(f"duplicate period {a[0]!r} for {ticker!r}", b[3], "period")
        for r in rows:
            if all(math.isnan(v) for v in r[2]):
                raise DataError("row has no observed forecast", r[3])
        panels.append(ForecastPanel(ticker, [r[0] for r in rows],
                                    [r[1] for r in rows], [r[2] for r in rows]))
    if not panels:
        raise DataError("panel file has no data rows", 2)
    return panels


def write_panels(panels: Sequence[ForecastPanel], path):
    m = panels[0].m
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "period", "actual"] + [f"f{j + 1}" for j in range(m)])
        for p in panels:
            for t in range(p.T):
                w.writerow([p.ticker, p.periods[t], format(p.y[t], ".17g")]
                           + ["" if math.isnan(v) else format(v, ".17g") for v in p.X[t]])


# ---------------------------------------------------------------------------
# imputation


def impute_missing(panel: ForecastPanel, t: int, rng: Optional[np.random.Generator] = None,
                   deterministic: bool = True) -> np.ndarray:
    """Fill the missing forecasts of row ``t``.

    Missing entries are drawn from ``N(mean_t, var_t)`` of the observed
    forecasts at ``t`` (sample variance), or set to ``mean_t`` when
    ``deterministic``.  With a single observed forecast the variance is
    taken as zero.
    """
    row = panel.X[t].copy()
    obs = np.isfinite(row)
    if not obs.any():
        raise DataError(f"all forecasts missing at period {panel.periods[t]}", t)
    miss = ~obs
    if not miss.any():
        return row
    mu = row[obs].mean()
    if deterministic or obs.sum() < 2:
        row[miss] = mu
    else:
        if rng is None:
            raise ValueError("stochastic imputation needs a random generator")
        sd = row[obs].std(ddof=1)
        row[miss] = mu + sd * rng.standard_normal(miss.sum())
    return row


# ---------------------------------------------------------------------------
# rolling cross-validation


@dataclass(frozen=True)
class RollingWindowConfig:
    L: int = 12
    F: int = 24
    horizon: int = 1

    def __post_init__(self):
        if self.L < 1 or self.F < 1:
            raise ValueError("need L >= 1 and F >= 1")
        if self.horizon != 1:
            raise ValueError("only one-step-ahead forecasting is supported")

    def check(self, T):
        if self.L + self.F > T:
            raise DataError(f"panel has {T} periods, need L + F = {self.L + self.F}")


@dataclass
class FoldResult:
    fold: int
    period: str
    forecast: float
    consensus: float
    actual: float
    summary: list
    asym_quantiles: Optional[np.ndarray] = None
    ppd_residuals: Optional[np.ndarray] = None
    acceptance: float = math.nan

    @property
    def hit(self) -> bool:
        return surprise_sign(self.actual - self.consensus) == surprise_sign(self.forecast - self.consensus)

    @property
    def win(self) -> bool:
        return abs(self.actual - self.forecast) < abs(self.actual - self.consensus)


def surprise_sign(d):
    """Sign with ``sign(0) = +1``."""
    return np.where(np.asarray(d) >= 0, 1, -1)


def hit_rate(actual, forecast, consensus) -> float:
    """Share of folds where forecast and truth fall on the same side of the
    consensus; a zero surprise counts as positive."""
    actual, forecast, consensus = (np.asarray(a, dtype=float) for a in (actual, forecast, consensus))
    if actual.size == 0:
        raise ValueError("no folds")
    return float(np.mean(surprise_sign(actual - consensus) == surprise_sign(forecast - consensus)))


def win_rate(actual, forecast, consensus) -> float:
    """Share of folds where the forecast is strictly closer to the truth than
    the consensus; ties lose."""
    actual, forecast, consensus = (np.asarray(a, dtype=float) for a in (actual, forecast, consensus))
    if actual.size == 0:
        raise ValueError("no folds")
    return float(np.mean(np.abs(actual - forecast) < np.abs(actual - consensus)))


@dataclass
class EvalReport:
    ticker: str
    family: str
    folds: list = field(default_factory=list)

    def _arrays(self):
        a = np.array([[f.actual, f.forecast, f.consensus] for f in self.folds])
        return a[:, 0], a[:, 1], a[:, 2]

    @property
    def hit_rate(self) -> float:
        return hit_rate(*self._arrays())

    @property
    def win_rate(self) -> float:
        return win_rate(*self._arrays())


def _fold_inputs(panel, rw, f, stochastic, seed, entity_idx):
    rng = np.random.default_rng(np.random.SeedSequence([seed, entity_idx, f, 1])) if stochastic else None
    rows = range(f, f + rw.L + 1)
    Xf = np.array([impute_missing(panel, t, rng, not stochastic) for t in rows])
    return Xf[:-1], Xf[-1]


def _prepare(panel, rw, stochastic, seed, entity_idx, guard):
    """Training inputs for every fold, reading truth through ``guard``."""
    rw.check(panel.T)
    Y, X, x_next = [], [], []
    for f in range(rw.F):
        guard.open_fold(f, f + rw.L)
        Y.append(guard.read(f, f + rw.L))
        Xf, xn = _fold_inputs(panel, rw, f, stochastic, seed, entity_idx)
        X.append(Xf)
        x_next.append(xn)
    guard.open_fold(None, 0)
    return np.array(Y), np.array(X), np.array(x_next)


def _asym_quantiles(spec, draws: PosteriorDraws):
    name = spec.asym_name or spec.scale_name
    return np.quantile(draws.column(name), ASYM_QUANTILES)


def _finish(panel, spec, rw, draws_list, x_next, guard, seed, entity_idx, keep_ppd):
    out = []
    for f, draws in enumerate(draws_list):
        t = f + rw.L
        rng = np.random.default_rng(np.random.SeedSequence([seed, entity_idx, f, 2]))
        pred = posterior_predictive(spec, draws, x_next[f], rng)
        guard.mark_forecast(f)
        actual = guard.reveal(f, t)
        out.append(FoldResult(
            fold=f, period=panel.periods[t], forecast=pred.point,
            consensus=panel.consensus(t), actual=actual, summary=draws.summary(),
            asym_quantiles=_asym_quantiles(spec, draws),
            ppd_residuals=(actual - pred.samples) if keep_ppd else None,
            acceptance=float(draws.acceptance_rate.mean())))
    return out


def run_rolling_cv(panel: ForecastPanel, spec: ModelSpec, rw: RollingWindowConfig,
                   chains: ChainConfig, *, stochastic_imputation: bool = False,
                   entity_idx: int = 0, guard: Optional[GuardedTruth] = None,
                   keep_ppd: bool = False) -> EvalReport:
    """Fit every fold of one panel and forecast one step ahead.

    All folds run in one batched sampler call; fold ``f`` uses the random
    stream seeded by ``(chains.seed, entity_idx, f)``.  Pass ``guard`` to
    inspect the truth-access log afterwards.
    """
    guard = guard or GuardedTruth(panel.y)
    Y, X, x_next = _prepare(panel, rw, stochastic_imputation, chains.seed, entity_idx, guard)
    seeds = [(chains.seed, entity_idx, f) for f in range(rw.F)]
    target = BatchTarget(spec, Y, X)
    draws = sample_batch(target, target.layout, chains, seeds)
    folds = _finish(panel, spec, rw, draws, x_next, guard, chains.seed, entity_idx, keep_ppd)
    return EvalReport(panel.ticker, spec.family, folds)


# -- multi-entity evaluation -------------------------------------------------

_UNIT = 96  # problems per sampler call, fixed so results do not depend on --threads


def _sample_unit(args):
    spec, Y, X, chains, seeds = args
    target = BatchTarget(spec, Y, X)
    return sample_batch(target, target.layout, chains, seeds)


def evaluate_panels(panels: Sequence[ForecastPanel], spec: ModelSpec, rw: RollingWindowConfig,
                    chains: ChainConfig, *, stochastic_imputation: bool = False,
                    threads: int = 1, keep_ppd: bool = False) -> list:
    """:func:`run_rolling_cv` over many panels, batching folds across entities.

    Problems are grouped into fixed-size work units; ``threads`` only decides
    how many processes execute the units, so output is identical for any
    thread count.
    """
    guards = [GuardedTruth(p.y) for p in panels]
    prepared = [_prepare(p, rw, stochastic_imputation, chains.seed, i, g)
                for i, (p, g) in enumerate(zip(panels, guards))]
    Y = np.concatenate([pp[0] for pp in prepared])
    X = np.concatenate([pp[1] for pp in prepared])
    seeds = [(chains.seed, i, f) for i in range(len(panels)) for f in range(rw.F)]
    units = [(spec, Y[s:s + _UNIT], X[s:s + _UNIT], chains, seeds[s:s + _UNIT])
             for s in range(0, len(seeds), _UNIT)]
    if threads > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(units))) as ex:
            results = list(ex.map(_sample_unit, units))
    else:
        results = [_sample_unit(u) for u in units]
    draws = [d for r in results for d in r]
    reports = []
    for i, (p, g, pp) in enumerate(zip(panels, guards, prepared)):
        d_i = draws[i * rw.F:(i + 1) * rw.F]
        folds = _finish(p, spec, rw, d_i, pp[2], g, chains.seed, i, keep_ppd)
        reports.append(EvalReport(p.ticker, spec.family, folds))
    return reports


# ---------------------------------------------------------------------------
# synthetic panels


def synthetic_panel(ticker: str, rng: np.random.Generator, T: int = 36,
                    weights=(0.6, 0.25, 0.1, 0.05), w0: float = 0.0,
                    noise_sd=(0.2, 0.5, 0.8, 1.0), sigma: float = 0.05, tau: float = 0.3,
                    drift: float = 0.02, vol: float = 0.05, level: float = 10.0,
                    missing: float = 0.0) -> ForecastPanel:
    """Panel with ALD errors around a known convex combination.

    Forecasts are ``s_t + noise`` around a random-walk level ``s_t``; the
    truth is ``w0 + weights . x_t + e_t`` with ``e_t`` asymmetric Laplace of
    mode zero.  ``missing`` is the probability a forecast is dropped (one
    forecast per row is always kept).
    """
    from .splitdist import ald_quantile

    weights = np.asarray(weights, dtype=float)
    m = weights.size
    s = level + np.cumsum(rng.normal(drift, vol, T))
    X = s[:, None] + rng.normal(size=(T, m)) * np.asarray(noise_sd)
    u = rng.random(T)
    y = w0 + X @ weights + ald_quantile(u, 0.0, sigma, tau)
    if missing > 0:
        drop = rng.random((T, m)) < missing
        keep = rng.integers(0, m, T)
        drop[np.arange(T), keep] = False
        X = np.where(drop, np.nan, X)
    periods = [f"{2015 + t // 4}Q{t % 4 + 1}" for t in range(T)]
    return ForecastPanel(ticker, periods, y, X)
