"""Monte Carlo studies of posterior recovery for the combination models.

Each replicate draws ``n`` standard-normal forecast rows, builds the truth
from ``w0 + omega . x`` plus an error from the chosen family, fits the model
and records the posterior mean, sd and equal-tailed 95% interval of every
parameter.  Across replicates the study reports

* ``BIAS``   mean of the posterior means minus the true value,
* ``AVG.SE`` mean posterior standard deviation,
* ``MCSE``   ``sqrt(sum_j (mean_j - mean)^2 / (N (N - 1)))``,
* ``COV``    share of 95% intervals that contain the true value.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .mcmc import ChainConfig, PosteriorDraws, default_latent_priors, gibbs_ald_batch
from .model import ModelSpec, TrainingWindow, fit_batch, residual_quantile

__all__ = [
    "GRIDS",
    "SimConfig",
    "ReportRow",
    "SimStudyReport",
    "generate_dataset",
    "replicate_stats",
    "evaluate_replicates",
    "evaluate_stats",
    "run_study",
    "run_grid",
]

#: grid parameter and values per family
GRIDS = {
    "ald": ("tau", (0.25, 0.5, 0.75)),
    "an": ("tau", (0.25, 0.5, 0.75)),
    "rg": ("beta", (1.0, 5.0, 10.0)),
    "ald_latent": ("kappa", (0.5, 1.0, 2.0)),
}

_UNIT = 25  # replicates per sampler call


@dataclass(frozen=True)
class SimConfig:
    """One study: a family at one grid value.

    ``sigma`` is the true scale for ``ald``/``an``; ``beta`` for the latent
    family.  For ``rg`` the grid value is ``beta`` itself.  ``sampler`` is
    ``"gibbs"`` or ``"rwm"`` (the latter is the only choice outside the
    latent family).  ``beta_prior`` picks Gamma(2, 2) or InvGamma(2, 2) for
    the latent family's ``beta``.
    """

    family: str = "ald"
    grid_value: float = 0.5
    n_reps: int = 100
    n: int = 100
    m: int = 4
    w0: float = 0.0
    sigma: float = 1.0
    beta: float = 1.0
    seed: int = 0
    chains: ChainConfig = field(default_factory=ChainConfig.desk)
    sampler: Optional[str] = None
    beta_prior: str = "gamma"

    def __post_init__(self):
        if self.family not in GRIDS:
            raise ValueError(f"unknown family {self.family!r}")
        name, v = self.grid_name, self.grid_value
        if name == "tau" and not 0 < v < 1:
            raise ValueError(f"tau must lie in (0, 1), got {v!r}")
        if name == "beta" and not v > 0:
            raise ValueError(f"beta must be > 0, got {v!r}")
        if name == "kappa" and not 0.001 < v < 4:
            raise ValueError(f"kappa must lie in (0.001, 4), got {v!r}")
        if self.n_reps < 2:
            raise ValueError("n_reps must be >= 2")
        if self.n < self.m + 2 or self.m < 2:
            raise ValueError("need m >= 2 and n >= m + 2")
        if self.sampler not in (None, "gibbs", "rwm"):
            raise ValueError("sampler must be 'gibbs' or 'rwm'")
        if self.sampler == "gibbs" and self.family != "ald_latent":
            raise ValueError("the Gibbs sampler is only available for ald_latent")
        if self.beta_prior not in ("gamma", "inv_gamma"):
            raise ValueError("beta_prior must be 'gamma' or 'inv_gamma'")

    @property
    def grid_name(self):
        return GRIDS[self.family][0]

    @property
    def resolved_sampler(self):
        if self.sampler:
            return self.sampler
        return "gibbs" if self.family == "ald_latent" else "rwm"

    @property
    def grid_code(self) -> int:
        return int(round(self.grid_value * 1000))

    def truth(self) -> dict:
        t = {"w0": self.w0}
        for j in range(self.m):
            t[f"w{j + 1}"] = 1.0 / self.m
        if self.family in ("ald", "an"):
            t["sigma"], t["tau"] = self.sigma, self.grid_value
        elif self.family == "rg":
            t["beta"] = self.grid_value
        else:
            t["beta"], t["kappa"] = self.beta, self.grid_value
        return t

    def model_spec(self) -> ModelSpec:
        if self.family == "ald_latent":
            p = self.latent_priors()
            return ModelSpec("ald_latent", priors={"w0": p["w0"], "beta": p["beta"]},
                             prior_set_name="sim-defaults")
        return ModelSpec(self.family, prior_set_name="sim-defaults")

    def latent_priors(self) -> dict:
        return default_latent_priors(self.m, self.beta_prior)


def generate_dataset(cfg: SimConfig, rep: int, rng: Optional[np.random.Generator] = None) -> TrainingWindow:
    """Simulate replicate ``rep``; the default stream depends on
    ``(cfg.seed, grid value, rep)`` only."""
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, cfg.grid_code, rep, 0]))
    X = rng.standard_normal((cfg.n, cfg.m))
    mode = cfg.w0 + (X * (1.0 / cfg.m)).sum(axis=1)
    if cfg.family == "ald_latent":
        k = cfg.grid_value
        v = rng.exponential(1.0, cfg.n)
        z = rng.standard_normal(cfg.n)
        y = mode + cfg.beta * (1.0 / k - k) * v + np.sqrt(2.0 * cfg.beta**2 * v) * z
    else:
        u = rng.random(cfg.n)
        if cfg.family == "rg":
            e = residual_quantile("rg", u, cfg.grid_value)
        else:
            e = residual_quantile(cfg.family, u, cfg.sigma, cfg.grid_value)
        y = mode + e
    return TrainingWindow(y, X, fold=rep)


def replicate_stats(draws: PosteriorDraws) -> np.ndarray:
    """Per parameter: posterior mean, sd (ddof 1), 2.5% and 97.5% quantiles."""
    M = draws.matrix()
    q = np.quantile(M, [0.025, 0.975], axis=0)
    return np.stack([M.mean(axis=0), M.std(axis=0, ddof=1), q[0], q[1]], axis=1)


@dataclass
class ReportRow:
    param: str
    grid_value: float
    bias: float
    avg_se: float
    mcse: float
    cov: float
    n_reps: int


def evaluate_stats(stats: np.ndarray, names: Sequence[str], truth: dict, grid_value=math.nan) -> list:
    """Apply the study formulas to ``stats`` of shape ``(N, params, 4)``."""
    stats = np.asarray(stats, dtype=float)
    N = stats.shape[0]
    if N < 2:
        raise ValueError("need at least two replicates")
    rows = []
    for j, name in enumerate(names):
        if name not in truth:
            continue
        means = stats[:, j, 0]
        tv = truth[name]
        grand = means.mean()
        mcse = math.sqrt(((means - grand) ** 2).sum() / (N * (N - 1)))
        cov = float(np.mean((stats[:, j, 2] <= tv) & (tv <= stats[:, j, 3])))
        rows.append(ReportRow(name, float(grid_value), float(grand - tv),
                              float(stats[:, j, 1].mean()), mcse, cov, N))
    return rows


def evaluate_replicates(draws_list: Sequence[PosteriorDraws], truth: dict, grid_value=math.nan) -> "SimStudyReport":
    stats = np.stack([replicate_stats(d) for d in draws_list])
    rows = evaluate_stats(stats, draws_list[0].names, truth, grid_value)
    return SimStudyReport(rows=rows)


@dataclass
class SimStudyReport:
    family: str = ""
    grid_name: str = ""
    rows: list = field(default_factory=list)

    def row(self, param, grid_value=None) -> ReportRow:
        for r in self.rows:
            if r.param == param and (grid_value is None or math.isclose(r.grid_value, grid_value)):
                return r
        raise KeyError((param, grid_value))

    def extend(self, other: "SimStudyReport"):
        self.rows.extend(other.rows)

    def sorted_rows(self):
        order = {}
        for r in self.rows:
            order.setdefault(r.param, len(order))
        return sorted(self.rows, key=lambda r: (order[r.param], self.rows.index(r)))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["family", "param", self.grid_name or "grid_value",
                        "bias", "avg_se", "mcse", "cov", "n_reps"])
            for r in self.sorted_rows():
                w.writerow([self.family, r.param, format(r.grid_value, ".17g"),
                            format(r.bias, ".17g"), format(r.avg_se, ".17g"),
                            format(r.mcse, ".17g"), format(r.cov, ".17g"), r.n_reps])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows, family = [], ""
            for rec in reader:
                family = rec[0]
                rows.append(ReportRow(rec[1], float(rec[2]), float(rec[3]), float(rec[4]),
                                      float(rec[5]), float(rec[6]), int(rec[7])))
        return cls(family, header[2], rows)

    def to_text(self) -> str:
        """Aligned table: Parameter, grid value, BIAS, AVG.SE, MCSE, COV."""
        head = ["Parameter", self.grid_name or "value", "BIAS", "AVG.SE", "MCSE", "COV"]
        body, last = [], None
        for r in self.sorted_rows():
            label = r.param if r.param != last else ""
            last = r.param
            body.append([label, f"{r.grid_value:g}", f"{r.bias:.3f}", f"{r.avg_se:.3f}",
                         f"{r.mcse:.3f}", f"{r.cov:.3f}"])
        widths = [max(len(x) for x in col) for col in zip(head, *body)]
        fmt = lambda cells: "  ".join(c.ljust(w) if i == 0 else c.rjust(w)
                                      for i, (c, w) in enumerate(zip(cells, widths)))
        lines = [fmt(head), "-" * len(fmt(head))] + [fmt(b) for b in body]
        return "\n".join(lines) + "\n"


def _run_unit(args):
    cfg, reps = args
    data = [generate_dataset(cfg, r) for r in reps]
    Y = np.stack([d.y for d in data])
    X = np.stack([d.X for d in data])
    seeds = [(cfg.seed, cfg.grid_code, r) for r in reps]
    chains = cfg.chains
    if cfg.resolved_sampler == "gibbs":
        draws = gibbs_ald_batch(Y, X, cfg.latent_priors(), chains, seeds)
    else:
        draws = fit_batch(cfg.model_spec(), Y, X, chains, seeds)
    return draws[0].names, np.stack([replicate_stats(d) for d in draws])


def run_study(cfg: SimConfig, threads: int = 1) -> SimStudyReport:
    """Run all replicates of one grid value.

    Replicates are grouped into fixed units; ``threads`` only sets how many
    processes run them, so the report does not depend on it.
    """
    reps = list(range(cfg.n_reps))
    units = [(cfg, reps[i:i + _UNIT]) for i in range(0, len(reps), _UNIT)]
    if threads > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(units))) as ex:
            results = list(ex.map(_run_unit, units))
    else:
        results = [_run_unit(u) for u in units]
    names = results[0][0]
    stats = np.concatenate([r[1] for r in results])
    rows = evaluate_stats(stats, names, cfg.truth(), cfg.grid_value)
    return SimStudyReport(cfg.family, cfg.grid_name, rows)


def run_grid(cfg: SimConfig, values: Optional[Sequence[float]] = None, threads: int = 1) -> SimStudyReport:
    """Run :func:`run_study` for each grid value (default: the family's grid)."""
    values = GRIDS[cfg.family][1] if values is None else values
    report = SimStudyReport(cfg.family, cfg.grid_name)
    for v in values:
        report.extend(run_study(replace(cfg, grid_value=float(v)), threads))
    return report
