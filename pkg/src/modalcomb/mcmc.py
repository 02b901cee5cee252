"""Gradient-free MCMC: adaptive random-walk Metropolis, a Gibbs sampler for
the latent-exponential asymmetric Laplace model, and convergence diagnostics.

Both samplers run a batch of independent problems (for example the folds of
a rolling window or the replicates of a simulation) with several chains
each, vectorised over the leading ``(problem, chain)`` axes.  Every chain
owns its own random stream seeded from ``(problem seed, chain index)``, so a
chain's output does not depend on which other problems share its batch.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import priors as pr
from .transforms import ParamLayout, ParamTransform, TransformKind

__all__ = [
    "ChainConfig",
    "PosteriorDraws",
    "SamplerError",
    "InitializationError",
    "run_chains",
    "sample_batch",
    "diagnostics",
    "split_rhat",
    "effective_sample_size",
    "gibbs_ald",
    "gibbs_ald_batch",
    "latent_v_logpdf",
    "sample_latent_v",
    "slice_sample",
    "latent_to_ald",
    "ald_to_latent",
    "default_latent_priors",
]


class SamplerError(RuntimeError):
    """The sampler could not initialise or produced invalid values."""


class InitializationError(SamplerError):
    pass


@dataclass(frozen=True)
class ChainConfig:
    n_chains: int = 2
    burn_in: int = 5000
    draws: int = 10000
    seed: int = 0
    #: length of the componentwise adaptation stage; default half the burn-in
    adapt_window: Optional[int] = None
    target_acceptance: float = 0.3
    init_retries: int = 100
    #: nan evaluations tolerated before the run is aborted
    nonfinite_budget: int = 1000

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if self.burn_in < 0 or self.draws < 1:
            raise ValueError("need burn_in >= 0 and draws >= 1")
        if not 0 < self.target_acceptance < 1:
            raise ValueError("target_acceptance must lie in (0, 1)")
        if self.adapt_window is not None and not 0 <= self.adapt_window <= self.burn_in:
            raise ValueError("adapt_window must lie in [0, burn_in]")

    @property
    def componentwise_iters(self) -> int:
        return self.burn_in // 2 if self.adapt_window is None else self.adapt_window

    @classmethod
    def simulation(cls, seed=0, **kw):
        """Two chains, 5000 burn-in, 10000 kept per chain."""
        return cls(n_chains=2, burn_in=5000, draws=10000, seed=seed, **kw)

    @classmethod
    def data(cls, seed=0, **kw):
        """Four chains, 5000 burn-in, 5000 kept per chain (20000 in total)."""
        return cls(n_chains=4, burn_in=5000, draws=5000, seed=seed, **kw)

    @classmethod
    def desk(cls, seed=0, **kw):
        return cls(n_chains=2, burn_in=1000, draws=2000, seed=seed, **kw)


# ---------------------------------------------------------------------------
# diagnostics


def _autocov(x):
    """Autocovariance of each row of ``x`` (chains, draws) via FFT."""
    n = x.shape[-1]
    xc = x - x.mean(axis=-1, keepdims=True)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, n=nfft, axis=-1)
    ac = np.fft.irfft(f * np.conj(f), n=nfft, axis=-1)[..., :n]
    return ac / n


def split_rhat(chains) -> float:
    """Split-chain potential scale reduction; nan for fewer than two chains."""
    chains = np.asarray(chains, dtype=float)
    C, S = chains.shape
    if C < 2 or S < 4:
        return math.nan
    half = S // 2
    parts = np.concatenate([chains[:, :half], chains[:, S - half:]], axis=0)
    n = half
    means = parts.mean(axis=1)
    W = parts.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else math.inf
    var_plus = (n - 1) / n * W + B / n
    return float(math.sqrt(var_plus / W))


def effective_sample_size(chains) -> float:
    """Multi-chain ESS with Geyer's initial positive sequence truncation."""
    chains = np.asarray(chains, dtype=float)
    if chains.ndim == 1:
        chains = chains[None, :]
    C, S = chains.shape
    if S < 4:
        return float(C * S)
    acov = _autocov(chains)
    W = acov[:, 0].mean() * S / (S - 1)
    if W == 0:
        return float(C * S)
    var_plus = W * (S - 1) / S
    if C > 1:
        var_plus += chains.mean(axis=1).var(ddof=1)
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # sum of consecutive pairs, truncated at the first negative pair
    npairs = S // 2
    pairs = rho[: 2 * npairs].reshape(npairs, 2).sum(axis=1)
    neg = np.nonzero(pairs < 0)[0]
    k = neg[0] if neg.size else npairs
    pairs = pairs[:k]
    if pairs.size:
        # monotone sequence estimator
        pairs = np.minimum.accumulate(pairs)
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / math.log10(C * S)) if C * S > 10 else max(tau, 1e-3)
    return float(C * S / tau)


def diagnostics(draws: "PosteriorDraws") -> dict:
    """Per-parameter ``{"rhat", "ess", "mcse"}``; rhat is nan for one chain."""
    out = {}
    for j, name in enumerate(draws.names):
        ch = draws.samples[:, :, j]
        ess = effective_sample_size(ch)
        sd = float(ch.std(ddof=1)) if ch.size > 1 else 0.0
        out[name] = {
            "rhat": split_rhat(ch),
            "ess": ess,
            "mcse": sd / math.sqrt(ess) if ess > 0 else math.nan,
        }
    return out


# ---------------------------------------------------------------------------
# posterior container


@dataclass
class PosteriorDraws:
    """Post-burn-in draws on the constrained scale.

    ``samples`` has shape ``(chains, draws, parameters)``.
    ``acceptance_trace`` holds per-chain acceptance rates over consecutive
    windows of the whole run (burn-in first).
    """

    samples: np.ndarray
    names: list
    acceptance_trace: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    acceptance_rate: np.ndarray = field(default_factory=lambda: np.empty(0))
    _diag: Optional[dict] = field(default=None, repr=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 3 or self.samples.shape[2] != len(self.names):
            raise ValueError("samples must be (chains, draws, len(names))")
        self.names = list(self.names)

    @property
    def n_chains(self):
        return self.samples.shape[0]

    @property
    def n_draws(self):
        return self.samples.shape[1]

    def matrix(self) -> np.ndarray:
        """All chains stacked: ``(chains * draws, parameters)``."""
        return self.samples.reshape(-1, self.samples.shape[2])

    def column(self, name) -> np.ndarray:
        return self.matrix()[:, self.names.index(name)]

    def diagnostics(self) -> dict:
        if self._diag is None:
            self._diag = diagnostics(self)
        return self._diag

    @property
    def rhat(self):
        d = self.diagnostics()
        return np.array([d[n]["rhat"] for n in self.names])

    @property
    def ess(self):
        d = self.diagnostics()
        return np.array([d[n]["ess"] for n in self.names])

    def summary(self) -> list:
        """One dict per parameter: mean, sd, q025, q975, rhat, ess."""
        m = self.matrix()
        diag = self.diagnostics()
        q = np.quantile(m, [0.025, 0.975], axis=0)
        rows = []
        for j, name in enumerate(self.names):
            rows.append({
                "param": name,
                "mean": float(m[:, j].mean()),
                "sd": float(m[:, j].std(ddof=1)) if m.shape[0] > 1 else 0.0,
                "q025": float(q[0, j]),
                "q975": float(q[1, j]),
                "rhat": diag[name]["rhat"],
                "ess": diag[name]["ess"],
            })
        return rows

    def to_csv(self, path):
        """One row per draw; a leading ``chain`` column identifies the chain."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["chain"] + self.names)
            for c in range(self.n_chains):
                for row in self.samples[c]:
                    w.writerow([c] + [format(v, ".17g") for v in row])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            rows = [[float(v) for v in row] for row in r]
        arr = np.array(rows)
        chains = arr[:, 0].astype(int)
        C = chains.max() + 1
        samples = np.stack([arr[chains == c, 1:] for c in range(C)])
        return cls(samples, header[1:])


# ---------------------------------------------------------------------------
# random streams


def _entropy(seed):
    if isinstance(seed, (int, np.integer)):
        return [int(seed)]
    return [int(s) for s in seed]


class _Streams:
    """One generator per (problem, chain)."""

    def __init__(self, seeds, n_chains):
        self.gens = [[np.random.default_rng(np.random.SeedSequence(_entropy(s) + [c]))
                      for c in range(n_chains)] for s in seeds]

    def normal(self, shape):
        return np.array([[g.standard_normal(shape) for g in row] for row in self.gens])

    def uniform(self, shape):
        return np.array([[g.random(shape) for g in row] for row in self.gens])


# ---------------------------------------------------------------------------
# adaptive random-walk Metropolis

_BLOCK = 200
_TRACE_WINDOW = 50


def _rm_gain(i):
    return (i + 1.0) ** -0.6


def _chol_cov(trace, fallback_sd):
    """Cholesky factor of the regularised empirical covariance per chain.

    trace: (P, C, T, d); fallback_sd: (P, C, d)
    """
    P, C, T, d = trace.shape
    if T < 2 * d + 2:
        return fallback_sd[..., :, None] * np.eye(d)
    xc = trace - trace.mean(axis=2, keepdims=True)
    # elementwise reduction keeps each chain independent of batch size
    cov = (xc[..., :, None] * xc[..., None, :]).sum(axis=2) / (T - 1)
    diag = np.diagonal(cov, axis1=-2, axis2=-1)
    floor = np.maximum(1e-3 * diag, 1e-10)
    cov = cov + floor[..., :, None] * np.eye(d)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        sd = np.sqrt(np.maximum(diag, 1e-10))
        return sd[..., :, None] * np.eye(d)


def sample_batch(target: Callable, layout, cfg: ChainConfig, seeds: Sequence,
                 init: Optional[np.ndarray] = None) -> list:
    """Run ``cfg.n_chains`` chains for each of ``len(seeds)`` problems.

    ``target`` maps constrained parameters of shape ``(P, C, d)`` to log
    posterior values ``(P, C)``.  ``layout`` is a :class:`ParamLayout` or a
    single :class:`ParamTransform`.  Without ``init`` the target must provide
    ``sample_init(rng) -> (d,)``; non-finite starting points are redrawn up to
    ``cfg.init_retries`` times.

    Returns one :class:`PosteriorDraws` per problem.
    """
    if isinstance(layout, ParamTransform):
        layout = ParamLayout([("x", layout)])
    P, C = len(seeds), cfg.n_chains
    dz = layout.free_dim
    streams = _Streams(seeds, C)
    nan_count = 0

    def logp(z):
        nonlocal nan_count
        x, lj = layout.to_constrained(z)
        lp = np.asarray(target(x), dtype=float)
        bad = np.isnan(lp)
        if bad.any():
            nan_count += int(bad.sum())
            if nan_count > cfg.nonfinite_budget:
                raise SamplerError(f"target returned nan {nan_count} times")
            lp = np.where(bad, -np.inf, lp)
        # +inf is treated like an invalid evaluation
        lp = np.where(np.isposinf(lp), -np.inf, lp)
        return lp + lj

    # -- initial values
    if init is not None:
        x0 = np.broadcast_to(np.asarray(init, dtype=float), (P, C, layout.dim)).copy()
        z = layout.to_unconstrained(x0)
        lp = logp(z)
        if not np.all(np.isfinite(lp)):
            raise InitializationError("target is not finite at the supplied initial values")
    else:
        if not hasattr(target, "sample_init"):
            raise InitializationError("no init given and target has no sample_init")
        x0 = np.array([[target.sample_init(g) for g in row] for row in streams.gens])
        z = layout.to_unconstrained(x0)
        lp = logp(z)
        for _ in range(cfg.init_retries):
            bad = ~np.isfinite(lp)
            if not bad.any():
                break
            for p, c in zip(*np.nonzero(bad)):
                x0[p, c] = target.sample_init(streams.gens[p][c])
            z = layout.to_unconstrained(x0)
            lp = logp(z)
        if not np.all(np.isfinite(lp)):
            raise InitializationError(
                f"no finite starting point after {cfg.init_retries} prior draws")

    A = cfg.componentwise_iters
    B = cfg.burn_in - A
    S = cfg.draws
    total = cfg.burn_in + S
    acc_hist = np.zeros((P, C, total))
    log_scale = np.full((P, C, dz), math.log(0.5))
    target_acc = cfg.target_acceptance

    # -- stage A: componentwise with per-coordinate Robbins-Monro scales
    trace_a = np.empty((P, C, A, dz))
    for b0 in range(0, A, _BLOCK):
        nb = min(_BLOCK, A - b0)
        eps = streams.normal((nb, dz))
        logu = np.log(streams.uniform((nb, dz)))
        for k in range(nb):
            i = b0 + k
            gain = _rm_gain(i)
            acc_i = np.zeros((P, C))
            for j in range(dz):
                prop = z.copy()
                prop[..., j] += np.exp(log_scale[..., j]) * eps[:, :, k, j]
                lp_prop = logp(prop)
                acc = logu[:, :, k, j] < lp_prop - lp
                z = np.where(acc[..., None], prop, z)
                lp = np.where(acc, lp_prop, lp)
                log_scale[..., j] += gain * (acc - target_acc)
                acc_i += acc
            acc_hist[..., i] = acc_i / dz
            trace_a[:, :, i] = z

    # -- stage B: joint proposal from the empirical covariance
    fallback = np.exp(log_scale)
    hist = trace_a[:, :, A // 2:]
    chol = _chol_cov(hist, fallback)
    log_lam = np.full((P, C), math.log(2.38 / math.sqrt(dz)))
    trace_b = np.empty((P, C, B, dz))
    refresh = B // 2
    for b0 in range(0, B, _BLOCK):
        nb = min(_BLOCK, B - b0)
        eps = streams.normal((nb, dz))
        logu = np.log(streams.uniform((nb,)))
        for k in range(nb):
            i = b0 + k
            if i == refresh and refresh > 0:
                hist = np.concatenate([trace_a[:, :, A // 2:], trace_b[:, :, :i]], axis=2)
                chol = _chol_cov(hist, fallback)
            step = (chol * eps[:, :, k, None, :]).sum(axis=-1)
            prop = z + np.exp(log_lam)[..., None] * step
            lp_prop = logp(prop)
            acc = logu[:, :, k] < lp_prop - lp
            z = np.where(acc[..., None], prop, z)
            lp = np.where(acc, lp_prop, lp)
            log_lam += _rm_gain(i) * (acc - target_acc)
            acc_hist[..., A + i] = acc
            trace_b[:, :, i] = z

    if B == 0 and A == 0:
        chol = np.exp(log_scale)[..., :, None] * np.eye(dz)
    elif B == 0:
        chol = _chol_cov(trace_a[:, :, A // 2:], fallback)

    # -- sampling with the frozen proposal
    out = np.empty((P, C, S, layout.dim))
    lam = np.exp(log_lam)[..., None]
    for b0 in range(0, S, _BLOCK):
        nb = min(_BLOCK, S - b0)
        eps = streams.normal((nb, dz))
        logu = np.log(streams.uniform((nb,)))
        for k in range(nb):
            step = (chol * eps[:, :, k, None, :]).sum(axis=-1)
            prop = z + lam * step
            lp_prop = logp(prop)
            acc = logu[:, :, k] < lp_prop - lp
            z = np.where(acc[..., None], prop, z)
            lp = np.where(acc, lp_prop, lp)
            acc_hist[..., cfg.burn_in + b0 + k] = acc
            out[:, :, b0 + k] = layout.to_constrained(z)[0]

    nw = max(1, total // _TRACE_WINDOW)
    trace = acc_hist[..., : nw * _TRACE_WINDOW].reshape(P, C, nw, -1).mean(axis=-1)
    post_rate = acc_hist[..., cfg.burn_in:].mean(axis=-1)
    return [PosteriorDraws(out[p], layout.names, trace[p], post_rate[p]) for p in range(P)]


def run_chains(target: Callable, layout, cfg: ChainConfig, init=None) -> PosteriorDraws:
    """Adaptive random-walk Metropolis on a single problem.

    ``target`` receives constrained parameters with leading axes
    ``(1, n_chains)``.
    """
    return sample_batch(target, layout, cfg, [cfg.seed], init)[0]


# ---------------------------------------------------------------------------
# latent-exponential representation of the asymmetric Laplace
#
#   y | v ~ N(mode + beta (1/kappa - kappa) v, 2 beta^2 v),  v ~ Exp(1)
#
# integrates to an asymmetric Laplace with right-tail rate kappa/beta and
# left-tail rate 1/(kappa beta), i.e. tau = kappa^2 / (1 + kappa^2) and
# sigma = kappa beta / (1 + kappa^2) in the tau(1 - tau)/sigma form.


def latent_to_ald(beta, kappa):
    """Map ``(beta, kappa)`` to ``(sigma, tau)``."""
    k2 = np.square(kappa)
    return kappa * beta / (1.0 + k2), k2 / (1.0 + k2)


def ald_to_latent(sigma, tau):
    """Map ``(sigma, tau)`` to ``(beta, kappa)``."""
    return sigma / np.sqrt(tau * (1.0 - tau)), np.sqrt(tau / (1.0 - tau))


def latent_v_logpdf(v, resid, beta, kappa):
    """Unnormalised log full conditional of one latent ``v`` given the
    residual ``resid = y - mode``."""
    v = np.asarray(v, dtype=float)
    d = beta * (1.0 / kappa - kappa)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -0.5 * np.log(v) - (resid - d * v) ** 2 / (4.0 * beta**2 * v) - v
    return np.where(v > 0, out, -np.inf)


def sample_latent_v(resid, beta, kappa, normal, uniform):
    """Draw latent ``v`` from its generalised inverse Gaussian conditional.

    The conditional is ``GIG(1/2, a, b)`` with ``a = (kappa + 1/kappa)^2 / 2``
    and ``b = resid^2 / (2 beta^2)``; ``1/v`` is inverse Gaussian with mean
    ``sqrt(a/b)`` and shape ``a``.  The inverse Gaussian draw uses the
    Michael-Schucany-Haas transform of one standard normal and one uniform,
    written in terms of ``1/mean`` so that ``resid == 0`` stays finite.
    """
    a = 0.5 * (kappa + 1.0 / kappa) ** 2
    inv_mean = np.abs(resid) / (beta * np.sqrt(2.0 * a))
    h = np.square(normal) / (2.0 * a)
    v1 = inv_mean + h + np.sqrt(h * h + 2.0 * h * inv_mean)
    pick_first = uniform * (v1 + inv_mean) <= v1
    with np.errstate(divide="ignore"):
        v2 = inv_mean**2 / v1
    v = np.where(pick_first, v1, v2)
    # v == 0 only when normal == 0 and resid == 0 exactly
    return np.maximum(v, 1e-300)


def slice_sample(logpdf: Callable, x0: float, n: int, rng: np.random.Generator,
                 width: float = 1.0, lower: float = -math.inf) -> np.ndarray:
    """Univariate stepping-out slice sampler (used to validate fast paths)."""
    out = np.empty(n)
    x = float(x0)
    fx = float(logpdf(x))
    for i in range(n):
        level = fx + math.log(rng.random())
        left = x - width * rng.random()
        right = left + width
        while left > lower and logpdf(left) > level:
            left -= width
        left = max(left, lower)
        while logpdf(right) > level:
            right += width
        while True:
            cand = left + (right - left) * rng.random()
            fc = float(logpdf(cand))
            if fc > level:
                x, fx = cand, fc
                break
            if cand < x:
                left = cand
            else:
                right = cand
        out[i] = x
    return out


def _stick(m):
    return ParamTransform(TransformKind.STICK_BREAKING, m)


def default_latent_priors(m, beta_prior="inv_gamma"):
    """Priors of the latent ALD model: Dir(1..1), N(0, 1000), U(0.001, 4) on
    kappa, and InvGamma(2, 2) or Gamma(2, 2) on beta."""
    beta = pr.InvGamma(2.0, 2.0) if beta_prior == "inv_gamma" else pr.Gamma(2.0, 2.0)
    return {
        "w0": pr.Normal(0.0, 1000.0),
        "w": pr.Dirichlet((1.0,) * m),
        "beta": beta,
        "kappa": pr.Uniform(0.001, 4.0),
    }


def gibbs_ald_batch(Y, X, priors: Optional[dict], cfg: ChainConfig, seeds: Sequence) -> list:
    """Data-augmentation sampler for the latent ALD model on a batch.

    ``Y`` is ``(P, n)``, ``X`` is ``(P, n, m)``.  Each sweep draws the latent
    ``v`` exactly, the intercept from its normal conditional, and the simplex
    weights, ``beta`` and ``kappa`` by adaptive Metropolis-within-Gibbs.
    Output parameters are ``w0, w1..wm, beta, kappa``.
    """
    Y = np.asarray(Y, dtype=float)
    X = np.asarray(X, dtype=float)
    P, n = Y.shape
    m = X.shape[-1]
    if len(seeds) != P:
        raise ValueError("need one seed per problem")
    priors = priors or default_latent_priors(m)
    p_w0, p_w, p_beta, p_kappa = priors["w0"], priors["w"], priors["beta"], priors["kappa"]
    if not isinstance(p_w0, pr.Normal):
        raise ValueError("the intercept prior must be Normal for the conjugate update")
    if not isinstance(p_kappa, pr.Uniform) or p_kappa.low < 0:
        raise ValueError("kappa prior must be Uniform on a positive interval")
    C = cfg.n_chains
    streams = _Streams(seeds, C)
    stick = _stick(m)
    kappa_t = ParamTransform(TransformKind.SCALED_LOGIT, 1, p_kappa.low, p_kappa.high)

    Yb = Y[:, None, :]
    Xb = X[:, None, :, :]

    # -- initial state from the priors (beta truncated at a moderate value)
    w0 = np.zeros((P, C))
    z_w = np.zeros((P, C, m - 1))
    beta = np.ones((P, C))
    kappa = np.ones((P, C))
    for p in range(P):
        for c in range(C):
            g = streams.gens[p][c]
            w0[p, c] = g.normal(np.median(Y[p]), 1.0)
            z_w[p, c] = stick.to_unconstrained(p_w.sample(g))
            beta[p, c] = min(float(p_beta.sample(g)), 10.0)
            kappa[p, c] = p_kappa.sample(g)
    w, lj_w = stick.to_constrained(z_w)
    v = np.ones((P, C, n))

    def gauss_ll(resid, beta, kappa, v):
        d = beta * (1.0 / kappa - kappa)
        return (-n * np.log(beta)
                - (np.square(resid - d[..., None] * v) / v).sum(axis=-1) / (4.0 * beta**2))

    def fitted(w):
        return (Xb * w[..., None, :]).sum(axis=-1)

    ls_w = np.full((P, C, m - 1), math.log(0.3))
    ls_beta = np.full((P, C), math.log(0.2))
    ls_kappa = np.full((P, C), math.log(0.5))
    target_acc = cfg.target_acceptance
    total = cfg.burn_in + cfg.draws
    out = np.empty((P, C, cfg.draws, m + 3))
    acc_hist = np.zeros((P, C, total))
    nrow = n + 1 + (m - 1) + 2
    nuni = n + (m - 1) + 2
    var0 = p_w0.var

    for b0 in range(0, total, _BLOCK):
        nb = min(_BLOCK, total - b0)
        eps = streams.normal((nb, nrow))
        uni = streams.uniform((nb, nuni))
        for k in range(nb):
            it = b0 + k
            adapt = it < cfg.burn_in
            gain = _rm_gain(it)
            e = eps[:, :, k]
            u = uni[:, :, k]

            # latent v
            fit = fitted(w)
            resid = Yb - w0[..., None] - fit
            v = sample_latent_v(resid, beta[..., None], kappa[..., None], e[..., :n], u[..., :n])

            # intercept, conjugate normal
            d = beta * (1.0 / kappa - kappa)
            target_w0 = Yb - fit - d[..., None] * v
            prec_t = 1.0 / (2.0 * beta[..., None] ** 2 * v)
            prec = prec_t.sum(axis=-1) + 1.0 / var0
            mean = ((prec_t * target_w0).sum(axis=-1) + p_w0.mean_ / var0) / prec
            w0 = mean + e[..., n] / np.sqrt(prec)

            # simplex weights, componentwise on the stick-breaking scale
            base = Yb - w0[..., None]
            cur = gauss_ll(base - fit, beta, kappa, v) + p_w.logpdf(w) + lj_w
            n_acc = np.zeros((P, C))
            for j in range(m - 1):
                zp = z_w.copy()
                zp[..., j] += np.exp(ls_w[..., j]) * e[..., n + 1 + j]
                wp, ljp = stick.to_constrained(zp)
                new = gauss_ll(base - fitted(wp), beta, kappa, v) + p_w.logpdf(wp) + ljp
                acc = np.log(u[..., n + j]) < new - cur
                z_w = np.where(acc[..., None], zp, z_w)
                w = np.where(acc[..., None], wp, w)
                lj_w = np.where(acc, ljp, lj_w)
                cur = np.where(acc, new, cur)
                n_acc += acc
                if adapt:
                    ls_w[..., j] += gain * (acc - target_acc)
            resid = base - fitted(w)

            # beta on the log scale
            lb = np.log(beta)
            bp = np.exp(lb + np.exp(ls_beta) * e[..., n + m])
            cur = gauss_ll(resid, beta, kappa, v) + p_beta.logpdf(beta) + lb
            new = gauss_ll(resid, bp, kappa, v) + p_beta.logpdf(bp) + np.log(bp)
            acc = np.log(u[..., n + m - 1]) < new - cur
            beta = np.where(acc, bp, beta)
            n_acc += acc
            if adapt:
                ls_beta += gain * (acc - target_acc)

            # kappa on the scaled-logit scale
            zk = kappa_t.to_unconstrained(kappa[..., None])
            zkp = zk + np.exp(ls_kappa)[..., None] * e[..., n + m + 1, None]
            kp, ljp = kappa_t.to_constrained(zkp)
            _, ljc = kappa_t.to_constrained(zk)
            kp = kp[..., 0]
            cur = gauss_ll(resid, beta, kappa, v) + p_kappa.logpdf(kappa) + ljc
            new = gauss_ll(resid, beta, kp, v) + p_kappa.logpdf(kp) + ljp
            acc = np.log(u[..., n + m]) < new - cur
            kappa = np.where(acc, kp, kappa)
            n_acc += acc
            if adapt:
                ls_kappa += gain * (acc - target_acc)

            acc_hist[..., it] = n_acc / (m + 1)
            if not adapt:
                s = it - cfg.burn_in
                out[:, :, s, 0] = w0
                out[:, :, s, 1:m + 1] = w
                out[:, :, s, m + 1] = beta
                out[:, :, s, m + 2] = kappa

    if not np.all(np.isfinite(out)):
        raise SamplerError("Gibbs sampler produced non-finite draws")
    names = ["w0"] + [f"w{j + 1}" for j in range(m)] + ["beta", "kappa"]
    nw = max(1, total // _TRACE_WINDOW)
    trace = acc_hist[..., : nw * _TRACE_WINDOW].reshape(P, C, nw, -1).mean(axis=-1)
    post_rate = acc_hist[..., cfg.burn_in:].mean(axis=-1)
    return [PosteriorDraws(out[p], names, trace[p], post_rate[p]) for p in range(P)]


def gibbs_ald(y, X, priors: Optional[dict] = None, cfg: Optional[ChainConfig] = None) -> PosteriorDraws:
    """Gibbs sampler for one complete-case dataset; see :func:`gibbs_ald_batch`."""
    cfg = cfg or ChainConfig.simulation()
    return gibbs_ald_batch(np.asarray(y)[None], np.asarray(X)[None], priors, cfg, [cfg.seed])[0]
