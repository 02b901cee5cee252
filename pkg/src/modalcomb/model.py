"""Bayesian modal-regression models for forecast combination.

The response is ``y_t = w0 + omega . x_t + e_t`` where ``omega`` lies on the
probability simplex and ``e_t`` has mode zero under one of four error
families:

``ald``         asymmetric Laplace ``(sigma, tau)``
``an``          asymmetric normal ``(sigma, tau)``
``rg``          reverse Gumbel ``(beta)``
``ald_latent``  asymmetric Laplace in the ``(beta, kappa)`` coordinates of the
                latent-exponential representation
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtri

from . import priors as pr
from .mcmc import ChainConfig, PosteriorDraws, latent_to_ald, sample_batch
from .splitdist import DomainError, ald_logpdf, an_logpdf, rg_logpdf
from .transforms import ParamLayout, ParamTransform, TransformKind

__all__ = [
    "FAMILIES",
    "PRIOR_SETS",
    "LikelihoodError",
    "CombinationParams",
    "ModelSpec",
    "TrainingWindow",
    "PredictiveResult",
    "predict_mode",
    "discount_weights",
    "likelihood_weights",
    "residual_logpdf",
    "residual_quantile",
    "log_likelihood",
    "log_prior",
    "log_posterior",
    "BatchTarget",
    "fit",
    "fit_batch",
    "posterior_predictive",
    "prior_set",
]

FAMILIES = ("ald", "an", "rg", "ald_latent")
PRIOR_SETS = ("data-defaults", "sim-defaults")
KAPPA_BOUNDS = (0.001, 4.0)


class LikelihoodError(ValueError):
    """A likelihood term was not finite; ``t`` is the offending index."""

    def __init__(self, msg, t=None):
        super().__init__(msg)
        self.t = t


def scale_name(family: str) -> str:
    return "beta" if family in ("rg", "ald_latent") else "sigma"


def asym_name(family: str) -> Optional[str]:
    return {"ald": "tau", "an": "tau", "ald_latent": "kappa", "rg": None}[family]


def _check_family(family):
    if family not in FAMILIES:
        raise ValueError(f"unknown error family {family!r}; expected one of {FAMILIES}")


def prior_set(name: str, family: str, m: int) -> dict:
    """Named prior sets keyed by parameter block (``w0``, ``w``, scale, asymmetry).

    ``data-defaults``: Dir(1), N(0, 1), Half-Cauchy(0, 1), Beta(2, 2).
    ``sim-defaults``: Dir(1), N(0, 1000), InvGamma(2, 2), Beta(1, 1).
    The latent family always uses U(0.001, 4) for ``kappa``.
    """
    _check_family(family)
    if name == "data-defaults":
        p = {"w0": pr.Normal(0.0, 1.0), "w": pr.Dirichlet((1.0,) * m),
             "scale": pr.HalfCauchy(0.0, 1.0), "tau": pr.Beta(2.0, 2.0)}
    elif name == "sim-defaults":
        p = {"w0": pr.Normal(0.0, 1000.0), "w": pr.Dirichlet((1.0,) * m),
             "scale": pr.InvGamma(2.0, 2.0), "tau": pr.Beta(1.0, 1.0)}
    else:
        raise ValueError(f"unknown prior set {name!r}; expected one of {PRIOR_SETS}")
    out = {"w0": p["w0"], "w": p["w"], scale_name(family): p["scale"]}
    a = asym_name(family)
    if a == "tau":
        out["tau"] = p["tau"]
    elif a == "kappa":
        out["kappa"] = pr.Uniform(*KAPPA_BOUNDS)
    return out


@dataclass(frozen=True)
class CombinationParams:
    """Intercept, simplex weights, scale and (optional) asymmetry."""

    w0: float
    weights: np.ndarray
    scale: float
    asymmetry: Optional[float] = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1 or w.size < 1:
            raise DomainError("weights must be a non-empty vector")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("weights must be non-negative and sum to one")
        if not (math.isfinite(self.w0)):
            raise DomainError("w0 must be finite")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise DomainError(f"scale must be positive, got {self.scale!r}")
        if self.asymmetry is not None and not (self.asymmetry > 0 and math.isfinite(self.asymmetry)):
            raise DomainError(f"asymmetry must be positive, got {self.asymmetry!r}")

    @property
    def m(self):
        return self.weights.size

    def as_vector(self) -> np.ndarray:
        tail = [self.scale] if self.asymmetry is None else [self.scale, self.asymmetry]
        return np.concatenate([[self.w0], self.weights, tail])

    @classmethod
    def from_vector(cls, v, family: str):
        v = np.asarray(v, dtype=float)
        m = v.size - (2 if family == "rg" else 3)
        asym = None if family == "rg" else float(v[m + 2])
        return cls(float(v[0]), v[1:m + 1], float(v[m + 1]), asym)


@dataclass
class ModelSpec:
    """Error family, priors and exponential discounting.

    ``priors`` maps block names (``w0``, ``w``, ``sigma``/``beta``,
    ``tau``/``kappa``) to :class:`~modalcomb.priors.PriorSpec`; missing
    blocks are taken from ``prior_set_name``.  ``discount_mode`` selects the
    power-likelihood exponents: ``"scaled"`` uses ``n p_t`` (unit weights at
    ``discount = 0``), ``"raw"`` uses ``p_t``.
    """

    family: str = "ald"
    priors: Optional[dict] = None
    discount: float = 0.0
    discount_mode: str = "scaled"
    prior_set_name: str = "data-defaults"
    point_estimate: str = "mean"

    def __post_init__(self):
        _check_family(self.family)
        if not (self.discount >= 0 and math.isfinite(self.discount)):
            raise ValueError(f"discount must be >= 0, got {self.discount!r}")
        if self.discount_mode not in ("scaled", "raw"):
            raise ValueError("discount_mode must be 'scaled' or 'raw'")
        if self.point_estimate not in ("mean", "median"):
            raise ValueError("point_estimate must be 'mean' or 'median'")
        if self.prior_set_name not in PRIOR_SETS:
            raise ValueError(f"unknown prior set {self.prior_set_name!r}")

    @property
    def scale_name(self):
        return scale_name(self.family)

    @property
    def asym_name(self):
        return asym_name(self.family)

    def resolved_priors(self, m: int) -> dict:
        out = prior_set(self.prior_set_name, self.family, m)
        if self.priors:
            unknown = set(self.priors) - set(out)
            if unknown:
                raise ValueError(f"unknown prior blocks for {self.family}: {sorted(unknown)}")
            out.update(self.priors)
        if out["w"].dim != m:
            raise ValueError(f"weight prior has dimension {out['w'].dim}, data has {m} forecasters")
        return out

    def layout(self, m: int) -> ParamLayout:
        blocks = [("w0", ParamTransform(TransformKind.IDENTITY)),
                  ("w", ParamTransform(TransformKind.STICK_BREAKING, m)),
                  (self.scale_name, ParamTransform(TransformKind.LOG))]
        if self.asym_name == "tau":
            blocks.append(("tau", ParamTransform(TransformKind.LOGIT)))
        elif self.asym_name == "kappa":
            blocks.append(("kappa", ParamTransform(TransformKind.SCALED_LOGIT, 1, *KAPPA_BOUNDS)))
        return ParamLayout(blocks)


@dataclass
class TrainingWindow:
    y: np.ndarray
    X: np.ndarray
    fold: int = 0

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        if self.y.ndim != 1 or self.X.ndim != 2 or self.X.shape[0] != self.y.size:
            raise ValueError("need y of length L and X of shape (L, m)")
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.X))):
            raise ValueError("training window has missing or non-finite entries")
        if self.y.size < self.X.shape[1] + 2:
            raise ValueError(f"window length {self.y.size} is below m + 2 = {self.X.shape[1] + 2}")

    @property
    def L(self):
        return self.y.size

    @property
    def m(self):
        return self.X.shape[1]


# ---------------------------------------------------------------------------
# building blocks


def predict_mode(theta: CombinationParams, x_row) -> float:
    x_row = np.asarray(x_row, dtype=float)
    if x_row.shape != theta.weights.shape:
        raise ValueError(f"x_row has shape {x_row.shape}, expected {theta.weights.shape}")
    return float(theta.w0 + (theta.weights * x_row).sum())


def discount_weights(lam: float, L: int) -> np.ndarray:
    """``p_t = exp(-lam (L - t)) / sum_s exp(-lam (L - s))`` for ``t = 1..L``."""
    if lam < 0:
        raise ValueError("discount rate must be >= 0")
    if L < 1:
        raise ValueError("L must be >= 1")
    logits = -lam * (L - np.arange(1, L + 1))
    w = np.exp(logits - logits.max())
    return w / w.sum()


def likelihood_weights(spec: ModelSpec, L: int) -> np.ndarray:
    if spec.discount == 0:
        return np.ones(L) if spec.discount_mode == "scaled" else np.full(L, 1.0 / L)
    p = discount_weights(spec.discount, L)
    return L * p if spec.discount_mode == "scaled" else p


def residual_logpdf(family, resid, scale, asym=None):
    """Vectorised log density of a mode-zero residual (no domain checks)."""
    if family == "ald":
        return ald_logpdf(resid, 0.0, scale, asym)
    if family == "an":
        return an_logpdf(resid, 0.0, scale, asym)
    if family == "rg":
        return rg_logpdf(resid, 0.0, scale)
    sigma, tau = latent_to_ald(scale, asym)
    return ald_logpdf(resid, 0.0, sigma, tau)


def residual_quantile(family, u, scale, asym=None):
    """Vectorised quantile of a mode-zero residual (used for predictive draws)."""
    u = np.asarray(u, dtype=float)
    if family == "ald_latent":
        scale, asym = latent_to_ald(scale, asym)
        family = "ald"
    if family == "ald":
        tau = asym
        left = scale / (1.0 - tau) * np.log(np.minimum(u, tau) / tau)
        right = -scale / tau * np.log((1.0 - np.maximum(u, tau)) / (1.0 - tau))
        return np.where(u <= tau, left, right)
    if family == "an":
        st, s1t = np.sqrt(asym), np.sqrt(1.0 - asym)
        tp = st / (st + s1t)
        sp = scale / (math.sqrt(2.0) * (st + s1t))
        left = sp / (1.0 - tp) * ndtri(np.minimum(u, tp) / (2.0 * tp))
        right = sp / tp * ndtri((1.0 + np.maximum(u, tp) - 2.0 * tp) / (2.0 - 2.0 * tp))
        return np.where(u <= tp, left, right)
    return scale * np.log(-np.log1p(-u))


def _theta_parts(spec, theta):
    if isinstance(theta, CombinationParams):
        return theta.w0, theta.weights, theta.scale, theta.asymmetry
    v = np.asarray(theta, dtype=float)
    m = v.size - (2 if spec.family == "rg" else 3)
    asym = None if spec.family == "rg" else v[m + 2]
    return v[0], v[1:m + 1], v[m + 1], asym


def log_likelihood(spec: ModelSpec, theta, window: TrainingWindow, strict: bool = True) -> float:
    """Power log-likelihood ``sum_t weight_t log f(y_t - mode_t)``.

    With ``strict`` a non-finite term raises :class:`LikelihoodError` naming
    the first offending index; otherwise ``-inf`` is returned.
    """
    w0, w, scale, asym = _theta_parts(spec, theta)
    if w.size != window.m:
        raise ValueError(f"theta has {w.size} weights, window has {window.m} forecasters")
    resid = window.y - w0 - (window.X * w).sum(axis=1)
    with np.errstate(all="ignore"):
        terms = residual_logpdf(spec.family, resid, scale, asym)
    bad = ~np.isfinite(terms)
    if bad.any():
        if strict:
            t = int(np.nonzero(bad)[0][0])
            raise LikelihoodError(f"non-finite likelihood term at t={t} (residual {resid[t]!r})", t)
        return -math.inf
    return float((likelihood_weights(spec, window.L) * terms).sum())


def _in_support(spec, w0, w, scale, asym):
    if not (np.isfinite(w0) and scale > 0 and np.isfinite(scale)):
        return False
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        return False
    if spec.asym_name == "tau":
        return 0 < asym < 1
    if spec.asym_name == "kappa":
        return KAPPA_BOUNDS[0] < asym < KAPPA_BOUNDS[1]
    return True


def log_prior(spec: ModelSpec, theta, m: Optional[int] = None) -> float:
    w0, w, scale, asym = _theta_parts(spec, theta)
    p = spec.resolved_priors(m or w.size)
    out = float(p["w0"].logpdf(w0)) + float(p["w"].logpdf(w)) + float(p[spec.scale_name].logpdf(scale))
    if spec.asym_name:
        out += float(p[spec.asym_name].logpdf(asym))
    return out


def log_posterior(spec: ModelSpec, theta, window: TrainingWindow) -> float:
    """Log-likelihood plus log prior; ``-inf`` off the support."""
    w0, w, scale, asym = _theta_parts(spec, theta)
    if not _in_support(spec, w0, w, scale, asym):
        return -math.inf
    lp = log_prior(spec, theta, window.m)
    if not math.isfinite(lp):
        return -math.inf
    return log_likelihood(spec, theta, window, strict=False) + lp


# ---------------------------------------------------------------------------
# batched sampling target


class BatchTarget:
    """Log posterior for a batch of windows sharing one model and length.

    ``Y`` is ``(P, L)``, ``X`` is ``(P, L, m)``; calling with constrained
    parameters of shape ``(P, C, d)`` returns ``(P, C)``.
    """

    def __init__(self, spec: ModelSpec, Y, X):
        self.spec = spec
        self.Y = np.asarray(Y, dtype=float)
        self.X = np.asarray(X, dtype=float)
        P, L, m = self.X.shape
        self.m = m
        self.layout = spec.layout(m)
        self.priors = spec.resolved_priors(m)
        self.lw = likelihood_weights(spec, L)
        self._Yb = self.Y[:, None, :]
        self._Xb = self.X[:, None, :, :]

    def __call__(self, x):
        m = self.m
        w0 = x[..., 0]
        w = x[..., 1:m + 1]
        scale = x[..., m + 1]
        asym = x[..., m + 2] if self.spec.asym_name else None
        mode = w0[..., None] + (self._Xb * w[..., None, :]).sum(axis=-1)
        resid = self._Yb - mode
        with np.errstate(all="ignore"):
            terms = residual_logpdf(
                self.spec.family, resid, scale[..., None],
                None if asym is None else asym[..., None])
            ll = (self.lw * terms).sum(axis=-1)
        p = self.priors
        lp = p["w0"].logpdf(w0) + p["w"].logpdf(w) + p[self.spec.scale_name].logpdf(scale)
        if asym is not None:
            lp = lp + p[self.spec.asym_name].logpdf(asym)
        return ll + lp

    def sample_init(self, rng):
        """One prior draw; Half-Cauchy scales truncated at the 0.99 quantile."""
        p = self.priors
        parts = [np.atleast_1d(p["w0"].sample(rng)), p["w"].sample(rng)]
        sp = p[self.spec.scale_name]
        if isinstance(sp, pr.HalfCauchy):
            parts.append(np.atleast_1d(sp.quantile(0.99 * rng.random())))
        else:
            parts.append(np.atleast_1d(sp.sample(rng)))
        if self.spec.asym_name:
            parts.append(np.atleast_1d(p[self.spec.asym_name].sample(rng)))
        x = np.concatenate(parts).astype(float)
        # keep strictly inside open supports so the transforms are defined
        w = np.clip(x[1:self.m + 1], 1e-12, None)
        x[1:self.m + 1] = w / w.sum()
        x[self.m + 1] = max(x[self.m + 1], 1e-12)
        if self.spec.asym_name == "tau":
            x[-1] = min(max(x[-1], 1e-9), 1 - 1e-9)
        return x


def fit_batch(spec: ModelSpec, Y, X, cfg: ChainConfig, seeds: Sequence) -> list:
    """Run the adaptive Metropolis sampler on ``P`` windows at once."""
    target = BatchTarget(spec, Y, X)
    return sample_batch(target, target.layout, cfg, seeds)


def fit(spec: ModelSpec, window: TrainingWindow, cfg: ChainConfig) -> PosteriorDraws:
    return fit_batch(spec, window.y[None], window.X[None], cfg, [cfg.seed])[0]


# ---------------------------------------------------------------------------
# posterior predictive


@dataclass
class PredictiveResult:
    samples: np.ndarray
    modes: np.ndarray
    point: float
    point_median: float = field(default=math.nan)


def _draw_blocks(spec, draws: PosteriorDraws, m):
    M = draws.matrix()
    if M.shape[1] != (m + 2 if spec.family == "rg" else m + 3):
        raise ValueError(f"draws have {M.shape[1]} columns, incompatible with m = {m}")
    asym = M[:, m + 2] if spec.asym_name else None
    return M[:, 0], M[:, 1:m + 1], M[:, m + 1], asym


def posterior_predictive(spec: ModelSpec, draws: PosteriorDraws, x_next, rng: np.random.Generator) -> PredictiveResult:
    """One predictive draw per posterior draw at ``x_next``.

    ``point`` is the posterior mean (or median, per ``spec.point_estimate``)
    of the conditional mode ``w0 + omega . x_next``.
    """
    x_next = np.asarray(x_next, dtype=float)
    if draws.n_draws * draws.n_chains == 0:
        raise ValueError("no posterior draws")
    w0, w, scale, asym = _draw_blocks(spec, draws, x_next.size)
    modes = w0 + (w * x_next).sum(axis=1)
    u = rng.random(modes.size)
    # keep u away from 0 and 1 so every family has a finite quantile
    u = np.clip(u, 1e-16, 1 - 1e-16)
    samples = modes + residual_quantile(spec.family, u, scale, asym)
    mean, med = float(modes.mean()), float(np.median(modes))
    return PredictiveResult(samples, modes, mean if spec.point_estimate == "mean" else med, med)
