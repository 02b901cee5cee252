"""Split (two-piece) distributions with the location parameter at the mode.

A split distribution glues two differently scaled halves of a symmetric
kernel density ``g`` together at ``mu``::

    f(y) = 2 tau (1 - tau) / sigma * g((1 - tau) (y - mu) / sigma),  y <= mu
    f(y) = 2 tau (1 - tau) / sigma * g(tau (y - mu) / sigma),        y >  mu

With the Laplace kernel ``g(u) = exp(-|u|) / 2`` this is exactly the
asymmetric Laplace density used by the models (``tau (1 - tau) / sigma`` in
front).  The asymmetric normal used by the models has its own
parametrisation; :meth:`AsymmetricNormal.as_split` converts it.

All densities are evaluated in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "DomainError",
    "SymmetricKernel",
    "LaplaceKernel",
    "GaussianKernel",
    "LAPLACE",
    "GAUSSIAN",
    "SplitDistribution",
    "AsymmetricLaplace",
    "AsymmetricNormal",
    "ReverseGumbel",
    "RG_OVERFLOW",
    "split_pdf",
    "split_cdf",
    "split_quantile",
    "split_moment",
    "split_sample",
    "ald_pdf",
    "ald_logpdf",
    "ald_cdf",
    "ald_quantile",
    "ald_sample",
    "an_pdf",
    "an_logpdf",
    "an_cdf",
    "an_quantile",
    "an_sample",
    "an_log_normalizer",
    "rg_pdf",
    "rg_logpdf",
    "rg_cdf",
    "rg_quantile",
    "rg_sample",
    "rg_overflow",
]

#: standardized reverse-Gumbel residuals above this value overflow ``exp``
RG_OVERFLOW = 700.0


class DomainError(ValueError):
    """A distribution parameter or argument lies outside its domain."""


def _check_scale(sigma, name="sigma"):
    if not np.all(np.asarray(sigma) > 0):
        raise DomainError(f"{name} must be > 0, got {sigma!r}")


def _check_tau(tau):
    t = np.asarray(tau)
    if not np.all((t > 0) & (t < 1)):
        raise DomainError(f"tau must lie in (0, 1), got {tau!r}")


def _check_prob(q):
    q = np.asarray(q, dtype=float)
    if not np.all((q > 0) & (q < 1)):
        raise DomainError("quantile level must lie in (0, 1)")
    return q


# ---------------------------------------------------------------------------
# symmetric kernels


class SymmetricKernel:
    """A symmetric unimodal density ``g`` on the real line with mode 0."""

    name = "kernel"

    def log_density(self, u):
        raise NotImplementedError

    def density(self, u):
        return np.exp(self.log_density(u))

    def cdf(self, u):
        raise NotImplementedError

    def quantile(self, q):
        raise NotImplementedError

    def partial_moment(self, k: int) -> float:
        """Return ``c_k``, the integral of ``u**k g(u)`` over ``[0, inf)``."""
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class LaplaceKernel(SymmetricKernel):
    """``g(u) = exp(-|u|) / 2``."""

    name = "laplace"

    def log_density(self, u):
        return -math.log(2.0) - np.abs(u)

    def cdf(self, u):
        u = np.asarray(u, dtype=float)
        # both branches evaluated on the side where exp cannot overflow
        return np.where(u <= 0, 0.5 * np.exp(np.minimum(u, 0.0)),
                        1.0 - 0.5 * np.exp(-np.maximum(u, 0.0)))

    def quantile(self, q):
        q = np.asarray(q, dtype=float)
        lo = np.log(2.0 * np.minimum(q, 0.5))
        hi = -np.log(2.0 * (1.0 - np.maximum(q, 0.5)))
        return np.where(q <= 0.5, lo, hi)

    def partial_moment(self, k):
        return 0.5 * math.factorial(k)


class GaussianKernel(SymmetricKernel):
    """Standard normal kernel."""

    name = "gaussian"

    def log_density(self, u):
        return -0.5 * math.log(2.0 * math.pi) - 0.5 * np.square(u)

    def cdf(self, u):
        return special.ndtr(u)

    def quantile(self, q):
        return special.ndtri(q)

    def partial_moment(self, k):
        return 2.0 ** (k / 2.0) * math.gamma((k + 1) / 2.0) / (2.0 * math.sqrt(math.pi))


LAPLACE = LaplaceKernel()
GAUSSIAN = GaussianKernel()


# ---------------------------------------------------------------------------
# generic split family


@dataclass(frozen=True)
class SplitDistribution:
    """Generic split distribution with mode ``mu``, scale ``sigma`` and
    asymmetry ``tau``.

    ``cdf(mu) == tau`` for every kernel, so ``tau`` is the probability mass
    to the left of the mode.
    """

    mu: float
    sigma: float
    tau: float
    kernel: SymmetricKernel = LAPLACE

    def __post_init__(self):
        _check_scale(self.sigma)
        _check_tau(self.tau)

    def logpdf(self, y):
        eps = np.asarray(y, dtype=float) - self.mu
        t = self.tau
        u = np.where(eps <= 0, (1.0 - t) * eps, t * eps) / self.sigma
        return math.log(2.0 * t * (1.0 - t) / self.sigma) + self.kernel.log_density(u)

    def pdf(self, y):
        return np.exp(self.logpdf(y))

    def cdf(self, y):
        eps = np.asarray(y, dtype=float) - self.mu
        t, s, G = self.tau, self.sigma, self.kernel.cdf
        left = 2.0 * t * G((1.0 - t) * np.minimum(eps, 0.0) / s)
        right = t + 2.0 * (1.0 - t) * (G(t * np.maximum(eps, 0.0) / s) - 0.5)
        return np.where(eps <= 0, left, right)

    def quantile(self, q):
        q = _check_prob(q)
        t, s, Ginv = self.tau, self.sigma, self.kernel.quantile
        # clip the inactive branch into (0, 1) so it stays finite
        ql = np.minimum(q / (2.0 * t), 0.5)
        qr = np.maximum((1.0 + q - 2.0 * t) / (2.0 - 2.0 * t), 0.5)
        left = self.mu + s / (1.0 - t) * Ginv(ql)
        right = self.mu + s / t * Ginv(qr)
        return np.where(q <= t, left, right)

    def moment(self, k: int) -> float:
        """Raw moment ``E[(Y - mu)**k]`` for ``k`` in 1..3."""
        if k not in (1, 2, 3):
            raise DomainError(f"moment order must be 1, 2 or 3, got {k!r}")
        t, s = self.tau, self.sigma
        ck = self.kernel.partial_moment(k)
        return (2.0 * ck * s**k / (t**k * (1.0 - t) ** k)
                * ((1.0 - t) ** (k + 1) + (-1) ** k * t ** (k + 1)))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n == 0:
            return np.empty(0)
        u = rng.random(n)
        # rng.random is in [0, 1); 0 has no finite quantile
        u = np.where(u == 0.0, np.nextafter(0.0, 1.0), u)
        return self.quantile(u)


def split_pdf(d: SplitDistribution, y):
    return d.pdf(y)


def split_cdf(d: SplitDistribution, y):
    return d.cdf(y)


def split_quantile(d: SplitDistribution, q):
    return d.quantile(q)


def split_moment(d: SplitDistribution, k: int) -> float:
    return d.moment(k)


def split_sample(d: SplitDistribution, n: int, rng: np.random.Generator):
    return d.sample(n, rng)


# ---------------------------------------------------------------------------
# asymmetric Laplace, model parametrisation


def ald_logpdf(y, mu, sigma, tau):
    """Vectorised log density of the asymmetric Laplace distribution.

    No domain checks: callers on hot paths pass validated parameters and
    out-of-domain values propagate as nan.
    """
    eps = y - mu
    rate = np.where(eps <= 0, tau - 1.0, tau)
    return np.log(tau * (1.0 - tau) / sigma) - rate * eps / sigma


def ald_pdf(y, mu, sigma, tau):
    _check_scale(sigma)
    _check_tau(tau)
    return np.exp(ald_logpdf(np.asarray(y, dtype=float), mu, sigma, tau))


def ald_cdf(y, mu, sigma, tau):
    _check_scale(sigma)
    _check_tau(tau)
    eps = np.asarray(y, dtype=float) - mu
    left = tau * np.exp((1.0 - tau) * np.minimum(eps, 0.0) / sigma)
    right = 1.0 - (1.0 - tau) * np.exp(-tau * np.maximum(eps, 0.0) / sigma)
    return np.where(eps <= 0, left, right)


def ald_quantile(q, mu, sigma, tau):
    _check_scale(sigma)
    _check_tau(tau)
    q = _check_prob(q)
    left = mu + sigma / (1.0 - tau) * np.log(np.minimum(q, tau) / tau)
    right = mu - sigma / tau * np.log((1.0 - np.maximum(q, tau)) / (1.0 - tau))
    return np.where(q <= tau, left, right)


def ald_sample(n, mu, sigma, tau, rng):
    return AsymmetricLaplace(mu, sigma, tau).sample(n, rng)


@dataclass(frozen=True)
class AsymmetricLaplace:
    """Asymmetric Laplace with mode ``mu`` and density
    ``tau (1 - tau) / sigma * exp(-rho_tau(y - mu) / sigma)``."""

    mu: float
    sigma: float
    tau: float

    def __post_init__(self):
        _check_scale(self.sigma)
        _check_tau(self.tau)

    def as_split(self) -> SplitDistribution:
        # identical density: 2 tau (1 - tau) / sigma * g(0) with g(0) = 1/2
        return SplitDistribution(self.mu, self.sigma, self.tau, LAPLACE)

    def logpdf(self, y):
        return ald_logpdf(np.asarray(y, dtype=float), self.mu, self.sigma, self.tau)

    def pdf(self, y):
        return np.exp(self.logpdf(y))

    def cdf(self, y):
        return ald_cdf(y, self.mu, self.sigma, self.tau)

    def quantile(self, q):
        return ald_quantile(q, self.mu, self.sigma, self.tau)

    def moment(self, k):
        return self.as_split().moment(k)

    def sample(self, n, rng):
        if n == 0:
            return np.empty(0)
        u = rng.random(n)
        u = np.where(u == 0.0, np.nextafter(0.0, 1.0), u)
        return self.quantile(u)


# ---------------------------------------------------------------------------
# asymmetric normal, model parametrisation


def an_log_normalizer(sigma, tau):
    """``log C(tau)`` with ``C = 2 sqrt(tau (1-tau)) / (sigma sqrt(pi) (sqrt(tau) + sqrt(1-tau)))``."""
    st, s1t = np.sqrt(tau), np.sqrt(1.0 - tau)
    return (np.log(2.0) + np.log(st) + np.log(s1t) - np.log(sigma)
            - 0.5 * math.log(math.pi) - np.log(st + s1t))


def an_logpdf(y, mu, sigma, tau):
    eps = y - mu
    w = np.where(eps <= 0, 1.0 - tau, tau)
    return an_log_normalizer(sigma, tau) - w * eps * eps / (sigma * sigma)


def _an_split(mu, sigma, tau) -> SplitDistribution:
    st, s1t = math.sqrt(tau), math.sqrt(1.0 - tau)
    tau_s = st / (st + s1t)
    sigma_s = sigma / (math.sqrt(2.0) * (st + s1t))
    return SplitDistribution(mu, sigma_s, tau_s, GAUSSIAN)


def an_pdf(y, mu, sigma, tau):
    _check_scale(sigma)
    _check_tau(tau)
    return np.exp(an_logpdf(np.asarray(y, dtype=float), mu, sigma, tau))


def an_cdf(y, mu, sigma, tau):
    return AsymmetricNormal(mu, sigma, tau).cdf(y)


def an_quantile(q, mu, sigma, tau):
    return AsymmetricNormal(mu, sigma, tau).quantile(q)


def an_sample(n, mu, sigma, tau, rng):
    return AsymmetricNormal(mu, sigma, tau).sample(n, rng)


@dataclass(frozen=True)
class AsymmetricNormal:
    """Asymmetric (split) normal with mode ``mu``.

    Density ``C(tau) exp(-(1 - tau) e**2 / sigma**2)`` left of the mode and
    ``C(tau) exp(-tau e**2 / sigma**2)`` right of it.  Equivalent to the
    generic split family with the Gaussian kernel under
    ``tau' = sqrt(tau) / (sqrt(tau) + sqrt(1 - tau))`` and
    ``sigma' = sigma / (sqrt(2) (sqrt(tau) + sqrt(1 - tau)))``.
    """

    mu: float
    sigma: float
    tau: float

    def __post_init__(self):
        _check_scale(self.sigma)
        _check_tau(self.tau)

    @property
    def normalizer(self) -> float:
        return float(np.exp(an_log_normalizer(self.sigma, self.tau)))

    def as_split(self) -> SplitDistribution:
        return _an_split(self.mu, self.sigma, self.tau)

    def logpdf(self, y):
        return an_logpdf(np.asarray(y, dtype=float), self.mu, self.sigma, self.tau)

    def pdf(self, y):
        return np.exp(self.logpdf(y))

    def cdf(self, y):
        return self.as_split().cdf(y)

    def quantile(self, q):
        return self.as_split().quantile(q)

    def moment(self, k):
        return self.as_split().moment(k)

    def sample(self, n, rng):
        return self.as_split().sample(n, rng)


# ---------------------------------------------------------------------------
# reverse Gumbel


def rg_overflow(y, mu, beta):
    """True where ``(y - mu) / beta`` exceeds :data:`RG_OVERFLOW`."""
    return (np.asarray(y, dtype=float) - mu) / beta > RG_OVERFLOW


def rg_logpdf(y, mu, beta):
    """Log density ``z - exp(z) - log(beta)`` with ``z = (y - mu) / beta``.

    Returns ``-inf`` where ``z`` exceeds :data:`RG_OVERFLOW`.
    """
    z = (y - mu) / beta
    zc = np.minimum(z, RG_OVERFLOW)
    out = zc - np.exp(zc) - np.log(beta)
    return np.where(z > RG_OVERFLOW, -np.inf, out)


def rg_pdf(y, mu, beta):
    _check_scale(beta, "beta")
    return np.exp(rg_logpdf(np.asarray(y, dtype=float), mu, beta))


def rg_cdf(y, mu, beta):
    _check_scale(beta, "beta")
    z = (np.asarray(y, dtype=float) - mu) / beta
    return -np.expm1(-np.exp(np.minimum(z, RG_OVERFLOW)))


def rg_quantile(q, mu, beta):
    _check_scale(beta, "beta")
    q = _check_prob(q)
    return mu + beta * np.log(-np.log1p(-q))


def rg_sample(n, mu, beta, rng):
    return ReverseGumbel(mu, beta).sample(n, rng)


@dataclass(frozen=True)
class ReverseGumbel:
    """Reverse (minimum) Gumbel with mode ``mu`` and scale ``beta``."""

    mu: float
    beta: float

    def __post_init__(self):
        _check_scale(self.beta, "beta")

    def logpdf(self, y):
        return rg_logpdf(np.asarray(y, dtype=float), self.mu, self.beta)

    def pdf(self, y):
        return np.exp(self.logpdf(y))

    def cdf(self, y):
        return rg_cdf(y, self.mu, self.beta)

    def quantile(self, q):
        return rg_quantile(q, self.mu, self.beta)

    def sample(self, n, rng):
        if n == 0:
            return np.empty(0)
        u = rng.random(n)
        u = np.where(u == 0.0, np.nextafter(0.0, 1.0), u)
        return self.quantile(u)
