"""Prior distributions used by the combination models.

Every prior exposes ``logpdf(x)`` (vectorised over leading axes, ``-inf``
outside the support) and ``sample(rng, size)``.  Parametrisations follow the
usual textbook conventions: ``Normal`` takes a variance, ``InvGamma`` a
shape and scale, ``Gamma`` a shape and rate, ``Exponential`` a rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "PriorSpec",
    "Normal",
    "Dirichlet",
    "HalfCauchy",
    "Beta",
    "InvGamma",
    "Gamma",
    "Uniform",
    "Exponential",
    "log_prior",
    "sample_prior",
    "prior_from_dict",
    "prior_to_dict",
    "PRIOR_TYPES",
]


def _positive(**kw):
    for name, v in kw.items():
        if not (np.isfinite(v) and v > 0):
            raise ValueError(f"{name} must be a positive finite number, got {v!r}")


class PriorSpec:
    """Base class; subclasses are frozen dataclasses."""

    #: number of trailing axes consumed by one draw (0 scalar, 1 vector)
    event_ndim = 0

    def logpdf(self, x):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def mean(self):
        raise NotImplementedError

    def variance(self):
        raise NotImplementedError


@dataclass(frozen=True)
class Normal(PriorSpec):
    mean_: float = 0.0
    var: float = 1.0

    def __post_init__(self):
        _positive(var=self.var)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return -0.5 * math.log(2 * math.pi * self.var) - (x - self.mean_) ** 2 / (2 * self.var)

    def sample(self, rng, size=None):
        return rng.normal(self.mean_, math.sqrt(self.var), size)

    def mean(self):
        return self.mean_

    def variance(self):
        return self.var


@dataclass(frozen=True)
class Dirichlet(PriorSpec):
    alpha: tuple = (1.0, 1.0)
    event_ndim = 1

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if len(self.alpha) < 2:
            raise ValueError("Dirichlet needs dimension >= 2")
        for a in self.alpha:
            _positive(alpha=a)

    @property
    def dim(self):
        return len(self.alpha)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"Dirichlet of dimension {self.dim} got a vector of length {x.shape[-1]}")
        a = np.asarray(self.alpha)
        norm = special.gammaln(a.sum()) - special.gammaln(a).sum()
        on_simplex = np.all(x >= 0, axis=-1) & (np.abs(x.sum(axis=-1) - 1.0) < 1e-9)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(a == 1.0, 0.0, (a - 1.0) * np.log(np.where(x > 0, x, 1.0)))
            # zero coordinates with alpha != 1 give 0 or inf density
            edge = np.any((x <= 0) & (a != 1.0), axis=-1)
        out = norm + terms.sum(axis=-1)
        out = np.where(edge, np.where(np.any((x <= 0) & (a < 1.0), axis=-1), np.inf, -np.inf), out)
        return np.where(on_simplex, out, -np.inf)

    def sample(self, rng, size=None):
        return rng.dirichlet(self.alpha, size)

    def mean(self):
        a = np.asarray(self.alpha)
        return a / a.sum()

    def variance(self):
        a = np.asarray(self.alpha)
        a0 = a.sum()
        return a * (a0 - a) / (a0**2 * (a0 + 1))


@dataclass(frozen=True)
class HalfCauchy(PriorSpec):
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        _positive(scale=self.scale)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x - self.loc) / self.scale
        out = math.log(2.0 / (math.pi * self.scale)) - np.log1p(z * z)
        return np.where(x >= self.loc, out, -np.inf)

    def quantile(self, q):
        return self.loc + self.scale * np.tan(0.5 * math.pi * np.asarray(q, dtype=float))

    def sample(self, rng, size=None):
        return self.quantile(rng.random(size))


@dataclass(frozen=True)
class Beta(PriorSpec):
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        _positive(a=self.a, b=self.b)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x > 0) & (x < 1)
        xs = np.where(inside, x, 0.5)
        out = ((self.a - 1) * np.log(xs) + (self.b - 1) * np.log1p(-xs)
               - special.betaln(self.a, self.b))
        return np.where(inside, out, -np.inf)

    def sample(self, rng, size=None):
        return rng.beta(self.a, self.b, size)

    def mean(self):
        return self.a / (self.a + self.b)

    def variance(self):
        s = self.a + self.b
        return self.a * self.b / (s * s * (s + 1))


@dataclass(frozen=True)
class InvGamma(PriorSpec):
    shape: float = 2.0
    scale: float = 2.0

    def __post_init__(self):
        _positive(shape=self.shape, scale=self.scale)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = x > 0
        xs = np.where(inside, x, 1.0)
        out = (self.shape * math.log(self.scale) - special.gammaln(self.shape)
               - (self.shape + 1) * np.log(xs) - self.scale / xs)
        return np.where(inside, out, -np.inf)

    def sample(self, rng, size=None):
        return self.scale / rng.gamma(self.shape, 1.0, size)

    def mean(self):
        return self.scale / (self.shape - 1) if self.shape > 1 else math.inf

    def variance(self):
        if self.shape <= 2:
            return math.inf
        return self.scale**2 / ((self.shape - 1) ** 2 * (self.shape - 2))


@dataclass(frozen=True)
class Gamma(PriorSpec):
    shape: float = 2.0
    rate: float = 2.0

    def __post_init__(self):
        _positive(shape=self.shape, rate=self.rate)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = x > 0
        xs = np.where(inside, x, 1.0)
        out = (self.shape * math.log(self.rate) - special.gammaln(self.shape)
               + (self.shape - 1) * np.log(xs) - self.rate * xs)
        return np.where(inside, out, -np.inf)

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, 1.0 / self.rate, size)

    def mean(self):
        return self.shape / self.rate

    def variance(self):
        return self.shape / self.rate**2


@dataclass(frozen=True)
class Uniform(PriorSpec):
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"Uniform needs low < high, got ({self.low}, {self.high})")

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x > self.low) & (x < self.high)
        return np.where(inside, -math.log(self.high - self.low), -np.inf)

    def sample(self, rng, size=None):
        return rng.uniform(self.low, self.high, size)

    def mean(self):
        return 0.5 * (self.low + self.high)

    def variance(self):
        return (self.high - self.low) ** 2 / 12.0


@dataclass(frozen=True)
class Exponential(PriorSpec):
    rate: float = 1.0

    def __post_init__(self):
        _positive(rate=self.rate)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, math.log(self.rate) - self.rate * x, -np.inf)

    def sample(self, rng, size=None):
        return rng.exponential(1.0 / self.rate, size)

    def mean(self):
        return 1.0 / self.rate

    def variance(self):
        return 1.0 / self.rate**2


def log_prior(spec: PriorSpec, x):
    return spec.logpdf(x)


def sample_prior(spec: PriorSpec, rng: np.random.Generator, size=None):
    return spec.sample(rng, size)


PRIOR_TYPES = {
    "normal": (Normal, ("mean", "var")),
    "dirichlet": (Dirichlet, ("alpha",)),
    "half_cauchy": (HalfCauchy, ("loc", "scale")),
    "beta": (Beta, ("a", "b")),
    "inv_gamma": (InvGamma, ("shape", "scale")),
    "gamma": (Gamma, ("shape", "rate")),
    "uniform": (Uniform, ("low", "high")),
    "exponential": (Exponential, ("rate",)),
}


def prior_from_dict(d: dict) -> PriorSpec:
    """Build a prior from ``{"dist": "beta", "a": 2, "b": 2}``-style mappings."""
    d = dict(d)
    try:
        kind = d.pop("dist")
    except KeyError:
        raise ValueError("prior needs a 'dist' key") from None
    if kind not in PRIOR_TYPES:
        raise ValueError(f"unknown prior distribution {kind!r}")
    cls, keys = PRIOR_TYPES[kind]
    unknown = set(d) - set(keys)
    if unknown:
        raise ValueError(f"unknown keys for {kind} prior: {sorted(unknown)}")
    args = [d[k] for k in keys if k in d]
    if len(args) != len(keys):
        raise ValueError(f"{kind} prior needs keys {list(keys)}")
    if kind == "dirichlet":
        return Dirichlet(tuple(args[0]))
    return cls(*[float(a) for a in args])


def prior_to_dict(p: PriorSpec) -> dict:
    for kind, (cls, keys) in PRIOR_TYPES.items():
        if type(p) is cls:
            vals = [getattr(p, f.name) for f in p.__dataclass_fields__.values()]
            return {"dist": kind, **dict(zip(keys, [list(v) if isinstance(v, tuple) else v for v in vals]))}
    raise TypeError(f"not a known prior: {p!r}")
