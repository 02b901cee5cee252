"""Bijections between constrained parameters and an unconstrained space.

``to_constrained`` returns the log absolute Jacobian determinant of the map
``z -> x`` so that ``log p(x(z)) + log_jacobian`` is the density of ``z``.
All transforms act on the trailing axis and broadcast over leading axes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit, logit

from .splitdist import DomainError

__all__ = [
    "TransformKind",
    "ParamTransform",
    "ParamLayout",
    "to_unconstrained",
    "to_constrained",
]


class TransformKind(str, enum.Enum):
    IDENTITY = "identity"
    LOG = "log"
    LOGIT = "logit"
    SCALED_LOGIT = "scaled_logit"
    STICK_BREAKING = "stick_breaking"


@dataclass(frozen=True)
class ParamTransform:
    """One parameter block.

    ``dim`` is the constrained dimension; for ``stick_breaking`` the
    unconstrained dimension is ``dim - 1``.  ``low``/``high`` bound the
    ``scaled_logit`` interval.
    """

    kind: TransformKind
    dim: int = 1
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", TransformKind(self.kind))
        if self.kind is TransformKind.STICK_BREAKING and self.dim < 2:
            raise ValueError("stick_breaking needs dim >= 2")
        if self.kind is TransformKind.SCALED_LOGIT and not self.low < self.high:
            raise ValueError("scaled_logit needs low < high")

    @property
    def free_dim(self) -> int:
        return self.dim - 1 if self.kind is TransformKind.STICK_BREAKING else self.dim

    def to_unconstrained(self, x):
        x = np.asarray(x, dtype=float)
        k = self.kind
        if k is TransformKind.IDENTITY:
            return x.copy()
        if k is TransformKind.LOG:
            if not np.all(x > 0):
                raise DomainError("log transform needs x > 0")
            return np.log(x)
        if k is TransformKind.LOGIT:
            if not np.all((x > 0) & (x < 1)):
                raise DomainError("logit transform needs x in (0, 1)")
            return logit(x)
        if k is TransformKind.SCALED_LOGIT:
            if not np.all((x > self.low) & (x < self.high)):
                raise DomainError(f"scaled_logit transform needs x in ({self.low}, {self.high})")
            return logit((x - self.low) / (self.high - self.low))
        return _stick_inverse(x)

    def to_constrained(self, z):
        z = np.asarray(z, dtype=float)
        k = self.kind
        if k is TransformKind.IDENTITY:
            return z.copy(), np.zeros(z.shape[:-1])
        if k is TransformKind.LOG:
            return np.exp(z), z.sum(axis=-1)
        if k is TransformKind.LOGIT:
            return expit(z), (log_expit(z) + log_expit(-z)).sum(axis=-1)
        if k is TransformKind.SCALED_LOGIT:
            w = self.high - self.low
            x = self.low + w * expit(z)
            return x, (math.log(w) + log_expit(z) + log_expit(-z)).sum(axis=-1)
        return _stick_forward(z)


def _stick_offsets(K):
    # centres z = 0 on the uniform point of the simplex
    return np.log(1.0 / (K - np.arange(1, K)))


def _stick_forward(z):
    K = z.shape[-1] + 1
    a = z + _stick_offsets(K)
    log_s = log_expit(a)
    log_1ms = log_expit(-a)
    # log of the remaining stick before each break
    log_rem = np.concatenate(
        [np.zeros(z.shape[:-1] + (1,)), np.cumsum(log_1ms, axis=-1)], axis=-1)
    x = np.empty(z.shape[:-1] + (K,))
    x[..., :-1] = np.exp(log_rem[..., :-1] + log_s)
    x[..., -1] = np.exp(log_rem[..., -1])
    logjac = (log_s + log_1ms + log_rem[..., :-1]).sum(axis=-1)
    return x, logjac


def _stick_inverse(x):
    if not np.all(x > 0):
        raise DomainError("stick_breaking needs strictly positive weights")
    if not np.all(np.abs(x.sum(axis=-1) - 1.0) < 1e-9):
        raise DomainError("stick_breaking needs weights summing to one")
    K = x.shape[-1]
    # remaining stick before break k, computed from the tail for accuracy
    tail = np.cumsum(x[..., ::-1], axis=-1)[..., ::-1]
    s = x[..., :-1] / tail[..., :-1]
    return logit(s) - _stick_offsets(K)


def to_unconstrained(t: ParamTransform, x):
    return t.to_unconstrained(x)


def to_constrained(t: ParamTransform, z):
    return t.to_constrained(z)


class ParamLayout:
    """Named sequence of parameter blocks packed into flat vectors.

    ``names`` lists one label per constrained coordinate.
    """

    def __init__(self, blocks):
        self.blocks = [(name, t) for name, t in blocks]
        self.names = []
        self._x_slices, self._z_slices = [], []
        xi = zi = 0
        for name, t in self.blocks:
            if t.dim == 1:
                self.names.append(name)
            else:
                self.names.extend(f"{name}{j + 1}" for j in range(t.dim))
            self._x_slices.append(slice(xi, xi + t.dim))
            self._z_slices.append(slice(zi, zi + t.free_dim))
            xi += t.dim
            zi += t.free_dim
        self.dim = xi
        self.free_dim = zi

    def to_constrained(self, z):
        z = np.asarray(z, dtype=float)
        x = np.empty(z.shape[:-1] + (self.dim,))
        logjac = np.zeros(z.shape[:-1])
        for (_, t), xs, zs in zip(self.blocks, self._x_slices, self._z_slices):
            xb, lj = t.to_constrained(z[..., zs])
            x[..., xs] = xb
            logjac = logjac + lj
        return x, logjac

    def to_unconstrained(self, x):
        x = np.asarray(x, dtype=float)
        z = np.empty(x.shape[:-1] + (self.free_dim,))
        for (_, t), xs, zs in zip(self.blocks, self._x_slices, self._z_slices):
            z[..., zs] = t.to_unconstrained(x[..., xs])
        return z

    def slice_of(self, name):
        for (n, _), xs in zip(self.blocks, self._x_slices):
            if n == name:
                return xs
        raise KeyError(name)

    def __repr__(self):
        return f"ParamLayout({[(n, t.kind.value, t.dim) for n, t in self.blocks]})"
