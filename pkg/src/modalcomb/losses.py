"""Asymmetric loss functions and their likelihood counterparts.

For a fixed asymmetry the negative log-likelihood of each error family
differs from a scaled loss sum by a term that does not depend on the
combination parameters, so both share the same minimiser:

=====  ==========================  =============================  ==================
family loss                        scaling of the loss sum         constant gap
=====  ==========================  =============================  ==================
ald    lin-lin (pinball)           ``1 / sigma``                   ``-n log(tau (1-tau) / sigma)``
an     asymmetric quadratic        ``1 / sigma**2``                ``-n log C(tau)``
rg     linex with ``tau = 1/beta`` ``1``                           ``n log(beta) + n``
=====  ==========================  =============================  ==================
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .splitdist import DomainError, ald_logpdf, an_logpdf, rg_logpdf

__all__ = ["LossKind", "LossSpec", "loss", "loss_sum", "nll_loss_gap", "negative_log_likelihood"]


class LossKind(str, enum.Enum):
    LIN_LIN = "lin_lin"
    ASYMMETRIC_QUADRATIC = "asymmetric_quadratic"
    LINEX = "linex"


@dataclass(frozen=True)
class LossSpec:
    kind: LossKind
    tau: float

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        if self.kind is LossKind.LINEX:
            if not self.tau > 0:
                raise DomainError(f"linex asymmetry must be > 0, got {self.tau!r}")
        elif not 0 < self.tau < 1:
            raise DomainError(f"{self.kind.value} asymmetry must lie in (0, 1), got {self.tau!r}")


def loss(spec: LossSpec, eps):
    """Evaluate the loss elementwise.  ``eps == 0`` takes the ``eps >= 0`` branch."""
    eps = np.asarray(eps, dtype=float)
    tau = spec.tau
    if spec.kind is LossKind.LIN_LIN:
        return np.where(eps >= 0, tau, 1.0 - tau) * np.abs(eps)
    if spec.kind is LossKind.ASYMMETRIC_QUADRATIC:
        return np.where(eps >= 0, tau, 1.0 - tau) * eps * eps
    # expm1 keeps the small-|eps| regime accurate
    return np.expm1(tau * eps) - tau * eps


def loss_sum(spec: LossSpec, eps) -> float:
    return float(np.sum(loss(spec, eps)))


def _residuals(y, X, w0, weights):
    return np.asarray(y, dtype=float) - (w0 + np.asarray(X, dtype=float) @ np.asarray(weights, dtype=float))


def negative_log_likelihood(family: str, y, X, w0, weights, scale, tau=None) -> float:
    e = _residuals(y, X, w0, weights)
    if family == "ald":
        return -float(np.sum(ald_logpdf(e, 0.0, scale, tau)))
    if family == "an":
        return -float(np.sum(an_logpdf(e, 0.0, scale, tau)))
    if family == "rg":
        return -float(np.sum(rg_logpdf(e, 0.0, scale)))
    raise ValueError(f"unknown family {family!r}")


def nll_loss_gap(family: str, y, X, w0, weights, scale, tau=None) -> float:
    """Negative log-likelihood minus the matching scaled loss sum.

    The result depends on ``scale``, ``tau`` and ``n`` only, never on
    ``(w0, weights)``.
    """
    e = _residuals(y, X, w0, weights)
    nll = negative_log_likelihood(family, y, X, w0, weights, scale, tau)
    if family == "ald":
        return nll - loss_sum(LossSpec(LossKind.LIN_LIN, tau), e) / scale
    if family == "an":
        return nll - loss_sum(LossSpec(LossKind.ASYMMETRIC_QUADRATIC, tau), e) / scale**2
    return nll - loss_sum(LossSpec(LossKind.LINEX, 1.0 / scale), e)
