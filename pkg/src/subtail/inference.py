"""Confidence intervals for the tail index and extreme-quantile normal ranges."""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.special import ndtri

from .errors import ConfigError, DegeneracyError, TauTooLargeError
from .estimators import AmlEstimate
from .tailmodel import TailModel


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float

    def __contains__(self, value):
        return self.lower <= value <= self.upper


@dataclass(frozen=True)
class SideFit:
    """Provenance of one fitted side of a normal range."""

    threshold: float
    alpha_u_hat: float
    gamma_hat: float
    shift: float
    bound_shifted: float


@dataclass(frozen=True)
class NormalRange:
    upper_bound: float | None
    lower_bound: float | None
    tau: float
    shift: float = 0.0
    lower_shift: float | None = None
    upper_fit: SideFit | None = None
    lower_fit: SideFit | None = None

    def __post_init__(self):
        if self.upper_bound is None and self.lower_bound is None:
            raise ConfigError("a normal range needs at least one bound")

    @property
    def upper(self):
        return math.inf if self.upper_bound is None else self.upper_bound

    @property
    def lower(self):
        return -math.inf if self.lower_bound is None else self.lower_bound


def confidence_interval(est: AmlEstimate, alpha: float = 0.05) -> ConfidenceInterval:
    """``gamma_hat -+ z_{1-alpha/2} * gamma_hat / sqrt(n_*^u)``."""
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha!r}")
    if est.total_exceedances < 1:
        raise DegeneracyError("confidence interval needs at least one exceedance")
    if not est.gamma_hat > 0:
        raise DegeneracyError(f"confidence interval undefined for gamma_hat={est.gamma_hat!r}")
    z = float(ndtri(1.0 - alpha / 2.0))
    half = z * est.gamma_hat / math.sqrt(est.total_exceedances)
    return ConfidenceInterval(est.gamma_hat - half, est.gamma_hat + half, 1.0 - alpha)


def bound_from_params(u: float, alpha_u: float, gamma: float, tau: float) -> float:
    """Extrapolated quantile ``u * (alpha_u / tau)**gamma``; requires ``tau < alpha_u``."""
    if not 0.0 < tau:
        raise ConfigError(f"tau must be positive, got {tau!r}")
    if not tau < alpha_u:
        raise TauTooLargeError(
            f"tau={tau!r} is not below the exceedance rate alpha_u={alpha_u!r}; "
            "lower tau or the threshold level"
        )
    return u * (alpha_u / tau) ** gamma


def quantile_bound(est: AmlEstimate, tau: float) -> float:
    return bound_from_params(est.threshold, est.alpha_u_hat, est.gamma_hat, tau)


def _side(est, tau, shift):
    q = quantile_bound(est, tau)
    return SideFit(est.threshold, est.alpha_u_hat, est.gamma_hat, shift, q)


def normal_range(upper_fit: AmlEstimate | None, lower_fit: AmlEstimate | None, tau: float,
                 shift: float = 0.0, lower_shift: float | None = None) -> NormalRange:
    """Two- or one-sided range in the original data scale.

    ``upper_fit`` is estimated on ``X + shift``; ``lower_fit`` on
    ``-X + lower_shift`` (``lower_shift`` defaults to ``shift``).
    """
    lshift = shift if lower_shift is None else lower_shift
    up = lo = None
    upper = lower = None
    if upper_fit is not None:
        up = _side(upper_fit, tau, shift)
        upper = up.bound_shifted - shift
    if lower_fit is not None:
        lo = _side(lower_fit, tau, lshift)
        lower = lshift - lo.bound_shifted
    return NormalRange(upper, lower, tau, shift, lshift if lower_fit is not None else None, up, lo)


def true_tail_prob(model: TailModel, bound: float) -> float:
    """Exact ``P(X > bound)`` under the generating model."""
    return model.tail_prob(bound)
