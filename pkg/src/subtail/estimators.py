"""Peaks-over-threshold estimators of a positive extreme value index.

Per-subsample estimators (``mle_subsample``, ``moment_subsample``,
``pwm_subsample``) are averaged over K subsamples by ``averaged_estimate``,
giving the AML, AMO and APWM estimators. Only values strictly greater than
the threshold enter any estimator.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    ConfigError,
    DegenerateMomentsError,
    DegeneratePwmError,
    DegeneracyError,
    NoExceedancesError,
)

METHODS = ("aml", "amo", "apwm")
_METHOD_LABEL = {"aml": "MLE", "amo": "MOMENT", "apwm": "PWM"}
DEFAULT_REAL_DATA_EXPONENT = 0.6


@dataclass(frozen=True)
class SubsampleEstimate:
    gamma_hat: float
    exceedance_count: int
    threshold: float
    method: str


@dataclass(frozen=True)
class AmlEstimate:
    gamma_hat: float
    per_subsample: tuple[SubsampleEstimate, ...]
    total_exceedances: int
    alpha_u_hat: float
    n: int
    K: int
    threshold: float
    method: str = "aml"
    threshold_mode: str = "global"


@dataclass(frozen=True)
class DesignParams:
    n: int
    K: int
    threshold_level: float
    h_coefficient: float
    C_K: float | None = None
    threshold: float | None = None
    extras: dict = field(default_factory=dict)


def threshold_level(n: int, gamma: float, delta: float, h: float | None = None) -> float:
    """Quantile level ``1 - n**(-1/(1 + h*gamma))`` with ``h = 0.8*delta`` by default."""
    if n < 2:
        raise ConfigError("threshold_level needs n >= 2")
    if h is None:
        h = 0.8 * delta
    return 1.0 - n ** (-1.0 / (1.0 + h * gamma))


def subsample_count(n: int, C_K: float, gamma: float, delta: float) -> int:
    """``floor(n**(C_K*delta/(1/gamma + delta)))``, at least 1.

    Plain floating-point evaluation is intentional: it reproduces the
    published design tables, including rows where the exact power is an
    integer (n=1000, C_K=0.5 for t(1) gives 9).
    """
    if n < 2 or not 0.0 < C_K < 1.0:
        raise ConfigError("subsample_count needs n >= 2 and 0 < C_K < 1")
    exponent = C_K * delta / (1.0 / gamma + delta)
    return max(1, math.floor(n ** exponent))


def real_data_level(n: int, exponent: float = DEFAULT_REAL_DATA_EXPONENT) -> float:
    """Default level ``1 - n**(-3/5)`` used when the true tail is unknown."""
    return 1.0 - n ** (-exponent)


def empirical_quantile(values: Sequence[float] | np.ndarray, level: float) -> float:
    """Order statistic ``ceil(level*m)`` (1-based) of ``values``, no interpolation."""
    x = np.asarray(values, dtype=float).ravel()
    m = x.size
    if m == 0:
        raise ConfigError("empirical_quantile of an empty sequence")
    if not 0.0 < level < 1.0:
        raise ConfigError(f"level must lie in (0, 1), got {level!r}")
    # absorb representation error such as 0.7*10 = 7.000000000000001
    rank = math.ceil(level * m - 1e-9)
    rank = min(max(rank, 1), m)
    return float(np.partition(x, rank - 1)[rank - 1])


def _log_ratios(exc, u):
    with np.errstate(over="ignore"):
        r = exc / u
    out = np.log(r)
    bad = ~np.isfinite(r)
    if bad.any():
        out[bad] = np.log(exc[bad]) - math.log(u)
    return out


def _exceedances(values, u):
    if not u > 0:
        raise ConfigError(f"threshold must be positive, got {u!r}; shift the data if needed")
    x = np.asarray(values, dtype=float).ravel()
    return x[x > u]


def mle_subsample(values, u: float) -> SubsampleEstimate:
    """Closed-form POT maximum likelihood: mean of ``log(X/u)`` over ``X > u``."""
    exc = _exceedances(values, u)
    if exc.size == 0:
        raise NoExceedancesError(u)
    gamma = float(np.mean(_log_ratios(exc, u)))
    if gamma == 0.0:
        warnings.warn("all exceedances are equal; the confidence interval collapses", RuntimeWarning,
                      stacklevel=2)
    return SubsampleEstimate(gamma, int(exc.size), float(u), "MLE")


def moment_gamma(M1: float, M2: float) -> float:
    """Moment estimator from the first two log-excess moments."""
    if not (M2 > 0 and M1 * M1 < M2):
        raise DegenerateMomentsError(f"moment estimator undefined for M1={M1!r}, M2={M2!r}")
    return M1 + 1.0 - 0.5 / (1.0 - M1 * M1 / M2)


def moment_subsample(values, u: float) -> SubsampleEstimate:
    exc = _exceedances(values, u)
    if exc.size == 0:
        raise NoExceedancesError(u)
    if exc.size < 2:
        raise DegenerateMomentsError("moment estimator needs at least 2 exceedances")
    logs = _log_ratios(exc, u)
    M1 = float(np.mean(logs))
    M2 = float(np.mean(logs * logs))
    if np.all(logs == logs[0]):
        raise DegenerateMomentsError("all exceedances are equal")
    return SubsampleEstimate(moment_gamma(M1, M2), int(exc.size), float(u), "MOMENT")


def pwm_gamma(b0: float, b1: float) -> float:
    """Probability-weighted-moment estimator ``2 - b0/(b0 - 2*b1)``."""
    if not (b0 > 2.0 * b1 and b1 > 0):
        raise DegeneratePwmError(f"PWM estimator undefined for b0={b0!r}, b1={b1!r}")
    return 2.0 - b0 / (b0 - 2.0 * b1)


def pwm_moments(excesses) -> tuple[float, float]:
    """``b0`` and ``b1`` from threshold excesses, weights ``(m-i)/(m-1)``."""
    y = np.sort(np.asarray(excesses, dtype=float))
    m = y.size
    if m < 2:
        raise DegeneratePwmError("PWM estimator needs at least 2 exceedances")
    i = np.arange(1, m + 1)
    b0 = float(np.mean(y))
    b1 = float(np.sum(y * (m - i)) / (m * (m - 1)))
    return b0, b1


def pwm_subsample(values, u: float) -> SubsampleEstimate:
    exc = _exceedances(values, u)
    if exc.size == 0:
        raise NoExceedancesError(u)
    b0, b1 = pwm_moments(exc - u)
    return SubsampleEstimate(pwm_gamma(b0, b1), int(exc.size), float(u), "PWM")


_KERNELS = {"aml": mle_subsample, "amo": moment_subsample, "apwm": pwm_subsample}


def subsample_estimator(method: str):
    try:
        return _KERNELS[method]
    except KeyError:
        raise ConfigError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}") from None


def _rows(subsamples):
    arr = getattr(subsamples, "subsamples", subsamples)
    arr = np.asarray(arr, dtype=float)
    if arr.ndim != 2:
        raise ConfigError("subsamples must be a (K, n) array or a SubsampleSet")
    return arr


def averaged_estimate(subsamples, u, method: str = "aml") -> AmlEstimate:
    """Average a per-subsample estimator over K subsamples.

    ``u`` is either one threshold shared by all subsamples or a sequence of
    K per-subsample thresholds; in the latter case the reported threshold is
    their average, which is the single ``u`` used for quantile bounds.
    """
    rows = _rows(subsamples)
    K, n = rows.shape
    kernel = subsample_estimator(method)
    per_u = np.broadcast_to(np.asarray(u, dtype=float), (K,))
    ests = []
    for k in range(K):
        try:
            ests.append(kernel(rows[k], float(per_u[k])))
        except NoExceedancesError as exc:
            raise NoExceedancesError(exc.threshold, subsample=k) from None
        except DegeneracyError as exc:
            raise type(exc)(f"subsample {k}: {exc}") from None
    gamma = math.fsum(e.gamma_hat for e in ests) / K
    total = sum(e.exceedance_count for e in ests)
    mode = "global" if np.ndim(u) == 0 else "per-subsample"
    return AmlEstimate(
        gamma_hat=gamma,
        per_subsample=tuple(ests),
        total_exceedances=total,
        alpha_u_hat=total / (n * K),
        n=n,
        K=K,
        threshold=float(np.mean(per_u)),
        method=method,
        threshold_mode=mode,
    )


def per_subsample_thresholds(subsamples, level: float) -> np.ndarray:
    """Empirical ``level`` quantile of each subsample."""
    return np.array([empirical_quantile(row, level) for row in _rows(subsamples)])
