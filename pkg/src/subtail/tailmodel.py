"""Parametric heavy-tailed laws used as simulation truth.

Each model exposes its exact upper-tail probability, quantile function,
an i.i.d. sampler and the constants of the second-order tail expansion

    P(X > u) = beta * u**(-1/gamma) * (1 + C * u**(-delta) + o(u**(-delta)))

which drive the design formulas in :mod:`subtail.estimators`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.optimize import brentq
from scipy.special import betainc, betaincc

from .errors import ConfigError, DomainError

DEFAULT_PARETO_DELTA = 5.0


@dataclass(frozen=True)
class ModelConstants:
    gamma: float
    beta: float
    delta: float
    c_second_order: float


@dataclass(frozen=True)
class StudentT:
    v: int

    def __post_init__(self):
        if int(self.v) != self.v or self.v < 1:
            raise ConfigError(f"t degrees of freedom must be a positive integer, got {self.v!r}")

    @property
    def name(self):
        return f"t({self.v})"

    def _upper(self, x):
        # P(X > x) for x >= 0, without cancellation in the far tail.
        v = self.v
        if v == 1:
            return math.atan2(1.0, x) / math.pi
        if v == 2:
            s = math.sqrt(2.0 + x * x)
            return 1.0 / (s * (s + x))
        x2 = x * x
        if x2 < v:
            # near the centre: I_z(a, b) = 1 - I_{1-z}(b, a) keeps 1-z exact
            return 0.5 * float(betaincc(0.5, 0.5 * v, x2 / (v + x2)))
        return 0.5 * float(betainc(0.5 * v, 0.5, v / (v + x2)))

    def tail_prob(self, x):
        x = float(x)
        if math.isnan(x):
            raise DomainError("tail_prob of NaN")
        if x >= 0:
            return self._upper(x)
        return 1.0 - self._upper(-x)

    def quantile(self, p):
        _check_prob(p)
        if p == 0.5:
            return 0.0
        if p < 0.5:
            return -self.upper_quantile(p)
        return self.upper_quantile(1.0 - p)

    def upper_quantile(self, tail):
        _check_prob(tail)
        if tail == 0.5:
            return 0.0
        if tail > 0.5:
            return -self.upper_quantile(1.0 - tail)
        c = self.constants()
        x0 = max((c.beta / tail) ** c.gamma, 1e-3)
        lo, hi = x0 / 2.0, x0 * 2.0
        target = math.log(tail)

        def f(x):
            return math.log(self._upper(x)) - target

        while f(lo) < 0:
            lo /= 2.0
            if lo < 1e-300:
                lo = 0.0
                break
        while f(hi) > 0:
            hi *= 2.0
        return brentq(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)

    def sample(self, rng, count):
        return rng.standard_t(self.v, size=count)

    def constants(self, delta_override=None):
        v = self.v
        beta = math.exp(
            math.lgamma((v + 1) / 2) + (v - 1) / 2 * math.log(v)
            - 0.5 * math.log(v * math.pi) - math.lgamma(v / 2)
        )
        return ModelConstants(
            gamma=1.0 / v, beta=beta, delta=2.0, c_second_order=-(v * v * (v + 1)) / (2.0 * (v + 2))
        )


@dataclass(frozen=True)
class Pareto:
    x_m: float
    alpha: float
    delta: float = DEFAULT_PARETO_DELTA

    def __post_init__(self):
        if not (self.x_m > 0 and self.alpha > 0 and self.delta > 0):
            raise ConfigError("pareto requires x_m > 0, alpha > 0 and delta > 0")

    @property
    def name(self):
        return f"pareto({_fmt(self.x_m)},{_fmt(self.alpha)})"

    def tail_prob(self, x):
        x = float(x)
        if not x >= self.x_m:
            raise DomainError(f"{self.name} support is x >= {self.x_m}, got {x}")
        return (x / self.x_m) ** (-self.alpha)

    def quantile(self, p):
        _check_prob(p)
        return self.x_m * (1.0 - p) ** (-1.0 / self.alpha)

    def upper_quantile(self, tail):
        _check_prob(tail)
        return self.x_m * tail ** (-1.0 / self.alpha)

    def sample(self, rng, count):
        # 1 - U lies in (0, 1], so the power is finite.
        return self.x_m * (1.0 - rng.random(count)) ** (-1.0 / self.alpha)

    def constants(self, delta_override=None):
        delta = self.delta if delta_override is None else float(delta_override)
        return ModelConstants(
            gamma=1.0 / self.alpha, beta=self.x_m ** self.alpha, delta=delta, c_second_order=0.0
        )


@dataclass(frozen=True)
class Frechet:
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError("frechet requires alpha > 0")

    @property
    def name(self):
        return f"frechet({_fmt(self.alpha)})"

    def tail_prob(self, x):
        x = float(x)
        if not x > 0:
            raise DomainError(f"{self.name} support is x > 0, got {x}")
        return -math.expm1(-(x ** -self.alpha))

    def quantile(self, p):
        _check_prob(p)
        return (-math.log(p)) ** (-1.0 / self.alpha)

    def upper_quantile(self, tail):
        _check_prob(tail)
        return (-math.log1p(-tail)) ** (-1.0 / self.alpha)

    def sample(self, rng, count):
        e = -np.log(1.0 - rng.random(count))
        with np.errstate(divide="ignore"):
            return e ** (-1.0 / self.alpha)

    def constants(self, delta_override=None):
        return ModelConstants(
            gamma=1.0 / self.alpha, beta=1.0, delta=float(self.alpha), c_second_order=-0.5
        )


TailModel = Union[StudentT, Pareto, Frechet]


def _check_prob(p):
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {p!r}")


def _fmt(x):
    return repr(int(x)) if float(x).is_integer() else repr(float(x))


def tail_prob(model: TailModel, x: float) -> float:
    """Exact P(X > x)."""
    return model.tail_prob(x)


def quantile(model: TailModel, p: float) -> float:
    """The x with F(x) = p."""
    return model.quantile(p)


def upper_quantile(model: TailModel, tail: float) -> float:
    """The x with P(X > x) = tail, without forming 1 - tail."""
    return model.upper_quantile(tail)


def sample(model: TailModel, rng: np.random.Generator, count: int) -> np.ndarray:
    if count < 0:
        raise ConfigError("count must be nonnegative")
    return np.asarray(model.sample(rng, count), dtype=float)


def constants(model: TailModel, delta_override: float | None = None) -> ModelConstants:
    """Tail-expansion constants; ``delta_override`` only affects Pareto."""
    if isinstance(model, Pareto):
        return model.constants(delta_override)
    return model.constants()


_SPEC_RE = re.compile(
    r"^\s*(?P<kind>t|student_t|pareto|frechet)\s*\((?P<args>[^)]*)\)\s*(?:[;,]?\s*(?P<suffix>delta\s*=\s*[^\s]+))?\s*$",
    re.IGNORECASE,
)


def parse_model(spec: str) -> TailModel:
    """Parse ``t(v)``, ``pareto(xm,alpha)`` or ``frechet(alpha)``.

    Pareto also accepts a ``delta=`` setting, either as a third argument
    (``pareto(2,1,delta=5)``) or as a suffix (``pareto(2,1);delta=5``).
    """
    m = _SPEC_RE.match(spec)
    if not m:
        raise ConfigError(f"cannot parse model spec {spec!r}")
    kind = m.group("kind").lower()
    parts = [a.strip() for a in m.group("args").split(",") if a.strip()]
    if m.group("suffix"):
        parts.append(m.group("suffix").replace(" ", ""))
    positional = [a for a in parts if "=" not in a]
    keywords = dict(a.split("=", 1) for a in parts if "=" in a)
    try:
        nums = [float(a) for a in positional]
        kw = {k.strip().lower(): float(v) for k, v in keywords.items()}
    except ValueError as exc:
        raise ConfigError(f"non-numeric argument in model spec {spec!r}") from exc
    if kind in ("t", "student_t"):
        if len(nums) != 1 or kw:
            raise ConfigError(f"t(v) takes exactly one argument: {spec!r}")
        if not nums[0].is_integer():
            raise ConfigError(f"t degrees of freedom must be an integer: {spec!r}")
        return StudentT(int(nums[0]))
    if kind == "pareto":
        if len(nums) != 2 or set(kw) - {"delta"}:
            raise ConfigError(f"pareto(xm,alpha) takes two arguments and optional delta=: {spec!r}")
        return Pareto(nums[0], nums[1], kw.get("delta", DEFAULT_PARETO_DELTA))
    if len(nums) != 1 or kw:
        raise ConfigError(f"frechet(alpha) takes exactly one argument: {spec!r}")
    return Frechet(nums[0])


def model_spec(model: TailModel) -> str:
    """Inverse of :func:`parse_model`."""
    if isinstance(model, Pareto) and model.delta != DEFAULT_PARETO_DELTA:
        return f"{model.name[:-1]},delta={_fmt(model.delta)})"
    return model.name
