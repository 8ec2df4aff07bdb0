"""Monte-Carlo experiments for the averaged tail-index estimators.

An experiment simulates ``N`` values from a :mod:`subtail.tailmodel` law,
optionally plants outliers, draws ``K`` subsamples of size ``n`` and fits
every requested estimator at every requested threshold level. All methods
and levels inside one replication share the simulated data and the
subsample indices. Seeds are derived from ``(master_seed, N, replication)``
only, so results do not depend on worker count and contamination levels
are compared on common random numbers.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any

import numpy as np

from . import tailmodel
from .detect import detection_rate, screen
from .errors import ConfigError, DegeneracyError, SubtailError
from .estimators import (
    METHODS,
    DesignParams,
    averaged_estimate,
    real_data_level,
    subsample_count,
    threshold_level,
)
from .inference import NormalRange, confidence_interval, quantile_bound, true_tail_prob
from .rng import child_generator, child_seed
from .sampler import InMemorySource, SubsamplePlan, draw_subsamples

log = logging.getLogger(__name__)

KINDS = ("table", "compare", "sweep", "detection", "contamination")
SWEEP_LEVELS = tuple(round(0.5 + i / 100, 2) for i in range(50))
DEFAULT_C_O_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
MAX_ABORT_FRACTION = 0.05


@dataclass(frozen=True)
class OutlierSpec:
    C_o: float = 1.0
    multiplier: float = 10.0
    tau_out: float | None = None  # None means 1/N


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    N: int | tuple[int, ...] = 100_000
    R: int = 200
    kind: str = "table"
    C_K: float | None = None
    K: int | None = None
    n: int | None = None
    tau: float = 1e-3
    alpha: float = 0.05
    master_seed: int = 0
    methods: tuple[str, ...] = ("aml",)
    threshold: dict = field(default_factory=lambda: {"rule": "design"})
    outlier: OutlierSpec | None = None
    C_o_grid: tuple[float, ...] = DEFAULT_C_O_GRID
    detect: bool = False
    tau_detect: float | None = None  # None means 1/N
    name: str | None = None
    full: dict | None = None

    def __post_init__(self):
        tailmodel.parse_model(self.model)
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.R < 1:
            raise ConfigError("R must be at least 1")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}")
        if self.C_K is None and self.K is None:
            raise ConfigError("give either C_K (design formula for K) or a fixed K")
        if self.threshold.get("rule") not in ("design", "fixed", "sweep"):
            raise ConfigError("threshold.rule must be design, fixed or sweep")
        for N in self.N_grid:
            if N < 16:
                raise ConfigError("N must be at least 16")

    @property
    def tail_model(self):
        return tailmodel.parse_model(self.model)

    @property
    def N_grid(self) -> tuple[int, ...]:
        return (int(self.N),) if isinstance(self.N, (int, np.integer)) else tuple(int(x) for x in self.N)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "model" not in d:
            raise ConfigError("config needs a model")
        if isinstance(d.get("N"), list):
            d["N"] = tuple(int(float(x)) for x in d["N"])
        elif "N" in d:
            d["N"] = int(float(d["N"]))
        for key in ("methods", "C_o_grid"):
            if key in d:
                d[key] = tuple(d[key])
        if d.get("outlier") is not None:
            d["outlier"] = OutlierSpec(**d["outlier"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["N"] = list(self.N_grid) if not isinstance(self.N, (int, np.integer)) else int(self.N)
        d["methods"] = list(self.methods)
        d["C_o_grid"] = list(self.C_o_grid)
        return d

    def escalated(self) -> "ExperimentConfig":
        """Full-scale variant (``full`` overrides applied)."""
        if not self.full:
            return replace(self, R=max(self.R, 1000), full=None)
        d = self.to_dict()
        d.update(self.full)
        d["full"] = None
        return ExperimentConfig.from_dict(d)


@dataclass(frozen=True)
class FitRecord:
    method: str
    level: float
    u: float
    gamma_hat: float | None = None
    n_star: int | None = None
    ci_lower: float | None = None
    ci_upper: float | None = None
    covered: bool | None = None
    q_hat: float | None = None
    tau_hat: float | None = None
    error: str | None = None

    @property
    def ok(self):
        return self.error is None


@dataclass(frozen=True)
class ReplicationRecord:
    rep: int
    N: int
    injected: int
    contaminated: bool
    zero_contamination_prob: float
    fits: tuple[FitRecord, ...]
    detection_rate: float | None = None
    flagged: int | None = None


@dataclass
class MetricsReport:
    method: str
    level: float
    u: float
    R: int
    failures: int
    mean_total_exceedances: float
    bias: float
    sd: float
    rmse: float
    ecp: float
    ra: float
    detection_rate_mean: float | None = None
    per_replication: list = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("per_replication")
        return d


def _threshold_levels(cfg: ExperimentConfig, n: int, gamma: float, delta: float) -> tuple[float, ...]:
    rule = cfg.threshold.get("rule", "design")
    if rule == "design":
        h = cfg.threshold.get("h")
        return (threshold_level(n, gamma, delta, h),)
    if rule == "fixed":
        level = cfg.threshold.get("level", "auto")
        if level == "auto":
            return (real_data_level(n, cfg.threshold.get("exponent", 0.6)),)
        return (float(level),)
    levels = cfg.threshold.get("levels", "default")
    return SWEEP_LEVELS if levels == "default" else tuple(float(x) for x in levels)


def derive_design(cfg: ExperimentConfig, N: int | None = None) -> DesignParams:
    """Subsample size, subsample count and threshold level(s) for one ``N``."""
    N = cfg.N_grid[0] if N is None else int(N)
    model = cfg.tail_model
    c = tailmodel.constants(model)
    n = cfg.n if cfg.n is not None else math.isqrt(N)
    K = cfg.K if cfg.K is not None else subsample_count(n, cfg.C_K, c.gamma, c.delta)
    levels = _threshold_levels(cfg, n, c.gamma, c.delta)
    thresholds = tuple(model.quantile(lv) for lv in levels)
    h = cfg.threshold.get("h") or 0.8 * c.delta
    return DesignParams(
        n=n, K=K, threshold_level=levels[0], h_coefficient=h, C_K=cfg.C_K, threshold=thresholds[0],
        extras={"N": N, "levels": levels, "thresholds": thresholds, "gamma": c.gamma, "delta": c.delta},
    )


def outlier_probability(N: int, n: int, K: int, C_o: float) -> float:
    """Per-record outlier probability ``C_o / (K n log log N)``."""
    if N < 16:
        raise ConfigError("outlier injection needs N >= 16 so that log log N > 0")
    return C_o / (K * n * math.log(math.log(N)))


def inject_outliers(values: np.ndarray, design: DesignParams, model, C_o: float,
                    rng: np.random.Generator, multiplier: float = 10.0,
                    tau_out: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Replace each record independently, with probability ``C_o/(K n log log N)``,
    by ``multiplier`` times the model's ``1 - tau_out`` quantile (``tau_out = 1/N``).

    Returns the contaminated copy and the sorted replaced indices.
    """
    if not 0.0 <= C_o <= 1.0:
        raise ConfigError("C_o must lie in [0, 1]")
    values = np.array(values, dtype=float)
    N = values.size
    p = outlier_probability(N, design.n, design.K, C_o)
    flags = rng.random(N) < p
    truth = np.flatnonzero(flags)
    if truth.size:
        tau_out = 1.0 / N if tau_out is None else tau_out
        values[truth] = multiplier * model.upper_quantile(tau_out)
    return values, truth


def _fit(sub, model, method, level, u, gamma, cfg):
    try:
        est = averaged_estimate(sub, u, method)
    except (DegeneracyError, ConfigError) as exc:
        return FitRecord(method, level, u, error=f"{type(exc).__name__}: {exc}")
    ci_lo = ci_hi = covered = q = tau_hat = None
    try:
        ci = confidence_interval(est, cfg.alpha)
        ci_lo, ci_hi, covered = ci.lower, ci.upper, bool(ci.lower <= gamma <= ci.upper)
    except DegeneracyError:
        covered = False
    try:
        q = quantile_bound(est, cfg.tau)
        tau_hat = true_tail_prob(model, q)
    except SubtailError:
        pass
    return FitRecord(method, level, u, est.gamma_hat, est.total_exceedances, ci_lo, ci_hi, covered,
                     q, tau_hat)


def run_replication(cfg: ExperimentConfig, design: DesignParams, rep_index: int,
                    C_o: float | None = None) -> ReplicationRecord:
    """Simulate, (optionally) contaminate, subsample and fit one replication."""
    model = cfg.tail_model
    N = design.extras["N"]
    gamma = design.extras["gamma"]
    x = tailmodel.sample(model, child_generator(cfg.master_seed, N, rep_index, 0), N)
    truth = np.empty(0, dtype=np.int64)
    spec = cfg.outlier
    if spec is not None:
        c_o = spec.C_o if C_o is None else C_o
        x, truth = inject_outliers(x, design, model, c_o, child_generator(cfg.master_seed, N, rep_index, 1),
                                   spec.multiplier, spec.tau_out)
    source = InMemorySource(x)
    sub = draw_subsamples(source, SubsamplePlan(design.n, design.K, child_seed(cfg.master_seed, N, rep_index, 2)))
    fits = []
    for level, u in zip(design.extras["levels"], design.extras["thresholds"]):
        for method in cfg.methods:
            fits.append(_fit(sub, model, method, level, u, gamma, cfg))
    d = int(truth.size)
    contaminated = bool(d and np.isin(sub.source_indices, truth).any())
    p_zero = (1.0 - d / N) ** (design.n * design.K)
    pi = flagged = None
    if cfg.detect:
        pi, flagged = _detect(cfg, design, sub, source, truth)
    return ReplicationRecord(rep_index, N, d, contaminated, p_zero, tuple(fits), pi, flagged)


def _detect(cfg, design, sub, source, truth):
    N = design.extras["N"]
    tau_d = 1.0 / N if cfg.tau_detect is None else cfg.tau_detect
    try:
        est = averaged_estimate(sub, design.extras["thresholds"][0], cfg.methods[0])
        bound = quantile_bound(est, tau_d)
    except SubtailError:
        return None, None
    found = screen(source, NormalRange(upper_bound=bound, lower_bound=None, tau=tau_d))
    return detection_rate(found.indices, truth), found.count


def _replicate(args):
    cfg, design, rep, C_o = args
    return run_replication(cfg, design, rep, C_o)


def replicate(cfg: ExperimentConfig, design: DesignParams, C_o: float | None = None,
              jobs: int = 1) -> list[ReplicationRecord]:
    """All ``R`` replications, ordered by replication index."""
    tasks = [(cfg, design, r, C_o) for r in range(cfg.R)]
    if jobs <= 1:
        return [_replicate(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_replicate, tasks, chunksize=max(1, cfg.R // (4 * jobs))))


def _fsum_mean(xs):
    return math.fsum(xs) / len(xs) if xs else math.nan


def metrics(fits: list[FitRecord], gamma: float, tau: float, R: int | None = None,
            detection: list[float] | None = None) -> MetricsReport:
    """Aggregate per-replication fits of one (method, level) cell."""
    R = len(fits) if R is None else R
    ok = [f for f in fits if f.ok]
    g = [f.gamma_hat for f in ok]
    if g:
        mean_g = _fsum_mean(g)
        bias = mean_g - gamma
        sd = math.sqrt(math.fsum((x - mean_g) ** 2 for x in g) / (len(g) - 1)) if len(g) > 1 else 0.0
        rmse = math.sqrt(_fsum_mean([(x - gamma) ** 2 for x in g]))
        ecp = _fsum_mean([1.0 if f.covered else 0.0 for f in ok])
        taus = [f.tau_hat for f in ok if f.tau_hat is not None]
        ra = math.sqrt(_fsum_mean([(t / tau - 1.0) ** 2 for t in taus])) if taus else math.nan
        nstar = _fsum_mean([f.n_star for f in ok])
    else:
        bias = sd = rmse = ecp = ra = nstar = math.nan
    det = [p for p in (detection or []) if p is not None]
    first = fits[0]
    return MetricsReport(
        method=first.method, level=first.level, u=first.u, R=R, failures=len(fits) - len(ok),
        mean_total_exceedances=nstar, bias=bias, sd=sd, rmse=rmse, ecp=ecp, ra=ra,
        detection_rate_mean=_fsum_mean(det) if det else None, per_replication=list(fits),
    )


def _cells(records: list[ReplicationRecord], cfg, gamma, strict=True):
    by_cell: dict[tuple[str, float], list[FitRecord]] = {}
    for rec in records:
        for f in rec.fits:
            by_cell.setdefault((f.method, f.level), []).append(f)
    detection = [r.detection_rate for r in records] if cfg.detect else None
    reports = []
    for (method, level), fits in by_cell.items():
        rep = metrics(fits, gamma, cfg.tau, cfg.R, detection if method == cfg.methods[0] else None)
        if strict and rep.failures > MAX_ABORT_FRACTION * cfg.R:
            sample = next(f.error for f in fits if not f.ok)
            raise DegeneracyError(
                f"{rep.failures}/{cfg.R} replications aborted for {method} at level {level:.4f} "
                f"(first: {sample})"
            )
        if rep.failures:
            log.warning("%s level %.4f: %d of %d replications aborted", method, level, rep.failures, cfg.R)
        reports.append(rep)
    return reports


@dataclass
class Cell:
    labels: dict
    report: MetricsReport


@dataclass
class StudyResult:
    config: ExperimentConfig
    designs: list[DesignParams]
    cells: list[Cell]
    summary: dict = field(default_factory=dict)
    records: dict = field(default_factory=dict, repr=False)

    def cell(self, **labels) -> MetricsReport:
        for c in self.cells:
            if all(c.labels.get(k) == v for k, v in labels.items()):
                return c.report
        raise KeyError(labels)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, N: int | None = None,
                   strict: bool = True) -> StudyResult:
    """Replicate at one ``N`` and aggregate bias, SD, RMSE, ECP and RA per cell."""
    N = cfg.N_grid[0] if N is None else N
    design = derive_design(cfg, N)
    records = replicate(cfg, design, jobs=jobs)
    reports = _cells(records, cfg, design.extras["gamma"], strict)
    cells = [Cell({"N": N, "method": r.method, "level": r.level}, r) for r in reports]
    return StudyResult(cfg, [design], cells, records={N: records})


def table_study(cfg: ExperimentConfig, jobs: int = 1) -> StudyResult:
    """``run_experiment`` for every ``N`` in the grid."""
    cells, designs, records = [], [], {}
    for N in cfg.N_grid:
        res = run_experiment(cfg, jobs, N)
        cells += res.cells
        designs += res.designs
        records.update(res.records)
    return StudyResult(cfg, designs, cells, records=records)


def compare_estimators(cfg: ExperimentConfig, jobs: int = 1) -> StudyResult:
    """RMSE of each method at one fixed threshold level, for every ``N`` in the grid."""
    c = tailmodel.constants(cfg.tail_model)
    if c.gamma >= 0.5:
        raise ConfigError("estimator comparison is restricted to models with gamma < 1/2")
    return table_study(cfg, jobs)


def threshold_sweep(cfg: ExperimentConfig, jobs: int = 1) -> StudyResult:
    """RMSE curve over a grid of quantile levels; minimum and argmin per method.

    Levels whose threshold is not positive (e.g. the median of a symmetric
    law) cannot be fitted and are reported with every replication aborted.
    """
    N = cfg.N_grid[0]
    design = derive_design(cfg, N)
    records = replicate(cfg, design, jobs=jobs)
    reports = _cells(records, cfg, design.extras["gamma"], strict=False)
    cells = [Cell({"N": N, "method": r.method, "level": r.level}, r) for r in reports]
    summary = {}
    for m in cfg.methods:
        usable = [r for r in reports if r.method == m and r.failures <= MAX_ABORT_FRACTION * cfg.R]
        best = min(usable, key=lambda r: r.rmse)
        summary[m] = {"min_rmse": best.rmse, "argmin_level": best.level, "levels": len(
            [r for r in reports if r.method == m])}
    return StudyResult(cfg, [design], cells, summary, records={N: records})


def detection_study(cfg: ExperimentConfig, jobs: int = 1) -> StudyResult:
    """Mean detection rate per ``N`` with outliers planted at ``C_o``."""
    if cfg.outlier is None:
        cfg = replace(cfg, outlier=OutlierSpec())
    cfg = replace(cfg, detect=True)
    cells, designs, records, summary = [], [], {}, {}
    for N in cfg.N_grid:
        res = run_experiment(cfg, jobs, N)
        cells += res.cells
        designs += res.designs
        records.update(res.records)
        pis = [r.detection_rate for r in res.records[N] if r.detection_rate is not None]
        summary[str(N)] = {"mean_detection_rate": _fsum_mean(pis),
                           "mean_injected": _fsum_mean([r.injected for r in res.records[N]]),
                           "valid": len(pis)}
    return StudyResult(cfg, designs, cells, summary, records=records)


def contamination_robustness(cfg: ExperimentConfig, jobs: int = 1) -> StudyResult:
    """Distribution of the averaged estimate per outlier factor ``C_o``, plus how
    often no planted outlier entered any subsample against the exact probability."""
    if cfg.outlier is None:
        cfg = replace(cfg, outlier=OutlierSpec())
    N = cfg.N_grid[0]
    design = derive_design(cfg, N)
    method = cfg.methods[0]
    cells, summary, records = [], {}, {}
    for C_o in cfg.C_o_grid:
        recs = replicate(cfg, design, C_o=C_o, jobs=jobs)
        records[C_o] = recs
        rep = _cells(recs, cfg, design.extras["gamma"])
        cells += [Cell({"N": N, "C_o": C_o, "method": r.method, "level": r.level}, r) for r in rep]
        g = np.array([f.gamma_hat for r in recs for f in r.fits if f.method == method and f.ok])
        q1, med, q3 = np.percentile(g, [25, 50, 75])
        clean = np.array([not r.contaminated for r in recs], dtype=float)
        p0 = np.array([r.zero_contamination_prob for r in recs])
        summary[str(C_o)] = {
            "median": float(med), "iqr": float(q3 - q1), "gamma_hats": g.tolist(),
            "zero_outlier_frequency": float(clean.mean()),
            "expected_zero_outlier_frequency": float(p0.mean()),
            "binomial_se": float(math.sqrt(np.sum(p0 * (1 - p0))) / len(recs)),
            "mean_injected": float(np.mean([r.injected for r in recs])),
        }
    return StudyResult(cfg, [design], cells, summary, records=records)


STUDIES: dict[str, Any] = {
    "table": table_study,
    "compare": compare_estimators,
    "sweep": threshold_sweep,
    "detection": detection_study,
    "contamination": contamination_robustness,
}


def run_study(cfg: ExperimentConfig, jobs: int = 1) -> StudyResult:
    return STUDIES[cfg.kind](cfg, jobs=jobs)
