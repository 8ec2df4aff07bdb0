"""Acceptance criteria 1-8.

Each criterion records a one-line PASS/FAIL verdict that is printed at the end
of the pytest session (see conftest.py). Running this file directly prints the
same lines without pytest:

    python tests/test_acceptance.py
"""

import dataclasses
import math
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from design_rows import rows  # noqa: E402
from subtail import simlab  # noqa: E402
from subtail.cli import load_config  # noqa: E402

RESULTS: dict[int, tuple[bool, str]] = {}
_CACHE: dict = {}


def _record(k, ok, detail):
    RESULTS[k] = (bool(ok), detail)
    return ok, detail


def verdict_lines():
    return [f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}" for k, (ok, detail) in sorted(RESULTS.items())]


def _config(name, **overrides):
    _, cfg = load_config(name)
    return dataclasses.replace(cfg, **overrides)


# --- criteria -------------------------------------------------------------


def criterion_1():
    t0 = time.perf_counter()
    bad = []
    for model, ck, N, n, level_pct, K in rows():
        d = simlab.derive_design(simlab.ExperimentConfig(model=model, N=N, C_K=ck, R=1))
        got = (d.n, d.K, round(100 * d.threshold_level, 1))
        if got != (n, K, level_pct):
            bad.append((model, ck, N, got, (n, K, level_pct)))
    dt = time.perf_counter() - t0
    ok = not bad and dt < 1.0
    return _record(1, ok, f"{len(rows()) - len(bad)}/{len(rows())} design rows exact in {dt:.3f}s"
                   + (f"; mismatches {bad[:3]}" if bad else ""))


def criterion_2():
    t0 = time.perf_counter()
    cfg = _config("table2_pareto21_ck05", R=500)
    r = simlab.run_experiment(cfg).cell(method="aml")
    dt = time.perf_counter() - t0
    ok = (0.022 <= r.rmse <= 0.040 and abs(r.bias) <= 0.01 and 0.92 <= r.ecp <= 0.98
          and 0.13 <= r.ra <= 0.28 and dt < 300)
    return _record(2, ok, f"pareto(2,1) N=1e5 C_K=0.5 R=500: rmse={r.rmse:.4f} bias={r.bias:+.4f} "
                   f"ecp={r.ecp:.3f} ra={r.ra:.3f} ({dt:.1f}s)")


def criterion_3():
    cfg = _config("table1_t1_ck05", R=500)
    r = simlab.run_experiment(cfg).cell(method="aml")
    ok = 0.055 <= r.rmse <= 0.10 and 0.91 <= r.ecp <= 0.98
    return _record(3, ok, f"t(1) N=1e5 C_K=0.5 R=500: rmse={r.rmse:.4f} ecp={r.ecp:.3f}")


def rmse_gap_se(err_a, err_b):
    """Delta-method standard error of RMSE(b) - RMSE(a) from paired errors."""
    sa, sb = err_a ** 2, err_b ** 2
    ra, rb = math.sqrt(sa.mean()), math.sqrt(sb.mean())
    grad = np.column_stack([-sa / (2 * ra), sb / (2 * rb)])
    cov = np.cov(grad.T, ddof=1)
    var = cov[0, 0] + cov[1, 1] + 2 * cov[0, 1]
    return rb - ra, math.sqrt(var / len(err_a))


def criterion_4():
    parts, ok = [], True
    for name in ("figure1_t3", "figure1_pareto23"):
        cfg = _config(name, N=1_000_000, R=300)
        res = simlab.run_study(cfg)
        gamma = res.designs[0].extras["gamma"]
        recs = res.records[1_000_000]
        err = {m: np.array([f.gamma_hat - gamma for r in recs for f in r.fits if f.method == m])
               for m in cfg.methods}
        for other in ("amo", "apwm"):
            gap, se = rmse_gap_se(err["aml"], err[other])
            ok &= gap > 2 * se
            parts.append(f"{cfg.model} {other}-aml={gap:.4f} (2se={2 * se:.4f})")
    return _record(4, ok, "; ".join(parts))


def criterion_5():
    cfg = _config("figure4_pareto22", N=1_000_000, R=100)
    s = simlab.run_study(cfg).summary["1000000"]
    pi = s["mean_detection_rate"]
    ok = pi >= 0.9 and s["valid"] == cfg.R
    return _record(5, ok, f"pareto(2,2) C_o=1 N=1e6 R=100: mean pi={pi:.4f} (valid {s['valid']})")


def _contamination():
    if "c6" not in _CACHE:
        cfg = _config("figure3_t2", N=1_000_000, R=200, C_o_grid=(0.0, 1.0))
        _CACHE["c6"] = (cfg, simlab.run_study(cfg))
    return _CACHE["c6"]


def criterion_6():
    cfg, res = _contamination()
    s0, s1 = res.summary["0.0"], res.summary["1.0"]
    diff = abs(s1["median"] - s0["median"])
    tol = 2 * s0["iqr"] / math.sqrt(cfg.R)
    return _record(6, diff <= tol, f"t(2) N=1e6 R=200: |median(C_o=1)-median(C_o=0)|={diff:.4f} "
                   f"vs 2*IQR/sqrt(R)={tol:.4f}")


def criterion_8():
    cfg, res = _contamination()
    s = res.summary["1.0"]
    obs, exp, se = s["zero_outlier_frequency"], s["expected_zero_outlier_frequency"], s["binomial_se"]
    ok = abs(obs - exp) <= 3 * se and s["mean_injected"] > 0
    return _record(8, ok, f"zero-contamination frequency {obs:.3f} vs exact {exp:.4f} "
                   f"(3se={3 * se:.4f}, mean d={s['mean_injected']:.1f})")


def criterion_7():
    """Property checks, each an independent re-statement of a module invariant."""
    from subtail.detect import detection_rate, screen
    from subtail.estimators import mle_subsample, moment_gamma, pwm_gamma
    from subtail.inference import NormalRange, bound_from_params
    from subtail.sampler import InMemorySource, SubsamplePlan, draw_indices, draw_subsamples
    from subtail.simlab import FitRecord, metrics
    from subtail.tailmodel import Frechet, Pareto, StudentT
    from scipy import stats

    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    checks = {}

    x = rng.pareto(1.0, 500) + 1
    checks["scale invariance"] = all(
        mle_subsample(c * x, c * 1.5).gamma_hat == mle_subsample(x, 1.5).gamma_hat for c in (0.25, 2.0, 1024.0)
    ) and all(abs(mle_subsample(c * x, c * 1.5).gamma_hat / mle_subsample(x, 1.5).gamma_hat - 1) < 1e-13
              for c in (0.3, 7.0, 1e6))

    ok = True
    for _ in range(100):
        v = rng.pareto(2.0, int(rng.integers(2, 40))) + 1
        u = float(np.min(v))
        if not np.any(v > u):
            continue
        naive = [math.log(a / u) for a in v if a > u]
        ok &= abs(mle_subsample(v, u).gamma_hat - sum(naive) / len(naive)) <= 1e-13 * abs(sum(naive) / len(naive))
    checks["mle brute-force oracle"] = ok

    gs = rng.uniform(0.01, 0.9, 200)
    sig = rng.uniform(0.1, 10, 200)
    checks["moment/pwm identities"] = (
        max(abs(moment_gamma(g, 2 * g * g) - g) for g in gs) <= 1e-12
        and max(abs(pwm_gamma(s / (1 - g), s / (2 * (2 - g))) - g) for g, s in zip(gs, sig)) <= 1e-12
    )

    checks["pareto bound exactness"] = all(
        abs(bound_from_params(u, 2 / u, 1.0, t) / (2 / t) - 1) <= 1e-12
        for u in (2.0, 5.0, 100.0) for t in (1e-3, 1e-5) if t < 2 / u
    )

    ok = True
    for m in (StudentT(1), StudentT(2), StudentT(5), Pareto(2, 1), Pareto(2, 3), Frechet(1), Frechet(2)):
        for p in (0.9, 0.99, 0.999, 1 - 1e-6):
            ok &= abs(m.tail_prob(m.quantile(p)) / (1 - p) - 1) <= 1e-8
    checks["quantile/tail round trip"] = ok

    a = draw_subsamples(InMemorySource(x), SubsamplePlan(50, 4, 99))
    b = draw_subsamples(InMemorySource(x), SubsamplePlan(50, 4, 99))
    idx = draw_indices(10**4, SubsamplePlan(1000, 10, 123)).ravel()
    counts = np.bincount(idx // 100, minlength=100)
    chi2 = float(np.sum((counts - 100) ** 2 / 100))
    lo, hi = stats.chi2.ppf([0.001, 0.999], 99)
    checks["sampler determinism + chi-square"] = np.array_equal(a.subsamples, b.subsamples) and lo <= chi2 <= hi

    g = rng.normal(1, 0.1, 50)
    r = metrics([FitRecord("aml", 0.9, 1.0, float(v), 10, None, None, True, 1.0, 1e-3) for v in g], 1.0, 1e-3)
    checks["rmse^2 = bias^2 + variance"] = abs(r.rmse ** 2 - (r.bias ** 2 + r.sd ** 2 * 49 / 50)) <= 1e-12 * r.rmse ** 2

    checks["jaccard edge cases"] = (detection_rate([], set()) == 1.0 and detection_rate([], {7}) == 0.0
                                    and detection_rate([1, 2, 3], {2, 3, 4}) == 0.5
                                    and detection_rate([4, 5], {5, 4}) == 1.0)

    y = rng.standard_t(2, 10**4)
    found = screen(InMemorySource(y), NormalRange(3.0, -2.5, 0.01))
    checks["screen = naive filter"] = found.indices.tolist() == [i for i, v in enumerate(y) if v > 3.0 or v < -2.5]

    dt = time.perf_counter() - t0
    failed = [k for k, v in checks.items() if not v]
    ok = not failed and dt < 30
    return _record(7, ok, f"{len(checks) - len(failed)}/{len(checks)} property checks in {dt:.2f}s"
                   + (f"; failed: {failed}" if failed else ""))


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4,
            5: criterion_5, 6: criterion_6, 7: criterion_7, 8: criterion_8}


# --- pytest entry points --------------------------------------------------


def _check(k):
    ok, detail = CRITERIA[k]()
    assert ok, f"criterion {k} failed: {detail}"


def test_criterion_1_design_rows():
    _check(1)


def test_criterion_2_pareto_table_reproduction():
    _check(2)


def test_criterion_3_student_t_spot_check():
    _check(3)


def test_criterion_4_estimator_ordering():
    _check(4)


def test_criterion_5_detection_rate():
    _check(5)


def test_criterion_6_contamination_medians():
    _check(6)


def test_criterion_7_property_suite():
    _check(7)


def test_criterion_8_zero_contamination_probability():
    _check(8)


if __name__ == "__main__":
    for k, fn in CRITERIA.items():
        fn()
        ok, detail = RESULTS[k]
        print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
    sys.exit(0 if all(ok for ok, _ in RESULTS.values()) else 1)
