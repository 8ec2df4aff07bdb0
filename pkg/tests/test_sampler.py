import math
import tracemalloc

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import write_f64
from subtail.errors import ConfigError, DataError, EmptySourceError, ZeroVarianceError
from subtail.sampler import (
    CountVisitor,
    DelimitedTextSource,
    FixedWidthBinarySource,
    InMemorySource,
    MaxVisitor,
    MomentsVisitor,
    SubsamplePlan,
    ThresholdVisitor,
    count_records,
    describe,
    draw_indices,
    draw_subsamples,
    open_source,
    stream_scan,
)


def test_count_examples(tmp_path):
    assert count_records(InMemorySource([1.0, 2.0, 3.0])) == (3, 0)
    p = tmp_path / "d.csv"
    p.write_text("5.0\nNA\n7.5\n")
    c = count_records(DelimitedTextSource(p, 0, missing_tokens=("NA", "")))
    assert (c.N, c.missing) == (2, 1)
    b = write_f64(tmp_path / "d.bin", np.arange(100.0))
    assert b.stat().st_size == 800
    c = count_records(FixedWidthBinarySource(b))
    assert (c.N, c.missing) == (100, 0)


def test_csv_missing_and_unparseable(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b\n1,x\n,2\nNA,3\n  4.5 ,oops\nfoo,5\ninf,6\n")
    src = DelimitedTextSource(p, "a", header=True)
    assert count_records(src) == (2, 4)
    vals = np.concatenate([v for _, v in src.chunks()])
    pos = np.concatenate([i for i, _ in src.chunks()])
    assert vals.tolist() == [1.0, 4.5]
    assert pos.tolist() == [0, 3]
    b = DelimitedTextSource(p, 1, header=True)
    assert count_records(b) == (4, 2)


def test_csv_by_index_and_delimiter(tmp_path):
    p = tmp_path / "d.tsv"
    p.write_text("1\t10\n2\t20\n3\t30\n")
    src = open_source(str(p), "csv", "1", "\t")
    assert np.concatenate([v for _, v in src.chunks()]).tolist() == [10.0, 20.0, 30.0]
    with pytest.raises(ConfigError):
        count_records(DelimitedTextSource(p, 5, "\t"))
    with pytest.raises(ConfigError):
        DelimitedTextSource(p, "name", "\t", header=False)


def test_missing_file_and_bad_width(tmp_path):
    with pytest.raises(DataError):
        FixedWidthBinarySource(tmp_path / "nope.bin")
    with pytest.raises(DataError):
        DelimitedTextSource(tmp_path / "nope.csv")
    bad = tmp_path / "odd.bin"
    bad.write_bytes(b"\0" * 12)
    with pytest.raises(DataError):
        FixedWidthBinarySource(bad)


def test_binary_nan_counts_as_missing(tmp_path):
    p = write_f64(tmp_path / "n.bin", [1.0, np.nan, 3.0, np.inf, 5.0])
    src = FixedWidthBinarySource(p)
    assert count_records(src) == (3, 2)
    sub = draw_subsamples(src, SubsamplePlan(50, 2, seed=1))
    assert set(np.unique(sub.subsamples)) <= {1.0, 3.0, 5.0}


def test_single_record_repeats():
    sub = draw_subsamples(InMemorySource([10.0]), SubsamplePlan(3, 2, seed=0))
    assert sub.subsamples.tolist() == [[10, 10, 10], [10, 10, 10]]
    assert (sub.K, sub.n) == (2, 3)


def test_empty_source():
    with pytest.raises(EmptySourceError):
        draw_subsamples(InMemorySource([]), SubsamplePlan(3, 2))


def test_plan_validation():
    for bad in (dict(n=0, K=1), dict(n=1, K=0), dict(n=1, K=1, seed=-1), dict(n=1, K=1, seed=2**64)):
        with pytest.raises(ConfigError):
            SubsamplePlan(**bad)


def test_subsample_set_is_read_only():
    sub = draw_subsamples(InMemorySource(np.arange(10.0)), SubsamplePlan(4, 2, 3))
    with pytest.raises(ValueError):
        sub.subsamples[0, 0] = 1


def test_determinism_across_source_kinds(tmp_path):
    x = np.random.default_rng(1).standard_t(3, 5000)
    b = write_f64(tmp_path / "x.bin", x)
    c = tmp_path / "x.csv"
    c.write_text("v\n" + "\n".join(repr(float(v)) for v in x) + "\n")
    plan = SubsamplePlan(300, 7, seed=2**63 + 5)
    subs = [draw_subsamples(s, plan) for s in
            (InMemorySource(x), FixedWidthBinarySource(b), DelimitedTextSource(c, "v", header=True))]
    for s in subs[1:]:
        assert np.array_equal(s.subsamples, subs[0].subsamples)
        assert np.array_equal(s.source_indices, subs[0].source_indices)
    again = draw_subsamples(InMemorySource(x), plan)
    assert np.array_equal(again.subsamples, subs[0].subsamples)
    assert np.array_equal(subs[0].subsamples, x[subs[0].source_indices])


def test_csv_fetch_with_missing_preserves_draw_order(tmp_path):
    rows = ["1", "NA", "2", "", "3", "bad", "4"]
    p = tmp_path / "m.csv"
    p.write_text("\n".join(rows) + "\n")
    src = DelimitedTextSource(p)
    valid = np.array([1.0, 2.0, 3.0, 4.0])
    sub = draw_subsamples(src, SubsamplePlan(20, 3, seed=9))
    assert np.array_equal(sub.subsamples, valid[sub.source_indices])


def test_subsamples_independent_streams():
    plan = SubsamplePlan(1000, 3, seed=4)
    idx = draw_indices(10**6, plan)
    assert not np.array_equal(idx[0], idx[1])
    # subsample k's stream does not depend on K
    idx5 = draw_indices(10**6, SubsamplePlan(1000, 5, seed=4))
    assert np.array_equal(idx, idx5[:3])


def test_index_chi_square_uniformity():
    N = 10**4
    idx = draw_indices(N, SubsamplePlan(1000, 10, seed=20240601)).ravel()
    counts = np.bincount(idx // (N // 100), minlength=100)
    chi2 = float(np.sum((counts - idx.size / 100) ** 2 / (idx.size / 100)))
    lo, hi = stats.chi2.ppf([0.001, 0.999], 99)
    assert lo <= chi2 <= hi


@pytest.mark.parametrize("N", [1, 2, 7, 20])
def test_index_probability_per_record(N):
    draws = 10**5
    idx = draw_indices(N, SubsamplePlan(draws // 10, 10, seed=N)).ravel()
    freq = np.bincount(idx, minlength=N) / draws
    se = math.sqrt((1 / N) * (1 - 1 / N) / draws)
    assert np.all(np.abs(freq - 1 / N) <= 4 * se + 1e-15)


def test_permuting_subsamples_keeps_estimate_multiset():
    from subtail.estimators import averaged_estimate

    x = np.random.default_rng(3).pareto(1.0, 20000) + 1
    sub = draw_subsamples(InMemorySource(x), SubsamplePlan(500, 6, seed=11))
    a = averaged_estimate(sub, 3.0)
    b = averaged_estimate(sub.subsamples[::-1], 3.0)
    assert sorted(e.gamma_hat for e in a.per_subsample) == sorted(e.gamma_hat for e in b.per_subsample)
    assert a.total_exceedances == b.total_exceedances
    assert a.gamma_hat == pytest.approx(b.gamma_hat, rel=1e-15)


def test_memory_bound_on_huge_binary(tmp_path):
    p = tmp_path / "huge.bin"
    N = 10**8
    with open(p, "wb") as fh:
        fh.truncate(8 * N)  # sparse file of zeros
    src = FixedWidthBinarySource(p)
    tracemalloc.start()
    try:
        sub = draw_subsamples(src, SubsamplePlan(1000, 10, seed=1))
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    assert sub.subsamples.shape == (10, 1000)
    assert src.count().N == N
    # bounded by a few chunk buffers plus O(nK), never O(N) = 800 MB
    assert peak < 16 * 2**20


def test_stream_scan_visitors():
    src = InMemorySource([3.0, 9.0, 1.0])
    assert stream_scan(src, CountVisitor()) == count_records(src).N
    assert stream_scan(src, MaxVisitor()) == (9.0, 1)
    idx, vals = stream_scan(InMemorySource([3.0, 9.0, 1.0, 7.0]), ThresholdVisitor(upper=5))
    assert idx.tolist() == [1, 3] and vals.tolist() == [9.0, 7.0]


def test_threshold_visitor_overflow():
    v = ThresholdVisitor(upper=0.5, limit=3)
    idx, vals = stream_scan(InMemorySource(np.arange(10.0)), v)
    assert idx.tolist() == [1, 2, 3]
    assert v.total == 9 and v.overflow


def test_positions_refer_to_storage_rows(tmp_path):
    p = tmp_path / "g.csv"
    p.write_text("1\nNA\n100\n2\n")
    idx, vals = stream_scan(DelimitedTextSource(p), ThresholdVisitor(upper=10))
    assert idx.tolist() == [2] and vals.tolist() == [100.0]


def test_describe_examples():
    d = describe(InMemorySource([0.0, 0.0, 1.0, 1.0]))
    assert (d.mean, d.min, d.max, d.median) == (0.5, 0.0, 1.0, 0.5)
    assert d.kurtosis == pytest.approx(1.0, rel=1e-14)
    with pytest.raises(ZeroVarianceError):
        describe(InMemorySource([2.0, 2.0, 2.0]))


def test_describe_normal_kurtosis():
    x = np.random.default_rng(8).standard_normal(10**6)
    d = describe(InMemorySource(x))
    assert abs(d.kurtosis - 3) <= 0.1
    assert d.median_approximate


def test_describe_matches_scipy_and_reports_missing(tmp_path):
    x = np.random.default_rng(5).standard_t(6, 3000)
    p = tmp_path / "x.csv"
    p.write_text("\n".join([repr(float(v)) for v in x] + ["NA", ""]) + "\n")
    d = describe(DelimitedTextSource(p))
    assert d.N == 3000 and d.missing == 2
    assert d.mean == pytest.approx(np.mean(x), rel=1e-12, abs=1e-15)
    assert d.median == np.median(x) and not d.median_approximate
    assert d.kurtosis == pytest.approx(stats.kurtosis(x, fisher=False), rel=1e-10)
    assert (d.min, d.max) == (x.min(), x.max())


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=300))
@settings(max_examples=100, deadline=None)
def test_moments_visitor_merge_matches_two_pass(xs):
    x = np.array(xs)
    if np.ptp(x) == 0:
        return
    v = MomentsVisitor()
    for i in range(0, x.size, 7):
        v.visit(np.arange(i, min(i + 7, x.size)), x[i:i + 7])
    r = v.result()
    assert r.n == x.size and (r.lo, r.hi) == (x.min(), x.max())
    assert r.mean == pytest.approx(x.mean(), rel=1e-9, abs=1e-6)
    assert r.m2 == pytest.approx(np.sum((x - x.mean()) ** 2), rel=1e-7, abs=1e-3)
