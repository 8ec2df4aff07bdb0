"""Out-of-core data sources, subsampling with replacement and streaming scans.

A source is read in fixed-size chunks and never materialized. Two index
spaces exist:

* *record ordinals* ``0..N-1`` number the valid (non-missing) values; the
  subsampler draws these uniformly.
* *positions* number every stored record (rows after the header, binary
  slots, array elements), missing or not. Scans report positions so that
  flagged records can be located in the original file. Without missing
  values the two coincide.
"""

from __future__ import annotations

import math
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, EmptySourceError, ZeroVarianceError
from .rng import subsample_generator

CHUNK_RECORDS = 1 << 16
DEFAULT_MISSING_TOKENS = ("", "NA")
MEDIAN_BUDGET = 100_000


class RecordCount(NamedTuple):
    N: int
    missing: int


class DatasetSource(ABC):
    """A re-scannable sequence of real values."""

    _count: RecordCount | None = None

    @abstractmethod
    def _raw_chunks(self) -> Iterator[tuple[int, np.ndarray]]:
        """Yield ``(first_position, float64 values)``; missing records are NaN."""

    @property
    def seekable(self) -> bool:
        return False

    def _seek(self, ordinals: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def describe_kind(self) -> dict:
        return {"kind": type(self).__name__}

    def chunks(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield ``(positions, values)`` for valid records in storage order."""
        for start, raw in self._checked(self._raw_chunks()):
            ok = np.isfinite(raw)
            if ok.all():
                yield np.arange(start, start + raw.size, dtype=np.int64), raw
            else:
                yield np.flatnonzero(ok).astype(np.int64) + start, raw[ok]

    def _checked(self, it):
        seen = 0
        try:
            for start, raw in it:
                seen = start + raw.size
                yield start, raw
        except (OSError, UnicodeDecodeError, pd.errors.ParserError) as exc:
            raise DataError(f"read failed after {seen} records of {self.describe_kind()}: {exc}") from exc

    def count(self) -> RecordCount:
        if self._count is None:
            valid = missing = 0
            for _, raw in self._checked(self._raw_chunks()):
                ok = int(np.count_nonzero(np.isfinite(raw)))
                valid += ok
                missing += raw.size - ok
            self._count = RecordCount(valid, missing)
        return self._count

    def fetch(self, ordinals: np.ndarray) -> np.ndarray:
        """Values at the given record ordinals, in the given order."""
        ordinals = np.asarray(ordinals, dtype=np.int64)
        N = self.count().N
        if ordinals.size and (ordinals.min() < 0 or ordinals.max() >= N):
            raise ConfigError("record ordinal out of range")
        if self.seekable and self.count().missing == 0:
            return np.asarray(self._seek(ordinals), dtype=float)
        return self._fetch_sequential(ordinals)

    def _fetch_sequential(self, ordinals):
        # One pass over the data, serving a sorted copy of the requests.
        out = np.empty(ordinals.size, dtype=float)
        order = np.argsort(ordinals, kind="stable")
        wanted = ordinals[order]
        base = 0
        for _, values in self.chunks():
            end = base + values.size
            lo = np.searchsorted(wanted, base, side="left")
            hi = np.searchsorted(wanted, end, side="left")
            if hi > lo:
                out[order[lo:hi]] = values[wanted[lo:hi] - base]
            base = end
            if hi == wanted.size:
                break
        return out


class InMemorySource(DatasetSource):
    def __init__(self, values: Sequence[float] | np.ndarray):
        self.values = np.asarray(values, dtype=float)
        if self.values.ndim != 1:
            raise ConfigError("in-memory source needs a 1-D sequence")

    def _raw_chunks(self):
        for start in range(0, self.values.size, CHUNK_RECORDS):
            yield start, self.values[start:start + CHUNK_RECORDS]

    @property
    def seekable(self):
        return True

    def _seek(self, ordinals):
        return self.values[ordinals]

    def describe_kind(self):
        return {"kind": "memory", "size": int(self.values.size)}


class FixedWidthBinarySource(DatasetSource):
    """Headerless IEEE-754 records, little-endian 64-bit by default."""

    def __init__(self, path: str | os.PathLike, width: int = 8, endianness: str = "<"):
        if width not in (4, 8):
            raise ConfigError("record width must be 4 or 8 bytes")
        if endianness not in ("<", ">"):
            raise ConfigError("endianness must be '<' or '>'")
        self.path = os.fspath(path)
        self.width = width
        self.dtype = np.dtype(f"{endianness}f{width}")
        try:
            size = os.path.getsize(self.path)
        except OSError as exc:
            raise DataError(f"cannot open {self.path}: {exc}") from exc
        if size % width:
            raise DataError(f"{self.path}: size {size} is not a multiple of record width {width}")
        self.records = size // width

    def _map(self):
        if self.records == 0:
            return np.empty(0, dtype=self.dtype)
        return np.memmap(self.path, dtype=self.dtype, mode="r")

    def _raw_chunks(self):
        mm = self._map()
        for start in range(0, self.records, CHUNK_RECORDS):
            yield start, np.asarray(mm[start:start + CHUNK_RECORDS], dtype=float)

    @property
    def seekable(self):
        return True

    def _seek(self, ordinals):
        return self._map()[ordinals].astype(float)

    def describe_kind(self):
        return {"kind": "f64le" if self.dtype == np.dtype("<f8") else str(self.dtype),
                "path": self.path, "width": self.width}


class DelimitedTextSource(DatasetSource):
    """One numeric column of a UTF-8 delimited text file."""

    def __init__(self, path: str | os.PathLike, column: int | str = 0, delimiter: str = ",",
                 header: bool = False, missing_tokens: Sequence[str] = DEFAULT_MISSING_TOKENS):
        if len(delimiter) != 1:
            raise ConfigError("delimiter must be a single character")
        if isinstance(column, str) and not header:
            raise ConfigError("selecting a column by name requires a header row")
        self.path = os.fspath(path)
        if not os.path.exists(self.path):
            raise DataError(f"cannot open {self.path}: no such file")
        self.column = column
        self.delimiter = delimiter
        self.header = header
        self.missing_tokens = frozenset(missing_tokens)

    def _raw_chunks(self):
        try:
            reader = pd.read_csv(
                self.path, sep=self.delimiter, header=0 if self.header else None,
                usecols=[self.column], dtype=str, keep_default_na=False, na_filter=False,
                skip_blank_lines=False, chunksize=CHUNK_RECORDS, encoding="utf-8",
            )
        except ValueError as exc:
            raise ConfigError(f"column {self.column!r} not found in {self.path}: {exc}") from exc
        start = 0
        with reader:
            for chunk in reader:
                col = chunk.iloc[:, 0].to_numpy(dtype=object)
                values = _parse_floats(col, self.missing_tokens)
                yield start, values
                start += values.size

    def describe_kind(self):
        return {"kind": "csv", "path": self.path, "column": self.column,
                "delimiter": self.delimiter, "header": self.header,
                "missing_tokens": sorted(self.missing_tokens)}


def _to_float(token: str) -> float:
    try:
        return float(token)
    except ValueError:
        return math.nan


def _parse_floats(col: np.ndarray, missing_tokens) -> np.ndarray:
    """Exact (round-trip) text to float64; missing tokens and junk become NaN."""
    tokens = [t.strip() for t in col]
    tokens = ["nan" if (t in missing_tokens or "_" in t) else t for t in tokens]
    try:
        return np.array(tokens, dtype=object).astype(float)
    except ValueError:
        return np.fromiter((_to_float(t) for t in tokens), dtype=float, count=len(tokens))


def count_records(source: DatasetSource) -> RecordCount:
    return source.count()


@dataclass(frozen=True)
class SubsamplePlan:
    n: int
    K: int
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.K < 1:
            raise ConfigError("subsample plan needs n >= 1 and K >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class SubsampleSet:
    """K subsamples of size n (rows) with the record ordinals they came from."""

    subsamples: np.ndarray
    source_indices: np.ndarray

    def __post_init__(self):
        self.subsamples.setflags(write=False)
        self.source_indices.setflags(write=False)

    @property
    def K(self):
        return self.subsamples.shape[0]

    @property
    def n(self):
        return self.subsamples.shape[1]


def draw_indices(N: int, plan: SubsamplePlan) -> np.ndarray:
    """(K, n) record ordinals, i.i.d. uniform on ``0..N-1``."""
    if N < 1:
        raise EmptySourceError("cannot subsample an empty source")
    out = np.empty((plan.K, plan.n), dtype=np.int64)
    for k in range(plan.K):
        out[k] = subsample_generator(plan.seed, k).integers(0, N, size=plan.n)
    return out


def draw_subsamples(source: DatasetSource, plan: SubsamplePlan) -> SubsampleSet:
    """Simple random subsampling with replacement, within and across subsamples."""
    idx = draw_indices(source.count().N, plan)
    values = source.fetch(idx.ravel()).reshape(idx.shape)
    return SubsampleSet(values, idx)


class Visitor:
    """Accumulates state over ``visit(positions, values)`` chunk calls."""

    def visit(self, positions: np.ndarray, values: np.ndarray) -> None:
        raise NotImplementedError

    def result(self):
        raise NotImplementedError


def stream_scan(source: DatasetSource, visitor: Visitor):
    """Feed every valid value, with its position, to ``visitor`` in storage order."""
    for positions, values in source.chunks():
        visitor.visit(positions, values)
    return visitor.result()


class CountVisitor(Visitor):
    def __init__(self):
        self.n = 0

    def visit(self, positions, values):
        self.n += values.size

    def result(self):
        return self.n


class MaxVisitor(Visitor):
    def __init__(self):
        self.value = -math.inf
        self.position = None

    def visit(self, positions, values):
        if values.size:
            i = int(np.argmax(values))
            if values[i] > self.value:
                self.value = float(values[i])
                self.position = int(positions[i])

    def result(self):
        return self.value, self.position


class ThresholdVisitor(Visitor):
    """Collects positions with value strictly above ``upper`` or strictly below ``lower``."""

    def __init__(self, upper=math.inf, lower=-math.inf, limit=None):
        self.upper = upper
        self.lower = lower
        self.limit = limit
        self.positions: list[np.ndarray] = []
        self.values: list[np.ndarray] = []
        self.kept = 0
        self.total = 0
        self.overflow = False

    def visit(self, positions, values):
        hit = (values > self.upper) | (values < self.lower)
        if not hit.any():
            return
        p, v = positions[hit], values[hit]
        self.total += p.size
        if self.limit is not None:
            room = self.limit - self.kept
            if p.size > room:
                self.overflow = True
                p, v = p[:room], v[:room]
        if p.size:
            self.positions.append(p)
            self.values.append(v)
            self.kept += p.size

    def result(self):
        if not self.positions:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=float)
        return np.concatenate(self.positions), np.concatenate(self.values)


@dataclass
class MomentsVisitor(Visitor):
    """Streaming count, mean, central moments 2-4, min and max (pairwise merge)."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0
    m3: float = 0.0
    m4: float = 0.0
    lo: float = math.inf
    hi: float = -math.inf

    def visit(self, positions, values):
        nb = values.size
        if nb == 0:
            return
        mb = float(values.mean())
        d = values - mb
        d2 = d * d
        m2b = float(d2.sum())
        m3b = float((d2 * d).sum())
        m4b = float((d2 * d2).sum())
        self.lo = min(self.lo, float(values.min()))
        self.hi = max(self.hi, float(values.max()))
        na = self.n
        if na == 0:
            self.n, self.mean, self.m2, self.m3, self.m4 = nb, mb, m2b, m3b, m4b
            return
        n = na + nb
        delta = mb - self.mean
        dn = delta / n
        m2a, m3a, m4a = self.m2, self.m3, self.m4
        self.m4 = (m4a + m4b + delta * dn ** 3 * na * nb * (na * na - na * nb + nb * nb)
                   + 6 * dn * dn * (na * na * m2b + nb * nb * m2a) + 4 * dn * (na * m3b - nb * m3a))
        self.m3 = m3a + m3b + delta * dn * dn * na * nb * (na - nb) + 3 * dn * (na * m2b - nb * m2a)
        self.m2 = m2a + m2b + delta * dn * na * nb
        self.mean += dn * nb
        self.n = n

    def result(self):
        return self


@dataclass
class Description:
    N: int
    missing: int
    mean: float
    median: float
    min: float
    max: float
    kurtosis: float
    median_approximate: bool = False
    median_sample_size: int = field(default=0)


class _CollectVisitor(Visitor):
    def __init__(self):
        self.parts = []

    def visit(self, positions, values):
        self.parts.append(values.copy())

    def result(self):
        return np.concatenate(self.parts) if self.parts else np.empty(0)


def describe(source: DatasetSource, median_budget: int = MEDIAN_BUDGET, seed: int = 0) -> Description:
    """Mean, median, min, max and (non-excess) kurtosis.

    The median is exact when ``N <= median_budget``; otherwise it is the
    median of a uniform with-replacement subsample of ``median_budget`` values
    and flagged as approximate.
    """
    rc = source.count()
    if rc.N < 2:
        raise DataError(f"describe needs at least 2 valid values, found {rc.N}")
    mom = stream_scan(source, MomentsVisitor())
    if mom.m2 <= 0.0 or mom.lo == mom.hi:
        raise ZeroVarianceError("zero variance: kurtosis is undefined")
    kurt = mom.n * mom.m4 / (mom.m2 * mom.m2)
    if rc.N <= median_budget:
        median = float(np.median(stream_scan(source, _CollectVisitor())))
        approx, used = False, rc.N
    else:
        sub = draw_subsamples(source, SubsamplePlan(median_budget, 1, seed))
        median = float(np.median(sub.subsamples[0]))
        approx, used = True, median_budget
    return Description(rc.N, rc.missing, mom.mean, median, mom.lo, mom.hi, kurt, approx, used)


def open_source(path: str, fmt: str = "f64le", column: int | str = 0, delimiter: str = ",",
                header: bool | None = None, missing_tokens: Sequence[str] = DEFAULT_MISSING_TOKENS
                ) -> DatasetSource:
    """Build a source from CLI-style options (``fmt`` is ``f64le`` or ``csv``)."""
    if fmt == "f64le":
        return FixedWidthBinarySource(path)
    if fmt == "csv":
        if isinstance(column, str) and column.lstrip("-").isdigit():
            column = int(column)
        if header is None:
            header = isinstance(column, str)
        return DelimitedTextSource(path, column, delimiter, header, missing_tokens)
    raise ConfigError(f"unknown format {fmt!r}; expected f64le or csv")
