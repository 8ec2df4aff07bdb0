"""Full-data outlier screening against a normal range."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .inference import NormalRange
from .sampler import DatasetSource, ThresholdVisitor, stream_scan

DEFAULT_LIMIT = 10 ** 7


@dataclass(frozen=True)
class SuspectedSet:
    indices: np.ndarray
    values: np.ndarray
    bound_used: NormalRange
    scanned: int
    total_flagged: int
    overflow: bool = False

    @property
    def count(self):
        return self.total_flagged

    @property
    def fraction(self):
        return self.total_flagged / self.scanned if self.scanned else 0.0


class _Scanned(ThresholdVisitor):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.scanned = 0

    def visit(self, positions, values):
        self.scanned += values.size
        super().visit(positions, values)


def screen(source: DatasetSource, range_: NormalRange, limit: int | None = DEFAULT_LIMIT) -> SuspectedSet:
    """Flag every value strictly above the upper or strictly below the lower bound.

    Stores at most ``limit`` flagged records; beyond that only the count grows
    and ``overflow`` is set.
    """
    visitor = _Scanned(upper=range_.upper, lower=range_.lower, limit=limit)
    idx, vals = stream_scan(source, visitor)
    return SuspectedSet(idx, vals, range_, visitor.scanned, visitor.total, visitor.overflow)


def detection_rate(detected, truth) -> float:
    """Jaccard index ``|detected & truth| / |detected | truth|``; 1 when both are empty."""
    d = set(np.asarray(getattr(detected, "indices", detected), dtype=np.int64).tolist())
    t = set(np.asarray(list(truth) if isinstance(truth, (set, frozenset)) else truth,
                       dtype=np.int64).tolist())
    union = d | t
    if not union:
        return 1.0
    return len(d & t) / len(union)
