"""
Factor Analysis Module
Snapshots of regularization factors, per-category median trajectories and
last-snapshot histograms, with their CSV formats.
"""

from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence

import numpy as np

from adareg.config.run_config import CATEGORIES
from adareg.regularization.factors import RegFactor, effective_lambda
from adareg.utils.exceptions import StorageError, ValidationError
from adareg.utils.logger import setup_logger
from adareg.utils.results_handler import read_csv, write_csv

logger = setup_logger('FactorAnalysis')

SNAPSHOT_HEADER = ('iteration', 'param_name', 'category', 'lambda', 'theta')
TRAJECTORY_HEADER = ('iteration', 'category', 'median_lambda')
HISTOGRAM_HEADER = ('category', 'bucket_lo', 'bucket_hi', 'count')


@dataclass(frozen=True)
class FactorValue:
    param_name: str
    category: str
    lam: float
    theta: float


@dataclass
class RegSnapshot:
    iteration: int
    values: List[FactorValue] = field(default_factory=list)

    def by_category(self) -> Dict[str, List[float]]:
        grouped: Dict[str, List[float]] = defaultdict(list)
        for v in self.values:
            grouped[v.category].append(v.lam)
        return grouped


def take_snapshot(iteration: int, factors: Sequence[RegFactor], mode: str,
                  constant_lambda: float = 0.0) -> RegSnapshot:
    return RegSnapshot(iteration, [
        FactorValue(f.param_id, f.category, effective_lambda(f, mode, constant_lambda), f.theta.item())
        for f in factors
    ])


@dataclass(frozen=True)
class TrajectoryRow:
    iteration: int
    category: str
    median: Optional[float]


def median_trajectory(snapshots: Sequence[RegSnapshot],
                      categories: Sequence[str] = CATEGORIES) -> List[TrajectoryRow]:
    """Median factor per (iteration, category); None where a category is empty."""
    if not snapshots:
        raise ValidationError("median trajectory needs at least one snapshot")
    rows = []
    for snapshot in snapshots:
        grouped = snapshot.by_category()
        for category in categories:
            values = grouped.get(category)
            median = float(np.median(values)) if values else None
            rows.append(TrajectoryRow(snapshot.iteration, category, median))
    return rows


def bucket_edges(lo: float, hi: float, buckets: int) -> List[float]:
    """Even subdivision of [lo, hi]; each edge is the float nearest the exact decimal value."""
    if not lo < hi:
        raise ValidationError(f"histogram range needs lo < hi, got [{lo}, {hi}]")
    if buckets < 1:
        raise ValidationError(f"histogram needs at least one bucket, got {buckets}")
    flo, fhi = Fraction(repr(float(lo))), Fraction(repr(float(hi)))
    return [float(flo + (fhi - flo) * i / buckets) for i in range(buckets + 1)]


@dataclass
class FactorHistogram:
    edges: List[float]
    counts: Dict[str, List[int]]
    below: Dict[str, int]
    above: Dict[str, int]

    @property
    def overflow(self) -> int:
        return sum(self.below.values()) + sum(self.above.values())


def factor_histogram(snapshot: RegSnapshot, lo: float = 0.0, hi: float = 0.0025, buckets: int = 5,
                     categories: Sequence[str] = CATEGORIES) -> FactorHistogram:
    """Count factors per (category, bucket); buckets are [e_i, e_i+1) with the last closed."""
    edges = bucket_edges(lo, hi, buckets)
    counts = {c: [0] * buckets for c in categories}
    below = {c: 0 for c in categories}
    above = {c: 0 for c in categories}
    for v in snapshot.values:
        if v.category not in counts:
            counts[v.category] = [0] * buckets
            below[v.category] = 0
            above[v.category] = 0
        if v.lam < edges[0]:
            below[v.category] += 1
        elif v.lam > edges[-1]:
            above[v.category] += 1
        elif v.lam == edges[-1]:
            counts[v.category][-1] += 1
        else:
            index = int(np.searchsorted(edges, v.lam, side='right')) - 1
            counts[v.category][index] += 1
    histogram = FactorHistogram(edges, counts, below, above)
    if histogram.overflow:
        logger.warning(f"{histogram.overflow} factors outside [{lo}, {hi}] at iteration {snapshot.iteration}")
    return histogram


def write_snapshot_log(path: str, snapshots: Sequence[RegSnapshot]) -> str:
    rows = ((s.iteration, v.param_name, v.category, v.lam, v.theta) for s in snapshots for v in s.values)
    return write_csv(path, SNAPSHOT_HEADER, rows)


def read_snapshot_log(path: str) -> List[RegSnapshot]:
    snapshots: Dict[int, RegSnapshot] = {}
    for row in read_csv(path, SNAPSHOT_HEADER):
        try:
            iteration = int(row['iteration'])
            value = FactorValue(row['param_name'], row['category'], float(row['lambda']), float(row['theta']))
        except (KeyError, ValueError) as e:
            raise StorageError(f"{path}: malformed snapshot row {row}") from e
        snapshots.setdefault(iteration, RegSnapshot(iteration)).values.append(value)
    return [snapshots[i] for i in sorted(snapshots)]


def write_trajectory_csv(path: str, rows: Sequence[TrajectoryRow]) -> str:
    return write_csv(path, TRAJECTORY_HEADER, ((r.iteration, r.category, r.median) for r in rows))


def write_histogram_csv(path: str, histogram: FactorHistogram) -> str:
    rows = []
    for category, counts in histogram.counts.items():
        for i, count in enumerate(counts):
            rows.append((category, histogram.edges[i], histogram.edges[i + 1], count))
        if histogram.below[category]:
            rows.append((category, '-inf', histogram.edges[0], histogram.below[category]))
        if histogram.above[category]:
            rows.append((category, histogram.edges[-1], 'inf', histogram.above[category]))
    return write_csv(path, HISTOGRAM_HEADER, rows)
