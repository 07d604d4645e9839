"""Tests for factor snapshots, median trajectories and histograms."""
import numpy as np
import pytest

from adareg.autodiff.tensor import Tensor
from adareg.regularization.analysis import (
    FactorValue,
    RegSnapshot,
    bucket_edges,
    factor_histogram,
    median_trajectory,
    read_snapshot_log,
    take_snapshot,
    write_histogram_csv,
    write_snapshot_log,
    write_trajectory_csv,
)
from adareg.regularization.factors import RegFactor
from adareg.utils.exceptions import ValidationError
from adareg.utils.results_handler import read_csv


def _snapshot(iteration, values):
    return RegSnapshot(iteration, [FactorValue(f"p{i}", category, lam, 0.0)
                                   for i, (category, lam) in enumerate(values)])


def _median(rows, iteration, category):
    return next(r.median for r in rows if r.iteration == iteration and r.category == category)


def test_median_trajectory():
    snapshot = _snapshot(0, [('conv_kernel', 0.001), ('conv_kernel', 0.003), ('conv_kernel', 0.002),
                             ('bn_gamma', 0.0007), ('bn_beta', 1.0), ('bn_beta', 3.0)])
    rows = median_trajectory([snapshot])
    assert _median(rows, 0, 'conv_kernel') == 0.002
    assert _median(rows, 0, 'bn_gamma') == 0.0007
    assert _median(rows, 0, 'bn_beta') == 2.0
    assert _median(rows, 0, 'dense_kernel') is None


def test_median_trajectory_needs_snapshots():
    with pytest.raises(ValidationError):
        median_trajectory([])


def test_default_bucket_edges_are_exact():
    assert bucket_edges(0.0, 0.0025, 5) == [0.0, 0.0005, 0.001, 0.0015, 0.002, 0.0025]


def test_bucket_edges_reject_bad_range():
    with pytest.raises(ValidationError):
        bucket_edges(0.0025, 0.0, 5)
    with pytest.raises(ValidationError):
        bucket_edges(0.0, 1.0, 0)


def test_histogram_zero_factors_land_in_first_bucket():
    histogram = factor_histogram(_snapshot(10, [('conv_bias', 0.0)] * 4))
    assert histogram.counts['conv_bias'] == [4, 0, 0, 0, 0]
    assert histogram.overflow == 0


def test_histogram_last_bucket_is_closed():
    histogram = factor_histogram(_snapshot(10, [('conv_bias', 0.0025), ('conv_bias', 0.002)]))
    assert histogram.counts['conv_bias'] == [0, 0, 0, 0, 2]


def test_histogram_bucket_lower_edges_are_inclusive():
    histogram = factor_histogram(_snapshot(10, [('bn_gamma', 0.0005), ('bn_gamma', 0.00049)]))
    assert histogram.counts['bn_gamma'] == [1, 1, 0, 0, 0]


def test_histogram_overflow_is_reported(tmp_path):
    histogram = factor_histogram(_snapshot(3, [('dense_kernel', 0.003), ('dense_kernel', -1.0),
                                               ('dense_kernel', 0.001)]))
    assert histogram.counts['dense_kernel'] == [0, 0, 1, 0, 0]
    assert histogram.above['dense_kernel'] == 1
    assert histogram.below['dense_kernel'] == 1
    assert histogram.overflow == 2

    path = write_histogram_csv(str(tmp_path / 'histogram.csv'), histogram)
    rows = read_csv(path, ('category', 'bucket_lo', 'bucket_hi', 'count'))
    assert len(rows) == 5 * 5 + 2
    assert {'category': 'dense_kernel', 'bucket_lo': '0.0025', 'bucket_hi': 'inf', 'count': '1'} in rows


def test_take_snapshot_constant_mode_is_flat():
    factors = [RegFactor(Tensor(theta), 0.0025, 2.5, 'conv_kernel', f"w{i}")
               for i, theta in enumerate([-1.0, 0.0, 2.0])]
    snapshot = take_snapshot(5, factors, 'constant', 0.00125)
    assert [v.lam for v in snapshot.values] == [0.00125] * 3
    assert [v.theta for v in snapshot.values] == [-1.0, 0.0, 2.0]
    adaptive = take_snapshot(5, factors, 'adaptive')
    assert adaptive.values[1].lam == pytest.approx(0.00125)


def test_snapshot_log_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    snapshots = [_snapshot(it, [('conv_kernel', float(v)) for v in rng.uniform(0, 0.0025, 3)])
                 for it in (0, 10, 20)]
    path = write_snapshot_log(str(tmp_path / 'reg_snapshots.csv'), snapshots)
    assert read_snapshot_log(path) == snapshots


def test_trajectory_csv_leaves_empty_cells(tmp_path):
    rows = median_trajectory([_snapshot(0, [('conv_kernel', 0.001)])])
    path = write_trajectory_csv(str(tmp_path / 'trajectory.csv'), rows)
    table = read_csv(path, ('iteration', 'category', 'median_lambda'))
    assert len(table) == 5
    assert {'iteration': '0', 'category': 'bn_gamma', 'median_lambda': ''} in table
