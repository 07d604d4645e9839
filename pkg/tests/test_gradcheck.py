"""Tests for finite-difference gradient checking and the op suite."""
import numpy as np
import pytest

from adareg.autodiff import ops
from adareg.autodiff.gradcheck import grad_check
from adareg.autodiff.tensor import ParameterRegistry, Tensor
from adareg.config.run_config import RunConfig
from adareg.training.gradcheck_suite import op_cases, run_gradcheck_suite


def _single(name, value):
    registry = ParameterRegistry()
    registry.register(name, Tensor(value))
    return registry


def test_quadratic_passes():
    registry = _single('w', [1.0, 2.0])
    report = grad_check(lambda: ops.sum_squares(registry['w']), registry, h=1e-5)
    assert report.passed
    assert report.checked == 2
    assert report.max_abs_error < 1e-8


def test_clamp_kink_is_excluded_not_failed():
    registry = _single('w', [0.5, 0.2])
    report = grad_check(lambda: ops.reduce_sum(ops.clamp(registry['w'], -0.5, 0.5)), registry, h=1e-5)
    assert report.passed
    assert ('w', (0,)) in report.excluded
    assert report.checked == 1


def test_composite_matches_central_differences(rng):
    registry = ParameterRegistry()
    registry.register('a', Tensor(rng.normal(size=(3, 4))))
    registry.register('b', Tensor(rng.normal(size=(4, 2))))
    report = grad_check(lambda: ops.reduce_mean(ops.relu(ops.matmul(registry['a'], registry['b']))),
                        registry, tol=1e-6)
    assert report.passed


def test_wrong_backward_is_detected():
    registry = _single('w', [1.0, -2.0, 0.5])

    def bad_square(t):
        return ops.emit('bad_square', (t,), t.data ** 2, lambda g: (g * t.data,))

    report = grad_check(lambda: ops.reduce_sum(bad_square(registry['w'])), registry)
    assert not report.passed
    assert {f.index for f in report.failures} == {(0,), (1,), (2,)}


def test_non_finite_probe_reported():
    registry = _single('w', [1e-6])
    report = grad_check(lambda: ops.reduce_sum(ops.log(registry['w'])), registry, h=1e-5)
    assert not report.passed
    assert report.failures[0].reason == 'non-finite'


def test_parameters_restored_after_probing(rng):
    value = rng.normal(size=(2, 2))
    registry = _single('w', value.copy())
    grad_check(lambda: ops.sum_squares(registry['w']), registry)
    np.testing.assert_array_equal(registry['w'].data, value)


def test_full_suite_passes():
    reports = run_gradcheck_suite(RunConfig())
    labels = {r.label for r in reports}
    assert {'conv2d', 'batch_norm_train', 'batch_hard_triplet', 'adaptive_penalty', 'full_model'} <= labels
    failed = [(r.label, r.max_rel_error) for r in reports if not r.passed]
    assert not failed
    assert all(r.checked > 0 for r in reports)


@pytest.mark.parametrize('mode', ['constant', 'unconstrained'])
def test_full_model_other_regularizers(mode):
    config = RunConfig().with_overrides({'reg.mode': mode, 'gradcheck.max_coords': 3})
    reports = run_gradcheck_suite(config)
    assert reports[-1].label == 'full_model'
    assert reports[-1].passed


@pytest.mark.parametrize('label', ['reduce_sum', 'reduce_mean', 'sum_squares', 'reshape', 'slice',
                                   'avg_pool2d', 'pairwise_distance'])
def test_shape_changing_ops_pass_default_settings(label):
    gc = RunConfig().gradcheck
    fn, registry = dict(op_cases(np.random.default_rng(gc.seed)))[label]
    report = grad_check(fn, registry, h=gc.h, tol=gc.tol, atol=gc.atol, max_coords=gc.max_coords,
                        rng=np.random.default_rng(gc.seed), label=label)
    assert report.passed, report.max_rel_error
    assert report.checked > 0
