"""
Gradient Check Suite
Finite-difference checks for every differentiable op, the losses, the
regularization penalty and the full model objective on a P=2, K=2 batch.
"""

from typing import Callable, List, Tuple

import numpy as np

from adareg.autodiff import ops
from adareg.autodiff.gradcheck import GradCheckReport, grad_check
from adareg.autodiff.tensor import ParameterRegistry, Tensor
from adareg.config.run_config import RunConfig
from adareg.losses import SmoothingConfig, TripletConfig, batch_hard_triplet, cross_entropy, smoothed_labels, total_loss
from adareg.model.topology import ObjectiveModule, ReIDModel, model_forward, objective_forward
from adareg.regularization.factors import adaptive_penalty, build_factors, hard_sigmoid_op, regularization_penalty
from adareg.utils.logger import setup_logger

logger = setup_logger('GradCheckSuite')

Case = Tuple[Callable[[], Tensor], ParameterRegistry]


def _params(rng: np.random.Generator, **shapes) -> ParameterRegistry:
    registry = ParameterRegistry()
    for name, shape in shapes.items():
        registry.register(name, Tensor(rng.normal(size=shape)))
    return registry


def _weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    return ops.reduce_sum(ops.mul(out, Tensor(weights)))


def _unary(op, rng, shape=(3, 4), positive=False, spread=1.0) -> Case:
    registry = _params(rng, x=shape)
    registry['x'].data = registry['x'].data * spread
    if positive:
        registry['x'].data = np.abs(registry['x'].data) + 0.5
    w = rng.normal(size=op(registry['x']).shape)
    return (lambda: _weighted(op(registry['x']), w)), registry


def _binary(op, rng, left=(3, 4), right=(3, 4)) -> Case:
    registry = _params(rng, a=left, b=right)
    w = rng.normal(size=left)
    return (lambda: _weighted(op(registry['a'], registry['b']), w)), registry


def op_cases(rng: np.random.Generator) -> List[Tuple[str, Case]]:
    """Scalar test objectives, one per op."""
    cases = [
        ('add', _binary(ops.add, rng)),
        ('add_channel', _binary(ops.add, rng, (2, 3, 2, 2), (3,))),
        ('sub', _binary(ops.sub, rng)),
        ('mul', _binary(ops.mul, rng)),
        ('mul_channel', _binary(ops.mul, rng, (4, 3), (3,))),
        ('scale', _unary(lambda t: ops.scale(t, -1.7), rng)),
        ('relu', _unary(ops.relu, rng)),
        ('exp', _unary(ops.exp, rng)),
        ('log', _unary(ops.log, rng, positive=True)),
        ('square', _unary(ops.square, rng)),
        ('clamp', _unary(lambda t: ops.clamp(t, -0.5, 0.5), rng)),
        ('reduce_sum', _unary(lambda t: ops.reduce_sum(t, axes=1), rng, shape=(3, 4))),
        ('reduce_mean', _unary(lambda t: ops.reduce_mean(t, axes=(0, 2)), rng, shape=(2, 3, 4))),
        ('sum_squares', _unary(ops.sum_squares, rng)),
        ('reshape', _unary(lambda t: ops.reshape(t, (4, 3)), rng)),
        ('slice', _unary(lambda t: ops.slice_axis(t, 2, 1, 3), rng, shape=(2, 2, 4, 2))),
        ('avg_pool2d', _unary(lambda t: ops.avg_pool2d(t, 2), rng, shape=(2, 2, 4, 2))),
        ('log_softmax', _unary(ops.log_softmax, rng, shape=(4, 5))),
        ('pairwise_distance', _unary(ops.pairwise_distance, rng, shape=(4, 3))),
        ('hard_sigmoid', _unary(lambda t: hard_sigmoid_op(t, 2.5), rng, shape=(6,), spread=3.0)),
    ]

    registry = _params(rng, a=(3, 4), b=(4, 2))
    w = rng.normal(size=(3, 2))
    cases.append(('matmul', ((lambda: _weighted(ops.matmul(registry['a'], registry['b']), w)), registry)))

    registry = _params(rng, a=(2, 3), b=(2, 2))
    w = rng.normal(size=(2, 5))
    cases.append(('concat', ((lambda: _weighted(ops.concat([registry['a'], registry['b']], axis=1), w)), registry)))

    registry = _params(rng, m=(4, 4))
    rows, cols = np.array([0, 1, 3, 3]), np.array([2, 2, 0, 3])
    w = rng.normal(size=4)
    cases.append(('take2d', ((lambda: _weighted(ops.take2d(registry['m'], rows, cols), w)), registry)))

    registry = _params(rng, x=(2, 3, 5, 4), k=(2, 3, 3, 3))
    w = rng.normal(size=(2, 2, 5, 4))
    cases.append(('conv2d', ((lambda: _weighted(ops.conv2d(registry['x'], registry['k'], 1, 1), w)), registry)))

    registry = _params(rng, x=(2, 2, 5, 5), k=(3, 2, 3, 3))
    w = rng.normal(size=(2, 3, 2, 2))
    cases.append(('conv2d_stride2', ((lambda: _weighted(ops.conv2d(registry['x'], registry['k'], 2, 0), w)), registry)))

    registry = _params(rng, x=(3, 2, 2, 2), gamma=(2,), beta=(2,))
    w = rng.normal(size=(3, 2, 2, 2))
    cases.append(('batch_norm_train', (
        (lambda: _weighted(ops.batch_norm(registry['x'], registry['gamma'], registry['beta'], 1e-5)[0], w)),
        registry)))

    registry = _params(rng, x=(4, 3), gamma=(3,), beta=(3,))
    mean, var = rng.normal(size=3), rng.uniform(0.5, 2.0, size=3)
    w = rng.normal(size=(4, 3))
    cases.append(('batch_norm_infer', (
        (lambda: _weighted(ops.batch_norm(registry['x'], registry['gamma'], registry['beta'], 1e-5, mean, var)[0], w)),
        registry)))

    registry = _params(rng, x=(3, 2, 2, 2), gamma=(2,), beta=(2,), b=(2,))
    w = rng.normal(size=(3, 2, 2, 2))
    cases.append(('batch_norm_shift_train', (
        (lambda: _weighted(ops.batch_norm(registry['x'], registry['gamma'], registry['beta'], 1e-5,
                                          shift=registry['b'])[0], w)),
        registry)))

    registry = _params(rng, x=(4, 3), gamma=(3,), beta=(3,), b=(3,))
    mean, var = rng.normal(size=3), rng.uniform(0.5, 2.0, size=3)
    w = rng.normal(size=(4, 3))
    cases.append(('batch_norm_shift_infer', (
        (lambda: _weighted(ops.batch_norm(registry['x'], registry['gamma'], registry['beta'], 1e-5,
                                          mean, var, shift=registry['b'])[0], w)),
        registry)))

    registry = _params(rng, z=(4, 5))
    targets = smoothed_labels([1, 3, 5, 2], SmoothingConfig(0.1, 5))
    cases.append(('cross_entropy', ((lambda: cross_entropy(registry['z'], targets)), registry)))

    registry = _params(rng, e=(6, 3))
    ids = np.array([1, 1, 2, 2, 3, 3])
    cases.append(('batch_hard_triplet', ((lambda: batch_hard_triplet(registry['e'], ids, TripletConfig(1.0))), registry)))

    registry = ParameterRegistry()
    registry.register('w1', Tensor(rng.normal(size=(3, 2))), descriptor=('dense', 'kernel'))
    registry.register('w2', Tensor(rng.normal(size=4)), descriptor=('batchnorm', 'gamma'))
    factors = build_factors(registry, amplitude=0.0025, half_width=2.5)
    for factor, theta in zip(factors, (0.7, -1.3)):
        factor.theta.data = np.array(theta)
    cases.append(('adaptive_penalty', ((lambda: ops.scale(adaptive_penalty(registry, factors), 100.0)), registry)))
    return cases


def objective_case(config: RunConfig, rng: np.random.Generator) -> Case:
    module = ObjectiveModule(4, 3, config.model, rng)
    registry = ParameterRegistry()
    module.register(registry, 'head')
    registry.register('fmap', Tensor(rng.uniform(0.0, 2.0, size=(4, 4, 2, 2))))
    ids = np.array([1, 1, 2, 2])
    targets = smoothed_labels(ids, SmoothingConfig(config.loss.label_smoothing, 3))

    def fn():
        out = objective_forward(module, registry['fmap'])
        return total_loss([cross_entropy(out.logits, targets)],
                          [batch_hard_triplet(out.embedding, ids, TripletConfig(config.loss.margin))])
    return fn, registry


def model_case(config: RunConfig, rng: np.random.Generator) -> Case:
    """Full objective (every CE and triplet term plus the penalty) on a P=2, K=2 batch."""
    num_classes = 3
    model = ReIDModel.build(config.model, config.reg, num_classes, rng)
    images = rng.uniform(0.0, 1.0, size=(4, 1, config.model.input_height, config.model.input_width))
    ids = np.array([1, 1, 2, 2])
    targets = smoothed_labels(ids, SmoothingConfig(config.loss.label_smoothing, num_classes))
    triplet = TripletConfig(config.loss.margin)

    def fn():
        outputs = model_forward(model, images, mode='train')
        ce = [cross_entropy(o.logits, targets) for o in outputs]
        tri = [batch_hard_triplet(o.embedding, ids, triplet) for o in outputs] if config.loss.triplet else []
        penalty = regularization_penalty(config.reg.mode, model.registry, model.factors, config.reg.constant_lambda)
        return total_loss(ce, tri, penalty)
    return fn, model.registry


def run_gradcheck_suite(config: RunConfig) -> List[GradCheckReport]:
    """Run every check with the ``gradcheck`` settings of ``config``."""
    gc = config.gradcheck
    rng = np.random.default_rng(gc.seed)
    cases = op_cases(rng)
    cases.append(('objective_module', objective_case(config, rng)))
    cases.append(('full_model', model_case(config, rng)))

    reports = []
    for label, (fn, registry) in cases:
        report = grad_check(fn, registry, h=gc.h, tol=gc.tol, atol=gc.atol, max_coords=gc.max_coords,
                            rng=np.random.default_rng([gc.seed, len(reports)]), label=label)
        logger.info(f"{label}: {'pass' if report.passed else 'FAIL'} max rel error {report.max_rel_error:.2e} "
                    f"({report.checked} checked, {len(report.excluded)} excluded)")
        reports.append(report)
    return reports
