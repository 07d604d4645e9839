"""
Trainer Module
One optimization step over the full objective and the deterministic training loop.

Random streams are derived from ``train.seed``: one for initialization, one for
PK sampling and one seed for augmentation, where image i of iteration t uses
its own stream (seed, t, i).
"""

from dataclasses import dataclass, field
import os
from typing import Dict, List, Optional, Tuple

import numpy as np

from adareg.autodiff.tensor import Tape, Tensor
from adareg.config.run_config import RunConfig
from adareg.data.synth import Dataset
from adareg.losses import (
    SmoothingConfig,
    TripletConfig,
    batch_hard_triplet,
    cross_entropy,
    smoothed_labels,
    total_loss,
)
from adareg.model.checkpoint import save_checkpoint
from adareg.model.topology import ReIDModel, model_forward
from adareg.regularization.analysis import RegSnapshot, take_snapshot, write_snapshot_log
from adareg.regularization.factors import effective_lambda, regularization_penalty
from adareg.training.augment import augment_batch
from adareg.training.optimizer import SGD
from adareg.training.sampler import PKConfig, pk_sample
from adareg.training.schedule import LRSchedule, lr_at
from adareg.utils.exceptions import NonFiniteLossError, ValidationError
from adareg.utils.logger import setup_logger
from adareg.utils.results_handler import save_effective_config, save_json, write_csv

logger = setup_logger('Trainer')

LOSS_LOG_HEADER = ('iteration', 'lr', 'ce_total', 'triplet_total', 'penalty', 'total')
DIAGNOSTICS_HEADER = ('iteration', 'weight_sq_norm', 'min_theta', 'min_lambda', 'max_lambda')

CHECKPOINT_FILE = 'checkpoint.bin'
LOSS_LOG_FILE = 'loss_log.csv'
DIAGNOSTICS_FILE = 'diagnostics.csv'
SNAPSHOT_FILE = 'reg_snapshots.csv'
FAILURE_FILE = 'failure.json'


@dataclass
class StepResult:
    total: float
    ce_total: float
    triplet_total: float
    penalty: float
    grad_norms: Dict[str, float] = field(default_factory=dict)


def _finite_or_raise(terms: Dict[str, float], iteration: int) -> None:
    bad = [name for name, value in terms.items() if not np.isfinite(value)]
    if bad:
        raise NonFiniteLossError(
            f"non-finite loss at iteration {iteration}: {', '.join(bad)}", terms, iteration)


def train_step(model: ReIDModel, images: np.ndarray, labels: np.ndarray, config: RunConfig,
               optimizer: SGD, lr: float, iteration: int = 0) -> StepResult:
    """Forward the objective, backpropagate and update weights and factors.

    Args:
        images: N x 1 x H x W batch.
        labels: 1-based training identities of the batch.

    Raises:
        NonFiniteLossError: If any loss term is not finite; parameters and batch-norm
            running statistics are left untouched.
    """
    running = {prefix: (bn.running_mean, bn.running_var) for prefix, bn in model.batchnorms().items()}
    try:
        return _step(model, images, labels, config, optimizer, lr, iteration)
    except NonFiniteLossError:
        for prefix, bn in model.batchnorms().items():
            bn.running_mean, bn.running_var = running[prefix]
        raise


def _step(model: ReIDModel, images: np.ndarray, labels: np.ndarray, config: RunConfig,
          optimizer: SGD, lr: float, iteration: int) -> StepResult:
    loss_cfg = config.loss
    with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
        with Tape(model.registry) as tape:
            outputs = model_forward(model, images, mode='train')
            logit_values = {f"{o.name}_logits": float(np.max(np.abs(o.logits.data))) for o in outputs}
            _finite_or_raise(logit_values, iteration)

            targets = smoothed_labels(labels, SmoothingConfig(loss_cfg.label_smoothing, model.num_classes))
            ce_terms = [cross_entropy(o.logits, targets) for o in outputs]
            triplet_terms = []
            if loss_cfg.triplet:
                triplet = TripletConfig(loss_cfg.margin)
                triplet_terms = [batch_hard_triplet(o.embedding, labels, triplet) for o in outputs]
            penalty = regularization_penalty(config.reg.mode, model.registry, model.factors,
                                             config.reg.constant_lambda)
            if loss_cfg.mask_task_losses:
                if penalty is None:
                    raise ValidationError("loss.mask_task_losses needs a regularizer mode other than 'off'")
                total = total_loss([], [], penalty)
            else:
                total = total_loss(ce_terms, triplet_terms, penalty)

        terms = {
            'ce_total': float(sum(t.item() for t in ce_terms)),
            'triplet_total': float(sum(t.item() for t in triplet_terms)),
            'penalty': penalty.item() if penalty is not None else 0.0,
            'total': total.item(),
        }
        _finite_or_raise(terms, iteration)
        grads = tape.backward(total)

    thetas = {f.theta.name for f in model.factors}
    weight_sq = sum(float(np.sum(g * g)) for name, g in grads.items() if name not in thetas)
    theta_sq = sum(float(np.sum(grads[name] ** 2)) for name in thetas)
    optimizer.step(grads, lr)
    return StepResult(terms['total'], terms['ce_total'], terms['triplet_total'], terms['penalty'],
                      {'weights': float(np.sqrt(weight_sq)), 'thetas': float(np.sqrt(theta_sq))})


def weight_statistics(model: ReIDModel, config: RunConfig) -> Tuple[float, float, float, float]:
    """(sum of squared regularized weights, min theta, min factor, max factor)."""
    weight_sq = 0.0
    for entry in model.registry.regularized():
        weight_sq += float(np.sum(entry.tensor.data ** 2))
    if not model.factors:
        return weight_sq, 0.0, 0.0, 0.0
    thetas = [f.theta.item() for f in model.factors]
    lambdas = [effective_lambda(f, config.reg.mode, config.reg.constant_lambda) for f in model.factors]
    return weight_sq, min(thetas), min(lambdas), max(lambdas)


@dataclass
class TrainingResult:
    model: ReIDModel
    iterations: int
    snapshots: List[RegSnapshot]
    loss_log: List[tuple]
    diagnostics: List[tuple]
    checkpoint_path: Optional[str] = None


class Trainer:
    """Stateful training loop; ``run`` writes logs and the final checkpoint to ``out_dir``."""

    def __init__(self, config: RunConfig, dataset: Dataset, out_dir: Optional[str] = None):
        self.config = config
        self.dataset = dataset
        self.out_dir = out_dir
        if (dataset.height, dataset.width) != (config.model.input_height, config.model.input_width):
            raise ValidationError(
                f"dataset images are {dataset.height}x{dataset.width}, model expects "
                f"{config.model.input_height}x{config.model.input_width}")

        init_seq, sample_seq, aug_seq = np.random.SeedSequence(config.train.seed).spawn(3)
        self.sample_rng = np.random.default_rng(sample_seq)
        self.aug_seed = int(aug_seq.generate_state(1)[0])

        self.groups = dataset.identity_groups('train')
        self.model = ReIDModel.build(config.model, config.reg, dataset.num_classes(),
                                     np.random.default_rng(init_seq))
        scales = {f.theta.name: config.reg.theta_lr_scale for f in self.model.factors}
        self.optimizer = SGD(self.model.registry, config.train.momentum, scales)
        self.schedule = LRSchedule.from_config(config.train)
        self.pk = PKConfig(config.train.P, config.train.K)

        self.iteration = 0
        self.snapshots: List[RegSnapshot] = []
        self.loss_log: List[tuple] = []
        self.diagnostics: List[tuple] = []

    def snapshot(self) -> None:
        self.snapshots.append(take_snapshot(self.iteration, self.model.factors, self.config.reg.mode,
                                            self.config.reg.constant_lambda))

    def step(self) -> StepResult:
        it = self.iteration
        lr = lr_at(it, self.schedule)
        indices = pk_sample(self.groups, self.pk, self.sample_rng)
        images = augment_batch(self.dataset.images[indices], self.config.aug, self.aug_seed, it)
        labels = self.dataset.identities[indices]
        self.diagnostics.append((it,) + weight_statistics(self.model, self.config))
        try:
            result = train_step(self.model, images[:, None, :, :], labels, self.config,
                                self.optimizer, lr, it)
        except NonFiniteLossError as e:
            e.payload['lr'] = lr
            raise
        self.loss_log.append((it, lr, result.ce_total, result.triplet_total, result.penalty, result.total))
        if it % self.config.train.log_every == 0:
            logger.info(f"iter {it} lr {lr:.3e} total {result.total:.5f} ce {result.ce_total:.5f} "
                        f"triplet {result.triplet_total:.5f} penalty {result.penalty:.6f}")
        self.iteration += 1
        return result

    def run(self, iterations: Optional[int] = None) -> TrainingResult:
        total = self.config.train.iterations if iterations is None else iterations
        every = self.config.train.snapshot_every
        logger.info(f"Training {total} iterations, regularizer '{self.config.reg.mode}', "
                    f"{len(self.model.factors)} factors")
        try:
            while self.iteration < total:
                if self.iteration % every == 0:
                    self.snapshot()
                self.step()
            if self.iteration % every == 0:
                self.snapshot()
        except NonFiniteLossError as e:
            logger.error(e.message)
            if self.out_dir:
                self.write_logs()
                save_json(e.to_dict(), os.path.join(self.out_dir, FAILURE_FILE))
            raise

        checkpoint_path = None
        if self.out_dir:
            self.write_logs()
            checkpoint_path = save_checkpoint(os.path.join(self.out_dir, CHECKPOINT_FILE),
                                              self.model, self.config, self.iteration)
        return TrainingResult(self.model, self.iteration, self.snapshots, self.loss_log,
                              self.diagnostics, checkpoint_path)

    def write_logs(self) -> None:
        save_effective_config(self.config, self.out_dir)
        write_csv(os.path.join(self.out_dir, LOSS_LOG_FILE), LOSS_LOG_HEADER, self.loss_log)
        write_csv(os.path.join(self.out_dir, DIAGNOSTICS_FILE), DIAGNOSTICS_HEADER, self.diagnostics)
        write_snapshot_log(os.path.join(self.out_dir, SNAPSHOT_FILE), self.snapshots)


def run_training(config: RunConfig, dataset: Dataset, out_dir: Optional[str] = None) -> TrainingResult:
    """Train from scratch; identical config and data give bit-identical outputs."""
    return Trainer(config, dataset, out_dir).run()


@dataclass
class CollapseReport:
    iterations: int
    compared_at: int
    adaptive_weight_sq: float
    unconstrained_weight_sq: float
    unconstrained_min_theta: float
    adaptive_min_penalty: float
    diverged_at: Optional[int] = None

    @property
    def ratio(self) -> float:
        if self.adaptive_weight_sq == 0:
            return float('inf')
        return self.unconstrained_weight_sq / self.adaptive_weight_sq

    def to_dict(self) -> Dict[str, object]:
        return {
            'iterations': self.iterations,
            'compared_at': self.compared_at,
            'adaptive_weight_sq': self.adaptive_weight_sq,
            'unconstrained_weight_sq': self.unconstrained_weight_sq,
            'weight_sq_ratio': self.ratio,
            'unconstrained_min_theta': self.unconstrained_min_theta,
            'adaptive_min_penalty': self.adaptive_min_penalty,
            'diverged_at': self.diverged_at,
        }


def compare_collapse(config: RunConfig, dataset: Dataset, iterations: int = 200) -> CollapseReport:
    """Train adaptive and unconstrained regularizers side by side from the same seed.

    The unconstrained run is expected to blow up; weight norms are compared at
    the last iteration both runs reached with finite weights.
    """
    adaptive = Trainer(config.with_overrides({'reg.mode': 'adaptive'}), dataset)
    adaptive.run(iterations)
    unconstrained = Trainer(config.with_overrides({'reg.mode': 'unconstrained'}), dataset)
    diverged_at = None
    try:
        unconstrained.run(iterations)
    except NonFiniteLossError as e:
        diverged_at = e.iteration
        logger.warning(f"Unconstrained run diverged at iteration {e.iteration}")

    finite = [row for row in unconstrained.diagnostics if np.isfinite(row[1])]
    if not finite:
        raise ValidationError("unconstrained run produced no finite diagnostics")
    compared_at = finite[-1][0]
    adaptive_row = adaptive.diagnostics[compared_at]
    report = CollapseReport(
        iterations=iterations,
        compared_at=compared_at,
        adaptive_weight_sq=adaptive_row[1],
        unconstrained_weight_sq=finite[-1][1],
        unconstrained_min_theta=min(row[2] for row in unconstrained.diagnostics),
        adaptive_min_penalty=min(row[4] for row in adaptive.loss_log) if adaptive.loss_log else 0.0,
        diverged_at=diverged_at,
    )
    logger.info(f"Collapse comparison at iteration {compared_at}: weight norm ratio {report.ratio:.3g}")
    return report
