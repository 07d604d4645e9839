"""Batch sampling, augmentation, learning-rate schedule, optimizer and the training loop."""

from adareg.training.augment import augment, augment_batch
from adareg.training.optimizer import SGD
from adareg.training.sampler import PKConfig, pk_sample
from adareg.training.schedule import LRSchedule, lr_at
from adareg.training.trainer import Trainer, compare_collapse, run_training, train_step

__all__ = [
    'LRSchedule',
    'PKConfig',
    'SGD',
    'Trainer',
    'augment',
    'augment_batch',
    'compare_collapse',
    'lr_at',
    'pk_sample',
    'run_training',
    'train_step',
]
