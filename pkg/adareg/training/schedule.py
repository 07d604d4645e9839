"""Linear warmup followed by step decay at fixed milestones."""

from dataclasses import dataclass
from typing import Tuple

from adareg.config.run_config import TrainConfig
from adareg.utils.exceptions import ValidationError


@dataclass(frozen=True)
class LRSchedule:
    base_rate: float
    warmup_iters: int = 0
    warmup_start_factor: float = 0.1
    milestones: Tuple[int, ...] = ()
    decay: float = 0.1

    def __post_init__(self):
        if self.base_rate < 0:
            raise ValidationError(f"base learning rate must be >= 0, got {self.base_rate}")
        if self.warmup_iters < 0:
            raise ValidationError(f"warmup iterations must be >= 0, got {self.warmup_iters}")
        previous = self.warmup_iters
        for milestone in self.milestones:
            if milestone <= previous:
                raise ValidationError(
                    f"milestones must be strictly increasing and > warmup_iters, got {list(self.milestones)}")
            previous = milestone

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> 'LRSchedule':
        return cls(cfg.base_lr, cfg.warmup_iters, cfg.warmup_start_factor, tuple(cfg.milestones))


def lr_at(iteration: int, s: LRSchedule) -> float:
    """Learning rate used for the update at ``iteration``."""
    if iteration < 0:
        raise ValidationError(f"iteration must be >= 0, got {iteration}")
    if iteration < s.warmup_iters:
        f = s.warmup_start_factor
        return s.base_rate * (f + (1.0 - f) * iteration / s.warmup_iters)
    passed = sum(1 for m in s.milestones if m <= iteration)
    return s.base_rate * s.decay ** passed
