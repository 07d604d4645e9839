"""Identity-balanced P x K batch sampling."""

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from adareg.utils.exceptions import ValidationError


@dataclass(frozen=True)
class PKConfig:
    P: int = 4
    K: int = 4

    def __post_init__(self):
        if self.P < 2 or self.K < 2:
            raise ValidationError(f"PK sampling needs P >= 2 and K >= 2, got P={self.P} K={self.K}")

    @property
    def batch_size(self) -> int:
        return self.P * self.K


def pk_sample(groups: Mapping[int, Sequence[int]], cfg: PKConfig, rng: np.random.Generator) -> np.ndarray:
    """Draw P distinct identities and K sample indices of each.

    Identities with fewer than K samples are drawn with replacement.

    Args:
        groups: sample indices per identity (see ``Dataset.identity_groups``).
        cfg: batch geometry.
        rng: sampling stream.

    Returns:
        np.ndarray: P*K sample indices, grouped by identity.
    """
    identities = sorted(k for k, v in groups.items() if len(v))
    if len(identities) < cfg.P:
        raise ValidationError(f"PK sampling needs {cfg.P} identities, dataset has {len(identities)}")
    chosen = rng.choice(len(identities), size=cfg.P, replace=False)
    batch = []
    for position in chosen:
        members = np.asarray(groups[identities[position]])
        batch.append(rng.choice(members, size=cfg.K, replace=len(members) < cfg.K))
    return np.concatenate(batch).astype(np.int64)
