"""Re-identification model topology and checkpoints."""

from adareg.model.topology import (
    ObjectiveModule,
    ObjectiveOutput,
    ReIDModel,
    extract_embeddings,
    model_forward,
    objective_forward,
    slice_stripes,
)

__all__ = [
    'ObjectiveModule',
    'ObjectiveOutput',
    'ReIDModel',
    'extract_embeddings',
    'model_forward',
    'objective_forward',
    'slice_stripes',
]
