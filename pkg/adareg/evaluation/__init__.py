"""Cross-camera retrieval evaluation (mAP and CMC)."""

from adareg.evaluation.metrics import (
    EvalReport,
    SampleMeta,
    average_precision,
    cmc,
    cosine_distance_matrix,
    evaluate,
    filter_valid,
)

__all__ = [
    'EvalReport',
    'SampleMeta',
    'average_precision',
    'cmc',
    'cosine_distance_matrix',
    'evaluate',
    'filter_valid',
]
