"""
Retrieval Metrics Module
Cosine distances, the cross-camera filter, average precision, CMC and the
evaluation driver.

Gallery ranking is by ascending distance with ties broken by gallery index.
Precision sums and means are accumulated left to right in rank and query order.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from adareg.config.run_config import PROTOCOLS
from adareg.utils.exceptions import NumericalError, ShapeError, ValidationError
from adareg.utils.logger import setup_logger

logger = setup_logger('Metrics')


@dataclass(frozen=True)
class SampleMeta:
    identity: int
    camera: int

    def __post_init__(self):
        if self.identity < 0 or self.camera < 0:
            raise ValidationError(f"identity and camera labels must be >= 0, got {self.identity}/{self.camera}")


def cosine_distance_matrix(Q: np.ndarray, G: np.ndarray) -> np.ndarray:
    """1 - cos(q_i, g_j), clipped to [0, 2]."""
    Q = np.asarray(Q, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    if Q.ndim != 2 or G.ndim != 2 or Q.shape[1] != G.shape[1]:
        raise ShapeError(f"distance needs q x D and g x D matrices, got {Q.shape} and {G.shape}")
    for label, M in (('query', Q), ('gallery', G)):
        norms = np.linalg.norm(M, axis=1)
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise ValidationError(f"{label} embedding {int(zero[0])} has zero norm")
    qn = Q / np.linalg.norm(Q, axis=1, keepdims=True)
    gn = G / np.linalg.norm(G, axis=1, keepdims=True)
    return np.clip(1.0 - qn @ gn.T, 0.0, 2.0)


def keep_mask(query_id: int, query_cam: int, gallery_ids: np.ndarray, gallery_cams: np.ndarray,
              mode: str = 'same_cam_same_id') -> np.ndarray:
    if mode == 'same_cam_same_id':
        return ~((gallery_ids == query_id) & (gallery_cams == query_cam))
    if mode == 'same_cam':
        return gallery_cams != query_cam
    raise ValidationError(f"unknown protocol '{mode}', expected one of {', '.join(PROTOCOLS)}")


def filter_valid(query: SampleMeta, gallery: Sequence[SampleMeta], mode: str = 'same_cam_same_id') -> np.ndarray:
    """Boolean mask of gallery samples that take part in ranking for ``query``."""
    if not gallery:
        raise ValidationError("gallery is empty")
    ids = np.array([g.identity for g in gallery])
    cams = np.array([g.camera for g in gallery])
    return keep_mask(query.identity, query.camera, ids, cams, mode)


def average_precision(relevance: Sequence[int]) -> Optional[float]:
    """Mean of precision@k over relevant ranks k; None when nothing is relevant."""
    hits = 0
    precision_sum = 0.0
    for k, rel in enumerate(relevance, start=1):
        if rel:
            hits += 1
            precision_sum += hits / k
    if hits == 0:
        return None
    return precision_sum / hits


def first_match_rank(relevance: Sequence[int]) -> Optional[int]:
    for k, rel in enumerate(relevance, start=1):
        if rel:
            return k
    return None


def cmc_from_ranks(first_ranks: Sequence[int], max_rank: int) -> np.ndarray:
    if not first_ranks:
        raise ValidationError("CMC needs at least one valid query")
    ranks = np.asarray(first_ranks)
    return np.array([np.count_nonzero(ranks <= k) / len(ranks) for k in range(1, max_rank + 1)])


def cmc(relevances: Sequence[Sequence[int]], max_rank: Optional[int] = None) -> np.ndarray:
    """CMC[k-1]: fraction of queries whose first relevant result is within rank k."""
    ranks = [first_match_rank(r) for r in relevances]
    if any(r is None for r in ranks):
        raise ValidationError("CMC is defined over valid queries only")
    if max_rank is None:
        max_rank = max(len(r) for r in relevances)
    return cmc_from_ranks(ranks, max_rank)


@dataclass
class EvalReport:
    protocol: str
    aps: List[Optional[float]]
    first_ranks: List[Optional[int]]
    mAP: float
    cmc: np.ndarray
    orders: List[np.ndarray] = field(default_factory=list)
    distances: Optional[np.ndarray] = None

    @property
    def num_valid_queries(self) -> int:
        return sum(1 for ap in self.aps if ap is not None)

    @property
    def num_dropped_queries(self) -> int:
        return len(self.aps) - self.num_valid_queries

    def rank(self, k: int) -> float:
        return float(self.cmc[min(k, len(self.cmc)) - 1])

    def summary(self) -> dict:
        return {
            'mAP': self.mAP,
            'rank1': self.rank(1),
            'rank5': self.rank(5),
            'rank10': self.rank(10),
            'num_valid_queries': self.num_valid_queries,
            'num_dropped_queries': self.num_dropped_queries,
            'protocol': self.protocol,
        }


def evaluate(query_emb: np.ndarray, query_ids: np.ndarray, query_cams: np.ndarray,
             gallery_emb: np.ndarray, gallery_ids: np.ndarray, gallery_cams: np.ndarray,
             protocol: str = 'same_cam_same_id', max_rank: int = 0) -> EvalReport:
    """Rank the gallery for every query and score the rankings.

    Args:
        max_rank: CMC length; 0 means the gallery size.

    Raises:
        NumericalError: If no query keeps a true match after filtering.
    """
    query_ids, query_cams = np.asarray(query_ids), np.asarray(query_cams)
    gallery_ids, gallery_cams = np.asarray(gallery_ids), np.asarray(gallery_cams)
    if len(query_ids) != len(query_emb) or len(query_cams) != len(query_emb):
        raise ShapeError("query embeddings and metadata have different lengths")
    if len(gallery_ids) != len(gallery_emb) or len(gallery_cams) != len(gallery_emb):
        raise ShapeError("gallery embeddings and metadata have different lengths")
    if len(gallery_emb) == 0:
        raise ValidationError("gallery is empty")
    if protocol not in PROTOCOLS:
        raise ValidationError(f"unknown protocol '{protocol}', expected one of {', '.join(PROTOCOLS)}")

    dist = cosine_distance_matrix(query_emb, gallery_emb)
    aps: List[Optional[float]] = []
    first_ranks: List[Optional[int]] = []
    orders: List[np.ndarray] = []
    for i in range(len(query_emb)):
        order = np.argsort(dist[i], kind='stable')
        order = order[keep_mask(query_ids[i], query_cams[i], gallery_ids[order], gallery_cams[order], protocol)]
        relevance = (gallery_ids[order] == query_ids[i]).astype(int)
        aps.append(average_precision(relevance))
        first_ranks.append(first_match_rank(relevance))
        orders.append(order)

    valid = [ap for ap in aps if ap is not None]
    dropped = len(aps) - len(valid)
    if not valid:
        raise NumericalError(f"no valid queries: all {len(aps)} queries lost their matches under '{protocol}'")
    if dropped:
        logger.warning(f"{dropped} of {len(aps)} queries have no valid match under '{protocol}' and were dropped")

    total = 0.0
    for ap in valid:
        total += ap
    curve = cmc_from_ranks([r for r in first_ranks if r is not None], max_rank or len(gallery_emb))
    return EvalReport(protocol, aps, first_ranks, total / len(valid), curve, orders, dist)
