"""Scenario-aware scoring and two-stage retrieval over a DualIndex.

Final score per document is ``alpha * doc_score + (1 - alpha) * best_unit_score``.
Documents without units keep their plain document score. Scenario scores are
computed only for the top-``k_prime`` candidates by document score.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .embedding import QUERY, EmbeddingProviderConfig, cosine_scores, make_provider
from .index import DualIndex
from .model import ContractError, RankedList

logger = logging.getLogger(__name__)

NEG_SENTINEL = -np.inf
ALL = None


@dataclass(frozen=True)
class RetrievalParams:
    alpha: float = 0.7
    k: int = 10
    k_prime: Optional[int] = 1000  # None means all documents

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.k <= 0:
            raise ContractError("k must be positive")
        if self.k_prime is not None:
            if self.k_prime <= 0:
                raise ContractError("k_prime must be positive")
            if self.k > self.k_prime:
                raise ContractError(f"k ({self.k}) must not exceed k_prime ({self.k_prime})")


@dataclass(frozen=True)
class Hit:
    doc_id: str
    score: float
    doc_score: float
    scenario_score: Optional[float]
    unit_index: Optional[int]


def _check_dim(query_vec: np.ndarray, index: DualIndex) -> np.ndarray:
    query_vec = np.asarray(query_vec)
    if query_vec.shape != (index.dim,):
        raise ContractError(f"query dim {query_vec.shape} does not match index dim {index.dim}")
    return query_vec


def score_documents(query_vec: np.ndarray, index: DualIndex) -> np.ndarray:
    return cosine_scores(index.doc_vectors, _check_dim(query_vec, index))


def max_scenario_score(query_vec: np.ndarray, index: DualIndex,
                       doc_subset: Optional[Sequence[int]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Best unit score per document in ``doc_subset`` (all documents if None).

    Returns ``(scores, winners)`` aligned with the subset; documents without
    units get ``NEG_SENTINEL`` and winner ``-1``.
    """
    query_vec = _check_dim(query_vec, index)
    subset = np.arange(index.num_docs) if doc_subset is None else np.asarray(doc_subset, dtype=np.int64)
    ranges = index.doc_units[subset]
    counts = ranges[:, 1] - ranges[:, 0]
    best = np.full(len(subset), NEG_SENTINEL)
    winners = np.full(len(subset), -1, dtype=np.int64)
    if counts.sum() == 0:
        return best, winners
    unit_rows = np.concatenate([np.arange(s, e) for s, e in ranges])
    unit_scores = cosine_scores(index.unit_vectors[unit_rows], query_vec)
    has_units = counts > 0
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    best[has_units] = np.maximum.reduceat(unit_scores, starts[has_units])
    for pos in np.nonzero(has_units)[0]:
        seg = unit_scores[starts[pos]:starts[pos] + counts[pos]]
        # first unit among equal maxima wins
        winners[pos] = unit_rows[starts[pos] + int(np.argmax(seg))]
    return best, winners


def final_scores(r_d: np.ndarray, r_s_max: np.ndarray, alpha: float) -> np.ndarray:
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must be in [0, 1], got {alpha}")
    r_d = np.asarray(r_d, dtype=np.float64)
    r_s_max = np.asarray(r_s_max, dtype=np.float64)
    if r_d.shape != r_s_max.shape:
        raise ContractError("score arrays are not aligned")
    has = np.isfinite(r_s_max)
    out = r_d.copy()
    # endpoints copy exactly (no 0 * x terms, so signed zeros survive)
    if alpha == 0.0:
        out[has] = r_s_max[has]
    elif alpha != 1.0:
        out[has] = alpha * r_d[has] + (1.0 - alpha) * r_s_max[has]
    return out


def candidate_set(r_d: np.ndarray, k_prime: Optional[int]) -> np.ndarray:
    """Indices (ascending) of the top-``k_prime`` documents by score, keeping all ties at the cut."""
    n = len(r_d)
    if k_prime is None or k_prime >= n:
        return np.arange(n)
    threshold = np.partition(r_d, n - k_prime)[n - k_prime]
    return np.nonzero(r_d >= threshold)[0]


def rank(positions: np.ndarray, scores: np.ndarray, k: int) -> np.ndarray:
    """Order ``positions`` by descending score, ties by ascending doc id; keep top ``k``.

    Index doc ids are sorted, so ascending position is ascending doc id.
    """
    order = np.lexsort((positions, -scores))
    return order[:k]


def search_vector(query_vec: np.ndarray, index: DualIndex, params: RetrievalParams) -> List[Hit]:
    r_d = score_documents(query_vec, index)
    candidates = candidate_set(r_d, params.k_prime)
    r_s, winners = max_scenario_score(query_vec, index, candidates)
    r_final = final_scores(r_d[candidates], r_s, params.alpha)
    top = rank(candidates, r_final, params.k)
    hits = []
    for j in top:
        pos = candidates[j]
        has = winners[j] >= 0
        hits.append(Hit(
            doc_id=index.doc_ids[pos],
            score=float(r_final[j]),
            doc_score=float(r_d[pos]),
            scenario_score=float(r_s[j]) if has else None,
            unit_index=int(winners[j]) if has else None,
        ))
    return hits


def embed_query(query_text: str, provider_cfg: EmbeddingProviderConfig, index: Optional[DualIndex] = None,
                provider=None) -> np.ndarray:
    if index is not None and provider_cfg.fingerprint != index.provider_fingerprint:
        logger.warning("query provider fingerprint %s differs from index fingerprint %s",
                       provider_cfg.fingerprint, index.provider_fingerprint)
    provider = provider or make_provider(provider_cfg)
    return provider.embed([query_text], QUERY)[0]


def to_ranked_list(query_id: str, hits: Sequence[Hit]) -> RankedList:
    return RankedList(query_id, tuple((h.doc_id, h.score) for h in hits))


def retrieve(query_text: str, index: DualIndex, params: RetrievalParams, provider_cfg: EmbeddingProviderConfig,
             query_id: str = "q", provider=None) -> RankedList:
    query_vec = embed_query(query_text, provider_cfg, index, provider)
    return to_ranked_list(query_id, search_vector(query_vec, index, params))
