"""Text embedding providers and the similarity primitives used for scoring.

Two providers exist: a deterministic feature-hashing embedder for offline use
and tests, and an HTTP client for hosted embedding endpoints that accept
``{"model", "input": [...]}`` and answer ``{"data": [{"embedding": [...]}]}``.
All vectors are float32 and L2-normalized; similarities accumulate in float64.
"""
from __future__ import annotations

import functools
import hashlib
import logging
import os
import threading
import time
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import httpx
import numpy as np

from .model import ContractError, SpikeError

logger = logging.getLogger(__name__)

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

# rows per chunk when scoring large matrices; bounds float64 scratch memory
_SCORE_CHUNK = 8192

QUERY = "query"
PASSAGE = "passage"
RETRYABLE_STATUS = frozenset({408, 409, 425, 429, 500, 502, 503, 504})


class ProviderError(SpikeError):
    def __init__(self, message: str, status: Optional[int] = None, body: str = ""):
        self.status = status
        self.body = body
        super().__init__(message)


@dataclass(frozen=True)
class EmbeddingProviderConfig:
    kind: str = "deterministic_hash"
    endpoint: Optional[str] = None
    model_name: Optional[str] = None
    dim: int = 256
    batch_size: int = 32
    query_instruction: Optional[str] = None
    max_retries: int = 3
    timeout: float = 30.0
    max_in_flight: int = 4
    backoff_base: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in ("deterministic_hash", "remote_http"):
            raise ContractError(f"unknown embedding provider kind {self.kind!r}")
        if self.dim <= 0 or self.batch_size <= 0:
            raise ContractError("dim and batch_size must be positive")
        if self.kind == "remote_http" and not (self.endpoint and self.model_name):
            raise ContractError("remote_http provider requires endpoint and model_name")

    @classmethod
    def from_env(cls, **overrides) -> "EmbeddingProviderConfig":
        endpoint = os.environ.get("EMBEDDING_ENDPOINT")
        if endpoint and "endpoint" not in overrides:
            overrides["endpoint"] = endpoint
        return cls(**overrides)

    @property
    def fingerprint(self) -> str:
        key = "|".join([self.kind, self.model_name or "", str(self.dim), self.query_instruction or ""])
        return hashlib.sha256(key.encode("utf-8")).hexdigest()[:16]


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


@functools.lru_cache(maxsize=1 << 16)
def _bucket(token: str, dim: int) -> int:
    return fnv1a_64(token.encode("utf-8")) % dim


def hash_embed(text: str, dim: int = 256) -> np.ndarray:
    """Bag-of-tokens feature hashing, L2-normalized. Empty input gives zeros."""
    vec = np.zeros(dim, dtype=np.float64)
    for token in text.lower().split():
        vec[_bucket(token, dim)] += 1.0
    norm = np.sqrt(np.dot(vec, vec))
    if norm > 0:
        vec /= norm
    return vec.astype(np.float32)


def is_degenerate(vec: np.ndarray) -> bool:
    return not np.any(vec)


def l2_normalize(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.sqrt((matrix * matrix).sum(axis=-1, keepdims=True))
    norms[norms == 0] = 1.0
    return (matrix / norms).astype(np.float32)


def row_dots(matrix: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """float64 dot of every row with ``vec``.

    Each row is reduced independently in index order, so a row's score does
    not depend on which other rows are in ``matrix``.
    """
    matrix = np.asarray(matrix)
    vec = np.asarray(vec, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != vec.shape[0]:
        raise ContractError(f"dimension mismatch: matrix {matrix.shape} vs vector {vec.shape}")
    out = np.empty(matrix.shape[0], dtype=np.float64)
    for start in range(0, matrix.shape[0], _SCORE_CHUNK):
        block = matrix[start:start + _SCORE_CHUNK].astype(np.float64)
        out[start:start + _SCORE_CHUNK] = np.multiply(block, vec).sum(axis=1)
    return out


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.sqrt(np.multiply(a, a).sum())
    nb = np.sqrt(np.multiply(b, b).sum())
    if na == 0 or nb == 0:
        return 0.0
    # product is commutative elementwise, so the reduction is symmetric in (a, b)
    dot = np.multiply(a, b).sum()
    return float(np.clip(dot / (na * nb), -1.0, 1.0))


def cosine_scores(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Cosine of ``query`` against each row. Zero rows (or a zero query) score 0."""
    query = np.asarray(query, dtype=np.float64)
    qn = np.sqrt(np.multiply(query, query).sum())
    dots = row_dots(matrix, query)
    if qn == 0:
        return np.zeros_like(dots)
    norms = np.sqrt(row_dots_self(matrix))
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(norms > 0, dots / (norms * qn), 0.0)
    return np.clip(scores, -1.0, 1.0)


def row_dots_self(matrix: np.ndarray) -> np.ndarray:
    out = np.empty(matrix.shape[0], dtype=np.float64)
    for start in range(0, matrix.shape[0], _SCORE_CHUNK):
        block = matrix[start:start + _SCORE_CHUNK].astype(np.float64)
        out[start:start + _SCORE_CHUNK] = np.multiply(block, block).sum(axis=1)
    return out


class HashEmbedder:
    def __init__(self, config: EmbeddingProviderConfig):
        self.config = config

    def embed(self, texts: Sequence[str], role: str = PASSAGE) -> np.ndarray:
        texts = _apply_role(texts, self.config, role)
        out = np.zeros((len(texts), self.config.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            out[i] = hash_embed(text, self.config.dim)
            if is_degenerate(out[i]):
                logger.warning("text %d has no tokens; emitting a zero vector", i)
        return out


class HttpEmbedder:
    """Batched client for an embeddings endpoint with retry and backoff."""

    def __init__(self, config: EmbeddingProviderConfig, transport: Optional[httpx.BaseTransport] = None,
                 sleep=time.sleep):
        self.config = config
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get("EMBEDDING_API_KEY")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(headers=headers, timeout=config.timeout, transport=transport)
        self._slots = threading.BoundedSemaphore(max(1, config.max_in_flight))
        self._sleep = sleep

    def close(self) -> None:
        self._client.close()

    def embed(self, texts: Sequence[str], role: str = PASSAGE) -> np.ndarray:
        texts = _apply_role(texts, self.config, role)
        batches: List[np.ndarray] = []
        for start in range(0, len(texts), self.config.batch_size):
            batches.append(self._embed_batch(texts[start:start + self.config.batch_size]))
        return np.concatenate(batches, axis=0) if batches else np.zeros((0, self.config.dim), np.float32)

    def _embed_batch(self, batch: List[str]) -> np.ndarray:
        payload = {"model": self.config.model_name, "input": batch}
        data = self._post(payload)
        try:
            rows = [item["embedding"] for item in data["data"]]
        except (KeyError, TypeError) as exc:
            raise ProviderError(f"malformed embeddings response: {exc!r}") from exc
        if len(rows) != len(batch):
            raise ContractError(f"endpoint returned {len(rows)} embeddings for {len(batch)} inputs")
        matrix = np.asarray(rows, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != self.config.dim:
            raise ContractError(f"endpoint returned dim {matrix.shape[-1]}, expected {self.config.dim}")
        if not np.all(np.isfinite(matrix)):
            raise ContractError("endpoint returned non-finite embedding values")
        return l2_normalize(matrix)

    def _post(self, payload: dict) -> dict:
        attempts = self.config.max_retries + 1
        for attempt in range(attempts):
            last = attempt == attempts - 1
            try:
                with self._slots:
                    resp = self._client.post(self.config.endpoint, json=payload)
            except httpx.TransportError as exc:
                if last:
                    raise ProviderError(f"embedding request failed after {attempts} attempts: {exc}") from exc
            else:
                if resp.status_code < 400:
                    return resp.json()
                if resp.status_code not in RETRYABLE_STATUS or last:
                    raise ProviderError(f"embedding endpoint returned HTTP {resp.status_code}",
                                        status=resp.status_code, body=resp.text[:500])
            self._sleep(self.config.backoff_base * (2 ** attempt))
        raise AssertionError("unreachable")


def _apply_role(texts: Sequence[str], config: EmbeddingProviderConfig, role: str) -> List[str]:
    if role not in (QUERY, PASSAGE):
        raise ContractError(f"role must be 'query' or 'passage', got {role!r}")
    texts = list(texts)
    if role == QUERY and config.query_instruction:
        return [config.query_instruction + t for t in texts]
    return texts


def make_provider(config: EmbeddingProviderConfig, **kwargs):
    if config.kind == "deterministic_hash":
        return HashEmbedder(config)
    return HttpEmbedder(config, **kwargs)


def embed_batch(texts: Sequence[str], config: EmbeddingProviderConfig, role: str = PASSAGE,
                provider=None) -> np.ndarray:
    """Embed ``texts`` into a ``[len(texts), dim]`` float32 matrix."""
    if not texts:
        raise ContractError("embed_batch needs at least one text")
    provider = provider or make_provider(config)
    return provider.embed(texts, role)


def with_instruction(config: EmbeddingProviderConfig, instruction: Optional[str]) -> EmbeddingProviderConfig:
    return replace(config, query_instruction=instruction)
