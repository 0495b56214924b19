"""Question-aware chunk relevance scoring and top-k selection.

Scores are mean negative log-probabilities per token (lower = more
relevant) of the question plus a fixed restrictive statement conditioned
on each chunk. Backends: the remote scorer sidecar, an embedding-cosine
fallback (score = 1 - cosine), or a scripted table for tests. Ranking is
invariant under any strictly increasing transform of the scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import requests

from .documents import Chunk
from .embeddings import CosineSimilarity, EmbeddingBackend
from .errors import BackendUnavailable, ScoreLengthMismatch

# Fixed regularization sentence appended to the question when scoring.
RESTRICT_STATEMENT = "We can get the answer to this question in the given documents"


@dataclass(frozen=True)
class RelevanceQuery:
    question: str
    chunks: tuple[Chunk, ...]
    restrict: str = RESTRICT_STATEMENT

    def __post_init__(self) -> None:
        if not self.question:
            raise ValueError("relevance query needs a non-empty question")
        if not self.chunks:
            raise ValueError("relevance query needs at least one chunk")

    @property
    def target_text(self) -> str:
        return self.question + " " + self.restrict


@dataclass(frozen=True)
class ChunkScore:
    chunk_index: int
    score: float


class ScriptedScorer:
    """Pass-through backend returning a fixed score list."""

    def __init__(self, scores: list[float]) -> None:
        self.scores = list(scores)

    def score(self, query: RelevanceQuery) -> list[float]:
        return list(self.scores)


class EmbeddingCosineScorer:
    """Fallback: 1 - cosine(question, chunk text) via any embedding backend."""

    def __init__(self, embedding: EmbeddingBackend) -> None:
        self.similarity = CosineSimilarity(embedding)

    def score(self, query: RelevanceQuery) -> list[float]:
        return [
            1.0 - self.similarity.sim(query.question, chunk.text)
            for chunk in query.chunks
        ]


class RemoteScorer:
    """Client for the scorer service's `/v1/ppl` endpoint."""

    def __init__(
        self,
        base_url: str,
        timeout: float = 300.0,
        session: requests.Session | None = None,
        shared_secret: str | None = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.session = session or requests.Session()
        self.shared_secret = shared_secret

    def score(self, query: RelevanceQuery) -> list[float]:
        headers = {}
        if self.shared_secret:
            headers["X-Scorer-Secret"] = self.shared_secret
        try:
            response = self.session.post(
                f"{self.base_url}/v1/ppl",
                json={
                    "question": query.question,
                    "restrict": query.restrict,
                    "chunks": [chunk.text for chunk in query.chunks],
                },
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise BackendUnavailable(f"scorer service unreachable: {exc}") from exc
        if response.status_code != 200:
            raise BackendUnavailable(
                f"scorer service returned {response.status_code}: {response.text[:200]}"
            )
        return [float(s) for s in response.json()["scores"]]


def score_chunks(query: RelevanceQuery, backend) -> list[ChunkScore]:
    """Score every chunk for the query, order preserved."""
    raw = backend.score(query)
    if len(raw) != len(query.chunks):
        raise ScoreLengthMismatch(
            f"backend returned {len(raw)} scores for {len(query.chunks)} chunks"
        )
    for value in raw:
        if not math.isfinite(value):
            raise BackendUnavailable(f"backend produced a non-finite score: {value!r}")
    return [
        ChunkScore(chunk_index=chunk.index, score=float(value))
        for chunk, value in zip(query.chunks, raw)
    ]


def select_top_k(scores: list[ChunkScore], k: int) -> list[int]:
    """Indices of the min(k, n) lowest-scoring chunks, in rank order.

    Ties break toward the lower chunk index (document order).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ranked = sorted(scores, key=lambda s: (s.score, s.chunk_index))
    return [s.chunk_index for s in ranked[: min(k, len(ranked))]]
