"""Embedding backends and cosine-similarity plumbing.

The default `HashEmbedding` is a self-contained feature-hashed character
n-gram embedder: deterministic, dependency-free, unit-norm. It stands in
wherever a sentence-embedding model would be configured in a real
deployment (the remote scorer service or any provider exposing the same
wire shape).
"""

from __future__ import annotations

import hashlib
from typing import Iterable, Protocol

import numpy as np
import requests

from .errors import BackendUnavailable, EmbeddingBackendUnavailable


class EmbeddingBackend(Protocol):
    def embed(self, texts: list[str]) -> np.ndarray:
        """Rows are unit-norm vectors, one per input text."""
        ...


class HashEmbedding:
    """Deterministic character n-gram hashing into a fixed-width space."""

    def __init__(self, dim: int = 256, ngram_sizes: Iterable[int] = (2, 3, 4)) -> None:
        self.dim = dim
        self.ngram_sizes = tuple(ngram_sizes)

    def _features(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        lowered = text.lower()
        for n in self.ngram_sizes:
            for i in range(max(0, len(lowered) - n + 1)):
                gram = lowered[i : i + n]
                digest = hashlib.md5(gram.encode("utf-8")).digest()
                bucket = int.from_bytes(digest[:4], "little") % self.dim
                sign = 1.0 if digest[4] % 2 == 0 else -1.0
                vec[bucket] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            vec[0] = 1.0
            return vec
        return vec / norm

    def embed(self, texts: list[str]) -> np.ndarray:
        return np.stack([self._features(t) for t in texts])


class StubEmbedding:
    """Fixed text -> vector table for tests; vectors are normalized."""

    def __init__(self, table: dict[str, list[float]]) -> None:
        self.table = {k: np.asarray(v, dtype=np.float64) for k, v in table.items()}

    def embed(self, texts: list[str]) -> np.ndarray:
        rows = []
        for text in texts:
            if text not in self.table:
                raise BackendUnavailable(f"stub embedding has no vector for {text!r}")
            vec = self.table[text]
            rows.append(vec / np.linalg.norm(vec))
        return np.stack(rows)


def wait_until_ready(
    base_url: str,
    timeout: float = 10.0,
    poll_interval: float = 0.2,
    session: requests.Session | None = None,
) -> dict:
    """Gate on the scorer service's health endpoint until it reports ready.

    Returns the health payload; raises BackendUnavailable if the service
    stays unready (or unreachable) past the deadline.
    """
    import time

    session = session or requests.Session()
    deadline = time.monotonic() + timeout
    last = "no response"
    while time.monotonic() < deadline:
        try:
            response = session.get(f"{base_url.rstrip('/')}/v1/health", timeout=5.0)
            if response.status_code == 200:
                return response.json()
            last = f"{response.status_code}: {response.text[:120]}"
        except requests.RequestException as exc:
            last = str(exc)
        time.sleep(poll_interval)
    raise BackendUnavailable(
        f"scorer service at {base_url} not ready after {timeout:.1f}s ({last})"
    )


class RemoteEmbedding:
    """Client for the scorer service's `/v1/embed` endpoint."""

    def __init__(
        self,
        base_url: str,
        timeout: float = 120.0,
        session: requests.Session | None = None,
        shared_secret: str | None = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.session = session or requests.Session()
        self.shared_secret = shared_secret

    def embed(self, texts: list[str]) -> np.ndarray:
        headers = {}
        if self.shared_secret:
            headers["X-Scorer-Secret"] = self.shared_secret
        try:
            response = self.session.post(
                f"{self.base_url}/v1/embed",
                json={"texts": texts},
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise EmbeddingBackendUnavailable(
                f"embedding service unreachable: {exc}"
            ) from exc
        if response.status_code != 200:
            raise EmbeddingBackendUnavailable(
                f"embedding service returned {response.status_code}: {response.text[:200]}"
            )
        return np.asarray(response.json()["embeddings"], dtype=np.float64)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    denom = float(np.linalg.norm(a)) * float(np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.dot(a, b)) / denom


class CosineSimilarity:
    """sim(a, b) over an embedding backend, with a per-text cache."""

    def __init__(self, embedding: EmbeddingBackend) -> None:
        self.embedding = embedding
        self._cache: dict[str, np.ndarray] = {}

    def _vector(self, text: str) -> np.ndarray:
        if text not in self._cache:
            self._cache[text] = self.embedding.embed([text])[0]
        return self._cache[text]

    def sim(self, a: str, b: str) -> float:
        return cosine(self._vector(a), self._vector(b))


class StubSimilarity:
    """Symmetric pairwise table for metric tests; sim(x, x) is always 1."""

    def __init__(self, table: dict[tuple[str, str], float], default: float = 0.0) -> None:
        self.table = dict(table)
        self.default = default

    def sim(self, a: str, b: str) -> float:
        if a == b:
            return 1.0
        if (a, b) in self.table:
            return self.table[(a, b)]
        if (b, a) in self.table:
            return self.table[(b, a)]
        return self.default
