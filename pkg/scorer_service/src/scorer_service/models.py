"""Scoring and embedding backends.

The defaults are self-contained so the service runs on any CPU with no
weight downloads: conditional perplexity comes from a byte-level n-gram
model fitted on the conditioning chunk per request, and embeddings come
from feature-hashed byte n-grams. Transformer-backed equivalents
(`hf:<model>` causal LMs, `st:<model>` sentence encoders) are selected
through the same factory when their libraries and weights are present;
model identity is deployment configuration, not code.

Every scorer exposes per-token negative log-probabilities so callers can
check that the reported score is exactly their mean.
"""

from __future__ import annotations

import hashlib
import math
import threading
from collections import Counter
from typing import Protocol

import numpy as np


class ConditionalScorer(Protocol):
    def token_nlls(self, target: str, condition: str) -> list[float]:
        """Negative log-probability (nats) per scored token."""
        ...


class Embedder(Protocol):
    dim: int

    def embed(self, texts: list[str]) -> list[list[float]]:
        ...


# --- byte n-gram conditional scorer --------------------------------------


class ByteNgramScorer:
    """Interpolated add-k byte n-gram model fitted on the condition text.

    Counts come from the UTF-8 bytes of the condition alone; the target
    is scored byte by byte with contexts drawn from the running stream
    (condition, separator, then the target's own prefix), matching how a
    causal LM conditions a continuation on its prompt. Orders interpolate
    down to a uniform byte floor, so unseen bytes stay finite.
    """

    VOCAB = 256

    def __init__(self, order: int = 4, add_k: float = 0.05,
                 interpolation: float = 0.7) -> None:
        if order < 1:
            raise ValueError(f"order must be >= 1, got {order}")
        self.order = order
        self.add_k = add_k
        self.interpolation = interpolation

    def _fit(self, condition: bytes) -> list[tuple[Counter, Counter]]:
        tables = []
        for n in range(1, self.order + 1):
            grams: Counter = Counter()
            contexts: Counter = Counter()
            for i in range(len(condition) - n + 1):
                gram = condition[i : i + n]
                grams[gram] += 1
                contexts[gram[:-1]] += 1
            tables.append((grams, contexts))
        return tables

    def _prob(self, tables, context: bytes, byte: int) -> float:
        prob = 1.0 / self.VOCAB
        for n in range(1, self.order + 1):
            grams, contexts = tables[n - 1]
            ctx = context[len(context) - (n - 1):] if n > 1 else b""
            gram = ctx + bytes([byte])
            numerator = grams.get(gram, 0) + self.add_k
            denominator = contexts.get(ctx, 0) + self.add_k * self.VOCAB
            level = numerator / denominator
            prob = self.interpolation * level + (1.0 - self.interpolation) * prob
        return prob

    def token_nlls(self, target: str, condition: str) -> list[float]:
        condition_bytes = condition.encode("utf-8")
        target_bytes = target.encode("utf-8")
        tables = self._fit(condition_bytes)
        stream = condition_bytes + b" " + target_bytes
        start = len(condition_bytes) + 1
        out = []
        for i in range(start, len(stream)):
            context = stream[max(0, i - (self.order - 1)) : i]
            out.append(-math.log(self._prob(tables, context, stream[i])))
        return out


class HfCausalScorer:
    """Causal-LM scorer over a transformers checkpoint (CPU, greedy-free)."""

    def __init__(self, model_name: str) -> None:
        import torch
        from transformers import AutoModelForCausalLM, AutoTokenizer

        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModelForCausalLM.from_pretrained(model_name)
        self.model.eval()
        self._lock = threading.Lock()

    def token_nlls(self, target: str, condition: str) -> list[float]:
        torch = self._torch
        condition_ids = self.tokenizer(condition + " ",
                                       return_tensors="pt").input_ids
        target_ids = self.tokenizer(target, add_special_tokens=False,
                                    return_tensors="pt").input_ids
        input_ids = torch.cat([condition_ids, target_ids], dim=1)
        with self._lock, torch.no_grad():
            logits = self.model(input_ids).logits
        log_probs = torch.log_softmax(logits[0, :-1], dim=-1)
        n_target = target_ids.shape[1]
        positions = range(input_ids.shape[1] - 1 - n_target,
                          input_ids.shape[1] - 1)
        return [
            float(-log_probs[pos, input_ids[0, pos + 1]])
            for pos in positions
        ]


def mean_nll(scorer: ConditionalScorer, target: str, condition: str) -> float:
    nlls = scorer.token_nlls(target, condition)
    if not nlls:
        return 0.0
    return sum(nlls) / len(nlls)


# --- embedders ------------------------------------------------------------


class HashNgramEmbedder:
    """Feature-hashed byte n-grams, L2-normalized to unit length."""

    def __init__(self, dim: int = 384, ngram_sizes=(3, 4, 5)) -> None:
        self.dim = dim
        self.ngram_sizes = tuple(ngram_sizes)

    def _vector(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        data = text.lower().encode("utf-8")
        for n in self.ngram_sizes:
            for i in range(max(0, len(data) - n + 1)):
                digest = hashlib.md5(data[i : i + n]).digest()
                bucket = int.from_bytes(digest[:4], "little") % self.dim
                vec[bucket] += 1.0 if digest[4] % 2 == 0 else -1.0
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            vec[0] = 1.0
            return vec
        return vec / norm

    def embed(self, texts: list[str]) -> list[list[float]]:
        return [self._vector(t).tolist() for t in texts]


class SbertEmbedder:
    """sentence-transformers encoder with normalized outputs."""

    def __init__(self, model_name: str) -> None:
        from sentence_transformers import SentenceTransformer

        self.model = SentenceTransformer(model_name)
        self.dim = int(self.model.get_sentence_embedding_dimension())
        self._lock = threading.Lock()

    def embed(self, texts: list[str]) -> list[list[float]]:
        with self._lock:
            vectors = self.model.encode(texts, normalize_embeddings=True,
                                        show_progress_bar=False)
        return [list(map(float, v)) for v in vectors]


# --- factories ------------------------------------------------------------


def build_scorer(spec: str) -> ConditionalScorer:
    """`ngram` (default) or `hf:<model-name>`."""
    if spec == "ngram":
        return ByteNgramScorer()
    if spec.startswith("hf:"):
        return HfCausalScorer(spec[len("hf:"):])
    raise ValueError(f"unknown scorer spec {spec!r}")


def build_embedder(spec: str) -> Embedder:
    """`hash` (default, optionally `hash:<dim>`) or `st:<model-name>`."""
    if spec == "hash":
        return HashNgramEmbedder()
    if spec.startswith("hash:"):
        return HashNgramEmbedder(dim=int(spec[len("hash:"):]))
    if spec.startswith("st:"):
        return SbertEmbedder(spec[len("st:"):])
    raise ValueError(f"unknown embedder spec {spec!r}")
