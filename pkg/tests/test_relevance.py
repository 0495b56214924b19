"""Tests for chunk scoring and top-k selection."""

import random

import pytest

from inquest.documents import Chunk
from inquest.embeddings import HashEmbedding
from inquest.errors import BackendUnavailable, ScoreLengthMismatch
from inquest.relevance import (
    ChunkScore,
    EmbeddingCosineScorer,
    RESTRICT_STATEMENT,
    RelevanceQuery as Query,
    ScriptedScorer,
    score_chunks,
    select_top_k,
)


def make_chunks(texts: list[str]) -> tuple[Chunk, ...]:
    return tuple(
        Chunk(index=i, section_path=(f"S{i}",), body=text, token_count=1)
        for i, text in enumerate(texts)
    )


class TestRestrictStatement:
    def test_bit_exact(self):
        assert RESTRICT_STATEMENT == (
            "We can get the answer to this question in the given documents"
        )

    def test_target_text_joins_with_single_space(self):
        query = Query(question="Why?", chunks=make_chunks(["a"]))
        assert query.target_text == "Why? " + RESTRICT_STATEMENT


class TestScoreChunks:
    def test_scripted_pass_through(self):
        query = Query(question="q", chunks=make_chunks(["a", "b"]))
        scores = score_chunks(query, ScriptedScorer([3.1, 2.2]))
        assert scores == [ChunkScore(0, 3.1), ChunkScore(1, 2.2)]

    def test_length_mismatch(self):
        query = Query(question="q", chunks=make_chunks(["a", "b"]))
        with pytest.raises(ScoreLengthMismatch):
            score_chunks(query, ScriptedScorer([1.0]))

    def test_non_finite_rejected(self):
        query = Query(question="q", chunks=make_chunks(["a"]))
        with pytest.raises(BackendUnavailable):
            score_chunks(query, ScriptedScorer([float("nan")]))

    def test_empty_question_rejected(self):
        with pytest.raises(ValueError):
            Query(question="", chunks=make_chunks(["a"]))

    def test_empty_chunks_rejected(self):
        with pytest.raises(ValueError):
            Query(question="q", chunks=())

    def test_embedding_fallback_identical_text_scores_zero(self):
        scorer = EmbeddingCosineScorer(HashEmbedding())
        question = "what is the training objective"
        chunks = make_chunks([question, "entirely unrelated content zzz"])
        # Chunk text includes the header line; build a chunk whose full
        # text equals the question to hit the cosine(x, x) = 1 case.
        exact = Chunk(index=0, section_path=(), body=question, token_count=1)
        query = Query(question="\n" + question, chunks=(exact,))
        # text == "" + "\n" + body == question with leading newline
        scores = score_chunks(query, scorer)
        assert scores[0].score == pytest.approx(0.0, abs=1e-6)
        query2 = Query(question=question, chunks=chunks)
        ranked = score_chunks(query2, scorer)
        assert ranked[0].score < ranked[1].score

    def test_containment_beats_random_on_fixture_pairs(self):
        # Soft sanity for the fallback backend: a chunk containing the
        # question verbatim outranks unrelated text on >= 8/10 pairs.
        rng = random.Random(11)
        questions = [
            f"how does component {i} handle failure mode {i * 3}" for i in range(10)
        ]
        wins = 0
        scorer = EmbeddingCosineScorer(HashEmbedding())
        for question in questions:
            filler = " ".join(
                rng.choice(["lorem", "ipsum", "dolor", "sit", "amet"])
                for _ in range(30)
            )
            containing = f"In this setting, {question}, as shown before. {filler}"
            random_text = " ".join(
                rng.choice(["alpha", "beta", "gamma", "delta"]) for _ in range(40)
            )
            chunks = make_chunks([containing, random_text])
            scores = score_chunks(Query(question=question, chunks=chunks), scorer)
            if scores[0].score < scores[1].score:
                wins += 1
        assert wins >= 8


class TestSelectTopK:
    def test_tie_breaks_toward_lower_index(self):
        scores = [ChunkScore(0, 2.0), ChunkScore(1, 2.0), ChunkScore(2, 1.0)]
        assert select_top_k(scores, 2) == [2, 0]

    def test_k_exceeding_n_returns_all_ranked(self):
        scores = [ChunkScore(0, 5.0), ChunkScore(1, 1.0)]
        assert select_top_k(scores, 3) == [1, 0]

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            select_top_k([ChunkScore(0, 1.0)], 0)

    def test_matches_full_sort_oracle(self):
        rng = random.Random(7)
        for _ in range(200):
            n = rng.randint(1, 100)
            scores = [ChunkScore(i, rng.choice([rng.random(), 0.5])) for i in range(n)]
            k = rng.randint(1, 5)
            oracle = [s.chunk_index
                      for s in sorted(scores, key=lambda s: (s.score, s.chunk_index))]
            assert select_top_k(scores, k) == oracle[: min(k, n)]

    def test_rank_invariance_under_increasing_transforms(self):
        rng = random.Random(13)
        for _ in range(300):
            n = rng.randint(1, 40)
            scores = [ChunkScore(i, rng.uniform(-5, 5)) for i in range(n)]
            k = rng.randint(1, 6)
            base = select_top_k(scores, k)
            scale = rng.uniform(0.1, 10.0)
            shift = rng.uniform(-100.0, 100.0)
            affine = [ChunkScore(s.chunk_index, scale * s.score + shift)
                      for s in scores]
            assert select_top_k(affine, k) == base
            cubed = [ChunkScore(s.chunk_index, s.score ** 3) for s in scores]
            assert select_top_k(cubed, k) == base

    def test_permutation_consistency(self):
        rng = random.Random(17)
        for _ in range(100):
            n = rng.randint(2, 30)
            values = [rng.uniform(0, 10) for _ in range(n)]
            scores = [ChunkScore(i, v) for i, v in enumerate(values)]
            k = rng.randint(1, n)
            baseline = set(select_top_k(scores, k))
            perm = list(range(n))
            rng.shuffle(perm)
            # Same chunks relabeled: original position i becomes label perm[i].
            permuted = [ChunkScore(perm[i], values[i]) for i in range(n)]
            selected = select_top_k(permuted, k)
            assert {perm.index(label) for label in selected} == baseline
