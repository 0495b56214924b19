"""Evaluation-corpus construction.

Stratified Min-Max sampling picks topically diverse papers per
(venue, decision) stratum: a seeded uniform first pick, then greedy
selection maximizing the minimum cosine distance to everything already
chosen, restricted to candidates sharing no keyword with any selected
paper (the restriction relaxes, with a trace note, rather than emptying
a stratum). Reference comments come from LLM extraction over individual
reviews and an LLM merge across reviewers.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, InsufficientCandidates
from .gateway import (
    ARRAY_OF_STRINGS,
    CompletionRequest,
    Gateway,
    MAJOR_MINOR_OBJECT,
)
from .templates import COMMENT_EXTRACT, COMMENT_MERGE

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Candidate:
    paper_id: str
    venue: str
    decision: str
    keywords: frozenset[str]
    embedding: tuple[float, ...]

    def __post_init__(self) -> None:
        norm = float(np.linalg.norm(self.embedding))
        if abs(norm - 1.0) > 1e-3:
            raise ValueError(
                f"candidate {self.paper_id!r} embedding norm {norm:.6f} is not unit"
            )

    @property
    def stratum(self) -> tuple[str, str]:
        return (self.venue, self.decision)

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.embedding, dtype=np.float64)


def embedding_text(title: str, abstract: str) -> str:
    """The text candidates are embedded from."""
    return f"{title}. {abstract}"


@dataclass(frozen=True)
class SamplePick:
    paper_id: str
    min_distance: float | None  # None for the seeded first pick
    relaxed: bool


def _cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    return 1.0 - float(np.dot(a, b))


def minmax_sample(
    candidates: list[Candidate], n: int, seed: int
) -> tuple[list[str], list[SamplePick]]:
    """Pick `n` diverse candidates from one stratum; deterministic per seed.

    Returns the selected paper ids in pick order plus a trace recording
    each pick's max-min distance and whether the keyword restriction had
    to be relaxed for it.
    """
    if n < 1:
        raise ValueError(f"sample size must be >= 1, got {n}")
    if n > len(candidates):
        raise InsufficientCandidates(
            f"asked for {n} of {len(candidates)} candidates"
        )
    pool = sorted(candidates, key=lambda c: c.paper_id)
    rng = random.Random(seed)
    first = pool[rng.randrange(len(pool))]
    selected = [first]
    trace = [SamplePick(paper_id=first.paper_id, min_distance=None, relaxed=False)]
    remaining = [c for c in pool if c.paper_id != first.paper_id]
    while len(selected) < n:
        selected_keywords = set().union(*(c.keywords for c in selected))
        eligible = [c for c in remaining if not (c.keywords & selected_keywords)]
        relaxed = False
        if not eligible:
            relaxed = True
            eligible = remaining
            logger.warning(
                "minmax_sample: keyword restriction emptied the pool at pick %d; "
                "relaxing it",
                len(selected) + 1,
            )
        best = None
        best_distance = -1.0
        for candidate in eligible:  # pool is id-sorted, so ties keep the lowest id
            distance = min(
                _cosine_distance(candidate.vector, s.vector) for s in selected
            )
            if distance > best_distance:
                best, best_distance = candidate, distance
        assert best is not None
        selected.append(best)
        trace.append(
            SamplePick(paper_id=best.paper_id, min_distance=best_distance, relaxed=relaxed)
        )
        remaining = [c for c in remaining if c.paper_id != best.paper_id]
    return [c.paper_id for c in selected], trace


def sample_strata(
    candidates: list[Candidate], per_stratum: int, seed: int
) -> dict[tuple[str, str], tuple[list[str], list[SamplePick]]]:
    """Run minmax_sample independently inside every (venue, decision) stratum."""
    strata: dict[tuple[str, str], list[Candidate]] = {}
    for candidate in candidates:
        strata.setdefault(candidate.stratum, []).append(candidate)
    out = {}
    for offset, key in enumerate(sorted(strata)):
        out[key] = minmax_sample(strata[key], per_stratum, seed + offset)
    return out


# --- reference comments -------------------------------------------------


@dataclass(frozen=True)
class ReviewerComments:
    major: tuple[str, ...]
    minor: tuple[str, ...]


@dataclass(frozen=True)
class ReferenceComments:
    reviewers: tuple[ReviewerComments, ...]
    merged: tuple[str, ...]

    def __post_init__(self) -> None:
        if any(r.major for r in self.reviewers) and not self.merged:
            raise ValueError("merged list empty although reviewers have major comments")

    def to_payload(self) -> dict:
        return {
            "reviewers": [
                {"major": list(r.major), "minor": list(r.minor)}
                for r in self.reviewers
            ],
            "merged": list(self.merged),
        }


def extract_comments(review_text: str, gateway: Gateway) -> ReviewerComments:
    """Pull major/minor comment lists out of one human review."""
    if not review_text.strip():
        raise EmptyInput("cannot extract comments from an empty review")
    value, _ = gateway.complete_json(
        CompletionRequest(
            template_id=COMMENT_EXTRACT, variables={"REVIEW": review_text}
        ),
        MAJOR_MINOR_OBJECT,
    )
    return ReviewerComments(major=tuple(value["major"]), minor=tuple(value["minor"]))


def merge_comments(
    per_reviewer_major: list[list[str]], gateway: Gateway
) -> list[str]:
    """Consolidate the reviewers' major comments into one reference list."""
    non_empty = [lst for lst in per_reviewer_major if lst]
    if not non_empty:
        raise EmptyInput("need at least one non-empty reviewer comment list")
    rendered = "\n\n".join(
        f"Reviewer {i}:\n" + "\n".join(f"- {c}" for c in comments)
        for i, comments in enumerate(non_empty, start=1)
    )
    value, _ = gateway.complete_json(
        CompletionRequest(
            template_id=COMMENT_MERGE, variables={"REVIEWER COMMENTS": rendered}
        ),
        ARRAY_OF_STRINGS,
    )
    return list(value)
