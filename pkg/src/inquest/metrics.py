"""Review-quality metrics.

Pure arithmetic lives in small functions that independent brute-force
oracles can shadow in tests: rating MAE/MSE, the ITF-IDF specificity
score with soft occurrence counts, embedding-similarity SN precision/
recall/F1, alignment precision/recall/pseudo-Jaccard over directional
intersections, and the pairwise pseudo win-rate. The two LLM-backed
operations (two-stage comment alignment, multi-run judge scoring) ride
on the gateway.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from .documents import Paper
from .errors import EmptyInput, LengthMismatch, MalformedOutput
from .gateway import (
    CompletionRequest,
    Gateway,
    JUDGE_DIMENSIONS,
    JUDGE_OBJECT,
    MATCH_OBJECT,
)
from .templates import ALIGN_MATCH, ALIGN_PAIR, JUDGE

logger = logging.getLogger(__name__)

RATING_DIMENSIONS = ("soundness", "presentation", "contribution", "overall")


@dataclass(frozen=True)
class CommentList:
    paper_id: str
    comments: tuple[str, ...]


@dataclass(frozen=True)
class RatingSet:
    soundness: float
    presentation: float
    contribution: float
    overall: float

    def get(self, dimension: str) -> float:
        return getattr(self, dimension)


# --- rating error -------------------------------------------------------


def mae_mse(
    predicted: list[RatingSet], reference: list[list[RatingSet]]
) -> dict[str, dict[str, float]]:
    """Per-dimension MAE/MSE of predictions against mean reviewer ratings."""
    if len(predicted) != len(reference):
        raise LengthMismatch(
            f"{len(predicted)} predictions vs {len(reference)} reference sets"
        )
    if not predicted:
        raise EmptyInput("need at least one paper to score ratings")
    for i, refs in enumerate(reference):
        if not refs:
            raise LengthMismatch(f"paper #{i} has no reference ratings")
    out: dict[str, dict[str, float]] = {}
    n = len(predicted)
    for dim in RATING_DIMENSIONS:
        abs_total = 0.0
        sq_total = 0.0
        for pred, refs in zip(predicted, reference):
            ref_mean = sum(r.get(dim) for r in refs) / len(refs)
            error = pred.get(dim) - ref_mean
            abs_total += abs(error)
            sq_total += error * error
        out[dim] = {"mae": abs_total / n, "mse": sq_total / n}
    return out


# --- ITF-IDF ------------------------------------------------------------


def itf_idf(lists: list[CommentList], sim, t: float = 0.5) -> float:
    """Comment-specificity score over a corpus of per-paper comment lists.

    Per comment, the intra-paper factor log(m_j / O) penalizes repeats
    within its own list and the cross-paper factor log(W / R) penalizes
    comments echoed across papers; O and R are similarity-weighted soft
    counts with threshold `t`, both at least 1 because a comment always
    matches itself. Natural logarithms, no clamping.
    """
    kept = [cl for cl in lists if cl.comments]
    dropped = len(lists) - len(kept)
    if dropped:
        logger.warning("itf_idf: excluding %d empty comment list(s)", dropped)
    if not kept:
        raise EmptyInput("itf_idf needs at least one non-empty comment list")
    w = len(kept)
    paper_scores = []
    for j, paper in enumerate(kept):
        m_j = len(paper.comments)
        comment_total = 0.0
        for c_i in paper.comments:
            occurrence = 0.0
            for c_k in paper.comments:
                s = sim.sim(c_i, c_k)
                if s >= t:
                    occurrence += s
            reach = 0.0
            for other in kept:
                best = max(sim.sim(c_i, c_s) for c_s in other.comments)
                if best >= t:
                    reach += best
            comment_total += math.log(m_j / occurrence) * math.log(w / reach)
        paper_scores.append(comment_total / m_j)
    return sum(paper_scores) / w


# --- SN metrics ---------------------------------------------------------


def sn_metrics(
    pred: CommentList, refs: list[CommentList], sim
) -> dict[str, float]:
    """Max-similarity alignment of one prediction list vs reviewer lists."""
    if not pred.comments:
        raise EmptyInput("prediction list is empty")
    if not refs or any(not r.comments for r in refs):
        raise EmptyInput("need at least one non-empty reviewer list")
    r = len(refs)
    precision = sum(
        sum(max(sim.sim(p, g) for g in ref.comments) for ref in refs) / r
        for p in pred.comments
    ) / len(pred.comments)
    recall = sum(
        sum(max(sim.sim(g, p) for p in pred.comments) for g in ref.comments)
        / len(ref.comments)
        for ref in refs
    ) / r
    if precision + recall == 0.0:
        f1 = 0.0
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return {"precision": precision, "recall": recall, "f1": f1}


# --- LLM-based alignment -------------------------------------------------

ALIGNED_RELATEDNESS = ("medium", "high")
ALIGNED_SPECIFICITY = ("same", "more")


@dataclass(frozen=True)
class RatedPair:
    generated: int
    reference: int
    relatedness: str
    specificity: str

    @property
    def aligned(self) -> bool:
        return (
            self.relatedness in ALIGNED_RELATEDNESS
            and self.specificity in ALIGNED_SPECIFICITY
        )


@dataclass(frozen=True)
class AlignmentResult:
    pairs: tuple[RatedPair, ...]
    gen_count: int
    ref_count: int
    precision: float
    recall: float
    pseudo_jaccard: float
    highly_related_ratio: float
    more_specific_ratio: float

    def to_payload(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "jaccard": self.pseudo_jaccard,
            "highly_related_ratio": self.highly_related_ratio,
            "more_specific_ratio": self.more_specific_ratio,
            "pairs": [
                {
                    "generated": p.generated,
                    "reference": p.reference,
                    "relatedness": p.relatedness,
                    "specificity": p.specificity,
                    "aligned": p.aligned,
                }
                for p in self.pairs
            ],
        }


def alignment_metrics(
    gen_count: int, ref_count: int, pairs: list[RatedPair]
) -> AlignmentResult:
    """Directional-intersection arithmetic over rated candidate pairs.

    The forward intersection counts distinct reference comments hit by an
    aligned pair, the backward one distinct generated comments; the
    pseudo-Jaccard intersection is the mean of the two counts.
    """
    if gen_count < 1 or ref_count < 1:
        raise EmptyInput("alignment needs non-empty comment lists")
    aligned = [p for p in pairs if p.aligned]
    gen_hit = {p.generated for p in aligned}
    ref_hit = {p.reference for p in aligned}
    intersection = (len(gen_hit) + len(ref_hit)) / 2.0
    highly = {p.generated for p in aligned if p.relatedness == "high"}
    more = {p.generated for p in aligned if p.specificity == "more"}
    return AlignmentResult(
        pairs=tuple(pairs),
        gen_count=gen_count,
        ref_count=ref_count,
        precision=len(gen_hit) / gen_count,
        recall=len(ref_hit) / ref_count,
        pseudo_jaccard=intersection / (gen_count + ref_count - intersection),
        highly_related_ratio=len(highly) / gen_count,
        more_specific_ratio=len(more) / gen_count,
    )


def _numbered(comments: tuple[str, ...]) -> str:
    return "\n".join(f"{i}. {text}" for i, text in enumerate(comments))


def llm_alignment(
    gen: CommentList, ref_merged: CommentList, gateway: Gateway
) -> AlignmentResult:
    """Two-stage matching: propose candidate pairs, then rate each pair."""
    if not gen.comments or not ref_merged.comments:
        raise EmptyInput("alignment needs non-empty generated and reference lists")
    match_value, _ = gateway.complete_json(
        CompletionRequest(
            template_id=ALIGN_MATCH,
            variables={
                "GENERATED COMMENTS": _numbered(gen.comments),
                "REFERENCE COMMENTS": _numbered(ref_merged.comments),
            },
        ),
        MATCH_OBJECT,
    )
    if "matches" not in match_value:
        raise MalformedOutput("matching stage must return a 'matches' array")
    candidates: list[tuple[int, int]] = []
    for pair in match_value["matches"]:
        g, r = pair["generated"], pair["reference"]
        if 0 <= g < len(gen.comments) and 0 <= r < len(ref_merged.comments):
            if (g, r) not in candidates:
                candidates.append((g, r))
        else:
            logger.warning("alignment: dropping out-of-range pair (%d, %d)", g, r)
    rated: list[RatedPair] = []
    for g, r in sorted(candidates):
        value, _ = gateway.complete_json(
            CompletionRequest(
                template_id=ALIGN_PAIR,
                variables={
                    "GENERATED COMMENT": gen.comments[g],
                    "REFERENCE COMMENT": ref_merged.comments[r],
                },
            ),
            MATCH_OBJECT,
        )
        if "relatedness" not in value or "specificity" not in value:
            raise MalformedOutput(
                "pair-rating stage must return relatedness and specificity"
            )
        rated.append(
            RatedPair(
                generated=g,
                reference=r,
                relatedness=value["relatedness"],
                specificity=value["specificity"],
            )
        )
    return alignment_metrics(len(gen.comments), len(ref_merged.comments), rated)


# --- judge scoring ------------------------------------------------------


@dataclass(frozen=True)
class JudgeResult:
    scores: dict[str, float]
    raw_runs: tuple[dict, ...]
    failed_runs: int


def judge_review(
    paper: Paper,
    review_text: str,
    gateway: Gateway,
    runs: int = 3,
    temperature: float = 0.1,
) -> JudgeResult:
    """Score a review across the eight judge dimensions, averaged over runs.

    Each run must parse to the judge JSON shape; the whole evaluation
    aborts unless at least two runs parse. All raw run objects are kept
    so callers can persist them.
    """
    if not review_text.strip():
        raise EmptyInput("cannot judge an empty review")
    parsed: list[dict] = []
    failures = 0
    for _ in range(runs):
        request = CompletionRequest(
            template_id=JUDGE,
            variables={
                "PAPER CONTENT": paper.full_text(),
                "REVIEW": review_text,
            },
            temperature=temperature,
        )
        try:
            value, _ = gateway.complete_json(request, JUDGE_OBJECT)
            parsed.append(value)
        except MalformedOutput:
            failures += 1
            logger.warning("judge run failed to parse; continuing")
    if len(parsed) < 2:
        raise MalformedOutput(
            f"only {len(parsed)} of {runs} judge runs parsed; need at least 2"
        )
    scores = {
        dim: sum(run[dim]["score"] for run in parsed) / len(parsed)
        for dim in JUDGE_DIMENSIONS
    }
    return JudgeResult(scores=scores, raw_runs=tuple(parsed), failed_runs=failures)


# --- pseudo win-rate ----------------------------------------------------


def pseudo_win_rate(judgments: list[dict]) -> dict[str, float]:
    """Pairwise preference: unanimous wins score 1, anything else 0.5 each.

    Each judgment holds `evaluator_a` and `evaluator_b`, each one of
    "A", "B", or "tie". The two win rates always sum to 1.
    """
    if not judgments:
        raise EmptyInput("need at least one judgment")
    valid = {"A", "B", "tie"}
    points_a = 0.0
    for judgment in judgments:
        a, b = judgment["evaluator_a"], judgment["evaluator_b"]
        if a not in valid or b not in valid:
            raise ValueError(f"judgment verdicts must be one of {valid}, got {a!r}/{b!r}")
        if a == "A" and b == "A":
            points_a += 1.0
        elif a == "B" and b == "B":
            points_a += 0.0
        else:
            points_a += 0.5
    win_a = points_a / len(judgments)
    return {"win_rate_A": win_a, "win_rate_B": 1.0 - win_a}
