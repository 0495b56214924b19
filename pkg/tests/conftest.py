"""Shared fixtures: the on-disk paper corpus, a large generated paper,
and deterministic mock providers that drive full pipeline runs."""

from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

from inquest.documents import Paper, Decision, Section, load_paper
from inquest.gateway import FunctionProvider
from inquest.templates import (
    INTERMEDIATE_RESOLVE,
    LEAF_ANSWER,
    QUESTION_GENERATOR,
    ROOT_COMMENTS,
    ROOT_FULL_REVIEW,
)
from inquest.tokens import count_tokens

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def paper_dirs() -> list[Path]:
    return sorted(p for p in (FIXTURES / "papers").iterdir() if p.is_dir())


@pytest.fixture(scope="session")
def corpus(paper_dirs) -> list[Paper]:
    return [load_paper(d) for d in paper_dirs]


@pytest.fixture(scope="session")
def main_paper() -> Paper:
    return load_paper(FIXTURES / "papers" / "curvature-policy")


def build_big_paper(seed: int = 7, target_tokens: int = 19130) -> Paper:
    """A seeded synthetic paper around the corpus-mean token count."""
    rng = random.Random(seed)
    vocabulary = [
        "model", "bound", "estimate", "gradient", "policy", "sample", "proof",
        "layer", "regret", "margin", "kernel", "update", "metric", "signal",
        "batch", "query", "agent", "reward", "graph", "token", "prior",
    ]

    def paragraph() -> str:
        words = [rng.choice(vocabulary) for _ in range(rng.randint(40, 120))]
        return " ".join(words) + "."

    sections: list[Section] = []
    total = 0
    section_index = 0
    while total < target_tokens:
        section_index += 1
        top = f"{section_index} Topic {section_index}"
        for sub in range(1, rng.randint(2, 4)):
            path = (top, f"{section_index}.{sub} Part {sub}")
            paras = []
            for _ in range(rng.randint(2, 5)):
                text = paragraph()
                paras.append(text)
                total += count_tokens(text)
            sections.append(Section(path=path, paragraphs=tuple(paras)))
            if total >= target_tokens:
                break
    return Paper(
        id="big-synthetic",
        venue="ICLR-2024",
        decision=Decision.UNKNOWN,
        title="A Large Synthetic Paper for Packing Tests",
        abstract="Synthetic body sized near the corpus mean token count.",
        sections=tuple(sections),
    )


@pytest.fixture(scope="session")
def big_paper() -> Paper:
    return build_big_paper()


# --- deterministic pipeline providers ------------------------------------


def make_review_text(tag: str, rating: int = 5, confidence: int = 4) -> str:
    """A full review in the exact bold-header template."""
    return (
        "**Summary:**\n\n"
        f"The paper is summarized deterministically for {tag}.\n\n"
        "**Strengths:**\n\n- Clear motivation.\n- Strong ablations.\n\n"
        "**Weaknesses:**\n\n- Limited scope of evaluation.\n\n"
        "**Questions:**\n\n- How does the method scale?\n\n"
        "**Soundness:**\n\n3\n\n"
        "**Presentation:**\n\n3\n\n"
        "**Contribution:**\n\n2\n\n"
        f"**Rating:**\n\n{rating}\n\n"
        f"**Confidence:**\n\n{confidence}\n"
    )


def make_pipeline_provider(
    widths: dict[int, int] | None = None,
    expand_marker: str = "",
    comments: list[str] | None = None,
):
    """Pure-function mock driving a terminating, deterministic run.

    `widths` maps 0-indexed prompt depth to the number of sub-questions
    generated (capped by the prompt's stated limit); questions containing
    `expand_marker` trigger one follow-up round when first resolved.
    Resolution is a pure function of the request variables, so replays
    and resumed runs reproduce byte-identical transcripts.
    """
    widths = widths or {0: 3, 1: 2, 2: 2}

    def reply(prompt: str, request) -> str:
        variables = request.variables
        if request.template_id == QUESTION_GENERATOR:
            depth = int(variables["NODE DEPTH"])
            cap = int(variables["QUESTIONS NUM"])
            n = min(widths.get(depth, 0), cap)
            parent = variables["PARENT QUESTION"]
            questions = [f"{parent} / aspect {i + 1}" for i in range(n)]
            return json.dumps(questions)
        if request.template_id == LEAF_ANSWER:
            question = variables["QUESTION"]
            return (
                f"Evidence-based answer to: {question} "
                "(see Section 2 of the paper)."
            )
        if request.template_id == INTERMEDIATE_RESOLVE:
            question = variables["QUESTION"]
            qa_block = variables["QUESTIONS AND ANSWERS"]
            wants_expansion = (
                expand_marker
                and expand_marker in question
                and "follow-up" not in qa_block
                and "IMPORTANT" not in request.suffix
            )
            if wants_expansion:
                return json.dumps(
                    {
                        "chain_of_thought": "The sub-answers leave a gap.",
                        "follow_up_questions": [
                            f"{question} / follow-up A",
                            f"{question} / follow-up B",
                        ],
                    }
                )
            return json.dumps(
                {
                    "chain_of_thought": f"Synthesis reasoning for: {question}",
                    "synthesized_answer": f"Synthesized finding for: {question}",
                }
            )
        if request.template_id == ROOT_FULL_REVIEW:
            return make_review_text("the fixture paper")
        if request.template_id == ROOT_COMMENTS:
            return json.dumps(
                comments
                or [
                    "The evaluation lacks a compute-matched baseline.",
                    "Key hyperparameters are undocumented.",
                ]
            )
        raise AssertionError(f"unexpected template {request.template_id}")

    return FunctionProvider(reply, name="pipeline-mock")


def make_adversarial_provider():
    """Always expands and always emits max-width question lists."""

    def reply(prompt: str, request) -> str:
        variables = request.variables
        if request.template_id == QUESTION_GENERATOR:
            cap = int(variables["QUESTIONS NUM"])
            parent = variables["PARENT QUESTION"]
            return json.dumps([f"{parent} / q{i}" for i in range(cap)])
        if request.template_id == LEAF_ANSWER:
            return "A terse adversarial answer."
        if request.template_id == INTERMEDIATE_RESOLVE:
            return json.dumps(
                {
                    "chain_of_thought": "More evidence is always needed.",
                    "follow_up_questions": [
                        f"{variables['QUESTION']} / more {i}" for i in range(9)
                    ],
                }
            )
        if request.template_id == ROOT_FULL_REVIEW:
            return make_review_text("an adversarial run", rating=3, confidence=2)
        if request.template_id == ROOT_COMMENTS:
            return json.dumps(["Everything is questionable."])
        raise AssertionError(f"unexpected template {request.template_id}")

    return FunctionProvider(reply, name="adversarial-mock")
