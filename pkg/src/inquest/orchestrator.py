"""Two-stage review pipeline over the question tree.

Stage one decomposes the root review task breadth-first into ever finer
questions using only paper metadata. Stage two resolves the tree bottom
up: leaves are answered over the top-k most relevant chunks, each
intermediate node either synthesizes its children's answers or spends
its single expansion round on follow-up questions, and the root turns
the depth-1 question/answer pairs plus the full paper into the final
output (a structured review or a feedback-comment list).

Termination holds for any provider behaviour: depth is capped, each
node expands at most once, and a node whose forced synthesis re-ask
still refuses to answer falls back to a deterministic digest of its
children. The engine persists after every node resolution through an
injectable checkpoint callback, which is also the resume boundary.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Callable

from .documents import Chunk, Paper, chunk_paper, extract_metadata
from .errors import NoChunks, MalformedOutput, RunInterrupted, TemplateSectionMissing
from .gateway import (
    ARRAY_OF_STRINGS,
    CompletionRequest,
    Gateway,
    RESOLVE_OBJECT,
    TokenLedger,
    extract_json,
)
from .relevance import RelevanceQuery, score_chunks, select_top_k
from .templates import (
    FORCED_SYNTHESIS_SUFFIX,
    INTERMEDIATE_RESOLVE,
    LEAF_ANSWER,
    QUESTION_GENERATOR,
    ROOT_COMMENTS,
    ROOT_FULL_REVIEW,
)
from .tree import (
    NodeKind,
    NodeOrigin,
    NodeState,
    QAAnswer,
    QuestionTree,
    TreeConfig,
    max_node_bound,
    width_limit,
)

logger = logging.getLogger(__name__)

DEFAULT_ROOT_TASK = "Generate a comprehensive peer review for this paper"


class RunMode(str, Enum):
    FULL_REVIEW = "full_review"
    FEEDBACK_COMMENTS = "feedback_comments"


@dataclass(frozen=True)
class RunConfig:
    mode: RunMode
    tree: TreeConfig = TreeConfig()
    budget: int | None = None
    root_task_text: str = DEFAULT_ROOT_TASK


REVIEW_SECTIONS = (
    "Summary",
    "Strengths",
    "Weaknesses",
    "Questions",
    "Soundness",
    "Presentation",
    "Contribution",
    "Rating",
    "Confidence",
)

RATING_SCALES = {
    "Soundness": (1, 4),
    "Presentation": (1, 4),
    "Contribution": (1, 4),
    "Rating": (1, 10),
    "Confidence": (1, 5),
}


@dataclass(frozen=True)
class FullReview:
    summary: str
    strengths: str
    weaknesses: str
    questions: str
    soundness: int
    presentation: int
    contribution: int
    rating: int
    confidence: int
    raw_text: str

    def ratings(self) -> dict[str, int]:
        return {
            "soundness": self.soundness,
            "presentation": self.presentation,
            "contribution": self.contribution,
            "rating": self.rating,
            "confidence": self.confidence,
        }


@dataclass(frozen=True)
class ReviewOutput:
    """Exactly one of `full_review` / `comments` is set, matching the mode."""

    full_review: FullReview | None = None
    comments: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if (self.full_review is None) == (self.comments is None):
            raise ValueError("exactly one of full_review/comments must be set")


_SECTION_HEADER_RE = re.compile(
    r"^\s*\**\s*(" + "|".join(REVIEW_SECTIONS) + r")\s*\**\s*:\s*\**\s*(.*)$"
)


def parse_full_review(text: str) -> FullReview:
    """Split the bold-header review template into its nine sections.

    Accepts `**Header:**`, `**Header**:`, and bare `Header:` lines, with
    the value inline or on following lines. Numeric sections must parse
    to an integer inside their scale.
    """
    sections: dict[str, list[str]] = {}
    current: str | None = None
    for line in text.splitlines():
        match = _SECTION_HEADER_RE.match(line)
        if match and match.group(1) not in sections:
            current = match.group(1)
            sections[current] = [match.group(2)] if match.group(2).strip() else []
            continue
        if current is not None:
            sections[current].append(line)
    missing = [name for name in REVIEW_SECTIONS if name not in sections]
    if missing:
        raise TemplateSectionMissing(
            f"review output lacks required section(s): {', '.join(missing)}"
        )
    body = {name: "\n".join(lines).strip() for name, lines in sections.items()}
    numbers: dict[str, int] = {}
    for name, (low, high) in RATING_SCALES.items():
        match = re.search(r"-?\d+", body[name])
        if not match:
            raise MalformedOutput(f"section {name!r} holds no numeric rating")
        value = int(match.group())
        if not low <= value <= high:
            raise MalformedOutput(
                f"section {name!r} rating {value} outside scale [{low}, {high}]"
            )
        numbers[name] = value
    return FullReview(
        summary=body["Summary"],
        strengths=body["Strengths"],
        weaknesses=body["Weaknesses"],
        questions=body["Questions"],
        soundness=numbers["Soundness"],
        presentation=numbers["Presentation"],
        contribution=numbers["Contribution"],
        rating=numbers["Rating"],
        confidence=numbers["Confidence"],
        raw_text=text,
    )


def render_qa_pairs(pairs: list[tuple[str, str]]) -> str:
    """Numbered Q/A blocks in child order; the empty list renders `(none)`."""
    if not pairs:
        return "(none)"
    return "\n\n".join(
        f"{i}. Q: {question}\nA: {answer}"
        for i, (question, answer) in enumerate(pairs, start=1)
    )


_SECTION_REF_RE = re.compile(r"[Ss]ection\s+([\w][\w.]*)")


def match_evidence(answer: str, context_chunks: list[Chunk]) -> tuple[int, ...]:
    """Best-effort chunk citations recovered from the answer text.

    A context chunk counts as cited when its full header line appears in
    the answer, any of its heading titles appears verbatim, or a
    `Section X` style reference prefixes one of its heading titles.
    """
    references = [ref.rstrip(".") for ref in _SECTION_REF_RE.findall(answer)]
    cited = []
    for chunk in context_chunks:
        hit = bool(chunk.header) and chunk.header in answer
        if not hit:
            hit = any(component and component in answer for component in chunk.section_path)
        if not hit:
            for ref in references:
                for component in chunk.section_path:
                    if component == ref or component.startswith(ref + " ") or \
                            component.startswith(ref + "."):
                        hit = True
        if hit:
            cited.append(chunk.index)
    return tuple(sorted(set(cited)))


@dataclass
class RunResult:
    output: ReviewOutput
    tree: QuestionTree
    ledger: TokenLedger
    stats: dict


class ReviewEngine:
    """Drives one run of the pipeline over a single paper."""

    def __init__(
        self,
        paper: Paper,
        run_config: RunConfig,
        gateway: Gateway,
        relevance_backend,
        checkpoint: Callable[[QuestionTree], None] | None = None,
        counter: str = "heuristic",
    ) -> None:
        paper.validate_for_run()
        self.paper = paper
        self.run_config = run_config
        self.config = run_config.tree
        self.gateway = gateway
        self.relevance_backend = relevance_backend
        self.checkpoint = checkpoint or (lambda tree: None)
        self.counter = counter
        self.chunks = chunk_paper(paper, self.config.chunk_size, counter)
        self._steps_done = 0

    # -- node operations --

    def decompose_node(self, tree: QuestionTree, node_id: int) -> list[int]:
        """Ask the generator to split one node; empty array means leaf."""
        node = tree.node(node_id)
        title, abstract, toc = extract_metadata(self.paper)
        cap = width_limit(self.config, node.depth)
        request = CompletionRequest(
            template_id=QUESTION_GENERATOR,
            variables={
                "QUESTIONS NUM": str(cap),
                "PAPER TITLE": title,
                "PAPER ABSTRACT": abstract,
                "PAPER TOC": toc,
                # Prompt counts depth from 0 at the root; the tree from 1.
                "NODE DEPTH": str(node.depth - 1),
                "PARENT QUESTION": node.text,
            },
        )
        questions, _ = self.gateway.complete_json(request, ARRAY_OF_STRINGS)
        if not questions:
            if node.kind is NodeKind.ROOT:
                tree.mark_ready(node_id)
            else:
                tree.mark_leaf(node_id)
            return []
        if len(questions) > cap:
            logger.warning(
                "generator returned %d questions for node %d (cap %d); truncating",
                len(questions), node_id, cap,
            )
            questions = questions[:cap]
        return tree.attach_children(node_id, questions, NodeOrigin.INITIAL)

    def answer_leaf(self, tree: QuestionTree, node_id: int) -> QAAnswer:
        """Answer a leaf over the top-k most relevant chunks."""
        node = tree.node(node_id)
        if not self.chunks:
            raise NoChunks(f"paper {self.paper.id!r} produced no chunks")
        query = RelevanceQuery(question=node.text, chunks=tuple(self.chunks))
        scores = score_chunks(query, self.relevance_backend)
        top = select_top_k(scores, self.config.k_chunks)
        context_chunks = [self.chunks[i] for i in top]
        request = CompletionRequest(
            template_id=LEAF_ANSWER,
            variables={
                "QUESTION": node.text,
                "CONTEXT": "\n\n".join(chunk.text for chunk in context_chunks),
            },
        )
        result = self.gateway.complete(request)
        answer = QAAnswer(
            text=result.text,
            evidence_refs=match_evidence(result.text, context_chunks),
        )
        tree.set_answer(node_id, answer)
        return answer

    def _resolve_request(self, tree: QuestionTree, node_id: int, suffix: str = "") -> CompletionRequest:
        node = tree.node(node_id)
        pairs = [
            (tree.node(c).text, tree.node(c).answer.text) for c in node.children
        ]
        return CompletionRequest(
            template_id=INTERMEDIATE_RESOLVE,
            variables={
                "QUESTION": node.text,
                "QUESTIONS AND ANSWERS": render_qa_pairs(pairs),
                "MAX QUESTION NUM": str(self.config.w_exp),
            },
            suffix=suffix,
        )

    def resolve_intermediate(self, tree: QuestionTree, node_id: int) -> str:
        """Synthesize an intermediate node or expand it once.

        Returns "synthesized" or "expanded". After the single expansion
        round, a follow-up-bearing reply triggers one forced-synthesis
        re-ask; if even that refuses, the chain of thought (or a digest
        of the children) becomes the answer so the run always finishes.
        """
        node = tree.node(node_id)
        if node.state is not NodeState.READY:
            tree.mark_ready(node_id)
        value, _ = self.gateway.complete_json(
            self._resolve_request(tree, node_id), RESOLVE_OBJECT
        )
        if "synthesized_answer" in value:
            tree.set_answer(node_id, QAAnswer(
                text=value["synthesized_answer"],
                chain_of_thought=value["chain_of_thought"],
            ))
            return "synthesized"
        followups = value["follow_up_questions"]
        can_expand = (
            node.expansion_round == 0 and self.config.w_exp > 0 and followups
        )
        if can_expand:
            if len(followups) > self.config.w_exp:
                logger.warning(
                    "node %d proposed %d follow-ups (cap %d); truncating",
                    node_id, len(followups), self.config.w_exp,
                )
                followups = followups[: self.config.w_exp]
            tree.attach_children(node_id, followups, NodeOrigin.EXPANDED)
            return "expanded"
        value, _ = self.gateway.complete_json(
            self._resolve_request(tree, node_id, suffix=FORCED_SYNTHESIS_SUFFIX),
            RESOLVE_OBJECT,
        )
        if "synthesized_answer" in value:
            answer_text = value["synthesized_answer"]
        else:
            answer_text = value["chain_of_thought"].strip()
            if not answer_text:
                answer_text = "Evidence digest: " + render_qa_pairs(
                    [(tree.node(c).text, tree.node(c).answer.text)
                     for c in node.children]
                )
            logger.warning(
                "node %d refused forced synthesis; answering from its reasoning",
                node_id,
            )
        tree.set_answer(node_id, QAAnswer(
            text=answer_text, chain_of_thought=value["chain_of_thought"],
        ))
        return "synthesized"

    def finalize_root(self, tree: QuestionTree, mode: RunMode) -> ReviewOutput:
        """Turn the root's QA pairs plus the full paper into the output."""
        root = tree.node(tree.root_id)
        pairs = [
            (tree.node(c).text, tree.node(c).answer.text) for c in root.children
        ]
        variables = {
            "PAPER CONTENT": self.paper.full_text(),
            "QUESTIONS AND ANSWERS": render_qa_pairs(pairs),
        }
        if root.state is not NodeState.READY:
            tree.mark_ready(tree.root_id)
        if mode is RunMode.FULL_REVIEW:
            result = self.gateway.complete(
                CompletionRequest(template_id=ROOT_FULL_REVIEW, variables=variables)
            )
            review = parse_full_review(result.text)
            output = ReviewOutput(full_review=review)
            tree.set_answer(tree.root_id, QAAnswer(text=result.text))
        else:
            comments, result = self.gateway.complete_json(
                CompletionRequest(template_id=ROOT_COMMENTS, variables=variables),
                ARRAY_OF_STRINGS,
            )
            output = ReviewOutput(comments=tuple(comments))
            tree.set_answer(tree.root_id, QAAnswer(text=result.text))
        tree.mark_finalized()
        return output

    def build_initial_tree(self) -> QuestionTree:
        """Top-down stage only: decompose breadth-first until every
        frontier node is a leaf or sits at maximum depth."""
        tree = QuestionTree(self.config, self.run_config.root_task_text)
        self.checkpoint(tree)
        pending = tree.pending_decomposition()
        while pending:
            for node_id in pending:
                self.decompose_node(tree, node_id)
                self.checkpoint(tree)
            pending = tree.pending_decomposition()
        return tree

    # -- the run loop --

    def _step_done(self, tree: QuestionTree, step_limit: int | None) -> None:
        self._steps_done += 1
        self.checkpoint(tree)
        if step_limit is not None and self._steps_done >= step_limit:
            raise RunInterrupted(
                f"stopped after {self._steps_done} node resolutions as requested"
            )

    def _next_item(self, tree: QuestionTree) -> tuple[str, int] | None:
        """The single next unit of work, derived purely from tree state.

        Priority: finish decomposition (top-down stage), then answer
        available leaves, then resolve ready intermediates, then the
        root; node id breaks ties. Because the schedule is a function of
        the checkpointed state alone, a resumed run replays the exact
        call sequence an uninterrupted run would have made.
        """
        pending = tree.pending_decomposition()
        if pending:
            return ("decompose", pending[0])
        frontier = tree.ready_frontier()
        if not frontier:
            return None
        leaves = [i for i in frontier if tree.node(i).kind is NodeKind.LEAF]
        if leaves:
            return ("answer", leaves[0])
        non_root = [i for i in frontier if i != tree.root_id]
        if non_root:
            return ("resolve", non_root[0])
        return ("finalize", tree.root_id)

    def run(
        self,
        tree: QuestionTree | None = None,
        step_limit: int | None = None,
    ) -> RunResult:
        """Run (or resume) the pipeline to completion.

        Passing a persisted tree resumes from its node states; the
        scheduler is derived entirely from the tree, so a resumed run
        continues exactly where the checkpointed one stopped.
        """
        bound = max_node_bound(self.config)
        if tree is None:
            tree = QuestionTree(self.config, self.run_config.root_task_text)
            self.checkpoint(tree)
        output: ReviewOutput | None = None
        while True:
            item = self._next_item(tree)
            if item is None:
                break
            action, node_id = item
            if action == "decompose":
                self.decompose_node(tree, node_id)
                if len(tree) > bound:
                    raise AssertionError(f"tree grew past the worst-case bound {bound}")
            elif action == "answer":
                self.answer_leaf(tree, node_id)
            elif action == "resolve":
                self.resolve_intermediate(tree, node_id)
            else:
                output = self.finalize_root(tree, self.run_config.mode)
                self._step_done(tree, step_limit)
                break
            self._step_done(tree, step_limit)
        if output is None:
            # Resuming a run whose root was already finalized.
            root = tree.node(tree.root_id)
            if root.answer is None:
                raise RunInterrupted("run loop ended without finalizing the root")
            output = self._output_from_root(root.answer.text)
        stats = {
            "mode": self.run_config.mode.value,
            "node_bound": bound,
            **tree.expansion_stats(),
        }
        return RunResult(
            output=output, tree=tree, ledger=self.gateway.ledger, stats=stats
        )

    def _output_from_root(self, raw_text: str) -> ReviewOutput:
        if self.run_config.mode is RunMode.FULL_REVIEW:
            return ReviewOutput(full_review=parse_full_review(raw_text))
        return ReviewOutput(
            comments=tuple(extract_json(raw_text, ARRAY_OF_STRINGS))
        )
