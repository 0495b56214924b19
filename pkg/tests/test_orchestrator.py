"""Tests for the pipeline engine: decomposition, answering, resolution,
finalization, and whole-run behaviour."""

import json

import pytest

from conftest import (
    make_adversarial_provider,
    make_pipeline_provider,
    make_review_text,
)
from inquest.documents import Chunk
from inquest.errors import (
    MalformedOutput,
    NoChunks,
    RunInterrupted,
    TemplateSectionMissing,
)
from inquest.gateway import FunctionProvider, Gateway
from inquest.orchestrator import (
    DEFAULT_ROOT_TASK,
    FullReview,
    ReviewEngine,
    ReviewOutput,
    RunConfig,
    RunMode,
    match_evidence,
    parse_full_review,
    render_qa_pairs,
)
from inquest.relevance import EmbeddingCosineScorer
from inquest.embeddings import HashEmbedding
from inquest.templates import (
    FORCED_SYNTHESIS_SUFFIX,
    INTERMEDIATE_RESOLVE,
    QUESTION_GENERATOR,
)
from inquest.tree import (
    NodeKind,
    NodeOrigin,
    NodeState,
    QAAnswer,
    QuestionTree,
    TreeConfig,
    max_node_bound,
)


def make_engine(paper, provider, mode=RunMode.FULL_REVIEW, tree_config=None,
                capture=None, **run_kwargs):
    gateway = Gateway(provider, sleep=lambda s: None, capture=capture)
    run_config = RunConfig(mode=mode, tree=tree_config or TreeConfig(), **run_kwargs)
    return ReviewEngine(
        paper=paper,
        run_config=run_config,
        gateway=gateway,
        relevance_backend=EmbeddingCosineScorer(HashEmbedding()),
    )


def json_provider(mapping):
    """Provider answering each template id with a fixed string."""

    def reply(prompt, request):
        value = mapping[request.template_id]
        return value(request) if callable(value) else value

    return FunctionProvider(reply)


# ===================================================================
# decompose_node
# ===================================================================

class TestDecomposeNode:
    def test_root_gets_five_children(self, main_paper):
        provider = json_provider({
            QUESTION_GENERATOR: json.dumps([f"q{i}" for i in range(5)]),
        })
        engine = make_engine(main_paper, provider)
        tree = QuestionTree(engine.config, DEFAULT_ROOT_TASK)
        ids = engine.decompose_node(tree, tree.root_id)
        assert len(ids) == 5
        assert tree.node(tree.root_id).state is NodeState.AWAITING_CHILDREN

    def test_empty_array_marks_leaf(self, main_paper):
        provider = json_provider({QUESTION_GENERATOR: "[]"})
        engine = make_engine(main_paper, provider)
        tree = QuestionTree(engine.config, DEFAULT_ROOT_TASK)
        tree.attach_children(tree.root_id, ["child"], NodeOrigin.INITIAL)
        child = tree.node(tree.root_id).children[0]
        assert engine.decompose_node(tree, child) == []
        assert tree.node(child).kind is NodeKind.LEAF

    def test_empty_array_on_root_readies_it(self, main_paper):
        provider = json_provider({QUESTION_GENERATOR: "[]"})
        engine = make_engine(main_paper, provider)
        tree = QuestionTree(engine.config, DEFAULT_ROOT_TASK)
        engine.decompose_node(tree, tree.root_id)
        root = tree.node(tree.root_id)
        assert root.kind is NodeKind.ROOT
        assert root.children == []
        assert root.state is NodeState.READY

    def test_over_width_truncated_with_warning(self, main_paper, caplog):
        provider = json_provider({
            QUESTION_GENERATOR: json.dumps([f"q{i}" for i in range(8)]),
        })
        engine = make_engine(main_paper, provider)
        tree = QuestionTree(engine.config, DEFAULT_ROOT_TASK)
        with caplog.at_level("WARNING"):
            ids = engine.decompose_node(tree, tree.root_id)
        assert len(ids) == 5
        assert any("truncating" in r.message for r in caplog.records)

    def test_prompt_depth_is_zero_indexed(self, main_paper):
        seen = {}

        def reply(prompt, request):
            seen[request.variables["PARENT QUESTION"]] = \
                request.variables["NODE DEPTH"]
            return json.dumps(["only child"])

        engine = make_engine(main_paper, FunctionProvider(reply))
        tree = QuestionTree(engine.config, DEFAULT_ROOT_TASK)
        engine.decompose_node(tree, tree.root_id)
        child = tree.node(tree.root_id).children[0]
        engine.decompose_node(tree, child)
        assert seen[DEFAULT_ROOT_TASK] == "0"
        assert seen["only child"] == "1"


# ===================================================================
# build_initial_tree
# ===================================================================

class TestBuildInitialTree:
    def test_max_width_mock_builds_86_nodes(self, main_paper):
        def reply(prompt, request):
            cap = int(request.variables["QUESTIONS NUM"])
            return json.dumps([f"{request.variables['PARENT QUESTION']}>{i}"
                               for i in range(cap)])

        engine = make_engine(main_paper, FunctionProvider(reply))
        tree = engine.build_initial_tree()
        assert len(tree) == 86  # 1 + 5 + 20 + 60
        assert tree.pending_decomposition() == []

    def test_empty_mock_leaves_bare_root(self, main_paper):
        engine = make_engine(main_paper, json_provider({QUESTION_GENERATOR: "[]"}))
        tree = engine.build_initial_tree()
        assert len(tree) == 1
        assert tree.ready_frontier() == [tree.root_id]

    def test_scripted_fixture_matches_golden_tree(self, main_paper, fixtures_dir):
        engine = make_engine(main_paper, make_pipeline_provider())
        tree = engine.build_initial_tree()
        golden_path = fixtures_dir / "golden" / "initial_tree.json"
        golden = json.loads(golden_path.read_text(encoding="utf-8"))
        assert tree.to_records() == golden


# ===================================================================
# answer_leaf
# ===================================================================

class TestAnswerLeaf:
    def test_small_paper_puts_all_chunks_in_context(self, main_paper):
        contexts = []

        def reply(prompt, request):
            contexts.append(request.variables["CONTEXT"])
            return "An answer."

        engine = make_engine(main_paper, FunctionProvider(reply))
        engine.chunks = engine.chunks[:2]  # 2 chunks, k=3
        tree = QuestionTree(TreeConfig(d_max=2), DEFAULT_ROOT_TASK)
        leaf = tree.attach_children(tree.root_id, ["why?"], NodeOrigin.INITIAL)[0]
        engine.answer_leaf(tree, leaf)
        assert engine.chunks[0].text in contexts[0]
        assert engine.chunks[1].text in contexts[0]

    def test_no_chunks_raises(self, main_paper):
        engine = make_engine(main_paper, json_provider({}))
        engine.chunks = []
        tree = QuestionTree(TreeConfig(d_max=2), DEFAULT_ROOT_TASK)
        leaf = tree.attach_children(tree.root_id, ["why?"], NodeOrigin.INITIAL)[0]
        with pytest.raises(NoChunks):
            engine.answer_leaf(tree, leaf)

    def test_evidence_refs_from_section_citation(self, main_paper):
        def reply(prompt, request):
            return "The claim is grounded in Section 2 of the paper."

        engine = make_engine(main_paper, FunctionProvider(reply))
        engine.chunks = [
            Chunk(index=0, section_path=("1 Intro",), body="a", token_count=1),
            Chunk(index=1, section_path=("2 Related Work",), body="b", token_count=1),
            Chunk(index=2, section_path=("3 Method",), body="c", token_count=1),
        ]
        from inquest.relevance import ScriptedScorer
        engine.relevance_backend = ScriptedScorer([1.0, 2.0, 3.0])
        tree = QuestionTree(TreeConfig(d_max=2), DEFAULT_ROOT_TASK)
        leaf = tree.attach_children(
            tree.root_id, ["what do prior methods do?"], NodeOrigin.INITIAL
        )[0]
        answer = engine.answer_leaf(tree, leaf)
        assert answer.evidence_refs == (1,)

    def test_answer_stored_verbatim(self, main_paper):
        engine = make_engine(main_paper, json_provider({
            "leaf_answer": "  exact text with spaces  ",
        }))
        tree = QuestionTree(TreeConfig(d_max=2), DEFAULT_ROOT_TASK)
        leaf = tree.attach_children(tree.root_id, ["q"], NodeOrigin.INITIAL)[0]
        answer = engine.answer_leaf(tree, leaf)
        assert answer.text == "  exact text with spaces  "


class TestMatchEvidence:
    def make_chunk(self, index, path):
        return Chunk(index=index, section_path=path, body="b", token_count=1)

    def test_section_number_reference(self):
        chunks = [self.make_chunk(0, ("3 Method", "3.2 Curvature Penalty")),
                  self.make_chunk(1, ("5 Conclusion",))]
        refs = match_evidence("As stated in Section 3.2, the step is damped.", chunks)
        assert refs == (0,)

    def test_header_line_containment(self):
        chunks = [self.make_chunk(4, ("2 Related Work",))]
        refs = match_evidence("See 2 Related Work for context.", chunks)
        assert refs == (4,)

    def test_no_match_is_empty(self):
        chunks = [self.make_chunk(0, ("3 Method",))]
        assert match_evidence("no citations here", chunks) == ()

    def test_trailing_dot_stripped(self):
        chunks = [self.make_chunk(2, ("4 Experiments", "4.1 Benchmarks and Protocol"))]
        refs = match_evidence("Described in Section 4.1.", chunks)
        assert refs == (2,)


# ===================================================================
# resolve_intermediate
# ===================================================================

def tree_with_answered_leaves(w_exp=2) -> tuple[QuestionTree, int]:
    tree = QuestionTree(TreeConfig(d_max=3, w_exp=w_exp), DEFAULT_ROOT_TASK)
    mid = tree.attach_children(tree.root_id, ["mid question"], NodeOrigin.INITIAL)[0]
    leaves = tree.attach_children(mid, ["leaf a", "leaf b"], NodeOrigin.INITIAL)
    for i, leaf in enumerate(leaves):
        tree.set_answer(leaf, QAAnswer(text=f"answer {i}"))
    return tree, mid


class TestResolveIntermediate:
    def test_synthesized_answer(self, main_paper):
        engine = make_engine(main_paper, json_provider({
            INTERMEDIATE_RESOLVE: json.dumps(
                {"chain_of_thought": "steps", "synthesized_answer": "the finding"}
            ),
        }))
        tree, mid = tree_with_answered_leaves()
        assert engine.resolve_intermediate(tree, mid) == "synthesized"
        node = tree.node(mid)
        assert node.state is NodeState.ANSWERED
        assert node.answer.text == "the finding"
        assert node.answer.chain_of_thought == "steps"

    def test_followups_expand_once(self, main_paper):
        engine = make_engine(main_paper, json_provider({
            INTERMEDIATE_RESOLVE: json.dumps(
                {"chain_of_thought": "gap", "follow_up_questions": ["f1", "f2"]}
            ),
        }))
        tree, mid = tree_with_answered_leaves()
        assert engine.resolve_intermediate(tree, mid) == "expanded"
        node = tree.node(mid)
        assert node.state is NodeState.AWAITING_CHILDREN
        assert node.expansion_round == 1
        expanded = [tree.node(c) for c in node.children
                    if tree.node(c).origin is NodeOrigin.EXPANDED]
        assert [n.text for n in expanded] == ["f1", "f2"]

    def test_followups_truncated_to_w_exp(self, main_paper, caplog):
        engine = make_engine(main_paper, json_provider({
            INTERMEDIATE_RESOLVE: json.dumps(
                {"chain_of_thought": "gap",
                 "follow_up_questions": ["f1", "f2", "f3", "f4"]}
            ),
        }))
        tree, mid = tree_with_answered_leaves()
        with caplog.at_level("WARNING"):
            engine.resolve_intermediate(tree, mid)
        expanded = [c for c in tree.node(mid).children
                    if tree.node(c).origin is NodeOrigin.EXPANDED]
        assert len(expanded) == 2

    def test_forced_synthesis_after_exhausted_round(self, main_paper):
        suffixes = []

        def reply(prompt, request):
            suffixes.append(request.suffix)
            if request.suffix:
                return json.dumps({"chain_of_thought": "fine",
                                   "synthesized_answer": "forced"})
            return json.dumps({"chain_of_thought": "gap",
                               "follow_up_questions": ["again"]})

        engine = make_engine(main_paper, FunctionProvider(reply))
        tree, mid = tree_with_answered_leaves()
        tree.node(mid).expansion_round = 1  # round already spent
        assert engine.resolve_intermediate(tree, mid) == "synthesized"
        assert tree.node(mid).answer.text == "forced"
        assert suffixes == ["", FORCED_SYNTHESIS_SUFFIX]

    def test_refusing_forced_synthesis_falls_back_to_reasoning(self, main_paper, caplog):
        engine = make_engine(main_paper, json_provider({
            INTERMEDIATE_RESOLVE: json.dumps(
                {"chain_of_thought": "all I can say",
                 "follow_up_questions": ["again"]}
            ),
        }))
        tree, mid = tree_with_answered_leaves()
        tree.node(mid).expansion_round = 1
        with caplog.at_level("WARNING"):
            engine.resolve_intermediate(tree, mid)
        assert tree.node(mid).answer.text == "all I can say"

    def test_empty_followups_force_synthesis_without_children(self, main_paper):
        def reply(prompt, request):
            if request.suffix:
                return json.dumps({"chain_of_thought": "c",
                                   "synthesized_answer": "done"})
            return json.dumps({"chain_of_thought": "c", "follow_up_questions": []})

        engine = make_engine(main_paper, FunctionProvider(reply))
        tree, mid = tree_with_answered_leaves()
        engine.resolve_intermediate(tree, mid)
        node = tree.node(mid)
        assert node.answer.text == "done"
        assert node.expansion_round == 0
        assert len(node.children) == 2  # no expansion happened

    def test_qa_pairs_rendered_in_child_order(self, main_paper):
        blocks = []

        def reply(prompt, request):
            blocks.append(request.variables["QUESTIONS AND ANSWERS"])
            return json.dumps({"chain_of_thought": "c", "synthesized_answer": "s"})

        engine = make_engine(main_paper, FunctionProvider(reply))
        tree, mid = tree_with_answered_leaves()
        engine.resolve_intermediate(tree, mid)
        assert blocks[0] == "1. Q: leaf a\nA: answer 0\n\n2. Q: leaf b\nA: answer 1"


# ===================================================================
# finalize_root / review parsing
# ===================================================================

class TestParseFullReview:
    def test_template_with_filler_parses_all_sections(self):
        review = parse_full_review(make_review_text("x"))
        assert isinstance(review, FullReview)
        assert review.rating == 5
        assert review.confidence == 4
        assert review.soundness == 3
        assert "deterministically" in review.summary

    def test_inline_values_parse(self):
        text = "\n".join([
            "Summary: Concise claim.",
            "Strengths: Good idea.",
            "Weaknesses: Slim evaluation.",
            "Questions: Why now?",
            "Soundness: 3",
            "Presentation: 3",
            "Contribution: 2",
            "Rating: 5",
            "Confidence: 4",
        ])
        review = parse_full_review(text)
        assert (review.rating, review.confidence) == (5, 4)
        assert review.summary == "Concise claim."

    def test_missing_section_raises(self):
        text = make_review_text("x").replace("**Confidence:**", "**Sureness:**")
        with pytest.raises(TemplateSectionMissing, match="Confidence"):
            parse_full_review(text)

    def test_out_of_scale_rating_rejected(self):
        text = make_review_text("x").replace("**Rating:**\n\n5", "**Rating:**\n\n12")
        with pytest.raises(MalformedOutput, match="Rating"):
            parse_full_review(text)

    def test_non_numeric_rating_rejected(self):
        text = make_review_text("x").replace("**Rating:**\n\n5", "**Rating:**\n\nfine")
        with pytest.raises(MalformedOutput):
            parse_full_review(text)

    def test_prose_starting_with_section_word_not_a_header(self):
        text = make_review_text("x").replace(
            "- Limited scope of evaluation.",
            "- Questions about scaling remain unanswered.",
        )
        review = parse_full_review(text)
        assert "Questions about scaling" in review.weaknesses


class TestFinalizeRoot:
    def test_comments_mode(self, main_paper):
        provider = make_pipeline_provider(comments=["c1", "c2"])
        engine = make_engine(main_paper, provider, mode=RunMode.FEEDBACK_COMMENTS)
        result = engine.run()
        assert result.output.comments == ("c1", "c2")
        assert result.output.full_review is None

    def test_output_exclusivity_enforced(self):
        with pytest.raises(ValueError):
            ReviewOutput(full_review=None, comments=None)

    def test_root_state_finalized_after_run(self, main_paper):
        engine = make_engine(main_paper, make_pipeline_provider())
        result = engine.run()
        assert result.tree.node(result.tree.root_id).state is NodeState.FINALIZED


# ===================================================================
# run_review
# ===================================================================

class TestRunReview:
    def test_full_run_produces_review_and_stats(self, main_paper):
        engine = make_engine(main_paper, make_pipeline_provider(expand_marker="aspect 1"))
        result = engine.run()
        assert result.output.full_review.rating == 5
        assert result.stats["expanded_nodes"] >= 1
        assert result.stats["total_nodes"] == len(result.tree)
        assert result.stats["node_bound"] == max_node_bound(engine.config)
        assert result.ledger.total_tokens > 0

    def test_two_runs_byte_identical(self, main_paper):
        results = []
        for _ in range(2):
            engine = make_engine(
                main_paper, make_pipeline_provider(expand_marker="aspect 1")
            )
            results.append(engine.run())
        a, b = results
        assert a.tree.to_records() == b.tree.to_records()
        assert a.ledger.to_payload() == b.ledger.to_payload()
        assert a.output.full_review.raw_text == b.output.full_review.raw_text

    def test_zero_child_root_still_produces_output(self, main_paper):
        qa_blocks = []

        def reply(prompt, request):
            if request.template_id == QUESTION_GENERATOR:
                return "[]"
            qa_blocks.append(request.variables["QUESTIONS AND ANSWERS"])
            return make_review_text("degenerate")

        engine = make_engine(main_paper, FunctionProvider(reply))
        result = engine.run()
        assert result.output.full_review is not None
        assert qa_blocks == ["(none)"]

    def test_adversarial_run_terminates_at_bound(self, main_paper):
        engine = make_engine(main_paper, make_adversarial_provider())
        result = engine.run()
        bound = max_node_bound(engine.config)
        assert len(result.tree) <= bound
        assert len(result.tree) == bound  # max width + always expand hits it
        for node in result.tree.nodes():
            assert node.answer is not None
            assert node.depth <= engine.config.d_max

    def test_step_limit_interrupts_after_checkpoint(self, main_paper):
        checkpoints = []
        gateway = Gateway(make_pipeline_provider(), sleep=lambda s: None)
        engine = ReviewEngine(
            paper=main_paper,
            run_config=RunConfig(mode=RunMode.FULL_REVIEW),
            gateway=gateway,
            relevance_backend=EmbeddingCosineScorer(HashEmbedding()),
            checkpoint=lambda tree: checkpoints.append(len(tree)),
        )
        with pytest.raises(RunInterrupted):
            engine.run(step_limit=3)
        assert len(checkpoints) == 4  # initial tree + 3 steps

    def test_no_sibling_leakage_in_resolve_prompts(self, main_paper):
        calls = []
        base = make_pipeline_provider(expand_marker="aspect 2")

        def spy(prompt, request):
            if request.template_id == INTERMEDIATE_RESOLVE:
                calls.append(dict(request.variables))
            return base.fn(prompt, request)

        engine = make_engine(main_paper, FunctionProvider(spy))
        result = engine.run()
        tree = result.tree
        nodes_by_text = {n.text: n for n in tree.nodes()}
        for variables in calls:
            node = nodes_by_text[variables["QUESTION"]]
            child_texts = {tree.node(c).text for c in node.children}
            block = variables["QUESTIONS AND ANSWERS"]
            questions_in_block = {
                line.split(". Q: ", 1)[1]
                for line in block.split("\n") if ". Q: " in line
            }
            # Every question in the block is one of the node's own children.
            assert questions_in_block <= child_texts
            # And no other node's question appears.
            foreign = set(nodes_by_text) - child_texts
            for text in foreign:
                if text in child_texts:
                    continue
                assert f"Q: {text}\n" not in block + "\n"


def test_render_qa_pairs_numbering():
    assert render_qa_pairs([]) == "(none)"
    assert render_qa_pairs([("q1", "a1"), ("q2", "a2")]) == (
        "1. Q: q1\nA: a1\n\n2. Q: q2\nA: a2"
    )
