"""The review-question tree: lifecycle, width/depth schedule, frontiers.

The tree is a single logical state machine. All mutation goes through
`QuestionTree` methods (the one writer); nodes move strictly forward
through generated -> awaiting_children -> ready -> answered ->
finalized, with the single allowed re-entry ready -> awaiting_children
when a node spends its one follow-up expansion round (the pair
(expansion_round, state) is still lexicographically monotone).

Depth is 1-indexed with the root at depth 1; prompt rendering translates
to the 0-indexed view the generator prompt expects.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import (
    CorruptState,
    DepthExceeded,
    DepthOutOfRange,
    ExpansionExhausted,
    TreeStateError,
    WidthExceeded,
)


class NodeKind(str, Enum):
    ROOT = "root"
    INTERMEDIATE = "intermediate"
    LEAF = "leaf"


class NodeOrigin(str, Enum):
    INITIAL = "initial"
    EXPANDED = "expanded"


class NodeState(str, Enum):
    GENERATED = "generated"
    AWAITING_CHILDREN = "awaiting_children"
    READY = "ready"
    ANSWERED = "answered"
    FINALIZED = "finalized"


@dataclass(frozen=True)
class TreeConfig:
    """Shape parameters of the question tree.

    The per-depth child cap starts at `w1` for the root and drops by one
    per level (never below 1); follow-up expansion adds at most `w_exp`
    children once per intermediate node.
    """

    d_max: int = 4
    w1: int = 5
    w_exp: int = 2
    k_chunks: int = 3
    chunk_size: int = 1024

    def __post_init__(self) -> None:
        if self.d_max < 2:
            raise ValueError(f"d_max must be >= 2, got {self.d_max}")
        if self.w1 < 1:
            raise ValueError(f"w1 must be >= 1, got {self.w1}")
        if self.w_exp < 0:
            raise ValueError(f"w_exp must be >= 0, got {self.w_exp}")
        if self.k_chunks < 1:
            raise ValueError(f"k_chunks must be >= 1, got {self.k_chunks}")
        if self.chunk_size < 1:
            raise ValueError(f"chunk_size must be >= 1, got {self.chunk_size}")


def width_limit(config: TreeConfig, depth: int) -> int:
    """Maximum initial children of a node at `depth` (1 <= depth < d_max)."""
    if not 1 <= depth < config.d_max:
        raise DepthOutOfRange(
            f"depth {depth} outside [1, {config.d_max - 1}] for the width schedule"
        )
    return max(1, config.w1 - (depth - 1))


def max_node_bound(config: TreeConfig) -> int:
    """Upper bound on tree size if every non-leaf node expands once.

    Every node at depth < d_max may carry its scheduled initial children
    plus `w_exp` expanded ones, and each child heads the same worst case
    one level down; the root itself never expands. Finite because depth
    strictly increases.
    """

    def subtree(depth: int) -> int:
        if depth >= config.d_max:
            return 1
        fanout = width_limit(config, depth) + config.w_exp
        return 1 + fanout * subtree(depth + 1)

    return 1 + width_limit(config, 1) * subtree(2)


@dataclass(frozen=True)
class QAAnswer:
    text: str
    evidence_refs: tuple[int | str, ...] = ()
    chain_of_thought: str | None = None

    def to_record(self) -> dict:
        record: dict = {"text": self.text, "evidence_refs": list(self.evidence_refs)}
        if self.chain_of_thought is not None:
            record["chain_of_thought"] = self.chain_of_thought
        return record

    @staticmethod
    def from_record(record: dict) -> "QAAnswer":
        return QAAnswer(
            text=record["text"],
            evidence_refs=tuple(record.get("evidence_refs", [])),
            chain_of_thought=record.get("chain_of_thought"),
        )


@dataclass
class QuestionNode:
    id: int
    parent: int | None
    depth: int
    text: str
    kind: NodeKind
    origin: NodeOrigin
    state: NodeState
    expansion_round: int = 0
    answer: QAAnswer | None = None
    children: list[int] = field(default_factory=list)

    @property
    def answered(self) -> bool:
        return self.answer is not None

    def to_record(self) -> dict:
        record = {
            "id": self.id,
            "parent": self.parent,
            "depth": self.depth,
            "text": self.text,
            "kind": self.kind.value,
            "origin": self.origin.value,
            "state": self.state.value,
            "expansion_round": self.expansion_round,
            "children": list(self.children),
        }
        if self.answer is not None:
            record["answer"] = self.answer.to_record()
        return record

    @staticmethod
    def from_record(record: dict) -> "QuestionNode":
        answer = record.get("answer")
        return QuestionNode(
            id=record["id"],
            parent=record["parent"],
            depth=record["depth"],
            text=record["text"],
            kind=NodeKind(record["kind"]),
            origin=NodeOrigin(record["origin"]),
            state=NodeState(record["state"]),
            expansion_round=record["expansion_round"],
            answer=QAAnswer.from_record(answer) if answer is not None else None,
            children=list(record["children"]),
        )


class QuestionTree:
    """Mutable question tree with enforced lifecycle and caps."""

    def __init__(self, config: TreeConfig, root_text: str) -> None:
        self.config = config
        self._nodes: dict[int, QuestionNode] = {}
        self._next_id = 0
        self.root_id = self._add_node(
            parent=None, depth=1, text=root_text, kind=NodeKind.ROOT,
            origin=NodeOrigin.INITIAL,
        )

    # -- construction --

    def _add_node(
        self,
        parent: int | None,
        depth: int,
        text: str,
        kind: NodeKind,
        origin: NodeOrigin,
    ) -> int:
        node = QuestionNode(
            id=self._next_id, parent=parent, depth=depth, text=text,
            kind=kind, origin=origin, state=NodeState.GENERATED,
        )
        self._nodes[node.id] = node
        self._next_id += 1
        return node.id

    def attach_children(
        self, parent_id: int, questions: list[str], origin: NodeOrigin
    ) -> list[int]:
        """Append child questions to a node, enforcing the schedule caps.

        Initial children require a freshly generated parent and respect
        the per-depth width limit; expanded children require a parent
        mid-resolution with its expansion round unspent and respect the
        `w_exp` cap. Children landing at d_max are leaves from birth.
        """
        parent = self.node(parent_id)
        if parent.kind is NodeKind.LEAF:
            raise TreeStateError(f"node {parent_id} is a leaf; cannot attach children")
        if parent.depth + 1 > self.config.d_max:
            raise DepthExceeded(
                f"children of node {parent_id} would sit below depth {self.config.d_max}"
            )
        if origin is NodeOrigin.INITIAL:
            if parent.state is not NodeState.GENERATED:
                raise TreeStateError(
                    f"initial children need a generated parent, node {parent_id} "
                    f"is {parent.state.value}"
                )
            cap = width_limit(self.config, parent.depth)
            if len(questions) > cap:
                raise WidthExceeded(
                    f"{len(questions)} initial children exceed the cap of {cap} "
                    f"at depth {parent.depth}"
                )
        else:
            if parent.expansion_round != 0:
                raise ExpansionExhausted(
                    f"node {parent_id} already spent its expansion round"
                )
            if parent.state is not NodeState.READY:
                raise TreeStateError(
                    f"expanded children need a ready parent, node {parent_id} "
                    f"is {parent.state.value}"
                )
            if len(questions) > self.config.w_exp:
                raise WidthExceeded(
                    f"{len(questions)} follow-ups exceed w_exp={self.config.w_exp}"
                )
        child_depth = parent.depth + 1
        kind = NodeKind.LEAF if child_depth == self.config.d_max else NodeKind.INTERMEDIATE
        ids = [
            self._add_node(parent_id, child_depth, q, kind, origin) for q in questions
        ]
        parent.children.extend(ids)
        parent.state = NodeState.AWAITING_CHILDREN
        if origin is NodeOrigin.EXPANDED:
            parent.expansion_round = 1
        return ids

    # -- queries --

    def node(self, node_id: int) -> QuestionNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise TreeStateError(f"unknown node id {node_id}") from None

    def nodes(self) -> list[QuestionNode]:
        return [self._nodes[i] for i in sorted(self._nodes)]

    def __len__(self) -> int:
        return len(self._nodes)

    def children_answered(self, node_id: int) -> bool:
        return all(self.node(c).answered for c in self.node(node_id).children)

    def pending_decomposition(self) -> list[int]:
        """Non-leaf nodes still awaiting their decomposition call."""
        return [
            n.id
            for n in self.nodes()
            if n.state is NodeState.GENERATED
            and n.kind is not NodeKind.LEAF
            and n.depth < self.config.d_max
        ]

    def ready_frontier(self) -> list[int]:
        """Unanswered leaves plus unanswered resolvable non-leaf nodes.

        A non-leaf node is resolvable once it is past decomposition
        (state != generated) and every child carries an answer. Ordering
        is ascending node id (creation order) for reproducibility.
        """
        out = []
        for node in self.nodes():
            if node.answered:
                continue
            if node.kind is NodeKind.LEAF:
                out.append(node.id)
            elif node.state is not NodeState.GENERATED and self.children_answered(node.id):
                out.append(node.id)
        return out

    # -- transitions --

    def mark_leaf(self, node_id: int) -> None:
        """Re-kind a generated childless intermediate as a leaf."""
        node = self.node(node_id)
        if node.kind is not NodeKind.INTERMEDIATE:
            raise TreeStateError(f"cannot mark {node.kind.value} node {node_id} as leaf")
        if node.state is not NodeState.GENERATED or node.children:
            raise TreeStateError(f"node {node_id} is past decomposition")
        node.kind = NodeKind.LEAF

    def mark_ready(self, node_id: int) -> None:
        node = self.node(node_id)
        if node.state not in (NodeState.GENERATED, NodeState.AWAITING_CHILDREN):
            raise TreeStateError(
                f"node {node_id} cannot become ready from {node.state.value}"
            )
        if not self.children_answered(node_id):
            raise TreeStateError(f"node {node_id} still has unanswered children")
        node.state = NodeState.READY

    def set_answer(self, node_id: int, answer: QAAnswer) -> None:
        node = self.node(node_id)
        if node.kind is NodeKind.LEAF:
            if node.state not in (NodeState.GENERATED, NodeState.READY):
                raise TreeStateError(f"leaf {node_id} is {node.state.value}")
        elif node.state is not NodeState.READY:
            raise TreeStateError(
                f"non-leaf node {node_id} must be ready to answer, is {node.state.value}"
            )
        if not self.children_answered(node_id):
            raise TreeStateError(f"node {node_id} has unanswered descendants")
        node.answer = answer
        node.state = NodeState.ANSWERED

    def mark_finalized(self) -> None:
        root = self.node(self.root_id)
        if root.state is not NodeState.ANSWERED:
            raise TreeStateError("root must be answered before finalization")
        root.state = NodeState.FINALIZED

    # -- statistics --

    def expansion_stats(self) -> dict:
        """Observed expansion behaviour, both raw and subtree-inclusive."""
        non_leaf = [
            n for n in self.nodes()
            if n.kind is NodeKind.INTERMEDIATE and n.children
        ]
        expanded_nodes = [n for n in non_leaf if n.expansion_round == 1]
        expanded_children = [
            n for n in self.nodes() if n.origin is NodeOrigin.EXPANDED
        ]
        subtree_total = 0
        stack = [n.id for n in expanded_children]
        while stack:
            subtree_total += 1
            stack.extend(self.node(stack.pop()).children)
        return {
            "non_leaf_nodes": len(non_leaf),
            "expanded_nodes": len(expanded_nodes),
            "expansion_trigger_rate": (
                len(expanded_nodes) / len(non_leaf) if non_leaf else 0.0
            ),
            "expanded_questions": len(expanded_children),
            "expanded_subtree_nodes": subtree_total,
            "total_nodes": len(self),
        }

    # -- persistence --

    def to_records(self) -> list[dict]:
        return [n.to_record() for n in self.nodes()]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_records(), ensure_ascii=False, indent=2, sort_keys=True)
            + "\n",
            encoding="utf-8",
        )

    @staticmethod
    def from_records(records: list[dict], config: TreeConfig) -> "QuestionTree":
        try:
            nodes = [QuestionNode.from_record(r) for r in records]
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptState(f"bad node record in tree state: {exc}") from exc
        if not nodes:
            raise CorruptState("tree state holds no nodes")
        roots = [n for n in nodes if n.parent is None]
        if len(roots) != 1 or roots[0].depth != 1:
            raise CorruptState("tree state must hold exactly one depth-1 root")
        tree = QuestionTree.__new__(QuestionTree)
        tree.config = config
        tree._nodes = {n.id: n for n in nodes}
        if len(tree._nodes) != len(nodes):
            raise CorruptState("duplicate node ids in tree state")
        for n in nodes:
            for child in n.children:
                if child not in tree._nodes:
                    raise CorruptState(f"node {n.id} references unknown child {child}")
        tree._next_id = max(tree._nodes) + 1
        tree.root_id = roots[0].id
        return tree

    @staticmethod
    def load(path: str | Path, config: TreeConfig) -> "QuestionTree":
        try:
            records = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CorruptState(f"cannot read tree state from {path}: {exc}") from exc
        if not isinstance(records, list):
            raise CorruptState(f"{path} does not hold a node array")
        return QuestionTree.from_records(records, config)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QuestionTree):
            return NotImplemented
        return self.config == other.config and self.to_records() == other.to_records()
