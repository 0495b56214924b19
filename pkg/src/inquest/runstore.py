"""Run directories: persistence, locking, resumption, cost reporting.

A run directory holds `run.json` (record: config snapshot, status,
stats), `tree.json`, `ledger.json`, a `prompts/` capture of every
rendered prompt and raw completion, and the final `review.md` or
`comments.json`. State is checkpointed atomically after every node
resolution, which is exactly the granularity resumption relies on. A
lock file gives one process exclusive ownership of a directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

from filelock import FileLock, Timeout as LockTimeout

from .errors import BudgetExceeded, CorruptState, EngineError, RunInterrupted
from .gateway import CompletionRequest, Gateway, TokenLedger
from .orchestrator import ReviewEngine, RunConfig, RunMode, RunResult
from .tree import QuestionTree, TreeConfig

SCHEMA_VERSION = 1


class RunStatus(str, Enum):
    RUNNING = "running"
    COMPLETE = "complete"
    ABORTED = "aborted"


_STATUS_ORDER = [RunStatus.RUNNING, RunStatus.COMPLETE, RunStatus.ABORTED]


@dataclass
class RunRecord:
    run_id: str
    paper_id: str
    mode: str
    config: dict
    status: RunStatus = RunStatus.RUNNING
    created_at: str = ""
    updated_at: str = ""
    stats: dict = field(default_factory=dict)
    abort_reason: str | None = None

    def advance(self, status: RunStatus) -> None:
        if _STATUS_ORDER.index(status) < _STATUS_ORDER.index(self.status):
            raise CorruptState(
                f"run status cannot move back from {self.status.value} to {status.value}"
            )
        self.status = status

    def to_payload(self) -> dict:
        payload = {
            "schema_version": SCHEMA_VERSION,
            "run_id": self.run_id,
            "paper_id": self.paper_id,
            "mode": self.mode,
            "config": self.config,
            "status": self.status.value,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "stats": self.stats,
        }
        if self.abort_reason is not None:
            payload["abort_reason"] = self.abort_reason
        return payload

    @staticmethod
    def from_payload(payload: dict) -> "RunRecord":
        try:
            return RunRecord(
                run_id=payload["run_id"],
                paper_id=payload["paper_id"],
                mode=payload["mode"],
                config=payload["config"],
                status=RunStatus(payload["status"]),
                created_at=payload.get("created_at", ""),
                updated_at=payload.get("updated_at", ""),
                stats=payload.get("stats", {}),
                abort_reason=payload.get("abort_reason"),
            )
        except (KeyError, ValueError) as exc:
            raise CorruptState(f"bad run record: {exc}") from exc


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _dump(payload) -> str:
    return json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


class RunDirectory:
    """Owns the on-disk layout of one run."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.record_path = self.path / "run.json"
        self.tree_path = self.path / "tree.json"
        self.ledger_path = self.path / "ledger.json"
        self.prompts_path = self.path / "prompts"
        self.review_path = self.path / "review.md"
        self.comments_path = self.path / "comments.json"
        self._lock = FileLock(str(self.path / ".lock"))

    # -- lifecycle --

    @staticmethod
    def create(path: str | Path, record: RunRecord) -> "RunDirectory":
        run_dir = RunDirectory(path)
        run_dir.path.mkdir(parents=True, exist_ok=True)
        run_dir.prompts_path.mkdir(exist_ok=True)
        record.created_at = record.created_at or _now()
        run_dir.save_record(record)
        return run_dir

    def exists(self) -> bool:
        return self.record_path.is_file()

    def acquire(self, timeout: float = 0.0):
        try:
            self._lock.acquire(timeout=timeout)
        except LockTimeout as exc:
            raise EngineError(
                f"run directory {self.path} is locked by another process"
            ) from exc
        return self._lock

    def release(self) -> None:
        if self._lock.is_locked:
            self._lock.release()

    # -- artifacts --

    def save_record(self, record: RunRecord) -> None:
        record.updated_at = _now()
        _atomic_write(self.record_path, _dump(record.to_payload()))

    def load_record(self) -> RunRecord:
        try:
            payload = json.loads(self.record_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CorruptState(f"cannot read {self.record_path}: {exc}") from exc
        return RunRecord.from_payload(payload)

    def save_tree(self, tree: QuestionTree) -> None:
        _atomic_write(self.tree_path, _dump(tree.to_records()))

    def load_tree(self, config: TreeConfig) -> QuestionTree:
        return QuestionTree.load(self.tree_path, config)

    def save_ledger(self, ledger: TokenLedger) -> None:
        _atomic_write(self.ledger_path, _dump(ledger.to_payload()))

    def load_ledger(self) -> TokenLedger:
        try:
            return TokenLedger.load(self.ledger_path)
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise CorruptState(f"cannot read {self.ledger_path}: {exc}") from exc

    def prompt_count(self) -> int:
        if not self.prompts_path.is_dir():
            return 0
        return sum(1 for p in self.prompts_path.iterdir()
                   if p.name.endswith(".prompt.txt"))

    def write_prompt(
        self, seq: int, request: CompletionRequest, prompt: str, completion: str
    ) -> None:
        stem = f"{seq:04d}_{request.template_id}"
        (self.prompts_path / f"{stem}.prompt.txt").write_text(prompt, encoding="utf-8")
        (self.prompts_path / f"{stem}.completion.txt").write_text(
            completion, encoding="utf-8"
        )

    def write_output(self, result: RunResult) -> None:
        if result.output.full_review is not None:
            self.review_path.write_text(
                result.output.full_review.raw_text, encoding="utf-8"
            )
        else:
            _atomic_write(self.comments_path, _dump(list(result.output.comments)))


def drive_run(
    run_dir: RunDirectory,
    record: RunRecord,
    paper,
    run_config: RunConfig,
    provider,
    relevance_backend,
    counter: str = "heuristic",
    step_limit: int | None = None,
    resume: bool = False,
) -> RunResult:
    """Execute (or resume) a run inside a locked run directory.

    On budget exhaustion the partial state stays on disk and the record
    flips to aborted; a step-limited stop leaves the record running so
    `resume` can pick it up.
    """
    run_dir.acquire()
    try:
        ledger = run_dir.load_ledger() if resume and run_dir.ledger_path.is_file() \
            else TokenLedger()
        gateway = Gateway(
            provider,
            counter=counter,
            ledger=ledger,
            budget=run_config.budget,
            capture=run_dir.write_prompt,
            call_seq_start=run_dir.prompt_count(),
        )
        tree = None
        if resume and run_dir.tree_path.is_file():
            tree = run_dir.load_tree(run_config.tree)

        def checkpoint(t: QuestionTree) -> None:
            run_dir.save_tree(t)
            run_dir.save_ledger(gateway.ledger)
            run_dir.save_record(record)

        engine = ReviewEngine(
            paper=paper,
            run_config=run_config,
            gateway=gateway,
            relevance_backend=relevance_backend,
            checkpoint=checkpoint,
            counter=counter,
        )
        try:
            result = engine.run(tree=tree, step_limit=step_limit)
        except RunInterrupted:
            run_dir.save_record(record)
            raise
        except BudgetExceeded:
            record.abort_reason = "budget"
            record.advance(RunStatus.ABORTED)
            run_dir.save_record(record)
            raise
        record.stats = result.stats
        record.advance(RunStatus.COMPLETE)
        run_dir.write_output(result)
        run_dir.save_tree(result.tree)
        run_dir.save_ledger(result.ledger)
        run_dir.save_record(record)
        return result
    finally:
        run_dir.release()


def resume_run(
    run_dir: RunDirectory,
    paper,
    provider,
    relevance_backend,
    counter: str = "heuristic",
    step_limit: int | None = None,
) -> tuple[RunResult | None, RunRecord]:
    """Continue a persisted run; a complete run is a no-op.

    Raises CorruptState when the persisted artifacts cannot be loaded.
    """
    record = run_dir.load_record()
    if record.status is RunStatus.COMPLETE:
        return None, record
    try:
        # record.config nests the engine snapshot under "run" next to the
        # provider/backend wiring; older flat snapshots load directly.
        snapshot = record.config.get("run", record.config)
        run_config = run_config_from_snapshot(snapshot)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptState(f"bad config snapshot in {run_dir.record_path}: {exc}") from exc
    if not run_dir.tree_path.is_file():
        raise CorruptState(f"{run_dir.tree_path} is missing")
    run_dir.load_tree(run_config.tree)  # fail fast on truncated state
    if record.status is RunStatus.ABORTED:
        if record.abort_reason != "budget":
            raise CorruptState(
                f"run aborted for {record.abort_reason!r}; only budget aborts resume"
            )
        # The one sanctioned status rollback: a budget abort is re-entered.
        record.status = RunStatus.RUNNING
        record.abort_reason = None
    result = drive_run(
        run_dir,
        record,
        paper,
        run_config,
        provider,
        relevance_backend,
        counter=counter,
        step_limit=step_limit,
        resume=True,
    )
    return result, record


def run_config_snapshot(run_config: RunConfig) -> dict:
    tree = run_config.tree
    return {
        "mode": run_config.mode.value,
        "budget": run_config.budget,
        "root_task_text": run_config.root_task_text,
        "tree": {
            "d_max": tree.d_max,
            "w1": tree.w1,
            "w_exp": tree.w_exp,
            "k_chunks": tree.k_chunks,
            "chunk_size": tree.chunk_size,
        },
    }


def run_config_from_snapshot(snapshot: dict) -> RunConfig:
    return RunConfig(
        mode=RunMode(snapshot["mode"]),
        budget=snapshot.get("budget"),
        root_task_text=snapshot.get("root_task_text", ""),
        tree=TreeConfig(**snapshot["tree"]),
    )


# --- cost reporting -----------------------------------------------------


def cost_table(run_dirs: list[str | Path]) -> dict:
    """Per-run and mean input/output/total token usage."""
    rows = []
    for path in run_dirs:
        ledger_path = Path(path) / "ledger.json"
        ledger = TokenLedger.load(ledger_path) if ledger_path.is_file() else TokenLedger()
        rows.append(
            {
                "run": str(path),
                "input_tokens": ledger.input_tokens,
                "output_tokens": ledger.output_tokens,
                "total_tokens": ledger.total_tokens,
            }
        )
    n = len(rows)
    mean = {
        "input_tokens": sum(r["input_tokens"] for r in rows) / n if n else 0.0,
        "output_tokens": sum(r["output_tokens"] for r in rows) / n if n else 0.0,
        "total_tokens": sum(r["total_tokens"] for r in rows) / n if n else 0.0,
    }
    return {"runs": rows, "mean": mean}


def format_cost_table(table: dict) -> str:
    """Render rows as `run  input  output  total` with thousands separators."""

    def fmt(value: float) -> str:
        if float(value).is_integer():
            return f"{int(value):,}"
        return f"{value:,.1f}"

    lines = [f"{'run':<40} {'input':>14} {'output':>14} {'total':>14}"]
    for row in table["runs"]:
        lines.append(
            f"{row['run']:<40} {fmt(row['input_tokens']):>14} "
            f"{fmt(row['output_tokens']):>14} {fmt(row['total_tokens']):>14}"
        )
    mean = table["mean"]
    lines.append(
        f"{'mean':<40} {fmt(mean['input_tokens']):>14} "
        f"{fmt(mean['output_tokens']):>14} {fmt(mean['total_tokens']):>14}"
    )
    return "\n".join(lines)
