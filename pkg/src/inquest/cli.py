"""Command-line surface.

Commands: `review`, `comments`, `resume`, `eval judge|align|metrics`,
`bench sample|extract|merge`, `cost`. One JSON config file describes the
provider and backends; environment variables only ever supply secrets
(the config names the variable, never the key). Exit codes: 0 success,
1 bad input, 2 budget exceeded, 3 provider failure, 4 malformed output
or corrupt state.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import bench
from .documents import load_paper
from .embeddings import (
    CosineSimilarity,
    HashEmbedding,
    RemoteEmbedding,
    wait_until_ready,
)
from .errors import (
    BackendUnavailable,
    BudgetExceeded,
    CorruptState,
    EngineError,
    MalformedOutput,
    ProviderError,
    RunInterrupted,
    TemplateSectionMissing,
)
from .gateway import DirectoryMockProvider, Gateway, OpenAIChatProvider, TokenLedger
from .metrics import (
    CommentList,
    RatingSet,
    itf_idf,
    judge_review,
    llm_alignment,
    mae_mse,
    sn_metrics,
)
from .orchestrator import RunConfig, RunMode
from .relevance import EmbeddingCosineScorer, RemoteScorer, ScriptedScorer
from .runstore import (
    RunDirectory,
    RunRecord,
    RunStatus,
    cost_table,
    drive_run,
    format_cost_table,
    resume_run,
    run_config_snapshot,
)
from .tree import TreeConfig

logger = logging.getLogger("inquest")


def _dump(payload) -> str:
    return json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def _write_json(path: str | Path, payload) -> None:
    Path(path).write_text(_dump(payload), encoding="utf-8")


# --- config wiring ------------------------------------------------------

DEFAULT_CONFIG: dict = {
    "provider": {"kind": "mock", "script_dir": "mock_script"},
    "tree": {},
    "relevance": {"backend": "embedding"},
    "embedding": {"kind": "hash"},
    "counter": "heuristic",
    "budget": None,
}


def load_config(path: str | None) -> dict:
    config = {k: (dict(v) if isinstance(v, dict) else v)
              for k, v in DEFAULT_CONFIG.items()}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise EngineError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise EngineError(f"config file {path} is not valid JSON: {exc}") from exc
        for key, value in user.items():
            if isinstance(value, dict) and isinstance(config.get(key), dict):
                config[key] = {**config[key], **value}
            else:
                config[key] = value
    return config


def build_provider(config: dict):
    provider = config["provider"]
    kind = provider.get("kind")
    if kind == "mock":
        return DirectoryMockProvider(provider["script_dir"])
    if kind == "openai":
        api_key = None
        key_env = provider.get("api_key_env")
        if key_env:
            api_key = os.environ.get(key_env)
            if not api_key:
                raise EngineError(
                    f"provider api key variable {key_env!r} is not set"
                )
        return OpenAIChatProvider(
            base_url=provider["base_url"],
            model=provider["model"],
            api_key=api_key,
            timeout=float(provider.get("timeout", 120.0)),
        )
    raise EngineError(f"unknown provider kind {kind!r}")


def build_embedding(config: dict):
    embedding = config["embedding"]
    kind = embedding.get("kind")
    if kind == "hash":
        return HashEmbedding(dim=int(embedding.get("dim", 256)))
    if kind == "remote":
        wait_until_ready(embedding["base_url"],
                         timeout=float(embedding.get("ready_timeout", 10.0)))
        return RemoteEmbedding(
            base_url=embedding["base_url"],
            shared_secret=embedding.get("shared_secret"),
        )
    raise EngineError(f"unknown embedding kind {kind!r}")


def build_relevance(config: dict):
    relevance = config["relevance"]
    backend = relevance.get("backend")
    if backend == "embedding":
        return EmbeddingCosineScorer(build_embedding(config))
    if backend == "remote":
        wait_until_ready(relevance["base_url"],
                         timeout=float(relevance.get("ready_timeout", 10.0)))
        return RemoteScorer(
            base_url=relevance["base_url"],
            shared_secret=relevance.get("shared_secret"),
        )
    if backend == "scripted":
        return ScriptedScorer(relevance["scores"])
    raise EngineError(f"unknown relevance backend {backend!r}")


def build_run_config(mode: RunMode, config: dict, budget_override: int | None) -> RunConfig:
    budget = budget_override if budget_override is not None else config.get("budget")
    kwargs = {}
    if config.get("root_task_text"):
        kwargs["root_task_text"] = config["root_task_text"]
    return RunConfig(
        mode=mode,
        tree=TreeConfig(**config.get("tree", {})),
        budget=budget,
        **kwargs,
    )


# --- run commands -------------------------------------------------------


def _cmd_run(args: argparse.Namespace, mode: RunMode) -> int:
    config = load_config(args.config)
    paper = load_paper(args.paper_dir)
    run_config = build_run_config(mode, config, args.budget)
    out = Path(args.out) if args.out else Path("runs") / f"{paper.id}-{mode.value}"
    run_dir = RunDirectory(out)
    if run_dir.exists():
        record = run_dir.load_record()
        if record.status is RunStatus.COMPLETE:
            print(f"run {out} is already complete; nothing to do")
            return 0
        raise EngineError(
            f"run directory {out} holds an unfinished run; use `inquest resume {out}`"
        )
    record = RunRecord(
        run_id=out.name,
        paper_id=paper.id,
        mode=mode.value,
        config={
            "run": run_config_snapshot(run_config),
            "paper_dir": str(args.paper_dir),
            "provider": config["provider"],
            "relevance": config["relevance"],
            "embedding": config["embedding"],
            "counter": config["counter"],
        },
    )
    run_dir = RunDirectory.create(out, record)
    result = drive_run(
        run_dir,
        record,
        paper,
        run_config,
        provider=build_provider(config),
        relevance_backend=build_relevance(config),
        counter=config["counter"],
        step_limit=args.step_limit,
    )
    artifact = run_dir.review_path if mode is RunMode.FULL_REVIEW else run_dir.comments_path
    print(f"run complete: {artifact} ({result.stats['total_nodes']} nodes, "
          f"{result.ledger.total_tokens:,} tokens)")
    return 0


def cmd_review(args: argparse.Namespace) -> int:
    return _cmd_run(args, RunMode.FULL_REVIEW)


def cmd_comments(args: argparse.Namespace) -> int:
    return _cmd_run(args, RunMode.FEEDBACK_COMMENTS)


def cmd_resume(args: argparse.Namespace) -> int:
    run_dir = RunDirectory(args.run_dir)
    if not run_dir.exists():
        raise EngineError(f"no run record under {args.run_dir}")
    record = run_dir.load_record()
    if record.status is RunStatus.COMPLETE:
        print(f"run {args.run_dir} is already complete; nothing to do")
        return 0
    config = {
        "provider": record.config["provider"],
        "relevance": record.config["relevance"],
        "embedding": record.config["embedding"],
        "counter": record.config.get("counter", "heuristic"),
    }
    paper = load_paper(record.config["paper_dir"])
    result, record = resume_run(
        run_dir,
        paper,
        provider=build_provider(config),
        relevance_backend=build_relevance(config),
        counter=config["counter"],
        step_limit=args.step_limit,
    )
    if result is not None:
        print(f"run resumed and completed: {run_dir.path}")
    return 0


def cmd_cost(args: argparse.Namespace) -> int:
    table = cost_table(args.run_dirs)
    print(format_cost_table(table))
    if args.out:
        _write_json(args.out, table)
    return 0


# --- eval commands ------------------------------------------------------


def _gateway_for(config: dict) -> Gateway:
    return Gateway(build_provider(config), counter=config["counter"],
                   ledger=TokenLedger(), budget=config.get("budget"))


def cmd_eval_judge(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    paper = load_paper(args.paper_dir)
    review_text = Path(args.review).read_text(encoding="utf-8")
    gateway = _gateway_for(config)
    result = judge_review(
        paper, review_text, gateway, runs=args.runs, temperature=args.temperature
    )
    payload = {
        "scores": result.scores,
        "raw_runs": list(result.raw_runs),
        "failed_runs": result.failed_runs,
        "ledger": gateway.ledger.to_payload(),
    }
    _write_json(args.out, payload)
    print(f"judge scores written to {args.out}")
    return 0


def cmd_eval_align(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    generated = json.loads(Path(args.generated).read_text(encoding="utf-8"))
    refs = json.loads(Path(args.refs).read_text(encoding="utf-8"))
    merged = refs["merged"] if isinstance(refs, dict) else refs
    gateway = _gateway_for(config)
    result = llm_alignment(
        CommentList(paper_id=args.paper_id, comments=tuple(generated)),
        CommentList(paper_id=args.paper_id, comments=tuple(merged)),
        gateway,
    )
    _write_json(args.out, result.to_payload())
    print(f"alignment written to {args.out}")
    return 0


def _mean(values: list[float]) -> float:
    return sum(values) / len(values)


def cmd_eval_metrics(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    entries = json.loads(Path(args.data).read_text(encoding="utf-8"))
    sim = CosineSimilarity(build_embedding(config))
    generated_lists = [
        CommentList(e["paper_id"], tuple(e["generated"])) for e in entries
    ]
    report: dict = {
        "schema_version": 1,
        "papers": len(entries),
        "itf_idf": itf_idf(generated_lists, sim, t=args.threshold),
    }
    sn_rows = []
    for entry, pred in zip(entries, generated_lists):
        reviewers = [
            CommentList(entry["paper_id"], tuple(r))
            for r in entry.get("reviewers", [])
            if r
        ]
        if reviewers and pred.comments:
            sn_rows.append(sn_metrics(pred, reviewers, sim))
    report["sn"] = (
        {
            "p": _mean([r["precision"] for r in sn_rows]),
            "r": _mean([r["recall"] for r in sn_rows]),
            "f1": _mean([r["f1"] for r in sn_rows]),
        }
        if sn_rows
        else None
    )
    rated = [e for e in entries if e.get("ratings") and e.get("reference_ratings")]
    report["ratings"] = (
        {
            dim: stats
            for dim, stats in mae_mse(
                [RatingSet(**e["ratings"]) for e in rated],
                [[RatingSet(**r) for r in e["reference_ratings"]] for e in rated],
            ).items()
        }
        if rated
        else None
    )
    report["alignment"] = _collect_dir_means(
        args.align_dir,
        ("precision", "recall", "jaccard", "highly_related_ratio", "more_specific_ratio"),
    )
    judge = _collect_judge_means(args.judge_dir)
    report["judge"] = judge
    _write_json(args.out, report)
    print(f"metrics report written to {args.out}")
    return 0


def _collect_dir_means(directory: str | None, keys: tuple[str, ...]) -> dict | None:
    if not directory:
        return None
    files = sorted(Path(directory).glob("*.json"))
    if not files:
        return None
    payloads = [json.loads(f.read_text(encoding="utf-8")) for f in files]
    return {key: _mean([p[key] for p in payloads]) for key in keys}


def _collect_judge_means(directory: str | None) -> dict | None:
    if not directory:
        return None
    files = sorted(Path(directory).glob("*.json"))
    if not files:
        return None
    payloads = [json.loads(f.read_text(encoding="utf-8"))["scores"] for f in files]
    dims = payloads[0].keys()
    return {dim: _mean([p[dim] for p in payloads]) for dim in dims}


# --- bench commands -----------------------------------------------------


def cmd_bench_sample(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    raw = json.loads(Path(args.candidates).read_text(encoding="utf-8"))
    embedder = build_embedding(config)
    candidates = []
    for entry in raw:
        vector = entry.get("embedding")
        if vector is None:
            vector = embedder.embed(
                [bench.embedding_text(entry["title"], entry["abstract"])]
            )[0].tolist()
        candidates.append(
            bench.Candidate(
                paper_id=entry["paper_id"],
                venue=entry["venue"],
                decision=entry["decision"],
                keywords=frozenset(entry.get("keywords", [])),
                embedding=tuple(vector),
            )
        )
    selections = bench.sample_strata(candidates, args.per_stratum, args.seed)
    payload = {
        "schema_version": 1,
        "seed": args.seed,
        "per_stratum": args.per_stratum,
        "strata": [
            {
                "venue": venue,
                "decision": decision,
                "selected": selected,
                "trace": [
                    {
                        "paper_id": pick.paper_id,
                        "min_distance": pick.min_distance,
                        "relaxed": pick.relaxed,
                    }
                    for pick in trace
                ],
            }
            for (venue, decision), (selected, trace) in sorted(selections.items())
        ],
    }
    _write_json(args.out, payload)
    print(f"corpus written to {args.out}")
    return 0


def cmd_bench_extract(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    gateway = _gateway_for(config)
    reviewers = []
    for path in args.reviews:
        text = Path(path).read_text(encoding="utf-8")
        extracted = bench.extract_comments(text, gateway)
        reviewers.append({"major": list(extracted.major), "minor": list(extracted.minor)})
    _write_json(args.out, {"reviewers": reviewers, "merged": []})
    print(f"extracted comments for {len(reviewers)} review(s) to {args.out}")
    return 0


def cmd_bench_merge(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    gateway = _gateway_for(config)
    refs = json.loads(Path(args.refs).read_text(encoding="utf-8"))
    merged = bench.merge_comments(
        [r.get("major", []) for r in refs.get("reviewers", [])], gateway
    )
    refs["merged"] = merged
    _write_json(args.refs if not args.out else args.out, refs)
    print(f"merged {len(merged)} comment(s)")
    return 0


# --- parser -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="inquest",
        description="Question-tree review engine and evaluation suite.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_parser(name: str, handler) -> None:
        p = sub.add_parser(name)
        p.add_argument("paper_dir", help="directory with meta.json and body.md")
        p.add_argument("--config", help="engine config JSON")
        p.add_argument("--out", help="run directory (default runs/<paper>-<mode>)")
        p.add_argument("--budget", type=int, help="run-level token cap")
        p.add_argument("--step-limit", type=int, dest="step_limit")
        p.set_defaults(handler=handler)

    add_run_parser("review", cmd_review)
    add_run_parser("comments", cmd_comments)

    p = sub.add_parser("resume")
    p.add_argument("run_dir")
    p.add_argument("--step-limit", type=int, dest="step_limit")
    p.set_defaults(handler=cmd_resume)

    p = sub.add_parser("cost")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", help="also write the table as JSON")
    p.set_defaults(handler=cmd_cost)

    eval_parser = sub.add_parser("eval")
    eval_sub = eval_parser.add_subparsers(dest="eval_command", required=True)

    p = eval_sub.add_parser("judge")
    p.add_argument("--paper-dir", required=True, dest="paper_dir")
    p.add_argument("--review", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--temperature", type=float, default=0.1)
    p.set_defaults(handler=cmd_eval_judge)

    p = eval_sub.add_parser("align")
    p.add_argument("--paper-id", required=True, dest="paper_id")
    p.add_argument("--generated", required=True, help="JSON array of comments")
    p.add_argument("--refs", required=True, help="refs.json with a merged list")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_eval_align)

    p = eval_sub.add_parser("metrics")
    p.add_argument("--data", required=True,
                   help="JSON array of per-paper entries (generated, reviewers, ratings)")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--align-dir", dest="align_dir")
    p.add_argument("--judge-dir", dest="judge_dir")
    p.set_defaults(handler=cmd_eval_metrics)

    bench_parser = sub.add_parser("bench")
    bench_sub = bench_parser.add_subparsers(dest="bench_command", required=True)

    p = bench_sub.add_parser("sample")
    p.add_argument("--candidates", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--per-stratum", type=int, required=True, dest="per_stratum")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_bench_sample)

    p = bench_sub.add_parser("extract")
    p.add_argument("--reviews", nargs="+", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_bench_extract)

    p = bench_sub.add_parser("merge")
    p.add_argument("--refs", required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_bench_merge)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except RunInterrupted as exc:
        print(f"run interrupted: {exc}", file=sys.stderr)
        return 0
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return 2
    except (ProviderError, BackendUnavailable) as exc:
        print(f"provider failure: {exc}", file=sys.stderr)
        return 3
    except (MalformedOutput, TemplateSectionMissing, CorruptState) as exc:
        print(f"malformed output or corrupt state: {exc}", file=sys.stderr)
        return 4
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
