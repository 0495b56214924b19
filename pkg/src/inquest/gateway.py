"""Provider-agnostic chat-completion gateway.

One `Gateway` wraps a provider (real HTTP endpoint or deterministic
mock), renders prompt templates, retries transient failures with
exponential backoff, enforces an optional run-level token budget, and
appends exactly one ledger entry per completed call. JSON-producing
calls go through `complete_json`, which re-asks once with a repair
suffix before giving up.

Providers only need a `complete(prompt, request)` method returning
`(text, usage | None)`; when usage is absent the gateway estimates token
counts with the local counter and flags the entry as estimated.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

import requests

from .errors import BudgetExceeded, MalformedOutput, ProviderError, Timeout
from .templates import JSON_REPAIR_SUFFIX, render_template
from .tokens import count_tokens

# --- requests / results -------------------------------------------------


@dataclass(frozen=True)
class CompletionRequest:
    """One templated call. `suffix` is extra text appended after the
    rendered template (used for JSON repair and forced synthesis); it
    participates in mock keying so fixtures can script both phases."""

    template_id: str
    variables: dict[str, str] = field(hash=False)
    temperature: float = 0.0
    max_output_tokens: int = 32768
    suffix: str = ""


@dataclass(frozen=True)
class Usage:
    input_tokens: int
    output_tokens: int


@dataclass(frozen=True)
class CompletionResult:
    text: str
    input_tokens: int
    output_tokens: int
    provider: str
    attempts: int
    estimated: bool = False


# --- token ledger -------------------------------------------------------


@dataclass(frozen=True)
class LedgerEntry:
    tag: str
    input_tokens: int
    output_tokens: int
    estimated: bool = False


class TokenLedger:
    """Append-only per-call token accounting with exact derived totals."""

    def __init__(self, entries: Iterable[LedgerEntry] = ()) -> None:
        self.entries: list[LedgerEntry] = list(entries)

    def append(self, entry: LedgerEntry) -> None:
        self.entries.append(entry)

    @property
    def input_tokens(self) -> int:
        return sum(e.input_tokens for e in self.entries)

    @property
    def output_tokens(self) -> int:
        return sum(e.output_tokens for e in self.entries)

    @property
    def total_tokens(self) -> int:
        return self.input_tokens + self.output_tokens

    def per_tag(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for e in self.entries:
            slot = out.setdefault(
                e.tag, {"input_tokens": 0, "output_tokens": 0, "total_tokens": 0, "calls": 0}
            )
            slot["input_tokens"] += e.input_tokens
            slot["output_tokens"] += e.output_tokens
            slot["total_tokens"] += e.input_tokens + e.output_tokens
            slot["calls"] += 1
        return out

    def to_payload(self) -> dict:
        return {
            "schema_version": 1,
            "entries": [
                {
                    "tag": e.tag,
                    "input_tokens": e.input_tokens,
                    "output_tokens": e.output_tokens,
                    "estimated": e.estimated,
                }
                for e in self.entries
            ],
            "totals": {
                "input_tokens": self.input_tokens,
                "output_tokens": self.output_tokens,
                "total_tokens": self.total_tokens,
            },
            "per_tag": self.per_tag(),
        }

    @staticmethod
    def from_payload(payload: dict) -> "TokenLedger":
        return TokenLedger(
            LedgerEntry(
                tag=e["tag"],
                input_tokens=e["input_tokens"],
                output_tokens=e["output_tokens"],
                estimated=e.get("estimated", False),
            )
            for e in payload.get("entries", [])
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_payload(), ensure_ascii=False, indent=2, sort_keys=True)
            + "\n",
            encoding="utf-8",
        )

    @staticmethod
    def load(path: str | Path) -> "TokenLedger":
        return TokenLedger.from_payload(
            json.loads(Path(path).read_text(encoding="utf-8"))
        )


# --- providers ----------------------------------------------------------


def variables_hash(variables: dict[str, str], suffix: str = "") -> str:
    """Stable short hash keying mock fixture files."""
    material: dict[str, str] = dict(variables)
    if suffix:
        material["__suffix__"] = suffix
    canonical = json.dumps(material, sort_keys=True, ensure_ascii=False,
                           separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


class DirectoryMockProvider:
    """Deterministic mock reading responses from human-editable files.

    Lookup order for a call: `<root>/<template_id>/<hash>.txt` keyed by
    the variables hash, then `<root>/<template_id>/default.txt`.
    """

    name = "mock"

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)

    def complete(self, prompt: str, request: CompletionRequest):
        key = variables_hash(request.variables, request.suffix)
        for candidate in (
            self.root / request.template_id / f"{key}.txt",
            self.root / request.template_id / "default.txt",
        ):
            if candidate.is_file():
                return candidate.read_text(encoding="utf-8"), None
        raise ProviderError(
            f"mock script has no response for {request.template_id}/{key} "
            f"and no default under {self.root}"
        )


class FunctionProvider:
    """Mock computing the reply from the request; deterministic if `fn` is."""

    def __init__(self, fn: Callable[[str, CompletionRequest], str], name: str = "mock-fn"):
        self.fn = fn
        self.name = name

    def complete(self, prompt: str, request: CompletionRequest):
        return self.fn(prompt, request), None


class QueueProvider:
    """Scripted reply sequence for tests; exceptions in the queue are raised."""

    name = "mock-queue"

    def __init__(self, replies: Iterable[str | Exception]) -> None:
        self.replies = list(replies)
        self.calls = 0

    def complete(self, prompt: str, request: CompletionRequest):
        self.calls += 1
        if not self.replies:
            raise ProviderError("scripted provider ran out of replies")
        reply = self.replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        return reply, None


class OpenAIChatProvider:
    """Client for OpenAI-compatible `/chat/completions` endpoints."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 120.0,
        session: requests.Session | None = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.session = session or requests.Session()
        self.name = model

    def complete(self, prompt: str, request: CompletionRequest):
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        try:
            response = self.session.post(
                f"{self.base_url}/chat/completions",
                json=body,
                headers=headers,
                timeout=self.timeout,
            )
        except requests.Timeout as exc:
            raise Timeout(f"provider {self.name} timed out: {exc}") from exc
        except requests.RequestException as exc:
            raise ProviderError(f"provider {self.name} unreachable: {exc}") from exc
        if response.status_code >= 500:
            raise ProviderError(f"provider {self.name} returned {response.status_code}")
        if response.status_code >= 400:
            err = ProviderError(
                f"provider {self.name} rejected the request "
                f"({response.status_code}): {response.text[:500]}"
            )
            err.retryable = False
            raise err
        payload = response.json()
        try:
            text = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"provider {self.name} reply missing content") from exc
        usage = None
        if isinstance(payload.get("usage"), dict):
            u = payload["usage"]
            if "prompt_tokens" in u and "completion_tokens" in u:
                usage = Usage(int(u["prompt_tokens"]), int(u["completion_tokens"]))
        return text, usage


# --- gateway ------------------------------------------------------------


class Gateway:
    """Thread-safe completion front end with retries, budget, and ledger."""

    def __init__(
        self,
        provider,
        counter: str = "heuristic",
        ledger: TokenLedger | None = None,
        budget: int | None = None,
        max_attempts: int = 3,
        backoff_base: float = 0.25,
        sleep: Callable[[float], None] = time.sleep,
        max_concurrency: int = 4,
        capture: Callable[[int, CompletionRequest, str, str], None] | None = None,
        call_seq_start: int = 0,
    ) -> None:
        self.provider = provider
        self.counter = counter
        self.ledger = ledger if ledger is not None else TokenLedger()
        self.budget = budget
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.sleep = sleep
        self.capture = capture
        self._limiter = threading.Semaphore(max_concurrency)
        self._lock = threading.Lock()
        self._call_seq = call_seq_start

    def render(self, request: CompletionRequest) -> str:
        return render_template(request.template_id, request.variables) + request.suffix

    def complete(self, request: CompletionRequest) -> CompletionResult:
        """Run one completion; exactly one ledger entry per completed call."""
        with self._lock:
            if self.budget is not None and self.ledger.total_tokens >= self.budget:
                raise BudgetExceeded(
                    f"token budget {self.budget} already consumed "
                    f"({self.ledger.total_tokens} tokens)"
                )
        prompt = self.render(request)
        attempts = 0
        text = None
        usage = None
        with self._limiter:
            for attempt in range(1, self.max_attempts + 1):
                attempts = attempt
                try:
                    text, usage = self.provider.complete(prompt, request)
                    if not text:
                        raise ProviderError(
                            f"provider {self.provider.name} returned empty text"
                        )
                    break
                except ProviderError as exc:
                    if not getattr(exc, "retryable", True) or attempt == self.max_attempts:
                        raise
                    self.sleep(self.backoff_base * (2 ** (attempt - 1)))
        assert text is not None
        if usage is not None:
            input_tokens, output_tokens, estimated = (
                usage.input_tokens, usage.output_tokens, False,
            )
        else:
            input_tokens = count_tokens(prompt, self.counter)
            output_tokens = count_tokens(text, self.counter)
            estimated = True
        result = CompletionResult(
            text=text,
            input_tokens=input_tokens,
            output_tokens=output_tokens,
            provider=self.provider.name,
            attempts=attempts,
            estimated=estimated,
        )
        with self._lock:
            self.ledger.append(
                LedgerEntry(request.template_id, input_tokens, output_tokens, estimated)
            )
            if self.budget is not None and self.ledger.total_tokens > self.budget:
                # The result is being discarded, so it must not enter the
                # prompt capture: a resumed run redoes this call and the
                # redo has to land on the same sequence number.
                raise BudgetExceeded(
                    f"token budget {self.budget} exceeded "
                    f"({self.ledger.total_tokens} tokens after this call)"
                )
            if self.capture is not None:
                self.capture(self._call_seq, request, prompt, text)
            self._call_seq += 1
        return result

    def complete_json(self, request: CompletionRequest, expected: str):
        """Complete and parse; one automatic repair re-ask on bad JSON."""
        result = self.complete(request)
        try:
            return extract_json(result.text, expected), result
        except MalformedOutput:
            repair = replace(request, suffix=request.suffix + JSON_REPAIR_SUFFIX)
            result = self.complete(repair)
            return extract_json(result.text, expected), result


# --- JSON extraction ----------------------------------------------------

ARRAY_OF_STRINGS = "array_of_strings"
RESOLVE_OBJECT = "resolve_object"
JUDGE_OBJECT = "judge_object"
MATCH_OBJECT = "match_object"
MAJOR_MINOR_OBJECT = "major_minor_object"

JUDGE_DIMENSIONS = (
    "Comprehensiveness",
    "Technical Depth",
    "Clarity",
    "Constructiveness",
    "Specificity",
    "Evidence Support",
    "Consistency",
    "Overall Quality",
)

RELATEDNESS_LEVELS = ("none", "weak", "medium", "high")
SPECIFICITY_LEVELS = ("less", "same", "more")

_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)


def _valid_array_of_strings(value) -> bool:
    return isinstance(value, list) and all(isinstance(v, str) for v in value)


def _valid_resolve_object(value) -> bool:
    if not isinstance(value, dict):
        return False
    if not isinstance(value.get("chain_of_thought"), str):
        return False
    has_answer = "synthesized_answer" in value
    has_followups = "follow_up_questions" in value
    if has_answer == has_followups:  # both or neither: violates mutual exclusion
        return False
    if has_answer:
        return isinstance(value["synthesized_answer"], str)
    return _valid_array_of_strings(value["follow_up_questions"])


def _valid_judge_object(value) -> bool:
    if not isinstance(value, dict):
        return False
    for dim in JUDGE_DIMENSIONS:
        slot = value.get(dim)
        if not isinstance(slot, dict):
            return False
        score = slot.get("score")
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            return False
        if not 0 <= score <= 10:
            return False
    return True


def _valid_match_object(value) -> bool:
    if not isinstance(value, dict):
        return False
    if "matches" in value:
        matches = value["matches"]
        if not isinstance(matches, list):
            return False
        for pair in matches:
            if not isinstance(pair, dict):
                return False
            gen, ref = pair.get("generated"), pair.get("reference")
            if isinstance(gen, bool) or isinstance(ref, bool):
                return False
            if not isinstance(gen, int) or not isinstance(ref, int):
                return False
        return True
    return (
        value.get("relatedness") in RELATEDNESS_LEVELS
        and value.get("specificity") in SPECIFICITY_LEVELS
    )


def _valid_major_minor_object(value) -> bool:
    return (
        isinstance(value, dict)
        and _valid_array_of_strings(value.get("major"))
        and _valid_array_of_strings(value.get("minor"))
    )


_VALIDATORS = {
    ARRAY_OF_STRINGS: _valid_array_of_strings,
    RESOLVE_OBJECT: _valid_resolve_object,
    JUDGE_OBJECT: _valid_judge_object,
    MATCH_OBJECT: _valid_match_object,
    MAJOR_MINOR_OBJECT: _valid_major_minor_object,
}


def _scan_for_value(text: str, opener: str, validator) -> tuple[bool, object]:
    decoder = json.JSONDecoder()
    for index, char in enumerate(text):
        if char != opener:
            continue
        try:
            value, _ = decoder.raw_decode(text, index)
        except json.JSONDecodeError:
            continue
        if validator(value):
            return True, value
    return False, None


def extract_json(text: str, expected: str):
    """Pull the first JSON value of the expected shape out of model text.

    Code fences are searched first, then the raw text; prose around the
    value is ignored. Raises MalformedOutput when nothing validates.
    """
    if expected not in _VALIDATORS:
        raise ValueError(f"unknown expected shape {expected!r}")
    validator = _VALIDATORS[expected]
    opener = "[" if expected == ARRAY_OF_STRINGS else "{"
    for source in [m.group(1) for m in _FENCE_RE.finditer(text)] + [text]:
        found, value = _scan_for_value(source, opener, validator)
        if found:
            return value
    raise MalformedOutput(
        f"no JSON value of shape {expected!r} in model output "
        f"(first 200 chars: {text[:200]!r})"
    )
