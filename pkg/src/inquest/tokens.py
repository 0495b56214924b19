"""Pluggable token counting.

The engine never assumes a particular tokenizer. Counters are registered
under string handles; the default `heuristic` counter (ceil(chars / 4))
keeps the whole pipeline dependency-free and deterministic. A BPE-backed
counter (tiktoken) registers itself automatically when the library and
its encoding data are actually usable.
"""

from __future__ import annotations

import math
from typing import Callable

from .errors import UnknownCounter

TokenCounter = Callable[[str], int]

_COUNTERS: dict[str, TokenCounter] = {}


def register_counter(handle: str, counter: TokenCounter) -> None:
    """Register `counter` under `handle`, replacing any previous one."""
    _COUNTERS[handle] = counter


def get_counter(handle: str) -> TokenCounter:
    if handle not in _COUNTERS:
        raise UnknownCounter(f"no token counter registered under {handle!r}")
    return _COUNTERS[handle]


def count_tokens(text: str, counter: str | TokenCounter = "heuristic") -> int:
    """Count tokens in `text` with a registered counter (or a callable).

    Deterministic for a fixed (text, counter); empty text counts 0.
    """
    fn = counter if callable(counter) else get_counter(counter)
    if text == "":
        return 0
    n = fn(text)
    return max(0, int(n))


def _heuristic(text: str) -> int:
    return math.ceil(len(text) / 4)


register_counter("heuristic", _heuristic)


def _try_register_tiktoken() -> None:
    # Optional: needs both the package and its downloadable encoding data.
    try:
        import tiktoken

        enc = tiktoken.get_encoding("cl100k_base")
    except Exception:
        return
    register_counter("tiktoken:cl100k_base", lambda text: len(enc.encode(text)))


_try_register_tiktoken()
