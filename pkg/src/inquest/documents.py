"""Paper representation, ingestion, and section-aware chunking.

A paper lives on disk as a directory with `meta.json` (identity and
abstract-level metadata) and `body.md` (ATX headings define the section
hierarchy, blank lines separate paragraphs). In memory everything is
immutable, so papers and chunks can be shared freely across threads.

Chunking packs whole paragraphs greedily up to a token target: a chunk
keeps absorbing paragraphs until the running total first reaches the
target, never splits a paragraph, and never crosses a top-level section
boundary. Each chunk's text is prefixed with a `A > B > C` header line
naming the section of its first paragraph; the header is metadata, not
body content, so stripping headers and concatenating chunk bodies in
order reproduces the original body string exactly.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import EmptyDocument, PaperInputError
from .tokens import TokenCounter, count_tokens, get_counter

HEADER_SEPARATOR = " > "

_ATX_RE = re.compile(r"^(#{1,6})\s+(.*\S)\s*$")


class Decision(str, Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class SectionHeading:
    """One heading in the table of contents; level is the path length."""

    path: tuple[str, ...]

    @property
    def level(self) -> int:
        return len(self.path)

    @property
    def title(self) -> str:
        return self.path[-1]


@dataclass(frozen=True)
class Section:
    """A heading path plus the ordered paragraphs directly under it."""

    path: tuple[str, ...]
    paragraphs: tuple[str, ...]


def derive_toc(sections: tuple[Section, ...]) -> tuple[SectionHeading, ...]:
    """TOC from paragraph-bearing sections only (no container headings)."""
    return tuple(SectionHeading(path=s.path) for s in sections if s.path)


@dataclass(frozen=True)
class Paper:
    id: str
    venue: str
    decision: Decision
    title: str
    abstract: str
    sections: tuple[Section, ...]
    keywords: tuple[str, ...] = ()
    # None means "derive from sections"; ingestion passes the headings it
    # actually saw so container headings without direct text still show up.
    toc: tuple[SectionHeading, ...] | None = None

    def __post_init__(self) -> None:
        if self.toc is None:
            object.__setattr__(self, "toc", derive_toc(self.sections))

    def paragraphs(self) -> list[tuple[tuple[str, ...], str]]:
        """All (section_path, paragraph) pairs in document order."""
        out: list[tuple[tuple[str, ...], str]] = []
        for section in self.sections:
            for para in section.paragraphs:
                out.append((section.path, para))
        return out

    def body_text(self) -> str:
        """The canonical body string: paragraphs joined by blank lines."""
        return "\n\n".join(para for _, para in self.paragraphs())

    def full_text(self) -> str:
        """Title, abstract, and body with section header lines."""
        parts = [self.title, "", "Abstract: " + self.abstract]
        current_path: tuple[str, ...] | None = None
        for path, para in self.paragraphs():
            if path != current_path:
                current_path = path
                if path:
                    parts.extend(["", HEADER_SEPARATOR.join(path)])
            parts.extend(["", para])
        return "\n".join(parts)

    def validate_for_run(self) -> None:
        if not self.title.strip():
            raise PaperInputError(f"paper {self.id!r} has an empty title")
        if not self.abstract.strip():
            raise PaperInputError(f"paper {self.id!r} has an empty abstract")


@dataclass(frozen=True)
class Chunk:
    """A token-bounded run of paragraphs from one top-level section.

    `text` starts with the section header line; `body` is the raw slice
    of the paper body covered by this chunk (including the blank-line
    separator that precedes it for every chunk after the first, so the
    bodies concatenate back to the original body string). `token_count`
    is the packing quantity: the sum of the per-paragraph token counts.
    """

    index: int
    section_path: tuple[str, ...]
    body: str = field(repr=False)
    token_count: int

    @property
    def text(self) -> str:
        return HEADER_SEPARATOR.join(self.section_path) + "\n" + self.body

    @property
    def header(self) -> str:
        return HEADER_SEPARATOR.join(self.section_path)


# --- ingestion ----------------------------------------------------------


def parse_body_markdown(
    markdown: str,
) -> tuple[tuple[Section, ...], tuple[SectionHeading, ...]]:
    """Split ATX-headed markdown into sections plus the full heading list.

    A heading of level h nests under the most recent shallower heading;
    skipped levels collapse, so a path's length may be less than the
    heading's `#` count. Text before any heading lands in a section with
    the empty path. The returned heading list covers every heading seen,
    including containers with no direct paragraphs.
    """
    sections: list[Section] = []
    headings: list[SectionHeading] = []
    stack: list[tuple[int, str]] = []  # (atx_level, title)
    current_paras: list[str] = []
    current_lines: list[str] = []

    def close_paragraph() -> None:
        if current_lines:
            current_paras.append("\n".join(current_lines))
            current_lines.clear()

    def close_section() -> None:
        close_paragraph()
        if current_paras:
            path = tuple(title for _, title in stack)
            sections.append(Section(path=path, paragraphs=tuple(current_paras)))
            current_paras.clear()

    for raw_line in markdown.splitlines():
        match = _ATX_RE.match(raw_line)
        if match:
            close_section()
            level = len(match.group(1))
            while stack and stack[-1][0] >= level:
                stack.pop()
            stack.append((level, match.group(2)))
            headings.append(SectionHeading(path=tuple(t for _, t in stack)))
            continue
        if raw_line.strip() == "":
            close_paragraph()
        else:
            current_lines.append(raw_line.rstrip())
    close_section()
    return tuple(sections), tuple(headings)


def load_paper(paper_dir: str | Path) -> Paper:
    """Load a paper from a `meta.json` + `body.md` directory."""
    paper_dir = Path(paper_dir)
    meta_path = paper_dir / "meta.json"
    body_path = paper_dir / "body.md"
    if not meta_path.is_file():
        raise PaperInputError(f"missing metadata file: {meta_path}")
    if not body_path.is_file():
        raise PaperInputError(f"missing body file: {body_path}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise PaperInputError(f"unparseable metadata file {meta_path}: {exc}") from exc
    for key in ("id", "title", "abstract"):
        if key not in meta:
            raise PaperInputError(f"{meta_path} lacks required key {key!r}")
    try:
        decision = Decision(meta.get("decision", "unknown"))
    except ValueError as exc:
        raise PaperInputError(f"{meta_path}: bad decision {meta['decision']!r}") from exc
    sections, headings = parse_body_markdown(body_path.read_text(encoding="utf-8"))
    return Paper(
        id=str(meta["id"]),
        venue=str(meta.get("venue", "")),
        decision=decision,
        title=str(meta["title"]),
        abstract=str(meta["abstract"]),
        sections=sections,
        keywords=tuple(str(k) for k in meta.get("keywords", [])),
        toc=headings,
    )


# --- chunking -----------------------------------------------------------


def chunk_paper(
    paper: Paper,
    target_size: int,
    counter: str | TokenCounter = "heuristic",
) -> list[Chunk]:
    """Greedy paragraph packing into section-scoped, token-bounded chunks.

    Each chunk is the maximal prefix of remaining paragraphs whose
    cumulative token count first reaches `target_size`; an oversize
    paragraph therefore forms its own chunk. Chunks never span top-level
    sections.
    """
    if target_size < 1:
        raise ValueError(f"target_size must be >= 1, got {target_size}")
    fn = counter if callable(counter) else get_counter(counter)
    paragraphs = paper.paragraphs()
    if not paragraphs:
        raise EmptyDocument(f"paper {paper.id!r} has no body paragraphs")

    chunks: list[Chunk] = []
    pending: list[tuple[tuple[str, ...], str]] = []
    pending_tokens = 0

    def close_chunk() -> None:
        nonlocal pending_tokens
        if not pending:
            return
        first_in_doc = not chunks
        body = ("" if first_in_doc else "\n\n") + "\n\n".join(p for _, p in pending)
        chunks.append(
            Chunk(
                index=len(chunks),
                section_path=pending[0][0],
                body=body,
                token_count=pending_tokens,
            )
        )
        pending.clear()
        pending_tokens = 0

    for path, para in paragraphs:
        top_level = path[0] if path else None
        pending_top = pending[0][0][0] if pending and pending[0][0] else None
        if pending and top_level != pending_top:
            close_chunk()
        pending.append((path, para))
        pending_tokens += count_tokens(para, fn)
        if pending_tokens >= target_size:
            close_chunk()
    close_chunk()
    return chunks


def write_chunks(chunks: list[Chunk], path: str | Path) -> None:
    """Dump chunks as `chunks.json` (stable key order, UTF-8)."""
    records = [
        {
            "index": c.index,
            "section_path": list(c.section_path),
            "text": c.text,
            "token_count": c.token_count,
        }
        for c in chunks
    ]
    Path(path).write_text(
        json.dumps(records, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


# --- metadata view ------------------------------------------------------


def render_toc_outline(toc: tuple[SectionHeading, ...]) -> str:
    """Indented one-heading-per-line outline, two spaces per level."""
    return "\n".join("  " * (h.level - 1) + h.title for h in toc)


def extract_metadata(paper: Paper) -> tuple[str, str, str]:
    """(title, abstract, toc outline): the metadata the generator sees."""
    return paper.title, paper.abstract, render_toc_outline(paper.toc)
