"""Turns raw generation output into a validated, diverse corpus.

Stages run in a fixed order: parse scenario blocks, drop near-duplicate
captions, cap keyword occurrences, pair candidate images for human review.
Each stage is idempotent on its own output, and every removal is accounted
for in a :class:`FilterReport`.

The block wire format is ``{Caption: "..."} {Rationale: "..."} {Situation:
"..."}``. Inside quoted values, ``\\"``, ``\\\\``, ``\\{`` and ``\\}``
escape the structural characters; anything else between blocks is ignored.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .corpus import CorpusError, Explanation, ExplanationSource, ScenarioRecord, make_explanation
from .prompts import load_template, render

__all__ = [
    "ScenarioBlock",
    "ImagePairing",
    "FilterReport",
    "BlockParseError",
    "SearchError",
    "parse_scenario_blocks",
    "serialize_scenario_blocks",
    "mint_id",
    "dedupe",
    "keyword_diversity_filter",
    "caption_similarity",
    "pair_images",
    "refine_explanation",
    "save_pairings",
    "load_pairings",
]

DEFAULT_DEDUPE_THRESHOLD = 0.8
DEFAULT_KEYWORD_CAP = 20
MAX_IMAGE_CANDIDATES = 5

_LABELS = ("Caption", "Rationale", "Situation")
_ESCAPES = {'"': '"', "\\": "\\", "{": "{", "}": "}"}


class BlockParseError(ValueError):
    """Malformed scenario-block text; carries line and column (1-based)."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class SearchError(Exception):
    """The image search provider failed."""


@dataclass(frozen=True)
class ScenarioBlock:
    """One parsed caption/rationale/situation triple."""

    caption: str
    rationale: str
    situation: str
    source_line: int = field(default=0, compare=False)

    def __post_init__(self):
        for name in ("caption", "rationale", "situation"):
            if not getattr(self, name).strip():
                raise ValueError(f"scenario block field {name!r} must be non-empty")


@dataclass(frozen=True)
class ImagePairing:
    """Candidate images for a scenario, awaiting human selection."""

    scenario_id: str
    candidates: tuple[tuple[str, int], ...] = ()
    selected: int | str | None = None
    reviewer: str = ""
    note: str = ""

    def __post_init__(self):
        if len(self.candidates) > MAX_IMAGE_CANDIDATES:
            raise ValueError(f"at most {MAX_IMAGE_CANDIDATES} candidates allowed")
        if isinstance(self.selected, int) and not 0 <= self.selected < len(self.candidates):
            raise ValueError(f"selected index {self.selected} out of range")
        object.__setattr__(self, "candidates", tuple((str(u), int(r)) for u, r in self.candidates))


@dataclass(frozen=True)
class FilterReport:
    """Accounting for one or more filtering stages; arithmetic must balance."""

    input_count: int
    removed_duplicates: int
    removed_by_keyword: int
    keyword_counts: dict[str, int]
    output_count: int

    def __post_init__(self):
        expected = self.input_count - self.removed_duplicates - self.removed_by_keyword
        if self.output_count != expected:
            raise ValueError(
                f"filter report does not balance: {self.input_count} - "
                f"{self.removed_duplicates} - {self.removed_by_keyword} != {self.output_count}"
            )

    def merge(self, later: "FilterReport") -> "FilterReport":
        """Chain this report with the report of a stage run on its output."""
        if later.input_count != self.output_count:
            raise ValueError("later stage input does not match earlier stage output")
        return FilterReport(
            input_count=self.input_count,
            removed_duplicates=self.removed_duplicates + later.removed_duplicates,
            removed_by_keyword=self.removed_by_keyword + later.removed_by_keyword,
            keyword_counts={**self.keyword_counts, **later.keyword_counts},
            output_count=later.output_count,
        )


class _Scanner:
    """Character scanner with 1-based line/column tracking."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1
        self.column = 1

    def eof(self) -> bool:
        return self.pos >= len(self.text)

    def peek(self) -> str:
        return self.text[self.pos]

    def advance(self) -> str:
        ch = self.text[self.pos]
        self.pos += 1
        if ch == "\n":
            self.line += 1
            self.column = 1
        else:
            self.column += 1
        return ch

    def error(self, message: str) -> BlockParseError:
        return BlockParseError(message, self.line, self.column)

    def skip_ws(self) -> None:
        while not self.eof() and self.peek() in " \t\r\n":
            self.advance()


def _read_label(scanner: _Scanner) -> str:
    scanner.skip_ws()
    start_line, start_col = scanner.line, scanner.column
    label = []
    while not scanner.eof() and (scanner.peek().isalpha() or scanner.peek() == "_"):
        label.append(scanner.advance())
    name = "".join(label)
    if name not in _LABELS:
        raise BlockParseError(
            f"expected a field label ({', '.join(_LABELS)}), found {name!r}",
            start_line,
            start_col,
        )
    scanner.skip_ws()
    if scanner.eof() or scanner.peek() != ":":
        raise scanner.error(f"expected ':' after field label {name!r}")
    scanner.advance()
    return name


def _read_string(scanner: _Scanner) -> str:
    scanner.skip_ws()
    if scanner.eof() or scanner.peek() != '"':
        raise scanner.error("expected opening '\"'")
    open_line, open_col = scanner.line, scanner.column
    scanner.advance()
    out = []
    while True:
        if scanner.eof():
            raise BlockParseError("unterminated string", open_line, open_col)
        ch = scanner.advance()
        if ch == '"':
            return "".join(out)
        if ch == "\\":
            if scanner.eof():
                raise scanner.error("dangling escape at end of input")
            esc = scanner.advance()
            if esc not in _ESCAPES:
                raise scanner.error(f"invalid escape sequence '\\{esc}'")
            out.append(_ESCAPES[esc])
        elif ch in "{}":
            raise scanner.error(f"unescaped brace delimiter {ch!r} inside field value")
        else:
            out.append(ch)


def _read_block(scanner: _Scanner) -> tuple[str, str, int]:
    """Read one ``{Label: "value"}`` block; returns (label, value, start line)."""
    start_line = scanner.line
    scanner.advance()  # consume '{'
    label = _read_label(scanner)
    value = _read_string(scanner)
    scanner.skip_ws()
    if scanner.eof() or scanner.peek() != "}":
        raise scanner.error("unbalanced braces: expected '}' to close the block")
    scanner.advance()
    return label, value, start_line


def parse_scenario_blocks(raw: str) -> list[ScenarioBlock]:
    """Extract every caption/rationale/situation triple from raw model output.

    Triples must be complete and in order; a partial triple raises rather
    than being silently dropped. Prose between blocks is ignored, but stray
    structural braces are rejected with their position.
    """
    scanner = _Scanner(raw)
    blocks: list[ScenarioBlock] = []
    pending: dict[str, str] = {}
    pending_line = 0
    while True:
        while not scanner.eof() and scanner.peek() != "{":
            if scanner.peek() == "}":
                raise scanner.error("unbalanced braces: '}' outside any block")
            scanner.advance()
        if scanner.eof():
            break
        label, value, line = _read_block(scanner)
        expected = _LABELS[len(pending)]
        if label != expected:
            raise BlockParseError(
                f"incomplete triple starting at line {pending_line or line}: expected "
                f"{{{expected}: ...}} but found {{{label}: ...}}",
                line,
                1,
            )
        if not value.strip():
            raise BlockParseError(f"empty {label} value", line, 1)
        if not pending:
            pending_line = line
        pending[label.lower()] = value
        if len(pending) == len(_LABELS):
            blocks.append(
                ScenarioBlock(
                    caption=pending["caption"],
                    rationale=pending["rationale"],
                    situation=pending["situation"],
                    source_line=pending_line,
                )
            )
            pending = {}
            pending_line = 0
    if pending:
        missing = _LABELS[len(pending)]
        raise BlockParseError(
            f"incomplete triple starting at line {pending_line}: missing {{{missing}: ...}}",
            scanner.line,
            scanner.column,
        )
    return blocks


def _escape(value: str) -> str:
    return (
        value.replace("\\", "\\\\").replace('"', '\\"').replace("{", "\\{").replace("}", "\\}")
    )


def serialize_scenario_blocks(blocks: Iterable[ScenarioBlock]) -> str:
    """Render blocks back to the wire format; inverse of the parser."""
    lines = []
    for block in blocks:
        lines.append(
            f'{{Caption: "{_escape(block.caption)}"}} '
            f'{{Rationale: "{_escape(block.rationale)}"}} '
            f'{{Situation: "{_escape(block.situation)}"}}'
        )
    return "\n".join(lines) + ("\n" if lines else "")


def mint_id(block: ScenarioBlock, prefix: str = "s") -> str:
    """Content-hash id for a parsed block; stable across pipeline reruns."""
    h = hashlib.sha256()
    for part in (block.caption, block.rationale, block.situation):
        encoded = part.encode("utf-8")
        h.update(len(encoded).to_bytes(4, "little"))
        h.update(encoded)
    return f"{prefix}-{h.hexdigest()[:16]}"


# -- diversity filtering -------------------------------------------------------


def _trigrams(caption: str) -> frozenset[str]:
    lowered = caption.lower()
    if len(lowered) < 3:
        return frozenset({lowered})
    return frozenset(lowered[i : i + 3] for i in range(len(lowered) - 2))


def caption_similarity(a: str, b: str) -> float:
    """Jaccard similarity of the captions' lowercased character trigrams."""
    ta, tb = _trigrams(a), _trigrams(b)
    union = len(ta | tb)
    return len(ta & tb) / union if union else 1.0


def dedupe(
    records: Sequence[ScenarioRecord],
    similarity_threshold: float = DEFAULT_DEDUPE_THRESHOLD,
) -> tuple[list[ScenarioRecord], FilterReport]:
    """Remove near-duplicate captions, keeping each cluster's earliest record."""
    if not 0.0 < similarity_threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {similarity_threshold}")
    kept: list[ScenarioRecord] = []
    kept_grams: list[frozenset[str]] = []
    for record in records:
        grams = _trigrams(record.caption)
        duplicate = False
        for other in kept_grams:
            union = len(grams | other)
            similarity = len(grams & other) / union if union else 1.0
            if similarity >= similarity_threshold:
                duplicate = True
                break
        if not duplicate:
            kept.append(record)
            kept_grams.append(grams)
    report = FilterReport(
        input_count=len(records),
        removed_duplicates=len(records) - len(kept),
        removed_by_keyword=0,
        keyword_counts={},
        output_count=len(kept),
    )
    return kept, report


def keyword_diversity_filter(
    records: Sequence[ScenarioRecord],
    keywords: Sequence[str],
    cap: int = DEFAULT_KEYWORD_CAP,
) -> tuple[list[ScenarioRecord], FilterReport]:
    """Keep keyword occurrences across captions below ``cap``.

    A record is dropped (latest first: earlier records win) if keeping it
    would raise any contained keyword's count to ``cap`` or beyond, so every
    final count is at most ``cap - 1``.
    """
    if cap < 0:
        raise ValueError(f"cap must be >= 0, got {cap}")
    for keyword in keywords:
        if keyword != keyword.lower():
            raise ValueError(f"keywords must be lowercase: {keyword!r}")
    patterns = {kw: re.compile(rf"\b{re.escape(kw)}\b") for kw in keywords}
    counts = {kw: 0 for kw in keywords}
    kept: list[ScenarioRecord] = []
    for record in records:
        caption = record.caption.lower()
        contained = [kw for kw, pattern in patterns.items() if pattern.search(caption)]
        if all(counts[kw] + 1 < cap for kw in contained):
            kept.append(record)
            for kw in contained:
                counts[kw] += 1
    report = FilterReport(
        input_count=len(records),
        removed_duplicates=0,
        removed_by_keyword=len(records) - len(kept),
        keyword_counts=dict(counts),
        output_count=len(kept),
    )
    return kept, report


# -- image pairing -------------------------------------------------------------


def pair_images(
    scenario: ScenarioRecord,
    search_client: Callable[[str, int], list[str]],
) -> ImagePairing:
    """Fetch up to five ranked candidate images for a scenario's caption.

    Selection stays empty for human review. A provider failure yields a
    pending pairing with the error noted, never an exception.
    """
    try:
        urls = search_client(scenario.caption, MAX_IMAGE_CANDIDATES)
    except SearchError as exc:
        return ImagePairing(scenario_id=scenario.id, note=f"search failed: {exc}")
    candidates = tuple((url, rank) for rank, url in enumerate(urls[:MAX_IMAGE_CANDIDATES], start=1))
    return ImagePairing(scenario_id=scenario.id, candidates=candidates)


def save_pairings(pairings: Iterable[ImagePairing], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for pairing in pairings:
            fh.write(
                json.dumps(
                    {
                        "scenario_id": pairing.scenario_id,
                        "candidates": [list(c) for c in pairing.candidates],
                        "selected": pairing.selected,
                        "reviewer": pairing.reviewer,
                        "note": pairing.note,
                    },
                    ensure_ascii=False,
                    separators=(",", ":"),
                )
                + "\n"
            )


def load_pairings(path: str | Path) -> list[ImagePairing]:
    pairings = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            payload = json.loads(line)
            pairings.append(
                ImagePairing(
                    scenario_id=payload["scenario_id"],
                    candidates=tuple(tuple(c) for c in payload["candidates"]),
                    selected=payload.get("selected"),
                    reviewer=payload.get("reviewer", ""),
                    note=payload.get("note", ""),
                )
            )
    return pairings


# -- explanation refinement ------------------------------------------------------


def build_refinement_prompt(context: str, outcome: str, human_explanation: str) -> str:
    """Fill the refinement prompt template's three slots."""
    return render(
        load_template("refine_explanation.txt"),
        {
            "{INPUT CONTEXT HERE}": context,
            "{INPUT OUTCOME HERE}": outcome,
            "{INPUT EXPLANATION HERE}": human_explanation,
        },
    )


def refine_explanation(
    scenario_id: str,
    context: str,
    outcome: str,
    human_explanation: str,
    llm_client: Callable[[str], str],
) -> Explanation:
    """Ask an LLM to sharpen a human explanation; stores the reply as human_llm."""
    for name, value in (("context", context), ("outcome", outcome), ("human_explanation", human_explanation)):
        if not value or not value.strip():
            raise CorpusError(f"{name} must be non-empty")
    prompt = build_refinement_prompt(context, outcome, human_explanation)
    reply = llm_client(prompt)
    if not reply or not reply.strip():
        raise CorpusError("LLM returned an empty refinement")
    return make_explanation(scenario_id, ExplanationSource.HUMAN_LLM, reply)
