"""Canonical data model and corpus serialization.

A corpus is a line-delimited UTF-8 JSON file holding scenario records and
their explanations. Lines starting with ``#`` and blank lines are ignored.
The full schema, including the tokenization rule used for all token counts,
is documented in ``docs/corpus_format.md``.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

__all__ = [
    "Subset",
    "Split",
    "ExplanationSource",
    "ScenarioRecord",
    "Explanation",
    "CorpusError",
    "CorpusFormatError",
    "tokenize",
    "count_tokens",
    "make_explanation",
    "load_corpus",
    "save_corpus",
]

CORPUS_HEADER = "# ricl corpus v1"


class Subset(str, Enum):
    VIS = "vis"
    LANG = "lang"


class Split(str, Enum):
    DB = "db"
    TEST = "test"


class ExplanationSource(str, Enum):
    HUMAN = "human"
    LLM = "llm"
    HUMAN_LLM = "human_llm"
    MODEL_RUN = "model_run"


class CorpusError(ValueError):
    """Invalid record or explanation content."""


class CorpusFormatError(CorpusError):
    """Malformed corpus file; carries the offending line number."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    """Split ``text`` into tokens.

    Rule: split on whitespace, then peel leading and trailing punctuation
    characters (Unicode categories P*) off each chunk as separate tokens.
    Internal punctuation (as in "don't") stays inside its token.
    """
    tokens: list[str] = []
    for chunk in text.split():
        start, end = 0, len(chunk)
        while start < end and _is_punct(chunk[start]):
            start += 1
        while end > start and _is_punct(chunk[end - 1]):
            end -= 1
        tokens.extend(chunk[i] for i in range(start))
        if start < end:
            tokens.append(chunk[start:end])
        tokens.extend(chunk[i] for i in range(end, len(chunk)))
    return tokens


def count_tokens(text: str) -> int:
    """Number of tokens in ``text`` under the documented rule; 0 iff blank."""
    return len(tokenize(text))


@dataclass(frozen=True)
class ScenarioRecord:
    """One context/outcome pair: an image, its caption, and the situation."""

    id: str
    subset: Subset
    caption: str
    rationale: str
    outcome: str
    image_ref: str
    split: Split
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.id:
            raise CorpusError("record id must be non-empty")
        if not self.caption.strip():
            raise CorpusError(f"record {self.id!r}: caption must be non-empty")
        if not self.outcome.strip():
            raise CorpusError(f"record {self.id!r}: outcome must be non-empty")
        object.__setattr__(self, "subset", Subset(self.subset))
        object.__setattr__(self, "split", Split(self.split))
        object.__setattr__(self, "categories", tuple(self.categories))


@dataclass(frozen=True)
class Explanation:
    """A textual explanation for a record, tagged by provenance."""

    scenario_id: str
    source: ExplanationSource
    text: str
    run_id: str | None = None
    token_count: int = field(default=-1)

    def __post_init__(self):
        object.__setattr__(self, "source", ExplanationSource(self.source))
        if not self.text.strip():
            raise CorpusError(f"explanation for {self.scenario_id!r}: text must be non-empty")
        if self.source is ExplanationSource.MODEL_RUN:
            if not self.run_id:
                raise CorpusError(
                    f"explanation for {self.scenario_id!r}: source=model_run requires run_id"
                )
        elif self.run_id is not None:
            raise CorpusError(
                f"explanation for {self.scenario_id!r}: run_id is only valid for source=model_run"
            )
        if self.token_count == -1:
            object.__setattr__(self, "token_count", count_tokens(self.text))
        elif self.token_count != count_tokens(self.text):
            raise CorpusError(
                f"explanation for {self.scenario_id!r}: token_count {self.token_count} "
                f"does not match tokenizer count {count_tokens(self.text)}"
            )


def make_explanation(
    scenario_id: str,
    source: ExplanationSource | str,
    text: str,
    run_id: str | None = None,
) -> Explanation:
    """Build an Explanation with its token count computed."""
    return Explanation(scenario_id=scenario_id, source=ExplanationSource(source), text=text, run_id=run_id)


_RECORD_FIELDS = ("id", "subset", "caption", "rationale", "outcome", "image_ref", "split", "categories")
_EXPLANATION_FIELDS = ("scenario_id", "source", "text", "run_id", "token_count")

# Sources that carry human-written content; forbidden on split=db records,
# which exist only to be retrieved from.
_HUMAN_SOURCES = frozenset({ExplanationSource.HUMAN, ExplanationSource.HUMAN_LLM})


def _record_to_json(record: ScenarioRecord) -> str:
    payload = {"kind": "scenario"}
    for name in _RECORD_FIELDS:
        value = getattr(record, name)
        if isinstance(value, Enum):
            value = value.value
        elif isinstance(value, tuple):
            value = list(value)
        payload[name] = value
    return json.dumps(payload, ensure_ascii=False, separators=(",", ":"))


def _explanation_to_json(explanation: Explanation) -> str:
    payload = {"kind": "explanation"}
    for name in _EXPLANATION_FIELDS:
        value = getattr(explanation, name)
        if isinstance(value, Enum):
            value = value.value
        payload[name] = value
    return json.dumps(payload, ensure_ascii=False, separators=(",", ":"))


def _require(payload: dict, name: str, line_number: int):
    if name not in payload:
        raise CorpusFormatError(f"missing field {name!r}", line_number)
    return payload[name]


def _parse_record(payload: dict, line_number: int) -> ScenarioRecord:
    kwargs = {}
    for name in _RECORD_FIELDS:
        if name == "categories":
            kwargs[name] = tuple(payload.get(name, []))
        else:
            kwargs[name] = _require(payload, name, line_number)
    try:
        return ScenarioRecord(**kwargs)
    except (CorpusError, ValueError) as exc:
        raise CorpusFormatError(str(exc), line_number) from exc


def _parse_explanation(payload: dict, line_number: int) -> Explanation:
    kwargs = {name: _require(payload, name, line_number) for name in _EXPLANATION_FIELDS}
    try:
        return Explanation(**kwargs)
    except (CorpusError, ValueError) as exc:
        raise CorpusFormatError(str(exc), line_number) from exc


def load_corpus(path: str | Path) -> tuple[list[ScenarioRecord], list[Explanation]]:
    """Load a corpus file, validating every invariant.

    Rejects duplicate record ids, dangling explanation references, unknown
    enum values, and human-written explanations attached to retrieval-side
    (split=db) records. Errors name the offending line.
    """
    path = Path(path)
    records: list[ScenarioRecord] = []
    explanations: list[Explanation] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"invalid JSON: {exc.msg}", line_number) from exc
            if not isinstance(payload, dict):
                raise CorpusFormatError("line must be a JSON object", line_number)
            kind = payload.get("kind")
            if kind == "scenario":
                records.append(_parse_record(payload, line_number))
            elif kind == "explanation":
                explanations.append(_parse_explanation(payload, line_number))
            else:
                raise CorpusFormatError(f"unknown kind {kind!r}", line_number)

    by_id: dict[str, ScenarioRecord] = {}
    for record in records:
        if record.id in by_id:
            raise CorpusFormatError(f"duplicate record id {record.id!r}")
        by_id[record.id] = record
    for explanation in explanations:
        record = by_id.get(explanation.scenario_id)
        if record is None:
            raise CorpusFormatError(
                f"explanation references unknown record {explanation.scenario_id!r}"
            )
        if record.split is Split.DB and explanation.source in _HUMAN_SOURCES:
            raise CorpusFormatError(
                f"record {record.id!r} is split=db and cannot carry a "
                f"{explanation.source.value} explanation"
            )
    return records, explanations


def save_corpus(
    records: Iterable[ScenarioRecord],
    explanations: Iterable[Explanation],
    path: str | Path,
) -> None:
    """Write a corpus file; ``load_corpus(save_corpus(x)) == x``.

    Field order, separators, and escaping are fixed, so equal inputs always
    produce byte-identical files.
    """
    path = Path(path)
    lines = [CORPUS_HEADER]
    lines.extend(_record_to_json(r) for r in records)
    lines.extend(_explanation_to_json(e) for e in explanations)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
