"""Scoring and analysis: pairwise judge win rates, skill scores,
specificity, token-length statistics, bootstrapped n-gram entropy, and
result tables.

Pairwise judging randomizes which answer is presented first (under a
derived seed) to counter position bias. A judgment records the provenance
of the caller's first and second argument as ``left_source`` and
``right_source``; ``winner`` says which of those two arguments won, worked
out from the parsed reply and the recorded presentation order. Invalid
replies are never counted as wins and never enter a denominator.
"""

from __future__ import annotations

import ast
import json
import re
import statistics
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import rng
from .corpus import Explanation, ExplanationSource, ScenarioRecord, count_tokens, tokenize
from .prompts import load_template, render
from .runner import RunManifest

__all__ = [
    "Winner",
    "JudgeKind",
    "PairwiseJudgment",
    "SkillScores",
    "CorpusStats",
    "WinRate",
    "EvaluationError",
    "RankingParseError",
    "judge_pairwise",
    "parse_ranking",
    "win_rate",
    "flask_score",
    "mean_skill_scores",
    "specificity_score",
    "specificity_distribution",
    "distribution_mean",
    "ngram_entropy",
    "bootstrap_entropy",
    "length_stats",
    "evaluate_manifest",
    "report",
    "Report",
    "CellStat",
    "format_report",
    "format_skill_table",
    "save_judgments",
    "load_judgments",
]

JUDGE_RETRIES = 3

JudgeClient = Callable[[str], str]


class EvaluationError(ValueError):
    pass


class RankingParseError(EvaluationError):
    pass


class Winner(str, Enum):
    LEFT = "left"
    RIGHT = "right"
    INVALID = "invalid"


class JudgeKind(str, Enum):
    LLM = "llm"
    HUMAN = "human"


@dataclass(frozen=True)
class PairwiseJudgment:
    task_id: str
    query_record_id: str
    left_source: str
    right_source: str
    presented_order_seed: int
    winner: Winner
    judge: JudgeKind
    raw_reply: str

    def __post_init__(self):
        object.__setattr__(self, "winner", Winner(self.winner))
        object.__setattr__(self, "judge", JudgeKind(self.judge))

    @property
    def winning_source(self) -> str | None:
        if self.winner is Winner.LEFT:
            return self.left_source
        if self.winner is Winner.RIGHT:
            return self.right_source
        return None


@dataclass(frozen=True)
class SkillScores:
    """Four judge-scored skill axes, each an integer in [1, 5]."""

    lr: int
    lc: int
    le: int
    cs: int

    def __post_init__(self):
        for name in ("lr", "lc", "le", "cs"):
            value = getattr(self, name)
            if not isinstance(value, int) or not 1 <= value <= 5:
                raise EvaluationError(f"skill {name} must be an integer in [1, 5], got {value!r}")

    def as_dict(self) -> dict[str, int]:
        return {"lr": self.lr, "lc": self.lc, "le": self.le, "cs": self.cs}


@dataclass(frozen=True)
class CorpusStats:
    group: str
    mean_tokens: float
    std_tokens: float
    entropy: dict[int, tuple[float, float]]
    sample_count: int

    def __post_init__(self):
        if self.std_tokens < 0:
            raise EvaluationError("std_tokens must be >= 0")
        for n, (mean, std) in self.entropy.items():
            if mean < 0 or std < 0:
                raise EvaluationError(f"entropy stats for n={n} must be >= 0")


# -- pairwise judging ---------------------------------------------------------


_FENCE_RE = re.compile(r"```(?:[a-zA-Z0-9_-]+)?\s*\n(.*?)```", re.DOTALL)


def _bracketed_spans(text: str) -> list[str]:
    spans = []
    depth = 0
    start = -1
    for i, ch in enumerate(text):
        if ch == "[":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "]" and depth > 0:
            depth -= 1
            if depth == 0:
                spans.append(text[start : i + 1])
    return spans


def parse_ranking(raw_reply: str) -> list[str]:
    """Extract the ranked model labels from a judge reply.

    Accepts the literal list of ``{"model": ..., "rank": ...}`` objects,
    optionally fenced or surrounded by prose. Ranks must form a permutation
    of 1..N over labels model_1..model_N.
    """
    candidates = [raw_reply]
    candidates.extend(match.group(1) for match in _FENCE_RE.finditer(raw_reply))
    items = None
    for candidate in candidates:
        for span in _bracketed_spans(candidate):
            for loads in (json.loads, ast.literal_eval):
                try:
                    parsed = loads(span)
                except (ValueError, SyntaxError):
                    continue
                if isinstance(parsed, list) and parsed and all(
                    isinstance(x, dict) and "model" in x and "rank" in x for x in parsed
                ):
                    items = parsed
                    break
            if items:
                break
        if items:
            break
    if not items:
        raise RankingParseError("reply contains no ranking list")
    n = len(items)
    expected_labels = {f"model_{i}" for i in range(1, n + 1)}
    ranks_seen = set()
    by_rank: dict[int, str] = {}
    for item in items:
        label = item["model"]
        rank = item["rank"]
        if label not in expected_labels:
            raise RankingParseError(f"unknown model label {label!r}")
        if not isinstance(rank, int) or not 1 <= rank <= n:
            raise RankingParseError(f"rank must be an integer in [1, {n}], got {rank!r}")
        if rank in ranks_seen:
            raise RankingParseError(f"duplicate rank {rank}")
        ranks_seen.add(rank)
        by_rank[rank] = label
    if len(by_rank) != n:
        raise RankingParseError("ranks do not form a permutation")
    return [by_rank[r] for r in range(1, n + 1)]


def build_judge_prompt(instruction: str, output_1: str, output_2: str) -> str:
    return render(
        load_template("judge_pairwise.txt"),
        {"{instruction}": instruction, "{output_1}": output_1, "{output_2}": output_2},
    )


def judge_pairwise(
    instruction: str,
    output_a: str,
    output_b: str,
    judge_client: JudgeClient,
    seed: int,
    task_id: str = "",
    query_record_id: str = "",
    source_a: str = "a",
    source_b: str = "b",
    judge: JudgeKind = JudgeKind.LLM,
    max_retries: int = JUDGE_RETRIES,
) -> PairwiseJudgment:
    """One A-vs-B comparison with seeded presentation-order randomization.

    The derived order seed decides whether ``output_a`` or ``output_b``
    fills the first answer slot of the judge prompt; the parsed winner is
    mapped back through that assignment. Client failures and unparseable
    replies are retried, then recorded as ``winner=invalid``.
    """
    if not output_a.strip() or not output_b.strip():
        raise EvaluationError("both outputs must be non-empty")
    order_seed = rng.derive_seed(seed, "judge-order", task_id)
    a_first = bool(rng.generator(order_seed).integers(0, 2) == 0)
    first, second = (output_a, output_b) if a_first else (output_b, output_a)
    prompt = build_judge_prompt(instruction, first, second)

    raw_reply = ""
    winner = Winner.INVALID
    for _ in range(max_retries + 1):
        try:
            raw_reply = judge_client(prompt)
            ranked = parse_ranking(raw_reply)
        except RankingParseError:
            continue
        except Exception as exc:  # client failure: retriable, never fatal
            raw_reply = f"<judge error: {exc}>"
            continue
        first_won = ranked[0] == "model_1"
        a_won = first_won == a_first
        winner = Winner.LEFT if a_won else Winner.RIGHT
        break
    return PairwiseJudgment(
        task_id=task_id,
        query_record_id=query_record_id,
        left_source=source_a,
        right_source=source_b,
        presented_order_seed=order_seed,
        winner=winner,
        judge=judge,
        raw_reply=raw_reply,
    )


@dataclass(frozen=True)
class WinRate:
    rate: float
    wins: int
    valid: int

    def __str__(self):
        return f"{self.rate:.3f} ({self.wins}/{self.valid})"


def win_rate(judgments: Sequence[PairwiseJudgment], source: str) -> WinRate:
    """Fraction of valid judgments won by ``source``; invalid never counted."""
    valid = [j for j in judgments if j.winner is not Winner.INVALID]
    if not valid:
        raise EvaluationError("win rate needs at least one valid judgment")
    wins = sum(1 for j in valid if j.winning_source == source)
    return WinRate(rate=wins / len(valid), wins=wins, valid=len(valid))


# -- skill and specificity scoring --------------------------------------------


_JSON_OBJECT_RE = re.compile(r"\{[^{}]*\}", re.DOTALL)
_SLASH_SCORES_RE = re.compile(r"^\s*([1-5])\s*/\s*([1-5])\s*/\s*([1-5])\s*/\s*([1-5])\s*$")


def _parse_skill_reply(raw: str) -> SkillScores:
    match = _SLASH_SCORES_RE.match(raw)
    if match:
        lr, lc, le, cs = (int(g) for g in match.groups())
        return SkillScores(lr=lr, lc=lc, le=le, cs=cs)
    for span in _JSON_OBJECT_RE.findall(raw):
        try:
            payload = json.loads(span)
        except ValueError:
            continue
        if isinstance(payload, dict) and {"lr", "lc", "le", "cs"} <= set(payload):
            return SkillScores(lr=payload["lr"], lc=payload["lc"], le=payload["le"], cs=payload["cs"])
    raise EvaluationError(f"cannot parse skill scores from reply: {raw!r}")


def flask_score(
    context: str,
    outcome: str,
    explanation: str,
    judge_client: JudgeClient,
    rubric_template: str | None = None,
    max_retries: int = JUDGE_RETRIES,
) -> SkillScores:
    """Score one explanation on the four skill axes via the rubric prompt.

    Out-of-range or unparseable replies are retried, then raised.
    """
    template = rubric_template if rubric_template is not None else load_template("skill_rubric.txt")
    prompt = render(
        template,
        {"{context}": context, "{outcome}": outcome, "{explanation}": explanation},
    )
    last_error: Exception | None = None
    for _ in range(max_retries + 1):
        try:
            return _parse_skill_reply(judge_client(prompt))
        except EvaluationError as exc:
            last_error = exc
    raise EvaluationError(f"skill scoring failed after {max_retries + 1} attempts: {last_error}")


def mean_skill_scores(scores: Sequence[SkillScores]) -> dict[str, float]:
    if not scores:
        raise EvaluationError("cannot average zero skill scores")
    return {
        axis: float(np.mean([getattr(s, axis) for s in scores]))
        for axis in ("lr", "lc", "le", "cs")
    }


_SPECIFICITY_RE = re.compile(r"^\s*\[?\s*([1-5])\s*\]?\s*\.?\s*$")


def build_specificity_prompt(text: str) -> str:
    return render(load_template("specificity.txt"), {"[Insert the generated text here]": text})


def specificity_score(
    text: str,
    judge_client: JudgeClient,
    max_retries: int = JUDGE_RETRIES,
) -> int:
    """Judge-assigned 1-5 specificity rating of a text."""
    if not text.strip():
        raise EvaluationError("cannot score empty text")
    prompt = build_specificity_prompt(text)
    last_reply = ""
    for _ in range(max_retries + 1):
        last_reply = judge_client(prompt)
        match = _SPECIFICITY_RE.match(last_reply)
        if match:
            return int(match.group(1))
    raise EvaluationError(f"non-numeric specificity reply: {last_reply!r}")


def specificity_distribution(scores: Sequence[int]) -> tuple[dict[int, float], float]:
    """Proportion of each level (1..5) and the mean score."""
    if not scores:
        raise EvaluationError("no specificity scores")
    for score in scores:
        if not 1 <= score <= 5:
            raise EvaluationError(f"specificity scores must be in [1, 5], got {score}")
    counts = Counter(scores)
    total = len(scores)
    proportions = {level: counts.get(level, 0) / total for level in range(1, 6)}
    return proportions, float(np.mean(scores))


def distribution_mean(proportions: Mapping[int, float]) -> float:
    """Weighted mean of a level -> proportion table (proportions need not sum to 1)."""
    total = sum(proportions.values())
    if total <= 0:
        raise EvaluationError("proportions must sum to a positive value")
    return sum(level * share for level, share in proportions.items()) / total


# -- corpus statistics ---------------------------------------------------------


def ngram_entropy(texts: Sequence[str], n: int) -> float:
    """Shannon entropy (bits) of the pooled order-n token n-gram distribution."""
    if n < 1:
        raise EvaluationError(f"n must be >= 1, got {n}")
    grams: Counter = Counter()
    for text in texts:
        tokens = tokenize(text)
        for i in range(len(tokens) - n + 1):
            grams[tuple(tokens[i : i + n])] += 1
    if not grams:
        raise EvaluationError(f"no n-grams of order {n}: all texts are shorter than {n} tokens")
    counts = np.fromiter(grams.values(), dtype=np.float64)
    probs = counts / counts.sum()
    value = float(-(probs * np.log2(probs)).sum())
    return 0.0 if value == 0.0 else value


def _entropy_from_counter(grams: Counter) -> float:
    counts = np.fromiter(grams.values(), dtype=np.float64)
    probs = counts / counts.sum()
    value = float(-(probs * np.log2(probs)).sum())
    return 0.0 if value == 0.0 else value


def bootstrap_entropy(
    pairs: Mapping[str, Sequence[str]],
    iterations: int = 1000,
    seed: int = 0,
    max_n: int = 5,
) -> dict[int, tuple[float, float]]:
    """Bootstrap n-gram entropy over random one-explanation-per-record draws.

    Each iteration samples one explanation per record (seeded), pools the
    n-grams, and measures entropy for n = 1..max_n. Returns per-n
    (mean, std) over all iterations; std is the population convention.
    """
    if not pairs:
        raise EvaluationError("bootstrap needs at least one record")
    record_ids = sorted(pairs)
    for record_id in record_ids:
        if len(pairs[record_id]) == 0:
            raise EvaluationError(f"record {record_id!r} has no explanations")

    # Pre-count each explanation's n-grams once; iterations just sum counters.
    cached: list[list[list[Counter]]] = []
    for record_id in record_ids:
        per_choice = []
        for text in pairs[record_id]:
            tokens = tokenize(text)
            per_choice.append(
                [
                    Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))
                    for n in range(1, max_n + 1)
                ]
            )
        cached.append(per_choice)

    gen = rng.generator(seed, "bootstrap")
    samples: dict[int, list[float]] = {n: [] for n in range(1, max_n + 1)}
    for _ in range(iterations):
        choices = [int(gen.integers(0, len(cached[i]))) for i in range(len(record_ids))]
        for n in range(1, max_n + 1):
            pooled: Counter = Counter()
            for i, choice in enumerate(choices):
                pooled.update(cached[i][choice][n - 1])
            if not pooled:
                raise EvaluationError(
                    f"no n-grams of order {n} in a bootstrap draw; texts are too short"
                )
            samples[n].append(_entropy_from_counter(pooled))
    out: dict[int, tuple[float, float]] = {}
    for n, values in samples.items():
        arr = np.asarray(values)
        if np.all(arr == arr[0]):
            # no sampling variance at all (e.g. one explanation per record):
            # report exactly the common value, not rounding residue
            out[n] = (float(arr[0]), 0.0)
        else:
            out[n] = (float(arr.mean()), float(arr.std()))
    return out


def length_stats(explanations: Sequence[Explanation]) -> tuple[float, float]:
    """(mean, population std) of explanation token counts."""
    if not explanations:
        raise EvaluationError("length stats need at least one explanation")
    counts = np.array([e.token_count for e in explanations], dtype=np.float64)
    return float(counts.mean()), float(counts.std())


def compute_corpus_stats(
    group: str,
    explanations: Sequence[Explanation],
    pairs: Mapping[str, Sequence[str]],
    iterations: int = 1000,
    seed: int = 0,
    max_n: int = 5,
) -> CorpusStats:
    mean_tokens, std_tokens = length_stats(explanations)
    # cap the order so every possible draw still pools at least one n-gram:
    # the record whose shortest explanation is longest guarantees that order
    guaranteed = max(min(count_tokens(t) for t in texts) for texts in pairs.values())
    entropy = bootstrap_entropy(pairs, iterations=iterations, seed=seed,
                                max_n=min(max_n, guaranteed))
    return CorpusStats(
        group=group,
        mean_tokens=mean_tokens,
        std_tokens=std_tokens,
        entropy=entropy,
        sample_count=len(explanations),
    )


# -- manifest judging and reporting --------------------------------------------


MODEL_SOURCE = "model_run"
BASELINE_SOURCE = ExplanationSource.HUMAN_LLM.value


def baseline_explanation(record_id: str, explanations: Sequence[Explanation]) -> str:
    for explanation in explanations:
        if (
            explanation.scenario_id == record_id
            and explanation.source is ExplanationSource.HUMAN_LLM
        ):
            return explanation.text
    raise EvaluationError(f"no {BASELINE_SOURCE} baseline explanation for record {record_id!r}")


def evaluate_manifest(
    manifest: RunManifest,
    records: Sequence[ScenarioRecord],
    explanations: Sequence[Explanation],
    judge_client: JudgeClient,
    seed: int,
) -> list[PairwiseJudgment]:
    """Judge every successful manifest reply against the baseline explanation."""
    by_id = {r.id: r for r in records}
    instruction_template = load_template("judge_instruction.txt")
    judgments = []
    for entry in manifest.entries:
        if entry.reply is None:
            continue
        record = by_id.get(entry.query_record_id)
        if record is None:
            raise EvaluationError(f"manifest references unknown record {entry.query_record_id!r}")
        instruction = render(
            instruction_template, {"{caption}": record.caption, "{outcome}": record.outcome}
        )
        task_id = f"{manifest.run_id}/{entry.query_record_id}"
        judgments.append(
            judge_pairwise(
                instruction,
                entry.reply,
                baseline_explanation(record.id, explanations),
                judge_client,
                seed,
                task_id=task_id,
                query_record_id=entry.query_record_id,
                source_a=MODEL_SOURCE,
                source_b=BASELINE_SOURCE,
            )
        )
    return judgments


@dataclass(frozen=True)
class CellStat:
    win_rate: float
    wins: int
    valid: int


@dataclass
class Report:
    """Win-rate grid (model x subset x shots x mode) with derived summaries."""

    cells: dict[tuple[str, str, int, str], CellStat]
    missing: list[tuple[str, str, int, str]]
    deltas: dict[tuple[str, str, int], float]
    combo_wins: dict[tuple[str, str], bool]
    median_gain: dict[str, float]
    summary: str

    def to_dict(self) -> dict:
        return {
            "cells": {
                "|".join(map(str, key)): {"win_rate": c.win_rate, "wins": c.wins, "valid": c.valid}
                for key, c in self.cells.items()
            },
            "missing": ["|".join(map(str, key)) for key in self.missing],
            "deltas": {"|".join(map(str, key)): v for key, v in self.deltas.items()},
            "combo_wins": {"|".join(key): v for key, v in self.combo_wins.items()},
            "median_gain": self.median_gain,
            "summary": self.summary,
        }


def report(manifests: Sequence[RunManifest], judgments: Sequence[PairwiseJudgment]) -> Report:
    """Aggregate judged runs into the shot-grid win-rate table.

    Per (model, subset) combination, the retrieved and random modes are
    compared by their mean win rate across shot sizes; the summary counts
    combinations where retrieval wins, e.g. "12 of 14".
    """
    by_run: dict[str, list[PairwiseJudgment]] = {}
    for judgment in judgments:
        run_id = judgment.task_id.rsplit("/", 1)[0]
        by_run.setdefault(run_id, []).append(judgment)

    cells: dict[tuple[str, str, int, str], CellStat] = {}
    missing: list[tuple[str, str, int, str]] = []
    for manifest in manifests:
        config = manifest.config
        key = (config.model_id, config.subset.value, config.shots, config.mode.value)
        run_judgments = by_run.get(manifest.run_id, [])
        valid = [j for j in run_judgments if j.winner is not Winner.INVALID]
        if not valid:
            missing.append(key)
            continue
        stat = win_rate(valid, MODEL_SOURCE)
        cells[key] = CellStat(win_rate=stat.rate, wins=stat.wins, valid=stat.valid)

    deltas: dict[tuple[str, str, int], float] = {}
    gains: dict[tuple[str, str], list[float]] = {}
    for (model, subset, shots, mode), stat in cells.items():
        if mode != "retrieved":
            continue
        random_cell = cells.get((model, subset, shots, "random"))
        if random_cell is None:
            continue
        delta = stat.win_rate - random_cell.win_rate
        deltas[(model, subset, shots)] = delta
        gains.setdefault((model, subset), []).append(delta)

    combo_wins = {combo: float(np.mean(values)) > 0.0 for combo, values in gains.items()}
    wins = sum(combo_wins.values())
    summary = f"{wins} of {len(combo_wins)}" if combo_wins else "no comparable combinations"

    median_gain: dict[str, float] = {}
    for subset in sorted({key[1] for key in gains}):
        subset_gains = [
            float(np.mean(values)) for (model, s), values in gains.items() if s == subset
        ]
        median_gain[subset] = float(statistics.median(subset_gains))

    return Report(
        cells=cells,
        missing=missing,
        deltas=deltas,
        combo_wins=combo_wins,
        median_gain=median_gain,
        summary=summary,
    )


def format_report(rep: Report) -> str:
    """Plain-text rendering of the win-rate grid, one row per model/subset."""
    shot_grid = sorted({key[2] for key in rep.cells})
    lines = []
    header = ["model", "subset"]
    for shots in shot_grid:
        if shots == 0:
            header.append("0-shot")
        else:
            header.append(f"{shots}-shot rand")
            header.append(f"{shots}-shot ret")
    lines.append("  ".join(f"{h:>14}" for h in header))
    combos = sorted({(k[0], k[1]) for k in rep.cells})
    for model, subset in combos:
        row = [model, subset]
        for shots in shot_grid:
            if shots == 0:
                cell = rep.cells.get((model, subset, 0, "none"))
                row.append(f"{cell.win_rate:.3f}" if cell else "-")
            else:
                for mode in ("random", "retrieved"):
                    cell = rep.cells.get((model, subset, shots, mode))
                    row.append(f"{cell.win_rate:.3f}" if cell else "-")
        lines.append("  ".join(f"{v:>14}" for v in row))
    lines.append(f"retrieval beats random in {rep.summary} model-dataset combinations")
    for subset, gain in sorted(rep.median_gain.items()):
        lines.append(f"median gain on {subset}: {gain:+.3f}")
    if rep.missing:
        lines.append("missing cells: " + ", ".join("|".join(map(str, k)) for k in rep.missing))
    return "\n".join(lines)


def format_skill_table(
    retrieved: Mapping[str, Mapping[str, float]],
    random_baseline: Mapping[str, Mapping[str, float]],
) -> str:
    """Skill-score table: retrieved score with the gain over random in parentheses."""
    axes = ("lr", "lc", "le", "cs")
    lines = ["  ".join([f"{'model':<16}"] + [f"{axis.upper():>14}" for axis in axes])]
    for model in retrieved:
        row = [f"{model:<16}"]
        for axis in axes:
            score = retrieved[model][axis]
            gain = score - random_baseline[model][axis]
            row.append(f"{score:.2f} ({gain:+.2f})".rjust(14))
        lines.append("  ".join(row))
    return "\n".join(lines)


# -- judgment log persistence ---------------------------------------------------


def save_judgments(judgments: Iterable[PairwiseJudgment], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for judgment in judgments:
            fh.write(
                json.dumps(
                    {
                        "task_id": judgment.task_id,
                        "query_record_id": judgment.query_record_id,
                        "left_source": judgment.left_source,
                        "right_source": judgment.right_source,
                        "presented_order_seed": judgment.presented_order_seed,
                        "winner": judgment.winner.value,
                        "judge": judgment.judge.value,
                        "raw_reply": judgment.raw_reply,
                    },
                    ensure_ascii=False,
                    separators=(",", ":"),
                )
                + "\n"
            )


def load_judgments(path: str | Path) -> list[PairwiseJudgment]:
    judgments = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            payload = json.loads(line)
            judgments.append(PairwiseJudgment(**payload))
    return judgments


class HttpJudgeClient:
    """Text-only chat client for judge endpoints (same wire format as models)."""

    def __init__(self, url: str, model_id: str, auth: str | None = None, timeout: float = 120.0):
        self.url = url
        self.model_id = model_id
        self.auth = auth
        self.timeout = timeout

    def __call__(self, prompt: str) -> str:
        import requests

        payload = {
            "model": self.model_id,
            "messages": [{"role": "user", "content": [{"type": "text", "text": prompt}]}],
        }
        headers = {"Content-Type": "application/json"}
        if self.auth:
            headers["Authorization"] = f"Bearer {self.auth}"
        response = requests.post(self.url, json=payload, timeout=self.timeout, headers=headers)
        response.raise_for_status()
        reply = response.json().get("reply")
        if not isinstance(reply, str):
            raise EvaluationError("judge endpoint reply must be {'reply': '<text>'}")
        return reply
