"""Shared fixtures: synthetic corpora and scripted (deterministic) clients."""

from __future__ import annotations

import hashlib
import json

import numpy as np
import pytest

ACCEPTANCE_MODULE = "test_acceptance.py"
_acceptance_outcomes: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if ACCEPTANCE_MODULE in report.nodeid and report.when == "call":
        name = report.nodeid.rsplit("::", 1)[-1]
        _acceptance_outcomes[name] = report.outcome.upper()


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_outcomes:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in _acceptance_outcomes.items():
        label = name.removeprefix("test_").replace("_", " ")
        terminalreporter.write_line(f"[{outcome:>6}] {label}")

from ricl.corpus import Explanation, ExplanationSource, ScenarioRecord, Split, Subset
from ricl.embeddings import EmbeddingGateway, EmbeddingVector, ProviderConfig, l2_normalize

MODEL1_FIRST = '[{"model": "model_1", "rank": 1}, {"model": "model_2", "rank": 2}]'
MODEL2_FIRST = '[{"model": "model_2", "rank": 1}, {"model": "model_1", "rank": 2}]'


def unit_vector(gen: np.random.Generator, dim: int) -> EmbeddingVector:
    return l2_normalize(gen.normal(size=dim))


def hashed_vector(payload: str, dim: int) -> EmbeddingVector:
    """Deterministic pseudo-embedding: unit vector seeded by the payload hash."""
    seed = int.from_bytes(hashlib.sha256(payload.encode("utf-8")).digest()[:8], "little")
    return l2_normalize(np.random.default_rng(seed).normal(size=dim))


def make_record(
    i: int,
    subset: Subset = Subset.VIS,
    split: Split = Split.DB,
    caption: str | None = None,
    outcome: str | None = None,
) -> ScenarioRecord:
    return ScenarioRecord(
        id=f"{subset.value}-{split.value}-{i:04d}",
        subset=subset,
        caption=caption or f"caption number {i} about object {i * 7 % 13}",
        rationale=f"hidden reason {i}",
        outcome=outcome or f"outcome number {i} happened to person {i * 5 % 11}",
        image_ref=f"http://images.example/{subset.value}/{i}.jpg",
        split=split,
    )


def make_corpus(
    db_per_subset: int = 10, test_per_subset: int = 5
) -> tuple[list[ScenarioRecord], list[Explanation]]:
    """Synthetic two-subset corpus with llm explanations on db records and
    llm + human_llm explanations on test records."""
    records: list[ScenarioRecord] = []
    explanations: list[Explanation] = []
    for subset in (Subset.VIS, Subset.LANG):
        for i in range(db_per_subset):
            record = make_record(i, subset, Split.DB)
            records.append(record)
            explanations.append(
                Explanation(record.id, ExplanationSource.LLM, f"a model wrote this about {record.id}")
            )
        for i in range(test_per_subset):
            record = make_record(1000 + i, subset, Split.TEST)
            records.append(record)
            explanations.append(
                Explanation(record.id, ExplanationSource.LLM, f"a model wrote this about {record.id}")
            )
            explanations.append(
                Explanation(
                    record.id,
                    ExplanationSource.HUMAN_LLM,
                    f"a person and a model together explained {record.id} carefully",
                )
            )
    return records, explanations


@pytest.fixture
def small_corpus():
    return make_corpus()


class ScriptedTransport:
    """Embedding provider stub: deterministic unit vector per input."""

    def __init__(self, dims: dict[str, int]):
        self.dims = dims  # endpoint url -> dim
        self.calls = 0

    def __call__(self, url: str, payload: dict, timeout: float, headers: dict) -> dict:
        self.calls += 1
        dim = self.dims[url]
        vectors = [hashed_vector(item, dim).values for item in payload["inputs"]]
        return {"vectors": [list(v) for v in vectors]}


def make_gateway(tmp_path, text_dim: int = 6, image_dim: int = 4) -> EmbeddingGateway:
    config = ProviderConfig(
        text_endpoint="mock://text",
        image_endpoint="mock://image",
        text_dim=text_dim,
        image_dim=image_dim,
    )
    transport = ScriptedTransport({"mock://text": text_dim, "mock://image": image_dim})
    gateway = EmbeddingGateway(config, cache_dir=tmp_path / "cache", transport=transport)
    gateway.transport_stub = transport  # test hook for call counting
    return gateway


def scripted_query_embedder(image_dim: int = 4, text_dim: int = 6):
    """Deterministic query embedder matching ScriptedTransport's convention.

    ScriptedTransport embeds the raw request input; for images that input
    is the re-encoded upload, so this helper is only content-consistent for
    text. Tests that need exact gateway/index agreement go through the
    gateway itself.
    """

    def embed(record: ScenarioRecord) -> tuple[EmbeddingVector, EmbeddingVector]:
        return (
            hashed_vector(f"img:{record.image_ref}", image_dim),
            hashed_vector(record.outcome, text_dim),
        )

    return embed


def scripted_judge_prefer(substring: str):
    """Judge stub that ranks first whichever slot contains ``substring``."""

    def judge(prompt: str) -> str:
        first = _extract_answer(prompt, 1)
        return MODEL1_FIRST if substring in first else MODEL2_FIRST

    return judge


def _extract_answer(prompt: str, slot: int) -> str:
    # answers are wrapped in triple quotes in the judge prompt
    parts = prompt.split('"""')
    # parts: [..., instruction, ..., answer1, ..., answer2, ...]
    answers = [parts[i] for i in range(1, len(parts), 2)]
    return answers[slot]  # answers[0] is the instruction


def write_corpus_file(tmp_path, records, explanations, name="corpus.jsonl"):
    from ricl.corpus import save_corpus

    path = tmp_path / name
    save_corpus(records, explanations, path)
    return path


def judgment_fixture_line(task_id, winner, left_source="model_run", right_source="human_llm"):
    return json.dumps(
        {
            "task_id": task_id,
            "query_record_id": task_id.rsplit("/", 1)[-1],
            "left_source": left_source,
            "right_source": right_source,
            "presented_order_seed": 0,
            "winner": winner,
            "judge": "llm",
            "raw_reply": "",
        }
    )
