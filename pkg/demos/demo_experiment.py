#!/usr/bin/env python3
"""End-to-end mock experiment: synthetic corpus -> retrieval index ->
shot/mode grid against a scripted model -> pairwise judging -> report.

Everything external (embedding provider, vision-language model, judge) is
a deterministic stub, so the pipeline runs offline in seconds. Swap the
stubs for HTTP clients (see docs/model_protocol.md) to run it for real.
"""

import hashlib
import tempfile
from pathlib import Path

import numpy as np

from ricl.corpus import (
    Explanation,
    ExplanationSource,
    ScenarioRecord,
    Split,
    Subset,
)
from ricl.embeddings import l2_normalize
from ricl.evaluation import evaluate_manifest, format_report, report
from ricl.retrieval import IndexedEntry, build_index
from ricl.runner import run_grid


def pseudo_embedding(payload: str, dim: int):
    seed = int.from_bytes(hashlib.sha256(payload.encode()).digest()[:8], "little")
    return l2_normalize(np.random.default_rng(seed).normal(size=dim))


def embed_record(record):
    return pseudo_embedding(f"img:{record.image_ref}", 16), pseudo_embedding(record.outcome, 16)


def scripted_vlm(bundle):
    return (f"because of {bundle.query_record_id.split('-')[-1]}, guided by "
            f"{len(bundle.exemplar_ids)} worked examples, the outcome follows naturally")


def scripted_judge(prompt):
    verdict = hashlib.sha256(prompt.encode()).digest()[0] % 3
    if verdict:  # the mock model wins two thirds of the time
        return '[{"model": "model_1", "rank": 1}, {"model": "model_2", "rank": 2}]'
    return '[{"model": "model_2", "rank": 1}, {"model": "model_1", "rank": 2}]'


# --- a 30-record synthetic corpus: 10 retrieval-side + 5 test per subset ---
records, explanations = [], []
for subset in (Subset.VIS, Subset.LANG):
    for i in range(15):
        split = Split.DB if i < 10 else Split.TEST
        record = ScenarioRecord(
            id=f"{subset.value}-{split.value}-{i:02d}",
            subset=subset,
            caption=f"scene {i} of the {subset.value} family",
            rationale="",
            outcome=f"something surprising number {i} happened",
            image_ref=f"http://images.example/{subset.value}/{i}.jpg",
            split=split,
        )
        records.append(record)
        explanations.append(Explanation(record.id, ExplanationSource.LLM,
                                        f"a generated explanation for scene {i}"))
        if split is Split.TEST:
            explanations.append(Explanation(record.id, ExplanationSource.HUMAN_LLM,
                                            f"a refined human explanation for scene {i}"))

with tempfile.TemporaryDirectory() as tmp:
    manifests, judgments = [], []
    for subset in (Subset.VIS, Subset.LANG):
        index = build_index([
            IndexedEntry(r.id, *embed_record(r))
            for r in records if r.split is Split.DB and r.subset is subset
        ])
        grid = run_grid(
            "mock-vlm", subset, seed=13,
            records=records, explanations=explanations,
            model_client=scripted_vlm, out_dir=Path(tmp) / subset.value,
            index=index, query_embedder=embed_record,
        )
        print(f"{subset.value}: ran {len(grid)} manifests "
              f"({', '.join(sorted(m.split('-', 2)[2] for m in grid))})")
        for manifest in grid.values():
            manifests.append(manifest)
            judgments.extend(evaluate_manifest(
                manifest, records, explanations, scripted_judge, seed=29))

    rep = report(manifests, judgments)
    print(f"\ncollected {len(judgments)} judgments over {len(manifests)} runs\n")
    print(format_report(rep))
