#!/usr/bin/env python3
"""Human annotation flow without a browser: build blind A/B tasks from two
run manifests, submit scripted judgments through the task store, and read
the win-rate summary (the same store backs the HTTP service)."""

import tempfile
from pathlib import Path

import numpy as np

from ricl.annotation import TaskStore, build_tasks
from ricl.corpus import Explanation, ExplanationSource, ScenarioRecord, Split, Subset
from ricl.runner import ExperimentConfig, SelectionMode, run_experiment

records, explanations = [], []
for i in range(20):
    record = ScenarioRecord(
        id=f"vis-test-{i:02d}", subset=Subset.VIS,
        caption=f"an ordinary scene {i}", rationale="",
        outcome=f"unexpected outcome {i}",
        image_ref=f"http://images.example/{i}.jpg", split=Split.TEST,
    )
    records.append(record)
    explanations.append(Explanation(record.id, ExplanationSource.HUMAN_LLM,
                                    f"refined explanation {i}"))

with tempfile.TemporaryDirectory() as tmp:
    zero_shot = run_experiment(
        ExperimentConfig("demo-model", 0, SelectionMode.NONE, Subset.VIS, seed=1),
        records, explanations, lambda b: f"terse answer for {b.query_record_id}",
        Path(tmp) / "zero.jsonl",
    )
    five_shot = run_experiment(
        ExperimentConfig("demo-model", 0, SelectionMode.NONE, Subset.VIS, seed=2),
        records, explanations, lambda b: f"careful grounded answer for {b.query_record_id}",
        Path(tmp) / "five.jsonl",
    )

    tasks = build_tasks(zero_shot, five_shot, records, sample_size=15, seed=42)
    print(f"built {len(tasks)} blind tasks; a UI payload looks like:")
    payload = tasks[0].ui_payload(done=0, total=len(tasks))
    for key, value in payload.items():
        print(f"  {key}: {value!r}")
    print("(note: no condition labels anywhere in the payload)\n")

    store = TaskStore(tasks, judgment_log=Path(tmp) / "judgments.jsonl")

    # A scripted annotator who tends to prefer the longer answer.
    rng = np.random.default_rng(7)
    while (task := store.next_task("demo-annotator")) is not None:
        longer = "a" if len(task.option_a) >= len(task.option_b) else "b"
        choice = longer if rng.random() < 0.8 else ("b" if longer == "a" else "a")
        store.submit_judgment("demo-annotator", task.task_id, choice)

    print(f"completed {store.done}/{store.total} tasks; win rates per condition pair:")
    for pair in store.results_summary():
        for condition, rate in pair["win_rates"].items():
            print(f"  {condition}: {rate:.0%}")
    print("\nsame data over HTTP: ricl serve --tasks-file tasks.jsonl (see docs/http_api.md)")
