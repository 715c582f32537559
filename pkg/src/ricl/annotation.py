"""Pairwise human-evaluation tasks built from two experiment manifests.

Each task shows one query's image, context, and outcome next to two
anonymized explanations. Which condition produced option A or B is decided
by a seeded shuffle and kept server-side only: the payload sent to the UI
never carries condition labels. Judgments are appended durably to a log
before they are acknowledged, so a restart loses nothing.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

from . import rng
from .corpus import ScenarioRecord
from .evaluation import JudgeKind, PairwiseJudgment, Winner, win_rate
from .runner import RunManifest

__all__ = [
    "TaskStatus",
    "AnnotationTask",
    "SessionState",
    "TaskStore",
    "AnnotationError",
    "UnknownTaskError",
    "ConflictError",
    "build_tasks",
    "save_tasks",
    "load_tasks",
]


class AnnotationError(ValueError):
    pass


class UnknownTaskError(AnnotationError):
    pass


class ConflictError(AnnotationError):
    """A differing judgment already exists for this task."""


class TaskStatus(str, Enum):
    OPEN = "open"
    DONE = "done"


@dataclass
class AnnotationTask:
    task_id: str
    query_record_id: str
    image_ref: str
    context: str
    outcome: str
    option_a: str
    option_b: str
    hidden_assignment: dict[str, str]  # {"a": condition, "b": condition}; server-side only
    status: TaskStatus = TaskStatus.OPEN

    def ui_payload(self, done: int, total: int) -> dict:
        """The payload served to annotators; carries no condition metadata."""
        return {
            "task_id": self.task_id,
            "image_url": f"/api/images/{self.query_record_id}",
            "context": self.context,
            "outcome": self.outcome,
            "option_a": self.option_a,
            "option_b": self.option_b,
            "progress": {"done": done, "total": total},
        }


@dataclass
class SessionState:
    annotator_id: str
    assigned: set[str] = field(default_factory=set)
    completed: int = 0


def build_tasks(
    manifest_a: RunManifest,
    manifest_b: RunManifest,
    records: Sequence[ScenarioRecord],
    sample_size: int,
    seed: int,
) -> list[AnnotationTask]:
    """Sample queries answered by both manifests into anonymized tasks.

    The sample and the per-task A/B side assignment are both driven by the
    seed, so task construction is reproducible. Assignments are logged in
    ``hidden_assignment`` and never serialized toward the UI.
    """
    replies_a = {e.query_record_id: e.reply for e in manifest_a.entries if e.reply is not None}
    replies_b = {e.query_record_id: e.reply for e in manifest_b.entries if e.reply is not None}
    common = sorted(set(replies_a) & set(replies_b))
    if not common:
        raise AnnotationError("the two manifests share no successfully answered queries")
    if sample_size > len(common):
        raise AnnotationError(f"sample_size {sample_size} exceeds common query count {len(common)}")
    by_id = {r.id: r for r in records}
    for query_id in common:
        if query_id not in by_id:
            raise AnnotationError(f"manifest references unknown record {query_id!r}")

    gen = rng.generator(seed, "annotation-tasks")
    chosen = [common[int(i)] for i in gen.choice(len(common), size=sample_size, replace=False)]
    label_a = manifest_a.run_id
    label_b = manifest_b.run_id
    tasks = []
    for i, query_id in enumerate(chosen):
        record = by_id[query_id]
        a_side_first = bool(gen.integers(0, 2) == 0)
        if a_side_first:
            option_a, option_b = replies_a[query_id], replies_b[query_id]
            assignment = {"a": label_a, "b": label_b}
        else:
            option_a, option_b = replies_b[query_id], replies_a[query_id]
            assignment = {"a": label_b, "b": label_a}
        tasks.append(
            AnnotationTask(
                task_id=f"task-{i:04d}",
                query_record_id=query_id,
                image_ref=record.image_ref,
                context=record.caption,
                outcome=record.outcome,
                option_a=option_a,
                option_b=option_b,
                hidden_assignment=assignment,
            )
        )
    return tasks


def save_tasks(tasks: Sequence[AnnotationTask], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for task in tasks:
            fh.write(
                json.dumps(
                    {
                        "task_id": task.task_id,
                        "query_record_id": task.query_record_id,
                        "image_ref": task.image_ref,
                        "context": task.context,
                        "outcome": task.outcome,
                        "option_a": task.option_a,
                        "option_b": task.option_b,
                        "hidden_assignment": task.hidden_assignment,
                    },
                    ensure_ascii=False,
                    separators=(",", ":"),
                )
                + "\n"
            )


def load_tasks(path: str | Path) -> list[AnnotationTask]:
    tasks = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            tasks.append(AnnotationTask(**json.loads(line)))
    return tasks


class TaskStore:
    """Thread-safe task queue plus an append-only judgment log.

    Judgments are flushed and fsynced before the call returns; on restart
    the log replays over the task list, so acknowledged work survives.
    """

    def __init__(self, tasks: Sequence[AnnotationTask], judgment_log: str | Path | None = None):
        self._tasks = {t.task_id: t for t in tasks}
        if len(self._tasks) != len(tasks):
            raise AnnotationError("duplicate task ids")
        self._order = [t.task_id for t in tasks]
        self._judgments: dict[str, PairwiseJudgment] = {}
        self._choices: dict[str, str] = {}
        self._sessions: dict[str, SessionState] = {}
        self._lock = threading.Lock()
        self._log_path = Path(judgment_log) if judgment_log is not None else None
        if self._log_path is not None and self._log_path.exists():
            self._replay()

    def _replay(self) -> None:
        with self._log_path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                payload = json.loads(line)
                self._apply(
                    annotator_id=payload["annotator_id"],
                    task_id=payload["task_id"],
                    choice=payload["choice"],
                    persist=False,
                )

    # -- queries -----------------------------------------------------------

    @property
    def total(self) -> int:
        return len(self._order)

    @property
    def done(self) -> int:
        return sum(1 for t in self._tasks.values() if t.status is TaskStatus.DONE)

    @property
    def open(self) -> int:
        return self.total - self.done

    def session(self, annotator_id: str) -> SessionState:
        if annotator_id not in self._sessions:
            self._sessions[annotator_id] = SessionState(annotator_id=annotator_id)
        return self._sessions[annotator_id]

    def next_task(self, annotator_id: str) -> AnnotationTask | None:
        """The first open task this annotator has not judged, if any."""
        with self._lock:
            session = self.session(annotator_id)
            for task_id in self._order:
                task = self._tasks[task_id]
                if task.status is TaskStatus.OPEN and task_id not in session.assigned:
                    session.assigned.add(task_id)
                    return task
            return None

    # -- judgment submission -------------------------------------------------

    def _apply(self, annotator_id: str, task_id: str, choice: str, persist: bool) -> PairwiseJudgment:
        if choice not in ("a", "b"):
            raise AnnotationError(f"choice must be 'a' or 'b', got {choice!r}")
        task = self._tasks.get(task_id)
        if task is None:
            raise UnknownTaskError(f"unknown task {task_id!r}")
        existing_choice = self._choices.get(task_id)
        if existing_choice is not None:
            if existing_choice == choice:
                return self._judgments[task_id]  # idempotent resubmission
            raise ConflictError(
                f"task {task_id!r} already judged with choice {existing_choice!r}"
            )
        judgment = PairwiseJudgment(
            task_id=task_id,
            query_record_id=task.query_record_id,
            left_source=task.hidden_assignment["a"],
            right_source=task.hidden_assignment["b"],
            presented_order_seed=0,
            winner=Winner.LEFT if choice == "a" else Winner.RIGHT,
            judge=JudgeKind.HUMAN,
            raw_reply=choice,
        )
        if persist and self._log_path is not None:
            with self._log_path.open("a", encoding="utf-8") as fh:
                fh.write(
                    json.dumps(
                        {"annotator_id": annotator_id, "task_id": task_id, "choice": choice},
                        separators=(",", ":"),
                    )
                    + "\n"
                )
                fh.flush()
                os.fsync(fh.fileno())
        self._choices[task_id] = choice
        self._judgments[task_id] = judgment
        task.status = TaskStatus.DONE
        session = self.session(annotator_id)
        session.completed += 1
        session.assigned.add(task_id)
        return judgment

    def submit_judgment(self, annotator_id: str, task_id: str, choice: str) -> PairwiseJudgment:
        """Record a choice; durable before return, idempotent on retry."""
        with self._lock:
            return self._apply(annotator_id, task_id, choice, persist=True)

    # -- aggregation ---------------------------------------------------------

    def judgments(self) -> list[PairwiseJudgment]:
        with self._lock:
            return [self._judgments[t] for t in self._order if t in self._judgments]

    def results_summary(self) -> list[dict]:
        """Win rates per condition pair; pairs without judgments are pending."""
        pairs: dict[tuple[str, str], list[PairwiseJudgment]] = {}
        with self._lock:
            for task in self._tasks.values():
                key = tuple(sorted(task.hidden_assignment.values()))
                pairs.setdefault(key, [])
            for judgment in self._judgments.values():
                key = tuple(sorted((judgment.left_source, judgment.right_source)))
                pairs[key].append(judgment)
        summary = []
        for conditions, judgments in sorted(pairs.items()):
            if not judgments:
                summary.append({"conditions": list(conditions), "status": "pending", "judgments": 0})
                continue
            summary.append(
                {
                    "conditions": list(conditions),
                    "status": "ready",
                    "judgments": len(judgments),
                    "win_rates": {
                        condition: win_rate(judgments, condition).rate for condition in conditions
                    },
                }
            )
        return summary
