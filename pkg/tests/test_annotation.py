from __future__ import annotations

import json

import numpy as np
import pytest

from ricl.annotation import (
    AnnotationError,
    ConflictError,
    TaskStore,
    UnknownTaskError,
    build_tasks,
    load_tasks,
    save_tasks,
)
from ricl.corpus import Subset
from ricl.runner import SelectionMode
from ricl.server import create_app

from conftest import make_corpus
from test_evaluation import manifest_stub

UI_PAYLOAD_KEYS = {"task_id", "image_url", "context", "outcome", "option_a", "option_b", "progress"}


def build_fixture_tasks(sample_size=10, seed=7, query_count=20):
    records, _ = make_corpus(db_per_subset=0, test_per_subset=query_count)
    vis_tests = [r for r in records if r.subset is Subset.VIS]
    query_ids = [r.id for r in vis_tests]
    manifest_a = manifest_stub("phi", Subset.VIS, 0, SelectionMode.NONE, query_ids)
    manifest_b = manifest_stub("phi", Subset.VIS, 5, SelectionMode.RETRIEVED, query_ids)
    tasks = build_tasks(manifest_a, manifest_b, records, sample_size, seed)
    return tasks, manifest_a, manifest_b, records


class TestBuildTasks:
    def test_sample_of_fifty_from_larger_pool(self):
        tasks, *_ = build_fixture_tasks(sample_size=50, query_count=500)
        assert len(tasks) == 50
        assert len({t.task_id for t in tasks}) == 50

    def test_full_sample_is_shuffled_permutation(self):
        tasks, manifest_a, _, _ = build_fixture_tasks(sample_size=20, query_count=20)
        sampled = [t.query_record_id for t in tasks]
        assert sorted(sampled) == sorted(e.query_record_id for e in manifest_a.entries)

    def test_deterministic_per_seed(self):
        first, *_ = build_fixture_tasks(seed=3)
        second, *_ = build_fixture_tasks(seed=3)
        assert first == second
        third, *_ = build_fixture_tasks(seed=4)
        assert first != third

    def test_sides_randomized_and_logged(self):
        tasks, manifest_a, manifest_b, _ = build_fixture_tasks(sample_size=20, query_count=20)
        sides_for_a = {t.hidden_assignment["a"] for t in tasks}
        assert sides_for_a == {manifest_a.run_id, manifest_b.run_id}

    def test_oversample_rejected(self):
        with pytest.raises(AnnotationError, match="sample_size"):
            build_fixture_tasks(sample_size=25, query_count=20)

    def test_disjoint_query_sets_rejected(self):
        records, _ = make_corpus(db_per_subset=0, test_per_subset=4)
        vis = [r.id for r in records if r.subset is Subset.VIS]
        lang = [r.id for r in records if r.subset is Subset.LANG]
        manifest_a = manifest_stub("m", Subset.VIS, 0, SelectionMode.NONE, vis)
        manifest_b = manifest_stub("m", Subset.LANG, 0, SelectionMode.NONE, lang)
        with pytest.raises(AnnotationError, match="share no"):
            build_tasks(manifest_a, manifest_b, records, 2, 1)

    def test_round_trip(self, tmp_path):
        tasks, *_ = build_fixture_tasks()
        path = tmp_path / "tasks.jsonl"
        save_tasks(tasks, path)
        assert load_tasks(path) == tasks


class TestTaskStore:
    def test_happy_path(self):
        tasks, *_ = build_fixture_tasks()
        store = TaskStore(tasks)
        task = store.next_task("ann-1")
        assert task is not None
        store.submit_judgment("ann-1", task.task_id, "a")
        assert store.done == 1
        assert store.open == store.total - 1

    def test_idempotent_resubmission(self):
        tasks, *_ = build_fixture_tasks()
        store = TaskStore(tasks)
        task = store.next_task("ann-1")
        first = store.submit_judgment("ann-1", task.task_id, "a")
        second = store.submit_judgment("ann-1", task.task_id, "a")
        assert first == second
        assert store.done == 1

    def test_conflicting_resubmission_rejected(self):
        tasks, *_ = build_fixture_tasks()
        store = TaskStore(tasks)
        task = store.next_task("ann-1")
        store.submit_judgment("ann-1", task.task_id, "a")
        with pytest.raises(ConflictError):
            store.submit_judgment("ann-1", task.task_id, "b")

    def test_closed_task_conflict_for_other_annotator(self):
        tasks, *_ = build_fixture_tasks()
        store = TaskStore(tasks)
        task = store.next_task("ann-1")
        store.submit_judgment("ann-1", task.task_id, "a")
        with pytest.raises(ConflictError):
            store.submit_judgment("ann-2", task.task_id, "b")

    def test_unknown_task_rejected(self):
        tasks, *_ = build_fixture_tasks()
        store = TaskStore(tasks)
        with pytest.raises(UnknownTaskError):
            store.submit_judgment("ann-1", "task-9999", "a")

    def test_conservation(self):
        tasks, *_ = build_fixture_tasks()
        store = TaskStore(tasks)
        for _ in range(4):
            task = store.next_task("ann-1")
            store.submit_judgment("ann-1", task.task_id, "b")
            assert store.done + store.open == store.total

    def test_exhaustion_returns_none(self):
        tasks, *_ = build_fixture_tasks(sample_size=3)
        store = TaskStore(tasks)
        for _ in range(3):
            store.submit_judgment("ann-1", store.next_task("ann-1").task_id, "a")
        assert store.next_task("ann-1") is None

    def test_crash_replay_restores_state(self, tmp_path):
        tasks, *_ = build_fixture_tasks()
        log = tmp_path / "judgments.log"
        store = TaskStore(tasks, judgment_log=log)
        for _ in range(5):
            task = store.next_task("ann-1")
            store.submit_judgment("ann-1", task.task_id, "a")
        reborn = TaskStore(tasks, judgment_log=log)
        assert reborn.done == 5
        assert reborn.judgments() == store.judgments()

    def test_results_summary_hand_tally(self):
        tasks, manifest_a, manifest_b, _ = build_fixture_tasks(sample_size=20, query_count=20)
        store = TaskStore(tasks)
        gen = np.random.default_rng(5)
        choices = {}
        for task in tasks:
            choice = "a" if gen.random() < 0.7 else "b"
            store.submit_judgment("ann-1", task.task_id, choice)
            choices[task.task_id] = choice
        summary = store.results_summary()
        assert len(summary) == 1
        pair = summary[0]
        wins_a_condition = sum(
            1 for task in tasks if task.hidden_assignment[choices[task.task_id]] == manifest_a.run_id
        )
        assert pair["win_rates"][manifest_a.run_id] == pytest.approx(wins_a_condition / 20)

    def test_pending_pair(self):
        tasks, *_ = build_fixture_tasks()
        store = TaskStore(tasks)
        assert store.results_summary()[0]["status"] == "pending"

    def test_twenty_eight_of_fifty_is_fifty_six_percent(self):
        tasks, manifest_a, manifest_b, _ = build_fixture_tasks(sample_size=50, query_count=60)
        store = TaskStore(tasks)
        favored = manifest_b.run_id
        for i, task in enumerate(tasks):
            favored_side = "a" if task.hidden_assignment["a"] == favored else "b"
            other_side = "b" if favored_side == "a" else "a"
            store.submit_judgment("ann-1", task.task_id, favored_side if i < 28 else other_side)
        summary = store.results_summary()[0]
        assert summary["judgments"] == 50
        assert summary["win_rates"][favored] == 0.56


class TestBlindness:
    def test_ui_payload_schema(self):
        tasks, manifest_a, manifest_b, _ = build_fixture_tasks()
        for task in tasks:
            payload = task.ui_payload(done=0, total=len(tasks))
            assert set(payload) == UI_PAYLOAD_KEYS
            serialized = json.dumps(payload)
            assert manifest_a.run_id not in serialized
            assert manifest_b.run_id not in serialized
            assert "hidden" not in serialized
            assert "retrieved" not in serialized


@pytest.fixture
def api_client(tmp_path):
    from fastapi.testclient import TestClient

    tasks, manifest_a, manifest_b, records = build_fixture_tasks(sample_size=10)
    store = TaskStore(tasks, judgment_log=tmp_path / "log.jsonl")
    app = create_app(store, tokens={"secret-token": "ann-1"}, records=records)
    client = TestClient(app)
    client.headers["Authorization"] = "Bearer secret-token"
    return client, store, tasks


class TestHttpApi:
    def test_health(self, api_client):
        client, store, tasks = api_client
        response = client.get("/api/health")
        assert response.status_code == 200
        assert response.json() == {"status": "ok", "tasks_total": 10, "tasks_done": 0}

    def test_auth_required(self, api_client):
        client, *_ = api_client
        response = client.get("/api/tasks/next", headers={"Authorization": ""})
        assert response.status_code == 401

    def test_next_then_submit_then_results(self, api_client):
        client, store, tasks = api_client
        task = client.get("/api/tasks/next").json()
        assert set(task) == UI_PAYLOAD_KEYS
        response = client.post("/api/judgments", json={"task_id": task["task_id"], "choice": "a"})
        assert response.status_code == 200
        assert response.json()["progress"] == {"done": 1, "total": 10}
        results = client.get("/api/results").json()
        assert results["pairs"][0]["judgments"] == 1

    def test_conflict_maps_to_409(self, api_client):
        client, *_ = api_client
        task = client.get("/api/tasks/next").json()
        client.post("/api/judgments", json={"task_id": task["task_id"], "choice": "a"})
        response = client.post("/api/judgments", json={"task_id": task["task_id"], "choice": "b"})
        assert response.status_code == 409

    def test_unknown_task_maps_to_404(self, api_client):
        client, *_ = api_client
        response = client.post("/api/judgments", json={"task_id": "task-bogus", "choice": "a"})
        assert response.status_code == 404

    def test_queue_exhaustion_is_204(self, api_client):
        client, store, tasks = api_client
        for _ in range(10):
            task = client.get("/api/tasks/next").json()
            client.post("/api/judgments", json={"task_id": task["task_id"], "choice": "b"})
        assert client.get("/api/tasks/next").status_code == 204

    def test_payload_blindness_over_http(self, api_client):
        client, store, tasks = api_client
        body = client.get("/api/tasks/next").text
        assert "hidden_assignment" not in body
        assert "retrieved" not in body
        assert "phi" not in body
