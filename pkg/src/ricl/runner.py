"""Few-shot experiment runner for chat-with-images model endpoints.

Builds interleaved k-shot prompts (exemplars chosen at random or by
ensemble retrieval), dispatches them to a model client, and records every
reply in a line-delimited manifest that is persisted incrementally, so an
interrupted run resumes exactly where it stopped.

Exemplar selection is a pure function of (seed, query id), never of
iteration order; a resumed run therefore reproduces the uninterrupted
run's manifest byte for byte when the client and clock are deterministic.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

from . import rng
from .corpus import Explanation, ExplanationSource, ScenarioRecord, Split, Subset
from .embeddings import EmbeddingVector
from .prompts import load_template
from .retrieval import DEFAULT_ALPHA, EnsembleIndex, RetrievalQuery, retrieve

__all__ = [
    "SelectionMode",
    "ExperimentConfig",
    "Segment",
    "PromptBundle",
    "PromptTemplate",
    "ManifestEntry",
    "RunManifest",
    "RunError",
    "PromptError",
    "select_exemplars",
    "assemble_prompt",
    "run_experiment",
    "run_grid",
    "load_manifest",
    "exemplar_explanation",
    "HttpModelClient",
]

VALID_SHOTS = (0, 1, 3, 5)
MAX_RETRIES = 3

QueryEmbedder = Callable[[ScenarioRecord], tuple[EmbeddingVector, EmbeddingVector]]


class RunError(Exception):
    pass


class PromptError(ValueError):
    pass


class SelectionMode(str, Enum):
    RANDOM = "random"
    RETRIEVED = "retrieved"
    NONE = "none"


@dataclass(frozen=True)
class ExperimentConfig:
    model_id: str
    shots: int
    mode: SelectionMode
    subset: Subset
    seed: int
    alpha: float = DEFAULT_ALPHA
    k_pool: int | None = None

    def __post_init__(self):
        if self.shots not in VALID_SHOTS:
            raise RunError(f"shots must be one of {VALID_SHOTS}, got {self.shots}")
        object.__setattr__(self, "mode", SelectionMode(self.mode))
        object.__setattr__(self, "subset", Subset(self.subset))
        rng.validate_seed(self.seed)
        if not 0.0 <= self.alpha <= 1.0:
            raise RunError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.shots == 0:
            # zero-shot has no exemplar selection; record the mode as none
            object.__setattr__(self, "mode", SelectionMode.NONE)
        elif self.mode is SelectionMode.NONE:
            raise RunError("mode=none is only valid for zero-shot configs")
        if self.k_pool is None:
            object.__setattr__(self, "k_pool", self.shots)
        elif self.k_pool < self.shots:
            raise RunError(f"k_pool ({self.k_pool}) must be >= shots ({self.shots})")

    @property
    def run_id(self) -> str:
        return (
            f"{self.model_id}-{self.subset.value}-{self.shots}shot-"
            f"{self.mode.value}-seed{self.seed}"
        )

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "shots": self.shots,
            "mode": self.mode.value,
            "subset": self.subset.value,
            "seed": self.seed,
            "alpha": self.alpha,
            "k_pool": self.k_pool,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentConfig":
        return cls(**payload)


@dataclass(frozen=True)
class Segment:
    kind: str  # "text" or "image"
    content: str

    def __post_init__(self):
        if self.kind not in ("text", "image"):
            raise PromptError(f"segment kind must be 'text' or 'image', got {self.kind!r}")


@dataclass(frozen=True)
class PromptBundle:
    """A fully rendered interleaved prompt plus its provenance."""

    query_record_id: str
    exemplars: tuple[tuple[str, str, str, str], ...]  # (image_ref, caption, outcome, explanation)
    exemplar_ids: tuple[str, ...]
    instruction: str
    rendered: tuple[Segment, ...]

    @property
    def prompt_hash(self) -> str:
        payload = json.dumps(
            [[s.kind, s.content] for s in self.rendered],
            ensure_ascii=False,
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class PromptTemplate:
    """Editable prompt wording; see ``docs/prompt_templates.md``."""

    instruction: str
    exemplar_text: str
    query_text: str

    @classmethod
    def default(cls) -> "PromptTemplate":
        return cls(**json.loads(load_template("icl_prompt.json")))

    @classmethod
    def from_file(cls, path: str | Path) -> "PromptTemplate":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def _fill(template: str, values: dict[str, str]) -> str:
    import re

    def sub(match: "re.Match[str]") -> str:
        name = match.group(1)
        if name not in values:
            raise PromptError(f"unresolved placeholder {{{name}}} in prompt template")
        return values[name]

    return re.sub(r"\{([a-z_]+)\}", sub, template)


def select_exemplars(
    query_record: ScenarioRecord,
    config: ExperimentConfig,
    db_records: Sequence[ScenarioRecord],
    index: EnsembleIndex | None = None,
    query_embedder: QueryEmbedder | None = None,
) -> list[str]:
    """Choose exemplar record ids for one query.

    Random mode samples uniformly without replacement from the subset's
    retrieval-side records under a per-query derived seed. Retrieved mode
    takes the top hits of the ensemble index for the query's image and
    outcome text. The query id is always excluded.
    """
    if config.shots == 0:
        return []
    pool = [
        r for r in db_records
        if r.split is Split.DB and r.subset is config.subset and r.id != query_record.id
    ]
    if config.mode is SelectionMode.RANDOM:
        if config.shots > len(pool):
            raise RunError(f"shots={config.shots} exceeds db pool size {len(pool)}")
        gen = rng.generator(config.seed, "select", query_record.id)
        chosen = gen.choice(len(pool), size=config.shots, replace=False)
        return [pool[int(i)].id for i in chosen]

    if index is None:
        raise RunError("retrieved mode requires a built index")
    if query_embedder is None:
        raise RunError("retrieved mode requires a query embedder")
    if config.shots > index.size:
        raise RunError(f"shots={config.shots} exceeds index size {index.size}")
    image_vec, text_vec = query_embedder(query_record)
    depth = min(max(config.k_pool, config.shots) + 1, index.size)
    hits = retrieve(index, RetrievalQuery(image_vec, text_vec, k=depth, alpha=config.alpha))
    ids = [h.scenario_id for h in hits if h.scenario_id != query_record.id][: config.shots]
    if len(ids) < config.shots:
        raise RunError(f"index too small for shots={config.shots} after excluding the query")
    return ids


def exemplar_explanation(record_id: str, explanations: Sequence[Explanation]) -> str:
    """The first LLM-written explanation for a retrieval-side record."""
    for explanation in explanations:
        if explanation.scenario_id == record_id and explanation.source is ExplanationSource.LLM:
            return explanation.text
    raise RunError(f"no llm explanation available for db record {record_id!r}")


def assemble_prompt(
    query_record: ScenarioRecord,
    exemplar_items: Sequence[tuple[ScenarioRecord, str]],
    template: PromptTemplate | None = None,
    check_images: bool = True,
) -> PromptBundle:
    """Render the interleaved prompt: instruction, then per exemplar an
    image segment and a text segment, then the query image and its text.

    Segment count is 2 * shots + 3.
    """
    template = template or PromptTemplate.default()
    segments: list[Segment] = [Segment("text", template.instruction)]
    exemplars = []
    exemplar_ids = []
    for record, explanation in exemplar_items:
        if record.id == query_record.id:
            raise PromptError(f"exemplar {record.id!r} is the query itself")
        if record.split is not Split.DB:
            raise PromptError(f"exemplar {record.id!r} is not a retrieval-side (db) record")
        _check_image(record.image_ref, check_images)
        segments.append(Segment("image", record.image_ref))
        segments.append(
            Segment(
                "text",
                _fill(
                    template.exemplar_text,
                    {"caption": record.caption, "outcome": record.outcome, "explanation": explanation},
                ),
            )
        )
        exemplars.append((record.image_ref, record.caption, record.outcome, explanation))
        exemplar_ids.append(record.id)
    _check_image(query_record.image_ref, check_images)
    segments.append(Segment("image", query_record.image_ref))
    segments.append(
        Segment(
            "text",
            _fill(template.query_text, {"caption": query_record.caption, "outcome": query_record.outcome}),
        )
    )
    return PromptBundle(
        query_record_id=query_record.id,
        exemplars=tuple(exemplars),
        exemplar_ids=tuple(exemplar_ids),
        instruction=template.instruction,
        rendered=tuple(segments),
    )


def _check_image(image_ref: str, enabled: bool) -> None:
    if not enabled or image_ref.startswith(("http://", "https://")):
        return
    if not Path(image_ref).exists():
        raise PromptError(f"missing image file: {image_ref!r}")


@dataclass(frozen=True)
class ManifestEntry:
    query_record_id: str
    prompt_hash: str
    exemplar_ids: tuple[str, ...]
    reply: str | None
    error: str | None
    retries: int
    latency_s: float

    def to_dict(self) -> dict:
        return {
            "kind": "result",
            "query_record_id": self.query_record_id,
            "prompt_hash": self.prompt_hash,
            "exemplar_ids": list(self.exemplar_ids),
            "reply": self.reply,
            "error": self.error,
            "retries": self.retries,
            "latency_s": self.latency_s,
        }


@dataclass
class RunManifest:
    config: ExperimentConfig
    started: str
    entries: list[ManifestEntry]
    finished: str | None = None

    @property
    def run_id(self) -> str:
        return self.config.run_id

    def by_query(self) -> dict[str, ManifestEntry]:
        return {e.query_record_id: e for e in self.entries}

    @property
    def failure_count(self) -> int:
        return sum(1 for e in self.entries if e.error is not None)


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _dispatch(
    bundle: PromptBundle,
    model_client: Callable[[PromptBundle], str],
    clock: Callable[[], float],
    sleep: Callable[[float], None],
) -> ManifestEntry:
    start = clock()
    last_error = ""
    for attempt in range(MAX_RETRIES + 1):
        try:
            reply = model_client(bundle)
            return ManifestEntry(
                query_record_id=bundle.query_record_id,
                prompt_hash=bundle.prompt_hash,
                exemplar_ids=bundle.exemplar_ids,
                reply=reply,
                error=None,
                retries=attempt,
                latency_s=clock() - start,
            )
        except Exception as exc:  # endpoint failures must never kill the run
            last_error = f"{type(exc).__name__}: {exc}"
            if attempt < MAX_RETRIES:
                sleep(0.5 * 2**attempt)
    return ManifestEntry(
        query_record_id=bundle.query_record_id,
        prompt_hash=bundle.prompt_hash,
        exemplar_ids=bundle.exemplar_ids,
        reply=None,
        error=last_error,
        retries=MAX_RETRIES,
        latency_s=clock() - start,
    )


def run_experiment(
    config: ExperimentConfig,
    records: Sequence[ScenarioRecord],
    explanations: Sequence[Explanation],
    model_client: Callable[[PromptBundle], str],
    manifest_path: str | Path,
    index: EnsembleIndex | None = None,
    query_embedder: QueryEmbedder | None = None,
    template: PromptTemplate | None = None,
    resume: bool = False,
    max_parallel: int = 4,
    failure_rate_threshold: float = 0.5,
    check_images: bool = False,
    clock: Callable[[], float] = time.perf_counter,
    now: Callable[[], str] = _utc_now,
    sleep: Callable[[float], None] = time.sleep,
) -> RunManifest:
    """Run every test record of the config's subset through the model.

    The manifest is appended line by line as replies arrive (in query
    order), so a killed run can be resumed with ``resume=True`` and will
    finish with the same manifest an uninterrupted run would have written.
    """
    manifest_path = Path(manifest_path)
    test_records = [r for r in records if r.split is Split.TEST and r.subset is config.subset]
    if not test_records:
        raise RunError(f"corpus has no test records for subset {config.subset.value!r}")

    done: dict[str, ManifestEntry] = {}
    started = now()
    if resume and manifest_path.exists():
        existing = load_manifest(manifest_path)
        if existing.config != config:
            raise RunError("manifest on disk was written by a different config")
        if existing.finished is not None:
            return existing
        done = existing.by_query()
        started = existing.started
        mode = "a"
    else:
        mode = "w"

    pending = [r for r in test_records if r.id not in done]
    by_id = {r.id: r for r in records}
    bundles = []
    for record in pending:
        exemplar_ids = select_exemplars(record, config, records, index, query_embedder)
        items = [(by_id[i], exemplar_explanation(i, explanations)) for i in exemplar_ids]
        bundles.append(assemble_prompt(record, items, template, check_images=check_images))

    entries = [done[r.id] for r in test_records if r.id in done]
    with manifest_path.open(mode, encoding="utf-8") as fh:
        if mode == "w":
            header = {"kind": "config", "run_id": config.run_id, "started": started}
            header.update(config.to_dict())
            fh.write(json.dumps(header, ensure_ascii=False, separators=(",", ":")) + "\n")
            fh.flush()
        with ThreadPoolExecutor(max_workers=max(1, max_parallel)) as pool:
            for entry in pool.map(lambda b: _dispatch(b, model_client, clock, sleep), bundles):
                entries.append(entry)
                fh.write(json.dumps(entry.to_dict(), ensure_ascii=False, separators=(",", ":")) + "\n")
                fh.flush()
        failure_count = sum(1 for e in entries if e.error is not None)
        if failure_count / len(test_records) > failure_rate_threshold:
            raise RunError(
                f"{failure_count}/{len(test_records)} queries failed, above the "
                f"{failure_rate_threshold:.0%} threshold; manifest left resumable"
            )
        finished = now()
        footer = {
            "kind": "finished",
            "finished": finished,
            "result_count": len(entries),
            "failure_count": failure_count,
        }
        fh.write(json.dumps(footer, ensure_ascii=False, separators=(",", ":")) + "\n")
    return RunManifest(config=config, started=started, entries=entries, finished=finished)


def load_manifest(path: str | Path) -> RunManifest:
    """Read a manifest file written by :func:`run_experiment`."""
    path = Path(path)
    config = None
    started = ""
    finished = None
    entries: list[ManifestEntry] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            payload = json.loads(line)
            kind = payload.get("kind")
            if kind == "config":
                started = payload["started"]
                config = ExperimentConfig.from_dict(
                    {k: payload[k] for k in ("model_id", "shots", "mode", "subset", "seed", "alpha", "k_pool")}
                )
            elif kind == "result":
                entries.append(
                    ManifestEntry(
                        query_record_id=payload["query_record_id"],
                        prompt_hash=payload["prompt_hash"],
                        exemplar_ids=tuple(payload["exemplar_ids"]),
                        reply=payload["reply"],
                        error=payload["error"],
                        retries=payload["retries"],
                        latency_s=payload["latency_s"],
                    )
                )
            elif kind == "finished":
                finished = payload["finished"]
            else:
                raise RunError(f"{path}: line {line_number}: unknown kind {kind!r}")
    if config is None:
        raise RunError(f"{path}: manifest has no config line")
    return RunManifest(config=config, started=started, entries=entries, finished=finished)


def grid_configs(
    model_id: str,
    subset: Subset,
    seed: int,
    alpha: float = DEFAULT_ALPHA,
    shot_grid: Sequence[int] = (0, 1, 3, 5),
    modes: Sequence[SelectionMode] = (SelectionMode.RANDOM, SelectionMode.RETRIEVED),
) -> list[ExperimentConfig]:
    """The shot/mode grid, with zero-shot deduplicated across modes."""
    configs = []
    for shots in shot_grid:
        if shots == 0:
            configs.append(
                ExperimentConfig(model_id=model_id, shots=0, mode=SelectionMode.NONE,
                                 subset=subset, seed=seed, alpha=alpha)
            )
            continue
        for mode in modes:
            configs.append(
                ExperimentConfig(model_id=model_id, shots=shots, mode=mode,
                                 subset=subset, seed=seed, alpha=alpha)
            )
    return configs


def run_grid(
    model_id: str,
    subset: Subset,
    seed: int,
    records: Sequence[ScenarioRecord],
    explanations: Sequence[Explanation],
    model_client: Callable[[PromptBundle], str],
    out_dir: str | Path,
    index: EnsembleIndex | None = None,
    query_embedder: QueryEmbedder | None = None,
    alpha: float = DEFAULT_ALPHA,
    **run_kwargs,
) -> dict[str, RunManifest]:
    """Run the full shot/mode grid; returns manifests keyed by run id."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifests = {}
    for config in grid_configs(model_id, subset, seed, alpha):
        manifest = run_experiment(
            config,
            records,
            explanations,
            model_client,
            out_dir / f"{config.run_id}.jsonl",
            index=index,
            query_embedder=query_embedder,
            **run_kwargs,
        )
        manifests[config.run_id] = manifest
    return manifests


class HttpModelClient:
    """JSON-over-HTTP chat client with interleaved content parts.

    Request/response schema is documented in ``docs/model_protocol.md``.
    """

    def __init__(self, url: str, model_id: str, auth: str | None = None, timeout: float = 120.0):
        self.url = url
        self.model_id = model_id
        self.auth = auth
        self.timeout = timeout

    def __call__(self, bundle: PromptBundle) -> str:
        import requests

        content = []
        for segment in bundle.rendered:
            if segment.kind == "text":
                content.append({"type": "text", "text": segment.content})
            else:
                content.append({"type": "image", "image_ref": segment.content})
        payload = {"model": self.model_id, "messages": [{"role": "user", "content": content}]}
        headers = {"Content-Type": "application/json"}
        if self.auth:
            headers["Authorization"] = f"Bearer {self.auth}"
        response = requests.post(self.url, json=payload, timeout=self.timeout, headers=headers)
        response.raise_for_status()
        reply = response.json().get("reply")
        if not isinstance(reply, str):
            raise RunError("model endpoint reply must be {'reply': '<text>'}")
        return reply
