"""Acceptance suite: one test per release criterion, at pinned tolerances.

Run with ``pytest tests/test_acceptance.py -v``; a PASS/FAIL line per
criterion is printed in the terminal summary.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from ricl.corpus import Subset
from ricl.curation import BlockParseError, ScenarioBlock, parse_scenario_blocks, serialize_scenario_blocks
from ricl.embeddings import l2_normalize
from ricl.evaluation import (
    PairwiseJudgment,
    Winner,
    bootstrap_entropy,
    distribution_mean,
    evaluate_manifest,
    format_report,
    ngram_entropy,
    report,
    win_rate,
)
from ricl.prompts import load_template
from ricl.retrieval import EnsembleIndex, RetrievalQuery, fuse, load_index, retrieve, save_index
from ricl.runner import ExperimentConfig, SelectionMode, run_grid
from ricl.retrieval import IndexedEntry, build_index

from conftest import make_corpus, scripted_query_embedder

FIXED_CLOCK = dict(clock=lambda: 0.0, now=lambda: "2026-01-01T00:00:00+00:00")

ALPHA_GRID = (0.0, 0.25, 0.4, 1.0)


# -- helpers -------------------------------------------------------------------


def random_dual_index(gen: np.random.Generator, size: int, image_dim: int, text_dim: int,
                      duplicate_fraction: float = 0.1) -> EnsembleIndex:
    """Random unit-row index, with some duplicated rows to exercise ties."""
    image = gen.normal(size=(size, image_dim))
    text = gen.normal(size=(size, text_dim))
    n_dup = max(1, int(size * duplicate_fraction))
    for _ in range(n_dup):
        src, dst = gen.integers(0, size, size=2)
        image[dst] = image[src]
        text[dst] = text[src]
    image /= np.linalg.norm(image, axis=1, keepdims=True)
    text /= np.linalg.norm(text, axis=1, keepdims=True)
    ids = [f"id-{i:05d}" for i in range(size)]
    return EnsembleIndex(ids, image.astype(np.float32), text.astype(np.float32))


def full_sort_oracle(index: EnsembleIndex, query: RetrievalQuery) -> list[str]:
    """Score every entry individually, sort all, slice k (no shortcuts)."""
    q_img = query.image_vec.as_array()
    q_txt = query.text_vec.as_array()
    rows = []
    for i, scenario_id in enumerate(index.ids):
        image_score = float(np.clip((index.image_mat[i].astype(np.float64) * q_img).sum(), -1.0, 1.0))
        text_score = float(np.clip((index.text_mat[i].astype(np.float64) * q_txt).sum(), -1.0, 1.0))
        rows.append((query.alpha * image_score + (1 - query.alpha) * text_score, scenario_id))
    rows.sort(key=lambda row: (-row[0], row[1]))
    return [scenario_id for _, scenario_id in rows[: query.k]]


def random_query(gen: np.random.Generator, image_dim: int, text_dim: int, k: int, alpha: float):
    return RetrievalQuery(
        l2_normalize(gen.normal(size=image_dim)),
        l2_normalize(gen.normal(size=text_dim)),
        k=k,
        alpha=alpha,
    )


# -- criteria ------------------------------------------------------------------


def test_retrieval_oracle():
    """retrieve matches a brute-force full-sort oracle on 200 random cases."""
    gen = np.random.default_rng(2024)
    start = time.perf_counter()
    for case in range(200):
        size = int(gen.integers(2, 1001))
        image_dim = int(gen.integers(2, 65))
        text_dim = int(gen.integers(2, 65))
        index = random_dual_index(gen, size, image_dim, text_dim)
        k = int(gen.integers(1, min(20, size) + 1))
        alpha = float(gen.choice(ALPHA_GRID))
        query = random_query(gen, image_dim, text_dim, k, alpha)
        got = [hit.scenario_id for hit in retrieve(index, query)]
        want = full_sort_oracle(index, query)
        assert got == want, f"case {case}: retrieve diverged from the oracle"
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0, f"oracle sweep took {elapsed:.1f}s (budget 10s)"


def test_fusion_algebra():
    """fuse(s_i, s_t, 0.4) == 0.4*s_i + 0.6*s_t to 1e-12; boundary alphas
    reduce to single-modality rankings."""
    gen = np.random.default_rng(7)
    for _ in range(5000):
        s_img, s_txt = gen.uniform(-1.0, 1.0, size=2)
        assert abs(fuse(s_img, s_txt, 0.4) - (0.4 * s_img + 0.6 * s_txt)) <= 1e-12

    for case in range(50):
        size = int(gen.integers(2, 200))
        image_dim = int(gen.integers(2, 33))
        text_dim = int(gen.integers(2, 33))
        index = random_dual_index(gen, size, image_dim, text_dim)
        query = random_query(gen, image_dim, text_dim, k=size, alpha=0.4)

        image_only = retrieve(index, RetrievalQuery(query.image_vec, query.text_vec, size, 1.0))
        by_image = sorted(image_only, key=lambda h: (-h.image_score, h.scenario_id))
        assert [h.scenario_id for h in image_only] == [h.scenario_id for h in by_image]

        text_only = retrieve(index, RetrievalQuery(query.image_vec, query.text_vec, size, 0.0))
        by_text = sorted(text_only, key=lambda h: (-h.text_score, h.scenario_id))
        assert [h.scenario_id for h in text_only] == [h.scenario_id for h in by_text]


def test_scale_invariance():
    """Pre-normalization scaling by positive constants never changes the
    returned id sequence (50 random cases)."""
    gen = np.random.default_rng(11)
    for case in range(50):
        size = int(gen.integers(2, 300))
        image_dim = int(gen.integers(2, 33))
        text_dim = int(gen.integers(2, 33))
        raw_image = gen.normal(size=(size, image_dim))
        raw_text = gen.normal(size=(size, text_dim))
        ids = [f"id-{i:05d}" for i in range(size)]

        def build(image, text):
            img = image / np.linalg.norm(image, axis=1, keepdims=True)
            txt = text / np.linalg.norm(text, axis=1, keepdims=True)
            return EnsembleIndex(ids, img.astype(np.float32), txt.astype(np.float32))

        scales_img = gen.uniform(0.1, 50.0, size=(size, 1))
        scales_txt = gen.uniform(0.1, 50.0, size=(size, 1))
        plain = build(raw_image, raw_text)
        scaled = build(raw_image * scales_img, raw_text * scales_txt)

        q_img_raw = gen.normal(size=image_dim)
        q_txt_raw = gen.normal(size=text_dim)
        c_img, c_txt = gen.uniform(0.1, 50.0, size=2)
        k = int(gen.integers(1, size + 1))
        alpha = float(gen.choice(ALPHA_GRID))
        query_plain = RetrievalQuery(l2_normalize(q_img_raw), l2_normalize(q_txt_raw), k, alpha)
        query_scaled = RetrievalQuery(
            l2_normalize(q_img_raw * c_img), l2_normalize(q_txt_raw * c_txt), k, alpha
        )
        assert (
            [h.scenario_id for h in retrieve(plain, query_plain)]
            == [h.scenario_id for h in retrieve(scaled, query_scaled)]
        ), f"case {case}: scaling changed the ranking"


WORKED_TRIPLES = {
    "steak": (
        '{Caption: "red liquid in steak packaging"} {Rationale: "The red liquid found in steak '
        "packaging is often mistaken for blood. It is actually a mixture of water and a protein "
        "called myoglobin that naturally occurs in muscle tissue. This liquid is perfectly "
        'normal and does not indicate that the meat is unsafe."} {Situation: "Person cooked and '
        'enjoyed the steak without health issues."}',
        (
            "red liquid in steak packaging",
            "Person cooked and enjoyed the steak without health issues.",
        ),
    ),
    "yogurt": (
        '{Caption: "settling of liquid in yogurt"} {Rationale: "When you open a container of '
        "yogurt, you might observe a layer of clear liquid on top, which some may believe "
        "signifies spoilage. This liquid is simply whey separating from the yogurt solids, a "
        "natural process that doesn't affect the yogurt's quality. Stirring the whey back into "
        'the yogurt will restore its creamy texture."} {Situation: "Person enjoyed the yogurt '
        'as part of their breakfast."}',
        (
            "settling of liquid in yogurt",
            "Person enjoyed the yogurt as part of their breakfast.",
        ),
    ),
    "copper": (
        '{Caption: "green patina on copper cookware"} {Rationale: "Copper cookware may develop '
        "a greenish layer called patina. Some people mistake this for harmful corrosion, but "
        "patina is natural and can actually protect the copper from further oxidation. The "
        'cookware is still usable after proper cleaning."} {Situation: "Person used copper '
        'cookware to prepare a delicious meal."}',
        (
            "green patina on copper cookware",
            "Person used copper cookware to prepare a delicious meal.",
        ),
    ),
}


def _random_fuzz_case(gen: np.random.Generator) -> str:
    kind = gen.integers(0, 5)
    if kind == 0:  # pure noise with structural characters
        alphabet = list('{}":\\ abcCRSdef\n\tCaption Rationale Situation')
        return "".join(gen.choice(alphabet) for _ in range(int(gen.integers(0, 120))))
    blocks = [
        ScenarioBlock(
            caption="cap " + str(gen.integers(1000)),
            rationale='rat "quoted" ' + str(gen.integers(1000)),
            situation="sit {braced} " + str(gen.integers(1000)),
        )
        for _ in range(int(gen.integers(1, 4)))
    ]
    text = serialize_scenario_blocks(blocks)
    if kind == 1:  # valid
        return text
    if kind == 2:  # truncated
        return text[: int(gen.integers(0, len(text)))]
    if kind == 3:  # spliced with noise
        cut = int(gen.integers(0, len(text)))
        return text[:cut] + '"}{' + text[cut:]
    return text + text[: int(gen.integers(0, len(text)))]  # duplicated tail


def test_parser_conformance():
    """The three worked triples parse exactly; 10,000-case fuzz run with
    zero crashes; serialize-then-parse is the identity."""
    template = load_template("generate_odd_context.txt")
    for name, (raw, (caption, situation)) in WORKED_TRIPLES.items():
        assert raw in template, f"{name} fixture drifted from the shipped template"
        blocks = parse_scenario_blocks(raw)
        assert len(blocks) == 1, name
        assert blocks[0].caption == caption
        assert blocks[0].situation == situation
    # the yogurt rationale keeps its exact printed wording, apostrophes included
    yogurt = parse_scenario_blocks(WORKED_TRIPLES["yogurt"][0])[0]
    assert "doesn't affect the yogurt's quality" in yogurt.rationale

    gen = np.random.default_rng(99)
    for case in range(10_000):
        text = _random_fuzz_case(gen)
        try:
            parse_scenario_blocks(text)
        except BlockParseError as exc:
            assert exc.line >= 1 and exc.column >= 1
        # any other exception type is a crash and fails the test

    for case in range(200):
        blocks = [
            ScenarioBlock(
                caption=f"caption {gen.integers(10**6)}",
                rationale=f'why "{gen.integers(10**6)}" happened\\',
                situation=f"then {{{gen.integers(10**6)}}} occurred",
            )
            for _ in range(int(gen.integers(1, 5)))
        ]
        assert parse_scenario_blocks(serialize_scenario_blocks(blocks)) == blocks


def test_entropy_analytics():
    """Analytic entropy fixtures to 1e-12; degenerate bootstrap has zero
    std; fixed-seed bootstrap is bit-reproducible."""
    assert abs(ngram_entropy(["a a a"], 1) - 0.0) <= 1e-12
    assert abs(ngram_entropy(["a b c d"], 1) - 2.0) <= 1e-12
    assert abs(ngram_entropy(["a b a b a"], 2) - 1.0) <= 1e-12

    single = {"r1": ["alpha beta gamma delta epsilon"], "r2": ["zeta eta theta iota kappa"]}
    for n, (mean, std) in bootstrap_entropy(single, iterations=1000, seed=3).items():
        assert std == 0.0
        assert mean == ngram_entropy(single["r1"] + single["r2"], n)

    pairs = {
        "r1": ["a b c d e f g", "h i j k l m n"],
        "r2": ["o p q r s t u", "v w x y z aa bb"],
    }
    first = bootstrap_entropy(pairs, iterations=1000, seed=42)
    second = bootstrap_entropy(pairs, iterations=1000, seed=42)
    assert first == second  # bit-identical, not approximately equal


def test_statistics_arithmetic():
    """8 wins of 50 -> 0.16 exactly; published specificity proportions
    average to 2.29 +/- 0.005."""
    judgments = [
        PairwiseJudgment("t", "q", "model_run", "human_llm", 0,
                         Winner.LEFT if i < 8 else Winner.RIGHT, "llm", "")
        for i in range(50)
    ]
    stat = win_rate(judgments, "model_run")
    assert stat.rate == 0.16
    assert (stat.wins, stat.valid) == (8, 50)

    proportions = {1: 30.5, 2: 40.1, 3: 8.6, 4: 11.9, 5: 8.9}
    assert abs(distribution_mean(proportions) - 2.29) <= 0.005


def _subset_index(records, subset):
    embed = scripted_query_embedder()
    entries = [
        IndexedEntry(r.id, *embed(r))
        for r in records
        if r.split.value == "db" and r.subset is subset
    ]
    return build_index(entries), embed


def _scripted_vlm(bundle):
    return f"mock explanation for {bundle.query_record_id} using {len(bundle.exemplar_ids)} exemplars"


def _scripted_judge(prompt: str) -> str:
    # deterministic but content-sensitive: varies the verdict across prompts
    import hashlib

    digest = hashlib.sha256(prompt.encode("utf-8")).digest()
    if digest[0] % 2 == 0:
        return '[{"model": "model_1", "rank": 1}, {"model": "model_2", "rank": 2}]'
    return '[{"model": "model_2", "rank": 1}, {"model": "model_1", "rank": 2}]'


def test_end_to_end_mock_run(tmp_path):
    """Full shot/mode grid over a 30-record mock corpus in under 60 s with a
    grid-shaped report; an engineered fixture yields the '12 of 14' line."""
    start = time.perf_counter()
    records, explanations = make_corpus(db_per_subset=10, test_per_subset=5)
    assert len(records) == 30

    manifests, judgments = [], []
    for subset in (Subset.VIS, Subset.LANG):
        index, embed = _subset_index(records, subset)
        grid = run_grid(
            "mock-vlm", subset, seed=13, records=records, explanations=explanations,
            model_client=_scripted_vlm, out_dir=tmp_path / subset.value,
            index=index, query_embedder=embed, **FIXED_CLOCK,
        )
        assert len(grid) == 7  # zero-shot deduplicated across modes
        for manifest in grid.values():
            manifests.append(manifest)
            judgments.extend(
                evaluate_manifest(manifest, records, explanations, _scripted_judge, seed=29)
            )

    rep = report(manifests, judgments)
    expected_cells = {
        ("mock-vlm", subset, shots, mode)
        for subset in ("vis", "lang")
        for shots, mode in [(0, "none")] + [(s, m) for s in (1, 3, 5) for m in ("random", "retrieved")]
    }
    assert set(rep.cells) == expected_cells
    assert rep.missing == []
    rendered = format_report(rep)
    assert "0-shot" in rendered and "5-shot ret" in rendered
    assert set(rep.median_gain) == {"vis", "lang"}

    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"mock pipeline took {elapsed:.1f}s (budget 60s)"

    # engineered fixture: retrieval beats random in exactly 12 of 14 combos
    from ricl.runner import ManifestEntry, RunManifest

    def stub_manifest(model, subset, shots, mode, query_ids):
        config = ExperimentConfig(model, shots, mode, subset, seed=1)
        entries = [
            ManifestEntry(q, "h", (), reply="r", error=None, retries=0, latency_s=0.0)
            for q in query_ids
        ]
        return RunManifest(config, "t0", entries, "t1")

    def stub_judgments(run_id, query_ids, wins):
        return [
            PairwiseJudgment(f"{run_id}/{q}", q, "model_run", "human_llm", 0,
                             Winner.LEFT if i < wins else Winner.RIGHT, "llm", "")
            for i, q in enumerate(query_ids)
        ]

    query_ids = [f"q{i}" for i in range(50)]
    losing = {("model2", "vis"), ("model5", "lang")}
    stub_manifests, stub_all = [], []
    for model in [f"model{i}" for i in range(7)]:
        for subset in (Subset.VIS, Subset.LANG):
            loses = (model, subset.value) in losing
            for shots in (1, 3, 5):
                for mode in (SelectionMode.RANDOM, SelectionMode.RETRIEVED):
                    wins = 20 if mode is SelectionMode.RANDOM else (10 if loses else 30)
                    manifest = stub_manifest(model, subset, shots, mode, query_ids)
                    stub_manifests.append(manifest)
                    stub_all.extend(stub_judgments(manifest.run_id, query_ids, wins))
    engineered = report(stub_manifests, stub_all)
    assert engineered.summary == "12 of 14"
    assert "12 of 14" in format_report(engineered)


def test_crash_resume(tmp_path):
    """A grid killed mid-run and resumed produces manifests byte-identical
    to an uninterrupted grid (seeded mocks, fixed clock)."""
    records, explanations = make_corpus(db_per_subset=8, test_per_subset=4)
    index, embed = _subset_index(records, Subset.VIS)
    common = dict(
        records=records, explanations=explanations, index=index, query_embedder=embed,
        max_parallel=1, **FIXED_CLOCK,
    )

    run_grid("mock-vlm", Subset.VIS, seed=5, model_client=_scripted_vlm,
             out_dir=tmp_path / "uninterrupted", **common)

    class Kill(BaseException):
        pass

    calls = {"n": 0}

    def dying_vlm(bundle):
        calls["n"] += 1
        if calls["n"] > 10:  # dies inside the third manifest of the grid
            raise Kill()
        return _scripted_vlm(bundle)

    with pytest.raises(Kill):
        run_grid("mock-vlm", Subset.VIS, seed=5, model_client=dying_vlm,
                 out_dir=tmp_path / "resumed", resume=True, **common)
    run_grid("mock-vlm", Subset.VIS, seed=5, model_client=_scripted_vlm,
             out_dir=tmp_path / "resumed", resume=True, **common)

    uninterrupted = sorted((tmp_path / "uninterrupted").glob("*.jsonl"))
    resumed = sorted((tmp_path / "resumed").glob("*.jsonl"))
    assert [p.name for p in uninterrupted] == [p.name for p in resumed]
    for a, b in zip(uninterrupted, resumed):
        assert a.read_bytes() == b.read_bytes(), f"{a.name} differs after resume"


def test_index_persistence(tmp_path):
    """save -> load -> retrieve is bit-exact against pre-save retrieval for
    100 random queries."""
    gen = np.random.default_rng(31)
    index = random_dual_index(gen, 320, 48, 24)
    path = tmp_path / "index.bin"
    save_index(index, path)
    loaded = load_index(path)
    assert loaded.ids == index.ids
    assert np.array_equal(loaded.image_mat, index.image_mat)
    assert np.array_equal(loaded.text_mat, index.text_mat)
    for _ in range(100):
        query = random_query(
            gen, 48, 24, k=int(gen.integers(1, 21)), alpha=float(gen.choice(ALPHA_GRID))
        )
        before = retrieve(index, query)
        after = retrieve(loaded, query)
        assert before == after  # dataclass equality: ids, ranks, exact float scores
