"""Umbrella command line: curate / index / run / eval / tasks / serve."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import annotation, curation, evaluation, retrieval, runner
from .corpus import ExplanationSource, Split, Subset, load_corpus, save_corpus
from .embeddings import EmbeddingGateway, ProviderConfig
from .evaluation import HttpJudgeClient
from .retrieval import DEFAULT_ALPHA
from .runner import ExperimentConfig, HttpModelClient, PromptTemplate, SelectionMode


def _fail(message: str) -> "NoReturn":  # noqa: F821
    print(f"error: {message}", file=sys.stderr)
    raise SystemExit(2)


def _gateway(args) -> EmbeddingGateway:
    config = ProviderConfig.from_env(
        text_dim=args.text_dim,
        image_dim=args.image_dim,
        image_resolution=args.image_resolution,
    )
    if not config.text_endpoint or not config.image_endpoint:
        _fail("embedding endpoints not configured (RICL_TEXT_EMBED_URL / RICL_IMAGE_EMBED_URL)")
    return EmbeddingGateway(config, cache_dir=args.cache_dir)


# -- curate ---------------------------------------------------------------------


def cmd_curate_parse(args):
    raw = Path(args.input).read_text(encoding="utf-8")
    try:
        blocks = curation.parse_scenario_blocks(raw)
    except curation.BlockParseError as exc:
        _fail(str(exc))
    # keep the raw generation output verbatim next to the parsed blocks for audit
    Path(str(args.output) + ".source.txt").write_text(raw, encoding="utf-8")
    with open(args.output, "w", encoding="utf-8") as fh:
        for block in blocks:
            fh.write(
                json.dumps(
                    {
                        "caption": block.caption,
                        "rationale": block.rationale,
                        "situation": block.situation,
                        "source_line": block.source_line,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    print(f"parsed {len(blocks)} scenario blocks -> {args.output}")


def cmd_curate_dedupe(args):
    records, explanations = load_corpus(args.corpus)
    kept, report = curation.dedupe(records, args.threshold)
    kept_ids = {r.id for r in kept}
    save_corpus(kept, [e for e in explanations if e.scenario_id in kept_ids], args.output)
    print(
        f"kept {report.output_count}/{report.input_count} records "
        f"({report.removed_duplicates} near-duplicates removed)"
    )


def cmd_curate_filter(args):
    records, explanations = load_corpus(args.corpus)
    keywords = [
        line.strip().lower()
        for line in Path(args.keywords).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    kept, report = curation.keyword_diversity_filter(records, keywords, args.cap)
    kept_ids = {r.id for r in kept}
    save_corpus(kept, [e for e in explanations if e.scenario_id in kept_ids], args.output)
    print(
        f"kept {report.output_count}/{report.input_count} records "
        f"({report.removed_by_keyword} removed by keyword cap {args.cap})"
    )


def cmd_curate_pair(args):
    import requests

    records, _ = load_corpus(args.corpus)

    def search(query: str, count: int) -> list[str]:
        try:
            response = requests.post(
                args.search_url, json={"query": query, "count": count}, timeout=30
            )
            response.raise_for_status()
            return response.json()["urls"]
        except Exception as exc:
            raise curation.SearchError(str(exc)) from exc

    pairings = [curation.pair_images(record, search) for record in records]
    curation.save_pairings(pairings, args.output)
    pending = sum(1 for p in pairings if not p.candidates)
    print(f"paired {len(pairings)} records ({pending} pending) -> {args.output}")


def cmd_curate_refine(args):
    records, explanations = load_corpus(args.corpus)
    record = next((r for r in records if r.id == args.record_id), None)
    if record is None:
        _fail(f"no record with id {args.record_id!r}")
    client = HttpJudgeClient(args.llm_url, args.llm_model) if args.llm_url else None
    if client is None:
        _fail("--llm-url is required")
    explanation = curation.refine_explanation(
        record.id, record.caption, record.outcome, args.explanation, client
    )
    explanations.append(explanation)
    save_corpus(records, explanations, args.corpus)
    print(f"stored refined explanation for {record.id} ({explanation.token_count} tokens)")


# -- index ----------------------------------------------------------------------


def cmd_index_build(args):
    records, _ = load_corpus(args.corpus)
    db_records = [r for r in records if r.split is Split.DB]
    if args.subset:
        db_records = [r for r in db_records if r.subset is Subset(args.subset)]
    if not db_records:
        _fail("no retrieval-side (split=db) records to index")
    gateway = _gateway(args)
    stats = gateway.warm_cache(db_records)
    if stats.failures:
        _fail(f"{stats.failures} embeddings failed; fix the provider or the corpus first")
    entries = []
    for record in db_records:
        image_vec, text_vec = gateway.embed_record(record)
        entries.append(
            retrieval.IndexedEntry(scenario_id=record.id, image_vec=image_vec, text_vec=text_vec)
        )
    index = retrieval.build_index(entries)
    retrieval.save_index(index, args.output)
    print(f"indexed {index.size} records -> {args.output}")


def _load_query_vectors(path: str):
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    from .embeddings import l2_normalize

    return l2_normalize(payload["image_vec"]), l2_normalize(payload["text_vec"])


def cmd_index_query(args):
    index = retrieval.load_index(args.index)
    if args.query_json:
        image_vec, text_vec = _load_query_vectors(args.query_json)
    elif args.corpus and args.record_id:
        records, _ = load_corpus(args.corpus)
        record = next((r for r in records if r.id == args.record_id), None)
        if record is None:
            _fail(f"no record with id {args.record_id!r}")
        gateway = _gateway(args)
        image_vec, text_vec = gateway.embed_record(record)
    else:
        _fail("provide --query-json or (--corpus and --record-id)")
    hits = retrieval.retrieve(
        index, retrieval.RetrievalQuery(image_vec, text_vec, k=args.k, alpha=args.alpha)
    )
    for hit in hits:
        print(
            f"{hit.rank:>3}  {hit.scenario_id:<24}  fused={hit.fused_score:+.4f}  "
            f"image={hit.image_score:+.4f}  text={hit.text_score:+.4f}"
        )


def cmd_index_sweep(args):
    index = retrieval.load_index(args.index)
    queries = []
    for line in Path(args.queries_json).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        payload = json.loads(line)
        from .embeddings import l2_normalize

        queries.append(
            retrieval.RetrievalQuery(
                l2_normalize(payload["image_vec"]),
                l2_normalize(payload["text_vec"]),
                k=args.k,
            )
        )
    alphas = [float(a) for a in args.alphas.split(",")]

    def mean_fused(alpha: float, hits_per_query) -> float:
        import numpy as np

        return float(np.mean([h.fused_score for hits in hits_per_query for h in hits]))

    table = retrieval.alpha_sweep(index, queries, alphas, mean_fused)
    writer = csv.writer(sys.stdout)
    writer.writerow(["alpha", "mean_fused_score"])
    for alpha, value in table:
        writer.writerow([f"{alpha:g}", f"{value:.6f}"])


# -- run ------------------------------------------------------------------------


def cmd_run(args):
    records, explanations = load_corpus(args.corpus)
    config = ExperimentConfig(
        model_id=args.model,
        shots=args.shots,
        mode=SelectionMode(args.mode) if args.shots else SelectionMode.NONE,
        subset=Subset(args.subset),
        seed=args.seed,
        alpha=args.alpha,
    )
    index = None
    query_embedder = None
    if config.mode is SelectionMode.RETRIEVED:
        if not args.index:
            _fail("retrieved mode requires --index")
        index = retrieval.load_index(args.index)
        query_embedder = _gateway(args).embed_record
    if not args.model_url:
        _fail("--model-url is required")
    client = HttpModelClient(args.model_url, args.model)
    template = PromptTemplate.from_file(args.template) if args.template else None
    manifest = runner.run_experiment(
        config,
        records,
        explanations,
        client,
        args.output,
        index=index,
        query_embedder=query_embedder,
        template=template,
        resume=args.resume,
        check_images=args.check_images,
    )
    print(
        f"run {manifest.run_id}: {len(manifest.entries)} queries, "
        f"{manifest.failure_count} failures -> {args.output}"
    )


# -- eval -----------------------------------------------------------------------


def cmd_eval_judge(args):
    records, explanations = load_corpus(args.corpus)
    manifest = runner.load_manifest(args.manifest)
    client = HttpJudgeClient(args.judge_url, args.judge_model)
    judgments = evaluation.evaluate_manifest(manifest, records, explanations, client, args.seed)
    evaluation.save_judgments(judgments, args.output)
    stat = evaluation.win_rate(judgments, evaluation.MODEL_SOURCE)
    print(f"{manifest.run_id}: win rate {stat.rate:.3f} ({stat.wins}/{stat.valid}) -> {args.output}")


def cmd_eval_flask(args):
    records, _ = load_corpus(args.corpus)
    manifest = runner.load_manifest(args.manifest)
    by_id = {r.id: r for r in records}
    client = HttpJudgeClient(args.judge_url, args.judge_model)
    rubric = Path(args.rubric).read_text(encoding="utf-8") if args.rubric else None
    rows = []
    for entry in manifest.entries:
        if entry.reply is None:
            continue
        record = by_id[entry.query_record_id]
        scores = evaluation.flask_score(record.caption, record.outcome, entry.reply, client, rubric)
        rows.append({"query_record_id": entry.query_record_id, **scores.as_dict()})
    with open(args.output, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    means = evaluation.mean_skill_scores(
        [evaluation.SkillScores(r["lr"], r["lc"], r["le"], r["cs"]) for r in rows]
    )
    print("  ".join(f"{axis}={value:.2f}" for axis, value in means.items()))


def cmd_eval_specificity(args):
    _, explanations = load_corpus(args.corpus)
    selected = [e for e in explanations if e.source is ExplanationSource(args.source)]
    if not selected:
        _fail(f"no explanations with source {args.source!r}")
    client = HttpJudgeClient(args.judge_url, args.judge_model)
    scores = [evaluation.specificity_score(e.text, client) for e in selected]
    proportions, mean = evaluation.specificity_distribution(scores)
    for level in range(1, 6):
        print(f"level {level}: {proportions[level] * 100:.1f}%")
    print(f"mean: {mean:.2f}")


def cmd_eval_stats(args):
    records, explanations = load_corpus(args.corpus)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups = sorted({e.source.value for e in explanations})
    with open(out_dir / "lengths.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "scenario_id", "token_count"])
        for explanation in explanations:
            writer.writerow([explanation.source.value, explanation.scenario_id, explanation.token_count])
    with open(out_dir / "entropy.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "n", "entropy_mean", "entropy_std"])
        for group in groups:
            selected = [e for e in explanations if e.source.value == group]
            pairs: dict[str, list[str]] = {}
            for explanation in selected:
                pairs.setdefault(explanation.scenario_id, []).append(explanation.text)
            stats = evaluation.compute_corpus_stats(
                group, selected, pairs, iterations=args.iterations, seed=args.seed
            )
            for n, (mean, std) in sorted(stats.entropy.items()):
                writer.writerow([group, n, f"{mean:.6f}", f"{std:.6f}"])
            print(
                f"{group}: {stats.sample_count} explanations, "
                f"{stats.mean_tokens:.1f} +/- {stats.std_tokens:.1f} tokens"
            )
    print(f"wrote lengths.csv and entropy.csv -> {out_dir}")


def cmd_eval_report(args):
    manifests = [runner.load_manifest(path) for path in args.manifests]
    judgments = []
    for path in args.judgments:
        judgments.extend(evaluation.load_judgments(path))
    rep = evaluation.report(manifests, judgments)
    if args.output:
        Path(args.output).write_text(json.dumps(rep.to_dict(), indent=2), encoding="utf-8")
        print(f"wrote report -> {args.output}")
    print(evaluation.format_report(rep))


# -- tasks / serve ----------------------------------------------------------------


def cmd_tasks_build(args):
    records, _ = load_corpus(args.corpus)
    manifest_a = runner.load_manifest(args.manifest_a)
    manifest_b = runner.load_manifest(args.manifest_b)
    tasks = annotation.build_tasks(manifest_a, manifest_b, records, args.sample_size, args.seed)
    annotation.save_tasks(tasks, args.output)
    print(f"built {len(tasks)} tasks -> {args.output}")


def cmd_tasks_results(args):
    tasks = annotation.load_tasks(args.tasks_file)
    store = annotation.TaskStore(tasks, judgment_log=args.judgment_log)
    for pair in store.results_summary():
        if pair["status"] == "pending":
            print(f"{' vs '.join(pair['conditions'])}: pending")
        else:
            rates = ", ".join(f"{c}={r:.2%}" for c, r in pair["win_rates"].items())
            print(f"{' vs '.join(pair['conditions'])}: {pair['judgments']} judgments; {rates}")


def cmd_serve(args):
    import uvicorn

    from . import rng
    from .server import create_app, load_tokens

    tasks = annotation.load_tasks(args.tasks_file)
    if args.seed is not None:
        order = rng.generator(args.seed, "serve-order").permutation(len(tasks))
        tasks = [tasks[int(i)] for i in order]
    store = annotation.TaskStore(tasks, judgment_log=args.judgment_log)
    tokens = load_tokens(args.tokens) if args.tokens else {"dev-token": "annotator-1"}
    records = []
    if args.corpus:
        records, _ = load_corpus(args.corpus)
    app = create_app(store, tokens, records, static_dir=args.static_dir)
    uvicorn.run(app, host=args.host, port=args.port)


# -- parser wiring ----------------------------------------------------------------


def _add_gateway_args(parser):
    parser.add_argument("--text-dim", type=int, default=1024)
    parser.add_argument("--image-dim", type=int, default=512)
    parser.add_argument("--image-resolution", type=int, default=512)
    parser.add_argument("--cache-dir", default=".ricl-cache")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ricl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    curate = sub.add_parser("curate", help="dataset curation pipeline")
    curate_sub = curate.add_subparsers(dest="subcommand", required=True)
    p = curate_sub.add_parser("parse", help="parse raw generation output into scenario blocks")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_curate_parse)
    p = curate_sub.add_parser("dedupe", help="drop near-duplicate captions")
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--threshold", type=float, default=curation.DEFAULT_DEDUPE_THRESHOLD)
    p.set_defaults(func=cmd_curate_dedupe)
    p = curate_sub.add_parser("filter", help="cap keyword occurrences across captions")
    p.add_argument("--corpus", required=True)
    p.add_argument("--keywords", required=True, help="file with one lowercase keyword per line")
    p.add_argument("--cap", type=int, default=curation.DEFAULT_KEYWORD_CAP)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_curate_filter)
    p = curate_sub.add_parser("pair", help="fetch candidate images for human selection")
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--search-url", required=True)
    p.set_defaults(func=cmd_curate_pair)
    p = curate_sub.add_parser("refine", help="LLM-refine one human explanation")
    p.add_argument("--corpus", required=True)
    p.add_argument("--record-id", required=True)
    p.add_argument("--explanation", required=True)
    p.add_argument("--llm-url")
    p.add_argument("--llm-model", default="refiner")
    p.set_defaults(func=cmd_curate_refine)

    index = sub.add_parser("index", help="build and query the retrieval index")
    index_sub = index.add_subparsers(dest="subcommand", required=True)
    p = index_sub.add_parser("build", help="embed split=db records and build the index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--subset", choices=["vis", "lang"])
    _add_gateway_args(p)
    p.set_defaults(func=cmd_index_build)
    p = index_sub.add_parser("query", help="retrieve top-k entries for a query")
    p.add_argument("--index", required=True)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--query-json", help="JSON file with image_vec and text_vec")
    p.add_argument("--corpus")
    p.add_argument("--record-id")
    _add_gateway_args(p)
    p.set_defaults(func=cmd_index_query)
    p = index_sub.add_parser("sweep", help="retrieval table across fusion weights")
    p.add_argument("--index", required=True)
    p.add_argument("--queries-json", required=True, help="JSONL of query vector pairs")
    p.add_argument("--alphas", default="0.3,0.4,0.5,0.6,0.7")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_index_sweep)

    run = sub.add_parser("run", help="run a few-shot experiment against a model endpoint")
    run.add_argument("--model", required=True)
    run.add_argument("--corpus", required=True)
    run.add_argument("--subset", choices=["vis", "lang"], required=True)
    run.add_argument("--shots", type=int, choices=list(runner.VALID_SHOTS), required=True)
    run.add_argument("--mode", choices=["random", "retrieved"], default="random")
    run.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    run.add_argument("--seed", type=int, required=True)
    run.add_argument("--index")
    run.add_argument("--model-url")
    run.add_argument("--template")
    run.add_argument("--output", required=True)
    run.add_argument("--resume", action="store_true")
    run.add_argument("--check-images", action="store_true")
    _add_gateway_args(run)
    run.set_defaults(func=cmd_run)

    evl = sub.add_parser("eval", help="judge runs and compute statistics")
    eval_sub = evl.add_subparsers(dest="subcommand", required=True)
    p = eval_sub.add_parser("judge", help="pairwise-judge a manifest against the baseline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--judge-url", required=True)
    p.add_argument("--judge-model", default="judge")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_eval_judge)
    p = eval_sub.add_parser("flask", help="skill-score a manifest's replies")
    p.add_argument("--manifest", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--judge-url", required=True)
    p.add_argument("--judge-model", default="judge")
    p.add_argument("--rubric")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_eval_flask)
    p = eval_sub.add_parser("specificity", help="specificity distribution of explanations")
    p.add_argument("--corpus", required=True)
    p.add_argument("--source", choices=[s.value for s in ExplanationSource], required=True)
    p.add_argument("--judge-url", required=True)
    p.add_argument("--judge-model", default="judge")
    p.set_defaults(func=cmd_eval_specificity)
    p = eval_sub.add_parser("stats", help="token-length and entropy statistics")
    p.add_argument("--corpus", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval_stats)
    p = eval_sub.add_parser("report", help="win-rate grid with deltas and summaries")
    p.add_argument("--manifests", nargs="+", required=True)
    p.add_argument("--judgments", nargs="+", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_eval_report)

    tasks = sub.add_parser("tasks", help="build and tally annotation tasks")
    tasks_sub = tasks.add_subparsers(dest="subcommand", required=True)
    p = tasks_sub.add_parser("build", help="sample two manifests into anonymized tasks")
    p.add_argument("--manifest-a", required=True)
    p.add_argument("--manifest-b", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--sample-size", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_tasks_build)
    p = tasks_sub.add_parser("results", help="win-rate table from a judgment log")
    p.add_argument("--tasks-file", required=True)
    p.add_argument("--judgment-log", required=True)
    p.set_defaults(func=cmd_tasks_results)

    serve = sub.add_parser("serve", help="run the annotation HTTP service")
    serve.add_argument("--port", type=int, default=8080)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--tasks-file", required=True)
    serve.add_argument("--judgment-log", default="judgments.log.jsonl")
    serve.add_argument("--tokens", help="JSON file mapping bearer tokens to annotator ids")
    serve.add_argument("--corpus")
    serve.add_argument("--static-dir", help="built UI bundle directory")
    serve.add_argument("--seed", type=int, default=None,
                       help="shuffle the task serving order under this seed")
    serve.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
