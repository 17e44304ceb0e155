"""Command-line surface for the pipeline stages and the query service."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import evalkit, pipeline
from .baseline import load_baseline_index, rank_by_similarity
from .cnn import load_recommender, predict_topk
from .embedding import dump_vectors_text, load_embedding
from .pipeline import ConfigError, PipelineConfig, config_from_env_or
from .textprep import preprocess_query

COMMANDS = (
    "ingest",
    "preprocess",
    "augment",
    "sample-selection",
    "score-selection",
    "train-embedding",
    "train",
    "eval",
    "query",
    "serve",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="apiro",
        description="Security-tool API recommendation pipeline and query service.",
    )
    parser.add_argument("--config", help="pipeline config file (or set APIRO_CONFIG)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("ingest", "preprocess", "augment", "sample-selection",
                 "score-selection", "train-embedding", "train"):
        sub.add_parser(name)

    eval_p = sub.add_parser("eval")
    eval_p.add_argument("--folds", type=int, default=1)
    eval_p.add_argument("--repeats", type=int, default=1)
    eval_p.add_argument(
        "--protocol", choices=("cross-validation", "categories"), default="cross-validation"
    )

    query_p = sub.add_parser("query")
    query_p.add_argument("--text", required=True)
    query_p.add_argument("--k", type=int, default=3)
    query_p.add_argument(
        "--ranker", choices=("cnn", "baseline"), default="cnn",
        help="rank with the trained model or the similarity baseline",
    )

    serve_p = sub.add_parser("serve")
    serve_p.add_argument("--host")
    serve_p.add_argument("--port", type=int)
    return parser


def _print_results(results) -> None:
    print(f"{'rank':<6}{'score':<10}{'tool':<14}signature")
    for r in results:
        first, *rest = r.signatures
        print(f"{r.rank:<6}{r.score:<10.4f}{r.tool:<14}{first}")
        for sig in rest:
            print(f"{'':<30}{sig}")
        print(f"{'':<6}{r.description}")
        if r.parameters:
            print(f"{'':<6}parameters: {r.parameters}")
        if r.returns:
            print(f"{'':<6}returns: {r.returns}")


def _cmd_eval(cfg: PipelineConfig, args) -> None:
    from .corpus import load_processed_corpus

    corpus = load_processed_corpus(cfg.processed_file)
    examples = pipeline._selected_examples(cfg)
    factory = pipeline.apiro_rank_factory(corpus, cfg.embedding, cfg.cnn)
    if args.protocol == "categories":
        groups: dict[str, list[tuple[list[str], int]]] = {}
        for example in examples:
            gold = corpus.class_of_record(example.base_record_id)
            groups.setdefault(example.technique_id, []).append((example.tokens, gold))
        mapping = evalkit.load_category_map()
        groups = {t: rows for t, rows in groups.items() if t in mapping}
        originals = [
            (corpus.cluster_by_id(cid).canonical_tokens, class_id)
            for class_id, cid in enumerate(corpus.class_index)
        ]
        report = evalkit.run_category_eval(
            groups, originals, factory, category_map=mapping, seed=cfg.seed
        )
    else:
        originals = [
            (corpus.cluster_by_id(cid).canonical_tokens, class_id)
            for class_id, cid in enumerate(corpus.class_index)
        ]
        augmented = [
            (e.tokens, corpus.class_of_record(e.base_record_id)) for e in examples
        ]
        baseline_factory = pipeline.baseline_rank_factory(corpus, cfg.embedding)
        report = evalkit.run_cross_validation(
            originals,
            augmented,
            factory,
            baseline_factory,
            folds=args.folds,
            repeats=args.repeats,
            seed=cfg.seed,
        )
    evalkit.write_report(report, cfg.report_file)
    print(f"report written to {cfg.report_file}")


def _cmd_query(cfg: PipelineConfig, args) -> None:
    lex = cfg.lexicons()
    tokens = preprocess_query(args.text, lex)
    if not tokens:
        raise ValueError("unanswerable query: no tokens left after preprocessing")
    if args.ranker == "baseline":
        index = load_baseline_index(cfg.baseline_dir)
        results = rank_by_similarity(index, tokens, args.k)
    else:
        embedding = load_embedding(cfg.embedding_file)
        model = load_recommender(cfg.recommender_file, embedding)
        results = predict_topk(model, tokens, min(args.k, model.n_classes))
    _print_results(results)


def _cmd_serve(cfg: PipelineConfig, args) -> None:
    import signal

    import uvicorn

    from .service import create_app

    app = create_app(cfg.recommender_file, cfg.embedding_file, cfg.static_dir)

    def reload_handler(signum, frame):
        from .service import load_bundle

        app.state.holder["bundle"] = load_bundle(cfg.recommender_file, cfg.embedding_file)

    try:
        signal.signal(signal.SIGHUP, reload_handler)
    except (ValueError, AttributeError):
        pass  # not the main thread, or platform without SIGHUP
    uvicorn.run(app, host=args.host or cfg.host, port=args.port or cfg.port)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        cfg = config_from_env_or(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    stages = {
        "ingest": pipeline.stage_ingest,
        "preprocess": pipeline.stage_preprocess,
        "augment": pipeline.stage_augment,
        "sample-selection": pipeline.stage_sample_selection,
        "score-selection": pipeline.stage_score_selection,
        "train-embedding": pipeline.stage_train_embedding,
        "train": pipeline.stage_train,
    }
    try:
        if args.command in stages:
            stages[args.command](cfg)
            if args.command == "train-embedding":
                dump_vectors_text(
                    load_embedding(cfg.embedding_file),
                    Path(str(cfg.embedding_file) + ".txt"),
                )
            print(f"{args.command}: ok")
            return 0
        if args.command == "eval":
            _cmd_eval(cfg, args)
            return 0
        if args.command == "query":
            _cmd_query(cfg, args)
            return 0
        if args.command == "serve":
            _cmd_serve(cfg, args)
            return 0
        print(f"unknown command {args.command}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # module errors -> exit 1 with a diagnostic
        logging.getLogger(__name__).debug("command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
