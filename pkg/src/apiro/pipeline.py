"""Pipeline orchestration: configuration, stage functions, model factories.

Every stage reads and writes declared files only, and each produced artifact
records the seed it was built with, so a fixed seed reproduces the whole
chain bit for bit at parallelism 1.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import augment as aug
from . import baseline as bl
from . import cnn as cnn_mod
from .corpus import (
    Corpus,
    build_catalog,
    cluster_apis,
    load_manifest,
    load_processed_corpus,
    merge_corpora,
    preprocess_corpus,
    read_corpus_file,
    save_processed_corpus,
    write_corpus_file,
)
from .embedding import EmbeddingConfig, load_embedding, save_embedding, train_embedding
from .textprep import (
    ImmutableCorpus,
    Lexicons,
    default_lexicons,
    load_immutable_corpus,
)

CONFIG_ENV_VAR = "APIRO_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    workdir: Path
    manifest: Path
    corpus_file: Path
    processed_file: Path
    augmented_file: Path
    sample_file: Path
    labels_file: Path
    selection_file: Path
    embedding_file: Path
    recommender_file: Path
    baseline_dir: Path
    report_file: Path
    immutable_file: Path | None = None
    external_files: list[Path] = field(default_factory=list)
    techniques: list[str] = field(default_factory=list)
    beta: int = 5
    use_selection: bool = False
    seed: int = 0
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    cnn: cnn_mod.CnnConfig = field(default_factory=cnn_mod.CnnConfig)
    static_dir: Path | None = None
    host: str = "127.0.0.1"
    port: int = 8080

    def lexicons(self) -> Lexicons:
        return default_lexicons()

    def immutable(self) -> ImmutableCorpus:
        return load_immutable_corpus(self.immutable_file)

    def technique_list(self) -> list[aug.AugTechnique]:
        registry = {t.technique_id: t for t in aug.default_techniques()}
        if not self.techniques:
            return list(registry.values())
        chosen = []
        for tid in self.techniques:
            if tid not in registry:
                raise ConfigError(f"unknown in-process technique {tid!r}")
            chosen.append(registry[tid])
        return chosen


def desk_manifest_path() -> Path:
    return Path(str(resources.files("apiro").joinpath("data", "desk", "manifest.json")))


def desk_embedding_config() -> EmbeddingConfig:
    """Desk-scale settings: d=32 keeps runtimes in seconds; d=300 is production."""
    return EmbeddingConfig(dimension=32, bucket_count=50_000, epochs=5)


def desk_cnn_config() -> cnn_mod.CnnConfig:
    return cnn_mod.CnnConfig(patience=20, max_epochs=300, batch_size=64)


def default_config(workdir: Path, manifest: Path | None = None) -> PipelineConfig:
    workdir = Path(workdir)
    return PipelineConfig(
        workdir=workdir,
        manifest=manifest or desk_manifest_path(),
        corpus_file=workdir / "corpus.jsonl",
        processed_file=workdir / "processed.json",
        augmented_file=workdir / "augmented.jsonl",
        sample_file=workdir / "selection_sample.jsonl",
        labels_file=workdir / "labels.jsonl",
        selection_file=workdir / "selection_report.tsv",
        embedding_file=workdir / "embedding.bin",
        recommender_file=workdir / "recommender.bin",
        baseline_dir=workdir / "baseline",
        report_file=workdir / "metrics.txt",
    )


def _get(section, key, fallback=None):
    if section is None:
        return fallback
    return section.get(key, fallback)


def load_config(path: Path) -> PipelineConfig:
    """Parse a key=value config file with section headers."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc

    base = path.parent

    def resolve(value: str | None, fallback: Path) -> Path:
        if value is None:
            return fallback
        p = Path(value)
        return p if p.is_absolute() else base / p

    paths = parser["paths"] if parser.has_section("paths") else None
    workdir = resolve(_get(paths, "workdir"), base)
    cfg = default_config(workdir)
    cfg.manifest = resolve(_get(paths, "manifest"), cfg.manifest)
    cfg.corpus_file = resolve(_get(paths, "corpus"), cfg.corpus_file)
    cfg.processed_file = resolve(_get(paths, "processed"), cfg.processed_file)
    cfg.augmented_file = resolve(_get(paths, "augmented"), cfg.augmented_file)
    cfg.sample_file = resolve(_get(paths, "sample"), cfg.sample_file)
    cfg.labels_file = resolve(_get(paths, "labels"), cfg.labels_file)
    cfg.selection_file = resolve(_get(paths, "selection_report"), cfg.selection_file)
    cfg.embedding_file = resolve(_get(paths, "embedding_model"), cfg.embedding_file)
    cfg.recommender_file = resolve(_get(paths, "recommender_model"), cfg.recommender_file)
    cfg.baseline_dir = resolve(_get(paths, "baseline_dir"), cfg.baseline_dir)
    cfg.report_file = resolve(_get(paths, "report"), cfg.report_file)
    if _get(paths, "immutable"):
        cfg.immutable_file = resolve(_get(paths, "immutable"), None)
    if _get(paths, "static_dir"):
        cfg.static_dir = resolve(_get(paths, "static_dir"), None)
    if _get(paths, "external_augmentations"):
        cfg.external_files = [
            resolve(p.strip(), None)
            for p in paths["external_augmentations"].split(",")
            if p.strip()
        ]

    if parser.has_section("run"):
        cfg.seed = parser["run"].getint("seed", cfg.seed)

    if parser.has_section("augment"):
        section = parser["augment"]
        if section.get("techniques"):
            cfg.techniques = [t.strip() for t in section["techniques"].split(",") if t.strip()]
        cfg.beta = section.getint("beta", cfg.beta)
        cfg.use_selection = section.getboolean("use_selection", cfg.use_selection)

    if parser.has_section("embedding"):
        section = parser["embedding"]
        e = cfg.embedding
        e.dimension = section.getint("dimension", e.dimension)
        e.window = section.getint("window", e.window)
        e.min_count = section.getint("min_count", e.min_count)
        e.epochs = section.getint("epochs", e.epochs)
        e.learning_rate = section.getfloat("learning_rate", e.learning_rate)
        e.bucket_count = section.getint("bucket_count", e.bucket_count)
        e.objective = section.get("objective", e.objective)
        e.workers = section.getint("workers", e.workers)

    if parser.has_section("cnn"):
        section = parser["cnn"]
        c = cfg.cnn
        if section.get("window_sizes"):
            c.window_sizes = tuple(
                int(x) for x in section["window_sizes"].split(",") if x.strip()
            )
        c.filters_per_size = section.getint("filters", c.filters_per_size)
        c.hidden_units = section.getint("hidden_units", c.hidden_units)
        c.dropout_rate = section.getfloat("dropout", c.dropout_rate)
        c.l2_coefficient = section.getfloat("l2", c.l2_coefficient)
        c.batch_size = section.getint("batch_size", c.batch_size)
        c.patience = section.getint("patience", c.patience)
        c.max_epochs = section.getint("max_epochs", c.max_epochs)
        c.max_sequence_length = section.getint("max_sequence_length", c.max_sequence_length)
        c.adam_lr = section.getfloat("learning_rate", c.adam_lr)
        c.embedding_trainable = section.getboolean("embedding_trainable", c.embedding_trainable)

    if parser.has_section("service"):
        section = parser["service"]
        cfg.host = section.get("host", cfg.host)
        cfg.port = section.getint("port", cfg.port)
    return cfg


def config_from_env_or(path: str | None) -> PipelineConfig:
    """--config beats APIRO_CONFIG beats error."""
    chosen = path or os.environ.get(CONFIG_ENV_VAR)
    if not chosen:
        raise ConfigError(
            f"no config given: pass --config or set {CONFIG_ENV_VAR}"
        )
    return load_config(Path(chosen))


# --- seeds --------------------------------------------------------------------


def derive_seed(seed: int, *tags: str) -> int:
    digest = hashlib.sha256((f"{seed}:" + ":".join(tags)).encode()).digest()
    return int.from_bytes(digest[:4], "little")


# --- stages -------------------------------------------------------------------


def stage_ingest(cfg: PipelineConfig) -> Path:
    docs = load_manifest(cfg.manifest)
    cfg.workdir.mkdir(parents=True, exist_ok=True)
    write_corpus_file(docs, cfg.corpus_file)
    return cfg.corpus_file


def stage_preprocess(cfg: PipelineConfig) -> Corpus:
    docs = read_corpus_file(cfg.corpus_file)
    corpus = merge_corpora(docs)
    corpus = preprocess_corpus(corpus, cfg.lexicons())
    corpus = cluster_apis(corpus)
    save_processed_corpus(corpus, cfg.processed_file, seed=cfg.seed)
    return corpus


def train_neighbor_model(corpus: Corpus, cfg: PipelineConfig):
    """Auxiliary subword embedding over the originals for neighbor substitution."""
    sentences = [corpus.cluster_by_id(cid).canonical_tokens for cid in corpus.class_index]
    aux_cfg = EmbeddingConfig(
        dimension=cfg.embedding.dimension,
        window=cfg.embedding.window,
        epochs=cfg.embedding.epochs,
        bucket_count=cfg.embedding.bucket_count,
        objective=cfg.embedding.objective,
    )
    return train_embedding(sentences, aux_cfg, seed=derive_seed(cfg.seed, "neighbor"))


def stage_augment(cfg: PipelineConfig) -> list[aug.AugmentedExample]:
    corpus = load_processed_corpus(cfg.processed_file)
    lex = cfg.lexicons()
    techniques = cfg.technique_list()
    neighbor = None
    if any(t.approach == "embedding-neighbor" for t in techniques):
        neighbor = train_neighbor_model(corpus, cfg)
    examples = aug.augment_corpus(
        corpus, techniques, cfg.immutable(), cfg.seed, lex, neighbor_model=neighbor
    )
    registered = {t.technique_id for t in techniques}
    for external in cfg.external_files:
        ext_ids = _external_ids(external)
        admitted, rejected = aug.ingest_external_augmentations(
            external, corpus, lex, registered | ext_ids
        )
        examples.extend(admitted)
        for line, reason in rejected:
            import logging

            logging.getLogger(__name__).warning(
                "%s:%d rejected: %s", external, line, reason
            )
    aug.save_examples(examples, cfg.augmented_file, seed=cfg.seed)
    return examples


def _external_ids(path: Path) -> set[str]:
    import json

    ids = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                try:
                    ids.add(json.loads(line)["technique"])
                except (json.JSONDecodeError, KeyError):
                    continue
    return ids


def stage_sample_selection(cfg: PipelineConfig) -> list[aug.AugmentedExample]:
    corpus = load_processed_corpus(cfg.processed_file)
    examples = aug.load_examples(cfg.augmented_file)
    sample = aug.build_selection_sample(
        examples, corpus, cfg.beta, derive_seed(cfg.seed, "selection-sample")
    )
    aug.save_examples(sample, cfg.sample_file, seed=cfg.seed)
    return sample


def stage_score_selection(cfg: PipelineConfig) -> aug.SelectionReport:
    corpus = load_processed_corpus(cfg.processed_file)
    sample = aug.load_examples(cfg.sample_file)
    labels = aug.load_labels(cfg.labels_file)
    aug.apply_labels(sample, labels)
    report = aug.score_and_select(sample, corpus)
    aug.save_selection_report(report, cfg.selection_file)
    return report


def _selected_examples(cfg: PipelineConfig) -> list[aug.AugmentedExample]:
    examples = aug.load_examples(cfg.augmented_file)
    if cfg.use_selection and cfg.selection_file.exists():
        report = aug.load_selection_report(cfg.selection_file)
        examples = aug.filter_corpus_by_selection(examples, report)
    return examples


def training_sentences(corpus: Corpus, examples: list[aug.AugmentedExample]) -> list[list[str]]:
    """Originals (one per class) plus augmented variants."""
    sentences = [corpus.cluster_by_id(cid).canonical_tokens for cid in corpus.class_index]
    sentences.extend(e.tokens for e in examples)
    return sentences


def training_pairs(
    corpus: Corpus, examples: list[aug.AugmentedExample]
) -> list[tuple[list[str], int]]:
    pairs = [
        (corpus.cluster_by_id(cid).canonical_tokens, class_id)
        for class_id, cid in enumerate(corpus.class_index)
    ]
    for example in examples:
        pairs.append((example.tokens, corpus.class_of_record(example.base_record_id)))
    return pairs


def stratified_val_split(
    pairs: list[tuple[list[str], int]],
    fraction: float = 0.1,
    seed: int = 0,
) -> tuple[list[tuple[list[str], int]], list[tuple[list[str], int]]]:
    """Hold out ~fraction per class for early stopping, where counts permit."""
    rng = np.random.default_rng((seed, 0x5EED))
    by_class: dict[int, list[int]] = {}
    for i, (_, label) in enumerate(pairs):
        by_class.setdefault(label, []).append(i)
    val_idx = set()
    for label in sorted(by_class):
        members = by_class[label]
        if len(members) < 2:
            continue
        n_val = max(1, int(round(len(members) * fraction)))
        n_val = min(n_val, len(members) - 1)
        chosen = rng.choice(len(members), size=n_val, replace=False)
        val_idx.update(members[int(c)] for c in chosen)
    if not val_idx:  # tiny corpora: fall back to a single global holdout
        val_idx = {len(pairs) - 1}
    train = [p for i, p in enumerate(pairs) if i not in val_idx]
    val = [p for i, p in enumerate(pairs) if i in val_idx]
    return train, val


def stage_train_embedding(cfg: PipelineConfig):
    corpus = load_processed_corpus(cfg.processed_file)
    examples = _selected_examples(cfg)
    sentences = training_sentences(corpus, examples)
    model = train_embedding(sentences, cfg.embedding, seed=derive_seed(cfg.seed, "embedding"))
    save_embedding(model, cfg.embedding_file)
    return model


def stage_train(cfg: PipelineConfig):
    corpus = load_processed_corpus(cfg.processed_file)
    examples = _selected_examples(cfg)
    embedding = load_embedding(cfg.embedding_file)
    pairs = training_pairs(corpus, examples)
    train, val = stratified_val_split(pairs, seed=cfg.seed)
    model = cnn_mod.train_recommender(
        train,
        val,
        embedding,
        cfg.cnn,
        seed=derive_seed(cfg.seed, "cnn"),
        class_index=corpus.class_index,
        catalog=build_catalog(corpus),
    )
    cnn_mod.save_recommender(model, cfg.recommender_file)
    index = bl.build_baseline_index(
        corpus, seed=derive_seed(cfg.seed, "baseline"), cfg=_baseline_cfg(cfg)
    )
    bl.save_baseline_index(index, cfg.baseline_dir)
    return model


def _baseline_cfg(cfg: PipelineConfig) -> EmbeddingConfig:
    return EmbeddingConfig(
        dimension=cfg.embedding.dimension,
        window=cfg.embedding.window,
        epochs=cfg.embedding.epochs,
        use_subwords=False,
    )


def run_full_pipeline(cfg: PipelineConfig):
    """ingest -> preprocess -> augment -> embed -> train, all seeded."""
    stage_ingest(cfg)
    stage_preprocess(cfg)
    stage_augment(cfg)
    stage_train_embedding(cfg)
    return stage_train(cfg)


# --- model factories for the evaluation protocols ------------------------------


def apiro_rank_factory(
    corpus: Corpus,
    embedding_cfg: EmbeddingConfig,
    cnn_cfg: cnn_mod.CnnConfig,
):
    """Factory: training pairs -> rank function, retraining embedding + CNN.

    The embedding is retrained on exactly the supplied pairs so held-out text
    stays unseen end to end.
    """
    catalog = build_catalog(corpus)

    def factory(train_pairs: list[tuple[list[str], int]], seed: int):
        sentences = [tokens for tokens, _ in train_pairs]
        embedding = train_embedding(sentences, _copy_embed_cfg(embedding_cfg), seed=seed)
        train, val = stratified_val_split(train_pairs, seed=seed)
        model = cnn_mod.train_recommender(
            train,
            val,
            embedding,
            cnn_cfg,
            seed=seed,
            class_index=corpus.class_index,
            catalog=catalog,
        )

        def rank(tokens: list[str], k: int) -> list[int]:
            return [r.class_id for r in cnn_mod.predict_topk(model, tokens, k)]

        return rank

    return factory


def _copy_embed_cfg(cfg: EmbeddingConfig) -> EmbeddingConfig:
    return EmbeddingConfig(**{k: getattr(cfg, k) for k in cfg.__dataclass_fields__})


def baseline_rank_factory(corpus: Corpus, embedding_cfg: EmbeddingConfig):
    """Baseline trains on the originals only, per its contract."""

    def factory(seed: int):
        cfg = _copy_embed_cfg(embedding_cfg)
        cfg.use_subwords = False
        index = bl.build_baseline_index(corpus, seed=seed, cfg=cfg)

        def rank(tokens: list[str], k: int) -> list[int]:
            return [r.class_id for r in bl.rank_by_similarity(index, tokens, k)]

        return rank

    return factory


def _unclustered(corpus: Corpus) -> Corpus:
    """The same records with clustering undone: every record its own class."""
    from copy import deepcopy

    from .corpus import ApiCluster

    records = deepcopy(corpus.records)
    clusters = []
    for record in records:
        cluster_id = f"cl_{record.record_id}"
        record.cluster_id = cluster_id
        clusters.append(
            ApiCluster(
                cluster_id=cluster_id,
                tool_id=record.tool_id,
                member_record_ids=[record.record_id],
                canonical_tokens=list(record.description_tokens),
            )
        )
    clusters.sort(key=lambda c: c.cluster_id)
    return Corpus(
        records=records,
        clusters=clusters,
        class_index=[c.cluster_id for c in clusters],
    )


def build_ablation_runner(
    corpus: Corpus,
    immutable: ImmutableCorpus,
    lex: Lexicons,
    embedding_cfg: EmbeddingConfig,
    cnn_cfg: cnn_mod.CnnConfig,
    techniques: "list[aug.AugTechnique] | None" = None,
    seed: int = 0,
    test_fraction: float = 0.2,
    ks: tuple[int, ...] = (1, 2, 3),
):
    """build_and_eval callable for evalkit.run_ablation.

    Factors: None (full system), "clustering", "immutable-words",
    "subword-embedding" (word-level vectors instead), or "dat:<technique_id>".
    Every variant trains from scratch and is scored on the same held-out
    augmented queries, keyed by record so class-count changes stay comparable.
    """
    from . import evalkit as ek

    techniques = techniques or aug.default_techniques()

    def make_neighbor(active_corpus: Corpus):
        sentences = [
            active_corpus.cluster_by_id(c).canonical_tokens
            for c in active_corpus.class_index
        ]
        return train_embedding(
            sentences, _copy_embed_cfg(embedding_cfg), seed=derive_seed(seed, "nbr")
        )

    need_neighbor = any(t.approach == "embedding-neighbor" for t in techniques)
    full_neighbor = make_neighbor(corpus) if need_neighbor else None
    full_examples = aug.augment_corpus(
        corpus, techniques, immutable, seed, lex, neighbor_model=full_neighbor
    )

    # the held-out query slots are fixed once, so every variant answers the
    # exact same questions (the full system's augmented text)
    rng = np.random.default_rng((seed, 0xAB1A))
    order = rng.permutation(len(full_examples))
    n_test = max(1, int(round(len(full_examples) * test_fraction)))
    test_slots = {full_examples[i].example_id for i in order[:n_test]}
    test_rows = [e for e in full_examples if e.example_id in test_slots]

    def build_and_eval(drop: "str | None") -> dict:
        active_corpus = _unclustered(corpus) if drop == "clustering" else corpus
        if drop == "immutable-words":
            variant_examples = aug.augment_corpus(
                corpus, techniques, ImmutableCorpus(), seed, lex,
                neighbor_model=full_neighbor,
            )
        else:
            variant_examples = full_examples
        dropped = drop.split(":", 1)[1] if drop and drop.startswith("dat:") else None
        train_rows = [
            e
            for e in variant_examples
            if e.example_id not in test_slots and e.technique_id != dropped
        ]

        embed_cfg = _copy_embed_cfg(embedding_cfg)
        if drop == "subword-embedding":
            embed_cfg.use_subwords = False
        pairs = training_pairs(active_corpus, train_rows)
        sentences = [tokens for tokens, _ in pairs]
        embedding = train_embedding(sentences, embed_cfg, seed=derive_seed(seed, "emb"))
        train, val = stratified_val_split(pairs, seed=seed)
        model = cnn_mod.train_recommender(
            train,
            val,
            embedding,
            cnn_cfg,
            seed=derive_seed(seed, "cnn"),
            class_index=active_corpus.class_index,
            catalog=build_catalog(active_corpus),
        )
        queries = [
            (row.tokens, active_corpus.class_of_record(row.base_record_id))
            for row in test_rows
        ]

        def rank(tokens: list[str], k: int) -> list[int]:
            return [r.class_id for r in cnn_mod.predict_topk(model, tokens, k)]

        result = ek.evaluate_ranker(rank, queries, ks)
        result.pop("ranks", None)
        return result

    return build_and_eval
