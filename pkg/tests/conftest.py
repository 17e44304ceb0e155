"""Shared fixtures: the desk corpus pipeline, trained once per session."""

from __future__ import annotations

import pytest

from apiro import augment as aug
from apiro import cnn as cnn_mod
from apiro import pipeline as pl
from apiro.corpus import (
    build_catalog,
    cluster_apis,
    load_manifest,
    merge_corpora,
    preprocess_corpus,
)
from apiro.embedding import train_embedding
from apiro.textprep import default_lexicons, load_immutable_corpus

DESK_SEED = 42


@pytest.fixture(scope="session")
def lexicons():
    return default_lexicons()


@pytest.fixture(scope="session")
def immutable():
    return load_immutable_corpus()


@pytest.fixture(scope="session")
def desk_corpus(lexicons):
    docs = load_manifest(pl.desk_manifest_path())
    corpus = merge_corpora(docs)
    corpus = preprocess_corpus(corpus, lexicons)
    return cluster_apis(corpus)


@pytest.fixture(scope="session")
def desk_config(tmp_path_factory):
    cfg = pl.default_config(tmp_path_factory.mktemp("desk"))
    cfg.embedding = pl.desk_embedding_config()
    cfg.cnn = pl.desk_cnn_config()
    cfg.seed = DESK_SEED
    return cfg


@pytest.fixture(scope="session")
def desk_examples(desk_corpus, lexicons, immutable, desk_config):
    neighbor = pl.train_neighbor_model(desk_corpus, desk_config)
    return aug.augment_corpus(
        desk_corpus,
        aug.default_techniques(),
        immutable,
        DESK_SEED,
        lexicons,
        neighbor_model=neighbor,
    )


@pytest.fixture(scope="session")
def desk_embedding(desk_corpus, desk_examples):
    sentences = pl.training_sentences(desk_corpus, desk_examples)
    return train_embedding(sentences, pl.desk_embedding_config(), seed=DESK_SEED)


@pytest.fixture(scope="session")
def desk_model(desk_corpus, desk_examples, desk_embedding):
    pairs = pl.training_pairs(desk_corpus, desk_examples)
    train, val = pl.stratified_val_split(pairs, seed=DESK_SEED)
    return cnn_mod.train_recommender(
        train,
        val,
        desk_embedding,
        pl.desk_cnn_config(),
        seed=DESK_SEED,
        class_index=desk_corpus.class_index,
        catalog=build_catalog(desk_corpus),
    )


@pytest.fixture(scope="session")
def desk_artifacts(desk_model, desk_embedding, tmp_path_factory):
    """Model files on disk for the service and CLI surfaces."""
    from apiro.cnn import save_recommender
    from apiro.embedding import save_embedding

    directory = tmp_path_factory.mktemp("artifacts")
    save_embedding(desk_embedding, directory / "embedding.bin")
    save_recommender(desk_model, directory / "recommender.bin")
    return directory
