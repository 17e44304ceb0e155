"""IDF-weighted similarity baseline: formula, oracle, and contracts."""

import math

import numpy as np
import pytest

from apiro.baseline import (
    BaselineError,
    build_baseline_index,
    load_baseline_index,
    rank_by_similarity,
    save_baseline_index,
    similarity,
)
from apiro.corpus import RawEntry, SourceDocument, cluster_apis, merge_corpora, preprocess_corpus
from apiro.embedding import EmbeddingConfig, cosine
from apiro.textprep import default_lexicons

LEX = default_lexicons()


def corpus_from(descriptions):
    entries = [RawEntry(signature=f"s{i}", description=d) for i, d in enumerate(descriptions)]
    doc = SourceDocument(tool_id="t", doc_id="d", format_kind="tabular-commands", records=entries)
    return cluster_apis(preprocess_corpus(merge_corpora([doc]), LEX))


def small_index(descriptions, seed=0):
    cfg = EmbeddingConfig(dimension=16, epochs=4, window=3)
    return build_baseline_index(corpus_from(descriptions), seed=seed, cfg=cfg)


FIVE = [
    "scan the network packets for intrusions",
    "delete a malicious file from the endpoint",
    "add a new false positive rule",
    "download the malware sample for analysis",
    "list the available payload modules",
]


class TestIdf:
    def test_word_in_every_description_scores_zero(self):
        index = small_index(["alpha unique1", "alpha unique2", "alpha unique3"])
        assert index.idf["alpha"] == pytest.approx(0.0)

    def test_word_in_one_description(self):
        index = small_index(["alpha unique1", "alpha unique2", "alpha unique3"])
        assert index.idf["unique1"] == pytest.approx(math.log(3))

    def test_unseen_query_word_weight(self):
        index = small_index(FIVE)
        assert index.default_idf() == pytest.approx(math.log(5))

    def test_every_description_word_has_idf(self):
        index = small_index(FIVE)
        for tokens in index.descriptions:
            for token in tokens:
                assert token in index.idf and index.idf[token] >= 0.0


class TestSimilarity:
    def test_exact_description_is_rank_one_with_sim_one(self):
        index = small_index(FIVE)
        for class_id, tokens in enumerate(index.descriptions):
            results = rank_by_similarity(index, list(tokens), 1)
            assert results[0].class_id == class_id
            assert results[0].score == pytest.approx(1.0)

    def test_symmetry(self):
        index = small_index(FIVE)
        # sim(Q, D) with the roles of the token lists exchanged
        for a in range(3):
            q = index.descriptions[a]
            for b in range(len(index.descriptions)):
                ab = similarity(index, list(q), b)
                # swap: query = description b, "document" = description a
                ba = similarity(index, list(index.descriptions[b]), a)
                assert ab == pytest.approx(ba, abs=1e-9)

    def test_range(self):
        index = small_index(FIVE)
        queries = [["scan", "packet"], ["delete", "file", "endpoint"], ["zzz", "qqq"]]
        for q in queries:
            for c in range(len(FIVE)):
                assert -1.0 - 1e-9 <= similarity(index, q, c) <= 1.0 + 1e-9

    def test_zero_idf_word_cannot_change_ranking(self):
        # 'alpha' appears everywhere -> idf 0 -> adding it to a query is a no-op
        descs = ["alpha scan packet", "alpha delete file", "alpha add rule"]
        index = small_index(descs)
        with_common = rank_by_similarity(index, ["alpha", "scan", "packet"], 3)
        without = rank_by_similarity(index, ["scan", "packet"], 3)
        assert [r.class_id for r in with_common] == [r.class_id for r in without]
        assert [r.score for r in with_common] == pytest.approx(
            [r.score for r in without]
        )

    def test_brute_force_oracle_on_five_descriptions(self):
        index = small_index(FIVE)
        query = ["scan", "malicious", "payload"]

        def brute(query_tokens, class_id):
            desc = index.descriptions[class_id]

            def vec(w):
                return index.embedding.embed_word(w)

            def direction(a_tokens, b_tokens, idf_of):
                num = 0.0
                den = 0.0
                for w in a_tokens:
                    best = max(cosine(vec(w), vec(v)) for v in b_tokens)
                    num += idf_of(w) * best
                    den += idf_of(w)
                return num / den if den > 0 else 0.0

            fwd = direction(query_tokens, desc, lambda w: index.idf.get(w, index.default_idf()))
            bwd = direction(desc, query_tokens, lambda w: index.idf[w])
            return 0.5 * (fwd + bwd)

        got = rank_by_similarity(index, query, 5)
        expected = sorted(
            range(5), key=lambda c: (-brute(query, c), c)
        )
        assert [r.class_id for r in got] == expected
        for r in got:
            assert r.score == pytest.approx(brute(query, r.class_id), abs=1e-9)

    def test_monotone_in_query_idf(self):
        index = small_index(FIVE)
        query = ["scan", "network"]
        target = 0  # its best-match cosines are the query maximum for class 0
        base = similarity(index, query, target)
        index.idf["scan"] += 1.0
        index._desc_matrices = []
        boosted = similarity(index, query, target)
        assert boosted >= base - 1e-9

    def test_empty_query_error(self):
        index = small_index(FIVE)
        with pytest.raises(BaselineError, match="unanswerable"):
            rank_by_similarity(index, [], 3)

    def test_oov_query_words_contribute_zero_cosine(self):
        index = small_index(FIVE)
        # a word with no vector cannot push any class above an exact match
        exact = rank_by_similarity(index, list(index.descriptions[2]), 1)[0]
        noisy = rank_by_similarity(
            index, list(index.descriptions[2]) + ["zzzunknownzzz"], 1
        )[0]
        assert noisy.class_id == exact.class_id


class TestDeterminismAndIO:
    def test_deterministic_at_fixed_seed(self):
        a = small_index(FIVE, seed=4)
        b = small_index(FIVE, seed=4)
        assert a.idf == b.idf
        assert np.array_equal(a.embedding.input_vectors, b.embedding.input_vectors)

    def test_round_trip(self, tmp_path):
        index = small_index(FIVE)
        save_baseline_index(index, tmp_path / "index")
        back = load_baseline_index(tmp_path / "index")
        assert back.idf == pytest.approx(index.idf)
        assert back.descriptions == index.descriptions
        q = ["scan", "packet"]
        assert [r.class_id for r in rank_by_similarity(back, q, 3)] == [
            r.class_id for r in rank_by_similarity(index, q, 3)
        ]

    def test_baseline_embedding_has_no_subwords(self):
        index = small_index(FIVE)
        assert index.embedding.config.use_subwords is False
        assert np.linalg.norm(index.embedding.embed_word("neverseen")) == 0.0
