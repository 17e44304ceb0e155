"""Subword skip-gram: Huffman coding, gradients, hashing, composition."""

import numpy as np
import pytest

from apiro.embedding import (
    EmbeddingConfig,
    EmbeddingError,
    build_huffman,
    char_ngrams,
    cosine,
    dump_vectors_text,
    fnv1a_32,
    hs_pair_gradients,
    hs_pair_loss,
    hs_word_probability,
    load_embedding,
    save_embedding,
    train_embedding,
)


def small_cfg(**kw):
    base = dict(dimension=8, bucket_count=1000, epochs=3, window=3)
    base.update(kw)
    return EmbeddingConfig(**base)


class TestHashing:
    def test_fnv1a_reference_vectors(self):
        # offset basis and published single-byte vectors of 32-bit FNV-1a
        assert fnv1a_32(b"") == 0x811C9DC5
        assert fnv1a_32(b"a") == 0xE40C292C
        assert fnv1a_32(b"foobar") == 0xBF9CF968

    def test_bucket_ids_stable(self):
        ids1 = [fnv1a_32(g.encode()) % 2_000_000 for g in char_ngrams("sensor", 3, 6)]
        ids2 = [fnv1a_32(g.encode()) % 2_000_000 for g in char_ngrams("sensor", 3, 6)]
        assert ids1 == ids2

    def test_ngram_extraction(self):
        grams = char_ngrams("ab", 3, 6)
        assert grams == ["<ab", "ab>", "<ab>"]
        assert "<sen" in char_ngrams("sensor", 3, 6)


class TestHuffman:
    def test_two_word_tree(self):
        points, codes = build_huffman([5, 3])
        assert all(len(p) == 1 for p in points)  # exactly 1 internal node
        assert sorted(c[0] for c in codes) == [0, 1]

    def test_internal_node_count_and_prefix_freedom(self):
        counts = [13, 7, 5, 3, 2, 1, 1]
        points, codes = build_huffman(counts)
        internal = {p for path in points for p in path}
        assert len(internal) == len(counts) - 1
        bitstrings = ["".join(map(str, c)) for c in codes]
        for i, a in enumerate(bitstrings):
            for j, b in enumerate(bitstrings):
                if i != j:
                    assert not b.startswith(a)

    def test_single_word(self):
        points, codes = build_huffman([4])
        assert points == [[]] and codes == [[]]


class TestTraining:
    def test_empty_corpus_error(self):
        with pytest.raises(EmbeddingError):
            train_embedding([], small_cfg(), seed=0)

    def test_self_cosine_is_one(self):
        sentences = [["alpha", "beta", "gamma"]] * 10
        model = train_embedding(sentences, small_cfg(), seed=0)
        for word in model.vocab:
            assert cosine(model.embed_word(word), model.embed_word(word)) == pytest.approx(1.0)

    def test_deterministic_at_workers_1(self):
        sentences = [["log", "packet", "alert"], ["read", "pcap", "file"]] * 5
        a = train_embedding(sentences, small_cfg(), seed=9)
        b = train_embedding(sentences, small_cfg(), seed=9)
        assert np.array_equal(a.input_vectors, b.input_vectors)
        assert np.array_equal(a.output_vectors, b.output_vectors)

    def test_in_vocab_embedding_is_composed_sum(self):
        sentences = [["alpha", "beta"]] * 4
        model = train_embedding(sentences, small_cfg(), seed=1)
        idx = model.vocab_index("alpha")
        rows = model.input_rows(idx)
        assert np.array_equal(model.embed_word("alpha"), model.input_vectors[rows].sum(axis=0))

    def test_oov_composition_nonzero(self):
        sentences = [["alpha", "beta"]] * 4
        model = train_embedding(sentences, small_cfg(), seed=1)
        vec = model.embed_word("misp_attribute")
        assert np.linalg.norm(vec) > 0

    def test_word_level_oov_is_zero(self):
        sentences = [["alpha", "beta"]] * 4
        model = train_embedding(sentences, small_cfg(use_subwords=False), seed=1)
        assert np.linalg.norm(model.embed_word("gamma")) == 0.0
        assert cosine(model.embed_word("gamma"), model.embed_word("alpha")) == 0.0

    def test_negative_sampling_objective_runs(self):
        sentences = [["alpha", "beta", "gamma", "delta"]] * 6
        model = train_embedding(
            sentences, small_cfg(objective="negative-sampling"), seed=2
        )
        assert model.output_vectors.shape[0] == len(model.vocab)

    def test_lock_free_parallel_workers_run(self):
        # workers > 1 waives bitwise determinism but must train sane vectors
        sentences = [["log", "packet", "alert", "sensor"]] * 10
        model = train_embedding(sentences, small_cfg(workers=2), seed=3)
        assert np.all(np.isfinite(model.input_vectors))
        assert cosine(model.embed_word("log"), model.embed_word("log")) == pytest.approx(1.0)


class TestGradients:
    def test_hs_gradient_matches_central_differences(self):
        rng = np.random.default_rng(0)
        d, n_nodes = 4, 6
        h = rng.normal(size=d)
        nodes = rng.normal(size=(n_nodes, d))
        codes = rng.integers(0, 2, size=n_nodes).astype(float)

        grad_h, grad_nodes = hs_pair_gradients(h, nodes, codes)
        eps = 1e-6

        def num_grad(setter, getter, shape):
            grad = np.zeros(shape)
            for idx in np.ndindex(*shape):
                orig = getter(idx)
                setter(idx, orig + eps)
                up = hs_pair_loss(h, nodes, codes)
                setter(idx, orig - eps)
                down = hs_pair_loss(h, nodes, codes)
                setter(idx, orig)
                grad[idx] = (up - down) / (2 * eps)
            return grad

        num_h = num_grad(
            lambda i, v: h.__setitem__(i, v), lambda i: h[i], (d,)
        )
        num_nodes = num_grad(
            lambda i, v: nodes.__setitem__(i, v), lambda i: nodes[i], (n_nodes, d)
        )
        assert np.max(np.abs(num_h - grad_h) / (np.abs(num_h) + 1e-8)) < 1e-4
        assert np.max(np.abs(num_nodes - grad_nodes) / (np.abs(num_nodes) + 1e-8)) < 1e-4

    def test_path_probabilities_sum_to_one(self):
        sentences = [[f"w{i}" for i in range(12)]] * 3
        model = train_embedding(sentences, small_cfg(), seed=5)
        points, codes = build_huffman(model.counts)
        h = np.random.default_rng(1).normal(size=model.dimension)
        total = sum(
            hs_word_probability(model, points, codes, h, i)
            for i in range(len(model.vocab))
        )
        assert total == pytest.approx(1.0, abs=1e-6)


class TestNeighbors:
    def test_excludes_self(self):
        sentences = [["alpha", "beta", "gamma"]] * 8
        model = train_embedding(sentences, small_cfg(), seed=3)
        for word in model.vocab:
            assert word not in [w for w, _ in model.nearest_neighbors(word, 2)]

    def test_k_larger_than_vocab(self):
        sentences = [["alpha", "beta", "gamma"]] * 8
        model = train_embedding(sentences, small_cfg(), seed=3)
        neighbors = model.nearest_neighbors("alpha", 50)
        assert len(neighbors) == len(model.vocab) - 1

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(7)
        sentences = [
            [f"word{rng.integers(0, 40)}" for _ in range(8)] for _ in range(30)
        ]
        model = train_embedding(sentences, small_cfg(), seed=4)
        target = "word1" if model.vocab_index("word1") is not None else model.vocab[0]
        got = model.nearest_neighbors(target, 5)

        tvec = model.embed_word(target)
        scored = []
        for i, word in enumerate(model.vocab):
            if word == target:
                continue
            scored.append((word, cosine(model.embed_word(word), tvec), i))
        scored.sort(key=lambda t: (-t[1], t[2]))
        assert [w for w, _ in got] == [w for w, _, _ in scored[:5]]


class TestSerialization:
    def test_round_trip_bitwise(self, tmp_path):
        sentences = [["read", "single", "pcap"], ["log", "network", "packet"]] * 4
        model = train_embedding(sentences, small_cfg(), seed=6)
        path = tmp_path / "emb.bin"
        save_embedding(model, path)
        back = load_embedding(path)
        assert back.vocab == model.vocab
        assert np.array_equal(back.input_vectors, model.input_vectors)
        assert np.array_equal(back.output_vectors, model.output_vectors)
        assert back.config == model.config

    def test_text_dump(self, tmp_path):
        sentences = [["alpha", "beta"]] * 4
        model = train_embedding(sentences, small_cfg(), seed=1)
        path = tmp_path / "vecs.txt"
        dump_vectors_text(model, path)
        lines = path.read_text().splitlines()
        assert lines[0] == f"{len(model.vocab)} {model.dimension}"
        assert len(lines) == len(model.vocab) + 1
        word, *vals = lines[1].split()
        assert len(vals) == model.dimension

    def test_magic_check(self, tmp_path):
        path = tmp_path / "bogus.bin"
        path.write_bytes(b"not a model")
        with pytest.raises(EmbeddingError, match="not an embedding model"):
            load_embedding(path)


class TestDeskModel:
    def test_misspelling_lands_near_source(self, desk_embedding):
        near = cosine(
            desk_embedding.embed_word("community"),
            desk_embedding.embed_word("commmunity"),
        )
        far = cosine(
            desk_embedding.embed_word("community"),
            desk_embedding.embed_word("packet"),
        )
        assert near > far

    def test_oov_plural_nearest_neighbor(self, desk_embedding):
        assert desk_embedding.vocab_index("datagrams") is None
        top = desk_embedding.nearest_neighbors("datagrams", 1)
        assert top[0][0] == "datagram"
