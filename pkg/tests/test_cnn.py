"""CNN ranker: gradients, pooling, early stopping, prediction contracts."""

import numpy as np
import pytest

from apiro.cnn import (
    CnnConfig,
    CnnError,
    build_model,
    load_recommender,
    predict_topk,
    save_recommender,
    train_recommender,
)
from apiro.corpus import ClusterCard
from apiro.embedding import EmbeddingConfig, train_embedding

MICRO = CnnConfig(
    window_sizes=(3, 4, 5),
    filters_per_size=2,
    hidden_units=3,
    dropout_rate=0.0,
    batch_size=4,
    max_sequence_length=6,
    patience=5,
    max_epochs=50,
)


def toy_embedding(vocab_words, d=4, seed=0):
    sentences = [list(vocab_words)] * 4
    cfg = EmbeddingConfig(dimension=d, bucket_count=200, epochs=2, window=2)
    return train_embedding(sentences, cfg, seed=seed)


def toy_catalog(n):
    return [
        ClusterCard(
            cluster_id=f"cl_{i}",
            tool="tool",
            signatures=[f"sig{i}()"],
            description=f"class {i}",
            parameters="",
            returns="",
        )
        for i in range(n)
    ]


def micro_model(C=3, seed=1):
    words = [f"w{i}" for i in range(8)]
    embedding = toy_embedding(words)
    return build_model(
        words, embedding, [f"cl_{i}" for i in range(C)], toy_catalog(C), MICRO, seed
    )


class TestGradients:
    def test_all_parameter_tensors_match_central_differences(self):
        model = micro_model()
        rng = np.random.default_rng(3)
        B, L, d = 4, MICRO.max_sequence_length, model.dimension
        x = rng.normal(size=(B, L, d))
        y = rng.integers(0, model.n_classes, size=B)

        cache = model.forward(x, train=False)
        grads = model.backward(cache, y)

        eps = 1e-5
        for name, tensor in model.params().items():
            numeric = np.zeros_like(tensor)
            for idx in np.ndindex(*tensor.shape):
                orig = tensor[idx]
                tensor[idx] = orig + eps
                up = model.loss(model.forward(x, train=False), y)
                tensor[idx] = orig - eps
                down = model.loss(model.forward(x, train=False), y)
                tensor[idx] = orig
                numeric[idx] = (up - down) / (2 * eps)
            denom = np.maximum(np.abs(numeric), 1e-6)
            rel = np.abs(numeric - grads[name]) / denom
            assert rel.max() < 1e-3, f"{name}: max rel err {rel.max():.2e}"

    def test_softmax_rows_normalized(self):
        model = micro_model()
        rng = np.random.default_rng(5)
        x = rng.normal(size=(7, MICRO.max_sequence_length, model.dimension))
        probs = model.predict_probs(x)
        assert np.all(np.abs(probs.sum(axis=1) - 1.0) < 1e-6)


class TestMaxPool:
    def test_scaling_the_max_raises_the_pooled_value(self):
        model = micro_model()
        rng = np.random.default_rng(6)
        x = rng.normal(size=(1, MICRO.max_sequence_length, model.dimension))
        h = model.config.window_sizes[0]
        cache = model.forward(x)
        z = cache[f"z_{h}"]
        pooled_before = np.maximum(z, 0).max(axis=1)[0]
        # push the winning window's activation up by scaling conv output via bias
        winners = cache[f"argmax_{h}"][0]
        for filt in range(model.config.filters_per_size):
            if pooled_before[filt] <= 0:
                continue
            bumped = z.copy()
            bumped[0, winners[filt], filt] *= 1.5
            pooled_after = np.maximum(bumped, 0).max(axis=1)[0]
            assert pooled_after[filt] > pooled_before[filt]


class TestTraining:
    def three_class_data(self, n_per_class=20):
        words = {
            0: ["scan", "network", "packet"],
            1: ["delete", "malicious", "file"],
            2: ["add", "positive", "rule"],
        }
        rng = np.random.default_rng(0)
        data = []
        for label, base in words.items():
            for i in range(n_per_class):
                tokens = list(base)
                if i % 3 == 0:
                    tokens = tokens + [f"extra{i % 5}"]
                rng.shuffle(tokens)
                data.append((tokens, label))
        return data

    def train_toy(self, patience=20, max_epochs=200, seed=2, val=None):
        data = self.three_class_data()
        vocab_words = sorted({t for tokens, _ in data for t in tokens})
        embedding = toy_embedding(vocab_words, d=8)
        cfg = CnnConfig(
            window_sizes=(2, 3),
            filters_per_size=8,
            hidden_units=16,
            dropout_rate=0.3,
            batch_size=16,
            max_sequence_length=6,
            patience=patience,
            max_epochs=max_epochs,
        )
        model = train_recommender(
            data,
            data if val is None else val,  # overfit sanity: validate on train
            embedding,
            cfg,
            seed=seed,
            class_index=["cl_0", "cl_1", "cl_2"],
            catalog=toy_catalog(3),
        )
        return model, data

    def test_overfits_toy_corpus(self):
        model, data = self.train_toy()
        hits = sum(
            1 for tokens, y in data if predict_topk(model, tokens, 1)[0].class_id == y
        )
        assert hits / len(data) >= 0.99
        assert model.epochs_trained <= 200

    def test_patience_zero_stops_at_first_plateau(self):
        data = self.three_class_data()
        model, _ = self.train_toy(patience=0, max_epochs=100, val=data[::5])
        # training continues only while val accuracy strictly improves
        assert model.epochs_trained < 100

    def test_empty_training_set_error(self):
        embedding = toy_embedding(["a", "b"])
        with pytest.raises(CnnError, match="empty training set"):
            train_recommender(
                [], [(["a"], 0)], embedding, MICRO, 0, ["cl_0"], toy_catalog(1)
            )

    def test_frozen_embedding_rows_unchanged(self):
        data = self.three_class_data(8)
        vocab_words = sorted({t for tokens, _ in data for t in tokens})
        embedding = toy_embedding(vocab_words, d=8)
        cfg = CnnConfig(
            window_sizes=(2,),
            filters_per_size=4,
            hidden_units=8,
            dropout_rate=0.0,
            batch_size=8,
            max_sequence_length=6,
            patience=2,
            max_epochs=10,
        )
        frozen = build_model(vocab_words, embedding, ["cl_0", "cl_1", "cl_2"], toy_catalog(3), cfg, 0)
        before = frozen.embedding_table.copy()
        trained = train_recommender(
            data, data[:6], embedding, cfg, seed=0,
            class_index=["cl_0", "cl_1", "cl_2"], catalog=toy_catalog(3),
        )
        assert np.array_equal(trained.embedding_table, before)

    def test_trainable_embedding_updates_rows_but_not_padding(self):
        data = self.three_class_data(8)
        vocab_words = sorted({t for tokens, _ in data for t in tokens})
        embedding = toy_embedding(vocab_words, d=8)
        cfg = CnnConfig(
            window_sizes=(2,),
            filters_per_size=4,
            hidden_units=8,
            dropout_rate=0.0,
            batch_size=8,
            max_sequence_length=6,
            patience=2,
            max_epochs=10,
            embedding_trainable=True,
        )
        from apiro.cnn import build_model

        reference = build_model(
            vocab_words, embedding, ["cl_0", "cl_1", "cl_2"], toy_catalog(3), cfg, 0
        )
        trained = train_recommender(
            data, data[:6], embedding, cfg, seed=0,
            class_index=["cl_0", "cl_1", "cl_2"], catalog=toy_catalog(3),
        )
        assert not np.array_equal(trained.embedding_table[1:], reference.embedding_table[1:])
        assert np.all(trained.embedding_table[0] == 0.0)

    def test_long_sequences_truncated_not_rejected(self):
        model, _ = self.train_toy(patience=1, max_epochs=3)
        long_query = ["scan", "network", "packet"] * 10
        results = predict_topk(model, long_query, 2)
        assert len(results) == 2


class TestPrediction:
    def test_probabilities_sum_to_one_at_full_k(self, desk_model):
        tokens = ["read", "single", "pcap"]
        results = predict_topk(desk_model, tokens, desk_model.n_classes)
        assert sum(r.score for r in results) == pytest.approx(1.0, abs=1e-6)
        assert [r.rank for r in results] == list(range(1, desk_model.n_classes + 1))

    def test_training_description_ranks_first(self):
        model, data = TestTraining().train_toy()
        tokens, label = data[0]
        assert predict_topk(model, tokens, 1)[0].class_id == label

    def test_empty_query_error(self, desk_model):
        with pytest.raises(CnnError, match="unanswerable"):
            predict_topk(desk_model, [], 3)

    def test_k_bounds(self, desk_model):
        with pytest.raises(CnnError):
            predict_topk(desk_model, ["scan"], 0)
        with pytest.raises(CnnError):
            predict_topk(desk_model, ["scan"], desk_model.n_classes + 1)

    def test_tie_break_by_class_id(self):
        model = micro_model(C=4)
        # zero the output layer: logits identical => uniform probabilities
        model.dense2_w[...] = 0.0
        model.dense2_b[...] = 0.0
        results = predict_topk(model, ["w0", "w1", "w2"], 4)
        assert [r.class_id for r in results] == [0, 1, 2, 3]

    def test_padding_neutrality(self):
        model = micro_model()
        rng = np.random.default_rng(9)
        L = model.config.max_sequence_length
        base = rng.normal(size=(3, model.dimension))  # three real tokens
        for pad_len in range(3, L + 1):
            x = np.zeros((1, L, model.dimension))
            x[0, :3] = base
            probs = model.predict_probs(x)
            if pad_len == 3:
                reference = probs
            assert np.array_equal(probs, reference)

    def test_oov_query_words_get_composed_vectors(self, desk_model):
        # 'commmunity' is out of vocabulary; its subword vector must not be zero
        assert "commmunity" not in desk_model.vocab
        x = desk_model.encode_tokens(["commmunity"])
        assert np.linalg.norm(x[0]) > 0


class TestSerialization:
    def test_round_trip(self, desk_model, desk_embedding, tmp_path):
        path = tmp_path / "model.bin"
        save_recommender(desk_model, path)
        back = load_recommender(path, desk_embedding)
        assert back.vocab == desk_model.vocab
        assert np.array_equal(back.dense2_w, desk_model.dense2_w)
        for h in desk_model.config.window_sizes:
            assert np.array_equal(back.conv_weights[h], desk_model.conv_weights[h])
        q = ["read", "single", "pcap"]
        assert [r.class_id for r in predict_topk(back, q, 3)] == [
            r.class_id for r in predict_topk(desk_model, q, 3)
        ]

    def test_dimension_mismatch_refused(self, desk_model, tmp_path):
        path = tmp_path / "model.bin"
        save_recommender(desk_model, path)
        other = toy_embedding(["a", "b"], d=desk_model.dimension * 2)
        with pytest.raises(CnnError, match="dimension"):
            load_recommender(path, other)
