"""Word-level CNN ranker over the subword embedding space.

Architecture: embedding lookup (frozen by default), parallel convolutions
with window sizes {3,4,5}, ReLU, global max-pool, a 100-unit dense layer with
ReLU and inverted dropout, then softmax over the API classes. Forward and
backward passes are implemented here directly; training uses Adam with L2 on
conv and dense weights and early stopping on validation accuracy.

Query words outside the training vocabulary get vectors composed from their
character n-grams at inference, so misspellings land near their source words.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corpus import ClusterCard, RankedResult, render_results
from .embedding import EmbeddingModel

logger = logging.getLogger(__name__)

MAGIC = b"APIROCNN"
FORMAT_VERSION = 1


class CnnError(ValueError):
    pass


@dataclass
class CnnConfig:
    window_sizes: tuple[int, ...] = (3, 4, 5)
    filters_per_size: int = 100
    hidden_units: int = 100
    dropout_rate: float = 0.5
    l2_coefficient: float = 1e-4
    batch_size: int = 64
    patience: int = 50
    max_epochs: int = 1000
    max_sequence_length: int = 32
    adam_lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    embedding_trainable: bool = False

    def validate(self) -> None:
        if any(h > self.max_sequence_length for h in self.window_sizes):
            raise CnnError("every window size must be <= max_sequence_length")
        if self.filters_per_size <= 0:
            raise CnnError("filters_per_size must be positive")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise CnnError("dropout_rate must be in [0, 1)")


@dataclass
class RecommenderModel:
    config: CnnConfig
    vocab: list[str]  # training vocabulary; row i+1 of the table, row 0 = padding
    embedding_table: np.ndarray  # (V+1, d), row 0 all-zero, never updated
    conv_weights: dict[int, np.ndarray]
    conv_biases: dict[int, np.ndarray]
    dense1_w: np.ndarray
    dense1_b: np.ndarray
    dense2_w: np.ndarray
    dense2_b: np.ndarray
    class_index: list[str]  # class id -> cluster_id
    catalog: list[ClusterCard]
    embedding: EmbeddingModel  # for OOV composition at inference
    seed: int = 0
    epochs_trained: int = 0
    best_val_accuracy: float = float("nan")
    _vocab_index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self._vocab_index:
            self._vocab_index = {w: i + 1 for i, w in enumerate(self.vocab)}

    @property
    def dimension(self) -> int:
        return self.embedding_table.shape[1]

    @property
    def n_classes(self) -> int:
        return self.dense2_w.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for h in self.config.window_sizes:
            out[f"conv_w_{h}"] = self.conv_weights[h]
            out[f"conv_b_{h}"] = self.conv_biases[h]
        out["dense1_w"] = self.dense1_w
        out["dense1_b"] = self.dense1_b
        out["dense2_w"] = self.dense2_w
        out["dense2_b"] = self.dense2_b
        return out

    # --- input encoding -------------------------------------------------------

    def encode_tokens(self, tokens: list[str]) -> np.ndarray:
        """(L, d) input matrix: table rows in-vocabulary, composed vectors else."""
        L = self.config.max_sequence_length
        if len(tokens) > L:
            logger.info("truncating %d-token sequence to %d", len(tokens), L)
            tokens = tokens[:L]
        x = np.zeros((L, self.dimension))
        for i, token in enumerate(tokens):
            idx = self._vocab_index.get(token)
            if idx is not None:
                x[i] = self.embedding_table[idx]
            else:
                x[i] = self.embedding.embed_word(token)
        return x

    def encode_indices(self, tokens: list[str]) -> np.ndarray:
        """Index form for in-vocabulary training sequences (0 = padding)."""
        L = self.config.max_sequence_length
        idx = np.zeros(L, dtype=np.int64)
        for i, token in enumerate(tokens[:L]):
            idx[i] = self._vocab_index.get(token, 0)
        return idx

    # --- forward / backward ---------------------------------------------------

    def forward(
        self,
        x: np.ndarray,
        train: bool = False,
        dropout_rng: np.random.Generator | None = None,
    ) -> dict:
        """Forward pass on a (B, L, d) batch; returns the cache used by backward."""
        cfg = self.config
        cache: dict = {"x": x}
        pooled_parts = []
        for h in cfg.window_sizes:
            P = x.shape[1] - h + 1
            windows = np.concatenate([x[:, j : j + P, :] for j in range(h)], axis=2)
            z = windows @ self.conv_weights[h] + self.conv_biases[h]
            a = np.maximum(z, 0.0)
            pooled = a.max(axis=1)
            cache[f"windows_{h}"] = windows
            cache[f"z_{h}"] = z
            cache[f"argmax_{h}"] = a.argmax(axis=1)
            pooled_parts.append(pooled)
        feat = np.concatenate(pooled_parts, axis=1)
        pre1 = feat @ self.dense1_w + self.dense1_b
        hidden = np.maximum(pre1, 0.0)
        if train and cfg.dropout_rate > 0.0:
            if dropout_rng is None:
                raise CnnError("training forward pass needs a dropout rng")
            mask = (
                dropout_rng.random(hidden.shape) >= cfg.dropout_rate
            ) / (1.0 - cfg.dropout_rate)
        else:
            mask = np.ones_like(hidden)
        dropped = hidden * mask
        logits = dropped @ self.dense2_w + self.dense2_b
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        probs = exp / exp.sum(axis=1, keepdims=True)
        cache.update(
            feat=feat, pre1=pre1, hidden=hidden, mask=mask, dropped=dropped, probs=probs
        )
        return cache

    def loss(self, cache: dict, labels: np.ndarray) -> float:
        """Mean cross-entropy on integer labels plus the L2 penalty."""
        probs = cache["probs"]
        B = probs.shape[0]
        ce = -np.log(probs[np.arange(B), labels] + 1e-300).mean()
        l2 = self.config.l2_coefficient
        penalty = sum(
            float((w ** 2).sum())
            for w in [*self.conv_weights.values(), self.dense1_w, self.dense2_w]
        )
        return float(ce + l2 * penalty)

    def backward(self, cache: dict, labels: np.ndarray) -> dict[str, np.ndarray]:
        cfg = self.config
        l2 = cfg.l2_coefficient
        probs = cache["probs"]
        B = probs.shape[0]
        dlogits = probs.copy()
        dlogits[np.arange(B), labels] -= 1.0
        dlogits /= B

        grads: dict[str, np.ndarray] = {}
        grads["dense2_w"] = cache["dropped"].T @ dlogits + 2.0 * l2 * self.dense2_w
        grads["dense2_b"] = dlogits.sum(axis=0)
        ddropped = dlogits @ self.dense2_w.T
        dhidden = ddropped * cache["mask"]
        dpre1 = dhidden * (cache["pre1"] > 0.0)
        grads["dense1_w"] = cache["feat"].T @ dpre1 + 2.0 * l2 * self.dense1_w
        grads["dense1_b"] = dpre1.sum(axis=0)
        dfeat = dpre1 @ self.dense1_w.T

        N = cfg.filters_per_size
        dx = np.zeros_like(cache["x"]) if cfg.embedding_trainable else None
        for slot, h in enumerate(cfg.window_sizes):
            dpooled = dfeat[:, slot * N : (slot + 1) * N]
            z = cache[f"z_{h}"]
            da = np.zeros_like(z)
            np.put_along_axis(
                da, cache[f"argmax_{h}"][:, None, :], dpooled[:, None, :], axis=1
            )
            dz = da * (z > 0.0)
            windows = cache[f"windows_{h}"]
            P = windows.shape[1]
            flat_w = windows.reshape(B * P, -1)
            flat_dz = dz.reshape(B * P, N)
            grads[f"conv_w_{h}"] = flat_w.T @ flat_dz + 2.0 * l2 * self.conv_weights[h]
            grads[f"conv_b_{h}"] = dz.sum(axis=(0, 1))
            if dx is not None:
                dwindows = dz @ self.conv_weights[h].T
                d = self.dimension
                for j in range(h):
                    dx[:, j : j + P, :] += dwindows[:, :, j * d : (j + 1) * d]
        if dx is not None:
            grads["_input"] = dx
        return grads

    def predict_probs(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, train=False)["probs"]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def build_model(
    vocab: list[str],
    embedding: EmbeddingModel,
    class_index: list[str],
    catalog: list[ClusterCard],
    cfg: CnnConfig,
    seed: int,
) -> RecommenderModel:
    """Initialize weights (uniform Glorot, zero biases) and snapshot the embedding."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    d = embedding.dimension
    table = np.zeros((len(vocab) + 1, d))
    for i, word in enumerate(vocab):
        table[i + 1] = embedding.embed_word(word)
    conv_w = {}
    conv_b = {}
    N = cfg.filters_per_size
    for h in cfg.window_sizes:
        conv_w[h] = _glorot(rng, h * d, N, (h * d, N))
        conv_b[h] = np.zeros(N)
    total = N * len(cfg.window_sizes)
    C = len(class_index)
    return RecommenderModel(
        config=cfg,
        vocab=list(vocab),
        embedding_table=table,
        conv_weights=conv_w,
        conv_biases=conv_b,
        dense1_w=_glorot(rng, total, cfg.hidden_units, (total, cfg.hidden_units)),
        dense1_b=np.zeros(cfg.hidden_units),
        dense2_w=_glorot(rng, cfg.hidden_units, C, (cfg.hidden_units, C)),
        dense2_b=np.zeros(C),
        class_index=list(class_index),
        catalog=catalog,
        embedding=embedding,
        seed=seed,
    )


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], cfg: CnnConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        cfg = self.cfg
        self.t += 1
        for key, g in grads.items():
            if key.startswith("_"):
                continue
            self.m[key] = cfg.adam_beta1 * self.m[key] + (1 - cfg.adam_beta1) * g
            self.v[key] = cfg.adam_beta2 * self.v[key] + (1 - cfg.adam_beta2) * g * g
            mhat = self.m[key] / (1 - cfg.adam_beta1 ** self.t)
            vhat = self.v[key] / (1 - cfg.adam_beta2 ** self.t)
            params[key] -= cfg.adam_lr * mhat / (np.sqrt(vhat) + cfg.adam_eps)


def _accuracy(model: RecommenderModel, x: np.ndarray, labels: np.ndarray) -> float:
    probs = model.predict_probs(x)
    return float((probs.argmax(axis=1) == labels).mean())


def train_recommender(
    train_set: list[tuple[list[str], int]],
    val_set: list[tuple[list[str], int]],
    embedding: EmbeddingModel,
    cfg: CnnConfig,
    seed: int,
    class_index: list[str],
    catalog: list[ClusterCard] | None = None,
) -> RecommenderModel:
    """Train the ranker; returns the weights of the best validation epoch.

    Training stops once validation accuracy has not improved for `patience`
    consecutive epochs (patience=0 stops at the first non-improving epoch) or
    at the epoch cap. Class ids must be dense 0..C-1.
    """
    cfg.validate()
    if not train_set:
        raise CnnError("empty training set")
    if not val_set:
        raise CnnError("empty validation set")
    C = len(class_index)
    labels_seen = {label for _, label in train_set} | {label for _, label in val_set}
    if labels_seen - set(range(C)):
        raise CnnError("labels outside dense class range")

    vocab = sorted({t for tokens, _ in train_set for t in tokens})
    catalog = catalog or []
    model = build_model(vocab, embedding, class_index, catalog, cfg, seed)
    rng = np.random.default_rng((seed, 0xC0FFEE))

    train_idx = np.stack([model.encode_indices(tokens) for tokens, _ in train_set])
    train_y = np.asarray([label for _, label in train_set], dtype=np.int64)
    val_x = np.stack([model.encode_tokens(tokens) for tokens, _ in val_set])
    val_y = np.asarray([label for _, label in val_set], dtype=np.int64)

    params = model.params()
    if cfg.embedding_trainable:
        params = dict(params)
    adam = _Adam(params, cfg)

    best_acc = -1.0
    best_params = {k: v.copy() for k, v in params.items()}
    best_table = model.embedding_table.copy()
    wait = 0
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_set))
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            x = model.embedding_table[train_idx[batch]]
            y = train_y[batch]
            cache = model.forward(x, train=True, dropout_rng=rng)
            grads = model.backward(cache, y)
            adam.step(params, grads)
            if cfg.embedding_trainable and "_input" in grads:
                np.add.at(
                    model.embedding_table,
                    train_idx[batch].ravel(),
                    -cfg.adam_lr * grads["_input"].reshape(-1, model.dimension),
                )
                model.embedding_table[0] = 0.0  # padding row is never updated
        acc = _accuracy(model, val_x, val_y)
        if acc > best_acc:
            best_acc = acc
            best_params = {k: v.copy() for k, v in params.items()}
            best_table = model.embedding_table.copy()
            wait = 0
        else:
            wait += 1
            if wait >= max(1, cfg.patience):
                break
    for key, value in best_params.items():
        params[key][...] = value
    model.embedding_table[...] = best_table
    model.epochs_trained = epoch
    model.best_val_accuracy = best_acc
    return model


def predict_topk(model: RecommenderModel, tokens: list[str], k: int) -> list[RankedResult]:
    """Rank the top-k classes for a processed query.

    Probabilities sort descending; exact ties break by ascending class id.
    """
    if not tokens:
        raise CnnError("unanswerable query: no tokens left after preprocessing")
    if not (1 <= k <= model.n_classes):
        raise CnnError(f"k must be in [1, {model.n_classes}]")
    x = model.encode_tokens(tokens)[None, :, :]
    probs = model.predict_probs(x)[0]
    order = sorted(range(model.n_classes), key=lambda c: (-probs[c], c))
    ranking = [(c, float(probs[c])) for c in order[:k]]
    return render_results(model.catalog, ranking)


# --- serialization -----------------------------------------------------------


def save_recommender(model: RecommenderModel, path: Path) -> None:
    header = {
        "config": asdict(model.config),
        "vocab": model.vocab,
        "class_index": model.class_index,
        "catalog": [asdict(card) for card in model.catalog],
        "dimension": model.dimension,
        "seed": model.seed,
    }
    header["config"]["window_sizes"] = list(model.config.window_sizes)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tensors = [model.embedding_table]
    for h in model.config.window_sizes:
        tensors.extend([model.conv_weights[h], model.conv_biases[h]])
    tensors.extend([model.dense1_w, model.dense1_b, model.dense2_w, model.dense2_b])
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for tensor in tensors:
            arr = np.ascontiguousarray(np.atleast_2d(tensor), dtype="<f8")
            fh.write(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
            fh.write(arr.tobytes())


def load_recommender(path: Path, embedding: EmbeddingModel) -> RecommenderModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CnnError(f"{path}: not a recommender model file")
        version = struct.unpack("<I", fh.read(4))[0]
        if version != FORMAT_VERSION:
            raise CnnError(f"{path}: unsupported version {version}")
        blob_len = struct.unpack("<I", fh.read(4))[0]
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        n_tensors = struct.unpack("<I", fh.read(4))[0]
        tensors = []
        for _ in range(n_tensors):
            rows, cols = struct.unpack("<QQ", fh.read(16))
            data = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8")
            tensors.append(data.reshape(rows, cols).copy())
    if header["dimension"] != embedding.dimension:
        raise CnnError(
            f"{path}: model dimension {header['dimension']} does not match "
            f"embedding dimension {embedding.dimension}"
        )
    cfg_dict = dict(header["config"])
    cfg_dict["window_sizes"] = tuple(cfg_dict["window_sizes"])
    cfg = CnnConfig(**cfg_dict)
    it = iter(tensors)
    table = next(it)
    conv_w = {}
    conv_b = {}
    for h in cfg.window_sizes:
        conv_w[h] = next(it)
        conv_b[h] = next(it).ravel()
    model = RecommenderModel(
        config=cfg,
        vocab=header["vocab"],
        embedding_table=table,
        conv_weights=conv_w,
        conv_biases=conv_b,
        dense1_w=next(it),
        dense1_b=next(it).ravel(),
        dense2_w=next(it),
        dense2_b=next(it).ravel(),
        class_index=header["class_index"],
        catalog=[ClusterCard(**card) for card in header["catalog"]],
        embedding=embedding,
        seed=header.get("seed", 0),
    )
    return model
