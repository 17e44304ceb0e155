"""Subword skip-gram embeddings trained from scratch.

Words are represented as the SUM of a word row and hashed character n-gram
bucket rows (n-grams taken over the boundary-marked form "<word>"), which is
what lets unseen or misspelled query words be composed at inference time.
Training optimizes the skip-gram objective with hierarchical softmax over a
Huffman tree (negative sampling is available as an alternative).
"""

from __future__ import annotations

import heapq
import json
import struct
import threading
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

MAGIC = b"APIROEMB"
FORMAT_VERSION = 1

OBJECTIVES = ("hierarchical-softmax", "negative-sampling")


class EmbeddingError(ValueError):
    pass


@dataclass
class EmbeddingConfig:
    dimension: int = 300
    window: int = 5
    min_count: int = 1
    epochs: int = 5
    learning_rate: float = 0.05
    ngram_min: int = 3
    ngram_max: int = 6
    bucket_count: int = 2_000_000
    objective: str = "hierarchical-softmax"
    use_subwords: bool = True
    negative: int = 5
    workers: int = 1

    def validate(self) -> None:
        if self.dimension <= 0:
            raise EmbeddingError("dimension must be positive")
        if self.ngram_min > self.ngram_max:
            raise EmbeddingError("ngram_min must be <= ngram_max")
        if self.bucket_count <= 0:
            raise EmbeddingError("bucket_count must be positive")
        if self.objective not in OBJECTIVES:
            raise EmbeddingError(f"unknown objective {self.objective!r}")


def fnv1a_32(data: bytes) -> int:
    """FNV-1a 32-bit; fixed so bucket ids are stable across runs and platforms."""
    h = 0x811C9DC5
    for byte in data:
        h ^= byte
        h = (h * 0x01000193) & 0xFFFFFFFF
    return h


def char_ngrams(word: str, nmin: int, nmax: int) -> list[str]:
    """All character n-grams of '<word>', n in [nmin, nmax], in position order."""
    marked = f"<{word}>"
    grams = []
    for n in range(nmin, nmax + 1):
        for i in range(0, len(marked) - n + 1):
            grams.append(marked[i : i + n])
    return grams


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class HuffmanNode:
    count: int
    index: int
    left: "HuffmanNode | None" = None
    right: "HuffmanNode | None" = None


def build_huffman(counts: list[int]) -> tuple[list[list[int]], list[list[int]]]:
    """Prefix-free Huffman codes for a frequency list.

    Returns (points, codes): for word i, points[i] is the internal-node path
    from the root and codes[i] the branch bits along it. A vocabulary of V
    words yields exactly V-1 internal nodes.
    """
    heap: list[tuple[int, int, HuffmanNode]] = []
    for i, count in enumerate(counts):
        node = HuffmanNode(count=count, index=i)
        heap.append((count, i, node))
    heapq.heapify(heap)
    next_index = len(counts)
    while len(heap) > 1:
        c1, _, n1 = heapq.heappop(heap)
        c2, _, n2 = heapq.heappop(heap)
        parent = HuffmanNode(count=c1 + c2, index=next_index, left=n1, right=n2)
        heapq.heappush(heap, (parent.count, next_index, parent))
        next_index += 1

    points: list[list[int]] = [[] for _ in counts]
    codes: list[list[int]] = [[] for _ in counts]
    if not counts:
        return points, codes
    root = heap[0][2]
    if root.left is None:  # single-word vocabulary: empty path
        return points, codes

    n_leaves = len(counts)
    stack: list[tuple[HuffmanNode, list[int], list[int]]] = [(root, [], [])]
    while stack:
        node, path, bits = stack.pop()
        if node.left is None:
            points[node.index] = path
            codes[node.index] = bits
            continue
        # internal node ids are re-based to 0..V-2
        here = path + [node.index - n_leaves]
        stack.append((node.left, here, bits + [0]))
        stack.append((node.right, here, bits + [1]))
    return points, codes


@dataclass
class EmbeddingModel:
    config: EmbeddingConfig
    vocab: list[str]
    counts: list[int]
    input_vectors: np.ndarray  # (V + buckets, d); bucket rows follow word rows
    output_vectors: np.ndarray  # HS: (V-1, d) node vectors; NS: (V, d)
    seed: int = 0
    _index: dict[str, int] = field(default_factory=dict, repr=False)
    _subword_rows: dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    _composed: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not self._index:
            self._index = {w: i for i, w in enumerate(self.vocab)}

    @property
    def dimension(self) -> int:
        return self.config.dimension

    def vocab_index(self, word: str) -> int | None:
        return self._index.get(word)

    def input_rows(self, word_index: int) -> np.ndarray:
        """Row ids composing a vocabulary word: its word row plus n-gram buckets."""
        rows = self._subword_rows.get(word_index)
        if rows is None:
            word = self.vocab[word_index]
            ids = [word_index]
            if self.config.use_subwords:
                v = len(self.vocab)
                for gram in char_ngrams(word, self.config.ngram_min, self.config.ngram_max):
                    ids.append(v + fnv1a_32(gram.encode("utf-8")) % self.config.bucket_count)
            rows = np.asarray(ids, dtype=np.int64)
            self._subword_rows[word_index] = rows
        return rows

    def embed_word(self, word: str) -> np.ndarray:
        """Vector for any word; unseen words are composed from n-gram buckets.

        Without subwords (word-level mode) an unseen word gets the zero vector,
        which downstream similarity code treats as cosine 0.
        """
        idx = self.vocab_index(word)
        if idx is not None:
            return self.input_vectors[self.input_rows(idx)].sum(axis=0)
        if not self.config.use_subwords:
            return np.zeros(self.dimension)
        v = len(self.vocab)
        ids = [
            v + fnv1a_32(g.encode("utf-8")) % self.config.bucket_count
            for g in char_ngrams(word, self.config.ngram_min, self.config.ngram_max)
        ]
        return self.input_vectors[np.asarray(ids, dtype=np.int64)].sum(axis=0)

    def composed_matrix(self) -> np.ndarray:
        """(V, d) matrix of composed in-vocabulary vectors (cached)."""
        if self._composed is None:
            rows = np.zeros((len(self.vocab), self.dimension))
            for i in range(len(self.vocab)):
                rows[i] = self.input_vectors[self.input_rows(i)].sum(axis=0)
            self._composed = rows
        return self._composed

    def nearest_neighbors(self, word: str, k: int) -> list[tuple[str, float]]:
        """Top-k vocabulary words by cosine to embed_word(word).

        The word itself is excluded; cosine ties break by vocabulary order.
        """
        if k < 1:
            raise EmbeddingError("k must be >= 1")
        target = self.embed_word(word)
        norm = np.linalg.norm(target)
        if norm == 0:
            sims = np.zeros(len(self.vocab))
        else:
            matrix = self.composed_matrix()
            norms = np.linalg.norm(matrix, axis=1)
            norms[norms == 0] = 1.0
            sims = (matrix @ target) / (norms * norm)
        own = self.vocab_index(word)
        order = sorted(
            (i for i in range(len(self.vocab)) if i != own),
            key=lambda i: (-sims[i], i),
        )
        return [(self.vocab[i], float(sims[i])) for i in order[:k]]


def hs_pair_loss(h: np.ndarray, node_vectors: np.ndarray, codes: np.ndarray) -> float:
    """Hierarchical-softmax loss -sum(log sigma((1-2b) z)) for one (center, target)."""
    z = node_vectors @ h
    signs = 1.0 - 2.0 * codes
    return float(-np.sum(np.log(_sigmoid(signs * z))))


def hs_pair_gradients(
    h: np.ndarray, node_vectors: np.ndarray, codes: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradients of hs_pair_loss wrt h and the node vectors."""
    z = node_vectors @ h
    f = _sigmoid(z)
    labels = 1.0 - codes
    dz = f - labels
    grad_h = dz @ node_vectors
    grad_nodes = np.outer(dz, h)
    return grad_h, grad_nodes


def hs_word_probability(
    model: EmbeddingModel,
    points: list[list[int]],
    codes: list[list[int]],
    h: np.ndarray,
    word_index: int,
) -> float:
    """P(word | context vector h) under the Huffman tree."""
    p = 1.0
    for node, bit in zip(points[word_index], codes[word_index]):
        z = float(model.output_vectors[node] @ h)
        p *= _sigmoid((1.0 - 2.0 * bit) * z)
    return p


def _train_stream(
    sentences: list[list[int]],
    model: EmbeddingModel,
    points: list[list[int]],
    codes: list[list[int]],
    neg_table: np.ndarray | None,
    cfg: EmbeddingConfig,
    rng: np.random.Generator,
    total_words: int,
    progress: list[int],
) -> None:
    inp = model.input_vectors
    out = model.output_vectors
    lr0 = cfg.learning_rate
    for sentence in sentences:
        for pos, center in enumerate(sentence):
            alpha = lr0 * max(0.0, 1.0 - progress[0] / max(1, total_words))
            progress[0] += 1
            reduced = int(rng.integers(1, cfg.window + 1))
            start = max(0, pos - reduced)
            end = min(len(sentence), pos + reduced + 1)
            rows = model.input_rows(center)
            for cpos in range(start, end):
                if cpos == pos:
                    continue
                target = sentence[cpos]
                h = inp[rows].sum(axis=0)
                if cfg.objective == "hierarchical-softmax":
                    nodes = points[target]
                    if not nodes:
                        continue
                    bits = np.asarray(codes[target], dtype=np.float64)
                    node_ids = np.asarray(nodes, dtype=np.int64)
                    z = out[node_ids] @ h
                    f = _sigmoid(z)
                    g = (1.0 - bits - f) * alpha
                    grad_h = g @ out[node_ids]
                    out[node_ids] += np.outer(g, h)
                else:
                    negatives = neg_table[
                        rng.integers(0, len(neg_table), size=cfg.negative)
                    ]
                    targets = np.concatenate(([target], negatives))
                    labels = np.zeros(len(targets))
                    labels[0] = 1.0
                    z = out[targets] @ h
                    f = _sigmoid(z)
                    g = (labels - f) * alpha
                    grad_h = g @ out[targets]
                    out[targets] += np.outer(g, h)
                inp[rows] += grad_h


def train_embedding(
    sentences: list[list[str]],
    cfg: EmbeddingConfig,
    seed: int = 0,
) -> EmbeddingModel:
    """Train a skip-gram embedding over token sequences.

    The learning rate decays linearly to zero over the planned number of
    center-word visits. Deterministic (bitwise) for a fixed seed at workers=1;
    workers>1 performs lock-free concurrent row updates and forfeits that
    guarantee.
    """
    cfg.validate()
    counts: dict[str, int] = {}
    for sentence in sentences:
        for token in sentence:
            counts[token] = counts.get(token, 0) + 1
    vocab = sorted(
        (w for w, c in counts.items() if c >= cfg.min_count),
        key=lambda w: (-counts[w], w),
    )
    if not vocab:
        raise EmbeddingError("empty corpus: no word meets min_count")
    vocab_counts = [counts[w] for w in vocab]
    index = {w: i for i, w in enumerate(vocab)}

    rng = np.random.default_rng(seed)
    rows = len(vocab) + (cfg.bucket_count if cfg.use_subwords else 0)
    bound = 1.0 / cfg.dimension
    input_vectors = rng.uniform(-bound, bound, size=(rows, cfg.dimension))
    if cfg.objective == "hierarchical-softmax":
        output_vectors = np.zeros((max(len(vocab) - 1, 1), cfg.dimension))
    else:
        output_vectors = np.zeros((len(vocab), cfg.dimension))

    model = EmbeddingModel(
        config=cfg,
        vocab=vocab,
        counts=vocab_counts,
        input_vectors=input_vectors,
        output_vectors=output_vectors,
        seed=seed,
    )

    points, codes = build_huffman(vocab_counts)
    neg_table = None
    if cfg.objective == "negative-sampling":
        weights = np.asarray(vocab_counts, dtype=np.float64) ** 0.75
        table = np.repeat(
            np.arange(len(vocab)),
            np.maximum(1, np.round(weights / weights.sum() * 100_000).astype(int)),
        )
        neg_table = table

    encoded = [
        [index[t] for t in sentence if t in index] for sentence in sentences
    ]
    encoded = [s for s in encoded if s]
    words_per_epoch = sum(len(s) for s in encoded)
    total_words = words_per_epoch * cfg.epochs
    progress = [0]

    for _ in range(cfg.epochs):
        if cfg.workers <= 1:
            _train_stream(
                encoded, model, points, codes, neg_table, cfg, rng, total_words, progress
            )
        else:
            chunks = [encoded[i :: cfg.workers] for i in range(cfg.workers)]
            threads = []
            for w, chunk in enumerate(chunks):
                worker_rng = np.random.default_rng((seed, w, progress[0]))
                threads.append(
                    threading.Thread(
                        target=_train_stream,
                        args=(
                            chunk, model, points, codes, neg_table, cfg,
                            worker_rng, total_words, progress,
                        ),
                    )
                )
            for t in threads:
                t.start()
            for t in threads:
                t.join()
    model._composed = None
    return model


# --- serialization -----------------------------------------------------------


def save_embedding(model: EmbeddingModel, path: Path) -> None:
    header = {
        "config": asdict(model.config),
        "vocab": model.vocab,
        "counts": model.counts,
        "seed": model.seed,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for matrix in (model.input_vectors, model.output_vectors):
            fh.write(struct.pack("<QQ", matrix.shape[0], matrix.shape[1]))
            fh.write(np.ascontiguousarray(matrix, dtype="<f8").tobytes())


def load_embedding(path: Path) -> EmbeddingModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise EmbeddingError(f"{path}: not an embedding model file")
        version = struct.unpack("<I", fh.read(4))[0]
        if version != FORMAT_VERSION:
            raise EmbeddingError(f"{path}: unsupported version {version}")
        blob_len = struct.unpack("<I", fh.read(4))[0]
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        matrices = []
        for _ in range(2):
            nrows, ncols = struct.unpack("<QQ", fh.read(16))
            data = np.frombuffer(fh.read(nrows * ncols * 8), dtype="<f8")
            matrices.append(data.reshape(nrows, ncols).copy())
    cfg = EmbeddingConfig(**header["config"])
    return EmbeddingModel(
        config=cfg,
        vocab=header["vocab"],
        counts=header["counts"],
        input_vectors=matrices[0],
        output_vectors=matrices[1],
        seed=header.get("seed", 0),
    )


def dump_vectors_text(model: EmbeddingModel, path: Path, precision: int = 6) -> None:
    """Plain-text dump (word + d floats per line) for inspection."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(model.vocab)} {model.dimension}\n")
        matrix = model.composed_matrix()
        for i, word in enumerate(model.vocab):
            vals = " ".join(f"{x:.{precision}f}" for x in matrix[i])
            fh.write(f"{word} {vals}\n")


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity with the zero-vector convention of 0."""
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))
