"""IDF-weighted embedding-similarity baseline.

A word-level skip-gram (no subwords) is trained on the clustered,
un-augmented class descriptions; ranking scores a query against each class
with the symmetric IDF-weighted maximum-cosine similarity. Query words
unknown to the embedding contribute cosine 0; query words outside the IDF
vocabulary weigh ln(N/1).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import ClusterCard, Corpus, RankedResult, build_catalog, render_results
from .embedding import (
    EmbeddingConfig,
    EmbeddingModel,
    load_embedding,
    save_embedding,
    train_embedding,
)


class BaselineError(ValueError):
    pass


@dataclass
class BaselineIndex:
    embedding: EmbeddingModel
    idf: dict[str, float]
    descriptions: list[list[str]]  # class id -> tokens
    class_index: list[str]
    catalog: list[ClusterCard]
    n_docs: int
    _desc_matrices: list[np.ndarray] = field(default_factory=list, repr=False)

    def default_idf(self) -> float:
        # unseen query words count as document frequency 1
        return math.log(self.n_docs)

    def _normalized(self, word: str) -> np.ndarray:
        vec = self.embedding.embed_word(word)
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def desc_matrix(self, class_id: int) -> np.ndarray:
        if not self._desc_matrices:
            self._desc_matrices = [
                np.stack([self._normalized(w) for w in tokens])
                for tokens in self.descriptions
            ]
        return self._desc_matrices[class_id]


def build_baseline_index(
    corpus: Corpus,
    seed: int,
    cfg: EmbeddingConfig | None = None,
) -> BaselineIndex:
    """Word-level skip-gram plus an IDF table over the class descriptions."""
    descriptions = [
        corpus.cluster_by_id(cid).canonical_tokens for cid in corpus.class_index
    ]
    if not descriptions:
        raise BaselineError("empty corpus")
    if cfg is None:
        cfg = EmbeddingConfig()
    cfg.use_subwords = False
    embedding = train_embedding(descriptions, cfg, seed=seed)

    n_docs = len(descriptions)
    df: dict[str, int] = {}
    for tokens in descriptions:
        for token in set(tokens):
            df[token] = df.get(token, 0) + 1
    idf = {w: math.log(n_docs / c) for w, c in df.items()}
    return BaselineIndex(
        embedding=embedding,
        idf=idf,
        descriptions=descriptions,
        class_index=list(corpus.class_index),
        catalog=build_catalog(corpus),
        n_docs=n_docs,
    )


def similarity(index: BaselineIndex, query: list[str], class_id: int) -> float:
    """Symmetric IDF-weighted max-cosine similarity of query and one class."""
    dmat = index.desc_matrix(class_id)
    qmat = np.stack([index._normalized(w) for w in query])
    cos = qmat @ dmat.T  # (n_query, n_desc)

    def asym(weights: list[float], best: np.ndarray) -> float:
        total = sum(weights)
        if total <= 0:
            return 0.0
        return float(sum(w * b for w, b in zip(weights, best)) / total)

    q_weights = [index.idf.get(w, index.default_idf()) for w in query]
    d_weights = [index.idf[w] for w in index.descriptions[class_id]]
    forward = asym(q_weights, cos.max(axis=1))
    backward = asym(d_weights, cos.max(axis=0))
    return 0.5 * (forward + backward)


def rank_by_similarity(
    index: BaselineIndex, query: list[str], k: int
) -> list[RankedResult]:
    """Full-corpus scan ranking; ties break by ascending class id."""
    if not query:
        raise BaselineError("unanswerable query: no tokens left after preprocessing")
    C = len(index.class_index)
    if not (1 <= k <= C):
        raise BaselineError(f"k must be in [1, {C}]")
    scores = [similarity(index, query, c) for c in range(C)]
    order = sorted(range(C), key=lambda c: (-scores[c], c))
    ranking = [(c, float(scores[c])) for c in order[:k]]
    return render_results(index.catalog, ranking)


# --- serialization -----------------------------------------------------------


def save_baseline_index(index: BaselineIndex, directory: Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_embedding(index.embedding, directory / "embedding.bin")
    with open(directory / "idf.tsv", "w", encoding="utf-8") as fh:
        for word in sorted(index.idf):
            fh.write(f"{word}\t{index.idf[word]:.12g}\n")
    snapshot = {
        "descriptions": index.descriptions,
        "class_index": index.class_index,
        "catalog": [card.__dict__ for card in index.catalog],
        "n_docs": index.n_docs,
    }
    (directory / "descriptions.json").write_text(
        json.dumps(snapshot, sort_keys=True), encoding="utf-8"
    )


def load_baseline_index(directory: Path) -> BaselineIndex:
    directory = Path(directory)
    embedding = load_embedding(directory / "embedding.bin")
    idf = {}
    for line in (directory / "idf.tsv").read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        word, value = line.split("\t")
        idf[word] = float(value)
    snapshot = json.loads((directory / "descriptions.json").read_text(encoding="utf-8"))
    return BaselineIndex(
        embedding=embedding,
        idf=idf,
        descriptions=snapshot["descriptions"],
        class_index=snapshot["class_index"],
        catalog=[ClusterCard(**card) for card in snapshot["catalog"]],
        n_docs=snapshot["n_docs"],
    )
