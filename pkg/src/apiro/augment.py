"""Semantics-preserving augmentation of API descriptions.

Each enabled technique produces exactly one variant per class description.
Words in the immutable corpus (and stop words) are pinned: they are never
deleted, swapped, split, or substituted, and inserted tokens are always
mutable. Descriptions whose tokens are all pinned emit the original flagged
as degenerate so the count law stays auditable. Pretrained-vector and
transformer techniques are not run in process; their output is admitted
through the external ingestion format below.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus
from .embedding import EmbeddingModel
from .textprep import ImmutableCorpus, Lexicons, preprocess_text

APPROACHES = (
    "random-word",
    "spelling",
    "split",
    "synonym",
    "tfidf",
    "embedding-neighbor",
    "external",
)
ACTIONS = ("swap", "delete", "substitute", "insert", "split")


class AugmentError(ValueError):
    pass


@dataclass(frozen=True)
class AugTechnique:
    technique_id: str
    approach: str
    action: str
    intensity: float = 0.3
    top_n: int = 10
    source: str = ""

    def __post_init__(self) -> None:
        if self.approach not in APPROACHES:
            raise AugmentError(f"unknown approach {self.approach!r}")
        if self.action not in ACTIONS:
            raise AugmentError(f"unknown action {self.action!r}")
        if not (0.0 < self.intensity <= 1.0):
            raise AugmentError("intensity must be in (0, 1]")


def default_techniques() -> list[AugTechnique]:
    """The in-process technique registry."""
    return [
        AugTechnique("dat01_swap", "random-word", "swap"),
        AugTechnique("dat02_delete", "random-word", "delete"),
        AugTechnique("dat03_spelling", "spelling", "substitute", source="misspellings"),
        AugTechnique("dat04_split", "split", "split"),
        AugTechnique("dat05_synonym", "synonym", "substitute", source="thesaurus"),
        AugTechnique("dat06_paraphrase", "synonym", "substitute", source="paraphrases"),
        AugTechnique("dat07_tfidf_ins", "tfidf", "insert"),
        AugTechnique("dat08_tfidf_subs", "tfidf", "substitute"),
        AugTechnique("emb_neighbor_subs", "embedding-neighbor", "substitute"),
    ]


def external_technique(technique_id: str, source: str) -> AugTechnique:
    return AugTechnique(technique_id, "external", "substitute", source=source)


@dataclass
class AugmentedExample:
    example_id: str
    base_record_id: str
    technique_id: str
    tokens: list[str]
    selection_label: int | None = None
    degenerate: bool = False


@dataclass
class SelectionReport:
    s_scores: dict[str, float]
    m_score: float
    selected: set[str]
    n: int
    beta: int
    alpha: int


def _class_rng(seed: int, cluster_id: str, technique_id: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{cluster_id}:{technique_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _ops_count(p: float, available: int) -> int:
    """How many tokens an intensity-p pass acts on (floor, minimum 1)."""
    return max(1, int(p * available))


class _TfidfStats:
    """TF-IDF over the class descriptions, for position and replacement choice."""

    def __init__(self, descriptions: list[list[str]]):
        self.n_docs = len(descriptions)
        self.df: dict[str, int] = {}
        self.freq: dict[str, int] = {}
        for tokens in descriptions:
            for token in set(tokens):
                self.df[token] = self.df.get(token, 0) + 1
            for token in tokens:
                self.freq[token] = self.freq.get(token, 0) + 1

    def idf(self, token: str) -> float:
        return math.log(self.n_docs / self.df.get(token, 1))

    def tfidf(self, tokens: list[str], position: int) -> float:
        token = tokens[position]
        tf = tokens.count(token)
        return tf * self.idf(token)


class _Augmenter:
    def __init__(
        self,
        corpus: Corpus,
        immutable: ImmutableCorpus,
        lex: Lexicons,
        neighbor_model: EmbeddingModel | None,
    ):
        self.corpus = corpus
        self.immutable = immutable
        self.lex = lex
        self.neighbor_model = neighbor_model
        self.descriptions = [
            corpus.cluster_by_id(cid).canonical_tokens for cid in corpus.class_index
        ]
        self.tfidf = _TfidfStats(self.descriptions)
        self._neighbor_cache: dict[str, list[str]] = {}

    # a token is pinned if augmentation must never touch it
    def pinned(self, token: str) -> bool:
        return token in self.immutable or token in self.lex.stop_words

    def eligible_replacement(self, token: str, original: str) -> bool:
        return (
            token != original
            and not self.pinned(token)
            and bool(token)
        )

    def mutable_positions(self, tokens: list[str]) -> list[int]:
        return [i for i, t in enumerate(tokens) if not self.pinned(t)]

    def apply(
        self, tech: AugTechnique, tokens: list[str], rng: np.random.Generator
    ) -> list[str] | None:
        """One augmentation pass; None signals a degenerate description."""
        if tech.approach == "external":
            raise AugmentError(
                f"{tech.technique_id}: external techniques cannot run in-process"
            )
        handler = {
            ("random-word", "swap"): self._swap,
            ("random-word", "delete"): self._delete,
            ("spelling", "substitute"): self._spelling,
            ("split", "split"): self._split,
            ("synonym", "substitute"): self._synonym,
            ("tfidf", "insert"): self._tfidf_insert,
            ("tfidf", "substitute"): self._tfidf_substitute,
            ("embedding-neighbor", "substitute"): self._neighbor_substitute,
        }.get((tech.approach, tech.action))
        if handler is None:
            raise AugmentError(
                f"{tech.technique_id}: unsupported combination "
                f"({tech.approach}, {tech.action})"
            )
        return handler(tech, list(tokens), rng)

    def _swap(self, tech, tokens, rng):
        mutable = self.mutable_positions(tokens)
        if len(mutable) < 2:
            return None
        for _ in range(_ops_count(tech.intensity, len(mutable))):
            m = int(rng.integers(0, len(mutable) - 1))
            a, b = mutable[m], mutable[m + 1]
            tokens[a], tokens[b] = tokens[b], tokens[a]
        return tokens

    def _delete(self, tech, tokens, rng):
        mutable = self.mutable_positions(tokens)
        n_ops = min(
            _ops_count(tech.intensity, len(mutable)),
            len(mutable),
            len(tokens) - 1,
        )
        if n_ops < 1:
            return None
        chosen = rng.choice(len(mutable), size=n_ops, replace=False)
        drop = {mutable[int(i)] for i in chosen}
        return [t for i, t in enumerate(tokens) if i not in drop]

    def _spelling(self, tech, tokens, rng):
        positions = [
            i
            for i in self.mutable_positions(tokens)
            if sum(c.isalpha() for c in tokens[i]) >= 3
        ]
        if not positions:
            return None
        n_ops = min(_ops_count(tech.intensity, len(positions)), len(positions))
        chosen = rng.choice(len(positions), size=n_ops, replace=False)
        for c in chosen:
            i = positions[int(c)]
            word = tokens[i]
            variants = [
                v
                for v in self.lex.misspelling_dict.get(word, [])
                if self.eligible_replacement(v, word)
            ]
            if variants:
                tokens[i] = variants[int(rng.integers(0, len(variants)))]
                continue
            for _ in range(4):
                cand = _synthetic_misspelling(word, rng)
                if self.eligible_replacement(cand, word):
                    tokens[i] = cand
                    break
        return tokens

    def _split(self, tech, tokens, rng):
        cuts_by_position = {}
        for i in self.mutable_positions(tokens):
            word = tokens[i]
            # a cut must not mint an immutable word out of nowhere
            valid = [
                c
                for c in range(1, len(word))
                if word[:c] not in self.immutable and word[c:] not in self.immutable
            ]
            if valid:
                cuts_by_position[i] = valid
        if not cuts_by_position:
            return None
        positions = sorted(cuts_by_position)
        n_ops = min(_ops_count(tech.intensity, len(positions)), len(positions))
        chosen = sorted(
            (positions[int(c)] for c in rng.choice(len(positions), size=n_ops, replace=False)),
            reverse=True,
        )
        for i in chosen:
            word = tokens[i]
            valid = cuts_by_position[i]
            cut = valid[int(rng.integers(0, len(valid)))]
            tokens[i : i + 1] = [word[:cut], word[cut:]]
        return tokens

    def _synonym(self, tech, tokens, rng):
        table = (
            self.lex.paraphrases if tech.source == "paraphrases" else self.lex.thesaurus
        )
        if not table:
            raise AugmentError(f"{tech.technique_id}: synonym lexicon is empty")
        options = {}
        for i in self.mutable_positions(tokens):
            usable = [
                v for v in table.get(tokens[i], []) if self.eligible_replacement(v, tokens[i])
            ]
            if usable:
                options[i] = usable
        if not options:
            return None
        positions = sorted(options)
        n_ops = min(_ops_count(tech.intensity, len(positions)), len(positions))
        chosen = rng.choice(len(positions), size=n_ops, replace=False)
        for c in chosen:
            i = positions[int(c)]
            tokens[i] = options[i][int(rng.integers(0, len(options[i])))]
        return tokens

    def _replacement_pool(self, original: str) -> tuple[list[str], np.ndarray]:
        pool = [
            t for t in sorted(self.tfidf.freq) if self.eligible_replacement(t, original)
        ]
        weights = np.asarray([self.tfidf.freq[t] for t in pool], dtype=np.float64)
        return pool, weights

    def _tfidf_substitute(self, tech, tokens, rng):
        mutable = self.mutable_positions(tokens)
        if not mutable:
            return None
        # low-information positions (small TF-IDF) are likelier to be replaced
        scores = np.asarray([self.tfidf.tfidf(tokens, i) for i in mutable])
        weights = scores.max() - scores
        if weights.sum() <= 0:
            weights = np.ones(len(mutable))
        weights = weights / weights.sum()
        n_ops = min(
            _ops_count(tech.intensity, len(mutable)),
            int((weights > 0).sum()),
        )
        if n_ops < 1:
            return None
        chosen = rng.choice(len(mutable), size=n_ops, replace=False, p=weights)
        for c in chosen:
            i = mutable[int(c)]
            pool, freq = self._replacement_pool(tokens[i])
            if not pool:
                continue
            tokens[i] = pool[int(rng.choice(len(pool), p=freq / freq.sum()))]
        return tokens

    def _tfidf_insert(self, tech, tokens, rng):
        n_ops = _ops_count(tech.intensity, len(self.mutable_positions(tokens)) or 1)
        for _ in range(n_ops):
            pool, freq = self._replacement_pool("")
            if not pool:
                return None
            token = pool[int(rng.choice(len(pool), p=freq / freq.sum()))]
            gap = int(rng.integers(0, len(tokens) + 1))
            tokens.insert(gap, token)
        return tokens

    def _neighbor_substitute(self, tech, tokens, rng):
        if self.neighbor_model is None:
            raise AugmentError(
                f"{tech.technique_id}: no embedding model supplied for "
                "neighbor substitution"
            )
        options = {}
        for i in self.mutable_positions(tokens):
            neighbors = self._neighbors(tokens[i], tech.top_n)
            if neighbors:
                options[i] = neighbors
        if not options:
            return None
        positions = sorted(options)
        n_ops = min(_ops_count(tech.intensity, len(positions)), len(positions))
        chosen = rng.choice(len(positions), size=n_ops, replace=False)
        for c in chosen:
            i = positions[int(c)]
            tokens[i] = options[i][int(rng.integers(0, len(options[i])))]
        return tokens

    def _neighbors(self, token: str, top_n: int) -> list[str]:
        cached = self._neighbor_cache.get(token)
        if cached is None:
            if self.neighbor_model.vocab_index(token) is None:
                cached = []
            else:
                cached = [
                    w
                    for w, _ in self.neighbor_model.nearest_neighbors(token, top_n)
                    if self.eligible_replacement(w, token)
                ]
            self._neighbor_cache[token] = cached
        return cached


def _synthetic_misspelling(word: str, rng: np.random.Generator) -> str:
    """Deterministic seeded typo: double, drop, or transpose one character."""
    letters = [i for i, c in enumerate(word) if c.isalpha()]
    op = int(rng.integers(0, 3))
    if op == 0:  # double a letter
        i = letters[int(rng.integers(0, len(letters)))]
        return word[: i + 1] + word[i] + word[i + 1 :]
    if op == 1 and len(letters) > 1:  # drop a letter
        i = letters[int(rng.integers(0, len(letters)))]
        return word[:i] + word[i + 1 :]
    # transpose two adjacent characters
    pairs = [i for i in letters if i + 1 < len(word) and word[i + 1].isalpha()]
    if not pairs:
        return word + word[-1]
    i = pairs[int(rng.integers(0, len(pairs)))]
    return word[:i] + word[i + 1] + word[i] + word[i + 2 :]


def augment_corpus(
    corpus: Corpus,
    techniques: list[AugTechnique],
    immutable: ImmutableCorpus,
    seed: int,
    lex: Lexicons,
    neighbor_model: EmbeddingModel | None = None,
) -> list[AugmentedExample]:
    """Exactly one variant per (class description, enabled technique).

    Output excludes the originals; the training-set builder appends them.
    Deterministic for a fixed seed: every class gets its own derived stream.
    """
    for tech in techniques:
        if tech.approach == "external":
            raise AugmentError(
                f"{tech.technique_id}: external techniques are ingested from "
                "files, not run in-process"
            )
        if tech.approach == "spelling" and not lex.misspelling_dict:
            raise AugmentError(f"{tech.technique_id}: misspelling lexicon missing")
        if tech.approach == "synonym":
            table = lex.paraphrases if tech.source == "paraphrases" else lex.thesaurus
            if not table:
                raise AugmentError(f"{tech.technique_id}: synonym lexicon missing")

    augmenter = _Augmenter(corpus, immutable, lex, neighbor_model)
    out = []
    for class_id, cluster_id in enumerate(corpus.class_index):
        cluster = corpus.cluster_by_id(cluster_id)
        base_record_id = cluster.member_record_ids[0]
        original = cluster.canonical_tokens
        if not original:
            raise AugmentError(f"class {class_id} ({cluster_id}) has no tokens")
        immutable_multiset = Counter(t for t in original if t in immutable)
        for tech in techniques:
            rng = _class_rng(seed, cluster_id, tech.technique_id)
            variant = augmenter.apply(tech, original, rng)
            degenerate = False
            if variant is not None:
                variant = preprocess_text(" ".join(variant), lex)
                if Counter(t for t in variant if t in immutable) != immutable_multiset:
                    variant = None
            if not variant or variant == list(original):
                variant = list(original)
                degenerate = True
            out.append(
                AugmentedExample(
                    example_id=f"{tech.technique_id}:{cluster_id}",
                    base_record_id=base_record_id,
                    technique_id=tech.technique_id,
                    tokens=variant,
                    degenerate=degenerate,
                )
            )
    return out


def ingest_external_augmentations(
    path: Path,
    corpus: Corpus,
    lex: Lexicons,
    registered_techniques: set[str],
) -> tuple[list[AugmentedExample], list[tuple[int, str]]]:
    """Admit externally generated augmentation rows {technique, record_id, text}.

    Rows are post-processed through the standard pipeline before admission.
    Returns (examples, rejected) where rejected reports (line, reason).
    """
    known_records = {r.record_id for r in corpus.records}
    examples = []
    rejected = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                rejected.append((n, f"bad json: {exc}"))
                continue
            technique = row.get("technique", "")
            record_id = row.get("record_id", "")
            if technique not in registered_techniques:
                rejected.append((n, f"unknown technique {technique!r}"))
                continue
            if record_id not in known_records:
                rejected.append((n, f"unknown record {record_id!r}"))
                continue
            tokens = preprocess_text(str(row.get("text", "")), lex)
            if not tokens:
                rejected.append((n, "empty after post-processing"))
                continue
            examples.append(
                AugmentedExample(
                    example_id=f"{technique}:{record_id}:{n}",
                    base_record_id=record_id,
                    technique_id=technique,
                    tokens=tokens,
                )
            )
    return examples, rejected


def build_selection_sample(
    examples: list[AugmentedExample],
    corpus: Corpus,
    beta: int,
    seed: int,
) -> list[AugmentedExample]:
    """Sample beta classes per tool and keep every technique variant of each.

    Sample size is n_tools * beta * n_techniques.
    """
    if beta == 0:
        return []
    by_class: dict[str, list[AugmentedExample]] = {}
    for example in examples:
        cluster_id = corpus.record_by_id(example.base_record_id).cluster_id
        by_class.setdefault(cluster_id, []).append(example)

    classes_by_tool: dict[str, list[str]] = {}
    for cluster_id in sorted(by_class):
        tool = corpus.cluster_by_id(cluster_id).tool_id
        classes_by_tool.setdefault(tool, []).append(cluster_id)

    rng = np.random.default_rng(seed)
    sample = []
    for tool in sorted(classes_by_tool):
        classes = classes_by_tool[tool]
        if len(classes) < beta:
            raise AugmentError(
                f"tool {tool!r} has only {len(classes)} augmented classes, "
                f"beta={beta} requested"
            )
        chosen = rng.choice(len(classes), size=beta, replace=False)
        for c in sorted(int(i) for i in chosen):
            sample.extend(by_class[classes[c]])
    return sample


def score_and_select(
    sample: list[AugmentedExample], corpus: Corpus
) -> SelectionReport:
    """Selection scores per technique and the strict above-the-mean cut."""
    missing = [e.example_id for e in sample if e.selection_label is None]
    if missing:
        raise AugmentError(f"unlabeled sample rows: {missing}")
    by_technique: dict[str, list[int]] = {}
    tools = set()
    classes = set()
    for example in sample:
        record = corpus.record_by_id(example.base_record_id)
        tools.add(record.tool_id)
        classes.add(record.cluster_id)
        by_technique.setdefault(example.technique_id, []).append(
            example.selection_label
        )
    n = len(tools)
    alpha = len(by_technique)
    sizes = {len(v) for v in by_technique.values()}
    if len(sizes) != 1:
        raise AugmentError(f"uneven technique sample sizes: {sorted(sizes)}")
    per_technique = sizes.pop()
    if per_technique % n != 0:
        raise AugmentError(
            f"sample size {per_technique} per technique is not a multiple of "
            f"{n} tools"
        )
    beta = per_technique // n
    s_scores = {
        tech: sum(labels) / (n * beta) * 100.0
        for tech, labels in by_technique.items()
    }
    m_score = sum(s_scores.values()) / alpha
    selected = {tech for tech, score in s_scores.items() if score > m_score}
    return SelectionReport(
        s_scores=s_scores,
        m_score=m_score,
        selected=selected,
        n=n,
        beta=beta,
        alpha=alpha,
    )


def filter_corpus_by_selection(
    examples: list[AugmentedExample], report: SelectionReport
) -> list[AugmentedExample]:
    """Keep only examples of techniques that scored strictly above the mean."""
    return [e for e in examples if e.technique_id in report.selected]


# --- artifact IO --------------------------------------------------------------


def save_examples(examples: list[AugmentedExample], path: Path, seed: int | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"meta": {"kind": "augmented-examples", "seed": seed}}) + "\n")
        for e in examples:
            fh.write(
                json.dumps(
                    {
                        "example_id": e.example_id,
                        "record_id": e.base_record_id,
                        "technique": e.technique_id,
                        "tokens": e.tokens,
                        "degenerate": e.degenerate,
                        "s_v": e.selection_label,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_examples(path: Path) -> list[AugmentedExample]:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            if "meta" in row:
                continue
            examples.append(
                AugmentedExample(
                    example_id=row["example_id"],
                    base_record_id=row["record_id"],
                    technique_id=row["technique"],
                    tokens=row["tokens"],
                    degenerate=row.get("degenerate", False),
                    selection_label=row.get("s_v"),
                )
            )
    return examples


def load_labels(path: Path) -> dict[tuple[str, str], int]:
    """Label file rows {technique, record_id, s_v}."""
    labels = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            value = int(row["s_v"])
            if value not in (0, 1):
                raise AugmentError(f"{path}:{n}: s_v must be 0 or 1")
            labels[(row["technique"], row["record_id"])] = value
    return labels


def apply_labels(
    sample: list[AugmentedExample], labels: dict[tuple[str, str], int]
) -> list[AugmentedExample]:
    for example in sample:
        key = (example.technique_id, example.base_record_id)
        if key in labels:
            example.selection_label = labels[key]
    return sample


def save_selection_report(report: SelectionReport, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"# m_score={report.m_score:.4f} n={report.n} beta={report.beta} "
            f"alpha={report.alpha}\n"
        )
        for tech in sorted(report.s_scores):
            fh.write(
                f"{tech}\t{report.s_scores[tech]:.4f}\t"
                f"{'selected' if tech in report.selected else 'removed'}\n"
            )


def load_selection_report(path: Path) -> SelectionReport:
    s_scores = {}
    selected = set()
    meta = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for pair in line.lstrip("# ").split():
                key, value = pair.split("=")
                meta[key] = float(value)
            continue
        tech, score, status = line.split("\t")
        s_scores[tech] = float(score)
        if status == "selected":
            selected.add(tech)
    return SelectionReport(
        s_scores=s_scores,
        m_score=meta.get("m_score", 0.0),
        selected=selected,
        n=int(meta.get("n", 0)),
        beta=int(meta.get("beta", 0)),
        alpha=int(meta.get("alpha", len(s_scores))),
    )
