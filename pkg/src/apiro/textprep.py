"""Text normalization shared by the corpus, augmentation, and query paths.

The pipeline is: strip noise characters, lower-case, drop stop words,
lemmatize. Queries and corpus descriptions go through the exact same code so
the two surfaces can never diverge. The module also hosts the noun-candidate
workflow used to grow the immutable-word corpus tool by tool.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

TOKEN_RE = re.compile(r"^[a-z0-9_-]+$")
_NOISE_RE = re.compile(r"[^A-Za-z0-9_\-\s]+")

_VOWELS = set("aeiou")
_SIBILANT_ENDINGS = ("ss", "zz", "x", "ch", "sh")


class LexiconError(ValueError):
    """Malformed lexicon file or inconsistent lexicon contents."""


def strip_noise(text: str) -> str:
    """Delete every character outside [A-Za-z0-9_-] and whitespace."""
    return _NOISE_RE.sub("", text)


def _read_lexicon_lines(path: Path) -> list[str]:
    lines = []
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        lines.append(line)
    return lines


def load_word_set(path: Path) -> set[str]:
    """One word per line; '#' comments. Entries are noise-normalized."""
    words = set()
    for line in _read_lexicon_lines(path):
        word = strip_noise(line.lower())
        if word:
            words.add(word)
    return words


def load_word_table(path: Path) -> dict[str, str]:
    """word<TAB>value per line; '#' comments."""
    table = {}
    for line in _read_lexicon_lines(path):
        if "\t" not in line:
            raise LexiconError(f"{path}: expected word<TAB>value, got {line!r}")
        word, value = line.split("\t", 1)
        table[word.strip().lower()] = value.strip().lower()
    return table


def load_word_list_table(path: Path) -> dict[str, list[str]]:
    """word<TAB>comma-separated values per line."""
    table = {}
    for word, value in load_word_table(path).items():
        table[word] = [v.strip() for v in value.split(",") if v.strip()]
    return table


@dataclass(frozen=True)
class Lexicons:
    """Bundled word resources backing preprocessing and augmentation."""

    stop_words: frozenset[str]
    lemma_exceptions: dict[str, str]
    base_wordlist: frozenset[str]
    pos_lexicon: dict[str, str]
    misspelling_dict: dict[str, list[str]]
    thesaurus: dict[str, list[str]]
    paraphrases: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for word, target in self.lemma_exceptions.items():
            if target != word and target not in self.base_wordlist:
                raise LexiconError(
                    f"lemma target {target!r} (for {word!r}) is neither "
                    "self-mapped nor in the base wordlist"
                )


def _data_path(name: str) -> Path:
    return Path(str(resources.files("apiro").joinpath("data", name)))


def default_lexicons() -> Lexicons:
    """Load the bundled lexicon set."""
    return Lexicons(
        stop_words=frozenset(load_word_set(_data_path("stopwords.txt"))),
        lemma_exceptions=load_word_table(_data_path("lemma_exceptions.txt")),
        base_wordlist=frozenset(load_word_set(_data_path("base_wordlist.txt"))),
        pos_lexicon=load_word_table(_data_path("pos_lexicon.txt")),
        misspelling_dict=load_word_list_table(_data_path("misspellings.txt")),
        thesaurus=load_word_list_table(_data_path("thesaurus.txt")),
        paraphrases=load_word_list_table(_data_path("paraphrases.txt")),
    )


class RuleLemmatizer:
    """Deterministic suffix-rule lemmatizer with an exception table.

    Any object with a ``lemma(word) -> str`` method can stand in for it, so a
    richer lemmatizer can be plugged into :func:`preprocess_text`.
    """

    def __init__(self, exceptions: dict[str, str], base_words: frozenset[str]):
        self.exceptions = exceptions
        self.base_words = base_words

    def lemma(self, word: str) -> str:
        if word in self.exceptions:
            return self.exceptions[word]
        if len(word) <= 3:
            return word
        if word.endswith("ies") and len(word) > 4:
            return word[:-3] + "y"
        if word.endswith("es"):
            stem = word[:-2]
            if stem.endswith(_SIBILANT_ENDINGS) and len(stem) >= 3:
                return stem
        if word.endswith("s") and not word.endswith(("ss", "us", "is")):
            return word[:-1]
        for suffix in ("ing", "ed"):
            if word.endswith(suffix) and len(word) > len(suffix) + 1:
                stem = word[: -len(suffix)]
                validated = self._validate_stem(stem)
                if validated is not None:
                    return validated
        return word

    def _validate_stem(self, stem: str) -> str | None:
        candidates = []
        if len(stem) >= 3:
            candidates.append(stem)
        candidates.append(stem + "e")
        # doubled-consonant repair: getting -> gett -> get
        if (
            len(stem) >= 3
            and stem[-1] == stem[-2]
            and stem[-1] not in _VOWELS
        ):
            candidates.append(stem[:-1])
        for cand in candidates:
            if cand in self.base_words:
                return cand
        return None


def tokenize(raw: str) -> list[str]:
    """Noise removal + whitespace split, preserving case."""
    return strip_noise(raw).split()


def preprocess_text(raw: str, lex: Lexicons, lemmatizer=None) -> list[str]:
    """Normalize raw text to the canonical token sequence.

    Noise characters are deleted (so "e.g.," becomes "eg"), tokens are
    lower-cased, stop words dropped, and the remainder lemmatized. Stop-word
    lookup happens on the lower-cased form, making it case-insensitive.
    """
    if lemmatizer is None:
        lemmatizer = RuleLemmatizer(lex.lemma_exceptions, lex.base_wordlist)
    tokens = []
    for token in tokenize(raw):
        token = token.lower()
        if token in lex.stop_words:
            continue
        token = lemmatizer.lemma(token)
        if token and token not in lex.stop_words:
            tokens.append(token)
    return tokens


def preprocess_query(raw: str, lex: Lexicons, lemmatizer=None) -> list[str]:
    """Query pipeline; intentionally the same implementation as the corpus path."""
    return preprocess_text(raw, lex, lemmatizer=lemmatizer)


@dataclass
class ImmutableCorpus:
    """Words that augmentation must never alter, with per-tool provenance."""

    words: set[str] = field(default_factory=set)
    provenance: dict[str, list[str]] = field(default_factory=dict)

    def add(self, word: str, tool_id: str | None = None) -> None:
        if not TOKEN_RE.match(word):
            raise LexiconError(f"immutable word {word!r} is not a single clean token")
        self.words.add(word)
        if tool_id is not None:
            tools = self.provenance.setdefault(word, [])
            if tool_id not in tools:
                tools.append(tool_id)

    def __contains__(self, word: str) -> bool:
        return word in self.words


@dataclass
class NounAggregate:
    """Nouns already presented for labeling across earlier tools."""

    words: set[str] = field(default_factory=set)


def load_immutable_corpus(path: Path | None = None) -> ImmutableCorpus:
    """Load an immutable-word corpus file (default: the bundled list)."""
    if path is None:
        path = _data_path("immutable_corpus.txt")
    corpus = ImmutableCorpus()
    for line in _read_lexicon_lines(Path(path)):
        corpus.add(line.lower())
    return corpus


def save_immutable_corpus(corpus: ImmutableCorpus, path: Path) -> None:
    lines = [f"{w}" for w in sorted(corpus.words)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def extract_noun_candidates(
    corpus,
    lex: Lexicons,
    agg: NounAggregate,
) -> list[str]:
    """Nouns of a tool's processed descriptions not yet analyzed, by frequency.

    ``corpus`` is a Corpus (its records' token sequences are used) or any
    iterable of token sequences. Unknown words default to NOUN: unfamiliar
    domain terms are overwhelmingly nouns and must surface for human
    inspection. ``agg`` is not mutated.
    """
    if hasattr(corpus, "records"):
        sequences: Iterable[list[str]] = (r.description_tokens for r in corpus.records)
    else:
        sequences = corpus
    counts: dict[str, int] = {}
    for tokens in sequences:
        for token in tokens:
            if lex.pos_lexicon.get(token, "NOUN") != "NOUN":
                continue
            if token in agg.words:
                continue
            counts[token] = counts.get(token, 0) + 1
    return sorted(counts, key=lambda w: (-counts[w], w))


def build_immutable_corpus(
    labels: dict[str, int],
    candidates: Iterable[str],
    immutable: ImmutableCorpus,
    agg: NounAggregate,
    tool_id: str | None = None,
) -> tuple[ImmutableCorpus, NounAggregate]:
    """Fold one tool's labeling round into the immutable corpus.

    Words labeled 1 join the immutable corpus; every labeled word joins the
    aggregate so later tools skip it. Labels for words that were never
    presented are rejected.
    """
    candidate_set = set(candidates)
    unknown = sorted(set(labels) - candidate_set)
    if unknown:
        raise LexiconError(f"labels for words never presented: {unknown}")
    for word, value in labels.items():
        if value not in (0, 1):
            raise LexiconError(f"label for {word!r} must be 0 or 1, got {value!r}")
        if value == 1:
            immutable.add(word, tool_id)
        agg.words.add(word)
    return immutable, agg
