"""Unified API corpus: ingestion adapters, merging, and description clustering.

Per-tool extraction files are normalized into ApiRecords, merged with set
semantics on a content-hash record id, and records whose processed
descriptions are identical within one tool are collapsed into ApiClusters,
which become the classes of the ranker.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

logger = logging.getLogger(__name__)

from .textprep import Lexicons, preprocess_text

FORMAT_KINDS = ("structured-rest", "structured-code-api", "tabular-commands")


class IngestError(ValueError):
    """Source document violates the extraction contract."""


@dataclass
class RawEntry:
    """One extraction entry of a source document."""

    signature: str
    description: str
    parameters: str = ""
    returns: str = ""


@dataclass
class SourceDocument:
    """Pre-extracted API documentation for one (tool, document) pair."""

    tool_id: str
    doc_id: str
    format_kind: str
    records: list[RawEntry]

    def validate(self) -> None:
        if self.format_kind not in FORMAT_KINDS:
            raise IngestError(f"unknown format_kind {self.format_kind!r}")
        for i, entry in enumerate(self.records):
            if not entry.signature.strip():
                raise IngestError(
                    f"{self.tool_id}/{self.doc_id}: entry {i} has empty signature"
                )


@dataclass
class ApiRecord:
    record_id: str
    tool_id: str
    signature: str
    description_raw: str
    description_tokens: list[str] = field(default_factory=list)
    parameters: str = ""
    returns: str = ""
    cluster_id: str | None = None


@dataclass
class ApiCluster:
    cluster_id: str
    tool_id: str
    member_record_ids: list[str]
    canonical_tokens: list[str] = field(default_factory=list)
    category: int | None = None


@dataclass
class Corpus:
    records: list[ApiRecord]
    clusters: list[ApiCluster]
    class_index: list[str]  # position = class id, value = cluster_id

    def record_by_id(self, record_id: str) -> ApiRecord:
        record = self._record_map().get(record_id)
        if record is None:
            raise KeyError(record_id)
        return record

    def cluster_by_id(self, cluster_id: str) -> ApiCluster:
        if not hasattr(self, "_cluster_cache") or len(self._cluster_cache) != len(self.clusters):
            self._cluster_cache = {c.cluster_id: c for c in self.clusters}
        cluster = self._cluster_cache.get(cluster_id)
        if cluster is None:
            raise KeyError(cluster_id)
        return cluster

    def class_of_record(self, record_id: str) -> int:
        record = self.record_by_id(record_id)
        if not hasattr(self, "_class_cache") or len(self._class_cache) != len(self.class_index):
            self._class_cache = {cid: i for i, cid in enumerate(self.class_index)}
        return self._class_cache[record.cluster_id]

    def _record_map(self) -> dict[str, ApiRecord]:
        if not hasattr(self, "_record_cache") or len(self._record_cache) != len(self.records):
            self._record_cache = {r.record_id: r for r in self.records}
        return self._record_cache

    def tool_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for record in self.records:
            seen.setdefault(record.tool_id, None)
        return list(seen)


def record_id_for(tool_id: str, doc_id: str, signature: str) -> str:
    digest = hashlib.sha1(f"{tool_id}\x00{doc_id}\x00{signature}".encode()).hexdigest()
    return digest[:16]


def ingest_document(doc: SourceDocument) -> list[ApiRecord]:
    """Normalize one source document into ApiRecords.

    Entries without a description are rejected (reported with their position);
    a duplicate signature within one document signals an extraction bug and is
    a hard error.
    """
    doc.validate()
    seen_signatures: set[str] = set()
    records = []
    rejected = []
    for i, entry in enumerate(doc.records):
        if entry.signature in seen_signatures:
            raise IngestError(
                f"{doc.tool_id}/{doc.doc_id}: duplicate signature at entry {i}: "
                f"{entry.signature!r}"
            )
        seen_signatures.add(entry.signature)
        if not entry.description.strip():
            rejected.append(i)
            continue
        records.append(
            ApiRecord(
                record_id=record_id_for(doc.tool_id, doc.doc_id, entry.signature),
                tool_id=doc.tool_id,
                signature=entry.signature,
                description_raw=entry.description,
                parameters=entry.parameters or "",
                returns=entry.returns or "",
            )
        )
    if rejected:
        logger.warning(
            "%s/%s: rejected %d entries without description at positions %s",
            doc.tool_id,
            doc.doc_id,
            len(rejected),
            rejected,
        )
    return records


def merge_corpora(docs: Iterable[SourceDocument]) -> Corpus:
    """Union all documents' records into one corpus (set semantics on record_id).

    Clusters are not formed yet: each record starts as its own singleton class.
    """
    by_id: dict[str, ApiRecord] = {}
    for doc in docs:
        for record in ingest_document(doc):
            existing = by_id.get(record.record_id)
            if existing is not None:
                same = (
                    existing.tool_id == record.tool_id
                    and existing.signature == record.signature
                    and existing.description_raw == record.description_raw
                    and existing.parameters == record.parameters
                    and existing.returns == record.returns
                )
                if not same:
                    raise IngestError(
                        f"record_id collision: {record.record_id} maps to "
                        f"conflicting content for {record.tool_id}/"
                        f"{record.signature!r}"
                    )
                continue
            by_id[record.record_id] = record
    records = sorted(by_id.values(), key=lambda r: (r.tool_id, r.record_id))
    clusters = []
    for record in records:
        cluster_id = f"cl_{record.record_id}"
        record.cluster_id = cluster_id
        clusters.append(
            ApiCluster(
                cluster_id=cluster_id,
                tool_id=record.tool_id,
                member_record_ids=[record.record_id],
            )
        )
    class_index = [c.cluster_id for c in clusters]
    return Corpus(records=records, clusters=clusters, class_index=class_index)


def preprocess_corpus(corpus: Corpus, lex: Lexicons) -> Corpus:
    """Fill description_tokens on every record (in place) and return the corpus."""
    for record in corpus.records:
        record.description_tokens = preprocess_text(record.description_raw, lex)
    return corpus


def cluster_apis(corpus: Corpus) -> Corpus:
    """Merge records with identical (tool, processed description) into clusters.

    Clustering is per tool: the same description text in two different tools
    yields two separate classes. Returns a new Corpus with a dense class index.
    """
    for record in corpus.records:
        if not record.description_tokens:
            raise IngestError(
                f"record {record.record_id} has no description tokens; "
                "run preprocessing before clustering"
            )
    groups: dict[tuple[str, tuple[str, ...]], list[ApiRecord]] = {}
    for record in corpus.records:
        key = (record.tool_id, tuple(record.description_tokens))
        groups.setdefault(key, []).append(record)

    clusters = []
    for (tool_id, tokens), members in groups.items():
        members = sorted(members, key=lambda r: r.record_id)
        digest = hashlib.sha1(
            ("\x00".join((tool_id,) + tokens)).encode()
        ).hexdigest()[:16]
        cluster_id = f"cl_{digest}"
        cluster = ApiCluster(
            cluster_id=cluster_id,
            tool_id=tool_id,
            member_record_ids=[r.record_id for r in members],
            canonical_tokens=list(tokens),
        )
        cluster.category = _infer_category([r.signature for r in members])
        for record in members:
            record.cluster_id = cluster_id
        clusters.append(cluster)

    clusters.sort(key=lambda c: c.cluster_id)
    class_index = [c.cluster_id for c in clusters]
    return Corpus(records=list(corpus.records), clusters=clusters, class_index=class_index)


_REST_SIG_RE = re.compile(r"^(get|put|post|delete|patch|head|options)\s+/", re.I)


def _representation_kind(signature: str) -> str:
    if _REST_SIG_RE.match(signature.strip()):
        return "rest"
    head = signature.strip().split()[0]
    if "(" in signature and "." in head:
        return "code"
    return "command"


def _split_code_signature(signature: str) -> tuple[str, str]:
    name = signature.split("(", 1)[0].strip()
    if "." in name:
        prefix, method = name.rsplit(".", 1)
    else:
        prefix, method = "", name
    return prefix, method


def _normalized_rest_path(signature: str) -> str:
    # drop parameter segments like {sid} or [hash] so variants compare equal
    parts = [p for p in signature.strip().lower().split("/") if p]
    kept = [p for p in parts if not (p.startswith("{") or p.startswith("["))]
    return "/".join(kept)


def _infer_category(signatures: list[str]) -> int | None:
    """Heuristic Table-style category of a multi-member cluster (metadata only)."""
    if len(signatures) < 2:
        return None
    kinds = {_representation_kind(s) for s in signatures}
    if len(kinds) > 1:
        return 4
    kind = next(iter(kinds))
    if kind == "code":
        parts = [_split_code_signature(s) for s in signatures]
        prefixes = {p for p, _ in parts}
        methods = {m for _, m in parts}
        if len(prefixes) == 1 and len(methods) == 1:
            return 3
        if len(prefixes) == 1:
            return 2
        if len(methods) == 1:
            return 1
        return 2
    if kind == "rest":
        if len({_normalized_rest_path(s) for s in signatures}) == 1:
            return 3
        return 2
    return 4 if len({s.split()[0] for s in signatures}) > 1 else 3


# --- result rendering ---------------------------------------------------------


@dataclass
class ClusterCard:
    """Display fields of one class, shared by every ranking surface."""

    cluster_id: str
    tool: str
    signatures: list[str]
    description: str
    parameters: str
    returns: str


@dataclass
class RankedResult:
    rank: int  # 1-based
    class_id: int
    cluster_id: str
    score: float
    tool: str
    signatures: list[str]
    description: str
    parameters: str
    returns: str


def build_catalog(corpus: Corpus) -> list[ClusterCard]:
    """Render info per class, aligned with the corpus class index."""
    cards = []
    for cluster_id in corpus.class_index:
        cluster = corpus.cluster_by_id(cluster_id)
        members = [corpus.record_by_id(rid) for rid in cluster.member_record_ids]
        head = members[0]
        cards.append(
            ClusterCard(
                cluster_id=cluster_id,
                tool=cluster.tool_id,
                signatures=[m.signature for m in members],
                description=head.description_raw,
                parameters=head.parameters,
                returns=head.returns,
            )
        )
    return cards


def render_results(
    catalog: list[ClusterCard], ranking: list[tuple[int, float]]
) -> list[RankedResult]:
    """Attach catalog fields to (class_id, score) pairs, ranks dense from 1."""
    results = []
    for rank, (class_id, score) in enumerate(ranking, start=1):
        card = catalog[class_id]
        results.append(
            RankedResult(
                rank=rank,
                class_id=class_id,
                cluster_id=card.cluster_id,
                score=score,
                tool=card.tool,
                signatures=list(card.signatures),
                description=card.description,
                parameters=card.parameters,
                returns=card.returns,
            )
        )
    return results


# --- corpus file + adapter config IO ---------------------------------------

CORPUS_FIELDS = ("tool", "doc", "signature", "description", "parameters", "returns")


def write_corpus_file(docs: Iterable[SourceDocument], path: Path) -> None:
    """Line-delimited corpus interchange file (one object per line)."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            for entry in doc.records:
                fh.write(
                    json.dumps(
                        {
                            "tool": doc.tool_id,
                            "doc": doc.doc_id,
                            "signature": entry.signature,
                            "description": entry.description,
                            "parameters": entry.parameters,
                            "returns": entry.returns,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )


def read_corpus_file(path: Path) -> list[SourceDocument]:
    """Read a line-delimited corpus file back into SourceDocuments.

    format_kind is not part of the interchange contract; documents read back
    are tagged tabular-commands, which imposes no extra structure.
    """
    docs: dict[tuple[str, str], SourceDocument] = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            missing = [f for f in ("tool", "doc", "signature", "description") if f not in row]
            if missing:
                raise IngestError(f"{path}:{n}: missing fields {missing}")
            key = (row["tool"], row["doc"])
            doc = docs.get(key)
            if doc is None:
                doc = SourceDocument(
                    tool_id=row["tool"],
                    doc_id=row["doc"],
                    format_kind="tabular-commands",
                    records=[],
                )
                docs[key] = doc
            doc.records.append(
                RawEntry(
                    signature=row["signature"],
                    description=row["description"],
                    parameters=row.get("parameters", "") or "",
                    returns=row.get("returns", "") or "",
                )
            )
    return list(docs.values())


_FIELD_TOKEN_RE = re.compile(r"\{([a-zA-Z0-9_]+)\}")


def load_source_document(descriptor: dict, base_dir: Path) -> SourceDocument:
    """Build a SourceDocument from an adapter descriptor.

    The descriptor names the tool, doc, format_kind, source file, and field
    paths; the signature is a template over source fields, e.g.
    "{method} {path}".
    """
    for required in ("tool", "doc", "format_kind", "source", "fields"):
        if required not in descriptor:
            raise IngestError(f"adapter descriptor missing {required!r}")
    fields = descriptor["fields"]
    source_path = Path(base_dir) / descriptor["source"]
    if not source_path.exists():
        raise IngestError(f"source file not found: {source_path}")
    payload = json.loads(source_path.read_text(encoding="utf-8"))
    rows = payload.get(fields["records"])
    if rows is None:
        raise IngestError(
            f"{source_path}: records path {fields['records']!r} not present"
        )
    template = fields["signature"]
    entries = []
    for row in rows:
        signature = _FIELD_TOKEN_RE.sub(lambda m: str(row.get(m.group(1), "")), template)
        entries.append(
            RawEntry(
                signature=signature.strip(),
                description=str(row.get(fields.get("description", "description"), "") or ""),
                parameters=str(row.get(fields.get("parameters", ""), "") or ""),
                returns=str(row.get(fields.get("returns", ""), "") or ""),
            )
        )
    return SourceDocument(
        tool_id=descriptor["tool"],
        doc_id=descriptor["doc"],
        format_kind=descriptor["format_kind"],
        records=entries,
    )


def load_manifest(manifest_path: Path) -> list[SourceDocument]:
    """Load every document listed in an adapter manifest file."""
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    docs = []
    for descriptor in manifest.get("documents", []):
        docs.append(load_source_document(descriptor, manifest_path.parent))
    if not docs:
        raise IngestError(f"{manifest_path}: no documents declared")
    return docs


# --- processed-corpus artifact ----------------------------------------------


def corpus_to_dict(corpus: Corpus) -> dict:
    return {
        "records": [
            {
                "record_id": r.record_id,
                "tool_id": r.tool_id,
                "signature": r.signature,
                "description_raw": r.description_raw,
                "description_tokens": r.description_tokens,
                "parameters": r.parameters,
                "returns": r.returns,
                "cluster_id": r.cluster_id,
            }
            for r in corpus.records
        ],
        "clusters": [
            {
                "cluster_id": c.cluster_id,
                "tool_id": c.tool_id,
                "member_record_ids": c.member_record_ids,
                "canonical_tokens": c.canonical_tokens,
                "category": c.category,
            }
            for c in corpus.clusters
        ],
        "class_index": corpus.class_index,
    }


def corpus_from_dict(payload: dict) -> Corpus:
    records = [ApiRecord(**r) for r in payload["records"]]
    clusters = [ApiCluster(**c) for c in payload["clusters"]]
    return Corpus(records=records, clusters=clusters, class_index=payload["class_index"])


def save_processed_corpus(corpus: Corpus, path: Path, seed: int | None = None) -> None:
    payload = corpus_to_dict(corpus)
    if seed is not None:
        payload["seed"] = seed
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_processed_corpus(path: Path) -> Corpus:
    return corpus_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
