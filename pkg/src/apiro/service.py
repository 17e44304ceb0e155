"""Low-latency query service over an immutable trained model.

Requests are answered from an in-memory model bundle; POST /v1/reload (or a
SIGHUP from the CLI runner) atomically swaps in a freshly loaded bundle, so
in-flight requests keep the model they started with.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .cnn import CnnError, RecommenderModel, load_recommender, predict_topk
from .embedding import load_embedding
from .textprep import Lexicons, default_lexicons, preprocess_query

MAX_K = 10


@dataclass
class ModelBundle:
    model: RecommenderModel
    lexicons: Lexicons
    version: str


def load_bundle(recommender_path: Path, embedding_path: Path) -> ModelBundle:
    embedding = load_embedding(embedding_path)
    model = load_recommender(recommender_path, embedding)
    digest = hashlib.sha256(Path(recommender_path).read_bytes()).hexdigest()[:12]
    return ModelBundle(model=model, lexicons=default_lexicons(), version=digest)


class QueryRequest(BaseModel):
    text: str
    k: int = Field(default=3, ge=1, le=MAX_K)


def handle_query(bundle: ModelBundle, text: str, k: int) -> dict:
    """Preprocess, rank, and render one query against the loaded model."""
    if not (1 <= k <= MAX_K):
        raise HTTPException(status_code=422, detail=f"k must be in [1, {MAX_K}]")
    started = time.perf_counter()
    tokens = preprocess_query(text, bundle.lexicons)
    if not tokens:
        raise HTTPException(
            status_code=422,
            detail={"error": "unanswerable query", "reason": "no tokens left after preprocessing"},
        )
    k = min(k, bundle.model.n_classes)
    try:
        results = predict_topk(bundle.model, tokens, k)
    except CnnError as exc:
        raise HTTPException(status_code=422, detail={"error": str(exc)}) from exc
    latency_ms = (time.perf_counter() - started) * 1000.0
    return {
        "results": [
            {
                "rank": r.rank,
                "class_id": r.class_id,
                "cluster_id": r.cluster_id,
                "score": r.score,
                "tool": r.tool,
                "signatures": r.signatures,
                "description": r.description,
                "parameters": r.parameters,
                "returns": r.returns,
            }
            for r in results
        ],
        "latency_ms": latency_ms,
        "model_version": bundle.version,
    }


def create_app(
    recommender_path: Path,
    embedding_path: Path,
    static_dir: Path | None = None,
) -> FastAPI:
    app = FastAPI(title="security-tool API recommender")
    holder = {"bundle": load_bundle(recommender_path, embedding_path)}
    app.state.holder = holder

    @app.post("/v1/query")
    def query(request: QueryRequest) -> dict:
        bundle = holder["bundle"]  # grab once: reload must not affect this request
        return handle_query(bundle, request.text, request.k)

    @app.get("/v1/health")
    def health() -> dict:
        return {"status": "ok", "model_version": holder["bundle"].version}

    @app.get("/v1/tools")
    def tools() -> list[dict]:
        catalog = holder["bundle"].model.catalog
        per_tool: dict[str, dict] = {}
        for card in catalog:
            stats = per_tool.setdefault(card.tool, {"tool": card.tool, "records": 0, "clusters": 0})
            stats["clusters"] += 1
            stats["records"] += len(card.signatures)
        return [per_tool[t] for t in sorted(per_tool)]

    @app.get("/v1/apis/{cluster_id}")
    def api_detail(cluster_id: str) -> dict:
        for class_id, card in enumerate(holder["bundle"].model.catalog):
            if card.cluster_id == cluster_id:
                return {
                    "cluster_id": card.cluster_id,
                    "class_id": class_id,
                    "tool": card.tool,
                    "signatures": card.signatures,
                    "description": card.description,
                    "parameters": card.parameters,
                    "returns": card.returns,
                }
        raise HTTPException(status_code=404, detail=f"unknown cluster {cluster_id!r}")

    @app.post("/v1/reload")
    def reload_model() -> dict:
        fresh = load_bundle(recommender_path, embedding_path)
        holder["bundle"] = fresh  # atomic swap; old bundle keeps serving in-flight work
        return {"status": "reloaded", "model_version": fresh.version}

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(static_dir), html=True), name="console")

    return app
