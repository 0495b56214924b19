"""HTTP surface of the scorer sidecar.

Endpoints:
  POST /v1/ppl    -> {"scores": [...]}        mean NLL per chunk, nats/token
  POST /v1/embed  -> {"embeddings": [[...]]}  unit-norm vectors
  GET  /v1/health -> {"status", "models"}     503 until models are loaded

Responses are pure functions of the request and the loaded weights:
scoring never samples, and both endpoints reject empty inputs with 400
and oversize payloads with 413. When `SCORER_SECRET` is set, requests
must carry it in the `X-Scorer-Secret` header.
"""

from __future__ import annotations

import os
import threading
from contextlib import asynccontextmanager
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException, Request
from pydantic import BaseModel

from .models import build_embedder, build_scorer, mean_nll


@dataclass
class Settings:
    scorer_spec: str = "ngram"
    embedder_spec: str = "hash"
    max_request_bytes: int = 4_000_000
    max_batch: int = 256
    shared_secret: str | None = None
    host: str = "127.0.0.1"
    port: int = 8040

    @staticmethod
    def from_env(env=os.environ) -> "Settings":
        return Settings(
            scorer_spec=env.get("SCORER_LM", "ngram"),
            embedder_spec=env.get("SCORER_EMBED", "hash"),
            max_request_bytes=int(env.get("SCORER_MAX_BYTES", 4_000_000)),
            max_batch=int(env.get("SCORER_MAX_BATCH", 256)),
            shared_secret=env.get("SCORER_SECRET") or None,
            host=env.get("SCORER_HOST", "127.0.0.1"),
            port=int(env.get("SCORER_PORT", 8040)),
        )


class PplRequest(BaseModel):
    question: str
    restrict: str = ""
    chunks: list[str]


class EmbedRequest(BaseModel):
    texts: list[str]


@dataclass
class ModelState:
    scorer: object | None = None
    embedder: object | None = None
    error: str | None = None
    ready: threading.Event = field(default_factory=threading.Event)


def create_app(settings: Settings | None = None,
               defer_loading: bool = False) -> FastAPI:
    """Build the app; models load on a background thread at startup.

    `defer_loading` keeps the app in its loading state until the test
    harness triggers `app.state.load()` itself.
    """
    settings = settings or Settings.from_env()
    state = ModelState()

    def load() -> None:
        try:
            state.scorer = build_scorer(settings.scorer_spec)
            state.embedder = build_embedder(settings.embedder_spec)
        except Exception as exc:  # surfaced through /v1/health
            state.error = f"{type(exc).__name__}: {exc}"
        finally:
            state.ready.set()

    @asynccontextmanager
    async def lifespan(_: FastAPI):
        if not defer_loading:
            threading.Thread(target=load, daemon=True).start()
        yield

    app = FastAPI(title="scorer-service", lifespan=lifespan)
    app.state.settings = settings
    app.state.models = state
    app.state.load = load

    def require_ready() -> None:
        if not state.ready.is_set():
            raise HTTPException(status_code=503, detail={"status": "loading"})
        if state.error is not None:
            raise HTTPException(
                status_code=503, detail={"status": "failed", "error": state.error}
            )

    def require_secret(request: Request) -> None:
        if settings.shared_secret is None:
            return
        if request.headers.get("X-Scorer-Secret") != settings.shared_secret:
            raise HTTPException(status_code=401, detail="bad or missing secret")

    @app.get("/v1/health")
    def health():
        if not state.ready.is_set():
            raise HTTPException(status_code=503, detail={"status": "loading"})
        if state.error is not None:
            raise HTTPException(
                status_code=503, detail={"status": "failed", "error": state.error}
            )
        return {
            "status": "ready",
            "models": {
                "scorer": settings.scorer_spec,
                "embedder": settings.embedder_spec,
            },
        }

    @app.post("/v1/ppl")
    def ppl(body: PplRequest, request: Request):
        require_secret(request)
        require_ready()
        if not body.chunks:
            raise HTTPException(status_code=400, detail="chunks must be non-empty")
        if len(body.chunks) > settings.max_batch:
            raise HTTPException(
                status_code=413,
                detail=f"chunk count {len(body.chunks)} exceeds {settings.max_batch}",
            )
        payload_bytes = len(body.question.encode("utf-8")) + \
            len(body.restrict.encode("utf-8")) + \
            sum(len(c.encode("utf-8")) for c in body.chunks)
        if payload_bytes > settings.max_request_bytes:
            raise HTTPException(
                status_code=413,
                detail=f"request of {payload_bytes} bytes exceeds "
                       f"{settings.max_request_bytes}",
            )
        target = body.question + " " + body.restrict if body.restrict \
            else body.question
        scores = [mean_nll(state.scorer, target, chunk) for chunk in body.chunks]
        return {"scores": scores}

    @app.post("/v1/embed")
    def embed(body: EmbedRequest, request: Request):
        require_secret(request)
        require_ready()
        if not body.texts:
            raise HTTPException(status_code=400, detail="texts must be non-empty")
        if len(body.texts) > settings.max_batch:
            raise HTTPException(
                status_code=413,
                detail=f"batch of {len(body.texts)} exceeds {settings.max_batch}",
            )
        payload_bytes = sum(len(t.encode("utf-8")) for t in body.texts)
        if payload_bytes > settings.max_request_bytes:
            raise HTTPException(
                status_code=413,
                detail=f"request of {payload_bytes} bytes exceeds "
                       f"{settings.max_request_bytes}",
            )
        return {"embeddings": state.embedder.embed(body.texts)}

    return app


def main() -> None:
    import uvicorn

    settings = Settings.from_env()
    uvicorn.run(create_app(settings), host=settings.host, port=settings.port)


if __name__ == "__main__":
    main()
