"""HTTP surface for annotation, model listing, and corpus statistics.

Span offsets on the wire are character offsets into the submitted text, so
clients can highlight without re-tokenizing. Taggers are immutable once
registered; reloads swap the whole registry atomically.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .corpus import CorpusStats, EntitySpan
from .tagger import ExternalTaggerError

DEFAULT_MAX_TEXT_LEN = 10_000

#: A runner turns raw text into entity spans with character offsets.
SpanRunner = Callable[[str], list[EntitySpan]]


@dataclass(frozen=True)
class RegisteredTagger:
    name: str
    kind: str
    runner: SpanRunner
    meta: dict = field(default_factory=dict)


class ModelRegistry:
    """Name-keyed tagger registry; mutation rebinds the mapping atomically."""

    def __init__(self, taggers: Iterable[RegisteredTagger] = ()):
        self._taggers: dict[str, RegisteredTagger] = {}
        self.loading = False
        self.replace(taggers)

    def replace(self, taggers: Iterable[RegisteredTagger]) -> None:
        fresh: dict[str, RegisteredTagger] = {}
        for t in taggers:
            if t.name in fresh:
                raise ValueError(f"duplicate tagger name: {t.name!r}")
            fresh[t.name] = t
        self._taggers = fresh

    def snapshot(self) -> dict[str, RegisteredTagger]:
        return self._taggers

    @property
    def status(self) -> str:
        return "loading" if self.loading else "ok"


class AnnotateRequest(BaseModel):
    text: str
    model: str = "all"


def span_payload(text: str, spans: Iterable[EntitySpan]) -> list[dict]:
    """Wire form of spans: entity plus character offsets and the exact slice."""
    out = []
    for s in sorted(spans, key=lambda s: s.char_start):
        if not (0 <= s.char_start < s.char_end <= len(text)):
            raise ValueError(f"span outside text bounds: {s}")
        out.append(
            {
                "entity": s.entity,
                "char_start": s.char_start,
                "char_end": s.char_end,
                "text": text[s.char_start : s.char_end],
            }
        )
    return out


def create_app(
    registry: ModelRegistry,
    corpus_stats: CorpusStats | None = None,
    max_text_len: int = DEFAULT_MAX_TEXT_LEN,
    reloader: Callable[[], Iterable[RegisteredTagger]] | None = None,
) -> FastAPI:
    """Build the service app.

    ``reloader`` enables POST /models/reload: it returns a fresh tagger set
    that replaces the registry atomically (in-flight requests finish on the
    old set). Without it the endpoint does not exist; there is no hot
    training in the service.
    """
    app = FastAPI(title="CVE entity annotation service")
    app.state.registry = registry
    app.state.corpus_stats = corpus_stats

    @app.post("/annotate")
    def annotate(request: AnnotateRequest) -> dict:
        text = request.text
        if not text.strip():
            raise HTTPException(status_code=400, detail="text must be non-empty")
        if len(text) > max_text_len:
            raise HTTPException(
                status_code=400,
                detail=f"text exceeds the {max_text_len}-character limit",
            )
        taggers = registry.snapshot()
        if request.model == "all":
            selected = list(taggers.values())
            if not selected:
                raise HTTPException(status_code=400, detail="no taggers loaded")
        else:
            tagger = taggers.get(request.model)
            if tagger is None:
                raise HTTPException(
                    status_code=404, detail=f"unknown model: {request.model!r}"
                )
            selected = [tagger]
        results = []
        for tagger in selected:
            started = time.perf_counter()
            try:
                spans = tagger.runner(text)
            except ExternalTaggerError as exc:
                raise HTTPException(status_code=502, detail=str(exc)) from exc
            results.append(
                {
                    "model_name": tagger.name,
                    "spans": span_payload(text, spans),
                    "timing_ms": (time.perf_counter() - started) * 1000.0,
                }
            )
        return {"results": results}

    @app.get("/models")
    def models() -> list[dict]:
        return [
            {"name": t.name, "kind": t.kind, "training_meta": t.meta}
            for t in registry.snapshot().values()
        ]

    @app.get("/corpus/stats")
    def corpus_statistics() -> dict:
        stats = app.state.corpus_stats
        if stats is None:
            raise HTTPException(status_code=404, detail="no corpus registered")
        return stats.to_json()

    @app.get("/health")
    def health() -> dict:
        return {"status": registry.status}

    if reloader is not None:

        @app.post("/models/reload")
        def reload_models() -> dict:
            registry.replace(reloader())
            return {"models": list(registry.snapshot())}

    return app
