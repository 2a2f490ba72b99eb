"""HTTP front for the annotation service.

Stable paths:
  GET  /meta                      question text, coded cases, strata
  POST /annotators                register an annotator id
  GET  /candidates/next?annotator=ID
  GET  /candidates/{candidate_id}
  POST /labels                    submit or overwrite one label
  POST /candidates/{id}/skip
  POST /decisions                 adjudicate a conflicting candidate
  GET  /stats/agreement?mode=include_unsure|exclude_unsure
  GET  /stats/progress
  POST /cycle                     run one active-learning cycle
  GET  /export/training.csv

Auth is a single shared token: when the service is started with one, every
request must carry it in the X-Auth-Token header.  The annotation UI's
static bundle is served at / when a directory is provided.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .annotation import (
    ANNOTATION_QUESTION,
    CODED_CASES,
    STRATA,
    AnnotationError,
    AnnotationService,
    LabelRecord,
    UnknownAnnotatorError,
    UnknownCandidateError,
)


class AnnotatorBody(BaseModel):
    annotator_id: str


class LabelBody(BaseModel):
    candidate_id: str
    annotator_id: str
    label: str
    coded_case: str | None = None
    confident: bool | None = None


class DecisionBody(BaseModel):
    candidate_id: str
    resolution: str


class CycleBody(BaseModel):
    budget: int
    stratum: str = "integrity"
    strategy: str = "top"


def create_app(
    service: AnnotationService,
    auth_token: str | None = None,
    static_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="annotation service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    store = service.store

    def check_token(request: Request) -> None:
        if auth_token and request.headers.get("X-Auth-Token") != auth_token:
            raise HTTPException(status_code=401, detail="bad or missing X-Auth-Token")

    guarded = [Depends(check_token)]

    @app.get("/meta", dependencies=guarded)
    def meta() -> dict:
        return {
            "question": ANNOTATION_QUESTION,
            "labels": ["positive", "negative", "unsure"],
            "coded_cases": list(CODED_CASES),
            "strata": list(STRATA),
            "required_annotators": store.required_annotators,
        }

    @app.post("/annotators", dependencies=guarded)
    def register(body: AnnotatorBody) -> dict:
        try:
            store.register_annotator(body.annotator_id)
        except AnnotationError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return {"registered": body.annotator_id}

    @app.get("/candidates/next", dependencies=guarded)
    def next_candidate(annotator: str) -> dict:
        try:
            candidate = store.next_candidate(annotator)
        except UnknownAnnotatorError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return {"candidate": None if candidate is None else candidate.to_dict()}

    @app.get("/candidates/{candidate_id}", dependencies=guarded)
    def get_candidate(candidate_id: str) -> dict:
        candidate = store.candidates.get(candidate_id)
        if candidate is None:
            raise HTTPException(status_code=404, detail=f"no candidate {candidate_id!r}")
        labels = [
            {"annotator_id": rec.annotator_id, "label": rec.label,
             "coded_case": rec.coded_case, "submitted_at": rec.submitted_at}
            for rec in store.labels_for_candidate(candidate_id)
        ]
        decision = store.decision(candidate_id)
        return {
            "candidate": candidate.to_dict(),
            "labels": labels,
            "decision": None if decision is None else vars(decision),
        }

    @app.post("/labels", dependencies=guarded)
    def submit_label(body: LabelBody) -> dict:
        record = LabelRecord(
            candidate_id=body.candidate_id,
            annotator_id=body.annotator_id,
            label=body.label,
            coded_case=body.coded_case,
            confident=body.confident,
        )
        try:
            overwrote = store.submit_label(record)
        except (UnknownAnnotatorError, UnknownCandidateError) as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except AnnotationError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return {"ok": True, "overwrote": overwrote}

    @app.post("/candidates/{candidate_id}/skip", dependencies=guarded)
    def skip(candidate_id: str) -> dict:
        try:
            store.skip_candidate(candidate_id)
        except UnknownCandidateError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        return {"ok": True}

    @app.post("/decisions", dependencies=guarded)
    def adjudicate(body: DecisionBody) -> dict:
        try:
            store.adjudicate(body.candidate_id, body.resolution)
        except UnknownCandidateError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except AnnotationError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return {"ok": True}

    @app.get("/stats/agreement", dependencies=guarded)
    def agreement(mode: str = "include_unsure") -> dict:
        if mode not in ("include_unsure", "exclude_unsure"):
            raise HTTPException(status_code=400, detail=f"bad mode {mode!r}")
        return store.agreement(mode)

    @app.get("/stats/progress", dependencies=guarded)
    def progress() -> dict:
        return store.queue_stats()

    @app.post("/cycle", dependencies=guarded)
    def cycle(body: CycleBody) -> dict:
        try:
            result = service.active_learning_cycle(
                budget=body.budget, stratum=body.stratum, strategy=body.strategy
            )
        except AnnotationError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return {
            "enqueued": result.enqueued,
            "rejected": result.rejected,
            "scored": result.scored,
            "trained": result.trained,
            "model_path": result.model_path,
            "notice": result.notice,
        }

    @app.get("/export/training.csv", dependencies=guarded)
    def export_training(annotator: str | None = None) -> PlainTextResponse:
        return PlainTextResponse(
            store.export_training_csv(annotator=annotator), media_type="text/csv"
        )

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
