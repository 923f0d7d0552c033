"""HTTP session service for interactive network morphism.

Sessions are in-memory. All mutations on one session go through a
non-blocking single-writer lock: a second concurrent writer receives 409
rather than queueing, so parameter writes never interleave.
"""

from __future__ import annotations

import threading
import time
import uuid

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from . import checkpoint as ckpt
from . import datasets as D
from .classifier import MultiInvexClassifier, train_multi_invex
from .verify import rasterize

MAX_GRID = 400
MAX_TRAIN_STEPS = 50000

app = FastAPI(title="invexnn morphism service")
app.add_middleware(CORSMiddleware, allow_origins=["*"],
                   allow_methods=["*"], allow_headers=["*"])


class SessionSpec(BaseModel):
    dataset: str | None = None
    csv: str | None = None
    seed: int = 0
    regions: int = Field(default=5, ge=1)
    n_blocks: int = Field(default=4, ge=1)
    train_steps: int = Field(default=2000, ge=0, le=MAX_TRAIN_STEPS)
    lr: float = Field(default=1e-3, gt=0)


class MorphRequest(BaseModel):
    model_config = {"populate_by_name": True}

    op: str
    x: float | None = None
    y: float | None = None
    class_label: int | None = Field(default=None, alias="class")
    region_id: int | None = None
    expected_revision: int


class TrainRequest(BaseModel):
    steps: int
    expected_revision: int | None = None


class Session:
    def __init__(self, spec: SessionSpec, data: D.Dataset,
                 model: MultiInvexClassifier):
        self.id = uuid.uuid4().hex
        self.spec = spec
        self.data = data
        self.model = model
        self.lock = threading.Lock()
        self.mutation_log: list[dict] = []
        self.created = self.updated = time.time()

    def accuracy(self) -> float:
        return float((self.model.predict(self.data.X)
                      == self.data.y).mean())

    def touch(self, entry: dict) -> None:
        self.mutation_log.append(entry)
        self.updated = time.time()


SESSIONS: dict[str, Session] = {}


def _get(session_id: str) -> Session:
    s = SESSIONS.get(session_id)
    if s is None:
        raise HTTPException(404, f"unknown session {session_id}")
    return s


def _writer(s: Session):
    if not s.lock.acquire(blocking=False):
        raise HTTPException(409, "session is busy with another mutation")
    return s.lock


def build_session(spec: SessionSpec) -> Session:
    if (spec.dataset is None) == (spec.csv is None):
        raise HTTPException(400, "provide exactly one of dataset/csv")
    try:
        data = D.load_csv(spec.csv) if spec.csv \
            else D.make(spec.dataset, seed=spec.seed)
    except (KeyError, D.CsvFormatError) as e:
        raise HTTPException(400, f"bad dataset spec: {e}")
    if data.dim != 2:
        raise HTTPException(400, "interactive sessions are 2D-only")
    if data.n_classes < 2:
        raise HTTPException(400, "need a classification dataset")
    model = MultiInvexClassifier(2, spec.regions, data.n_classes,
                                 n_blocks=spec.n_blocks, seed=spec.seed)
    model.init_from_data(data.X, data.y, seed=spec.seed)
    if spec.train_steps:
        train_multi_invex(model, data.X, data.y, steps=spec.train_steps,
                          lr=spec.lr)
    return Session(spec, data, model)


def _session_summary(s: Session) -> dict:
    return {
        "session_id": s.id,
        "revision": s.model.revision,
        "n_regions": s.model.n_regions,
        "n_classes": s.model.n_classes,
        "accuracy": s.accuracy(),
        "dataset": s.data.name,
        "n_points": s.data.n,
    }


@app.get("/healthz")
def healthz():
    return {"ok": True, "sessions": len(SESSIONS)}


@app.post("/sessions", status_code=201)
def create_session(spec: SessionSpec):
    s = build_session(spec)
    SESSIONS[s.id] = s
    return _session_summary(s)


@app.get("/sessions/{session_id}/state")
def session_state(session_id: str, grid: int = 200):
    s = _get(session_id)
    if not 2 <= grid <= MAX_GRID:
        raise HTTPException(422, f"grid must be in [2, {MAX_GRID}]")
    m = s.model
    bounds = s.data.bounding_box(inflate=0.2)
    # one consistent snapshot: everything below derives from one revision
    with s.lock:
        revision = m.revision
        centers = m.backbone.inverse(m.weight.data.copy())
        region_raster = rasterize(
            lambda pts: m.classify(pts)["region"].astype(float), bounds, grid)
        class_raster = rasterize(
            lambda pts: m.classify(pts)["label"].astype(float), bounds, grid)
        report = m.region_report(s.data.X, s.data.y)
        accuracy = s.accuracy()
        region_classes = np.argmax(m.class_probs().data, axis=1)
    return {
        "revision": revision,
        "accuracy": accuracy,
        "bounds": bounds.tolist(),
        "grid": grid,
        "centers": centers.tolist(),
        "region_classes": region_classes.tolist(),
        "region_raster": region_raster.values.astype(int).tolist(),
        "class_raster": class_raster.values.astype(int).tolist(),
        "region_report": report,
        "points": s.data.X.tolist(),
        "labels": s.data.y.tolist(),
    }


@app.post("/sessions/{session_id}/morph")
def morph_session(session_id: str, req: MorphRequest):
    s = _get(session_id)
    lock = _writer(s)
    try:
        if req.expected_revision != s.model.revision:
            raise HTTPException(
                409, f"stale revision {req.expected_revision}, "
                     f"current is {s.model.revision}")
        if req.op == "add":
            if req.x is None or req.y is None or req.class_label is None:
                raise HTTPException(422, "add needs x, y and class_label")
            try:
                region = s.model.add_region([req.x, req.y], req.class_label)
            except ValueError as e:
                raise HTTPException(422, str(e))
            s.touch({"op": "add", "x": req.x, "y": req.y,
                     "class_label": req.class_label, "region": region})
        elif req.op == "remove":
            if req.region_id is None:
                raise HTTPException(422, "remove needs region_id")
            try:
                s.model.remove_region(req.region_id)
            except (ValueError, IndexError) as e:
                raise HTTPException(422, str(e))
            s.touch({"op": "remove", "region": req.region_id})
        else:
            raise HTTPException(422, f"unknown op {req.op!r}")
        return _session_summary(s)
    finally:
        lock.release()


@app.post("/sessions/{session_id}/train")
def train_session(session_id: str, req: TrainRequest):
    s = _get(session_id)
    if not 1 <= req.steps <= MAX_TRAIN_STEPS:
        raise HTTPException(422,
                            f"steps must be in [1, {MAX_TRAIN_STEPS}]")
    lock = _writer(s)
    try:
        if req.expected_revision is not None \
                and req.expected_revision != s.model.revision:
            raise HTTPException(409, "stale revision")
        before = s.accuracy()
        train_multi_invex(s.model, s.data.X, s.data.y, steps=req.steps,
                          lr=s.spec.lr)
        s.model.revision += 1  # training is a mutation too
        s.touch({"op": "train", "steps": req.steps})
        return {"accuracy_before": before, "accuracy_after": s.accuracy(),
                "revision": s.model.revision}
    finally:
        lock.release()


@app.get("/sessions/{session_id}/export")
def export_session(session_id: str):
    s = _get(session_id)
    with s.lock:
        blob = ckpt.to_json("multi_invex", s.model,
                            extra={"mutation_log": s.mutation_log,
                                   "dataset": s.data.name,
                                   "seed": s.spec.seed})
    import json
    return json.loads(blob)


@app.delete("/sessions/{session_id}", status_code=204)
def delete_session(session_id: str):
    _get(session_id)
    del SESSIONS[session_id]
