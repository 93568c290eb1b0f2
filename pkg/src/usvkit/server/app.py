"""HTTP service wrapping the store and the processing pipeline.

All store mutations funnel through the Store's internal writer lock; long
jobs run on the single background worker and are polled via /jobs/{id}.
"""
from __future__ import annotations

import hashlib
import io
import threading
from collections import OrderedDict
from pathlib import Path
from typing import List, Optional

import numpy as np
from fastapi import FastAPI, Query, Request, Response
from fastapi.responses import JSONResponse
from PIL import Image

from .. import classifier, datastore, synthgen
from ..classifier import CallLabel, TileDataset, TrainConfig
from ..errors import UsvkitError
from ..spectrogram import SpectrogramParams, compute_spectrogram
from ..audio_io import slice_clip
from . import schemas
from .jobs import JobQueue


def _annotation_out(ann: datastore.Annotation) -> schemas.AnnotationOut:
    return schemas.AnnotationOut(
        id=ann.id,
        recording_id=ann.recording_id,
        box=schemas.BoxModel(
            t_start=ann.box[0], t_end=ann.box[1], f_min=ann.box[2], f_max=ann.box[3]
        ),
        label=ann.label.value if ann.label else None,
        source=ann.source,
        review_status=ann.review_status,
        annotator=ann.annotator,
        updated_at=ann.updated_at,
        audit=ann.audit,
    )


class _StripCache:
    """Tiny LRU for rendered spectrogram strips."""

    def __init__(self, capacity: int = 64):
        self.capacity = capacity
        self._items: "OrderedDict[str, bytes]" = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key: str) -> Optional[bytes]:
        with self._lock:
            if key in self._items:
                self._items.move_to_end(key)
                return self._items[key]
        return None

    def put(self, key: str, value: bytes):
        with self._lock:
            self._items[key] = value
            self._items.move_to_end(key)
            while len(self._items) > self.capacity:
                self._items.popitem(last=False)


def create_app(
    store: datastore.Store,
    spectrogram_params: Optional[SpectrogramParams] = None,
    tile_size: int = 64,
) -> FastAPI:
    params = spectrogram_params or SpectrogramParams()
    app = FastAPI(title="usvkit", version="0.1.0")
    app.state.store = store
    app.state.jobs = JobQueue()
    app.state.histories = {}
    strips = _StripCache()

    params_digest = hashlib.sha1(
        f"{params.window_len}|{params.hop}|{params.fft_len}|{params.window_kind}|{params.db_floor}".encode()
    ).hexdigest()[:12]

    @app.exception_handler(UsvkitError)
    async def domain_error(request: Request, exc: UsvkitError):
        status = 400
        code = type(exc).__name__
        if isinstance(exc, (datastore.UnknownId, datastore.UnknownRecording)):
            status = 404
        elif isinstance(exc, synthgen.AlreadyDecided):
            status = 409
        return JSONResponse(status_code=status, content={"code": code, "message": str(exc)})

    @app.exception_handler(ValueError)
    async def value_error(request: Request, exc: ValueError):
        return JSONResponse(status_code=400, content={"code": "ValueError", "message": str(exc)})

    # -- health / recordings -------------------------------------------------

    @app.get("/health", response_model=schemas.HealthOut)
    def health():
        return schemas.HealthOut()

    @app.get("/recordings", response_model=List[schemas.RecordingOut])
    def recordings():
        return [
            schemas.RecordingOut(
                id=r.id,
                duration_s=r.duration_s,
                sample_rate_hz=r.sample_rate_hz,
                noise_tag=r.noise_tag,
            )
            for r in store.list_recordings()
        ]

    @app.get("/recordings/{recording_id}/spectrogram")
    def spectrogram_strip(
        recording_id: str,
        t0: float = Query(..., ge=0),
        t1: float = Query(...),
        fmin: float = Query(0.0, ge=0),
        fmax: float = Query(125_000.0),
    ):
        key = f"{recording_id}|{t0:.6f}|{t1:.6f}|{fmin:.1f}|{fmax:.1f}|{params_digest}"
        cached = strips.get(key)
        if cached is None:
            cached = _render_strip(recording_id, t0, t1, fmin, fmax)
            strips.put(key, cached)
        return Response(content=cached, media_type="image/png")

    def _render_strip(recording_id: str, t0: float, t1: float, fmin: float, fmax: float) -> bytes:
        clip = store.load_recording_audio(recording_id)
        t0 = max(0.0, t0)
        t1 = min(clip.duration_s, t1)
        if t1 <= t0:
            raise ValueError("empty time window")
        piece = slice_clip(clip, t0, t1)
        spec = compute_spectrogram(piece, params)
        b0 = max(0, int(np.floor(fmin / spec.bin_hz)))
        b1 = min(spec.n_bins, int(np.ceil(fmax / spec.bin_hz)) + 1)
        if b1 <= b0:
            raise ValueError("empty frequency window")
        crop = spec.power_db[:, b0:b1]
        lo, hi = float(crop.min()), float(crop.max())
        unit = (crop - lo) / (hi - lo) if hi > lo else np.zeros_like(crop)
        # rows = frequency descending (high at top), columns = time
        img = np.round(unit.T[::-1] * 255).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(img, mode="L").save(buf, format="PNG")
        return buf.getvalue()

    @app.get("/recordings/{recording_id}/candidates", response_model=List[schemas.AnnotationOut])
    def candidates(recording_id: str):
        store.get_recording(recording_id)  # 404 when unknown
        return [_annotation_out(a) for a in store.list_annotations(recording_id=recording_id)]

    # -- annotations ------------------------------------------------------------

    @app.get("/annotations", response_model=List[schemas.AnnotationOut])
    def list_annotations(recording_id: Optional[str] = None, label: Optional[str] = None):
        wanted = CallLabel(label) if label else None
        return [
            _annotation_out(a)
            for a in store.list_annotations(recording_id=recording_id, label=wanted)
        ]

    @app.post("/annotations", response_model=schemas.IdOut, status_code=201)
    def post_annotation(body: schemas.AnnotationIn):
        ann = datastore.Annotation(
            id="",
            recording_id=body.recording_id,
            box=(body.box.t_start, body.box.t_end, body.box.f_min, body.box.f_max),
            label=CallLabel(body.label) if body.label else None,
            source="human" if body.label else "model",
            annotator=body.annotator,
        )
        return schemas.IdOut(id=store.put_annotation(ann))

    @app.get("/annotations/{annotation_id}", response_model=schemas.AnnotationOut)
    def get_annotation(annotation_id: str):
        return _annotation_out(store.get_annotation(annotation_id))

    @app.patch("/annotations/{annotation_id}", response_model=schemas.AnnotationOut)
    def patch_annotation(annotation_id: str, body: schemas.AnnotationPatch):
        ann = store.update_label(annotation_id, CallLabel(body.label), body.annotator)
        return _annotation_out(ann)

    # -- synthetics ---------------------------------------------------------------

    @app.get("/synthetics", response_model=List[schemas.SyntheticOut])
    def synthetics(status: Optional[str] = "pending"):
        out = []
        for s in store.list_synthetics(status=status):
            out.append(
                schemas.SyntheticOut(
                    id=s.id,
                    seed_annotation_id=s.seed_annotation_id or "",
                    label=s.label.value if s.label else "",
                    tile_url=f"/synthetics/{s.id}/tile",
                    seed_tile_url=f"/synthetics/{s.id}/seed_tile",
                    review_status=s.review_status or "",
                )
            )
        return out

    @app.get("/synthetics/{synthetic_id}/tile")
    def synthetic_tile(synthetic_id: str):
        path = store.root / "tiles" / f"{synthetic_id}.png"
        if not path.exists():
            raise datastore.UnknownId(synthetic_id)
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.get("/synthetics/{synthetic_id}/seed_tile")
    def seed_tile(synthetic_id: str):
        syn = store.get_annotation(synthetic_id)
        if syn.seed_annotation_id is None:
            raise datastore.UnknownId(f"{synthetic_id} has no seed")
        tile = store.render_tile(syn.seed_annotation_id, params, out_size=tile_size)
        data = np.round(tile.pixels * 255).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(data, mode="L").save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.post("/synthetics/{synthetic_id}/decision", response_model=schemas.AnnotationOut)
    def decide(synthetic_id: str, body: schemas.DecisionIn):
        ann = store.decide_synthetic(synthetic_id, body.verdict, body.reviewer)
        return _annotation_out(ann)

    # -- training jobs ---------------------------------------------------------------

    @app.post("/train", response_model=schemas.JobOut, status_code=202)
    def train_endpoint(body: schemas.TrainIn):
        manifest = store.get_manifest(body.manifest_version)
        cfg = body.config
        history_rows: List[dict] = []

        def run(progress) -> dict:
            size = cfg.tile_size
            train_ids = list(manifest.train_ids)
            val_ids = list(manifest.val_ids)
            categories = list(classifier.CATEGORIES)

            def dataset_for(ids, phase_base, phase_span):
                pairs = []
                for i, ann_id in enumerate(ids):
                    ann = store.get_annotation(ann_id)
                    tile = store.render_tile(ann_id, params, out_size=size)
                    pairs.append((tile, ann.label))
                    progress(phase_base + phase_span * (i + 1) / max(1, len(ids)))
                return TileDataset.from_pairs(pairs, categories=categories)

            train_set = dataset_for(train_ids, 0.0, 0.2)
            val_set = dataset_for(val_ids, 0.2, 0.1)

            train_cfg = TrainConfig(
                epochs=cfg.epochs,
                batch_size=cfg.batch_size,
                learning_rate=cfg.learning_rate,
                momentum=cfg.momentum,
                seed=cfg.seed,
                val_fraction=cfg.val_fraction,
                oversample_minority=cfg.oversample_minority,
            )

            def on_epoch(entry, total):
                history_rows.append(
                    {
                        "epoch": entry.epoch,
                        "train_accuracy": entry.train_accuracy,
                        "val_accuracy": entry.val_accuracy,
                    }
                )
                progress(0.3 + 0.65 * len(history_rows) / max(1, total))

            if cfg.resume_from:
                model = classifier.load_checkpoint(store.checkpoint_path(cfg.resume_from))
                trained, history = classifier.resume_train(
                    model, train_set, train_cfg, val=val_set, on_epoch=on_epoch
                )
            else:
                model = classifier.init_model(size, categories=categories, seed=cfg.seed)
                trained, history = classifier.train(
                    model, train_set, train_cfg, val=val_set, on_epoch=on_epoch
                )
            trained.training_meta["dataset_version"] = manifest.version
            name = f"manifest{manifest.version}-seed{cfg.seed}.ckpt"
            classifier.save_checkpoint(trained, store.checkpoint_path(name))
            final_val = max(history.val_accuracy) if history.entries else None
            return {
                "checkpoint": name,
                "manifest_version": manifest.version,
                "final_val_accuracy": final_val,
                "history": history_rows,
            }

        job_id = app.state.jobs.submit("train", run)
        app.state.histories[job_id] = history_rows
        status = app.state.jobs.get(job_id)
        return _job_out(status)

    def _job_out(status) -> schemas.JobOut:
        return schemas.JobOut(
            job_id=status.job_id,
            kind=status.kind,
            state=status.state,
            progress=status.progress,
            result=status.result,
            error=status.error,
            history=app.state.histories.get(status.job_id),
        )

    @app.get("/jobs/{job_id}", response_model=schemas.JobOut)
    def job_status(job_id: str):
        status = app.state.jobs.get(job_id)
        if status is None:
            raise datastore.UnknownId(job_id)
        return _job_out(status)

    # -- evaluation runs ----------------------------------------------------------------

    @app.get("/metrics/runs/{run_id}")
    def metrics_run(run_id: str):
        return store.get_run(run_id)

    return app
