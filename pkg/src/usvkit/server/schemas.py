"""Pydantic request/response models for the HTTP API."""
from __future__ import annotations

from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class HealthOut(BaseModel):
    status: str = "ok"


class RecordingOut(BaseModel):
    id: str
    duration_s: float
    sample_rate_hz: int
    noise_tag: str = ""


class BoxModel(BaseModel):
    t_start: float
    t_end: float
    f_min: float
    f_max: float


class AnnotationIn(BaseModel):
    recording_id: str
    box: BoxModel
    label: Optional[str] = None
    annotator: str = ""


class AnnotationPatch(BaseModel):
    label: str
    annotator: str = ""


class AnnotationOut(BaseModel):
    id: str
    recording_id: str
    box: BoxModel
    label: Optional[str] = None
    source: str
    review_status: Optional[str] = None
    annotator: str = ""
    updated_at: str = ""
    audit: List[dict] = Field(default_factory=list)


class IdOut(BaseModel):
    id: str


class CandidateOut(BaseModel):
    t_start: float
    t_end: float
    f_min: float
    f_max: float
    peak_db: float
    band: str


class SyntheticOut(BaseModel):
    id: str
    seed_annotation_id: str
    label: str
    tile_url: str
    seed_tile_url: str
    review_status: str


class DecisionIn(BaseModel):
    verdict: str  # accept | reject
    reviewer: str = ""


class TrainConfigIn(BaseModel):
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    val_fraction: float = 0.2
    oversample_minority: bool = True
    tile_size: int = 64
    resume_from: Optional[str] = None  # checkpoint name in the store


class TrainIn(BaseModel):
    manifest_version: int
    config: TrainConfigIn = Field(default_factory=TrainConfigIn)


class JobOut(BaseModel):
    job_id: str
    kind: str
    state: str
    progress: float
    result: Optional[dict] = None
    error: str = ""
    history: Optional[List[Dict[str, float]]] = None


class ErrorOut(BaseModel):
    code: str
    message: str
