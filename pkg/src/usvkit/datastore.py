"""Durable store for recordings, annotations, synthetics, manifests and
checkpoints: the single source of truth shared by CLI, server and UI.

Layout inside the store directory:

    meta.json                  schema version
    recordings.jsonl           recording registry (event log)
    recordings/<id>.wav        recordings owned by the store
    annotations.jsonl          put/label event log (audit trail = the log)
    synthetics.jsonl           put/decision event log
    tiles/<id>.png (+ .json)   synthetic tile pixels and sidecar
    manifests/<version>.json   dataset manifests
    checkpoints/               classifier checkpoints
    runs/<run_id>.json         evaluation reports

All files are plain JSON lines or PNG so a store diffs cleanly. Mutations
go through one writer (guarded by a lock marker and an in-process lock);
readers see consistent snapshots because records are appended whole.
"""
from __future__ import annotations

import datetime as _dt
import json
import os
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import audio_io, synthgen
from .classifier import CallLabel
from .errors import UsvkitError
from .spectrogram import SpectroImage, SpectrogramParams, load_png, save_png, tile_from_clip

SCHEMA_VERSION = 1


class SchemaMismatch(UsvkitError):
    pass


class IoFailure(UsvkitError):
    pass


class StoreLocked(UsvkitError):
    pass


class UnknownRecording(UsvkitError):
    pass


class UnknownId(UsvkitError):
    pass


class TooFewCategories(UsvkitError):
    pass


class MissingAudio(UsvkitError):
    pass


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


@dataclass
class RecordingInfo:
    id: str
    sample_rate_hz: int
    duration_s: float
    noise_tag: str = ""
    wav: Optional[str] = None  # store-relative path
    ref: Optional[str] = None  # absolute external path


@dataclass
class Annotation:
    id: str
    recording_id: str
    box: Tuple[float, float, float, float]  # (t_start, t_end, f_min, f_max)
    label: Optional[CallLabel] = None
    source: str = "human"  # human | model | synthetic
    seed_annotation_id: Optional[str] = None
    review_status: Optional[str] = None  # synthetics only
    annotator: str = ""
    created_at: str = ""
    updated_at: str = ""
    audit: List[dict] = field(default_factory=list)

    @property
    def natural(self) -> bool:
        return self.source != "synthetic"


@dataclass
class DatasetManifest:
    version: int
    parent_version: int
    annotation_ids: List[str]
    train_ids: List[str]
    val_ids: List[str]
    counts_per_category: Dict[str, int]
    created_at: str = ""


class Store:
    """Single-writer, multi-reader persistent store over one directory."""

    def __init__(self, directory):
        self.root = Path(directory)
        self._lock = threading.RLock()
        self._lock_path = self.root / ".lock"
        self._recordings: Dict[str, RecordingInfo] = {}
        self._annotations: Dict[str, Annotation] = {}
        self._synthetics: Dict[str, Annotation] = {}
        self._counter = 0
        self._open()

    # -- lifecycle ---------------------------------------------------------

    def _open(self):
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            for sub in ("recordings", "tiles", "manifests", "checkpoints", "runs"):
                (self.root / sub).mkdir(exist_ok=True)
        except OSError as exc:
            raise IoFailure(f"cannot create store at {self.root}: {exc}") from exc
        meta_path = self.root / "meta.json"
        if meta_path.exists():
            meta = json.loads(meta_path.read_text())
            if meta.get("schema_version") != SCHEMA_VERSION:
                raise SchemaMismatch(
                    f"store schema {meta.get('schema_version')} vs supported {SCHEMA_VERSION}"
                )
        else:
            meta_path.write_text(json.dumps({"schema_version": SCHEMA_VERSION}) + "\n")
        try:
            fd = os.open(self._lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StoreLocked(f"{self.root} already has a writer (remove .lock if stale)")
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        self._replay()
        for manifest in self.list_manifests():
            self._check_manifest(manifest)

    def close(self):
        with self._lock:
            if self._lock_path.exists():
                self._lock_path.unlink()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- event log replay ---------------------------------------------------

    def _replay(self):
        for rec in self._iter_jsonl(self.root / "recordings.jsonl"):
            self._recordings[rec["id"]] = RecordingInfo(
                id=rec["id"],
                sample_rate_hz=rec["sample_rate_hz"],
                duration_s=rec["duration_s"],
                noise_tag=rec.get("noise_tag", ""),
                wav=rec.get("wav"),
                ref=rec.get("ref"),
            )
        for event in self._iter_jsonl(self.root / "annotations.jsonl"):
            self._apply_annotation_event(self._annotations, event)
        for event in self._iter_jsonl(self.root / "synthetics.jsonl"):
            self._apply_annotation_event(self._synthetics, event)
        numbered = [
            int(i[1:]) for i in self._annotations if i.startswith("a") and i[1:].isdigit()
        ]
        self._counter = max(numbered, default=0)

    @staticmethod
    def _iter_jsonl(path: Path):
        if not path.exists():
            return
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    yield json.loads(line)

    @staticmethod
    def _apply_annotation_event(table: Dict[str, Annotation], event: dict):
        op = event.get("op")
        if op == "put":
            rec = event["record"]
            table[rec["id"]] = Annotation(
                id=rec["id"],
                recording_id=rec["recording_id"],
                box=tuple(rec["box"]),
                label=CallLabel(rec["label"]) if rec.get("label") else None,
                source=rec.get("source", "human"),
                seed_annotation_id=rec.get("seed_annotation_id"),
                review_status=rec.get("review_status"),
                annotator=rec.get("annotator", ""),
                created_at=rec.get("created_at", ""),
                updated_at=rec.get("created_at", ""),
                audit=list(rec.get("audit", [])),
            )
        elif op == "label":
            ann = table[event["id"]]
            ann.label = CallLabel(event["label"]) if event.get("label") else None
            ann.annotator = event.get("annotator", "")
            ann.source = event.get("source", ann.source)
            ann.updated_at = event.get("at", "")
            ann.audit.append(
                {"label": event.get("label"), "annotator": event.get("annotator", ""), "at": event.get("at", "")}
            )
        elif op == "decision":
            ann = table[event["id"]]
            ann.review_status = event["verdict"] + "ed"
            ann.updated_at = event.get("at", "")
            ann.audit.append(
                {"verdict": event["verdict"], "reviewer": event.get("reviewer", ""), "at": event.get("at", "")}
            )

    def _append(self, filename: str, event: dict):
        with self._lock:
            with open(self.root / filename, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event) + "\n")
                fh.flush()
                os.fsync(fh.fileno())

    # -- recordings ----------------------------------------------------------

    def add_recording(
        self,
        clip: audio_io.AudioClip,
        recording_id: Optional[str] = None,
        noise_tag: str = "",
    ) -> str:
        with self._lock:
            rid = recording_id or f"r{len(self._recordings) + 1:06d}"
            if rid in self._recordings:
                raise ValueError(f"recording {rid} already exists")
            rel = f"recordings/{rid}.wav"
            audio_io.write_wav(clip, self.root / rel)
            info = RecordingInfo(
                id=rid,
                sample_rate_hz=clip.sample_rate_hz,
                duration_s=clip.duration_s,
                noise_tag=noise_tag,
                wav=rel,
            )
            self._recordings[rid] = info
            self._append(
                "recordings.jsonl",
                {
                    "id": rid,
                    "sample_rate_hz": info.sample_rate_hz,
                    "duration_s": info.duration_s,
                    "noise_tag": noise_tag,
                    "wav": rel,
                },
            )
            return rid

    def add_recording_ref(
        self,
        wav_path,
        recording_id: Optional[str] = None,
        noise_tag: str = "",
    ) -> str:
        clip = audio_io.load_wav(wav_path)
        with self._lock:
            rid = recording_id or f"r{len(self._recordings) + 1:06d}"
            if rid in self._recordings:
                raise ValueError(f"recording {rid} already exists")
            info = RecordingInfo(
                id=rid,
                sample_rate_hz=clip.sample_rate_hz,
                duration_s=clip.duration_s,
                noise_tag=noise_tag,
                ref=str(Path(wav_path).resolve()),
            )
            self._recordings[rid] = info
            self._append(
                "recordings.jsonl",
                {
                    "id": rid,
                    "sample_rate_hz": info.sample_rate_hz,
                    "duration_s": info.duration_s,
                    "noise_tag": noise_tag,
                    "ref": info.ref,
                },
            )
            return rid

    def list_recordings(self) -> List[RecordingInfo]:
        return sorted(self._recordings.values(), key=lambda r: r.id)

    def get_recording(self, recording_id: str) -> RecordingInfo:
        try:
            return self._recordings[recording_id]
        except KeyError:
            raise UnknownRecording(recording_id) from None

    def load_recording_audio(self, recording_id: str) -> audio_io.AudioClip:
        info = self.get_recording(recording_id)
        path = self.root / info.wav if info.wav else Path(info.ref or "")
        if not path.exists():
            raise MissingAudio(f"audio for {recording_id} not found at {path}")
        clip = audio_io.load_wav(path)
        return audio_io.AudioClip(
            samples=clip.samples, sample_rate_hz=clip.sample_rate_hz, source_id=recording_id
        )

    # -- annotations ---------------------------------------------------------

    def put_annotation(self, annotation: Annotation) -> str:
        with self._lock:
            if annotation.recording_id not in self._recordings:
                raise UnknownRecording(annotation.recording_id)
            ann = replace(annotation)
            if not ann.id:
                self._counter += 1
                ann.id = f"a{self._counter:06d}"
            if ann.id in self._annotations:
                raise ValueError(f"annotation {ann.id} already exists")
            ann.created_at = ann.created_at or _now()
            ann.updated_at = ann.created_at
            if ann.label is not None and not ann.audit:
                ann.audit = [{"label": ann.label.value, "annotator": ann.annotator, "at": ann.created_at}]
            self._annotations[ann.id] = ann
            self._append("annotations.jsonl", {"op": "put", "record": self._annotation_record(ann)})
            return ann.id

    @staticmethod
    def _annotation_record(ann: Annotation) -> dict:
        return {
            "id": ann.id,
            "recording_id": ann.recording_id,
            "box": list(ann.box),
            "label": ann.label.value if ann.label else None,
            "source": ann.source,
            "seed_annotation_id": ann.seed_annotation_id,
            "review_status": ann.review_status,
            "annotator": ann.annotator,
            "created_at": ann.created_at,
            "audit": ann.audit,
        }

    def get_annotation(self, annotation_id: str) -> Annotation:
        try:
            return self._annotations[annotation_id]
        except KeyError:
            if annotation_id in self._synthetics:
                return self._synthetics[annotation_id]
            raise UnknownId(annotation_id) from None

    def list_annotations(
        self,
        recording_id: Optional[str] = None,
        label: Optional[CallLabel] = None,
        source: Optional[str] = None,
    ) -> List[Annotation]:
        out = []
        for ann in self._annotations.values():
            if recording_id and ann.recording_id != recording_id:
                continue
            if label and ann.label != label:
                continue
            if source and ann.source != source:
                continue
            out.append(ann)
        out.sort(key=lambda a: a.id)
        return out

    def update_label(self, annotation_id: str, label: CallLabel, annotator: str) -> Annotation:
        """Human relabeling: appends to the audit trail and makes the
        annotation human-sourced (model boxes become natural once a person
        confirms a label)."""
        with self._lock:
            ann = self.get_annotation(annotation_id)
            if ann.source == "synthetic":
                raise ValueError("synthetic tiles are reviewed, not relabeled")
            at = _now()
            ann.label = label
            ann.annotator = annotator
            ann.source = "human"
            ann.updated_at = at
            ann.audit.append({"label": label.value, "annotator": annotator, "at": at})
            self._append(
                "annotations.jsonl",
                {"op": "label", "id": annotation_id, "label": label.value, "annotator": annotator,
                 "source": "human", "at": at},
            )
            return ann

    # -- synthetics ----------------------------------------------------------

    def put_synthetic(self, synthetic: synthgen.SyntheticCall) -> str:
        """Store the tile PNG + sidecar and register the pending record."""
        with self._lock:
            if synthetic.id in self._synthetics:
                raise ValueError(f"synthetic {synthetic.id} already exists")
            seed = self.get_annotation(synthetic.seed_annotation_id)
            save_png(synthetic.tile, self.root / "tiles" / f"{synthetic.id}.png")
            sidecar = {
                "seed_annotation_id": synthetic.seed_annotation_id,
                "params": {
                    "max_displacement_px": synthetic.params.max_displacement_px,
                    "control_grid": synthetic.params.control_grid,
                    "seed": synthetic.params.seed,
                },
                "status": synthetic.review_status,
            }
            (self.root / "tiles" / f"{synthetic.id}.json").write_text(json.dumps(sidecar, indent=2))
            ann = Annotation(
                id=synthetic.id,
                recording_id=seed.recording_id,
                box=seed.box,
                label=synthetic.label,
                source="synthetic",
                seed_annotation_id=synthetic.seed_annotation_id,
                review_status=synthetic.review_status,
                created_at=_now(),
            )
            ann.updated_at = ann.created_at
            self._synthetics[ann.id] = ann
            self._append("synthetics.jsonl", {"op": "put", "record": self._annotation_record(ann)})
            return ann.id

    def list_synthetics(self, status: Optional[str] = None) -> List[Annotation]:
        out = [s for s in self._synthetics.values() if status is None or s.review_status == status]
        out.sort(key=lambda a: a.id)
        return out

    def decide_synthetic(self, synthetic_id: str, verdict: str, reviewer: str) -> Annotation:
        if verdict not in ("accept", "reject"):
            raise ValueError(f"verdict must be accept or reject, got {verdict!r}")
        with self._lock:
            if synthetic_id not in self._synthetics:
                raise UnknownId(synthetic_id)
            ann = self._synthetics[synthetic_id]
            new_status = verdict + "ed"
            if ann.review_status != "pending":
                if ann.review_status == new_status:
                    return ann  # idempotent re-submission
                raise synthgen.AlreadyDecided(
                    f"{synthetic_id} is already {ann.review_status}"
                )
            at = _now()
            ann.review_status = new_status
            ann.updated_at = at
            ann.audit.append({"verdict": verdict, "reviewer": reviewer, "at": at})
            sidecar_path = self.root / "tiles" / f"{synthetic_id}.json"
            if sidecar_path.exists():
                sidecar = json.loads(sidecar_path.read_text())
                sidecar["status"] = new_status
                sidecar_path.write_text(json.dumps(sidecar, indent=2))
            self._append(
                "synthetics.jsonl",
                {"op": "decision", "id": synthetic_id, "verdict": verdict, "reviewer": reviewer, "at": at},
            )
            return ann

    def synthetic_tile(self, synthetic_id: str) -> SpectroImage:
        path = self.root / "tiles" / f"{synthetic_id}.png"
        if not path.exists():
            raise UnknownId(synthetic_id)
        ann = self._synthetics.get(synthetic_id)
        return load_png(path, source_box=ann.box if ann else None)

    # -- manifests and splits --------------------------------------------------

    def list_manifests(self) -> List[DatasetManifest]:
        manifests = []
        for path in sorted((self.root / "manifests").glob("*.json")):
            manifests.append(self._manifest_from_dict(json.loads(path.read_text())))
        manifests.sort(key=lambda m: m.version)
        return manifests

    def get_manifest(self, version: int) -> DatasetManifest:
        path = self.root / "manifests" / f"{version}.json"
        if not path.exists():
            raise UnknownId(f"manifest version {version}")
        manifest = self._manifest_from_dict(json.loads(path.read_text()))
        self._check_manifest(manifest)
        return manifest

    @staticmethod
    def _manifest_from_dict(data: dict) -> DatasetManifest:
        return DatasetManifest(
            version=data["version"],
            parent_version=data["parent_version"],
            annotation_ids=data["annotation_ids"],
            train_ids=data["splits"]["train"],
            val_ids=data["splits"]["val"],
            counts_per_category=data["counts_per_category"],
            created_at=data.get("created_at", ""),
        )

    def _check_manifest(self, manifest: DatasetManifest):
        train = set(manifest.train_ids)
        val = set(manifest.val_ids)
        if train & val:
            raise SchemaMismatch(f"manifest {manifest.version}: train/val overlap")
        if not (train | val) <= set(manifest.annotation_ids):
            raise SchemaMismatch(f"manifest {manifest.version}: split ids outside manifest")
        for vid in manifest.val_ids:
            ann = self.get_annotation(vid)
            if not ann.natural:
                raise SchemaMismatch(f"manifest {manifest.version}: synthetic {vid} in val")
        if manifest.parent_version != 0:
            parent = self.root / "manifests" / f"{manifest.parent_version}.json"
            if not parent.exists():
                raise SchemaMismatch(f"manifest {manifest.version}: missing parent")
        if manifest.parent_version >= manifest.version:
            raise SchemaMismatch(f"manifest {manifest.version}: non-increasing lineage")

    def train_eligible(self) -> Tuple[List[Annotation], List[Annotation]]:
        """(labeled natural human annotations, accepted synthetics)."""
        naturals = [
            a for a in self._annotations.values() if a.label is not None and a.source == "human"
        ]
        synthetics = [s for s in self._synthetics.values() if s.review_status == "accepted"]
        naturals.sort(key=lambda a: a.id)
        synthetics.sort(key=lambda a: a.id)
        return naturals, synthetics

    def build_split(
        self,
        parent_version: Optional[int] = None,
        val_fraction: float = 0.2,
        seed: int = 0,
    ) -> DatasetManifest:
        """Stratified natural-only validation split; accepted synthetics go
        to train. New manifest version = latest + 1."""
        from .classifier import stratified_split  # local to avoid import cycle at module load

        naturals, synthetics = self.train_eligible()
        categories = sorted({a.label.value for a in naturals})
        if len(categories) < 2:
            raise TooFewCategories(f"need >= 2 categories, have {categories}")
        rng = np.random.default_rng(seed)
        labels = np.array([categories.index(a.label.value) for a in naturals])
        train_idx, val_idx = stratified_split(labels, val_fraction, rng)
        train_ids = [naturals[i].id for i in train_idx] + [s.id for s in synthetics]
        val_ids = [naturals[i].id for i in val_idx]
        all_ids = [a.id for a in naturals] + [s.id for s in synthetics]

        existing = self.list_manifests()
        latest = existing[-1].version if existing else 0
        if parent_version is None:
            parent_version = latest
        elif parent_version != 0:
            self.get_manifest(parent_version)  # must exist

        counts: Dict[str, int] = {}
        for ann_id in all_ids:
            ann = self.get_annotation(ann_id)
            counts[ann.label.value] = counts.get(ann.label.value, 0) + 1

        manifest = DatasetManifest(
            version=latest + 1,
            parent_version=parent_version,
            annotation_ids=all_ids,
            train_ids=sorted(train_ids),
            val_ids=sorted(val_ids),
            counts_per_category=counts,
            created_at=_now(),
        )
        self._check_manifest(manifest)
        with self._lock:
            payload = {
                "version": manifest.version,
                "parent_version": manifest.parent_version,
                "annotation_ids": manifest.annotation_ids,
                "splits": {"train": manifest.train_ids, "val": manifest.val_ids},
                "counts_per_category": manifest.counts_per_category,
                "created_at": manifest.created_at,
            }
            (self.root / "manifests" / f"{manifest.version}.json").write_text(
                json.dumps(payload, indent=2)
            )
        return manifest

    # -- tiles -----------------------------------------------------------------

    def render_tile(
        self,
        annotation_id: str,
        params: SpectrogramParams,
        out_size: int = 128,
        margin: float = 0.25,
    ) -> SpectroImage:
        """Natural annotations render from audio; synthetics return their
        stored pixels (resized only if a different out_size is asked)."""
        ann = self.get_annotation(annotation_id)
        if ann.source == "synthetic":
            tile = self.synthetic_tile(annotation_id)
            if tile.pixels.shape != (out_size, out_size):
                from .spectrogram import _resize_array_bilinear

                tile = SpectroImage(
                    pixels=_resize_array_bilinear(tile.pixels, out_size, out_size),
                    source_box=tile.source_box,
                )
            return tile
        clip = self.load_recording_audio(ann.recording_id)
        return tile_from_clip(clip, ann.box, params, out_size=out_size, margin=margin)

    def export_tiles(
        self,
        manifest: DatasetManifest,
        params: SpectrogramParams,
        out_dir,
        out_size: int = 128,
        margin: float = 0.25,
    ) -> int:
        """One PNG per annotation named <id>.png plus manifest.json."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        entries = []
        for ann_id in manifest.annotation_ids:
            ann = self.get_annotation(ann_id)
            if ann.source == "synthetic":
                # pass stored pixels through untouched
                src = self.root / "tiles" / f"{ann_id}.png"
                if not src.exists():
                    raise MissingAudio(f"stored tile for {ann_id} missing")
                (out / f"{ann_id}.png").write_bytes(src.read_bytes())
            else:
                tile = self.render_tile(ann_id, params, out_size=out_size, margin=margin)
                save_png(tile, out / f"{ann_id}.png")
            entries.append(
                {
                    "id": ann_id,
                    "label": ann.label.value if ann.label else None,
                    "split": "train" if ann_id in set(manifest.train_ids) else
                             ("val" if ann_id in set(manifest.val_ids) else None),
                    "natural": ann.natural,
                }
            )
        (out / "manifest.json").write_text(
            json.dumps(
                {
                    "manifest_version": manifest.version,
                    "tile_size": out_size,
                    "margin": margin,
                    "spectrogram": {
                        "window_len": params.window_len,
                        "hop": params.hop,
                        "fft_len": params.fft_len,
                        "window_kind": params.window_kind,
                        "db_floor": params.db_floor,
                    },
                    "tiles": entries,
                },
                indent=2,
            )
        )
        return len(entries)

    # -- checkpoints / runs -------------------------------------------------------

    def checkpoint_path(self, name: str) -> Path:
        return self.root / "checkpoints" / name

    def put_run(self, run_id: str, report: dict):
        with self._lock:
            (self.root / "runs" / f"{run_id}.json").write_text(json.dumps(report, indent=2))

    def get_run(self, run_id: str) -> dict:
        path = self.root / "runs" / f"{run_id}.json"
        if not path.exists():
            raise UnknownId(f"run {run_id}")
        return json.loads(path.read_text())

    def list_runs(self) -> List[str]:
        return sorted(p.stem for p in (self.root / "runs").glob("*.json"))


def open_store(directory) -> Store:
    return Store(directory)
