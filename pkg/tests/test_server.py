import io

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from usvkit.callsim import CallSpec, NoiseSpec, RecordingPlan, synth_recording
from usvkit.classifier import CallLabel
from usvkit.datastore import Annotation, open_store
from usvkit.server import create_app
from usvkit.spectrogram import SpectroImage
from usvkit.synthgen import MorphParams, SyntheticCall


@pytest.fixture
def client(tmp_path):
    store = open_store(tmp_path / "store")
    calls = tuple(
        CallSpec(category=CallLabel.FLAT, onset_s=0.2 + 0.3 * i, duration_ms=60, f0=50_000)
        for i in range(3)
    )
    plan = RecordingPlan(duration_s=1.2, calls=calls, noise=NoiseSpec(broadband_db=-40, click_rate_hz=0), seed=0)
    clip, _ = synth_recording(plan)
    rid = store.add_recording(clip, recording_id="rec1", noise_tag="low")
    seed_id = store.put_annotation(
        Annotation(id="", recording_id=rid, box=(0.2, 0.26, 48_000, 52_000),
                   label=CallLabel.FLAT, source="human", annotator="h")
    )
    rng = np.random.default_rng(0)
    store.put_synthetic(
        SyntheticCall(
            id="syn-1",
            tile=SpectroImage(pixels=rng.uniform(0, 1, (64, 64))),
            seed_annotation_id=seed_id,
            label=CallLabel.FLAT,
            params=MorphParams(seed=0),
        )
    )
    app = create_app(store, tile_size=64)
    with TestClient(app) as tc:
        tc.seed_id = seed_id
        yield tc
    store.close()


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ok"}


def test_recordings_listing(client):
    body = client.get("/recordings").json()
    assert len(body) == 1
    assert body[0]["id"] == "rec1"
    assert body[0]["sample_rate_hz"] == 250_000
    assert body[0]["noise_tag"] == "low"


def test_spectrogram_strip_is_png(client):
    response = client.get(
        "/recordings/rec1/spectrogram", params={"t0": 0.0, "t1": 0.5, "fmin": 20_000, "fmax": 95_000}
    )
    assert response.status_code == 200
    assert response.headers["content-type"] == "image/png"
    img = Image.open(io.BytesIO(response.content))
    assert img.mode == "L"
    assert img.size[0] > 100  # time axis
    # repeated call hits the cache and is byte-identical
    again = client.get(
        "/recordings/rec1/spectrogram", params={"t0": 0.0, "t1": 0.5, "fmin": 20_000, "fmax": 95_000}
    )
    assert again.content == response.content


def test_annotation_round_trip(client):
    body = {
        "recording_id": "rec1",
        "box": {"t_start": 0.5, "t_end": 0.56, "f_min": 48_000, "f_max": 52_000},
        "label": "Trill",
        "annotator": "keyboard",
    }
    created = client.post("/annotations", json=body)
    assert created.status_code == 201
    ann_id = created.json()["id"]
    got = client.get(f"/annotations/{ann_id}").json()
    assert got["label"] == "Trill"
    assert got["source"] == "human"
    listed = client.get("/annotations", params={"label": "Trill"}).json()
    assert ann_id in {a["id"] for a in listed}


def test_annotation_patch_appends_audit(client):
    created = client.post(
        "/annotations",
        json={
            "recording_id": "rec1",
            "box": {"t_start": 0.8, "t_end": 0.86, "f_min": 48_000, "f_max": 52_000},
            "label": "Flat",
            "annotator": "a",
        },
    ).json()
    patched = client.patch(
        f"/annotations/{created['id']}", json={"label": "Short", "annotator": "b"}
    ).json()
    assert patched["label"] == "Short"
    assert len(patched["audit"]) == 2


def test_unknown_recording_404_with_error_shape(client):
    response = client.get("/recordings/nope/candidates")
    assert response.status_code == 404
    body = response.json()
    assert set(body) == {"code", "message"}


def test_candidates_lists_annotations(client):
    body = client.get("/recordings/rec1/candidates").json()
    assert len(body) >= 1
    assert all("box" in c for c in body)


def test_synthetic_queue_and_decision_conflict(client):
    queue = client.get("/synthetics", params={"status": "pending"}).json()
    assert [s["id"] for s in queue] == ["syn-1"]
    tile = client.get("/synthetics/syn-1/tile")
    assert tile.status_code == 200 and tile.headers["content-type"] == "image/png"
    seed_tile = client.get("/synthetics/syn-1/seed_tile")
    assert seed_tile.status_code == 200

    ok = client.post("/synthetics/syn-1/decision", json={"verdict": "accept", "reviewer": "me"})
    assert ok.status_code == 200
    assert ok.json()["review_status"] == "accepted"
    # idempotent same verdict
    again = client.post("/synthetics/syn-1/decision", json={"verdict": "accept", "reviewer": "me"})
    assert again.status_code == 200
    conflict = client.post("/synthetics/syn-1/decision", json={"verdict": "reject", "reviewer": "me"})
    assert conflict.status_code == 409
    body = conflict.json()
    assert body["code"] == "AlreadyDecided"
    assert client.get("/synthetics", params={"status": "pending"}).json() == []


def test_metrics_run_endpoint(client):
    client.app.state.store.put_run("run1", {"d_prime": {"value": 2.475}})
    assert client.get("/metrics/runs/run1").json()["d_prime"]["value"] == 2.475
    assert client.get("/metrics/runs/run2").status_code == 404


def make_training_store(tmp_path, corpus):
    """Store whose tiles are pre-rendered synthetics so training is fast."""
    store = open_store(tmp_path / "train_store")
    silent = RecordingPlan(duration_s=0.2, calls=(), noise=NoiseSpec(broadband_db=-60, click_rate_hz=0), seed=1)
    clip, _ = synth_recording(silent)
    rid = store.add_recording(clip, recording_id="base")
    categories = corpus.categories
    by_cat = {}
    for tile, label in zip(corpus.tiles, corpus.labels):
        by_cat.setdefault(int(label), []).append(tile)

    seed_ids = {}
    for cat_idx, tiles in by_cat.items():
        label = CallLabel(categories[cat_idx])
        if label == CallLabel.NOISE:
            continue
        seed_ids[cat_idx] = store.put_annotation(
            Annotation(id="", recording_id=rid, box=(0.01, 0.06, 40_000, 60_000),
                       label=label, source="human", annotator="h")
        )
    # natural val tiles must render from audio; instead store synthetics as
    # train-only extras and keep two real natural annotations per category
    for cat_idx, tiles in by_cat.items():
        label = CallLabel(categories[cat_idx])
        if label == CallLabel.NOISE:
            continue
        for i, tile in enumerate(tiles[:4]):
            sid = store.put_synthetic(
                SyntheticCall(
                    id=f"syn-{cat_idx}-{i}",
                    tile=SpectroImage(pixels=tile),
                    seed_annotation_id=seed_ids[cat_idx],
                    label=label,
                    params=MorphParams(seed=i),
                )
            )
            store.decide_synthetic(sid, "accept", "auto")
    return store


def test_train_job_lifecycle(tmp_path, small_tile_corpus):
    store = make_training_store(tmp_path, small_tile_corpus)
    manifest = store.build_split(val_fraction=0.3, seed=0)
    app = create_app(store, tile_size=64)
    with TestClient(app) as client:
        submitted = client.post(
            "/train",
            json={"manifest_version": manifest.version,
                  "config": {"epochs": 2, "tile_size": 48, "seed": 1, "batch_size": 16}},
        )
        assert submitted.status_code == 202
        job_id = submitted.json()["job_id"]
        assert submitted.json()["state"] in ("queued", "running")

        import time

        for _ in range(600):
            status = client.get(f"/jobs/{job_id}").json()
            if status["state"] in ("done", "failed"):
                break
            time.sleep(0.2)
        assert status["state"] == "done", status["error"]
        assert status["progress"] == 1.0
        assert status["result"]["checkpoint"]
        assert len(status["history"]) == 2
        # checkpoint landed in the store
        assert (store.root / "checkpoints" / status["result"]["checkpoint"]).exists()
        # forward-only state machine: unknown job is a 404
        assert client.get("/jobs/job-9999").status_code == 404
    store.close()
