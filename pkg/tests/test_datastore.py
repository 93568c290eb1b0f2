import json

import numpy as np
import pytest

from usvkit.audio_io import AudioClip
from usvkit.callsim import CallSpec, NoiseSpec, RecordingPlan, synth_recording
from usvkit.classifier import CallLabel
from usvkit.datastore import (
    Annotation,
    SchemaMismatch,
    Store,
    StoreLocked,
    TooFewCategories,
    UnknownId,
    UnknownRecording,
    open_store,
)
from usvkit.spectrogram import SpectroImage, SpectrogramParams, load_png
from usvkit.synthgen import AlreadyDecided, MorphParams, SyntheticCall


@pytest.fixture
def store(tmp_path):
    s = open_store(tmp_path / "store")
    yield s
    s.close()


def small_recording(seed=0):
    calls = tuple(
        CallSpec(category=CallLabel.FLAT, onset_s=0.2 + i * 0.3, duration_ms=60, f0=50_000 + i * 2_000)
        for i in range(3)
    )
    plan = RecordingPlan(duration_s=1.5, calls=calls, noise=NoiseSpec(broadband_db=-40, click_rate_hz=0), seed=seed)
    clip, truth = synth_recording(plan)
    return clip, truth


def ann(recording_id, label=CallLabel.FLAT, box=(0.2, 0.26, 48_000, 52_000), source="human"):
    return Annotation(id="", recording_id=recording_id, box=box, label=label, source=source, annotator="tester")


def test_fresh_store_is_empty(store):
    assert store.list_recordings() == []
    assert store.list_annotations() == []
    assert store.list_manifests() == []


def test_put_get_round_trip(store):
    clip, _ = small_recording()
    rid = store.add_recording(clip, noise_tag="low")
    aid = store.put_annotation(ann(rid))
    got = store.get_annotation(aid)
    assert got.recording_id == rid
    assert got.label == CallLabel.FLAT
    assert got.box == (0.2, 0.26, 48_000, 52_000)
    assert got.source == "human"


def test_unknown_recording_and_id(store):
    with pytest.raises(UnknownRecording):
        store.put_annotation(ann("missing"))
    with pytest.raises(UnknownId):
        store.get_annotation("a999999")


def test_update_label_appends_audit(store):
    clip, _ = small_recording()
    rid = store.add_recording(clip)
    aid = store.put_annotation(ann(rid, label=CallLabel.FLAT))
    store.update_label(aid, CallLabel.TRILL, "reviewer-a")
    store.update_label(aid, CallLabel.SHORT, "reviewer-b")
    got = store.get_annotation(aid)
    assert got.label == CallLabel.SHORT
    assert len(got.audit) == 3  # initial label + two updates
    assert [e.get("label") for e in got.audit] == ["Flat", "Trill", "Short"]


def test_list_filter_by_label(store):
    clip, _ = small_recording()
    rid = store.add_recording(clip)
    store.put_annotation(ann(rid, label=CallLabel.TRILL))
    store.put_annotation(ann(rid, label=CallLabel.FLAT, box=(0.5, 0.56, 48_000, 52_000)))
    trills = store.list_annotations(label=CallLabel.TRILL)
    assert len(trills) == 1
    assert trills[0].label == CallLabel.TRILL


def test_reopen_preserves_records_bit_exact(tmp_path):
    path = tmp_path / "store"
    with open_store(path) as store:
        clip, _ = small_recording()
        rid = store.add_recording(clip, noise_tag="x")
        aid = store.put_annotation(ann(rid))
        store.update_label(aid, CallLabel.TRILL, "r")
        before = store.get_annotation(aid)
    with open_store(path) as store:
        after = store.get_annotation(aid)
        assert after == before
        rec = store.get_recording(rid)
        assert rec.noise_tag == "x"


def test_schema_mismatch(tmp_path):
    path = tmp_path / "store"
    open_store(path).close()
    meta = path / "meta.json"
    meta.write_text(json.dumps({"schema_version": 99}))
    with pytest.raises(SchemaMismatch):
        open_store(path)


def test_concurrent_writer_detected(tmp_path):
    path = tmp_path / "store"
    first = open_store(path)
    with pytest.raises(StoreLocked):
        open_store(path)
    first.close()
    open_store(path).close()  # lock released


def synthetic_for(store, seed_id, idx=0):
    rng = np.random.default_rng(idx)
    return SyntheticCall(
        id=f"syn-{seed_id}-{idx:03d}",
        tile=SpectroImage(pixels=rng.uniform(0, 1, (32, 32))),
        seed_annotation_id=seed_id,
        label=CallLabel.FLAT,
        params=MorphParams(seed=idx),
    )


def test_synthetic_lifecycle(store):
    clip, _ = small_recording()
    rid = store.add_recording(clip)
    seed_id = store.put_annotation(ann(rid))
    sid = store.put_synthetic(synthetic_for(store, seed_id))
    assert store.list_synthetics(status="pending")[0].id == sid

    decided = store.decide_synthetic(sid, "accept", "reviewer")
    assert decided.review_status == "accepted"
    # idempotent same verdict
    store.decide_synthetic(sid, "accept", "reviewer")
    with pytest.raises(AlreadyDecided):
        store.decide_synthetic(sid, "reject", "reviewer")
    with pytest.raises(UnknownId):
        store.decide_synthetic("syn-none-000", "accept", "r")


def test_synthetic_tile_png_and_sidecar(store, tmp_path):
    clip, _ = small_recording()
    rid = store.add_recording(clip)
    seed_id = store.put_annotation(ann(rid))
    syn = synthetic_for(store, seed_id)
    sid = store.put_synthetic(syn)
    tile = store.synthetic_tile(sid)
    assert np.array_equal(tile.pixels, np.round(syn.tile.pixels * 255) / 255.0)
    sidecar = json.loads((store.root / "tiles" / f"{sid}.json").read_text())
    assert sidecar["seed_annotation_id"] == seed_id
    assert sidecar["status"] == "pending"
    store.decide_synthetic(sid, "reject", "r")
    sidecar = json.loads((store.root / "tiles" / f"{sid}.json").read_text())
    assert sidecar["status"] == "rejected"


def populate_for_split(store, n_per_cat=10, categories=(CallLabel.FLAT, CallLabel.TRILL, CallLabel.SHORT)):
    clip, _ = small_recording()
    rid = store.add_recording(clip)
    ids = []
    for cat in categories:
        for i in range(n_per_cat):
            ids.append(
                store.put_annotation(
                    ann(rid, label=cat, box=(0.01 + 0.001 * len(ids), 0.05 + 0.001 * len(ids), 40_000, 60_000))
                )
            )
    return rid, ids


def test_build_split_stratified_and_deterministic(store):
    populate_for_split(store, n_per_cat=10)
    m1 = store.build_split(val_fraction=0.2, seed=5)
    assert m1.version == 1
    assert len(m1.val_ids) == 6  # 20% of 30
    assert set(m1.val_ids).isdisjoint(m1.train_ids)
    m2 = store.build_split(val_fraction=0.2, seed=5)
    assert m2.version == 2
    assert m2.val_ids == m1.val_ids
    assert m2.train_ids == m1.train_ids


def test_build_split_synthetics_train_only(store):
    rid, ids = populate_for_split(store, n_per_cat=5, categories=(CallLabel.FLAT, CallLabel.TRILL))
    accepted = store.put_synthetic(synthetic_for(store, ids[0], idx=1))
    store.decide_synthetic(accepted, "accept", "r")
    pending = store.put_synthetic(synthetic_for(store, ids[1], idx=2))
    rejected = store.put_synthetic(synthetic_for(store, ids[2], idx=3))
    store.decide_synthetic(rejected, "reject", "r")

    manifest = store.build_split(val_fraction=0.2, seed=0)
    assert accepted in manifest.train_ids
    assert accepted not in manifest.val_ids
    assert pending not in manifest.annotation_ids
    assert rejected not in manifest.annotation_ids


def test_build_split_needs_categories(store):
    clip, _ = small_recording()
    rid = store.add_recording(clip)
    store.put_annotation(ann(rid, label=CallLabel.FLAT))
    with pytest.raises(TooFewCategories):
        store.build_split()


def test_counts_per_category(store):
    populate_for_split(store, n_per_cat=4, categories=(CallLabel.FLAT, CallLabel.TRILL))
    manifest = store.build_split(val_fraction=0.25, seed=1)
    assert manifest.counts_per_category == {"Flat": 4, "Trill": 4}


def test_export_tiles_deterministic(store, tmp_path):
    rid, ids = populate_for_split(store, n_per_cat=3, categories=(CallLabel.FLAT, CallLabel.TRILL))
    sid = store.put_synthetic(synthetic_for(store, ids[0], idx=7))
    store.decide_synthetic(sid, "accept", "r")
    manifest = store.build_split(val_fraction=0.3, seed=2)
    params = SpectrogramParams()

    out1 = tmp_path / "tiles1"
    out2 = tmp_path / "tiles2"
    n1 = store.export_tiles(manifest, params, out1, out_size=48)
    n2 = store.export_tiles(manifest, params, out2, out_size=48)
    assert n1 == n2 == len(manifest.annotation_ids)
    for png in sorted(out1.glob("*.png")):
        assert png.read_bytes() == (out2 / png.name).read_bytes()
    # synthetic pass-through is bit-identical to the stored tile
    stored = (store.root / "tiles" / f"{sid}.png").read_bytes()
    assert (out1 / f"{sid}.png").read_bytes() == stored
    listing = json.loads((out1 / "manifest.json").read_text())
    assert len(listing["tiles"]) == n1


def test_store_round_trip_bulk(tmp_path):
    """Hundreds of annotations and synthetics survive close/reopen."""
    path = tmp_path / "bulk"
    with open_store(path) as store:
        clip, _ = small_recording()
        rid = store.add_recording(clip)
        nat_ids = []
        for i in range(50):
            nat_ids.append(
                store.put_annotation(
                    ann(rid, label=CallLabel.TRILL if i % 2 else CallLabel.FLAT,
                        box=(0.001 * i, 0.001 * i + 0.02, 40_000, 60_000))
                )
            )
        syn_ids = [store.put_synthetic(synthetic_for(store, nat_ids[i % 50], idx=i)) for i in range(20)]
        for i, sid in enumerate(syn_ids):
            if i % 3 == 0:
                store.decide_synthetic(sid, "accept", "r")
        snapshot = {a.id: a for a in store.list_annotations()}
        syn_snapshot = {s.id: s for s in store.list_synthetics()}
    with open_store(path) as store:
        assert {a.id: a for a in store.list_annotations()} == snapshot
        assert {s.id: s for s in store.list_synthetics()} == syn_snapshot


def test_manifest_invariants_checked_on_load(tmp_path):
    path = tmp_path / "store"
    with open_store(path) as store:
        populate_for_split(store, n_per_cat=5, categories=(CallLabel.FLAT, CallLabel.TRILL))
        manifest = store.build_split(val_fraction=0.2, seed=0)
        # corrupt: put a train id into val too
        mpath = path / "manifests" / f"{manifest.version}.json"
        data = json.loads(mpath.read_text())
        data["splits"]["val"].append(data["splits"]["train"][0])
        mpath.write_text(json.dumps(data))
    with pytest.raises(SchemaMismatch):
        open_store(path)
