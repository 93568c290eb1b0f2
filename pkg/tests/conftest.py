import numpy as np
import pytest

from usvkit.callsim import CallSpec, NoiseSpec, RecordingPlan, _call_params, synth_recording
from usvkit.classifier import CALL_CATEGORIES, CATEGORIES, CallLabel, TileDataset
from usvkit.spectrogram import SpectrogramParams, compute_spectrogram, extract_tile


def make_tile_corpus(
    per_category: int,
    tile_size: int = 64,
    seed: int = 0,
    include_noise: bool = True,
    noise_db: float = -40.0,
):
    """Labeled tiles rendered from isolated synthesized calls plus pure
    noise crops for the Noise category. Deterministic per seed."""
    rng = np.random.default_rng(seed)
    params = SpectrogramParams()
    pairs = []
    categories = [CallLabel(c) for c in CALL_CATEGORIES]
    for cat in categories:
        for k in range(per_category):
            call_kwargs = _call_params(cat, rng)
            onset = 0.05
            duration_ms = call_kwargs["duration_ms"]
            call = CallSpec(category=cat, onset_s=onset, amplitude=0.5, **call_kwargs)
            plan = RecordingPlan(
                duration_s=onset + duration_ms / 1000.0 + 0.05,
                calls=(call,),
                noise=NoiseSpec(broadband_db=noise_db, click_rate_hz=0.0),
                seed=int(rng.integers(0, 2**31)),
            )
            clip, truth = synth_recording(plan)
            spec = compute_spectrogram(clip, params)
            box = truth.boxes[0]
            tile = extract_tile(
                spec, (box.t_start, box.t_end, box.f_min - 1000, box.f_max + 1000), out_size=tile_size
            )
            pairs.append((tile, cat))
    if include_noise:
        for k in range(per_category):
            plan = RecordingPlan(
                duration_s=0.15,
                calls=(),
                noise=NoiseSpec(broadband_db=noise_db, click_rate_hz=0.0),
                seed=int(rng.integers(0, 2**31)),
            )
            clip, _ = synth_recording(plan)
            spec = compute_spectrogram(clip, params)
            t0 = 0.02
            f0 = float(rng.uniform(35_000, 70_000))
            tile = extract_tile(spec, (t0, t0 + 0.05, f0 - 8_000, f0 + 8_000), out_size=tile_size)
            pairs.append((tile, CallLabel.NOISE))
    return TileDataset.from_pairs(pairs, categories=list(CATEGORIES))


@pytest.fixture(scope="session")
def small_tile_corpus():
    """12 categories x 12 tiles at 64 px; enough to exercise training."""
    return make_tile_corpus(per_category=12, tile_size=64, seed=123)
