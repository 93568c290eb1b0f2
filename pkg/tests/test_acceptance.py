"""Acceptance suite: one test per criterion, one printed line each.

Run `pytest tests/test_acceptance.py -v -s` to see the PASS lines; any
assertion failure is the corresponding FAIL.
"""
import math

import numpy as np
import pytest

from usvkit import callsim, classifier as cl, detection, metrics, synthgen
from usvkit.audio_io import AudioClip
from usvkit.classifier import CallLabel
from usvkit.datastore import Annotation, open_store
from usvkit.spectrogram import SpectroImage, SpectrogramParams, stft_power

from conftest import make_tile_corpus


def report(n, text):
    print(f"ACCEPTANCE {n} PASS: {text}")


def test_criterion_01_table2_rates():
    rows = {
        "VocalMat-High": (metrics.OutcomeTally(139, 124, 15, 6), 0.892, 0.108),
        "DeepSqueak-High": (metrics.OutcomeTally(1470, 78, 1392, 33), 0.053, 0.947),
        "DeepSqueak-Low": (metrics.OutcomeTally(201, 175, 26, 13), 0.871, 0.129),
    }
    for name, (tally, hit, fa) in rows.items():
        rep = metrics.rates(tally)
        assert abs(rep.hit_rate - hit) < 0.001, name
        assert abs(rep.false_alarm_rate - fa) < 0.001, name
    report(1, "hit/false-alarm rates reproduce all three derivable table rows within 0.001")


def test_criterion_02_d_prime():
    dp = metrics.d_prime(0.892, 0.108)
    assert abs(dp.value - 2.475) <= 0.005
    assert metrics.d_prime(0.5, 0.5).value == 0.0
    report(2, f"d'(0.892, 0.108) = {dp.value:.4f} (target 2.475 +- 0.005); d'(0.5, 0.5) = 0")


def _probit_bisection(p):
    lo, hi = -10.0, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(-mid / math.sqrt(2)) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_criterion_03_probit_oracle_sweep():
    rng = np.random.default_rng(1234)
    ps = rng.uniform(1e-6, 1 - 1e-6, 1000)
    worst = 0.0
    for p in ps:
        worst = max(worst, abs(metrics.probit(float(p)) - _probit_bisection(float(p))))
    assert worst < 1e-8
    report(3, f"probit vs bisection oracle over 1000 seeded p: max |delta| = {worst:.2e} < 1e-8")


def test_criterion_04_t_machinery():
    r = metrics.welch_t([1, 2, 3], [4, 5, 6])
    assert abs(r.t - (-3.6742)) < 1e-3
    assert abs(r.df - 4.00) < 1e-3

    from scipy.integrate import quad

    df = 10.0
    c = math.exp(math.lgamma((df + 1) / 2) - math.lgamma(df / 2)) / math.sqrt(df * math.pi)
    oracle, _ = quad(lambda x: c * (1 + x * x / df) ** (-(df + 1) / 2), 2.0, np.inf)
    got = metrics.t_sf(2.0, 10)
    assert abs(got - 0.036694) < 1e-5
    assert abs(got - oracle) < 1e-8
    report(4, f"welch t({r.df:.2f}) = {r.t:.4f}; t_sf(2, 10) = {got:.6f} matches quadrature oracle")


def test_criterion_05_stft_vs_naive_dft():
    rng = np.random.default_rng(55)
    params = SpectrogramParams(window_len=256, hop=96, fft_len=256, window_kind="rectangular")
    n_bins = 256 // 2 + 1
    k = np.arange(256)
    dft_matrix = np.exp(-2j * np.pi * np.outer(np.arange(n_bins), k) / 256)
    worst = 0.0
    for _ in range(50):
        length = int(rng.integers(256, 4097))
        x = rng.uniform(-1, 1, length)
        power = stft_power(x, params)
        for f in range(0, power.shape[0], max(1, power.shape[0] // 4)):
            frame = x[f * 96 : f * 96 + 256]
            oracle = np.abs(dft_matrix @ frame) ** 2
            keep = oracle > 1e-18 * oracle.max()
            rel = np.abs(power[f, keep] - oracle[keep]) / oracle[keep]
            worst = max(worst, float(rel.max()))
        # Parseval per rectangular frame
        frame0 = x[:256]
        total = power[0, 0] + power[0, -1] + 2 * power[0, 1:-1].sum()
        assert abs(total / 256 - np.sum(frame0**2)) <= 1e-9 * np.sum(frame0**2)
    assert worst < 1e-9
    report(5, f"STFT vs naive DFT on 50 seeded clips: max rel err = {worst:.2e} < 1e-9; Parseval holds")


def test_criterion_06_image_op_oracles():
    rng = np.random.default_rng(606)
    params = SpectrogramParams()

    def spec_of(matrix):
        from usvkit.spectrogram import Spectrogram

        return Spectrogram(
            power_db=matrix, bin_hz=488.28125, hop_s=0.000512, params=params,
            sample_rate_hz=250_000,
        )

    # vectorized shift-stack oracles (independent route: explicit clamped
    # shifts + full sort / boolean algebra)
    def median_oracle(matrix, wt, wf):
        h, w = matrix.shape
        stack = []
        rows = np.clip(np.arange(h)[:, None] + np.arange(-(wt // 2), wt // 2 + 1)[None, :], 0, h - 1)
        cols = np.clip(np.arange(w)[:, None] + np.arange(-(wf // 2), wf // 2 + 1)[None, :], 0, w - 1)
        for di in range(wt):
            for dj in range(wf):
                stack.append(matrix[rows[:, di]][:, cols[:, dj]])
        stacked = np.sort(np.stack(stack), axis=0)
        return stacked[len(stack) // 2]

    def erode_oracle(mask, radius):
        out = mask.copy()
        padded = np.pad(mask, radius, constant_values=False)
        h, w = mask.shape
        for r in range(1, radius + 1):
            for di, dj in ((r, 0), (-r, 0), (0, r), (0, -r)):
                out &= padded[radius + di : radius + di + h, radius + dj : radius + dj + w]
        return out

    def dilate_oracle(mask, radius):
        out = mask.copy()
        padded = np.pad(mask, radius, constant_values=False)
        h, w = mask.shape
        for r in range(1, radius + 1):
            for di, dj in ((r, 0), (-r, 0), (0, r), (0, -r)):
                out |= padded[radius + di : radius + di + h, radius + dj : radius + dj + w]
        return out

    def flood_oracle(mask):
        h, w = mask.shape
        labels = np.zeros((h, w), dtype=int)
        count = 0
        for si in range(h):
            for sj in range(w):
                if mask[si, sj] and labels[si, sj] == 0:
                    count += 1
                    stack = [(si, sj)]
                    labels[si, sj] = count
                    while stack:
                        i, j = stack.pop()
                        for di in (-1, 0, 1):
                            for dj in (-1, 0, 1):
                                ii, jj = i + di, j + dj
                                if 0 <= ii < h and 0 <= jj < w and mask[ii, jj] and not labels[ii, jj]:
                                    labels[ii, jj] = count
                                    stack.append((ii, jj))
        return labels, count

    for trial in range(200):
        matrix = rng.normal(-60, 8, (64, 64))
        wt, wf = rng.choice([1, 3, 5]), rng.choice([3, 5, 7])
        got = detection.local_median_floor(spec_of(matrix), (int(wt), int(wf)))
        assert np.array_equal(got, median_oracle(matrix, int(wt), int(wf))), trial

        mask = rng.uniform(size=(64, 64)) < rng.uniform(0.2, 0.7)
        radius = int(rng.choice([1, 2]))
        got_open = detection.morphological_open(mask, radius)
        want_open = dilate_oracle(erode_oracle(mask, radius), radius)
        assert np.array_equal(got_open, want_open), trial

        segments = detection.connected_components(mask)
        labels, count = flood_oracle(mask)
        assert len(segments) == count, trial
        for k, seg in enumerate(segments, start=1):
            assert {int(labels[i, j]) for i, j in seg.pixels} == {k}, trial
    report(6, "median / opening / components match brute-force oracles exactly on 200 seeded 64x64 inputs")


def test_criterion_07_grad_check():
    rng = np.random.default_rng(42)
    model = cl.init_model(32, seed=1)
    tiles = rng.uniform(0, 1, (3, 32, 32))
    labels = np.array([0, 5, 11])
    err = cl.grad_check(model, tiles, labels, n_samples=200)
    assert err < 1e-4
    report(7, f"gradient check on 32x32 model: max relative error = {err:.2e} < 1e-4")


@pytest.fixture(scope="module")
def preset_recordings():
    out = {}
    for preset in ("low_noise", "high_noise"):
        plan = callsim.preset_plan(preset, seed=7)
        out[preset] = callsim.synth_recording(plan)
    return out


def test_criterion_08_end_to_end_detection(preset_recordings):
    config = detection.DetectionConfig(merge_gap_ms=20.0)

    clip, truth = preset_recordings["low_noise"]
    cands = detection.detect(clip, config=config)
    tally = metrics.match_detections(cands, truth.boxes)
    low_rates = metrics.rates(tally)
    assert low_rates.hit_rate >= 0.90
    assert low_rates.false_alarm_rate <= 0.10
    assert tally.hits >= 36  # >= 90% of the 40 planted calls recovered

    clip, truth = preset_recordings["high_noise"]
    cands = detection.detect(clip, config=config)
    tally_hi = metrics.match_detections(cands, truth.boxes)
    rates_hi = metrics.rates(tally_hi)
    dp_detect = metrics.d_prime(
        rates_hi.hit_rate, rates_hi.false_alarm_rate, n_for_correction=tally_hi.detections
    )
    base = detection.baseline_detect(clip, config=config)
    tally_base = metrics.match_detections(base, truth.boxes)
    rates_base = metrics.rates(tally_base)
    dp_base = metrics.d_prime(
        rates_base.hit_rate, rates_base.false_alarm_rate, n_for_correction=tally_base.detections
    )
    assert dp_detect.value > dp_base.value
    report(
        8,
        f"low_noise hit={low_rates.hit_rate:.3f} fa={low_rates.false_alarm_rate:.3f}; "
        f"high_noise d'(detect)={dp_detect.value:.2f} > d'(baseline)={dp_base.value:.2f}",
    )


def test_criterion_09_classifier_on_simulator_corpus():
    corpus = make_tile_corpus(per_category=50, tile_size=64, seed=2024)
    assert len(corpus) == 600
    model = cl.init_model(64, seed=0)
    config = cl.TrainConfig(epochs=30, batch_size=32, learning_rate=0.01, seed=0, val_fraction=0.2)
    _, history = cl.train(model, corpus, config)
    best = max(history.val_accuracy)
    assert best >= 0.90
    report(9, f"600-tile simulator corpus: best val accuracy = {best:.3f} >= 0.90 within 30 epochs")


def _augmented(dataset, per_seed, seed):
    tiles = list(dataset.tiles)
    labels = list(dataset.labels)
    for i, (tile, label) in enumerate(zip(dataset.tiles, dataset.labels)):
        for j in range(per_seed):
            params = synthgen.MorphParams(max_displacement_px=6, seed=seed * 100_003 + i * 17 + j)
            tiles.append(synthgen.morph_once(SpectroImage(pixels=tile), params).pixels)
            labels.append(label)
    return cl.TileDataset(np.stack(tiles), np.array(labels), dataset.categories)


def test_criterion_10_augmentation_improves_generalization():
    natural = make_tile_corpus(per_category=10, tile_size=64, seed=100, include_noise=False, noise_db=-22)
    held_out = make_tile_corpus(per_category=15, tile_size=64, seed=900, include_noise=False, noise_db=-22)
    pairs = []
    wins = 0
    for seed in range(5):
        config = cl.TrainConfig(epochs=12, batch_size=32, learning_rate=0.01, seed=seed, val_fraction=0.2)
        base_model, _ = cl.train(cl.init_model(64, seed=seed), natural, config)
        acc_base = cl.validate(base_model, held_out)
        augmented = _augmented(natural, per_seed=2, seed=seed)  # 10 -> 30 per category
        aug_model, _ = cl.train(cl.init_model(64, seed=seed), augmented, config)
        acc_aug = cl.validate(aug_model, held_out)
        pairs.append((acc_base, acc_aug))
        wins += int(acc_aug > acc_base)
    ttest = metrics.paired_t(pairs)
    assert wins >= 4, pairs
    assert ttest.t > 0  # positive mean(post - pre): improvement sign is correct
    report(
        10,
        f"morph augmentation 10->30 tiles/category: improvement in {wins}/5 seeds, "
        f"paired t = {ttest.t:.2f} (p = {ttest.p_two_tailed:.4f}); pairs = "
        + ", ".join(f"{a:.3f}->{b:.3f}" for a, b in pairs),
    )


def test_criterion_11_synthgen_identities_and_growth_plan(tmp_path):
    # zero-amplitude morph is bit-identical
    rng = np.random.default_rng(0)
    tile = SpectroImage(pixels=rng.uniform(0, 1, (64, 64)))
    out = synthgen.morph_once(tile, synthgen.MorphParams(max_displacement_px=0, seed=3))
    assert np.array_equal(out.pixels, tile.pixels)

    # 1000 random fields respect the displacement bound
    for seed in range(1000):
        field = synthgen.random_field(synthgen.MorphParams(max_displacement_px=6, seed=seed), (32, 32))
        assert np.max(np.abs(field.dx)) <= 6.0
        assert np.max(np.abs(field.dy)) <= 6.0

    # growth plan replay: 401 -> 802 -> 1,206 with 415:791 at stage 2
    with open_store(tmp_path / "growth") as store:
        plan = callsim.RecordingPlan(
            duration_s=0.3,
            calls=(callsim.CallSpec(category=CallLabel.FLAT, onset_s=0.1, duration_ms=60, f0=55_000),),
            noise=callsim.NoiseSpec(broadband_db=-45, click_rate_hz=0),
            seed=0,
        )
        clip, _ = callsim.synth_recording(plan)
        rid = store.add_recording(clip, recording_id="growth")
        cats = [CallLabel(c) for c in cl.CALL_CATEGORIES]
        nat_ids = [
            store.put_annotation(
                Annotation(id="", recording_id=rid, box=(0.1, 0.16, 50_000, 60_000),
                           label=cats[i % len(cats)], source="human", annotator="h")
            )
            for i in range(401)
        ]
        m1 = store.build_split(val_fraction=0.2, seed=0)
        assert len(m1.annotation_ids) == 401

        seed_tile = store.render_tile(nat_ids[0], SpectrogramParams(), out_size=32)
        seeds = [store.get_annotation(i) for i in nat_ids]
        stage1 = synthgen.propose(seeds, [seed_tile] * len(seeds), 1, synthgen.MorphParams(seed=1))
        assert len(stage1) == 401
        for syn in stage1:
            store.put_synthetic(syn)
            store.decide_synthetic(syn.id, "accept", "reviewer")
        m2 = store.build_split(val_fraction=0.2, seed=0)
        assert len(m2.annotation_ids) == 802

        extra_nat = [
            store.put_annotation(
                Annotation(id="", recording_id=rid, box=(0.1, 0.16, 50_000, 60_000),
                           label=cats[i % len(cats)], source="human", annotator="h")
            )
            for i in range(14)
        ]
        stage2_seeds = [store.get_annotation(i) for i in (nat_ids + extra_nat)[:390]]
        stage2 = synthgen.propose(
            stage2_seeds, [seed_tile] * len(stage2_seeds), 1, synthgen.MorphParams(seed=2)
        )
        assert len(stage2) == 390
        for syn in stage2:
            store.put_synthetic(syn)
            store.decide_synthetic(syn.id, "accept", "reviewer")
        m3 = store.build_split(val_fraction=0.2, seed=0)
        naturals = [i for i in m3.annotation_ids if store.get_annotation(i).natural]
        synthetics = [i for i in m3.annotation_ids if not store.get_annotation(i).natural]
        assert len(m3.annotation_ids) == 1206
        assert len(naturals) == 415
        assert len(synthetics) == 791
    report(11, "morph identities hold; growth replay yields 401 -> 802 -> 1,206 (415 natural : 791 synthetic)")


def test_criterion_12_datastore_round_trip(tmp_path):
    path = tmp_path / "bulk"
    rng = np.random.default_rng(12)
    cats = [CallLabel(c) for c in cl.CALL_CATEGORIES]
    with open_store(path) as store:
        plan = callsim.RecordingPlan(
            duration_s=0.3,
            calls=(callsim.CallSpec(category=CallLabel.FLAT, onset_s=0.1, duration_ms=60, f0=55_000),),
            noise=callsim.NoiseSpec(broadband_db=-45, click_rate_hz=0),
            seed=0,
        )
        clip, _ = callsim.synth_recording(plan)
        rid = store.add_recording(clip, recording_id="bulk")
        nat_ids = [
            store.put_annotation(
                Annotation(
                    id="", recording_id=rid,
                    box=(0.001 * (i % 200), 0.001 * (i % 200) + 0.02, 40_000.0, 60_000.0),
                    label=cats[i % len(cats)], source="human", annotator=f"u{i % 3}",
                )
            )
            for i in range(500)
        ]
        for sid in range(200):
            syn = synthgen.SyntheticCall(
                id=f"syn-{sid:03d}",
                tile=SpectroImage(pixels=rng.uniform(0, 1, (32, 32))),
                seed_annotation_id=nat_ids[sid % 500],
                label=store.get_annotation(nat_ids[sid % 500]).label,
                params=synthgen.MorphParams(seed=sid),
            )
            store.put_synthetic(syn)
            if sid % 3 == 0:
                store.decide_synthetic(syn.id, "accept", "r")
            elif sid % 3 == 1:
                store.decide_synthetic(syn.id, "reject", "r")
        store.build_split(val_fraction=0.2, seed=1)
        store.build_split(val_fraction=0.3, seed=2)
        annotations = {a.id: a for a in store.list_annotations()}
        synthetics = {s.id: s for s in store.list_synthetics()}
        manifests = store.list_manifests()

    with open_store(path) as store:
        assert {a.id: a for a in store.list_annotations()} == annotations
        assert {s.id: s for s in store.list_synthetics()} == synthetics
        reloaded = store.list_manifests()
        assert reloaded == manifests
        for manifest in reloaded:
            train, val = set(manifest.train_ids), set(manifest.val_ids)
            assert not train & val
            assert all(store.get_annotation(v).natural for v in val)
            assert train | val <= set(manifest.annotation_ids)
    report(12, "500 annotations + 200 synthetics reopen bit-identical; manifest invariants hold")
