"""Procedural ground-truth recordings: known call contours plus noise.

Each call category gets a quantified contour (thresholds are named
constants below) so detection and classification claims can be verified
against exact boxes and labels. Synthesis is phase-continuous FM over the
contour with raised-cosine amplitude edges.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, List, Tuple

import numpy as np

from .audio_io import AudioClip
from .classifier import CALL_CATEGORIES, CallLabel
from .errors import UsvkitError


class InvalidSpec(UsvkitError):
    pass


class AliasRisk(UsvkitError):
    pass


class OverlapError(UsvkitError):
    pass


class UnknownPreset(UsvkitError):
    pass


# contour thresholds (operationalized schema, configurable via CallSpec)
MIN_RAMP_EXCURSION_HZ = 10_000.0
MIN_STEP_HZ = 8_000.0
MIN_TRILL_CYCLES = 3.0
MAX_SHORT_MS = 12.0
SPLIT_GAP_RANGE_MS = (5.0, 15.0)
HIGH_BAND_HZ = (30_000.0, 90_000.0)

DEFAULT_SAMPLE_RATE = 250_000

_EDGE_RAMP_S = 0.002


@dataclass(frozen=True)
class CallSpec:
    category: CallLabel
    onset_s: float
    duration_ms: float
    f0: float
    fm_depth: float = 0.0
    fm_rate: float = 0.0
    step_delta: float = 0.0
    gap_ms: float = 0.0
    amplitude: float = 0.5

    def __post_init__(self):
        if self.category == CallLabel.NOISE:
            raise InvalidSpec("Noise is not a synthesizable call category")
        if self.duration_ms <= 0 or not 0.0 <= self.amplitude <= 1.0:
            raise InvalidSpec("bad duration or amplitude")

    @property
    def duration_s(self) -> float:
        return self.duration_ms / 1000.0

    @property
    def t_end(self) -> float:
        return self.onset_s + self.duration_s


@dataclass(frozen=True)
class CallContour:
    """Frequency trajectory and amplitude gate of one call, relative to
    call onset. gate(t) is 0 inside silent gaps, 1 elsewhere."""

    freq: Callable[[np.ndarray], np.ndarray]
    gate: Callable[[np.ndarray], np.ndarray]
    f_min: float
    f_max: float
    duration_s: float
    segments: Tuple[Tuple[float, float], ...]  # active (start, end) intervals


@dataclass(frozen=True)
class TruthBox:
    t_start: float
    t_end: float
    f_min: float
    f_max: float
    label: CallLabel


@dataclass(frozen=True)
class GroundTruth:
    boxes: List[TruthBox]


@dataclass(frozen=True)
class NoiseSpec:
    broadband_db: float = -40.0  # re: loudest call peak
    click_rate_hz: float = 0.05


@dataclass(frozen=True)
class RecordingPlan:
    duration_s: float
    calls: Tuple[CallSpec, ...]
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0

    def __post_init__(self):
        calls = tuple(sorted(self.calls, key=lambda c: c.onset_s))
        for a, b in zip(calls, calls[1:]):
            if a.t_end > b.onset_s:
                raise OverlapError(f"calls at {a.onset_s:.3f}s and {b.onset_s:.3f}s overlap")
        if calls and calls[-1].t_end > self.duration_s:
            raise OverlapError("plan duration does not cover all calls")
        object.__setattr__(self, "calls", calls)


def _whole(duration: float) -> Tuple[Tuple[float, float], ...]:
    return ((0.0, duration),)


def contour(spec: CallSpec) -> CallContour:
    """Piecewise frequency trajectory for the call's category."""
    T = spec.duration_s
    cat = spec.category
    always = lambda t: np.ones_like(np.asarray(t, dtype=np.float64))

    if cat in (CallLabel.FLAT, CallLabel.SHORT):
        if cat == CallLabel.SHORT and spec.duration_ms >= MAX_SHORT_MS:
            raise InvalidSpec(f"Short calls must be under {MAX_SHORT_MS} ms")
        f = lambda t: np.full_like(np.asarray(t, dtype=np.float64), spec.f0)
        return CallContour(f, always, spec.f0, spec.f0, T, _whole(T))

    if cat in (CallLabel.UPWARD_RAMP, CallLabel.DOWNWARD_RAMP):
        excursion = abs(spec.step_delta)
        if excursion < MIN_RAMP_EXCURSION_HZ:
            raise InvalidSpec(f"ramp excursion must be >= {MIN_RAMP_EXCURSION_HZ} Hz")
        sign = 1.0 if cat == CallLabel.UPWARD_RAMP else -1.0
        f = lambda t: spec.f0 + sign * excursion * np.asarray(t, dtype=np.float64) / T
        lo = min(spec.f0, spec.f0 + sign * excursion)
        hi = max(spec.f0, spec.f0 + sign * excursion)
        return CallContour(f, always, lo, hi, T, _whole(T))

    if cat == CallLabel.TRILL:
        if spec.fm_rate * T < MIN_TRILL_CYCLES:
            raise InvalidSpec(f"trill needs >= {MIN_TRILL_CYCLES} FM cycles")
        if spec.fm_depth <= 0:
            raise InvalidSpec("trill needs positive fm_depth")
        f = lambda t: spec.f0 + spec.fm_depth * np.sin(2.0 * np.pi * spec.fm_rate * np.asarray(t, dtype=np.float64))
        return CallContour(f, always, spec.f0 - spec.fm_depth, spec.f0 + spec.fm_depth, T, _whole(T))

    if cat == CallLabel.COMPLEX_TRILL:
        # trill over the first 60%, flat tail at f0
        t_split = 0.6 * T
        if spec.fm_rate * t_split < MIN_TRILL_CYCLES:
            raise InvalidSpec("complex trill needs >= 3 FM cycles in its trill part")
        if spec.fm_depth <= 0:
            raise InvalidSpec("complex trill needs positive fm_depth")

        def f(t):
            t = np.asarray(t, dtype=np.float64)
            trill = spec.f0 + spec.fm_depth * np.sin(2.0 * np.pi * spec.fm_rate * t)
            return np.where(t < t_split, trill, spec.f0)

        return CallContour(f, always, spec.f0 - spec.fm_depth, spec.f0 + spec.fm_depth, T, _whole(T))

    if cat == CallLabel.COMPLEX:
        if spec.fm_depth <= 0:
            raise InvalidSpec("complex needs positive fm_depth")
        # uneven piecewise-linear shape with 3 direction changes
        knots_t = np.array([0.0, 0.3, 0.55, 0.8, 1.0]) * T
        knots_f = spec.f0 + spec.fm_depth * np.array([0.0, 1.0, -0.4, 0.8, 0.1])
        f = lambda t: np.interp(np.asarray(t, dtype=np.float64), knots_t, knots_f)
        return CallContour(f, always, float(knots_f.min()), float(knots_f.max()), T, _whole(T))

    if cat == CallLabel.INVERTED_U:
        if spec.fm_depth <= 0:
            raise InvalidSpec("inverted-U needs positive fm_depth")
        f = lambda t: spec.f0 + spec.fm_depth * np.sin(np.pi * np.asarray(t, dtype=np.float64) / T)
        return CallContour(f, always, spec.f0, spec.f0 + spec.fm_depth, T, _whole(T))

    if cat in (CallLabel.STEP_UP, CallLabel.STEP_DOWN):
        if abs(spec.step_delta) < MIN_STEP_HZ:
            raise InvalidSpec(f"step must jump >= {MIN_STEP_HZ} Hz")
        sign = 1.0 if cat == CallLabel.STEP_UP else -1.0
        f2 = spec.f0 + sign * abs(spec.step_delta)
        mid = T / 2.0

        def f(t):
            t = np.asarray(t, dtype=np.float64)
            return np.where(t < mid, spec.f0, f2)

        return CallContour(f, always, min(spec.f0, f2), max(spec.f0, f2), T, _whole(T))

    if cat == CallLabel.SPLIT:
        if not SPLIT_GAP_RANGE_MS[0] <= spec.gap_ms <= SPLIT_GAP_RANGE_MS[1]:
            raise InvalidSpec(f"split gap must lie in {SPLIT_GAP_RANGE_MS} ms")
        gap = spec.gap_ms / 1000.0
        if gap >= T / 2:
            raise InvalidSpec("gap too long for the call")
        g0 = (T - gap) / 2.0
        g1 = (T + gap) / 2.0
        f = lambda t: np.full_like(np.asarray(t, dtype=np.float64), spec.f0)

        def gate(t):
            t = np.asarray(t, dtype=np.float64)
            return np.where((t >= g0) & (t < g1), 0.0, 1.0)

        return CallContour(f, gate, spec.f0, spec.f0, T, ((0.0, g0), (g1, T)))

    raise InvalidSpec(f"no contour for category {cat}")


def _segment_envelope(t: np.ndarray, segments) -> np.ndarray:
    """Raised-cosine on/off ramps per active segment."""
    env = np.zeros_like(t)
    for s0, s1 in segments:
        ramp = min(_EDGE_RAMP_S, (s1 - s0) / 4.0)
        inside = (t >= s0) & (t < s1)
        seg = np.zeros_like(t)
        seg[inside] = 1.0
        if ramp > 0:
            rising = inside & (t < s0 + ramp)
            falling = inside & (t >= s1 - ramp)
            seg[rising] = 0.5 * (1.0 - np.cos(np.pi * (t[rising] - s0) / ramp))
            seg[falling] = 0.5 * (1.0 - np.cos(np.pi * (s1 - t[falling]) / ramp))
        env = np.maximum(env, seg)
    return env


def synth_call(spec: CallSpec, sample_rate: int = DEFAULT_SAMPLE_RATE) -> AudioClip:
    """Phase-continuous FM rendering of one call, starting at t = 0."""
    ctr = contour(spec)
    if 2.0 * ctr.f_max > sample_rate:
        raise AliasRisk(f"{ctr.f_max} Hz exceeds Nyquist at {sample_rate} Hz")
    n = int(round(ctr.duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    freq = ctr.freq(t)
    phase = 2.0 * np.pi * np.cumsum(freq) / sample_rate
    env = _segment_envelope(t, ctr.segments) * ctr.gate(t)
    samples = spec.amplitude * env * np.sin(phase)
    return AudioClip(
        samples=samples.astype(np.float32),
        sample_rate_hz=sample_rate,
        source_id=f"sim:{spec.category.value}",
    )


def truth_for_plan(plan: RecordingPlan) -> GroundTruth:
    boxes = []
    for call in plan.calls:
        ctr = contour(call)
        boxes.append(
            TruthBox(
                t_start=call.onset_s,
                t_end=call.onset_s + ctr.duration_s,
                f_min=ctr.f_min,
                f_max=ctr.f_max,
                label=call.category,
            )
        )
    return GroundTruth(boxes=boxes)


def synth_recording(
    plan: RecordingPlan, sample_rate: int = DEFAULT_SAMPLE_RATE
) -> Tuple[AudioClip, GroundTruth]:
    """Sum the planned calls over seeded Gaussian broadband noise plus
    Poisson-timed broadband clicks. Deterministic per plan seed."""
    n = int(round(plan.duration_s * sample_rate))
    rng = np.random.default_rng(plan.seed)
    ref_amp = max((c.amplitude for c in plan.calls), default=1.0) or 1.0

    sigma = ref_amp * 10.0 ** (plan.noise.broadband_db / 20.0)
    mix = rng.normal(0.0, sigma, size=n)

    n_clicks = rng.poisson(plan.noise.click_rate_hz * plan.duration_s)
    click_len = max(8, int(0.0004 * sample_rate))
    click_env = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(click_len) / click_len))
    for start in np.sort(rng.uniform(0.0, plan.duration_s, size=n_clicks)):
        i0 = int(start * sample_rate)
        i1 = min(n, i0 + click_len)
        burst = rng.normal(0.0, 0.8 * ref_amp, size=i1 - i0)
        mix[i0:i1] += burst * click_env[: i1 - i0]

    for call in plan.calls:
        clip = synth_call(call, sample_rate)
        i0 = int(round(call.onset_s * sample_rate))
        i1 = min(n, i0 + len(clip.samples))
        mix[i0:i1] += clip.samples[: i1 - i0]

    np.clip(mix, -1.0, 1.0, out=mix)
    clip = AudioClip(
        samples=mix.astype(np.float32),
        sample_rate_hz=sample_rate,
        source_id=f"sim:plan-seed{plan.seed}",
    )
    return clip, truth_for_plan(plan)


# --------------------------------------------------------------------------
# presets: the two test conditions (low vs high noise), same calls


def _call_params(category: CallLabel, rng: np.random.Generator) -> dict:
    """Category-appropriate parameters, randomized within the contour
    constraints and the 30-90 kHz band."""
    f0 = float(rng.uniform(45_000, 65_000))
    if category == CallLabel.FLAT:
        return dict(duration_ms=rng.uniform(30, 80), f0=f0)
    if category == CallLabel.SHORT:
        return dict(duration_ms=rng.uniform(7, 11), f0=f0)
    if category in (CallLabel.UPWARD_RAMP, CallLabel.DOWNWARD_RAMP):
        return dict(duration_ms=rng.uniform(40, 90), f0=f0, step_delta=rng.uniform(11_000, 16_000))
    if category == CallLabel.TRILL:
        duration = rng.uniform(60, 120)
        cycles = rng.uniform(3.2, 4.5)
        return dict(
            duration_ms=duration,
            f0=f0,
            fm_depth=rng.uniform(5_000, 8_000),
            fm_rate=cycles / (duration / 1000.0),
        )
    if category == CallLabel.COMPLEX_TRILL:
        duration = rng.uniform(80, 150)
        return dict(
            duration_ms=duration,
            f0=f0,
            fm_depth=rng.uniform(5_000, 8_000),
            fm_rate=rng.uniform(3.2, 4.5) / (0.6 * duration / 1000.0),
        )
    if category == CallLabel.COMPLEX:
        return dict(duration_ms=rng.uniform(50, 120), f0=f0, fm_depth=rng.uniform(8_000, 12_000))
    if category == CallLabel.INVERTED_U:
        return dict(duration_ms=rng.uniform(30, 80), f0=f0, fm_depth=rng.uniform(8_000, 14_000))
    if category in (CallLabel.STEP_UP, CallLabel.STEP_DOWN):
        f0_step = float(rng.uniform(40_000, 55_000))
        return dict(duration_ms=rng.uniform(40, 90), f0=f0_step, step_delta=rng.uniform(9_000, 14_000))
    if category == CallLabel.SPLIT:
        return dict(duration_ms=rng.uniform(40, 80), f0=f0, gap_ms=rng.uniform(6, 14))
    raise InvalidSpec(f"no preset parameters for {category}")


PRESET_NOISE = {
    "low_noise": NoiseSpec(broadband_db=-40.0, click_rate_hz=0.05),
    "high_noise": NoiseSpec(broadband_db=-18.0, click_rate_hz=2.0),
}

PRESET_DURATION_S = 60.0
PRESET_CALL_COUNT = 40


def preset_plan(name: str, seed: int = 7) -> RecordingPlan:
    """60 s with 40 calls spread over all 11 call categories. The call
    inventory depends only on the seed, so low_noise and high_noise share
    ground truth."""
    if name not in PRESET_NOISE:
        raise UnknownPreset(f"unknown preset {name!r} (have {sorted(PRESET_NOISE)})")
    rng = np.random.default_rng(seed)
    call_cats = [CallLabel(c) for c in CALL_CATEGORIES]
    categories = (call_cats * ((PRESET_CALL_COUNT // len(call_cats)) + 1))[:PRESET_CALL_COUNT]
    rng.shuffle(categories)
    slot = PRESET_DURATION_S / PRESET_CALL_COUNT
    calls = []
    for i, cat in enumerate(categories):
        params = _call_params(cat, rng)
        onset = i * slot + float(rng.uniform(0.05, slot - 0.45))
        calls.append(CallSpec(category=cat, onset_s=onset, amplitude=0.5, **params))
    return RecordingPlan(
        duration_s=PRESET_DURATION_S,
        calls=tuple(calls),
        noise=PRESET_NOISE[name],
        seed=seed,
    )


# --------------------------------------------------------------------------
# JSON (de)serialization of plans and truth


def plan_to_dict(plan: RecordingPlan) -> dict:
    return {
        "duration_s": plan.duration_s,
        "seed": plan.seed,
        "noise": {"broadband_db": plan.noise.broadband_db, "click_rate_hz": plan.noise.click_rate_hz},
        "calls": [
            {
                "category": c.category.value,
                "onset_s": c.onset_s,
                "duration_ms": c.duration_ms,
                "f0": c.f0,
                "fm_depth": c.fm_depth,
                "fm_rate": c.fm_rate,
                "step_delta": c.step_delta,
                "gap_ms": c.gap_ms,
                "amplitude": c.amplitude,
            }
            for c in plan.calls
        ],
    }


def plan_from_dict(data: dict) -> RecordingPlan:
    calls = tuple(
        CallSpec(
            category=CallLabel(c["category"]),
            onset_s=c["onset_s"],
            duration_ms=c["duration_ms"],
            f0=c["f0"],
            fm_depth=c.get("fm_depth", 0.0),
            fm_rate=c.get("fm_rate", 0.0),
            step_delta=c.get("step_delta", 0.0),
            gap_ms=c.get("gap_ms", 0.0),
            amplitude=c.get("amplitude", 0.5),
        )
        for c in data["calls"]
    )
    noise = NoiseSpec(**data.get("noise", {}))
    return RecordingPlan(duration_s=data["duration_s"], calls=calls, noise=noise, seed=data.get("seed", 0))


def write_plan(plan: RecordingPlan, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(plan_to_dict(plan), fh, indent=2)


def read_plan(path) -> RecordingPlan:
    with open(path, "r", encoding="utf-8") as fh:
        return plan_from_dict(json.load(fh))


def write_truth_jsonl(truth: GroundTruth, path, source_id: str = "") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for box in truth.boxes:
            fh.write(
                json.dumps(
                    {
                        "source_id": source_id,
                        "t_start": box.t_start,
                        "t_end": box.t_end,
                        "f_min": box.f_min,
                        "f_max": box.f_max,
                        "label": box.label.value,
                    }
                )
                + "\n"
            )


def read_truth_jsonl(path) -> GroundTruth:
    boxes = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            boxes.append(
                TruthBox(
                    t_start=rec["t_start"],
                    t_end=rec["t_end"],
                    f_min=rec["f_min"],
                    f_max=rec["f_max"],
                    label=CallLabel(rec["label"]),
                )
            )
    return GroundTruth(boxes=boxes)
