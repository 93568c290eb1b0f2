"""Segmentation of call candidates from a spectrogram.

The main pipeline estimates a per-pixel background floor with a local
median, thresholds a fixed contrast above it, cleans the mask with a
morphological opening, groups foreground into 8-connected components and
gates them by area, frequency band and duration. A global-percentile
baseline detector is provided as the weaker comparison subject.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from .audio_io import AudioClip
from .errors import UsvkitError
from .spectrogram import Spectrogram, SpectrogramParams, compute_spectrogram


class ShapeMismatch(UsvkitError):
    pass


@dataclass(frozen=True)
class BandLimits:
    """Low (aversive, 22-kHz type) and high (appetitive, 50-kHz type)
    frequency bands in Hz; contiguous at the shared boundary."""

    low_band: Tuple[float, float] = (18_000.0, 30_000.0)
    high_band: Tuple[float, float] = (30_000.0, 90_000.0)

    def __post_init__(self):
        lo, hi = self.low_band, self.high_band
        if not (0 < lo[0] < lo[1] and 0 < hi[0] < hi[1]):
            raise ValueError("band bounds must be positive and increasing")
        if lo[1] != hi[0]:
            raise ValueError("low band max must equal high band min")


@dataclass(frozen=True)
class DurationLimits:
    """Permitted call durations per band, in milliseconds."""

    high_band_ms: Tuple[float, float] = (5.0, 300.0)
    low_band_ms: Tuple[float, float] = (300.0, 3500.0)

    def __post_init__(self):
        for lo, hi in (self.high_band_ms, self.low_band_ms):
            if not 0 < lo < hi:
                raise ValueError("duration limits must satisfy 0 < min < max")


@dataclass(frozen=True)
class DetectionConfig:
    """Tuned against the simulator presets. The median window is short in
    time but wide in frequency: a constant-frequency call fills every time
    column at its bins, so only a window spanning well beyond the tone's
    spectral skirt sees true background there.

    merge_gap_ms = 0 keeps one candidate per connected component (split
    and step calls then surface as two candidates each); a positive value
    merges candidates separated by at most that silent gap and by at most
    merge_freq_gap_hz in frequency.
    """

    median_window: Tuple[int, int] = (3, 31)  # (time, freq) pixels, odd
    threshold_offset_db: float = 6.0
    open_radius: int = 1
    min_area: int = 12
    bands: BandLimits = field(default_factory=BandLimits)
    durations: DurationLimits = field(default_factory=DurationLimits)
    merge_gap_ms: float = 0.0
    merge_freq_gap_hz: float = 25_000.0

    def __post_init__(self):
        if self.median_window[0] % 2 == 0 or self.median_window[1] % 2 == 0:
            raise ValueError("median_window must be odd in both axes")
        if self.threshold_offset_db <= 0:
            raise ValueError("threshold_offset_db must be positive")
        if self.open_radius < 0 or self.min_area < 0:
            raise ValueError("open_radius and min_area must be non-negative")
        if self.merge_gap_ms < 0:
            raise ValueError("merge_gap_ms must be >= 0")


@dataclass(frozen=True)
class Segment:
    """One 8-connected foreground component, pixels as (frame, bin) rows."""

    pixels: np.ndarray  # (N, 2) int

    @property
    def area(self) -> int:
        return len(self.pixels)


@dataclass(frozen=True)
class CallCandidate:
    t_start: float
    t_end: float
    f_min: float
    f_max: float
    peak_db: float
    pixel_mask: np.ndarray  # (N, 2) of (frame, bin)
    band: str  # "low" | "high"
    source_id: str = ""


def local_median_floor(spec: Spectrogram, window: Tuple[int, int] = (3, 31)) -> np.ndarray:
    """Windowed median of the dB matrix; edges use clamped replication.

    Exact order statistics via np.partition over sliding windows, chunked
    to bound memory; equals a sort-the-window median everywhere.
    """
    wt, wf = window
    if wt % 2 == 0 or wf % 2 == 0:
        raise ValueError("median window must be odd in both axes")
    matrix = spec.power_db
    padded = np.pad(matrix, ((wt // 2, wt // 2), (wf // 2, wf // 2)), mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (wt, wf))
    out = np.empty_like(matrix)
    k = wt * wf
    chunk = max(1, 4_000_000 // max(1, matrix.shape[1] * k))
    for r0 in range(0, matrix.shape[0], chunk):
        r1 = min(matrix.shape[0], r0 + chunk)
        block = windows[r0:r1].reshape(-1, k)
        out[r0:r1] = np.partition(block, k // 2, axis=1)[:, k // 2].reshape(r1 - r0, -1)
    return out


def binarize(spec: Spectrogram, floor: np.ndarray, offset_db: float) -> np.ndarray:
    if floor.shape != spec.power_db.shape:
        raise ShapeMismatch(f"floor {floor.shape} vs spectrogram {spec.power_db.shape}")
    return spec.power_db > floor + offset_db


def _cross_element(radius: int) -> np.ndarray:
    size = 2 * radius + 1
    st = np.zeros((size, size), dtype=bool)
    st[radius, :] = True
    st[:, radius] = True
    return st


def morphological_open(mask: np.ndarray, radius: int) -> np.ndarray:
    """Erosion then dilation with a cross of the given radius; pixels
    beyond the mask border count as background."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return mask.copy()
    st = _cross_element(radius)
    eroded = ndimage.binary_erosion(mask, structure=st, border_value=0)
    return ndimage.binary_dilation(eroded, structure=st, border_value=0)


def connected_components(mask: np.ndarray) -> List[Segment]:
    """8-connected components, ordered by first foreground pixel in
    row-major (frame, bin) scan order."""
    labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if count == 0:
        return []
    flat = labels.ravel()
    fg_pos = np.flatnonzero(flat)
    fg_labels = flat[fg_pos]
    sort_idx = np.argsort(fg_labels, kind="stable")
    sorted_pos = fg_pos[sort_idx]
    boundaries = np.flatnonzero(np.diff(fg_labels[sort_idx])) + 1
    groups = np.split(sorted_pos, boundaries)
    groups.sort(key=lambda g: g[0])
    width = mask.shape[1]
    return [Segment(pixels=np.column_stack(divmod(g, width))) for g in groups]


def segments_to_candidates(
    segments: List[Segment],
    spec: Spectrogram,
    config: DetectionConfig,
) -> List[CallCandidate]:
    """Map segments to time/frequency boxes and keep those that pass the
    area, band (by pixel-weighted frequency centroid) and duration gates."""
    out = []
    low, high = config.bands.low_band, config.bands.high_band
    for seg in segments:
        if seg.area < config.min_area:
            continue
        frames = seg.pixels[:, 0]
        bins = seg.pixels[:, 1]
        centroid_hz = float(bins.mean()) * spec.bin_hz
        if low[0] <= centroid_hz < low[1]:
            band = "low"
            dur_lims = config.durations.low_band_ms
        elif high[0] <= centroid_hz <= high[1]:
            band = "high"
            dur_lims = config.durations.high_band_ms
        else:
            continue
        t_start = float(frames.min()) * spec.hop_s
        t_end = (float(frames.max()) * spec.params.hop + spec.params.window_len) / spec.sample_rate_hz
        duration_ms = (t_end - t_start) * 1000.0
        if not dur_lims[0] <= duration_ms <= dur_lims[1]:
            continue
        f_min = max(0.0, (float(bins.min()) - 0.5) * spec.bin_hz)
        f_max = (float(bins.max()) + 0.5) * spec.bin_hz
        peak = float(spec.power_db[frames, bins].max())
        out.append(
            CallCandidate(
                t_start=t_start,
                t_end=t_end,
                f_min=f_min,
                f_max=f_max,
                peak_db=peak,
                pixel_mask=seg.pixels,
                band=band,
                source_id=spec.source_id,
            )
        )
    out.sort(key=lambda c: (c.t_start, c.f_min))
    return out


def merge_candidates(
    candidates: List[CallCandidate],
    spec: Spectrogram,
    config: DetectionConfig,
) -> List[CallCandidate]:
    """Fuse candidates separated by at most merge_gap_ms of silence and at
    most merge_freq_gap_hz between their frequency intervals, so gap-split
    and step-jump calls surface as one box."""
    if config.merge_gap_ms <= 0 or len(candidates) < 2:
        return candidates
    gap_s = config.merge_gap_ms / 1000.0
    freq_gap = config.merge_freq_gap_hz
    merged: List[CallCandidate] = []
    cluster = [candidates[0]]
    for cand in candidates[1:]:
        t_end = max(c.t_end for c in cluster)
        f_lo = min(c.f_min for c in cluster)
        f_hi = max(c.f_max for c in cluster)
        near_time = cand.t_start - t_end <= gap_s
        near_freq = cand.f_min - f_hi <= freq_gap and f_lo - cand.f_max <= freq_gap
        if near_time and near_freq:
            cluster.append(cand)
        else:
            merged.append(_fuse(cluster, spec, config))
            cluster = [cand]
    merged.append(_fuse(cluster, spec, config))
    return merged


def _fuse(cluster: List[CallCandidate], spec: Spectrogram, config: DetectionConfig) -> CallCandidate:
    if len(cluster) == 1:
        return cluster[0]
    mask = np.concatenate([c.pixel_mask for c in cluster])
    centroid_hz = float(mask[:, 1].mean()) * spec.bin_hz
    band = "low" if centroid_hz < config.bands.low_band[1] else "high"
    return CallCandidate(
        t_start=min(c.t_start for c in cluster),
        t_end=max(c.t_end for c in cluster),
        f_min=min(c.f_min for c in cluster),
        f_max=max(c.f_max for c in cluster),
        peak_db=max(c.peak_db for c in cluster),
        pixel_mask=mask,
        band=band,
        source_id=cluster[0].source_id,
    )


def _mask_to_candidates(
    mask: np.ndarray, spec: Spectrogram, config: DetectionConfig
) -> List[CallCandidate]:
    opened = morphological_open(mask, config.open_radius)
    segments = connected_components(opened)
    candidates = segments_to_candidates(segments, spec, config)
    return merge_candidates(candidates, spec, config)


def detect(
    clip: AudioClip,
    params: Optional[SpectrogramParams] = None,
    config: Optional[DetectionConfig] = None,
    noise_model=None,
    noise_threshold: float = 0.5,
) -> List[CallCandidate]:
    """Full pipeline: spectrogram, local median floor, threshold, opening,
    components, gating. Deterministic in all inputs.

    With a classifier passed as noise_model, candidates whose predicted
    noise probability exceeds noise_threshold are dropped after gating.
    """
    params = params or SpectrogramParams()
    config = config or DetectionConfig()
    spec = compute_spectrogram(clip, params)
    floor = local_median_floor(spec, config.median_window)
    mask = binarize(spec, floor, config.threshold_offset_db)
    candidates = _mask_to_candidates(mask, spec, config)
    if noise_model is not None:
        candidates = _screen_noise(candidates, spec, noise_model, noise_threshold)
    return candidates


def baseline_detect(
    clip: AudioClip,
    params: Optional[SpectrogramParams] = None,
    percentile: float = 0.95,
    config: Optional[DetectionConfig] = None,
) -> List[CallCandidate]:
    """Crude comparison subject: one global power threshold at the given
    percentile instead of the local median floor."""
    if not 0.0 < percentile < 1.0:
        raise ValueError("percentile must be in (0, 1)")
    params = params or SpectrogramParams()
    config = config or DetectionConfig()
    spec = compute_spectrogram(clip, params)
    threshold = float(np.quantile(spec.power_db, percentile))
    mask = spec.power_db > threshold
    return _mask_to_candidates(mask, spec, config)


def _screen_noise(candidates, spec, noise_model, threshold):
    from . import classifier
    from .spectrogram import extract_tile

    kept = []
    noise_idx = noise_model.categories.index(classifier.CallLabel.NOISE.value)
    for cand in candidates:
        tile = extract_tile(
            spec,
            (cand.t_start, cand.t_end, cand.f_min, cand.f_max),
            out_size=noise_model.input_size,
        )
        pred = classifier.forward(noise_model, tile)
        if pred.probabilities[noise_idx] <= threshold:
            kept.append(cand)
    return kept


# --------------------------------------------------------------------------
# JSON-lines export (shared box format)


def candidate_to_record(cand: CallCandidate) -> dict:
    return {
        "source_id": cand.source_id,
        "t_start": cand.t_start,
        "t_end": cand.t_end,
        "f_min": cand.f_min,
        "f_max": cand.f_max,
        "peak_db": cand.peak_db,
        "band": cand.band,
    }


def write_candidates_jsonl(candidates: List[CallCandidate], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cand in candidates:
            fh.write(json.dumps(candidate_to_record(cand)) + "\n")


def read_boxes_jsonl(path) -> List[dict]:
    boxes = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                boxes.append(json.loads(line))
    return boxes
