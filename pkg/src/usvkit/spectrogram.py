"""STFT power spectrograms and fixed-size classifier tiles.

The dB scale is referenced to the largest power any |sample| <= 1 signal
can put in a bin with the active window (so 0 dB is "physically maximal")
and clamped below at params.db_floor.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from PIL import Image

from .audio_io import AudioClip
from .errors import UsvkitError


class TooShort(UsvkitError):
    """Clip shorter than one analysis window."""


class EmptyBox(UsvkitError):
    """Requested tile box does not intersect the spectrogram."""


Box = Tuple[float, float, float, float]  # (t_start, t_end, f_min, f_max)


@dataclass(frozen=True)
class SpectrogramParams:
    window_len: int = 512
    hop: int = 128
    fft_len: int = 512
    window_kind: str = "hann"  # or "rectangular"
    db_floor: float = -90.0

    def __post_init__(self):
        if self.window_len > self.fft_len:
            raise ValueError("window_len must be <= fft_len")
        if self.hop < 1:
            raise ValueError("hop must be >= 1")
        if self.db_floor >= 0:
            raise ValueError("db_floor must be negative")
        if self.window_kind not in ("hann", "rectangular"):
            raise ValueError(f"unknown window kind {self.window_kind!r}")

    def window(self) -> np.ndarray:
        n = self.window_len
        if self.window_kind == "hann":
            # periodic form, the usual STFT choice
            return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))
        return np.ones(n)


@dataclass(frozen=True)
class Spectrogram:
    power_db: np.ndarray  # [frames x bins]
    bin_hz: float
    hop_s: float
    params: SpectrogramParams
    sample_rate_hz: int
    source_id: str = ""

    @property
    def n_frames(self) -> int:
        return self.power_db.shape[0]

    @property
    def n_bins(self) -> int:
        return self.power_db.shape[1]

    @property
    def duration_s(self) -> float:
        # time extent covered by the analysis frames
        return ((self.n_frames - 1) * self.params.hop + self.params.window_len) / self.sample_rate_hz


@dataclass(frozen=True)
class SpectroImage:
    """Normalized [0, 1] grayscale tile depicting one call."""

    pixels: np.ndarray  # [H x W] in [0, 1]
    source_box: Optional[Box] = None

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise ValueError("pixels must be 2-D")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise ValueError("pixel intensities must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pixels.shape


def stft_power(samples: np.ndarray, params: SpectrogramParams) -> np.ndarray:
    """Linear |FFT|^2 per frame and bin (frames x fft_len/2+1), no dB."""
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < params.window_len:
        raise TooShort(f"clip of {len(x)} samples < window of {params.window_len}")
    n_frames = 1 + (len(x) - params.window_len) // params.hop
    idx = params.hop * np.arange(n_frames)[:, None] + np.arange(params.window_len)[None, :]
    frames = x[idx] * params.window()[None, :]
    spectrum = np.fft.rfft(frames, n=params.fft_len, axis=1)
    return np.abs(spectrum) ** 2


def compute_spectrogram(clip: AudioClip, params: SpectrogramParams) -> Spectrogram:
    """Frame f covers samples [f*hop, f*hop + window_len)."""
    power = stft_power(clip.samples, params)
    ref = float(np.sum(params.window())) ** 2  # max possible |X|^2 for |x| <= 1
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(power / ref)
    db = np.maximum(db, params.db_floor)
    return Spectrogram(
        power_db=db,
        bin_hz=clip.sample_rate_hz / params.fft_len,
        hop_s=params.hop / clip.sample_rate_hz,
        params=params,
        sample_rate_hz=clip.sample_rate_hz,
        source_id=clip.source_id,
    )


def _sample_bilinear(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Bilinear lookup at fractional (row, col) grids; coordinates are
    clamped to the image, so results stay inside [img.min(), img.max()]."""
    h, w = img.shape
    r = np.clip(rows, 0.0, h - 1.0)
    c = np.clip(cols, 0.0, w - 1.0)
    r0 = np.floor(r).astype(np.intp)
    c0 = np.floor(c).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = r - r0
    fc = c - c0
    top = img[r0, c0] * (1.0 - fc) + img[r0, c1] * fc
    bot = img[r1, c0] * (1.0 - fc) + img[r1, c1] * fc
    return top * (1.0 - fr) + bot * fr


def _resize_array_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resize; identity when sizes match."""
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    rows = np.linspace(0.0, h - 1.0, out_h) if out_h > 1 else np.array([(h - 1.0) / 2.0])
    cols = np.linspace(0.0, w - 1.0, out_w) if out_w > 1 else np.array([(w - 1.0) / 2.0])
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return _sample_bilinear(img, rr, cc)


def resize_bilinear(img: SpectroImage, out: int) -> SpectroImage:
    return SpectroImage(
        pixels=_resize_array_bilinear(img.pixels, out, out),
        source_box=img.source_box,
    )


def _normalize_unit(pixels: np.ndarray) -> np.ndarray:
    lo = float(pixels.min())
    hi = float(pixels.max())
    if hi <= lo:
        # constant region: all zeros rather than dividing by zero
        return np.zeros_like(pixels)
    return (pixels - lo) / (hi - lo)


def extract_tile(
    spec: Spectrogram,
    box: Box,
    out_size: int = 128,
    margin: float = 0.25,
) -> SpectroImage:
    """Cut the region centered on the box (plus a context margin of
    `margin` * box extent on each side), resize to out_size x out_size,
    and min-max normalize. Areas outside the spectrogram read as the
    dB floor before normalization."""
    t0, t1, f0, f1 = box
    if t1 <= t0 or f1 <= f0:
        raise EmptyBox(f"degenerate box {box}")
    # continuous pixel coordinates: frame axis = time, bin axis = frequency
    c0 = t0 / spec.hop_s
    c1 = t1 / spec.hop_s
    r0 = f0 / spec.bin_hz
    r1 = f1 / spec.bin_hz
    if c1 < 0 or c0 > spec.n_frames - 1 or r1 < 0 or r0 > spec.n_bins - 1:
        raise EmptyBox(f"box {box} outside spectrogram extent")

    dc = (c1 - c0) * margin
    dr = (r1 - r0) * margin
    c0, c1 = c0 - dc, c1 + dc
    r0, r1 = r0 - dr, r1 + dr

    # img rows = frequency bins ascending, so flip later callers expect low
    # frequency at row 0; sample frames along columns
    rows = np.linspace(r0, r1, out_size)
    cols = np.linspace(c0, c1, out_size)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    # power_db is [frames x bins]; sample as (bin=row, frame=col)
    img = spec.power_db.T
    values = _sample_bilinear(img, rr, cc)
    outside = (rr < -0.5) | (rr > spec.n_bins - 0.5) | (cc < -0.5) | (cc > spec.n_frames - 0.5)
    values = np.where(outside, spec.params.db_floor, values)
    return SpectroImage(pixels=_normalize_unit(values), source_box=box)


def tile_from_clip(
    clip: AudioClip,
    box: Box,
    params: SpectrogramParams,
    out_size: int = 128,
    margin: float = 0.25,
) -> SpectroImage:
    """Render a tile for a box inside a (possibly long) recording by
    analyzing only a slice around the box."""
    t0, t1, f0, f1 = box
    pad_s = (t1 - t0) * margin + params.window_len / clip.sample_rate_hz
    s0 = max(0.0, t0 - pad_s)
    s1 = min(clip.duration_s, t1 + pad_s)
    i0 = int(round(s0 * clip.sample_rate_hz))
    i1 = int(round(s1 * clip.sample_rate_hz))
    piece = AudioClip(
        samples=clip.samples[i0:i1],
        sample_rate_hz=clip.sample_rate_hz,
        source_id=clip.source_id,
    )
    spec = compute_spectrogram(piece, params)
    shifted = (t0 - i0 / clip.sample_rate_hz, t1 - i0 / clip.sample_rate_hz, f0, f1)
    tile = extract_tile(spec, shifted, out_size=out_size, margin=margin)
    return SpectroImage(pixels=tile.pixels, source_box=box)


def save_png(img: SpectroImage, path) -> None:
    """8-bit grayscale PNG, intensity = round(pixel * 255)."""
    data = np.round(img.pixels * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path, format="PNG")


def load_png(path, source_box: Optional[Box] = None) -> SpectroImage:
    with Image.open(path) as im:
        data = np.asarray(im.convert("L"), dtype=np.float64)
    return SpectroImage(pixels=data / 255.0, source_box=source_box)
