"""Reading, writing and slicing of uncompressed WAV recordings.

Only PCM 16-bit and IEEE float 32-bit RIFF/WAVE files are accepted;
anything else is rejected loudly rather than transcoded. Nothing in the
toolkit ever resamples: the sample rate read from the header travels
with the samples.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import UsvkitError


class MalformedWav(UsvkitError):
    """Bad RIFF header, truncated chunk, or invalid sample data."""


class UnsupportedEncoding(UsvkitError):
    """Compressed audio or a bit depth other than PCM16 / float32."""


class ChannelOutOfRange(UsvkitError):
    pass


class RangeError(UsvkitError):
    """Slice bounds outside the clip."""


class IoFailure(UsvkitError):
    pass


_FORMAT_PCM = 1
_FORMAT_FLOAT = 3


@dataclass(frozen=True)
class AudioClip:
    """Mono sample buffer normalized to [-1, 1] plus its true sample rate.

    Immutable after construction; safe to share across workers.
    """

    samples: np.ndarray  # float32, 1-D
    sample_rate_hz: int
    source_id: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 1:
            raise ValueError("samples must be 1-D")
        if samples.size and not np.all(np.isfinite(samples)):
            raise MalformedWav("non-finite sample values")
        if samples.size and float(np.max(np.abs(samples))) > 1.0:
            raise MalformedWav("samples exceed [-1, 1] after normalization")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def __len__(self) -> int:
        return len(self.samples)


def load_wav(path, channel: int = 0) -> AudioClip:
    """Read one channel of a PCM16 or float32 WAV file.

    16-bit integers are divided by 32768; float data is taken verbatim.
    Unknown RIFF chunks are skipped.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    if len(blob) < 12 or blob[0:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise MalformedWav(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(blob):
        chunk_id = blob[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", blob, pos + 4)
        body_start = pos + 8
        if chunk_id == b"fmt ":
            if chunk_size < 16 or body_start + 16 > len(blob):
                raise MalformedWav(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", blob, body_start)
        elif chunk_id == b"data":
            if body_start + chunk_size > len(blob):
                raise MalformedWav(f"{path}: data chunk shorter than declared")
            data = blob[body_start : body_start + chunk_size]
        # chunks are word-aligned; odd sizes carry a pad byte
        pos = body_start + chunk_size + (chunk_size & 1)

    if fmt is None:
        raise MalformedWav(f"{path}: missing fmt chunk")
    if data is None:
        raise MalformedWav(f"{path}: missing data chunk")

    format_code, n_channels, sample_rate, _byte_rate, block_align, bits = fmt
    if format_code == _FORMAT_PCM:
        if bits != 16:
            raise UnsupportedEncoding(f"{path}: PCM with {bits} bits (only 16 supported)")
        dtype = np.dtype("<i2")
    elif format_code == _FORMAT_FLOAT:
        if bits != 32:
            raise UnsupportedEncoding(f"{path}: float with {bits} bits (only 32 supported)")
        dtype = np.dtype("<f4")
    else:
        raise UnsupportedEncoding(f"{path}: format code {format_code}")

    if n_channels < 1:
        raise MalformedWav(f"{path}: zero channels")
    if channel < 0 or channel >= n_channels:
        raise ChannelOutOfRange(f"{path}: channel {channel} of {n_channels}")

    frame_bytes = n_channels * bits // 8
    if block_align not in (0, frame_bytes):
        raise MalformedWav(f"{path}: block align {block_align} != {frame_bytes}")
    if len(data) % frame_bytes != 0:
        raise MalformedWav(f"{path}: data length not a whole number of frames")

    raw = np.frombuffer(data, dtype=dtype)
    picked = raw[channel::n_channels]
    if format_code == _FORMAT_PCM:
        samples = picked.astype(np.float32) / 32768.0
    else:
        samples = picked.astype(np.float32)
    return AudioClip(samples=samples, sample_rate_hz=sample_rate, source_id=str(path))


def write_wav(clip: AudioClip, path) -> None:
    """Write a clip as 32-bit float mono WAV; round-trips bit-exactly."""
    samples = clip.samples.astype("<f4")
    payload = samples.tobytes()
    sr = clip.sample_rate_hz
    header = b"".join(
        [
            b"RIFF",
            struct.pack("<I", 4 + 8 + 16 + 8 + len(payload)),
            b"WAVE",
            b"fmt ",
            struct.pack("<IHHIIHH", 16, _FORMAT_FLOAT, 1, sr, sr * 4, 4, 32),
            b"data",
            struct.pack("<I", len(payload)),
        ]
    )
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def slice_clip(clip: AudioClip, t0: float, t1: float) -> AudioClip:
    """Samples in [round(t0*sr), round(t1*sr)); source_id preserved."""
    if not (0.0 <= t0 < t1 <= clip.duration_s):
        raise RangeError(f"slice [{t0}, {t1}] outside clip of {clip.duration_s:.6f} s")
    sr = clip.sample_rate_hz
    i0 = int(round(t0 * sr))
    i1 = int(round(t1 * sr))
    return AudioClip(
        samples=clip.samples[i0:i1],
        sample_rate_hz=sr,
        source_id=clip.source_id,
    )
