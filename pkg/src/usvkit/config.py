"""One JSON config document mirroring every Config type.

Sections: "spectrogram", "detection", "train", "morph". CLI flags override
file values; anything absent falls back to the dataclass defaults.
"""
from __future__ import annotations

import json
from typing import Optional

from .classifier import TrainConfig
from .detection import BandLimits, DetectionConfig, DurationLimits
from .errors import UsvkitError
from .spectrogram import SpectrogramParams
from .synthgen import MorphParams


class ParseError(UsvkitError):
    pass


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"config {path} must be a JSON object")
    return data


def _merged(section: dict, overrides: dict) -> dict:
    out = dict(section)
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def spectrogram_params(config: Optional[dict] = None, **overrides) -> SpectrogramParams:
    section = _merged((config or {}).get("spectrogram", {}), overrides)
    return SpectrogramParams(**section)


def detection_config(config: Optional[dict] = None, **overrides) -> DetectionConfig:
    section = _merged((config or {}).get("detection", {}), overrides)
    if "median_window" in section:
        section["median_window"] = tuple(section["median_window"])
    if "bands" in section and isinstance(section["bands"], dict):
        raw = section["bands"]
        section["bands"] = BandLimits(
            low_band=tuple(raw.get("low_band", BandLimits().low_band)),
            high_band=tuple(raw.get("high_band", BandLimits().high_band)),
        )
    if "durations" in section and isinstance(section["durations"], dict):
        raw = section["durations"]
        section["durations"] = DurationLimits(
            high_band_ms=tuple(raw.get("high_band_ms", DurationLimits().high_band_ms)),
            low_band_ms=tuple(raw.get("low_band_ms", DurationLimits().low_band_ms)),
        )
    return DetectionConfig(**section)


def train_config(config: Optional[dict] = None, **overrides) -> TrainConfig:
    section = _merged((config or {}).get("train", {}), overrides)
    return TrainConfig(**section)


def morph_params(config: Optional[dict] = None, **overrides) -> MorphParams:
    section = _merged((config or {}).get("morph", {}), overrides)
    return MorphParams(**section)
