"""Synthetic training tiles by smooth control-grid warping of natural seeds.

A coarse grid of random offsets (bounded by max_displacement_px) is
bilinearly upsampled to a per-pixel displacement field and applied by
inverse mapping, so warped tiles stay within the seed's intensity range
and within a bounded geometric distortion. Every synthetic stays pending
until a reviewer accepts or rejects it; only accepted tiles can reach a
training split.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .classifier import CallLabel
from .errors import UsvkitError
from .spectrogram import SpectroImage, _resize_array_bilinear, _sample_bilinear


class NoSeeds(UsvkitError):
    pass


class AlreadyDecided(UsvkitError):
    pass


class UnknownId(UsvkitError):
    pass


class ShapeMismatch(UsvkitError):
    pass


@dataclass(frozen=True)
class MorphParams:
    max_displacement_px: float = 6.0
    control_grid: int = 4
    seed: int = 0
    # optional extra jitters, both off by default (geometry-only morphs)
    intensity_jitter: float = 0.0  # multiplicative gain range, e.g. 0.1 for +-10%
    time_shift_px: int = 0

    def __post_init__(self):
        if self.max_displacement_px < 0:
            raise ValueError("max_displacement_px must be >= 0")
        if self.control_grid < 2:
            raise ValueError("control_grid must be >= 2")


@dataclass(frozen=True)
class DisplacementField:
    dx: np.ndarray  # columns (time axis), pixels
    dy: np.ndarray  # rows (frequency axis), pixels


@dataclass
class SyntheticCall:
    id: str
    tile: SpectroImage
    seed_annotation_id: str
    label: CallLabel
    params: MorphParams
    review_status: str = "pending"  # pending | accepted | rejected
    reviewer: str = ""


def random_field(params: MorphParams, shape: Tuple[int, int]) -> DisplacementField:
    """Control-grid offsets uniform in [-A, A] per axis, bilinearly
    upsampled; the bound survives interpolation by convexity."""
    h, w = shape
    if h < params.control_grid or w < params.control_grid:
        raise ValueError(f"shape {shape} smaller than control grid {params.control_grid}")
    rng = np.random.default_rng(params.seed)
    a = params.max_displacement_px
    grid = rng.uniform(-a, a, size=(2, params.control_grid, params.control_grid))
    dy = _resize_array_bilinear(grid[0], h, w)
    dx = _resize_array_bilinear(grid[1], h, w)
    return DisplacementField(dx=dx, dy=dy)


def warp_tile(tile: SpectroImage, field: DisplacementField) -> SpectroImage:
    """Inverse mapping: output(p) = input(p + field(p)), edge-clamped."""
    pixels = tile.pixels
    if field.dx.shape != pixels.shape or field.dy.shape != pixels.shape:
        raise ShapeMismatch(f"field {field.dx.shape} vs tile {pixels.shape}")
    if not np.any(field.dx) and not np.any(field.dy):
        return SpectroImage(pixels=pixels.copy(), source_box=tile.source_box)
    h, w = pixels.shape
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    warped = _sample_bilinear(pixels, rows + field.dy, cols + field.dx)
    return SpectroImage(pixels=warped, source_box=tile.source_box)


def _derived_params(params: MorphParams, seed_index: int, offspring_index: int) -> MorphParams:
    sub_seed = np.random.SeedSequence([params.seed, seed_index, offspring_index]).generate_state(1)[0]
    return MorphParams(
        max_displacement_px=params.max_displacement_px,
        control_grid=params.control_grid,
        seed=int(sub_seed),
        intensity_jitter=params.intensity_jitter,
        time_shift_px=params.time_shift_px,
    )


def morph_once(tile: SpectroImage, params: MorphParams) -> SpectroImage:
    out = warp_tile(tile, random_field(params, tile.pixels.shape))
    if params.intensity_jitter > 0 or params.time_shift_px > 0:
        rng = np.random.default_rng(np.random.SeedSequence([params.seed, 0xA5]).generate_state(1)[0])
        pixels = out.pixels
        if params.intensity_jitter > 0:
            gain = 1.0 + rng.uniform(-params.intensity_jitter, params.intensity_jitter)
            pixels = np.clip(pixels * gain, 0.0, 1.0)
        if params.time_shift_px > 0:
            shift = rng.integers(-params.time_shift_px, params.time_shift_px + 1)
            pixels = np.roll(pixels, int(shift), axis=1)
        out = SpectroImage(pixels=pixels, source_box=out.source_box)
    return out


def propose(
    seeds: Sequence,
    tiles: Sequence[SpectroImage],
    offspring_per_seed: int,
    params: MorphParams,
) -> List[SyntheticCall]:
    """Morph each natural seed offspring_per_seed times. Seeds are
    annotation-like objects exposing .id and .label (never Noise)."""
    if len(seeds) == 0:
        raise NoSeeds("no seed annotations")
    if len(seeds) != len(tiles):
        raise ValueError("seeds and tiles must align")
    out: List[SyntheticCall] = []
    for i, (seed, tile) in enumerate(zip(seeds, tiles)):
        label = CallLabel(seed.label) if not isinstance(seed.label, CallLabel) else seed.label
        if label == CallLabel.NOISE:
            raise ValueError(f"seed {seed.id} is labeled Noise")
        for j in range(offspring_per_seed):
            sub = _derived_params(params, i, j)
            # ids carry the batch seed so staged augmentation rounds over
            # the same seeds never collide
            out.append(
                SyntheticCall(
                    id=f"syn-{seed.id}-s{params.seed}-{j:03d}",
                    tile=morph_once(tile, sub),
                    seed_annotation_id=str(seed.id),
                    label=label,
                    params=sub,
                )
            )
    return out


def decide(store, synthetic_id: str, verdict: str, reviewer: str):
    """Review-gate transition, serialized through the datastore's single
    writer. Re-submitting the same verdict is idempotent; a conflicting
    one raises AlreadyDecided."""
    return store.decide_synthetic(synthetic_id, verdict, reviewer)
