"""Compact convolutional classifier over call-spectrogram tiles.

Architecture (fixed): conv 8@5x5 / ReLU / maxpool 2 / conv 16@5x5 / ReLU /
maxpool 2 / dense 64 / ReLU / dense n_categories / softmax, single input
channel. All training math runs in double precision so the analytic
gradients can be checked against central finite differences.
"""
from __future__ import annotations

import copy
import json
import struct
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import UsvkitError
from .spectrogram import SpectroImage


class ShapeMismatch(UsvkitError):
    pass


class EmptyDataset(UsvkitError):
    pass


class CategoryMismatch(UsvkitError):
    pass


class SingleCategoryWarning(UserWarning):
    pass


class CallLabel(str, Enum):
    """Call taxonomy plus a Noise category for screening.

    Serialization names are stable; category order is the tie-break order
    for equal probabilities.
    """

    COMPLEX = "Complex"
    COMPLEX_TRILL = "ComplexTrill"
    DOWNWARD_RAMP = "DownwardRamp"
    FLAT = "Flat"
    INVERTED_U = "InvertedU"
    SHORT = "Short"
    SPLIT = "Split"
    STEP_DOWN = "StepDown"
    STEP_UP = "StepUp"
    TRILL = "Trill"
    UPWARD_RAMP = "UpwardRamp"
    NOISE = "Noise"


CATEGORIES: List[str] = [label.value for label in CallLabel]
CALL_CATEGORIES: List[str] = [label.value for label in CallLabel if label is not CallLabel.NOISE]

_KERNEL = 5
_CONV1_CH = 8
_CONV2_CH = 16
_HIDDEN = 64

ARCHITECTURE = [
    f"conv {_CONV1_CH}@{_KERNEL}x{_KERNEL}", "relu", "maxpool 2",
    f"conv {_CONV2_CH}@{_KERNEL}x{_KERNEL}", "relu", "maxpool 2",
    f"dense {_HIDDEN}", "relu", "dense <categories>", "softmax",
]


@dataclass
class ClassifierModel:
    input_size: int
    categories: List[str]
    params: dict  # name -> np.ndarray (float64)
    training_meta: dict = field(default_factory=dict)

    def copy(self) -> "ClassifierModel":
        return ClassifierModel(
            input_size=self.input_size,
            categories=list(self.categories),
            params={k: v.copy() for k, v in self.params.items()},
            training_meta=copy.deepcopy(self.training_meta),
        )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    val_fraction: float = 0.2
    oversample_minority: bool = True

    def __post_init__(self):
        # epochs == 0 is allowed so a resume can be a pure identity
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_accuracy: float
    val_accuracy: float


@dataclass
class TrainHistory:
    entries: List[EpochStats] = field(default_factory=list)

    @property
    def train_accuracy(self) -> List[float]:
        return [e.train_accuracy for e in self.entries]

    @property
    def val_accuracy(self) -> List[float]:
        return [e.val_accuracy for e in self.entries]


@dataclass(frozen=True)
class Prediction:
    label: CallLabel
    probabilities: np.ndarray


@dataclass
class TileDataset:
    """Tiles as one (N, H, W) array plus integer labels into `categories`."""

    tiles: np.ndarray
    labels: np.ndarray
    categories: List[str] = field(default_factory=lambda: list(CATEGORIES))

    def __post_init__(self):
        self.tiles = np.asarray(self.tiles, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.intp)
        if self.tiles.ndim != 3:
            raise ValueError("tiles must be (N, H, W)")
        if len(self.labels) != len(self.tiles):
            raise ValueError("labels and tiles must align")

    def __len__(self) -> int:
        return len(self.tiles)

    @classmethod
    def from_pairs(cls, pairs: Sequence[Tuple], categories: Optional[List[str]] = None) -> "TileDataset":
        categories = list(categories) if categories else list(CATEGORIES)
        tiles = []
        labels = []
        for tile, label in pairs:
            pixels = tile.pixels if isinstance(tile, SpectroImage) else np.asarray(tile)
            tiles.append(pixels)
            name = label.value if isinstance(label, CallLabel) else str(label)
            labels.append(categories.index(name))
        if not tiles:
            return cls(tiles=np.zeros((0, 0, 0)), labels=np.zeros(0, dtype=np.intp), categories=categories)
        return cls(tiles=np.stack(tiles), labels=np.array(labels), categories=categories)


# --------------------------------------------------------------------------
# layers


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(B, H, W, C) -> (B, OH, OW, k*k*C) patch matrix."""
    b, h, w, c = x.shape
    oh, ow = h - k + 1, w - k + 1
    cols = np.empty((b, oh, ow, k, k, c), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = x[:, i : i + oh, j : j + ow, :]
    return cols.reshape(b, oh, ow, k * k * c)


def _col2im(dcols: np.ndarray, k: int, h: int, w: int, c: int) -> np.ndarray:
    b, oh, ow, _ = dcols.shape
    d6 = dcols.reshape(b, oh, ow, k, k, c)
    dx = np.zeros((b, h, w, c), dtype=dcols.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, i : i + oh, j : j + ow, :] += d6[:, :, :, i, j, :]
    return dx


def _conv_forward(x, w_mat, bias, k):
    cols = _im2col(x, k)
    out = cols @ w_mat.T + bias
    return out, cols


def _conv_backward(dout, cols, w_mat, x_shape, k):
    b, h, w, c = x_shape
    flat_cols = cols.reshape(-1, cols.shape[-1])
    flat_dout = dout.reshape(-1, dout.shape[-1])
    dw = flat_dout.T @ flat_cols
    db = flat_dout.sum(axis=0)
    dcols = dout @ w_mat
    dx = _col2im(dcols, k, h, w, c)
    return dx, dw, db


def _maxpool(x):
    b, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    xc = x[:, : h2 * 2, : w2 * 2, :]
    windows = xc.reshape(b, h2, 2, w2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(b, h2, w2, c, 4)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _maxpool_backward(dout, idx, x_shape):
    b, h, w, c = x_shape
    h2, w2 = h // 2, w // 2
    dwindows = np.zeros((b, h2, w2, c, 4), dtype=dout.dtype)
    np.put_along_axis(dwindows, idx[..., None], dout[..., None], axis=-1)
    dxc = dwindows.reshape(b, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(b, h2 * 2, w2 * 2, c)
    if (h2 * 2, w2 * 2) == (h, w):
        return dxc
    dx = np.zeros((b, h, w, c), dtype=dout.dtype)
    dx[:, : h2 * 2, : w2 * 2, :] = dxc
    return dx


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _conv_output_side(input_size: int) -> Tuple[int, int, int]:
    s1 = input_size - _KERNEL + 1
    p1 = s1 // 2
    s2 = p1 - _KERNEL + 1
    p2 = s2 // 2
    if s1 < 2 or s2 < 2 or p2 < 1:
        raise ValueError(f"input size {input_size} too small for the layer stack")
    return p1, s2, p2


def init_model(input_size: int, categories: Optional[Sequence[str]] = None, seed: int = 0) -> ClassifierModel:
    """Xavier-uniform weights from a seeded generator; biases zero."""
    if input_size < 32:
        raise ValueError("input_size must be >= 32")
    categories = list(categories) if categories else list(CATEGORIES)
    n_out = len(categories)
    _, _, p2 = _conv_output_side(input_size)
    flat = p2 * p2 * _CONV2_CH
    rng = np.random.default_rng(seed)

    def xavier(shape, fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)

    k2 = _KERNEL * _KERNEL
    params = {
        "conv1_w": xavier((_CONV1_CH, k2 * 1), k2 * 1, k2 * _CONV1_CH),
        "conv1_b": np.zeros(_CONV1_CH),
        "conv2_w": xavier((_CONV2_CH, k2 * _CONV1_CH), k2 * _CONV1_CH, k2 * _CONV2_CH),
        "conv2_b": np.zeros(_CONV2_CH),
        "fc1_w": xavier((_HIDDEN, flat), flat, _HIDDEN),
        "fc1_b": np.zeros(_HIDDEN),
        "fc2_w": xavier((n_out, _HIDDEN), _HIDDEN, n_out),
        "fc2_b": np.zeros(n_out),
    }
    return ClassifierModel(
        input_size=input_size,
        categories=categories,
        params=params,
        training_meta={"seed": seed, "epochs_completed": 0, "dataset_version": None},
    )


def _forward_batch(model: ClassifierModel, tiles: np.ndarray, keep_cache: bool = False):
    """Probabilities for a (B, H, W) batch; optionally the backprop cache."""
    x = tiles[..., None].astype(np.float64, copy=False)
    p = model.params

    z1, cols1 = _conv_forward(x, p["conv1_w"], p["conv1_b"], _KERNEL)
    a1 = np.maximum(z1, 0.0)
    m1, idx1 = _maxpool(a1)

    z2, cols2 = _conv_forward(m1, p["conv2_w"], p["conv2_b"], _KERNEL)
    a2 = np.maximum(z2, 0.0)
    m2, idx2 = _maxpool(a2)

    flat = m2.reshape(len(tiles), -1)
    z3 = flat @ p["fc1_w"].T + p["fc1_b"]
    a3 = np.maximum(z3, 0.0)
    logits = a3 @ p["fc2_w"].T + p["fc2_b"]
    probs = _softmax(logits)
    if not keep_cache:
        return probs, None
    cache = dict(
        x=x, z1=z1, cols1=cols1, a1_shape=a1.shape, idx1=idx1, m1=m1,
        z2=z2, cols2=cols2, idx2=idx2, m2_shape=m2.shape,
        flat=flat, z3=z3, a3=a3, probs=probs,
    )
    return probs, cache


def _loss_and_grads(model: ClassifierModel, tiles: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch, gradients for every parameter,
    and the batch probabilities from the same forward pass."""
    n = len(tiles)
    probs, cache = _forward_batch(model, tiles, keep_cache=True)
    p = model.params
    eps = 1e-300  # guard against log(0) in saturated models
    loss = -float(np.mean(np.log(probs[np.arange(n), labels] + eps)))

    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n

    grads = {}
    grads["fc2_w"] = dlogits.T @ cache["a3"]
    grads["fc2_b"] = dlogits.sum(axis=0)
    da3 = dlogits @ p["fc2_w"]
    dz3 = da3 * (cache["z3"] > 0)
    grads["fc1_w"] = dz3.T @ cache["flat"]
    grads["fc1_b"] = dz3.sum(axis=0)
    dflat = dz3 @ p["fc1_w"]

    dm2 = dflat.reshape(cache["m2_shape"])
    da2 = _maxpool_backward(dm2, cache["idx2"], cache["z2"].shape)
    dz2 = da2 * (cache["z2"] > 0)
    dm1, dw2, db2 = _conv_backward(dz2, cache["cols2"], p["conv2_w"], cache["m1"].shape, _KERNEL)
    grads["conv2_w"] = dw2
    grads["conv2_b"] = db2

    da1 = _maxpool_backward(dm1, cache["idx1"], cache["z1"].shape)
    dz1 = da1 * (cache["z1"] > 0)
    _, dw1, db1 = _conv_backward(dz1, cache["cols1"], p["conv1_w"], cache["x"].shape, _KERNEL)
    grads["conv1_w"] = dw1
    grads["conv1_b"] = db1
    return loss, grads, probs


def forward(model: ClassifierModel, tile) -> Prediction:
    pixels = tile.pixels if isinstance(tile, SpectroImage) else np.asarray(tile, dtype=np.float64)
    if pixels.shape != (model.input_size, model.input_size):
        raise ShapeMismatch(f"tile {pixels.shape} vs model input {model.input_size}")
    probs, _ = _forward_batch(model, pixels[None, :, :])
    probs = probs[0]
    label = CallLabel(model.categories[int(np.argmax(probs))])
    return Prediction(label=label, probabilities=probs)


def predict_batch(model: ClassifierModel, tiles: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Argmax category indices for (N, H, W) tiles."""
    out = np.empty(len(tiles), dtype=np.intp)
    for start in range(0, len(tiles), batch_size):
        probs, _ = _forward_batch(model, tiles[start : start + batch_size])
        out[start : start + batch_size] = probs.argmax(axis=1)
    return out


def validate(model: ClassifierModel, dataset: TileDataset) -> float:
    if len(dataset) == 0:
        raise EmptyDataset("validation set is empty")
    predicted = predict_batch(model, dataset.tiles)
    return float(np.mean(predicted == dataset.labels))


def stratified_split(labels: np.ndarray, val_fraction: float, rng: np.random.Generator):
    """Per-category round-half-up split, then a global nudge so the val
    count lands on the overall target. Returns (train_idx, val_idx)."""
    labels = np.asarray(labels)
    n = len(labels)
    target = int(np.floor(n * val_fraction + 0.5))
    per_cat = {}
    for cat in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == cat)
        idx = idx[rng.permutation(len(idx))]
        n_val = int(np.floor(len(idx) * val_fraction + 0.5))
        per_cat[cat] = [idx, n_val]
    total = sum(v[1] for v in per_cat.values())
    cats = sorted(per_cat)
    while total > target:
        cat = max(cats, key=lambda c: (per_cat[c][1], c))
        if per_cat[cat][1] == 0:
            break
        per_cat[cat][1] -= 1
        total -= 1
    while total < target:
        cat = max(cats, key=lambda c: (len(per_cat[c][0]) - per_cat[c][1], c))
        if per_cat[cat][1] >= len(per_cat[cat][0]):
            break
        per_cat[cat][1] += 1
        total += 1
    val_idx = np.concatenate([v[0][: v[1]] for v in per_cat.values()]) if per_cat else np.zeros(0, np.intp)
    train_idx = np.concatenate([v[0][v[1] :] for v in per_cat.values()]) if per_cat else np.zeros(0, np.intp)
    return np.sort(train_idx), np.sort(val_idx)


def _epoch_order(labels: np.ndarray, oversample: bool, rng: np.random.Generator) -> np.ndarray:
    if not oversample:
        return rng.permutation(len(labels))
    counts = {cat: np.flatnonzero(labels == cat) for cat in sorted(set(labels.tolist()))}
    majority = max(len(v) for v in counts.values())
    pieces = []
    for cat in sorted(counts):
        idx = counts[cat]
        pieces.append(idx)
        deficit = majority - len(idx)
        if deficit > 0:
            pieces.append(rng.choice(idx, size=deficit, replace=True))
    order = np.concatenate(pieces)
    return order[rng.permutation(len(order))]


def train(
    model: ClassifierModel,
    dataset: TileDataset,
    config: TrainConfig,
    val: Optional[TileDataset] = None,
    epoch_offset: int = 0,
    on_epoch=None,
) -> Tuple[ClassifierModel, TrainHistory]:
    """Mini-batch SGD with momentum on cross-entropy. Deterministic per
    seed; returns the weights from the best validation epoch.

    An explicit `val` set overrides the internal stratified split.
    """
    if len(dataset) == 0:
        raise EmptyDataset("no training tiles")
    if model.categories != dataset.categories:
        raise CategoryMismatch(f"model {model.categories} vs dataset {dataset.categories}")
    if dataset.tiles.shape[1:] != (model.input_size, model.input_size):
        raise ShapeMismatch(f"tiles {dataset.tiles.shape[1:]} vs model input {model.input_size}")
    if len(set(dataset.labels.tolist())) < 2:
        warnings.warn("dataset has a single category", SingleCategoryWarning)

    rng = np.random.default_rng(config.seed)
    if val is None:
        train_idx, val_idx = stratified_split(dataset.labels, config.val_fraction, rng)
        if len(val_idx) == 0 or len(train_idx) == 0:
            train_idx = np.arange(len(dataset))
            val_idx = train_idx  # degenerate tiny dataset: validate in-sample
        train_tiles = dataset.tiles[train_idx]
        train_labels = dataset.labels[train_idx]
        val_set = TileDataset(dataset.tiles[val_idx], dataset.labels[val_idx], dataset.categories)
    else:
        if val.categories != dataset.categories:
            raise CategoryMismatch("val categories differ from train categories")
        train_tiles = dataset.tiles
        train_labels = dataset.labels
        val_set = val

    work = model.copy()
    velocity = {k: np.zeros_like(v) for k, v in work.params.items()}
    history = TrainHistory()
    best = work.copy()
    best_val = -1.0

    for epoch in range(config.epochs):
        order = _epoch_order(train_labels, config.oversample_minority, rng)
        correct = 0
        total = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            tiles = train_tiles[batch]
            labels = train_labels[batch]
            _, grads, probs = _loss_and_grads(work, tiles, labels)
            for name, grad in grads.items():
                velocity[name] = config.momentum * velocity[name] - config.learning_rate * grad
                work.params[name] += velocity[name]
            correct += int(np.sum(probs.argmax(axis=1) == labels))
            total += len(batch)
        train_acc = correct / total if total else 0.0
        val_acc = validate(work, val_set)
        entry = EpochStats(epoch=epoch_offset + epoch, train_accuracy=train_acc, val_accuracy=val_acc)
        history.entries.append(entry)
        if val_acc > best_val:
            best_val = val_acc
            best = work.copy()
        if on_epoch is not None:
            on_epoch(entry, config.epochs)

    if config.epochs == 0:
        best = work

    best.training_meta = dict(model.training_meta)
    best.training_meta.update(
        seed=config.seed,
        epochs_completed=epoch_offset + config.epochs,
    )
    return best, history


def resume_train(
    checkpoint: ClassifierModel,
    dataset: TileDataset,
    config: TrainConfig,
    val: Optional[TileDataset] = None,
    on_epoch=None,
) -> Tuple[ClassifierModel, TrainHistory]:
    """Continue training from checkpoint weights ("forking"); history
    epochs continue from the checkpoint's completed count."""
    if checkpoint.categories != dataset.categories:
        raise CategoryMismatch(f"checkpoint {checkpoint.categories} vs dataset {dataset.categories}")
    offset = int(checkpoint.training_meta.get("epochs_completed", 0))
    if config.epochs == 0:
        return checkpoint.copy(), TrainHistory()
    return train(checkpoint, dataset, config, val=val, epoch_offset=offset, on_epoch=on_epoch)


def grad_check(
    model: ClassifierModel,
    tiles: np.ndarray,
    labels: np.ndarray,
    n_samples: int = 200,
    step: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients
    over a random sample of parameters (twenty percent extra are drawn so
    filtered probes still leave >= n_samples comparisons when possible).

    Entries where both gradients are below 1e-8 in magnitude pass
    vacuously. Probes where two step sizes disagree are skipped: there the
    loss has a max-pool/ReLU kink inside the stencil, so the difference
    quotient does not estimate the derivative at all. The filter compares
    finite differences with themselves, never with the analytic value, so
    a broken backward pass cannot slip through it.
    """
    if len(tiles) > 4:
        raise ValueError("grad_check batches are limited to 4 tiles")
    tiles = np.asarray(tiles, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    _, grads, _ = _loss_and_grads(model, tiles, labels)

    names = sorted(model.params)
    sizes = [model.params[n].size for n in names]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(int(n_samples * 1.2) + 1, total), replace=False)

    def central(array, pos, original, h):
        array[pos] = original + h
        plus = _loss_and_grads(model, tiles, labels)[0]
        array[pos] = original - h
        minus = _loss_and_grads(model, tiles, labels)[0]
        array[pos] = original
        return (plus - minus) / (2.0 * h)

    max_rel = 0.0
    compared = 0
    for flat_index in picks:
        if compared >= n_samples:
            break
        idx = int(flat_index)
        for name, size in zip(names, sizes):
            if idx < size:
                break
            idx -= size
        array = model.params[name]
        pos = np.unravel_index(idx, array.shape)
        original = array[pos]
        numeric = central(array, pos, original, step)
        numeric_half = central(array, pos, original, step / 2.0)
        if abs(numeric - numeric_half) > max(1e-7, 1e-4 * abs(numeric)):
            continue  # kink inside the stencil
        compared += 1
        analytic = float(grads[name][pos])
        denom = max(abs(analytic), abs(numeric))
        if denom < 1e-8:
            continue
        max_rel = max(max_rel, abs(analytic - numeric) / denom)
    return max_rel


# --------------------------------------------------------------------------
# checkpoint container: 4-byte header length, JSON header, raw float64 blob


_MAGIC = b"USVK"
_FORMAT_VERSION = 1


def save_checkpoint(model: ClassifierModel, path) -> None:
    names = sorted(model.params)
    header = {
        "format_version": _FORMAT_VERSION,
        "architecture": ARCHITECTURE,
        "input_size": model.input_size,
        "categories": model.categories,
        "training_meta": model.training_meta,
        "arrays": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes())


def load_checkpoint(path) -> ClassifierModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise UsvkitError(f"{path}: not a usvkit checkpoint")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("format_version") != _FORMAT_VERSION:
            raise UsvkitError(f"{path}: unsupported checkpoint version")
        params = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(shape)
            params[spec["name"]] = data.astype(np.float64)
    return ClassifierModel(
        input_size=header["input_size"],
        categories=header["categories"],
        params=params,
        training_meta=header["training_meta"],
    )
