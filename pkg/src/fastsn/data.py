"""Synthetic shape datasets, dataset files and network checkpoints.

Dataset file layout (all integers little-endian)::

    image block: b"SNDS" | u16 version | u32 count | u32 rows | u32 cols
                 | count*rows*cols u8 pixels (value = round(255 * x))
    label block: b"SNLB" | u16 version | u32 count | u32 num_classes
                 | count u16 labels

Checkpoints are JSON documents listing the layers in order; parameter
arrays are stored as base64 of their little-endian float64 bytes.
"""
from __future__ import annotations

import base64
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, VersionMismatch
from .nn import Activation, ActivationKind, Conv, Linear, Network

DATASET_VERSION = 1
CHECKPOINT_VERSION = 1
CHECKPOINT_FORMAT = "fastsn-checkpoint"

_IMG_HEADER = struct.Struct("<4sHIII")
_LBL_HEADER = struct.Struct("<4sHII")


@dataclass
class Dataset:
    images: np.ndarray  # (count, rows, cols), float64 in [0, 1]
    labels: np.ndarray  # (count,), int64
    num_classes: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 3:
            raise ValueError(f"images must be (count, rows, cols), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label out of range")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError("pixels must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.num_classes)

    def __eq__(self, other) -> bool:
        return (isinstance(other, Dataset) and self.num_classes == other.num_classes
                and np.array_equal(self.images, other.images)
                and np.array_equal(self.labels, other.labels))


def _render(kind: int, side: int, rng: np.random.Generator) -> np.ndarray:
    """One shape on a blank canvas; position and thickness are jittered."""
    yy, xx = np.mgrid[0:side, 0:side].astype(float)
    c = (side - 1) / 2.0
    cy = c + rng.uniform(-side / 8, side / 8)
    cx = c + rng.uniform(-side / 8, side / 8)
    half = rng.uniform(side / 16, side / 10) + 0.5
    length = rng.uniform(0.3, 0.45) * side
    shape = kind % 6
    if shape == 0:  # horizontal bar
        mask = (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= length)
    elif shape == 1:  # vertical bar
        mask = (np.abs(xx - cx) <= half) & (np.abs(yy - cy) <= length)
    elif shape == 2:  # diagonal
        mask = (np.abs((yy - cy) - (xx - cx)) <= half * 1.4) & (np.abs(xx - cx) <= length * 0.8)
    elif shape == 3:  # disk
        mask = np.hypot(yy - cy, xx - cx) <= length * 0.6
    elif shape == 4:  # anti-diagonal
        mask = (np.abs((yy - cy) + (xx - cx)) <= half * 1.4) & (np.abs(xx - cx) <= length * 0.8)
    else:  # ring
        r = np.hypot(yy - cy, xx - cx)
        mask = np.abs(r - length * 0.6) <= half
    return mask.astype(float)


def generate_synthetic(classes: int = 3, per_class: int = 100, side: int = 16, seed: int = 0,
                       contrast: float = 0.5, noise: float = 0.1) -> Dataset:
    """Procedurally rendered shape classes with seeded noise.

    Pixels are quantized to multiples of 1/255 so that the in-memory data
    equals what a save/load round trip returns.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    if side < 8:
        raise ValueError("side must be >= 8")
    rng = np.random.default_rng(seed)
    images = np.empty((classes * per_class, side, side))
    labels = np.repeat(np.arange(classes), per_class)
    for i, label in enumerate(labels):
        base = 0.5 - contrast / 2 + rng.uniform(-0.05, 0.05)
        img = base + contrast * _render(int(label), side, rng)
        img += noise * rng.standard_normal((side, side))
        images[i] = img
    images = np.round(np.clip(images, 0.0, 1.0) * 255.0) / 255.0
    order = rng.permutation(len(labels))
    return Dataset(images[order], labels[order], classes)


def split_dataset(data: Dataset, fraction: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded shuffle then split; train gets ``ceil(fraction * n)`` samples."""
    n = len(data)
    order = np.random.default_rng(seed).permutation(n)
    cut = math.ceil(fraction * n - 1e-9)
    return data.subset(order[:cut]), data.subset(order[cut:])


def atomic_write(path, payload: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_dataset(data: Dataset) -> bytes:
    count, rows, cols = data.images.shape
    pixels = np.round(data.images * 255.0).astype("<u1")
    if data.num_classes > 0xFFFF:
        raise ValueError("too many classes for the label block")
    return b"".join([
        _IMG_HEADER.pack(b"SNDS", DATASET_VERSION, count, rows, cols),
        pixels.tobytes(),
        _LBL_HEADER.pack(b"SNLB", DATASET_VERSION, count, data.num_classes),
        data.labels.astype("<u2").tobytes(),
    ])


def decode_dataset(blob: bytes) -> Dataset:
    if len(blob) < _IMG_HEADER.size:
        raise FormatError("file too short for the image header")
    magic, version, count, rows, cols = _IMG_HEADER.unpack_from(blob, 0)
    if magic != b"SNDS":
        raise FormatError(f"bad image magic {magic!r}")
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    off = _IMG_HEADER.size
    n_pix = count * rows * cols
    if len(blob) < off + n_pix + _LBL_HEADER.size:
        raise FormatError("truncated image block")
    pixels = np.frombuffer(blob, dtype="<u1", count=n_pix, offset=off)
    off += n_pix
    magic, version, n_labels, num_classes = _LBL_HEADER.unpack_from(blob, off)
    if magic != b"SNLB":
        raise FormatError(f"bad label magic {magic!r}")
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported label version {version}")
    if n_labels != count:
        raise FormatError(f"{count} images but {n_labels} labels")
    off += _LBL_HEADER.size
    if len(blob) != off + 2 * count:
        raise FormatError("label block has the wrong length")
    labels = np.frombuffer(blob, dtype="<u2", count=count, offset=off).astype(np.int64)
    if count and labels.max() >= num_classes:
        raise FormatError("label exceeds num_classes")
    images = pixels.astype(float).reshape(count, rows, cols) / 255.0
    return Dataset(images, labels, num_classes)


def save_dataset(data: Dataset, path) -> None:
    atomic_write(path, encode_dataset(data))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        return decode_dataset(fh.read())


def _pack(a: np.ndarray) -> dict:
    return {"shape": list(a.shape),
            "data": base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")}


def _unpack(entry: dict) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in entry["shape"])
        raw = base64.b64decode(entry["data"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad parameter entry: {exc}") from exc
    if len(raw) != 8 * math.prod(shape):
        raise FormatError(f"parameter bytes do not match shape {shape}")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(float)


def network_to_dict(net: Network) -> dict:
    layers = []
    for layer in net.layers:
        if isinstance(layer, Conv):
            layers.append({"type": "conv", "input_rows": layer.input_rows,
                           "input_cols": layer.input_cols, "kernel": _pack(layer.kernel)})
        elif isinstance(layer, Linear):
            layers.append({"type": "linear", "weight": _pack(layer.weight),
                           "bias": _pack(layer.bias)})
        else:
            layers.append({"type": "activation", "kind": layer.kind.value})
    return {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "layers": layers}


def network_from_dict(doc: dict) -> Network:
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError("not a checkpoint document")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {doc.get('version')!r},"
                              f" expected {CHECKPOINT_VERSION}")
    layers = []
    try:
        for entry in doc["layers"]:
            kind = entry["type"]
            if kind == "conv":
                k = _unpack(entry["kernel"])
                if k.ndim != 4:
                    raise FormatError("conv kernel must be 4D")
                layers.append(Conv(k, int(entry["input_rows"]), int(entry["input_cols"])))
            elif kind == "linear":
                w, b = _unpack(entry["weight"]), _unpack(entry["bias"])
                if w.ndim != 2 or b.shape != (w.shape[0],):
                    raise FormatError("linear weight/bias shapes disagree")
                layers.append(Linear(w, b))
            elif kind == "activation":
                layers.append(Activation(ActivationKind(entry["kind"])))
            else:
                raise FormatError(f"unknown layer type {kind!r}")
        return Network(layers)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed checkpoint: {exc}") from exc


def architecture(net: Network) -> list:
    """Layer types and parameter shapes, used to check compatibility."""
    out = []
    for layer in net.layers:
        if isinstance(layer, Conv):
            out.append(("conv", layer.kernel.shape, layer.input_rows, layer.input_cols))
        elif isinstance(layer, Linear):
            out.append(("linear", layer.weight.shape))
        else:
            out.append(("activation", layer.kind))
    return out


def save_checkpoint(net: Network, path) -> None:
    text = json.dumps(network_to_dict(net), indent=1)
    atomic_write(path, text.encode("utf-8"))


def load_checkpoint(path, like: Network | None = None) -> Network:
    """Read a checkpoint; with ``like`` the architecture must match it."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint is not valid JSON: {exc}") from exc
    net = network_from_dict(doc)
    if like is not None and architecture(net) != architecture(like):
        raise FormatError("checkpoint architecture does not match the expected network")
    return net
