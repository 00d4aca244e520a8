"""Dataset acquisition: synthetic clusters plus IDX / CIFAR binary loaders."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataFormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    inputs: np.ndarray  # E x input_dim, float32
    labels: np.ndarray  # E ints in [0, num_classes)
    num_classes: int
    split: str = "train"
    class_index: dict = field(default=None)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataFormatError(
                f"label {int(self.labels.max())} outside [0, {self.num_classes})"
            )
        if self.class_index is None:
            self.class_index = build_class_index(self.labels)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    def fingerprint(self):
        import hashlib

        h = hashlib.sha256()
        h.update(self.inputs.tobytes())
        h.update(self.labels.tobytes())
        return h.hexdigest()


def build_class_index(labels):
    index = {}
    for i, y in enumerate(np.asarray(labels).tolist()):
        index.setdefault(int(y), []).append(i)
    return index


def synth_clusters(k_classes, per_class, dim, spread, seed, test_per_class=None):
    """Isotropic Gaussian clusters around seeded random centers.

    Returns disjoint (train, test) datasets; test_per_class defaults to
    per_class // 5 (at least 1).
    """
    if k_classes < 1 or per_class < 1 or dim < 1 or spread <= 0:
        raise ConfigError(
            f"invalid synth parameters: k={k_classes} per_class={per_class} "
            f"dim={dim} spread={spread}"
        )
    if test_per_class is None:
        test_per_class = max(1, per_class // 5)
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(k_classes, dim))

    def draw(count, split):
        inputs = np.concatenate(
            [centers[c] + spread * rng.normal(size=(count, dim)) for c in range(k_classes)]
        )
        labels = np.repeat(np.arange(k_classes), count)
        return Dataset(inputs, labels, k_classes, split=split)

    return draw(per_class, "train"), draw(test_per_class, "test")


def _read_idx_header(blob, path, expected_magic, n_dims):
    if len(blob) < 4 * (1 + n_dims):
        raise DataFormatError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", blob[:4])[0]
    if magic != expected_magic:
        raise DataFormatError(
            f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    dims = struct.unpack(f">{n_dims}I", blob[4 : 4 + 4 * n_dims])
    return dims, blob[4 + 4 * n_dims :]


def load_idx(images_path, labels_path, k_classes=10, split="train"):
    """Load an IDX image/label file pair (big-endian headers, byte pixels)."""
    with open(images_path, "rb") as f:
        img_blob = f.read()
    with open(labels_path, "rb") as f:
        lbl_blob = f.read()
    (count, rows, cols), pixels = _read_idx_header(img_blob, images_path, IDX_IMAGES_MAGIC, 3)
    expected = count * rows * cols
    if len(pixels) != expected:
        raise DataFormatError(
            f"{images_path}: payload has {len(pixels)} bytes, header implies {expected}"
        )
    (lbl_count,), label_bytes = _read_idx_header(lbl_blob, labels_path, IDX_LABELS_MAGIC, 1)
    if len(label_bytes) != lbl_count:
        raise DataFormatError(
            f"{labels_path}: payload has {len(label_bytes)} bytes, header implies {lbl_count}"
        )
    if lbl_count != count:
        raise DataFormatError(
            f"image count {count} != label count {lbl_count}"
        )
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    if labels.size and labels.max() >= k_classes:
        raise DataFormatError(f"label {int(labels.max())} outside [0, {k_classes})")
    inputs = np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows * cols)
    return Dataset(inputs.astype(np.float32) / 255.0, labels, k_classes, split=split)


def load_cifar_binary(paths, k_classes, channel_mean=None, channel_std=None, split="train"):
    """Load CIFAR-style binary records: label byte(s) then 3x32x32 pixels.

    The 100-class layout carries a coarse label byte ahead of the fine
    label; the fine label is used. Channels are scaled to [0, 1], then
    normalized with the supplied per-channel constants when given.
    """
    label_bytes = 2 if k_classes == 100 else 1
    record = label_bytes + 3072
    all_inputs, all_labels = [], []
    for path in paths:
        with open(path, "rb") as f:
            blob = f.read()
        if len(blob) == 0 or len(blob) % record != 0:
            raise DataFormatError(
                f"{path}: size {len(blob)} is not a multiple of record size {record}"
            )
        raw = np.frombuffer(blob, dtype=np.uint8).reshape(-1, record)
        all_labels.append(raw[:, label_bytes - 1].astype(np.int64))
        all_inputs.append(raw[:, label_bytes:].astype(np.float32) / 255.0)
    inputs = np.concatenate(all_inputs)
    labels = np.concatenate(all_labels)
    if labels.max() >= k_classes:
        raise DataFormatError(f"label {int(labels.max())} outside [0, {k_classes})")
    if channel_mean is not None:
        mean = np.repeat(np.asarray(channel_mean, dtype=np.float32), 1024)
        std = np.repeat(np.asarray(channel_std, dtype=np.float32), 1024)
        inputs = (inputs - mean) / std
    return Dataset(inputs, labels, k_classes, split=split)
