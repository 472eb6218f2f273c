"""Labelled datasets: synthetic blobs, IDX and CSV ingestion."""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputContractError, ParseError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """``x`` is ``(N, D)`` float64, ``y`` holds 1-based labels.

    Construction validates labels and feature bounds; out-of-bounds features
    are rejected, never clamped.
    """

    x: np.ndarray
    y: np.ndarray
    n_classes: int
    bounds: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64, copy=True)
        y = np.array(self.y, copy=True)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise InputContractError(f"features must be (N, D), got shape {x.shape}")
        if x.shape[0] < 1:
            raise InputContractError("a dataset needs at least one sample")
        if y.shape != (x.shape[0],):
            raise InputContractError(f"{y.size} labels for {x.shape[0]} samples")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise InputContractError("labels must be integers")
        y = y.astype(np.int64)
        K = int(self.n_classes)
        if K < 2:
            raise InputContractError("need at least 2 classes")
        if np.any(y < 1) or np.any(y > K):
            bad = int(np.flatnonzero((y < 1) | (y > K))[0])
            raise InputContractError(f"label {y[bad]} of sample {bad} outside 1..{K}")
        lo, hi = float(self.bounds[0]), float(self.bounds[1])
        if not lo < hi:
            raise InputContractError(f"empty feature bounds [{lo}, {hi}]")
        if not np.all(np.isfinite(x)):
            raise InputContractError("non-finite features")
        if x.min() < lo or x.max() > hi:
            raise InputContractError(
                f"features span [{x.min()}, {x.max()}], outside declared bounds [{lo}, {hi}]")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "n_classes", K)
        object.__setattr__(self, "bounds", (lo, hi))

    def __len__(self):
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.x[idx], self.y[idx], self.n_classes, self.bounds)

    def with_features(self, x) -> "LabeledDataset":
        return LabeledDataset(x, self.y, self.n_classes, self.bounds)

    def identity_hash(self) -> int:
        """CRC-32 over little-endian float64 features followed by int64 labels."""
        crc = zlib.crc32(self.x.astype("<f8").tobytes())
        return zlib.crc32(self.y.astype("<i8").tobytes(), crc)

    def same_as(self, other: "LabeledDataset") -> bool:
        return (self.n_classes == other.n_classes and self.bounds == other.bounds
                and self.x.shape == other.x.shape
                and self.x.tobytes() == other.x.tobytes()
                and self.y.tobytes() == other.y.tobytes())


def synth_blobs(n_classes: int, n_per_class: int, dim: int, separation: float,
                seed: int, frame: str = "dense") -> LabeledDataset:
    """Isotropic unit-variance Gaussian clusters rescaled into [0, 1].

    Class means are ``separation`` times the columns of a seeded random
    orthonormal frame. ``frame="dense"`` draws a generic rotation (random
    unit vectors when ``dim < n_classes``); ``frame="axis"`` uses distinct
    random coordinate axes with random signs, so each class differs from the
    rest in a single feature. A single global affine map sends the sample
    min/max to 0/1, so clusters stay isotropic. Samples are ordered class by
    class.
    """
    if n_classes < 2 or n_per_class < 1 or dim < 1:
        raise InputContractError("n_classes >= 2, n_per_class >= 1 and dim >= 1 required")
    if separation < 0:
        raise InputContractError("separation must be >= 0")
    rng = np.random.default_rng(seed)
    if frame == "dense":
        g = rng.standard_normal((dim, n_classes))
        if dim >= n_classes:
            basis, _ = np.linalg.qr(g)
        else:
            basis = g / np.linalg.norm(g, axis=0, keepdims=True)
        means = separation * basis.T
    elif frame == "axis":
        if dim < n_classes:
            raise InputContractError("the axis frame needs dim >= n_classes")
        axes = rng.permutation(dim)[:n_classes]
        signs = rng.choice([-1.0, 1.0], n_classes)
        means = np.zeros((n_classes, dim))
        means[np.arange(n_classes), axes] = separation * signs
    else:
        raise InputContractError(f"unknown frame {frame!r}")
    x = np.concatenate([means[k] + rng.standard_normal((n_per_class, dim))
                        for k in range(n_classes)])
    y = np.repeat(np.arange(1, n_classes + 1), n_per_class)
    lo, hi = x.min(), x.max()
    x = (x - lo) / (hi - lo) if hi > lo else np.full_like(x, 0.5)
    return LabeledDataset(np.clip(x, 0.0, 1.0), y, n_classes)


def stratified_split(data: LabeledDataset, n_test_per_class: int, seed: int):
    """Split into ``(train, test)`` with ``n_test_per_class`` test samples of each class."""
    rng = np.random.default_rng(seed)
    test_idx = []
    for k in range(1, data.n_classes + 1):
        members = np.flatnonzero(data.y == k)
        if members.size <= n_test_per_class:
            raise InputContractError(f"class {k} has only {members.size} samples")
        test_idx.append(rng.permutation(members)[:n_test_per_class])
    test_idx = np.sort(np.concatenate(test_idx))
    mask = np.ones(len(data), dtype=bool)
    mask[test_idx] = False
    return data.subset(np.flatnonzero(mask)), data.subset(test_idx)


# --- IDX ----------------------------------------------------------------------


def _read_idx(path, magic: int, rank: int):
    raw = Path(path).read_bytes()
    header = 4 + 4 * rank
    if len(raw) < 4:
        raise ParseError(f"{path}: truncated magic at byte 0", 0)
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise ParseError(f"{path}: bad magic 0x{got:08x} at byte 0, expected 0x{magic:08x}", 0)
    if len(raw) < header:
        raise ParseError(f"{path}: truncated header at byte {len(raw)}", len(raw))
    dims = struct.unpack(">" + "I" * rank, raw[4:header])
    size = int(np.prod(dims))
    if len(raw) < header + size:
        raise ParseError(
            f"{path}: truncated payload at byte {len(raw)}, expected {header + size} bytes",
            len(raw))
    if len(raw) > header + size:
        raise ParseError(f"{path}: {len(raw) - header - size} trailing bytes at byte {header + size}",
                         header + size)
    return dims, np.frombuffer(raw, dtype=np.uint8, count=size, offset=header)


def load_idx(images_path, labels_path, limit: int | None = None,
             n_classes: int | None = None) -> LabeledDataset:
    """Read an MNIST-style IDX pair; pixels become ``byte / 255``, labels ``byte + 1``."""
    (count, rows, cols), pixels = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    (n_labels,), labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if count != n_labels:
        raise ParseError(f"{count} images but {n_labels} labels (count field at byte 4)", 4)
    x = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    y = labels.astype(np.int64) + 1
    if limit is not None:
        x, y = x[:limit], y[:limit]
    K = n_classes or int(labels.max()) + 1
    return LabeledDataset(x, y, max(K, 2))


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images ``(N, rows, cols)`` and 0-based labels as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    Path(images_path).write_bytes(
        struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, labels.size) + labels.tobytes())


# --- CSV ----------------------------------------------------------------------


def load_csv(path, n_classes: int | None = None,
             bounds: tuple[float, float] = (0.0, 1.0)) -> LabeledDataset:
    """Rows of ``label,feature,...`` with 1-based labels; ``#`` lines are comments."""
    rows, labels = [], []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split(",")
            try:
                label = int(fields[0])
                feats = [float(v) for v in fields[1:]]
            except ValueError:
                raise ParseError(f"{path}:{lineno}: unparsable row", lineno) from None
            if width is None:
                width = len(feats)
            if len(feats) != width or width == 0:
                raise ParseError(f"{path}:{lineno}: expected {width} features, got {len(feats)}",
                                 lineno)
            if label < 1 or (n_classes is not None and label > n_classes):
                raise ParseError(f"{path}:{lineno}: label {label} outside 1..{n_classes or 'K'}",
                                 lineno)
            rows.append(feats)
            labels.append(label)
    if not rows:
        raise InputContractError(f"{path}: no samples")
    K = n_classes or max(max(labels), 2)
    return LabeledDataset(np.array(rows), np.array(labels), K, bounds)


def save_csv(data: LabeledDataset, path) -> None:
    """Inverse of :func:`load_csv`; ``repr`` floats round-trip exactly."""
    with open(path, "w") as fh:
        for label, row in zip(data.y, data.x):
            fh.write(",".join([str(int(label)), *(repr(float(v)) for v in row)]) + "\n")
