"""Datasets: the immutable container, file loaders, synthetic blobs and samplers."""

from __future__ import annotations

import csv
import gzip
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DataError, IdError, LabelError, ParseError, SampleError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


class LabeledDataset:
    """Ordered (id, feature vector, label) samples with ``num_classes`` classes.

    Features are stored as an ``(n, d)`` float64 array. Arrays are read-only;
    every filtering operation returns a new dataset and keeps surviving ids.
    """

    __slots__ = ("name", "ids", "X", "y", "num_classes", "_pos")

    def __init__(self, name: str, ids, X, y, num_classes: int):
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(len(ids), -1) if len(ids) else X.reshape(0, 0)
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        if X.ndim != 2 or X.shape[0] != len(ids) or len(y) != len(ids):
            raise DataError(
                f"inconsistent sizes: {len(ids)} ids, features {X.shape}, {len(y)} labels"
            )
        if len(ids) and X.shape[1] < 1:
            raise DataError("feature dimension must be >= 1")
        if num_classes < 1:
            raise DataError("num_classes must be >= 1")
        if len(y) and (y.min() < 0 or y.max() >= num_classes):
            raise LabelError(f"labels must lie in [0, {num_classes})")
        if len(np.unique(ids)) != len(ids):
            raise IdError("sample ids must be unique")
        self.name = name
        self.ids = _frozen(ids)
        self.X = _frozen(X)
        self.y = _frozen(y)
        self.num_classes = int(num_classes)
        self._pos = None

    def __len__(self) -> int:
        return len(self.ids)

    def __repr__(self) -> str:
        return f"LabeledDataset({self.name!r}, n={len(self)}, d={self.dim}, C={self.num_classes})"

    @property
    def dim(self) -> int:
        return int(self.X.shape[1]) if self.X.ndim == 2 else 0

    def position(self, sample_id: int) -> int:
        """Row index of ``sample_id``."""
        if self._pos is None:
            self._pos = {int(i): k for k, i in enumerate(self.ids)}
        try:
            return self._pos[int(sample_id)]
        except KeyError:
            raise IdError(f"unknown sample id {sample_id}") from None

    def sample(self, sample_id: int) -> tuple[np.ndarray, int]:
        k = self.position(sample_id)
        return self.X[k], int(self.y[k])

    def take(self, rows, name: str | None = None) -> "LabeledDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return LabeledDataset(name or self.name, self.ids[rows], self.X[rows], self.y[rows],
                              self.num_classes)

    def select(self, ids: Iterable[int], name: str | None = None) -> "LabeledDataset":
        """Samples with the given ids, in the given order."""
        return self.take([self.position(i) for i in ids], name)

    def remove(self, ids: Iterable[int]) -> "LabeledDataset":
        drop = {int(i) for i in ids}
        unknown = drop.difference(int(i) for i in self.ids)
        if unknown:
            raise IdError(f"ids not in dataset {self.name!r}: {sorted(unknown)[:10]}")
        keep = np.array([int(i) not in drop for i in self.ids], dtype=bool)
        return self.take(np.flatnonzero(keep))

    def concat(self, other: "LabeledDataset", name: str | None = None) -> "LabeledDataset":
        if other.num_classes != self.num_classes or other.dim != self.dim:
            raise DataError("cannot concatenate datasets with different shapes")
        return LabeledDataset(
            name or self.name,
            np.concatenate([self.ids, other.ids]),
            np.vstack([self.X, other.X]),
            np.concatenate([self.y, other.y]),
            self.num_classes,
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.num_classes)


# ---------------------------------------------------------------- IDX files


def _read_bytes(path) -> bytes:
    path = Path(path)
    with (gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")) as fh:
        return fh.read()


def _idx_header(buf: bytes, magic: int, ndim: int, what: str) -> tuple[int, ...]:
    need = 4 + 4 * ndim
    if len(buf) < 4:
        raise ParseError(f"{what}: truncated magic number", offset=len(buf))
    (got,) = struct.unpack_from(">I", buf, 0)
    if got != magic:
        raise ParseError(f"{what}: bad magic 0x{got:08x}, expected 0x{magic:08x}", offset=0)
    if len(buf) < need:
        raise ParseError(f"{what}: truncated header", offset=len(buf))
    return struct.unpack_from(">" + "I" * ndim, buf, 4)


def _idx_payload(buf: bytes, start: int, size: int, what: str) -> np.ndarray:
    end = start + size
    if len(buf) < end:
        raise ParseError(f"{what}: truncated payload, expected {size} bytes", offset=len(buf))
    if len(buf) > end:
        raise ParseError(f"{what}: {len(buf) - end} trailing bytes", offset=end)
    return np.frombuffer(buf, dtype=np.uint8, count=size, offset=start)


def load_idx(images_path, labels_path, *, name: str | None = None,
             image_shape: tuple[int, int] = (28, 28), num_classes: int = 10) -> LabeledDataset:
    """Load an MNIST-format IDX image/label pair (``.gz`` accepted).

    Pixels are scaled to [0, 1]; ids are the sample positions.
    """
    img = _read_bytes(images_path)
    lab = _read_bytes(labels_path)
    n_img, rows, cols = _idx_header(img, IDX_IMAGES_MAGIC, 3, "images")
    if (rows, cols) != tuple(image_shape):
        raise ParseError(f"images: dims {rows}x{cols}, expected "
                         f"{image_shape[0]}x{image_shape[1]}", offset=8)
    (n_lab,) = _idx_header(lab, IDX_LABELS_MAGIC, 1, "labels")
    if n_lab != n_img:
        raise ParseError(f"labels: count mismatch, {n_lab} labels for {n_img} images", offset=4)
    pixels = _idx_payload(img, 16, n_img * rows * cols, "images")
    labels = _idx_payload(lab, 8, n_lab, "labels")
    bad = np.flatnonzero(labels >= num_classes)
    if len(bad):
        raise ParseError(f"labels: value {labels[bad[0]]} >= {num_classes}", offset=8 + int(bad[0]))
    X = pixels.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    return LabeledDataset(name or Path(images_path).name, np.arange(n_img), X, labels, num_classes)


def write_idx(images_path, labels_path, images: np.ndarray, labels) -> None:
    """Write uint8 images ``(n, rows, cols)`` and labels as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


# ---------------------------------------------------------------- CSV files


def load_csv(path, num_classes: int, *, header: bool = False, name: str | None = None) -> LabeledDataset:
    """Rows of ``d`` real features followed by one integer label; ids are row indices.

    Rows are numbered from 1 in errors, counting the header line when present.
    """
    feats, labels = [], []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not row:
                raise ParseError("empty row", row=lineno)
            if width is None:
                width = len(row)
                if width < 2:
                    raise ParseError("need at least one feature and a label", row=lineno)
            elif len(row) != width:
                raise ParseError(f"ragged row: {len(row)} cells, expected {width}", row=lineno)
            try:
                x = [float(c) for c in row[:-1]]
            except ValueError:
                raise ParseError("non-numeric feature cell", row=lineno) from None
            if not all(math.isfinite(v) for v in x):
                raise ParseError("non-finite feature value", row=lineno)
            try:
                label = int(row[-1])
            except ValueError:
                raise ParseError(f"label {row[-1]!r} is not an integer", row=lineno) from None
            if not 0 <= label < num_classes:
                raise ParseError(f"label {label} outside [0, {num_classes})", row=lineno)
            feats.append(x)
            labels.append(label)
    if not labels:
        raise ParseError("no data rows", row=1 if header else 0)
    n = len(labels)
    return LabeledDataset(name or Path(path).stem, np.arange(n), np.array(feats), labels, num_classes)


def dumps_csv(dataset: LabeledDataset) -> str:
    """Canonical CSV text: shortest round-trip float reprs, ``\\n`` line endings."""
    buf = io.StringIO()
    for x, label in zip(dataset.X, dataset.y):
        buf.write(",".join(repr(float(v)) for v in x))
        buf.write(f",{int(label)}\n")
    return buf.getvalue()


def write_csv(dataset: LabeledDataset, path) -> None:
    Path(path).write_text(dumps_csv(dataset))


# ---------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class BlobSpec:
    num_classes: int
    dim: int
    per_class: int
    spread: float = 5.0
    sigma: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise DataError("blobs need at least 2 classes")
        if self.dim < 1:
            raise DataError("blob dimension must be >= 1")
        if self.per_class < 1:
            raise DataError("per_class must be >= 1")
        if not self.sigma > 0:
            raise DataError("sigma must be > 0")


def blob_centers(spec: BlobSpec) -> np.ndarray:
    """Class centers: standard normal draws scaled by ``spread``."""
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(1)[0])
    return spec.spread * rng.standard_normal((spec.num_classes, spec.dim))


def _blob_draw(spec: BlobSpec, per_class: int, stream: int, id_offset: int, name: str) -> LabeledDataset:
    centers = blob_centers(spec)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, stream]))
    y = np.repeat(np.arange(spec.num_classes), per_class)
    X = centers[y] + spec.sigma * rng.standard_normal((len(y), spec.dim))
    order = rng.permutation(len(y))
    return LabeledDataset(name, id_offset + np.arange(len(y)), X[order], y[order], spec.num_classes)


def make_blobs(spec: BlobSpec) -> LabeledDataset:
    """Balanced Gaussian clusters, ``per_class`` points per class, shuffled."""
    return _blob_draw(spec, spec.per_class, 1, 0, "blobs")


def make_blobs_split(spec: BlobSpec, test_per_class: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Train set as :func:`make_blobs` plus an independent test draw around the same
    centers. Test ids start after the last train id, so the two sets are disjoint."""
    train = make_blobs(spec)
    test = _blob_draw(spec, test_per_class, 2, len(train), "blobs-test")
    return train, test


# ---------------------------------------------------------------- sampling


def stratified_sample(dataset: LabeledDataset, n: int, seed: int) -> LabeledDataset:
    """``n`` samples without replacement, per-class counts within one of each other.

    The remainder ``n mod C`` goes to the lowest class indices, one extra each.
    """
    C = dataset.num_classes
    if not 0 <= n <= len(dataset):
        raise SampleError(f"cannot draw {n} samples from {len(dataset)}")
    base, extra = divmod(n, C)
    rng = np.random.default_rng(seed)
    rows = []
    for c in range(C):
        want = base + (1 if c < extra else 0)
        members = np.flatnonzero(dataset.y == c)
        if len(members) < want:
            raise SampleError(f"class {c} has {len(members)} members, needs {want}")
        rows.append(rng.choice(members, size=want, replace=False))
    rows = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    return dataset.take(rng.permutation(rows))


def uniform_subsample(dataset: LabeledDataset, n: int, seed: int) -> LabeledDataset:
    """``n`` distinct samples drawn uniformly without replacement."""
    if not 0 <= n <= len(dataset):
        raise SampleError(f"cannot draw {n} samples from {len(dataset)}")
    rng = np.random.default_rng(seed)
    return dataset.take(rng.choice(len(dataset), size=n, replace=False))
