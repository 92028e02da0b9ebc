"""Datasets, synthetic generation, file loaders and client partitioning."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DatasetIOError, DatasetValidationError


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray  # (n, *feature_shape)
    labels: np.ndarray  # (n,) int64
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "features", np.asarray(self.features))
        if labels.size == 0:
            raise DatasetValidationError("dataset is empty")
        if self.features.shape[0] != labels.size:
            raise DatasetValidationError(
                f"{self.features.shape[0]} feature rows but {labels.size} labels")
        bad = (labels < 0) | (labels >= self.num_classes)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise DatasetValidationError(
                f"label {labels[i]} at row {i} outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.labels.size

    @property
    def feature_shape(self) -> tuple[int, ...]:
        return tuple(self.features.shape[1:])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, indices) -> tuple[np.ndarray, np.ndarray]:
        return self.features[indices], self.labels[indices]

    def equals(self, other: "Dataset") -> bool:
        return (self.num_classes == other.num_classes
                and np.array_equal(self.labels, other.labels)
                and self.features.shape == other.features.shape
                and np.array_equal(self.features, other.features))


@dataclass(frozen=True, eq=False)
class ClientShard:
    client_id: int
    indices: np.ndarray = field(repr=False)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if idx.size == 0:
            raise ConfigurationError(f"client {self.client_id} received no data")
        object.__setattr__(self, "indices", idx)

    @property
    def n_k(self) -> int:
        return int(self.indices.size)


class PartitionKind(str, Enum):
    IID = "iid"
    NON_IID_1 = "noniid1"
    NON_IID_2 = "noniid2"


@dataclass(frozen=True)
class PartitionScheme:
    kind: PartitionKind
    K: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", PartitionKind(self.kind))
        if self.K < 1:
            raise ConfigurationError(f"K must be >= 1, got {self.K}")


# -- synthetic data -----------------------------------------------------------

def _class_means(num_classes, dim, difficulty, rng):
    raw = rng.standard_normal((max(dim, num_classes), num_classes))
    if dim >= num_classes:
        q, _ = np.linalg.qr(raw[:dim])
        dirs = q[:, :num_classes].T
    else:
        dirs = raw[:dim].T
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    # orthonormal directions scaled by d/sqrt(2) sit at pairwise distance d
    return dirs * (difficulty / np.sqrt(2.0))


def _grating_templates(num_classes, side, difficulty, rng):
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64) / side
    templates = []
    for c in range(num_classes):
        theta = np.pi * c / num_classes + rng.uniform(-0.1, 0.1)
        freq = 2.0 + c % 3
        t = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + rng.uniform(0, 2 * np.pi))
        t -= t.mean()
        templates.append(t / np.linalg.norm(t))
    return np.stack(templates) * (difficulty / np.sqrt(2.0))


def generate_synthetic(num_classes: int = 3, per_class: int | Sequence[int] = 1250, *,
                       input_dim: int | None = 10, input_side: int | None = None,
                       difficulty: float = 3.0, shared_offset: float = 0.0,
                       test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Gaussian class clusters (``input_dim``) or noisy class gratings (``input_side``).

    ``difficulty`` is the distance between class centres in units of the
    within-class standard deviation. ``shared_offset`` adds a common component
    of that norm to every class centre (the shared background real images
    have). ``per_class`` may list one count per
    class to simulate imbalance. A fixed fraction of every class is held out
    as the test split.
    """
    counts = [int(per_class)] * num_classes if np.isscalar(per_class) else [int(c) for c in per_class]
    if len(counts) != num_classes:
        raise ConfigurationError(f"per_class lists {len(counts)} counts for {num_classes} classes")
    if num_classes < 2:
        raise ConfigurationError("need at least two classes")
    if min(counts) < 2:
        raise ConfigurationError(f"per_class must be >= 2, got {min(counts)}")
    if difficulty <= 0:
        raise ConfigurationError(f"difficulty must be > 0, got {difficulty}")
    if not 0 < test_fraction < 1:
        raise ConfigurationError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    if input_side is not None:
        centres = _grating_templates(num_classes, input_side, difficulty, rng)[:, None]
    elif input_dim is not None and input_dim > 0:
        centres = _class_means(num_classes, input_dim, difficulty, rng)
    else:
        raise ConfigurationError("give a positive input_dim or input_side")
    if shared_offset:
        common = rng.standard_normal(centres.shape[1:])
        centres = centres + common * (shared_offset / np.linalg.norm(common))

    train_x, train_y, test_x, test_y = [], [], [], []
    for c, n in enumerate(counts):
        x = centres[c] + rng.standard_normal((n, *centres.shape[1:]))
        n_test = min(max(1, int(round(n * test_fraction))), n - 1)
        test_x.append(x[:n_test])
        train_x.append(x[n_test:])
        test_y.append(np.full(n_test, c))
        train_y.append(np.full(n - n_test, c))
    train_perm = rng.permutation(sum(len(y) for y in train_y))
    test_perm = rng.permutation(sum(len(y) for y in test_y))
    train = Dataset(np.concatenate(train_x)[train_perm], np.concatenate(train_y)[train_perm], num_classes, "train")
    test = Dataset(np.concatenate(test_x)[test_perm], np.concatenate(test_y)[test_perm], num_classes, "test")
    return train, test


# -- partitioning -------------------------------------------------------------

def _sorted_by_label(labels, rng):
    perm = rng.permutation(labels.size)
    return perm[np.argsort(labels[perm], kind="stable")]


def _snapped_boundaries(n, K, class_edges):
    """Near-equal cut points, moved onto a class edge when within 10% of a shard."""
    shard = n / K
    cuts = []
    for j in range(1, K):
        ideal = int(round(j * shard))
        if class_edges.size:
            nearest = int(class_edges[np.argmin(np.abs(class_edges - ideal))])
            if abs(nearest - ideal) <= 0.1 * shard:
                ideal = nearest
        cuts.append(ideal)
    # keep every shard non-empty; fall back to the plain cut where snapping collides
    fixed, prev = [], 0
    for j, c in enumerate(cuts, start=1):
        plain = int(round(j * shard))
        if c <= prev or c >= n - (K - j) + 1:
            c = max(plain, prev + 1)
        fixed.append(c)
        prev = c
    return fixed


def _class_aligned_shards(order, labels, num_shards):
    """Split label-sorted indices into shards that never straddle a class."""
    counts = np.bincount(labels, minlength=labels.max() + 1)
    present = np.flatnonzero(counts)
    if num_shards < present.size:
        raise ConfigurationError(
            f"{num_shards} shards cannot keep {present.size} classes apart")
    sizes = counts[present]
    quota = sizes / sizes.sum() * num_shards
    alloc = np.maximum(np.floor(quota).astype(int), 1)
    alloc = np.minimum(alloc, sizes)
    while alloc.sum() < num_shards:
        room = alloc < sizes
        if not room.any():
            raise ConfigurationError(f"cannot form {num_shards} non-empty shards")
        gap = np.where(room, quota - alloc, -np.inf)
        alloc[int(np.argmax(gap))] += 1
    while alloc.sum() > num_shards:
        over = np.where(alloc > 1, alloc - quota, -np.inf)
        alloc[int(np.argmax(over))] -= 1
    shards, start = [], 0
    for size, a in zip(sizes, alloc):
        shards.extend(np.array_split(order[start:start + size], a))
        start += size
    return shards


def partition(train: Dataset, scheme: PartitionScheme) -> list[ClientShard]:
    """Split the training set across ``scheme.K`` clients.

    IID shuffles and splits evenly. ``noniid1`` sorts by label and cuts K
    contiguous near-equal shards, snapping cuts onto class edges when they are
    within 10% of a shard length. ``noniid2`` cuts 2K class-aligned shards and
    deals two at random to every client, so each client sees at most two
    classes.
    """
    n, K = len(train), scheme.K
    if K > n:
        raise ConfigurationError(f"K={K} exceeds the {n} training examples")
    rng = np.random.default_rng([scheme.seed, 0x5A4D])
    labels = train.labels
    if scheme.kind is PartitionKind.IID:
        pieces = np.array_split(rng.permutation(n), K)
    elif scheme.kind is PartitionKind.NON_IID_1:
        order = _sorted_by_label(labels, rng)
        edges = np.cumsum(np.bincount(labels[order], minlength=train.num_classes))[:-1]
        edges = edges[(edges > 0) & (edges < n)]
        pieces = np.split(order, _snapped_boundaries(n, K, edges))
    else:
        if 2 * K > n:
            raise ConfigurationError(f"noniid2 needs 2K={2 * K} <= {n} examples")
        order = _sorted_by_label(labels, rng)
        shards = _class_aligned_shards(order, labels, 2 * K)
        deal = rng.permutation(2 * K)
        pieces = [np.concatenate([shards[deal[2 * k]], shards[deal[2 * k + 1]]]) for k in range(K)]
    return [ClientShard(k, np.sort(p)) for k, p in enumerate(pieces)]


def labels_per_shard(train: Dataset, shards: Sequence[ClientShard]) -> list[int]:
    return [int(np.unique(train.labels[s.indices]).size) for s in shards]


# -- file formats -------------------------------------------------------------

def save_csv(dataset: Dataset, path) -> None:
    flat = dataset.features.reshape(len(dataset), -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", *[f"f{i}" for i in range(flat.shape[1])]])
        for y, row in zip(dataset.labels, flat):
            w.writerow([int(y), *[repr(float(v)) for v in row]])


def _load_csv(path, num_classes, split):
    labels, rows = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetIOError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if "label" not in header:
            raise DatasetIOError(f"{path}: line 1: no 'label' column in header")
        li = header.index("label")
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetIOError(f"{path}: line {reader.line_num}: expected {len(header)} fields, got {len(row)}")
            try:
                labels.append(int(row[li]))
                rows.append([float(v) for j, v in enumerate(row) if j != li])
            except ValueError as exc:
                raise DatasetIOError(f"{path}: line {reader.line_num}: {exc}") from None
    if not labels:
        raise DatasetIOError(f"{path}: no data rows")
    if num_classes is None:
        num_classes = max(max(labels) + 1, 2)
    return Dataset(np.array(rows, dtype=np.float64), np.array(labels), num_classes, split)


_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
_IDX_CODES = {np.dtype(v).newbyteorder("="): k for k, v in _IDX_TYPES.items()}


def write_idx(array: np.ndarray, path) -> None:
    array = np.asarray(array)
    native = array.dtype.newbyteorder("=")
    if native not in _IDX_CODES:
        raise DatasetIOError(f"dtype {array.dtype} has no IDX code")
    code = _IDX_CODES[native]
    with open(path, "wb") as fh:
        fh.write(struct.pack(">BBBB", 0, 0, code, array.ndim))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.astype(_IDX_TYPES[code], copy=False).tobytes())


def read_idx(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise DatasetIOError(f"{path}: offset 0: truncated header")
    zero1, zero2, code, ndim = struct.unpack(">BBBB", raw[:4])
    if zero1 or zero2 or code not in _IDX_TYPES:
        raise DatasetIOError(f"{path}: offset 0: bad IDX magic {raw[:4].hex()}")
    end = 4 + 4 * ndim
    if len(raw) < end:
        raise DatasetIOError(f"{path}: offset 4: truncated dimension table")
    dims = struct.unpack(f">{ndim}I", raw[4:end])
    dtype = np.dtype(_IDX_TYPES[code])
    need = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - end != need:
        raise DatasetIOError(f"{path}: offset {end}: payload holds {len(raw) - end} bytes, expected {need}")
    return np.frombuffer(raw, dtype=dtype, offset=end).reshape(dims).astype(dtype.newbyteorder("="))


def save_idx(dataset: Dataset, images_path, labels_path) -> None:
    write_idx(dataset.features, images_path)
    write_idx(dataset.labels.astype(np.uint8 if dataset.num_classes <= 256 else np.int32), labels_path)


def load_dataset(path, fmt: str = "csv", *, labels_path=None, num_classes: int | None = None,
                 split: str = "train") -> Dataset:
    """Load a CSV (``label`` column plus numeric features) or an IDX image/label pair.

    For IDX, ``labels_path`` defaults to the images path with ``images``
    replaced by ``labels``. uint8 images are scaled to [0, 1].
    """
    path = Path(path)
    if not path.exists():
        raise DatasetIOError(f"{path}: no such file")
    if fmt == "csv":
        return _load_csv(path, num_classes, split)
    if fmt != "idx":
        raise ConfigurationError(f"unknown dataset format {fmt!r}")
    if labels_path is None:
        if "images" not in path.name:
            raise DatasetIOError(f"{path}: cannot infer the labels file; pass labels_path")
        labels_path = path.with_name(path.name.replace("images", "labels"))
    images = read_idx(path)
    labels = read_idx(labels_path).astype(np.int64).reshape(-1)
    if images.dtype == np.uint8:
        images = images.astype(np.float64) / 255.0
    elif images.dtype != np.float64:
        images = images.astype(np.float64)
    if images.ndim == 3:
        images = images[:, None]  # add a channel axis
    if num_classes is None:
        num_classes = max(int(labels.max()) + 1, 2)
    return Dataset(images, labels, num_classes, split)
