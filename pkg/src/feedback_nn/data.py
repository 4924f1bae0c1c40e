"""Deterministic desk-scale datasets: synthetic two moons, IDX and CSV ingestion, seeded batches."""

from __future__ import annotations

import csv
import gzip
import io
import math
import struct
from collections.abc import Iterator
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import (
    CountMismatchError,
    CsvFormatError,
    EmptyDatasetError,
    IdxMagicError,
    InvalidParameterError,
    TrailingDataError,
    TruncatedFileError,
)
from .tensor import Array

__all__ = (
    'IDX_IMAGES_MAGIC',
    'IDX_LABELS_MAGIC',
    'Batch',
    'Dataset',
    'batches',
    'load_csv',
    'load_idx',
    'train_test_split',
    'two_moons',
)

IDX_IMAGES_MAGIC = 0x00000803
"""Magic number of an IDX file of unsigned byte images (3 dimensions)."""

IDX_LABELS_MAGIC = 0x00000801
"""Magic number of an IDX file of unsigned byte labels (1 dimension)."""


@dataclass(frozen=True)
class Dataset:
    """Inputs and 0-based class labels, with the valid range of the inputs."""

    inputs: Array
    """An `n×d` array of inputs within `bounds`."""

    labels: NDArray[np.int64]
    """`n` class indices in `[0, num_classes)`."""

    num_classes: int
    bounds: tuple[float, float] = (0.0, 1.0)
    name: str = ''
    """A short identifier, used in reports."""

    def __post_init__(self) -> None:
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise EmptyDatasetError(f'dataset {self.name!r} must hold at least one sample, got {self.inputs.shape}')
        if self.labels.shape != (self.inputs.shape[0],):
            raise InvalidParameterError('labels', f'expected {len(self.inputs)} labels, got shape {self.labels.shape}')
        if self.num_classes < 1 or self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise InvalidParameterError('labels', f'labels must lie in [0, {self.num_classes})')
        low, high = self.bounds
        if not low < high:
            raise InvalidParameterError('bounds', f'low must be smaller than high, got {self.bounds}')
        if self.inputs.min() < low or self.inputs.max() > high:
            raise InvalidParameterError('inputs', f'values must lie within the bounds {self.bounds}')

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices: ArrayLike, *, name: str | None = None) -> Dataset:
        index = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.inputs[index], self.labels[index], self.num_classes, self.bounds, self.name if name is None else name
        )


def two_moons(n: int, noise: float, seed: int, *, rescale: bool = True) -> Dataset:
    """Two interleaved half circles with Gaussian noise, `n / 2` samples per class.

    Class 0 lies on the upper unit half circle centered at the origin, class 1 on the lower unit half
    circle centered at `(1, 0.5)`. With `rescale`, inputs are min-max scaled into `[0, 1]²`, otherwise
    the bounds are the extent of the data. Samples are returned in a seeded random order.

    Raises:
        InvalidParameterError: If `n` is odd or not positive, or `noise` is negative.
    """
    if n < 2 or n % 2:
        raise InvalidParameterError('n', f'must be a positive even count, got {n}')
    if noise < 0:
        raise InvalidParameterError('noise', f'must be non-negative, got {noise!r}')
    rng = np.random.default_rng(seed)
    half = n // 2
    angles = np.linspace(0.0, np.pi, half)
    upper = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    lower = np.stack([1.0 - np.cos(angles), 0.5 - np.sin(angles)], axis=1)
    inputs = np.concatenate([upper, lower])
    if noise:
        inputs = inputs + rng.normal(0.0, noise, size=(n, 2))
    labels = np.repeat(np.arange(2, dtype=np.int64), half)
    order = rng.permutation(n)
    inputs, labels = inputs[order], labels[order]

    if rescale:
        low, high = inputs.min(axis=0), inputs.max(axis=0)
        inputs = np.clip((inputs - low) / (high - low), 0.0, 1.0)
        bounds = (0.0, 1.0)
    else:
        bounds = (float(inputs.min()), float(inputs.max()))
    return Dataset(inputs, labels, 2, bounds, name=f'two_moons(n={n},noise={noise})')


def _read_bytes(path: Path) -> bytes:
    if path.suffix == '.gz':
        with gzip.open(path, 'rb') as f:
            return f.read()
    return path.read_bytes()


def _read_idx(path: Path, magic: int, ndim: int) -> tuple[tuple[int, ...], bytes]:
    content = _read_bytes(path)
    header_size = 4 * (1 + ndim)
    if len(content) < header_size:
        raise TruncatedFileError(str(path), len(content), header_size - len(content))
    found, *dims = struct.unpack(f'>{1 + ndim}I', content[:header_size])
    if found != magic:
        raise IdxMagicError(str(path), 0, magic, found)
    body = content[header_size:]
    needed = math.prod(dims)
    if len(body) < needed:
        raise TruncatedFileError(str(path), len(content), needed - len(body))
    if len(body) > needed:
        raise TrailingDataError(str(path), header_size + needed, len(body) - needed)
    return tuple(dims), body


def load_idx(images_path: str | Path, labels_path: str | Path) -> Dataset:
    """Load an IDX image/label file pair (the MNIST layout), gzip-compressed or not.

    Pixels are scaled from `0..255` to `[0, 1]` and each image is flattened to one row.

    Raises:
        IdxMagicError: If a file does not start with the expected big-endian magic number.
        TruncatedFileError: If a file is shorter than its header announces.
        TrailingDataError: If a file holds bytes past the items its header announces.
        CountMismatchError: If the label count differs from the image count.
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    (count, rows, cols), pixels = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    (label_count,), raw_labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if label_count != count:
        raise CountMismatchError(str(labels_path), 4, count, label_count)
    if count == 0:
        raise EmptyDatasetError(f'{images_path}: no images')

    inputs = np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    return Dataset(inputs, labels, int(labels.max()) + 1, (0.0, 1.0), name=images_path.name)


def load_csv(path: str | Path, *, label_column_first: bool = True, num_classes: int | None = None) -> Dataset:
    """Load a numeric CSV file, one sample per row, with the label in the first (or last) column.

    The bounds are `(0, 1)` when every feature lies in that range, the extent of the data otherwise.

    Raises:
        EmptyDatasetError: If the file holds no rows.
        CsvFormatError: If the file is not valid UTF-8, the rows are ragged, a cell is not numeric
            or a label is not a non-negative integer. Rows and columns are 1-based in the message.
    """
    path = Path(path)
    content = path.read_bytes()
    try:
        text = content.decode('utf-8')
    except UnicodeDecodeError as e:
        line_start = content.rfind(b'\n', 0, e.start) + 1
        row_number = content.count(b'\n', 0, e.start) + 1
        column_number = content.count(b',', line_start, e.start) + 1
        raise CsvFormatError(
            str(path), row_number, column_number, f'invalid UTF-8 byte 0x{content[e.start]:02x}'
        ) from None

    rows: list[list[float]] = []
    width: int | None = None
    for row_number, row in enumerate(csv.reader(io.StringIO(text, newline='')), start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if width is None:
            width = len(row)
        elif len(row) != width:
            column = min(len(row), width) + 1
            raise CsvFormatError(str(path), row_number, column, f'expected {width} columns, got {len(row)}')
        values: list[float] = []
        for column_number, cell in enumerate(row, start=1):
            try:
                values.append(float(cell))
            except ValueError:
                raise CsvFormatError(str(path), row_number, column_number, f'not a number: {cell!r}') from None
        rows.append(values)
    if not rows:
        raise EmptyDatasetError(f'{path}: no rows')
    if width is not None and width < 2:
        raise CsvFormatError(str(path), 1, 2, 'need a label column and at least one feature column')

    table = np.array(rows, dtype=np.float64)
    label_index = 0 if label_column_first else table.shape[1] - 1
    raw_labels = table[:, label_index]
    bad = np.flatnonzero((raw_labels < 0) | (raw_labels != np.round(raw_labels)))
    if bad.size:
        raise CsvFormatError(str(path), int(bad[0]) + 1, label_index + 1, f'invalid label {raw_labels[bad[0]]!r}')
    labels = raw_labels.astype(np.int64)
    inputs = np.delete(table, label_index, axis=1)

    if inputs.min() >= 0.0 and inputs.max() <= 1.0:
        bounds = (0.0, 1.0)
    else:
        low, high = float(inputs.min()), float(inputs.max())
        bounds = (low, high if high > low else low + 1.0)
    classes = num_classes if num_classes is not None else int(labels.max()) + 1
    return Dataset(inputs, labels, classes, bounds, name=path.name)


def train_test_split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Split `dataset` into seeded, disjoint training and held-out parts."""
    if not 0 < test_fraction < 1:
        raise InvalidParameterError('test_fraction', f'must lie in (0, 1), got {test_fraction!r}')
    n_test = max(1, round(len(dataset) * test_fraction))
    if n_test >= len(dataset):
        raise InvalidParameterError('test_fraction', f'leaves no training sample out of {len(dataset)}')
    order = np.random.default_rng(seed).permutation(len(dataset))
    return (
        dataset.subset(order[n_test:], name=f'{dataset.name}[train]'),
        dataset.subset(order[:n_test], name=f'{dataset.name}[test]'),
    )


class Batch(NamedTuple):
    x: Array
    y: NDArray[np.int64]


def batches(
    dataset: Dataset, batch_size: int, seed: int, *, shuffle: bool = True, epoch: int = 0
) -> Iterator[Batch]:
    """Iterate over `dataset` in batches of `batch_size`, the last one possibly smaller.

    When shuffling, the permutation is drawn from a generator seeded with `(seed, epoch)`, so each
    epoch sees a different but reproducible order.
    """
    if batch_size < 1:
        raise InvalidParameterError('batch_size', f'must be at least 1, got {batch_size}')
    n = len(dataset)
    order = np.random.default_rng([seed, epoch]).permutation(n) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        index = order[start : start + batch_size]
        yield Batch(dataset.inputs[index], dataset.labels[index])
