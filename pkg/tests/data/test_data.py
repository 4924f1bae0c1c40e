from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest

from feedback_nn.data import IDX_LABELS_MAGIC, Dataset, batches, load_csv, load_idx, train_test_split, two_moons
from feedback_nn.errors import (
    CountMismatchError,
    CsvFormatError,
    EmptyDatasetError,
    IdxMagicError,
    InvalidParameterError,
    TrailingDataError,
    TruncatedFileError,
)

IdxFactory = Callable[..., tuple[Path, Path]]


def test_two_moons_is_balanced_and_in_bounds() -> None:
    dataset = two_moons(200, 0.2, seed=0)

    assert len(dataset) == 200
    assert dataset.dim == 2
    assert dataset.num_classes == 2
    assert np.bincount(dataset.labels).tolist() == [100, 100]
    assert dataset.inputs.min() >= 0.0
    assert dataset.inputs.max() <= 1.0


def test_two_moons_without_noise_lies_on_the_arcs() -> None:
    dataset = two_moons(100, 0.0, seed=1, rescale=False)
    upper = dataset.inputs[dataset.labels == 0]
    lower = dataset.inputs[dataset.labels == 1]

    np.testing.assert_allclose(np.hypot(upper[:, 0], upper[:, 1]), 1.0, atol=1e-12)
    assert upper[:, 1].min() >= -1e-12
    np.testing.assert_allclose(np.hypot(lower[:, 0] - 1.0, lower[:, 1] - 0.5), 1.0, atol=1e-12)
    assert lower[:, 1].max() <= 0.5 + 1e-12


def test_two_moons_is_deterministic() -> None:
    a, b = two_moons(60, 0.1, seed=5), two_moons(60, 0.1, seed=5)

    assert np.array_equal(a.inputs, b.inputs)
    assert np.array_equal(a.labels, b.labels)


@pytest.mark.parametrize(['n', 'noise'], [(7, 0.1), (0, 0.1), (10, -0.1)])
def test_two_moons_invalid(n: int, noise: float) -> None:
    with pytest.raises(InvalidParameterError):
        two_moons(n, noise, seed=0)


def test_dataset_rejects_out_of_range_labels() -> None:
    with pytest.raises(InvalidParameterError, match='labels'):
        Dataset(np.zeros((2, 2)), np.array([0, 2]), 2)


def test_dataset_rejects_out_of_bounds_inputs() -> None:
    with pytest.raises(InvalidParameterError, match='inputs'):
        Dataset(np.full((2, 2), 1.5), np.array([0, 1]), 2)


def test_dataset_rejects_empty_inputs() -> None:
    with pytest.raises(EmptyDatasetError):
        Dataset(np.zeros((0, 2)), np.zeros(0, dtype=np.int64), 2)


@pytest.mark.parametrize('compress', [False, True])
def test_load_idx(idx_files: IdxFactory, compress: bool) -> None:
    dataset = load_idx(*idx_files(compress=compress))

    assert dataset.inputs.shape == (4, 784)
    assert dataset.labels.tolist() == [0, 1, 2, 3]
    assert dataset.num_classes == 4
    assert np.all(dataset.inputs[0] == 0.0)
    assert np.all(dataset.inputs[1] == 1.0)
    assert dataset.inputs[2, 0] == pytest.approx(128 / 255)


def test_load_idx_count_mismatch(idx_files: IdxFactory) -> None:
    with pytest.raises(CountMismatchError):
        load_idx(*idx_files(pixels=(0, 1, 2), labels=(0, 1)))


def test_load_idx_bad_magic(idx_files: IdxFactory) -> None:
    with pytest.raises(IdxMagicError, match='0x00000801') as exc_info:
        load_idx(*idx_files(image_magic=IDX_LABELS_MAGIC))

    assert exc_info.value.offset == 0


def test_load_idx_truncated(idx_files: IdxFactory) -> None:
    with pytest.raises(TruncatedFileError):
        load_idx(*idx_files(truncate=10))


def test_load_idx_header_count_beyond_data(idx_files: IdxFactory) -> None:
    with pytest.raises(TruncatedFileError):
        load_idx(*idx_files(image_count=5, labels=(0, 1, 2, 3, 4)))


def test_load_idx_rejects_trailing_data(idx_files: IdxFactory) -> None:
    with pytest.raises(TrailingDataError) as exc_info:
        load_idx(*idx_files(image_count=3, labels=(0, 1, 2)))

    assert exc_info.value.extra == 784
    assert exc_info.value.offset == 16 + 3 * 784
    assert exc_info.value.code == 'E_TRAILING'


def test_load_csv_label_first(tmp_path: Path) -> None:
    path = tmp_path / 'one.csv'
    path.write_text('1,0.5,0.25\n')

    dataset = load_csv(path, num_classes=2)

    assert dataset.labels.tolist() == [1]
    assert dataset.inputs.tolist() == [[0.5, 0.25]]
    assert dataset.bounds == (0.0, 1.0)


def test_load_csv_label_last(tmp_path: Path) -> None:
    path = tmp_path / 'three.csv'
    path.write_text('0.1,0.2,0\n0.3,0.4,1\n\n0.5,0.6,2\n')

    dataset = load_csv(path, label_column_first=False)

    assert len(dataset) == 3
    assert dataset.labels.tolist() == [0, 1, 2]
    assert dataset.num_classes == 3


def test_load_csv_wide_range_bounds(tmp_path: Path) -> None:
    path = tmp_path / 'wide.csv'
    path.write_text('0,-2,3\n1,4,0.5\n')

    assert load_csv(path).bounds == (-2.0, 4.0)


def test_load_csv_empty(tmp_path: Path) -> None:
    path = tmp_path / 'empty.csv'
    path.write_text('')

    with pytest.raises(EmptyDatasetError):
        load_csv(path)


@pytest.mark.parametrize(
    ['content', 'row', 'column'],
    [
        ('0,0.1,0.2\n1,0.3\n', 2, 3),
        ('0,0.1,0.2\n1,x,0.3\n', 2, 2),
        ('0.5,0.1,0.2\n', 1, 1),
        ('-1,0.1,0.2\n', 1, 1),
    ],
)
def test_load_csv_format_errors(tmp_path: Path, content: str, row: int, column: int) -> None:
    path = tmp_path / 'bad.csv'
    path.write_text(content)

    with pytest.raises(CsvFormatError) as exc_info:
        load_csv(path)

    assert (exc_info.value.row, exc_info.value.column) == (row, column)
    assert exc_info.value.code == 'E_CSV'


def test_load_csv_rejects_invalid_utf8(tmp_path: Path) -> None:
    path = tmp_path / 'latin.csv'
    path.write_bytes(b'0,0.1,0.2\n1,\xff\xfe,0.1\n')

    with pytest.raises(CsvFormatError, match='invalid UTF-8 byte 0xff') as exc_info:
        load_csv(path)

    assert (exc_info.value.row, exc_info.value.column) == (2, 2)


def test_train_test_split_is_disjoint_and_seeded(moons: Dataset) -> None:
    train, test = train_test_split(moons, 0.25, seed=3)
    train_again, _ = train_test_split(moons, 0.25, seed=3)

    assert (len(train), len(test)) == (300, 100)
    assert np.array_equal(train.inputs, train_again.inputs)
    rows = {tuple(row) for row in train.inputs}
    assert not any(tuple(row) in rows for row in test.inputs)


@pytest.mark.parametrize('fraction', [0.0, 1.0, 1.5])
def test_train_test_split_invalid(moons: Dataset, fraction: float) -> None:
    with pytest.raises(InvalidParameterError):
        train_test_split(moons, fraction, seed=0)


def _ten() -> Dataset:
    return Dataset(np.linspace(0, 1, 20).reshape(10, 2), np.arange(10) % 2, 2)


def test_batches_sizes() -> None:
    assert [len(batch.y) for batch in batches(_ten(), 4, seed=0)] == [4, 4, 2]


def test_batches_without_shuffle_keep_order() -> None:
    dataset = _ten()

    x = np.concatenate([batch.x for batch in batches(dataset, 3, seed=0, shuffle=False)])

    assert np.array_equal(x, dataset.inputs)


def test_batches_cover_every_sample_once(moons: Dataset) -> None:
    x = np.concatenate([batch.x for batch in batches(moons, 64, seed=1, epoch=2)])

    assert sorted(map(tuple, x)) == sorted(map(tuple, moons.inputs))


def test_batches_depend_on_the_epoch(moons: Dataset) -> None:
    first = next(iter(batches(moons, 32, seed=0, epoch=1))).x
    again = next(iter(batches(moons, 32, seed=0, epoch=1))).x
    other = next(iter(batches(moons, 32, seed=0, epoch=2))).x

    assert np.array_equal(first, again)
    assert not np.array_equal(first, other)


def test_batches_reject_empty_batch_size(moons: Dataset) -> None:
    with pytest.raises(InvalidParameterError):
        next(iter(batches(moons, 0, seed=0)))
