from __future__ import annotations

import gzip
import struct
from collections.abc import Callable, Sequence
from pathlib import Path

import numpy as np
import pytest

from feedback_nn.data import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, Dataset, two_moons
from feedback_nn.nn import ControllerInput, FeedbackModel, MlpSpec, ModelParams, build_feedback_model, init_params

IdxFactory = Callable[..., tuple[Path, Path]]


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def blobs() -> Dataset:
    """Two well separated Gaussian blobs in `[0, 1]²`, 200 samples."""
    generator = np.random.default_rng(7)
    centers = np.array([[0.25, 0.25], [0.75, 0.75]])
    labels = np.repeat(np.arange(2, dtype=np.int64), 100)
    inputs = np.clip(centers[labels] + generator.normal(0.0, 0.05, size=(200, 2)), 0.0, 1.0)
    return Dataset(inputs, labels, 2, (0.0, 1.0), name='blobs')


@pytest.fixture
def moons() -> Dataset:
    return two_moons(400, 0.1, seed=3)


@pytest.fixture
def small_mlp() -> ModelParams:
    return init_params(MlpSpec((2, 8, 8, 2)), seed=0)


@pytest.fixture
def small_feedback_model() -> FeedbackModel:
    return build_feedback_model(
        MlpSpec((2, 8, 8, 2)), (8,), unroll=1, controller_input=ControllerInput.PREDICTIONS, seed=0
    )


def _idx_bytes(magic: int, dims: Sequence[int], payload: bytes) -> bytes:
    return struct.pack(f'>{1 + len(dims)}I', magic, *dims) + payload


@pytest.fixture
def idx_files(tmp_path: Path) -> IdxFactory:
    """Write an IDX image/label pair of 28×28 images and return their paths.

    Pixels of image `i` are all equal to `pixels[i]`.
    """

    def write(
        pixels: Sequence[int] = (0, 255, 128, 64),
        labels: Sequence[int] = (0, 1, 2, 3),
        *,
        rows: int = 28,
        cols: int = 28,
        compress: bool = False,
        image_count: int | None = None,
        image_magic: int = IDX_IMAGES_MAGIC,
        truncate: int = 0,
    ) -> tuple[Path, Path]:
        payload = b''.join(bytes([value]) * (rows * cols) for value in pixels)
        count = len(pixels) if image_count is None else image_count
        images = _idx_bytes(image_magic, (count, rows, cols), payload)
        if truncate:
            images = images[:-truncate]
        label_bytes = _idx_bytes(IDX_LABELS_MAGIC, (len(labels),), bytes(labels))
        suffix = '.gz' if compress else ''
        images_path = tmp_path / f'images-idx3-ubyte{suffix}'
        labels_path = tmp_path / f'labels-idx1-ubyte{suffix}'
        if compress:
            images_path.write_bytes(gzip.compress(images))
            labels_path.write_bytes(gzip.compress(label_bytes))
        else:
            images_path.write_bytes(images)
            labels_path.write_bytes(label_bytes)
        return images_path, labels_path

    return write
