import hashlib
import struct
from pathlib import Path

import numpy as np
import pytest

from feedback_nn.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    CheckpointMeta,
    load_checkpoint,
    parse_checkpoint,
    save_checkpoint,
    serialize_checkpoint,
)
from feedback_nn.errors import BadMagicError, ChecksumError, ShapeSpecError, VersionMismatchError
from feedback_nn.nn import ControllerInput, FeedbackModel, MlpSpec, ModelParams, build_feedback_model, init_params
from feedback_nn.tensor import Tensor

META = CheckpointMeta(seed=7, epoch=12, config={'train': {'method': 'flat', 'epochs': 12}, 'note': 'ünïcode'})


def _rehash(body: bytes) -> bytes:
    return body + hashlib.sha256(body).digest()


def test_feedback_round_trip_is_byte_identical(tmp_path: Path) -> None:
    model = build_feedback_model(
        MlpSpec((2, 8, 8, 3)), (6, 4), unroll=2, controller_input=ControllerInput.FEATURES, seed=5
    )
    first, second = tmp_path / 'first.ckpt', tmp_path / 'second.ckpt'

    save_checkpoint(model, META, first)
    checkpoint = load_checkpoint(first)
    save_checkpoint(checkpoint.model, checkpoint.meta, second)

    assert first.read_bytes() == second.read_bytes()
    assert checkpoint.kind == 'feedback'
    assert checkpoint.version == FORMAT_VERSION
    assert checkpoint.meta == META


def test_round_trip_rebuilds_an_identical_model(tmp_path: Path, rng: np.random.Generator) -> None:
    model = build_feedback_model(MlpSpec((2, 8, 8, 2)), (8,), unroll=3, seed=1)
    path = tmp_path / 'model.ckpt'
    save_checkpoint(model, CheckpointMeta(), path)

    loaded = load_checkpoint(path).model

    assert isinstance(loaded, FeedbackModel)
    assert (loaded.unroll, loaded.controller_input) == (3, ControllerInput.PREDICTIONS)
    assert loaded.main.spec == model.main.spec
    assert loaded.controller.spec == model.controller.spec
    x = rng.uniform(0, 1, size=(10, 2))
    assert np.array_equal(loaded(Tensor(x)).data, model(Tensor(x)).data)


def test_plain_round_trip(small_mlp: ModelParams) -> None:
    checkpoint = parse_checkpoint(serialize_checkpoint(small_mlp, META))

    assert checkpoint.kind == 'plain'
    assert isinstance(checkpoint.model, ModelParams)
    for name, tensor in small_mlp.named_tensors().items():
        assert np.array_equal(checkpoint.model.named_tensors()[name].data, tensor.data)


def test_layout_starts_with_magic_and_version(small_mlp: ModelParams) -> None:
    content = serialize_checkpoint(small_mlp, META)

    assert content[:8] == MAGIC
    assert struct.unpack('<I', content[8:12]) == (FORMAT_VERSION,)


def test_bad_magic(small_mlp: ModelParams) -> None:
    content = serialize_checkpoint(small_mlp, META)

    with pytest.raises(BadMagicError):
        parse_checkpoint(b'NOTACKPT' + content[8:])


@pytest.mark.parametrize('keep', [4, 12, 100, -1])
def test_truncated_file(small_mlp: ModelParams, keep: int) -> None:
    content = serialize_checkpoint(small_mlp, META)

    with pytest.raises(ChecksumError):
        parse_checkpoint(content[: len(MAGIC) + keep] if keep > 0 else content[:keep])


def test_altered_tensor_data(small_mlp: ModelParams) -> None:
    content = bytearray(serialize_checkpoint(small_mlp, META))
    content[-40] ^= 0xFF

    with pytest.raises(ChecksumError):
        parse_checkpoint(bytes(content))


def test_bumped_version(small_mlp: ModelParams, tmp_path: Path) -> None:
    content = bytearray(serialize_checkpoint(small_mlp, META))
    content[8:12] = struct.pack('<I', FORMAT_VERSION + 1)
    path = tmp_path / 'future.ckpt'
    path.write_bytes(bytes(content))

    with pytest.raises(VersionMismatchError) as exc_info:
        load_checkpoint(path)

    assert (exc_info.value.found, exc_info.value.supported) == (FORMAT_VERSION + 1, FORMAT_VERSION)


def test_architecture_inconsistent_with_tensors() -> None:
    model = init_params(MlpSpec((2, 3, 2)), seed=0)
    body = serialize_checkpoint(model, CheckpointMeta())[: -hashlib.sha256().digest_size]
    altered = body.replace(b'"widths":[2,3,2]', b'"widths":[2,4,2]')
    assert altered != body

    with pytest.raises(ShapeSpecError):
        parse_checkpoint(_rehash(altered))


def test_renamed_tensor() -> None:
    model = init_params(MlpSpec((2, 3, 2)), seed=0)
    body = serialize_checkpoint(model, CheckpointMeta())[: -hashlib.sha256().digest_size]

    with pytest.raises(ShapeSpecError, match='missing tensor'):
        parse_checkpoint(_rehash(body.replace(b'\x02\x00\x00\x00w0', b'\x02\x00\x00\x00x0')))


def test_errors_are_distinct() -> None:
    codes = {error.code for error in (BadMagicError, ChecksumError, ShapeSpecError, VersionMismatchError)}

    assert len(codes) == 4
