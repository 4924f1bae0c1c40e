"""Versioned binary checkpoints of plain classifiers and feedback models.

Layout (all integers little-endian unsigned 32-bit):

```
magic      8 bytes   b'FLATCKPT'
version    u32
metadata   u32 length, then UTF-8 JSON (sorted keys)
count      u32 number of tensors
tensors    per tensor: u32 name length, UTF-8 name, u32 ndim, ndim × u32 dims,
           product(dims) × float64 little-endian
checksum   32 bytes  SHA-256 of everything above
```

Saving, loading and saving again produces a byte-identical file.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np
from typing_extensions import TypeAlias

from .errors import BadMagicError, ChecksumError, ShapeSpecError, VersionMismatchError
from .nn import ControllerInput, FeedbackModel, MlpSpec, ModelParams
from .tensor import Tensor

__all__ = (
    'FORMAT_VERSION',
    'MAGIC',
    'Checkpoint',
    'CheckpointMeta',
    'ModelKind',
    'load_checkpoint',
    'parse_checkpoint',
    'save_checkpoint',
    'serialize_checkpoint',
)

MAGIC = b'FLATCKPT'
FORMAT_VERSION = 1
"""The only format version this release reads and writes."""

ModelKind: TypeAlias = Literal['plain', 'feedback']

_U32 = struct.Struct('<I')
_DIGEST_SIZE = hashlib.sha256().digest_size


@dataclass(frozen=True)
class CheckpointMeta:
    """Provenance stored next to the parameters."""

    seed: int = 0
    """The training seed."""

    epoch: int = 0
    """The number of completed epochs."""

    config: Mapping[str, Any] = field(default_factory=dict)
    """An echo of the run configuration, JSON compatible."""


@dataclass(frozen=True)
class Checkpoint:
    """A loaded checkpoint."""

    model: ModelParams | FeedbackModel
    meta: CheckpointMeta
    version: int = FORMAT_VERSION

    @property
    def kind(self) -> ModelKind:
        return 'feedback' if isinstance(self.model, FeedbackModel) else 'plain'


def _spec_dict(spec: MlpSpec) -> dict[str, Any]:
    return {'widths': list(spec.widths), 'activation': spec.activation}


def _architecture(model: ModelParams | FeedbackModel) -> dict[str, Any]:
    if isinstance(model, FeedbackModel):
        return {
            'kind': 'feedback',
            'main': _spec_dict(model.main.spec),
            'controller': _spec_dict(model.controller.spec),
            'controller_input': model.controller_input.value,
            'unroll': model.unroll,
        }
    return {'kind': 'plain', 'main': _spec_dict(model.spec)}


def serialize_checkpoint(model: ModelParams | FeedbackModel, meta: CheckpointMeta) -> bytes:
    """Return the checkpoint file content for `model`."""
    metadata = {
        'architecture': _architecture(model),
        'seed': meta.seed,
        'epoch': meta.epoch,
        'config': dict(meta.config),
    }
    encoded = json.dumps(metadata, sort_keys=True, separators=(',', ':')).encode()
    tensors = model.named_tensors()

    parts = [MAGIC, _U32.pack(FORMAT_VERSION), _U32.pack(len(encoded)), encoded, _U32.pack(len(tensors))]
    for name, tensor in tensors.items():
        raw_name = name.encode()
        parts.append(_U32.pack(len(raw_name)))
        parts.append(raw_name)
        parts.append(_U32.pack(tensor.data.ndim))
        parts.extend(_U32.pack(dim) for dim in tensor.shape)
        parts.append(tensor.data.astype('<f8').tobytes())
    body = b''.join(parts)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(model: ModelParams | FeedbackModel, meta: CheckpointMeta, path: str | Path) -> None:
    Path(path).write_bytes(serialize_checkpoint(model, meta))


class _Reader:
    def __init__(self, body: bytes) -> None:
        self.body = body
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.body):
            raise ShapeSpecError(f'unexpected end of data at offset {self.offset}')
        chunk = self.body[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def _spec_from(data: Any, what: str) -> MlpSpec:
    try:
        return MlpSpec(tuple(int(w) for w in data['widths']), data['activation'])
    except (KeyError, TypeError, ValueError) as e:
        raise ShapeSpecError(f'invalid {what} architecture: {e}') from None


def _params_from(spec: MlpSpec, tensors: dict[str, Tensor], prefix: str) -> ModelParams:
    layers = len(spec.widths) - 1
    try:
        weights = tuple(tensors.pop(f'{prefix}w{i}') for i in range(layers))
        biases = tuple(tensors.pop(f'{prefix}b{i}') for i in range(layers))
    except KeyError as e:
        raise ShapeSpecError(f'missing tensor {e.args[0]!r}') from None
    try:
        return ModelParams(spec, weights, biases)
    except ValueError as e:
        raise ShapeSpecError(f'tensors do not match the {prefix.rstrip(".") or "main"} architecture: {e}') from None


def parse_checkpoint(content: bytes, *, source: str = '<bytes>') -> Checkpoint:
    """Decode checkpoint file content.

    The magic string is checked first, then the format version, then the checksum.

    Raises:
        BadMagicError: If `content` does not start with the checkpoint magic string.
        VersionMismatchError: If the format version is not supported.
        ChecksumError: If the content is truncated or altered.
        ShapeSpecError: If the stored tensors do not match the stored architecture.
    """
    if content[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f'{source}: not a checkpoint file')
    header = len(MAGIC) + _U32.size
    if len(content) < header:
        raise ChecksumError(f'{source}: truncated checkpoint ({len(content)} bytes)')
    (version,) = _U32.unpack_from(content, len(MAGIC))
    if version != FORMAT_VERSION:
        raise VersionMismatchError(version, FORMAT_VERSION)
    body, digest = content[:-_DIGEST_SIZE], content[-_DIGEST_SIZE:]
    if len(content) < header + _DIGEST_SIZE or hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f'{source}: checksum mismatch, the file is corrupt or truncated')

    reader = _Reader(body)
    reader.offset = header
    try:
        metadata = json.loads(reader.take(reader.u32()).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ShapeSpecError(f'{source}: invalid metadata: {e}') from None

    tensors: dict[str, Tensor] = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode()
        shape = tuple(reader.u32() for _ in range(reader.u32()))
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(reader.take(8 * count), dtype='<f8').astype(np.float64).reshape(shape)
        tensors[name] = Tensor(data)
    if reader.offset != len(body):
        raise ShapeSpecError(f'{source}: {len(body) - reader.offset} unexpected trailing bytes')

    architecture = metadata.get('architecture', {})
    kind = architecture.get('kind')
    main_spec = _spec_from(architecture.get('main'), 'main')
    model: ModelParams | FeedbackModel
    if kind == 'plain':
        model = _params_from(main_spec, tensors, '')
    elif kind == 'feedback':
        controller_spec = _spec_from(architecture.get('controller'), 'controller')
        main = _params_from(main_spec, tensors, 'main.')
        controller = _params_from(controller_spec, tensors, 'controller.')
        try:
            model = FeedbackModel(
                main, controller, int(architecture['unroll']), ControllerInput(architecture['controller_input'])
            )
        except (KeyError, ValueError) as e:
            raise ShapeSpecError(f'{source}: invalid feedback architecture: {e}') from None
    else:
        raise ShapeSpecError(f'{source}: unknown model kind {kind!r}')
    if tensors:
        raise ShapeSpecError(f'{source}: unexpected tensors {sorted(tensors)}')

    meta = CheckpointMeta(int(metadata.get('seed', 0)), int(metadata.get('epoch', 0)), metadata.get('config', {}))
    return Checkpoint(model, meta, version)


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Read and decode the checkpoint file at `path`.

    See [`parse_checkpoint()`][feedback_nn.checkpoint.parse_checkpoint] for the errors raised.
    """
    path = Path(path)
    return parse_checkpoint(path.read_bytes(), source=str(path))
