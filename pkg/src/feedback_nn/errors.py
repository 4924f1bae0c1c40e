"""Exceptions raised by `feedback-nn`.

Every exception derives from [`FeedbackNNError`][feedback_nn.errors.FeedbackNNError] and carries a
short machine-readable [`code`][feedback_nn.errors.FeedbackNNError.code], used by the command line
interface to print greppable one-line errors.
"""

from __future__ import annotations

from collections.abc import Sequence
from typing import ClassVar

__all__ = (
    'BadMagicError',
    'ChecksumError',
    'ConfigError',
    'CountMismatchError',
    'CsvFormatError',
    'EmptyDatasetError',
    'FeedbackNNError',
    'IdxMagicError',
    'InvalidParameterError',
    'LabelError',
    'NonFiniteError',
    'PoleError',
    'RecordError',
    'ShapeError',
    'ShapeSpecError',
    'SingularSystemError',
    'TrailingDataError',
    'TruncatedFileError',
    'UnknownAttackError',
    'VersionMismatchError',
)


class FeedbackNNError(Exception):
    """Base class of all the errors raised by this package."""

    code: ClassVar[str] = 'E_GENERIC'
    """A short identifier of the error kind, stable across releases."""


class InvalidParameterError(FeedbackNNError, ValueError):
    """A parameter is outside of its valid range."""

    code = 'E_PARAM'

    name: str
    """The name of the offending parameter."""

    def __init__(self, name: str, message: str, /) -> None:
        self.name = name
        super().__init__(f'{name}: {message}')


class ShapeError(FeedbackNNError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""

    code = 'E_SHAPE'

    shapes: tuple[tuple[int, ...], ...]
    """The shapes involved in the operation."""

    def __init__(self, operation: str, *shapes: tuple[int, ...]) -> None:
        self.shapes = shapes
        rendered = ' and '.join(str(s) for s in shapes)
        super().__init__(f'{operation}: incompatible shapes {rendered}')


class RecordError(FeedbackNNError):
    """A gradient record was used incorrectly (non-scalar output, foreign tensor, mixed records)."""

    code = 'E_RECORD'


class LabelError(FeedbackNNError, ValueError):
    """A class label is outside of `[0, C)`."""

    code = 'E_LABEL'

    def __init__(self, label: int, num_classes: int, /) -> None:
        self.label = label
        self.num_classes = num_classes
        super().__init__(f'label {label} outside of [0, {num_classes})')


class SingularSystemError(FeedbackNNError, ArithmeticError):
    """The closed loop matrix `I - A K` is singular or too ill-conditioned to be solved."""

    code = 'E_SINGULAR'

    gain_ratio: float
    """The ratio `κ / ε` of the controller gain to the dominant eigenvalue reciprocal."""

    condition: float
    """The estimated 1-norm condition number."""

    def __init__(self, gain_ratio: float, condition: float, /) -> None:
        self.gain_ratio = gain_ratio
        self.condition = condition
        super().__init__(f'closed loop is singular (kappa/epsilon={gain_ratio!r}, condition estimate {condition:.3e})')


class PoleError(FeedbackNNError, ZeroDivisionError):
    """The exact feedback gain is evaluated at its pole `κ = ε`."""

    code = 'E_POLE'

    def __init__(self, epsilon: float, kappa: float, /) -> None:
        self.epsilon = epsilon
        self.kappa = kappa
        super().__init__(f'gain has a pole at kappa == epsilon ({kappa!r})')


class NonFiniteError(FeedbackNNError, FloatingPointError):
    """A loss or gradient became NaN or infinite during training."""

    code = 'E_NONFINITE'

    def __init__(self, what: str, /, *, epoch: int, batch: int) -> None:
        self.what = what
        self.epoch = epoch
        self.batch = batch
        super().__init__(f'non-finite {what} at epoch {epoch}, batch {batch}')


class EmptyDatasetError(FeedbackNNError, ValueError):
    """A dataset source produced no samples."""

    code = 'E_EMPTY'


class IdxMagicError(FeedbackNNError, ValueError):
    """An IDX file does not start with the expected magic number."""

    code = 'E_IDX_MAGIC'

    def __init__(self, path: str, offset: int, expected: int, found: int, /) -> None:
        self.path = path
        self.offset = offset
        super().__init__(f'{path}: bad magic number 0x{found:08x} at offset {offset}, expected 0x{expected:08x}')


class TruncatedFileError(FeedbackNNError, ValueError):
    """A binary file ends before its header announced."""

    code = 'E_TRUNCATED'

    def __init__(self, path: str, offset: int, needed: int, /) -> None:
        self.path = path
        self.offset = offset
        super().__init__(f'{path}: truncated at offset {offset}, {needed} more bytes expected')


class TrailingDataError(FeedbackNNError, ValueError):
    """A binary file holds bytes past the items its header announced."""

    code = 'E_TRAILING'

    def __init__(self, path: str, offset: int, extra: int, /) -> None:
        self.path = path
        self.offset = offset
        self.extra = extra
        super().__init__(f'{path}: {extra} unexpected trailing bytes at offset {offset}')


class CountMismatchError(FeedbackNNError, ValueError):
    """The image and label files of an IDX pair do not hold the same number of items."""

    code = 'E_COUNT'

    def __init__(self, path: str, offset: int, images: int, labels: int, /) -> None:
        self.path = path
        self.offset = offset
        super().__init__(f'{path}: {labels} labels at offset {offset} do not match {images} images')


class CsvFormatError(FeedbackNNError, ValueError):
    """A CSV file is ragged or holds a non-numeric cell."""

    code = 'E_CSV'

    def __init__(self, path: str, row: int, column: int, message: str, /) -> None:
        self.path = path
        self.row = row
        self.column = column
        super().__init__(f'{path}: row {row}, column {column}: {message}')


class ConfigError(FeedbackNNError, ValueError):
    """A run configuration file is malformed."""

    code = 'E_CONFIG'

    def __init__(self, path: str, line: int | None, message: str, /) -> None:
        self.path = path
        self.line = line
        where = f'{path}:{line}' if line is not None else path
        super().__init__(f'{where}: {message}')


class UnknownAttackError(FeedbackNNError, ValueError):
    """An attack name is not recognized."""

    code = 'E_ATTACK'

    def __init__(self, name: str, valid: Sequence[str], /) -> None:
        self.name = name
        self.valid = tuple(valid)
        super().__init__(f'unknown attack {name!r}; valid names: {", ".join(self.valid)}')


class BadMagicError(FeedbackNNError, ValueError):
    """A checkpoint file does not start with the checkpoint magic string."""

    code = 'E_CKPT_MAGIC'


class VersionMismatchError(FeedbackNNError, ValueError):
    """A checkpoint was written with an unsupported format version."""

    code = 'E_CKPT_VERSION'

    def __init__(self, found: int, supported: int, /) -> None:
        self.found = found
        self.supported = supported
        super().__init__(f'checkpoint format version {found} is not supported (expected {supported})')


class ChecksumError(FeedbackNNError, ValueError):
    """A checkpoint file is corrupt or truncated."""

    code = 'E_CKPT_CHECKSUM'


class ShapeSpecError(FeedbackNNError, ValueError):
    """The tensors stored in a checkpoint are inconsistent with its architecture description."""

    code = 'E_CKPT_SHAPE'
