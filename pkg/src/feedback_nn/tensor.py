"""Dense float64 tensors with reverse-mode automatic differentiation.

Differentiation is driven by an explicit [`GradientRecord`][feedback_nn.tensor.GradientRecord], built
fresh for every forward pass:

```python
record = GradientRecord()
x = record.leaf([[1.0, 2.0]])
loss = softmax_cross_entropy(x @ weights, labels=[0])
gradients = backward(record, loss)
gradients.of(x)
```

Tensors that are not registered on a record (constants) take part in computations without being
tracked. Operations mixing tensors of two different records raise a
[`RecordError`][feedback_nn.errors.RecordError].
"""

from __future__ import annotations

from collections.abc import Callable, Iterator, Mapping, Sequence
from typing import Literal, NamedTuple, SupportsFloat

import numpy as np
from numpy.typing import ArrayLike, NDArray
from typing_extensions import TypeAlias, assert_never

from .errors import InvalidParameterError, LabelError, RecordError, ShapeError

__all__ = (
    'Array',
    'GradientRecord',
    'Gradients',
    'RecordedOp',
    'Tensor',
    'add',
    'backward',
    'concat',
    'dot',
    'elementwise',
    'finite_diff_gradient',
    'matmul',
    'mul',
    'relu',
    'softmax_cross_entropy',
    'sub',
    'sum_all',
)

Array: TypeAlias = NDArray[np.float64]
"""A float64 numpy array."""

_Backward: TypeAlias = Callable[[Array], Sequence[Array]]

ElementwiseOp: TypeAlias = Literal['add', 'sub', 'mul']


class Tensor:
    """A dense float64 array, optionally registered on a gradient record.

    The underlying array is not copied: binding parameters to a record (see
    [`GradientRecord.leaf()`][feedback_nn.tensor.GradientRecord.leaf]) shares storage with the
    unbound tensor, so in-place parameter updates are visible through both.
    """

    __slots__ = ('data', 'node_id', 'record')

    data: Array
    """The values, in row-major order."""

    node_id: int | None
    """The handle of this tensor in its record, `None` for constants."""

    record: GradientRecord | None
    """The record this tensor is registered on, `None` for constants."""

    def __init__(
        self, data: ArrayLike, /, *, record: GradientRecord | None = None, node_id: int | None = None
    ) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.record = record
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        """Return the value of a single-element tensor."""
        if self.data.size != 1:
            raise ShapeError('item', self.shape)
        return float(self.data.reshape(()))

    def __float__(self) -> float:
        return self.item()

    def detach(self) -> Tensor:
        """Return a constant tensor sharing this tensor's storage."""
        return Tensor(self.data)

    def __repr__(self) -> str:
        tracked = f', node_id={self.node_id}' if self.node_id is not None else ''
        return f'Tensor(shape={self.shape}{tracked})'

    def __add__(self, other: Tensor | SupportsFloat) -> Tensor:
        return elementwise(self, _as_tensor(other), 'add')

    def __radd__(self, other: SupportsFloat) -> Tensor:
        return elementwise(_as_tensor(other), self, 'add')

    def __sub__(self, other: Tensor | SupportsFloat) -> Tensor:
        return elementwise(self, _as_tensor(other), 'sub')

    def __rsub__(self, other: SupportsFloat) -> Tensor:
        return elementwise(_as_tensor(other), self, 'sub')

    def __mul__(self, other: Tensor | SupportsFloat) -> Tensor:
        return elementwise(self, _as_tensor(other), 'mul')

    def __rmul__(self, other: SupportsFloat) -> Tensor:
        return elementwise(_as_tensor(other), self, 'mul')

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)


class RecordedOp(NamedTuple):
    """A primitive operation, as stored in a [`GradientRecord`][feedback_nn.tensor.GradientRecord]."""

    name: str
    """The primitive name (`'leaf'` for registered inputs)."""

    inputs: tuple[int | None, ...]
    """The node ids of the operands, `None` for untracked constants."""


class GradientRecord:
    """The ordered list of primitive operations applied during one forward pass.

    Node ids are positions in the record, so every operation's inputs precede it.
    """

    def __init__(self) -> None:
        self._ops: list[RecordedOp] = []
        self._backwards: list[_Backward | None] = []
        self.adjoints: dict[int, Array] = {}
        """Accumulated adjoints by node id, filled by [`backward()`][feedback_nn.tensor.backward]."""

    @property
    def operations(self) -> tuple[RecordedOp, ...]:
        return tuple(self._ops)

    def __len__(self) -> int:
        return len(self._ops)

    def leaf(self, value: Tensor | ArrayLike, /) -> Tensor:
        """Register `value` as a leaf (a parameter or an input) and return the tracked tensor.

        The returned tensor shares storage with `value` when it is already a float64 array.
        """
        if isinstance(value, Tensor):
            if value.record is not None:
                raise RecordError('tensor is already registered on a record')
            data = value.data
        else:
            data = np.asarray(value, dtype=np.float64)
        node_id = self._push('leaf', (), None)
        return Tensor(data, record=self, node_id=node_id)

    def _push(self, name: str, inputs: tuple[int | None, ...], backward_fn: _Backward | None) -> int:
        self._ops.append(RecordedOp(name, inputs))
        self._backwards.append(backward_fn)
        return len(self._ops) - 1


class Gradients(Mapping[int, Array]):
    """Adjoints computed by [`backward()`][feedback_nn.tensor.backward], keyed by node id."""

    def __init__(self, record: GradientRecord, adjoints: dict[int, Array], /) -> None:
        self._record = record
        self._adjoints = adjoints

    def __getitem__(self, node_id: int, /) -> Array:
        return self._adjoints[node_id]

    def __iter__(self) -> Iterator[int]:
        return iter(self._adjoints)

    def __len__(self) -> int:
        return len(self._adjoints)

    def of(self, tensor: Tensor, /) -> Array:
        """Return the adjoint of `tensor`, zeros if the output does not depend on it."""
        if tensor.record is not self._record or tensor.node_id is None:
            raise RecordError('tensor is not on the differentiated record')
        adjoint = self._adjoints.get(tensor.node_id)
        if adjoint is None:
            return np.zeros_like(tensor.data)
        return adjoint


def backward(record: GradientRecord, output: Tensor, /) -> Gradients:
    """Propagate adjoints from a scalar `output` back to every node of `record`.

    The adjoint of `output` is seeded with one; each recorded operation is visited exactly once, in
    reverse order.

    Raises:
        RecordError: If `output` is not a scalar or is not on `record`.
    """
    if output.record is not record or output.node_id is None:
        raise RecordError('output is not on the record')
    if output.size != 1:
        raise RecordError(f'output must be a scalar, got shape {output.shape}')

    adjoints: dict[int, Array] = {output.node_id: np.ones_like(output.data)}
    ops = record._ops  # pyright: ignore[reportPrivateUsage]
    backwards = record._backwards  # pyright: ignore[reportPrivateUsage]
    for node_id in range(output.node_id, -1, -1):
        adjoint = adjoints.get(node_id)
        backward_fn = backwards[node_id]
        if adjoint is None or backward_fn is None:
            continue
        for input_id, grad in zip(ops[node_id].inputs, backward_fn(adjoint)):
            if input_id is None:
                continue
            previous = adjoints.get(input_id)
            adjoints[input_id] = grad if previous is None else previous + grad

    record.adjoints = adjoints
    return Gradients(record, adjoints)


def _as_tensor(value: Tensor | SupportsFloat) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(float(value))


def _record_of(*tensors: Tensor) -> GradientRecord | None:
    record: GradientRecord | None = None
    for tensor in tensors:
        if tensor.record is None:
            continue
        if record is not None and tensor.record is not record:
            raise RecordError('operands belong to different gradient records')
        record = tensor.record
    return record


def _emit(name: str, data: Array, inputs: tuple[Tensor, ...], backward_fn: _Backward) -> Tensor:
    record = _record_of(*inputs)
    if record is None:
        return Tensor(data)
    node_id = record._push(name, tuple(t.node_id for t in inputs), backward_fn)  # pyright: ignore[reportPrivateUsage]
    return Tensor(data, record=record, node_id=node_id)


def _reduce_to(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum `grad` over broadcast dimensions so that it matches `shape`."""
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    return grad.sum(axis=0)


def matmul(a: Tensor, b: Tensor, /) -> Tensor:
    """Matrix product of an `m×k` and a `k×n` tensor.

    Raises:
        ShapeError: If the operands are not matrices with agreeing inner dimensions.
    """
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError('matmul', a.shape, b.shape)
    a_data, b_data = a.data, b.data

    def backward_fn(grad: Array) -> tuple[Array, Array]:
        return grad @ b_data.T, a_data.T @ grad

    return _emit('matmul', a_data @ b_data, (a, b), backward_fn)


def _broadcastable(a: tuple[int, ...], b: tuple[int, ...]) -> bool:
    if a == b or a == () or b == ():
        return True
    # bias vector of length n broadcast over the rows of an m×n tensor:
    return (len(a) == 2 and b == (a[1],)) or (len(b) == 2 and a == (b[1],))


def elementwise(a: Tensor, b: Tensor, op: ElementwiseOp, /) -> Tensor:
    """Apply `op` elementwise.

    Operands must have identical shapes, except that a scalar broadcasts over any tensor and a
    length-`n` vector broadcasts over the rows of an `m×n` tensor.
    """
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(op, a.shape, b.shape)
    a_data, b_data = a.data, b.data
    a_shape, b_shape = a.shape, b.shape

    if op == 'add':
        out = a_data + b_data

        def backward_fn(grad: Array) -> tuple[Array, Array]:
            return _reduce_to(grad, a_shape), _reduce_to(grad, b_shape)

    elif op == 'sub':
        out = a_data - b_data

        def backward_fn(grad: Array) -> tuple[Array, Array]:
            return _reduce_to(grad, a_shape), _reduce_to(-grad, b_shape)

    elif op == 'mul':
        out = a_data * b_data

        def backward_fn(grad: Array) -> tuple[Array, Array]:
            return _reduce_to(grad * b_data, a_shape), _reduce_to(grad * a_data, b_shape)

    else:  # pragma: no cover
        assert_never(op)

    return _emit(op, out, (a, b), backward_fn)


def add(a: Tensor, b: Tensor, /) -> Tensor:
    return elementwise(a, b, 'add')


def sub(a: Tensor, b: Tensor, /) -> Tensor:
    return elementwise(a, b, 'sub')


def mul(a: Tensor, b: Tensor, /) -> Tensor:
    return elementwise(a, b, 'mul')


def relu(a: Tensor, /) -> Tensor:
    """Elementwise `max(0, a)`. The subgradient at zero is zero."""
    mask = a.data > 0

    def backward_fn(grad: Array) -> tuple[Array]:
        return (grad * mask,)

    return _emit('relu', np.where(mask, a.data, 0.0), (a,), backward_fn)


def concat(tensors: Sequence[Tensor], /, *, axis: int = 1) -> Tensor:
    """Concatenate matrices along `axis`."""
    if not tensors:
        raise ShapeError('concat')
    shapes = [t.shape for t in tensors]
    if any(len(s) != 2 for s in shapes) or len({s[1 - axis] for s in shapes}) != 1:
        raise ShapeError('concat', *shapes)
    splits = np.cumsum([s[axis] for s in shapes])[:-1]

    def backward_fn(grad: Array) -> list[Array]:
        return np.split(grad, splits, axis=axis)

    return _emit('concat', np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward_fn)


def sum_all(a: Tensor, /) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    shape = a.shape

    def backward_fn(grad: Array) -> tuple[Array]:
        return (np.full(shape, float(grad)),)

    return _emit('sum', np.asarray(a.data.sum()), (a,), backward_fn)


def dot(a: Tensor, b: Tensor, /) -> Tensor:
    """Sum of the elementwise product of two equally shaped tensors, as a scalar tensor."""
    if a.shape != b.shape:
        raise ShapeError('dot', a.shape, b.shape)
    a_data, b_data = a.data, b.data

    def backward_fn(grad: Array) -> tuple[Array, Array]:
        return float(grad) * b_data, float(grad) * a_data

    return _emit('dot', np.asarray(np.vdot(a_data, b_data)), (a, b), backward_fn)


def _check_labels(labels: ArrayLike, batch: int, num_classes: int) -> NDArray[np.int64]:
    array = np.asarray(labels)
    if array.shape != (batch,):
        raise ShapeError('softmax_cross_entropy labels', array.shape, (batch,))
    as_int = array.astype(np.int64)
    if not np.array_equal(as_int, array):
        raise LabelError(int(array[np.flatnonzero(as_int != array)[0]]), num_classes)
    out_of_range = np.flatnonzero((as_int < 0) | (as_int >= num_classes))
    if out_of_range.size:
        raise LabelError(int(as_int[out_of_range[0]]), num_classes)
    return as_int


def softmax_cross_entropy(logits: Tensor, labels: ArrayLike, /) -> Tensor:
    """Mean over the batch of `-log softmax(logits)[label]`.

    Logits are shifted by their row maximum before exponentiation, so large logits do not overflow.

    Args:
        logits: A `batch×C` tensor.
        labels: `batch` class indices in `[0, C)`.

    Raises:
        ShapeError: If `logits` is not a non-empty matrix or `labels` does not match its batch size.
        LabelError: If a label is outside of `[0, C)`.
    """
    if logits.data.ndim != 2 or logits.shape[0] < 1:
        raise ShapeError('softmax_cross_entropy', logits.shape)
    batch, num_classes = logits.shape
    targets = _check_labels(labels, batch, num_classes)
    rows = np.arange(batch)

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    sums = exp.sum(axis=1)
    loss = np.mean(np.log(sums) - shifted[rows, targets])

    def backward_fn(grad: Array) -> tuple[Array]:
        probs = exp / sums[:, None]
        probs[rows, targets] -= 1.0
        return (probs * (float(grad) / batch),)

    return _emit('softmax_cross_entropy', np.asarray(loss), (logits,), backward_fn)


def finite_diff_gradient(
    f: Callable[[Tensor], Tensor | SupportsFloat], x: Tensor | ArrayLike, /, h: float = 1e-6
) -> Array:
    """Central finite-difference gradient of the scalar function `f` at `x`.

    Each coordinate is `(f(x + h·eᵢ) - f(x - h·eᵢ)) / (2h)`; `f` receives untracked tensors.
    """
    if not h > 0:
        raise InvalidParameterError('h', f'step must be positive, got {h!r}')
    base = (x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)).copy()
    grad = np.zeros_like(base)
    for index in range(base.size):
        original = base.flat[index]
        base.flat[index] = original + h
        forward = float(f(Tensor(base.copy())))
        base.flat[index] = original - h
        backward_value = float(f(Tensor(base.copy())))
        base.flat[index] = original
        grad.flat[index] = (forward - backward_value) / (2 * h)
    return grad
