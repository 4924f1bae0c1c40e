"""Fully connected classifiers and feedback neural networks.

A feedback network wraps a main classifier `f` with a controller network `g` that maps the
classifier's output (optionally together with its last hidden features) to a correction in input
space. The correction is subtracted from the input and the classifier is evaluated again:

```
x₀ = x
xₖ₊₁ = xₖ - g(f(xₖ))        for k = 0 .. P-1
logits = f(x_P)
```
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum
from typing import Literal, NamedTuple, Protocol

import numpy as np
from typing_extensions import Self, TypeAlias, assert_never

from .errors import InvalidParameterError, ShapeError
from .tensor import GradientRecord, Tensor, concat, matmul, relu

__all__ = (
    'Activation',
    'Classifier',
    'ControllerInput',
    'FeedbackModel',
    'FeedbackTrace',
    'MlpOutput',
    'MlpSpec',
    'ModelParams',
    'Trainable',
    'build_feedback_model',
    'controller_forward',
    'controller_spec',
    'feedback_forward',
    'feedback_trace',
    'init_params',
    'mlp_forward',
)

Activation: TypeAlias = Literal['relu', 'identity']
"""The activation applied after every hidden layer."""


class ControllerInput(str, Enum):
    """What the controller network receives."""

    PREDICTIONS = 'predictions'
    """The main network logits only."""

    FEATURES = 'features'
    """The last hidden activation of the main network concatenated with its logits."""


@dataclass(frozen=True)
class MlpSpec:
    """The architecture of a fully connected network.

    The output layer is linear (it produces logits, or the input-space correction for controllers).
    """

    widths: tuple[int, ...]
    """The layer widths: input, one or more hidden layers, output."""

    activation: Activation = 'relu'

    def __post_init__(self) -> None:
        if len(self.widths) < 3:
            raise InvalidParameterError(
                'widths', f'need an input, at least one hidden and an output width, got {self.widths}'
            )
        if any(w < 1 for w in self.widths):
            raise InvalidParameterError('widths', f'all widths must be positive, got {self.widths}')
        if self.activation not in ('relu', 'identity'):
            raise InvalidParameterError('activation', f'unknown activation {self.activation!r}')

    @property
    def input_width(self) -> int:
        return self.widths[0]

    @property
    def output_width(self) -> int:
        return self.widths[-1]

    @property
    def last_hidden_width(self) -> int:
        return self.widths[-2]


class MlpOutput(NamedTuple):
    """The result of [`mlp_forward()`][feedback_nn.nn.mlp_forward]."""

    logits: Tensor
    """The `batch×C` output of the linear output layer."""

    last_hidden: Tensor
    """The `batch×h` activation of the last hidden layer."""


class Classifier(Protocol):
    """Anything mapping a `batch×d` input tensor to `batch×C` logits."""

    def __call__(self, x: Tensor, /) -> Tensor: ...


class Trainable(Classifier, Protocol):
    """A classifier whose parameters can be registered on a record and updated in place."""

    def bind(self, record: GradientRecord, /) -> Self: ...

    def named_tensors(self) -> dict[str, Tensor]: ...

    def copy(self) -> Self: ...


@dataclass(frozen=True)
class ModelParams:
    """The weights and biases of a fully connected network.

    Instances are callable and return the logits of [`mlp_forward()`][feedback_nn.nn.mlp_forward].
    """

    spec: MlpSpec
    weights: tuple[Tensor, ...]
    """One `fan_in×fan_out` matrix per layer."""

    biases: tuple[Tensor, ...]
    """One `fan_out` vector per layer."""

    def __post_init__(self) -> None:
        widths = self.spec.widths
        expected = [(widths[i], widths[i + 1]) for i in range(len(widths) - 1)]
        if [w.shape for w in self.weights] != expected or [b.shape for b in self.biases] != [
            (fan_out,) for _, fan_out in expected
        ]:
            raise ShapeError('parameters', *(w.shape for w in self.weights), *(b.shape for b in self.biases))

    def __call__(self, x: Tensor, /) -> Tensor:
        return mlp_forward(self, x).logits

    def bind(self, record: GradientRecord, /) -> ModelParams:
        """Return the same parameters registered as leaves on `record` (storage is shared)."""
        return ModelParams(
            self.spec,
            tuple(record.leaf(w.detach()) for w in self.weights),
            tuple(record.leaf(b.detach()) for b in self.biases),
        )

    def named_tensors(self) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            named[f'w{i}'] = w
            named[f'b{i}'] = b
        return named

    def copy(self) -> ModelParams:
        """Return a deep copy, with storage of its own."""
        return ModelParams(
            self.spec,
            tuple(Tensor(w.data.copy()) for w in self.weights),
            tuple(Tensor(b.data.copy()) for b in self.biases),
        )

    def zeroed(self) -> ModelParams:
        """Return parameters of the same architecture with every value set to zero."""
        return ModelParams(
            self.spec,
            tuple(Tensor(np.zeros_like(w.data)) for w in self.weights),
            tuple(Tensor(np.zeros_like(b.data)) for b in self.biases),
        )


def init_params(spec: MlpSpec, seed: int) -> ModelParams:
    """Initialize the parameters of `spec` deterministically from `seed`.

    Weights are drawn from the uniform law on `±sqrt(6 / (fan_in + fan_out))`, biases are zero.
    """
    rng = np.random.default_rng(seed)
    weights: list[Tensor] = []
    biases: list[Tensor] = []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out))))
        biases.append(Tensor(np.zeros(fan_out)))
    return ModelParams(spec, tuple(weights), tuple(biases))


def _activate(x: Tensor, activation: Activation) -> Tensor:
    if activation == 'relu':
        return relu(x)
    elif activation == 'identity':
        return x
    else:  # pragma: no cover
        assert_never(activation)


def mlp_forward(params: ModelParams, x: Tensor) -> MlpOutput:
    """Evaluate the network on a `batch×d` input.

    Raises:
        ShapeError: If the width of `x` does not match the input width of the network.
    """
    if len(x.shape) != 2 or x.shape[1] != params.spec.input_width:
        raise ShapeError('mlp_forward', x.shape, (x.shape[0] if x.shape else 0, params.spec.input_width))
    hidden = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        out = matmul(hidden, w) + b
        if i == last:
            return MlpOutput(out, hidden)
        hidden = _activate(out, params.spec.activation)
    raise AssertionError('unreachable')  # pragma: no cover


def controller_spec(
    main: MlpSpec, hidden: Sequence[int], mode: ControllerInput, *, activation: Activation = 'relu'
) -> MlpSpec:
    """Return the controller architecture matching the main network `main` in the given `mode`.

    The controller outputs a correction of the main network's input width. Its input is the number
    of classes, plus the last hidden width in [`FEATURES`][feedback_nn.nn.ControllerInput.FEATURES] mode.
    """
    width = main.output_width
    if mode is ControllerInput.FEATURES:
        width += main.last_hidden_width
    return MlpSpec((width, *hidden, main.input_width), activation=activation)


@dataclass(frozen=True)
class FeedbackModel:
    """A main classifier `f` wrapped in a negative feedback loop driven by the controller `g`."""

    main: ModelParams
    controller: ModelParams
    unroll: int = 1
    """The number `P` of correction cycles."""

    controller_input: ControllerInput = ControllerInput.PREDICTIONS

    def __post_init__(self) -> None:
        if self.unroll < 1:
            raise InvalidParameterError('unroll', f'must be at least 1, got {self.unroll}')
        expected = controller_spec(self.main.spec, (1,), self.controller_input)
        if self.controller.spec.input_width != expected.input_width:
            raise InvalidParameterError(
                'controller',
                f'input width {self.controller.spec.input_width} does not match {expected.input_width} '
                f'required by {self.controller_input.value!r} mode',
            )
        if self.controller.spec.output_width != self.main.spec.input_width:
            raise InvalidParameterError(
                'controller',
                f'output width {self.controller.spec.output_width} does not match the input width '
                f'{self.main.spec.input_width} of the main network',
            )

    def __call__(self, x: Tensor, /) -> Tensor:
        return feedback_forward(self, x)

    def bind(self, record: GradientRecord, /) -> FeedbackModel:
        return FeedbackModel(self.main.bind(record), self.controller.bind(record), self.unroll, self.controller_input)

    def named_tensors(self) -> dict[str, Tensor]:
        named = {f'main.{k}': v for k, v in self.main.named_tensors().items()}
        named.update({f'controller.{k}': v for k, v in self.controller.named_tensors().items()})
        return named

    def copy(self) -> FeedbackModel:
        return FeedbackModel(self.main.copy(), self.controller.copy(), self.unroll, self.controller_input)


def build_feedback_model(
    main: MlpSpec,
    controller_hidden: Sequence[int],
    *,
    unroll: int = 1,
    controller_input: ControllerInput = ControllerInput.PREDICTIONS,
    seed: int = 0,
) -> FeedbackModel:
    """Initialize a feedback model; the controller is seeded with `seed + 1`."""
    return FeedbackModel(
        init_params(main, seed),
        init_params(controller_spec(main, controller_hidden, controller_input), seed + 1),
        unroll,
        controller_input,
    )


def controller_forward(model: FeedbackModel, logits: Tensor, last_hidden: Tensor) -> Tensor:
    """Return the input-space correction `ΔX′` produced by the controller.

    In [`PREDICTIONS`][feedback_nn.nn.ControllerInput.PREDICTIONS] mode `last_hidden` is ignored.
    """
    mode = model.controller_input
    if mode is ControllerInput.PREDICTIONS:
        signal = logits
    elif mode is ControllerInput.FEATURES:
        signal = concat([last_hidden, logits])
    else:  # pragma: no cover
        assert_never(mode)
    return mlp_forward(model.controller, signal).logits


class FeedbackTrace(NamedTuple):
    """An instrumented feedback forward pass."""

    logits: Tensor
    """The logits of the final pass through the main network."""

    corrections: list[Tensor]
    """The correction `ΔX′` of every cycle, in order."""

    corrected_input: Tensor
    """The input fed to the final pass, `x - Σ ΔX′`."""


def feedback_trace(model: FeedbackModel, x: Tensor) -> FeedbackTrace:
    """Run the unrolled feedback loop, keeping every intermediate correction."""
    current = x
    corrections: list[Tensor] = []
    for _ in range(model.unroll):
        logits, last_hidden = mlp_forward(model.main, current)
        correction = controller_forward(model, logits, last_hidden)
        corrections.append(correction)
        current = current - correction
    return FeedbackTrace(mlp_forward(model.main, current).logits, corrections, current)


def feedback_forward(model: FeedbackModel, x: Tensor) -> Tensor:
    """Return the logits of the feedback model on `x`.

    With `P = 1` this is `f(x - g(f(x)))`. The corrected input is not clamped to the data bounds.
    """
    return feedback_trace(model, x).logits
