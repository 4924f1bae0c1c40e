"""Finite-difference verification of the recorded gradients of the networks."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .nn import ControllerInput, FeedbackModel, MlpSpec, ModelParams, Trainable, build_feedback_model
from .tensor import Array, GradientRecord, Tensor, backward, dot, finite_diff_gradient, softmax_cross_entropy

__all__ = (
    'DEFAULT_TOLERANCE',
    'GradCheck',
    'GradcheckReport',
    'relative_error',
    'run_gradcheck',
)

DEFAULT_TOLERANCE = 1e-5

_GRAD_FLOOR = 1e-8
"""Coordinates whose analytic gradient is smaller than this are not compared."""

_DENOMINATOR_FLOOR = 1e-3


def relative_error(analytic: Array, numeric: Array) -> float:
    """Return the worst `|a - n| / max(|a|, |n|, 1e-3)` over the coordinates where `|a| > 1e-8`.

    Returns zero when no coordinate qualifies.
    """
    mask = np.abs(analytic) > _GRAD_FLOOR
    if not mask.any():
        return 0.0
    a, n = analytic[mask], numeric[mask]
    denominator = np.maximum(np.maximum(np.abs(a), np.abs(n)), _DENOMINATOR_FLOOR)
    return float(np.max(np.abs(a - n) / denominator))


@dataclass(frozen=True)
class GradCheck:
    """The comparison of the gradient of one tensor."""

    component: str
    """`f` (main network), `g` (controller) or `F` (unrolled feedback model)."""

    tensor: str
    """The parameter name, or `input`."""

    error: float
    """The worst relative error."""

    coordinates: int
    """The number of coordinates compared."""


@dataclass(frozen=True)
class GradcheckReport:
    checks: tuple[GradCheck, ...]
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def worst(self) -> GradCheck:
        return max(self.checks, key=lambda check: check.error)

    @property
    def passed(self) -> bool:
        return self.worst.error <= self.tolerance


def _numeric(loss: Callable[[], float], array: Array, h: float) -> Array:
    """Differentiate `loss` with respect to the values of `array`, which is perturbed in place."""
    original = array.copy()

    def f(values: Tensor) -> float:
        array[...] = values.data
        return loss()

    try:
        return finite_diff_gradient(f, original, h)
    finally:
        array[...] = original


def _check(
    component: str,
    model: Trainable,
    x: Array,
    objective: Callable[[Tensor], Tensor],
    *,
    h: float,
    corrupt_adjoint: bool,
) -> list[GradCheck]:
    record = GradientRecord()
    bound = model.bind(record)
    x_leaf = record.leaf(x)
    gradients = backward(record, objective(bound(x_leaf)))

    def loss() -> float:
        return objective(model(Tensor(x))).item()

    targets = {**bound.named_tensors(), 'input': x_leaf}
    checks: list[GradCheck] = []
    for name, tensor in targets.items():
        analytic = gradients.of(tensor)
        if corrupt_adjoint:
            analytic = analytic * 1.01
        numeric = _numeric(loss, tensor.data, h)
        mask_size = int(np.count_nonzero(np.abs(analytic) > _GRAD_FLOOR))
        checks.append(GradCheck(component, name, relative_error(analytic, numeric), mask_size))
    return checks


def _randomize_biases(params: ModelParams, rng: np.random.Generator) -> None:
    for bias in params.biases:
        bias.data[...] = rng.uniform(-0.5, 0.5, size=bias.shape)


def run_gradcheck(
    widths: Sequence[int] = (2, 8, 8, 2),
    controller_hidden: Sequence[int] = (8,),
    *,
    unroll: int = 1,
    mode: ControllerInput = ControllerInput.PREDICTIONS,
    seed: int = 0,
    batch: int = 3,
    h: float = 1e-6,
    tolerance: float = DEFAULT_TOLERANCE,
    corrupt_adjoint: bool = False,
) -> GradcheckReport:
    """Compare recorded gradients with central finite differences.

    The main network `f`, the controller `g` and the unrolled feedback model `F` are checked with
    respect to every parameter and to their input, on inputs drawn uniformly in `[-1, 1]`.

    Args:
        widths: The main network layer widths.
        controller_hidden: The controller hidden layer widths.
        unroll: The number of feedback cycles of `F`.
        mode: The controller input mode.
        seed: Seed of the parameters, inputs and labels.
        batch: The number of samples.
        h: The finite-difference step.
        tolerance: The largest accepted relative error.
        corrupt_adjoint: Scale every analytic gradient by 1.01, to exercise the failure path.
    """
    if batch < 1:
        raise InvalidParameterError('batch', f'must be at least 1, got {batch}')
    rng = np.random.default_rng(seed)
    model: FeedbackModel = build_feedback_model(
        MlpSpec(tuple(widths)), controller_hidden, unroll=unroll, controller_input=mode, seed=seed
    )
    _randomize_biases(model.main, rng)
    _randomize_biases(model.controller, rng)

    spec = model.main.spec
    x = rng.uniform(-1.0, 1.0, size=(batch, spec.input_width))
    labels = rng.integers(0, spec.output_width, size=batch)
    signal = rng.uniform(-1.0, 1.0, size=(batch, model.controller.spec.input_width))
    weights = Tensor(rng.uniform(-1.0, 1.0, size=(batch, spec.input_width)))

    def cross_entropy(logits: Tensor) -> Tensor:
        return softmax_cross_entropy(logits, labels)

    def projection(correction: Tensor) -> Tensor:
        return dot(correction, weights)

    checks = [
        *_check('f', model.main, x, cross_entropy, h=h, corrupt_adjoint=corrupt_adjoint),
        *_check('g', model.controller, signal, projection, h=h, corrupt_adjoint=corrupt_adjoint),
        *_check('F', model, x, cross_entropy, h=h, corrupt_adjoint=corrupt_adjoint),
    ]
    return GradcheckReport(tuple(checks), tolerance)
