"""Gradient-based adversarial attacks under an L∞ budget.

All the attacks are white-box: input gradients are taken through the whole model, including every
unrolled pass of a [`FeedbackModel`][feedback_nn.nn.FeedbackModel] and its controller. Inputs and
outputs are float64 arrays of shape `batch×d`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

from .errors import InvalidParameterError, ShapeError
from .nn import Classifier
from .tensor import Array, GradientRecord, Tensor, backward, softmax_cross_entropy

__all__ = (
    'AttackBudget',
    'fgsm',
    'input_gradient',
    'mim',
    'pgd',
    'project_linf',
)


@dataclass(frozen=True)
class AttackBudget:
    """The constraints and schedule of an attack."""

    epsilon: float
    """The L∞ radius of the perturbation ball."""

    kappa: float
    """The size of each sign step."""

    steps: int = 10
    """The number `K` of steps of iterative attacks."""

    random_start: bool = False
    """Whether iterative attacks start from a uniformly drawn point of the ball."""

    bounds: tuple[float, float] = (0.0, 1.0)
    """The valid data range `(low, high)`."""

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise InvalidParameterError('epsilon', f'must be positive, got {self.epsilon!r}')
        if not self.kappa > 0:
            raise InvalidParameterError('kappa', f'must be positive, got {self.kappa!r}')
        if self.steps < 1:
            raise InvalidParameterError('steps', f'must be at least 1, got {self.steps}')
        low, high = self.bounds
        if not low < high:
            raise InvalidParameterError('bounds', f'low must be smaller than high, got {self.bounds}')

    def replace(self, **changes: object) -> AttackBudget:
        return dataclasses.replace(self, **changes)  # pyright: ignore[reportArgumentType]


def _as_array(x: Tensor | ArrayLike) -> Array:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def project_linf(x_adv: Tensor | ArrayLike, x_ref: Tensor | ArrayLike, budget: AttackBudget) -> Array:
    """Clamp `x_adv` into the L∞ ball of radius ε around `x_ref`, then into the data bounds.

    ```pycon
    >>> project_linf([0.5], [0.0], AttackBudget(0.1, 0.1, bounds=(-1.0, 1.0)))
    array([0.1])
    ```
    """
    adv, ref = _as_array(x_adv), _as_array(x_ref)
    if adv.shape != ref.shape:
        raise ShapeError('project_linf', adv.shape, ref.shape)
    clamped = np.clip(adv, ref - budget.epsilon, ref + budget.epsilon)
    return np.clip(clamped, *budget.bounds)


def input_gradient(model: Classifier, x: Tensor | ArrayLike, y: ArrayLike) -> tuple[Array, float]:
    """Return the gradient of the mean cross-entropy loss with respect to the input, and the loss."""
    record = GradientRecord()
    x_leaf = record.leaf(_as_array(x).copy())
    loss = softmax_cross_entropy(model(x_leaf), y)
    return backward(record, loss).of(x_leaf), loss.item()


def fgsm(model: Classifier, x: Tensor | ArrayLike, y: ArrayLike, budget: AttackBudget) -> Array:
    """Fast gradient sign method: one step of size ε along the sign of the input gradient.

    The random start and step count of `budget` are ignored; `sign(0) = 0`.
    """
    x_ref = _as_array(x)
    grad, _ = input_gradient(model, x_ref, y)
    return project_linf(x_ref + budget.epsilon * np.sign(grad), x_ref, budget)


def _random_start(
    x_ref: Array, budget: AttackBudget, rng: np.random.Generator | int | None
) -> Array:
    if not budget.random_start:
        return x_ref.copy()
    generator = np.random.default_rng(rng)
    noise = generator.uniform(-budget.epsilon, budget.epsilon, size=x_ref.shape)
    return project_linf(x_ref + noise, x_ref, budget)


def pgd(
    model: Classifier,
    x: Tensor | ArrayLike,
    y: ArrayLike,
    budget: AttackBudget,
    *,
    rng: np.random.Generator | int | None = None,
) -> Array:
    """Projected gradient descent: `K` sign steps of size κ, each projected back onto the budget.

    ```
    x′₀ = x  (or a uniform draw of the ε-ball when random_start is set)
    x′ₖ = Π(x′ₖ₋₁ + κ · sign(∇ₓ L(y, model(x′ₖ₋₁))))
    ```

    Args:
        model: The classifier to attack.
        x: The clean inputs.
        y: The true labels.
        budget: The attack budget.
        rng: Generator (or seed) for the random start.
    """
    x_ref = _as_array(x)
    x_adv = _random_start(x_ref, budget, rng)
    for _ in range(budget.steps):
        grad, _ = input_gradient(model, x_adv, y)
        x_adv = project_linf(x_adv + budget.kappa * np.sign(grad), x_ref, budget)
    return x_adv


def mim(
    model: Classifier,
    x: Tensor | ArrayLike,
    y: ArrayLike,
    budget: AttackBudget,
    *,
    decay: float = 1.0,
    rng: np.random.Generator | int | None = None,
) -> Array:
    """Momentum iterative method.

    The velocity accumulates L1-normalized input gradients, `gₖ = μ gₖ₋₁ + ∇ₓL / ‖∇ₓL‖₁`
    (normalized per sample), and each step moves by κ along `sign(gₖ)`. A sample with a zero
    gradient and zero velocity does not move.
    """
    if decay < 0:
        raise InvalidParameterError('decay', f'must be non-negative, got {decay!r}')
    x_ref = _as_array(x)
    x_adv = _random_start(x_ref, budget, rng)
    velocity = np.zeros_like(x_ref)
    for _ in range(budget.steps):
        grad, _ = input_gradient(model, x_adv, y)
        norms = np.abs(grad).reshape(grad.shape[0], -1).sum(axis=1).reshape((-1,) + (1,) * (grad.ndim - 1))
        normalized = np.divide(grad, norms, out=np.zeros_like(grad), where=norms > 0)
        velocity = decay * velocity + normalized
        x_adv = project_linf(x_adv + budget.kappa * np.sign(velocity), x_ref, budget)
    return x_adv
