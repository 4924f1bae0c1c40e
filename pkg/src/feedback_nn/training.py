"""Adversarial training of feedback models, with standard adversarial and natural training baselines.

Feedback looped adversarial training performs two updates of the joint parameters `θ = {θ_f, θ_g}`
on every batch: one on the clean batch, then one on PGD examples generated against the freshly
updated model. Standard adversarial training only performs the second update, natural training only
the first.
"""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import NamedTuple, TypeVar

import numpy as np

from .attacks import AttackBudget, pgd
from .data import Dataset, batches
from .errors import InvalidParameterError, NonFiniteError, ShapeError
from .nn import FeedbackModel, Trainable
from .tensor import Array, GradientRecord, Tensor, backward, softmax_cross_entropy

__all__ = (
    'HISTORY_COLUMNS',
    'EpochRecord',
    'Sgd',
    'TrainConfig',
    'TrainHistory',
    'TrainResult',
    'TrainingMethod',
    'flat_train',
    'lr_schedule',
    'natural_train',
    'sgd_step',
    'standard_at_train',
    'train',
)

logger = logging.getLogger(__name__)

ModelT = TypeVar('ModelT', bound=Trainable)

HISTORY_COLUMNS = ('epoch', 'lr', 'clean_loss', 'adv_loss', 'clean_acc', 'robust_acc')
"""The columns of the training history CSV file."""

# Stream identifiers mixed into the seed of the attack generators.
_TRAIN_ATTACK_STREAM = 1
_PROBE_ATTACK_STREAM = 2


class TrainingMethod(str, Enum):
    """The training procedure."""

    FLAT = 'flat'
    """A clean update then an adversarial update on every batch, on the feedback model."""

    STANDARD_AT = 'standard_at'
    """An adversarial update on every batch."""

    NATURAL = 'natural'
    """A clean update on every batch."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of a training run."""

    epochs: int = 100
    """The number `N` of epochs. Zero epochs leave the model unchanged."""

    batch_size: int = 64
    learning_rate: float = 0.05
    """The initial learning rate `τ`."""

    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_breakpoints: tuple[float, float, float] | None = None
    """The epochs `(b₁, b₂, b₃)` ending the constant phase, the decay to `τ/10` and the decay to `τ/100`.

    Defaults to `(N/3, 2N/3, N)`, with `b₁` raised to 1 for runs shorter than 3 epochs.
    """

    epsilon: float = 0.3
    """The L∞ radius of the training attack and of the probe attack."""

    kappa: float = 0.075
    """The step size of the training attack and of the probe attack."""

    steps: int = 10
    """The number `K` of PGD steps generating training examples. Zero trains on the clean batch."""

    random_start: bool = True
    bounds: tuple[float, float] = (0.0, 1.0)
    seed: int = 0
    method: TrainingMethod = TrainingMethod.FLAT
    freeze_controller: bool = False
    """Exclude the controller parameters of a feedback model from the updates."""

    probe_size: int = 256
    """The number of held-out samples on which the epoch metrics are measured."""

    probe_steps: int = 10
    """The number of PGD steps of the robust accuracy probe."""

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise InvalidParameterError('epochs', f'must be non-negative, got {self.epochs}')
        if self.batch_size < 1:
            raise InvalidParameterError('batch_size', f'must be at least 1, got {self.batch_size}')
        if not self.learning_rate > 0:
            raise InvalidParameterError('learning_rate', f'must be positive, got {self.learning_rate!r}')
        if not 0 <= self.momentum < 1:
            raise InvalidParameterError('momentum', f'must lie in [0, 1), got {self.momentum!r}')
        if self.weight_decay < 0:
            raise InvalidParameterError('weight_decay', f'must be non-negative, got {self.weight_decay!r}')
        if self.steps < 0:
            raise InvalidParameterError('steps', f'must be non-negative, got {self.steps}')
        if self.probe_size < 1:
            raise InvalidParameterError('probe_size', f'must be at least 1, got {self.probe_size}')
        if self.lr_breakpoints is not None:
            if len(self.lr_breakpoints) != 3:
                raise InvalidParameterError('lr_breakpoints', f'expected 3 epochs, got {len(self.lr_breakpoints)}')
            b1, b2, b3 = self.lr_breakpoints
            if not 0 < b1 < b2 < b3 <= self.epochs:
                raise InvalidParameterError(
                    'lr_breakpoints', f'must be increasing within (0, {self.epochs}], got {self.lr_breakpoints}'
                )
        # Validates the attack parameters early:
        self.probe_budget()

    @property
    def breakpoints(self) -> tuple[float, float, float]:
        if self.lr_breakpoints is not None:
            return self.lr_breakpoints
        b1 = max(1.0, self.epochs / 3)
        return (b1, max(b1, 2 * self.epochs / 3), max(b1, float(self.epochs)))

    def attack_budget(self) -> AttackBudget | None:
        """The budget of the training attack, `None` when training examples are the clean batch."""
        if self.steps == 0:
            return None
        return AttackBudget(self.epsilon, self.kappa, self.steps, self.random_start, self.bounds)

    def probe_budget(self) -> AttackBudget:
        return AttackBudget(self.epsilon, self.kappa, self.probe_steps, True, self.bounds)


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Return the learning rate of the 1-based `epoch`.

    The rate stays at `τ` until `b₁`, decays linearly to `τ/10` at `b₂`, then linearly to `τ/100`
    at `b₃` and stays there.

    Raises:
        InvalidParameterError: If `epoch` is outside of `[1, N]`.
    """
    if not 1 <= epoch <= config.epochs:
        raise InvalidParameterError('epoch', f'must lie in [1, {config.epochs}], got {epoch}')
    lr = config.learning_rate
    b1, b2, b3 = config.breakpoints
    if epoch <= b1:
        return lr
    if epoch <= b2:
        return lr + (lr / 10 - lr) * (epoch - b1) / (b2 - b1)
    progress = min(1.0, (epoch - b2) / (b3 - b2))
    return lr / 10 + (lr / 100 - lr / 10) * progress


def sgd_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Array],
    velocities: dict[str, Array],
    *,
    lr: float,
    momentum: float,
    weight_decay: float,
    epoch: int = 0,
    batch: int = 0,
) -> Mapping[str, Tensor]:
    """Apply one step of SGD with momentum and weight decay, in place.

    For every parameter `p` with gradient `g`, `v ← μ·v + g + λ·p` then `p ← p - τ·v`. Missing
    velocities start at zero.

    Raises:
        ShapeError: If a gradient does not match the shape of its parameter.
        NonFiniteError: If a gradient holds a NaN or an infinity. No parameter is modified then.
    """
    for name, param in params.items():
        grad = grads[name]
        if grad.shape != param.shape:
            raise ShapeError(f'sgd_step({name})', param.shape, grad.shape)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f'gradient of {name}', epoch=epoch, batch=batch)

    for name, param in params.items():
        velocity = velocities.get(name)
        step = grads[name] + weight_decay * param.data
        velocity = step if velocity is None else momentum * velocity + step
        velocities[name] = velocity
        param.data -= lr * velocity
    return params


class Sgd:
    """Stochastic gradient descent holding the velocity of every named parameter."""

    def __init__(self, *, momentum: float, weight_decay: float) -> None:
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocities: dict[str, Array] = {}
        self.updates = 0
        """The number of steps taken so far."""

    def step(
        self, params: Mapping[str, Tensor], grads: Mapping[str, Array], *, lr: float, epoch: int, batch: int
    ) -> None:
        sgd_step(
            params,
            grads,
            self.velocities,
            lr=lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            epoch=epoch,
            batch=batch,
        )
        self.updates += 1


class EpochRecord(NamedTuple):
    """The metrics of one completed epoch, measured on the probe set after the epoch."""

    epoch: int
    lr: float
    clean_loss: float
    adv_loss: float
    clean_acc: float
    """Clean accuracy, in percent."""

    robust_acc: float
    """Accuracy under the probe PGD attack, in percent."""


@dataclass
class TrainHistory:
    """One record per completed epoch, and update counters."""

    records: list[EpochRecord] = field(default_factory=list)
    updates: int = 0
    """The total number of parameter updates."""

    batches: int = 0
    """The total number of batches processed."""

    def __len__(self) -> int:
        return len(self.records)

    @property
    def updates_per_batch(self) -> float:
        return self.updates / self.batches if self.batches else 0.0

    def write_csv(self, path: str | Path) -> None:
        """Write the history as CSV with a header line; floats use their shortest round-trip form."""
        with Path(path).open('w', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(HISTORY_COLUMNS)
            for record in self.records:
                writer.writerow([record.epoch, *(repr(float(v)) for v in record[1:])])


class TrainResult(NamedTuple):
    model: Trainable
    history: TrainHistory


def _trainable_tensors(model: Trainable, config: TrainConfig) -> dict[str, Tensor]:
    named = model.named_tensors()
    if config.freeze_controller:
        return {name: t for name, t in named.items() if not name.startswith('controller.')}
    return named


def _update(
    model: Trainable, x: Array, y: Array, optimizer: Sgd, config: TrainConfig, *, lr: float, epoch: int, batch: int
) -> float:
    record = GradientRecord()
    bound = model.bind(record)
    loss = softmax_cross_entropy(bound(Tensor(x)), y)
    value = loss.item()
    if not math.isfinite(value):
        raise NonFiniteError('training loss', epoch=epoch, batch=batch)
    gradients = backward(record, loss)
    params = _trainable_tensors(bound, config)
    optimizer.step(params, {name: gradients.of(t) for name, t in params.items()}, lr=lr, epoch=epoch, batch=batch)
    return value


def _probe(model: Trainable, probe: Dataset, config: TrainConfig, epoch: int) -> tuple[float, float, float, float]:
    x, y = probe.inputs, probe.labels
    clean_logits = model(Tensor(x))
    rng = np.random.default_rng([config.seed, epoch, _PROBE_ATTACK_STREAM])
    x_adv = pgd(model, x, y, config.probe_budget(), rng=rng)
    adv_logits = model(Tensor(x_adv))
    clean_loss = softmax_cross_entropy(clean_logits, y).item()
    adv_loss = softmax_cross_entropy(adv_logits, y).item()
    if not (math.isfinite(clean_loss) and math.isfinite(adv_loss)):
        raise NonFiniteError('probe loss', epoch=epoch, batch=-1)
    clean_acc = 100.0 * float(np.mean(clean_logits.data.argmax(axis=1) == y))
    robust_acc = 100.0 * float(np.mean(adv_logits.data.argmax(axis=1) == y))
    return clean_loss, adv_loss, clean_acc, robust_acc


def _run(
    model: ModelT,
    data: Dataset,
    config: TrainConfig,
    probe: Dataset | None,
    *,
    clean_update: bool,
    adversarial_update: bool,
) -> tuple[ModelT, TrainHistory]:
    model = model.copy()
    probe = probe if probe is not None else data.subset(np.arange(min(config.probe_size, len(data))))
    optimizer = Sgd(momentum=config.momentum, weight_decay=config.weight_decay)
    budget = config.attack_budget()
    history = TrainHistory()

    for epoch in range(1, config.epochs + 1):
        lr = lr_schedule(epoch, config)
        attack_rng = np.random.default_rng([config.seed, epoch, _TRAIN_ATTACK_STREAM])
        for batch, (x, y) in enumerate(batches(data, config.batch_size, config.seed, epoch=epoch)):
            if clean_update:
                loss = _update(model, x, y, optimizer, config, lr=lr, epoch=epoch, batch=batch)
                logger.debug('epoch %d batch %d: clean loss %.6g', epoch, batch, loss)
            if adversarial_update:
                x_adv = x if budget is None else pgd(model, x, y, budget, rng=attack_rng)
                loss = _update(model, x_adv, y, optimizer, config, lr=lr, epoch=epoch, batch=batch)
                logger.debug('epoch %d batch %d: adversarial loss %.6g', epoch, batch, loss)
            history.batches += 1

        clean_loss, adv_loss, clean_acc, robust_acc = _probe(model, probe, config, epoch)
        history.records.append(EpochRecord(epoch, lr, clean_loss, adv_loss, clean_acc, robust_acc))
        logger.info(
            'epoch %d/%d lr=%.4g clean_loss=%.4f adv_loss=%.4f clean_acc=%.2f%% robust_acc=%.2f%%',
            epoch,
            config.epochs,
            lr,
            clean_loss,
            adv_loss,
            clean_acc,
            robust_acc,
        )

    history.updates = optimizer.updates
    return model, history


def _check_method(config: TrainConfig, expected: TrainingMethod) -> None:
    if config.method is not expected:
        raise InvalidParameterError('method', f'expected {expected.value!r}, got {config.method.value!r}')


def flat_train(
    model: FeedbackModel, data: Dataset, config: TrainConfig, *, probe: Dataset | None = None
) -> TrainResult:
    """Train a feedback model with feedback looped adversarial training.

    On every batch `(x, y)`:

    1. `θ ← θ - τ ∇θ L(y, F(x, θ))`
    2. `x′ = PGD(F, x, y)` with `K` steps, against the updated model
    3. `θ ← θ - τ ∇θ L(y, F(x′, θ))`

    Both updates touch the main network and the controller, unless `config.freeze_controller` is set.
    The input model is not modified; the trained model is a copy.

    Args:
        model: The feedback model to train.
        data: The training set.
        config: The hyperparameters; `config.method` must be `flat`.
        probe: The held-out set of the epoch metrics. Defaults to the first
            `config.probe_size` training samples.

    Raises:
        InvalidParameterError: If `model` is not a feedback model or the method does not match.
        NonFiniteError: If a loss or a gradient stops being finite.
    """
    _check_method(config, TrainingMethod.FLAT)
    if not isinstance(model, FeedbackModel):
        raise InvalidParameterError(
            'model', f'feedback looped training needs a feedback model, got {type(model).__name__}'
        )
    trained, history = _run(model, data, config, probe, clean_update=True, adversarial_update=True)
    return TrainResult(trained, history)


def standard_at_train(
    model: Trainable, data: Dataset, config: TrainConfig, *, probe: Dataset | None = None
) -> TrainResult:
    """Train any model on PGD examples only (one update per batch)."""
    _check_method(config, TrainingMethod.STANDARD_AT)
    trained, history = _run(model, data, config, probe, clean_update=False, adversarial_update=True)
    return TrainResult(trained, history)


def natural_train(
    model: Trainable, data: Dataset, config: TrainConfig, *, probe: Dataset | None = None
) -> TrainResult:
    """Train any model on clean batches only (one update per batch)."""
    _check_method(config, TrainingMethod.NATURAL)
    trained, history = _run(model, data, config, probe, clean_update=True, adversarial_update=False)
    return TrainResult(trained, history)


def train(model: Trainable, data: Dataset, config: TrainConfig, *, probe: Dataset | None = None) -> TrainResult:
    """Dispatch to the training procedure selected by `config.method`."""
    if config.method is TrainingMethod.FLAT:
        if not isinstance(model, FeedbackModel):
            raise InvalidParameterError('model', 'feedback looped training needs a feedback model')
        return flat_train(model, data, config, probe=probe)
    elif config.method is TrainingMethod.STANDARD_AT:
        return standard_at_train(model, data, config, probe=probe)
    else:
        return natural_train(model, data, config, probe=probe)
