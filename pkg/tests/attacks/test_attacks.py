import math

import numpy as np
import pytest

from feedback_nn.attacks import AttackBudget, fgsm, input_gradient, mim, pgd, project_linf
from feedback_nn.data import Dataset, batches
from feedback_nn.errors import InvalidParameterError, ShapeError
from feedback_nn.nn import ControllerInput, FeedbackModel, MlpSpec, ModelParams, build_feedback_model, init_params
from feedback_nn.tensor import Tensor, softmax_cross_entropy


class LinearToy:
    """Logits `x @ weights`; the input gradient direction does not depend on `x` for two classes."""

    def __init__(self, weights: list[list[float]]) -> None:
        self.weights = Tensor(weights)

    def __call__(self, x: Tensor, /) -> Tensor:
        return x @ self.weights


def _mean_loss(model: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    return softmax_cross_entropy(model(Tensor(x)), y).item()


@pytest.mark.parametrize(
    ['x_adv', 'x_ref', 'epsilon', 'bounds', 'expected'],
    [
        ([0.5], [0.0], 0.1, (-1.0, 1.0), [0.1]),
        ([0.05], [0.0], 0.1, (-1.0, 1.0), [0.05]),
        ([1.2], [0.95], 0.1, (0.0, 1.0), [1.0]),
        ([-0.3, 0.3], [0.0, 0.0], 0.2, (-1.0, 1.0), [-0.2, 0.2]),
    ],
)
def test_project_linf(
    x_adv: list[float], x_ref: list[float], epsilon: float, bounds: tuple[float, float], expected: list[float]
) -> None:
    budget = AttackBudget(epsilon, epsilon, bounds=bounds)

    np.testing.assert_allclose(project_linf(x_adv, x_ref, budget), expected)


def test_project_linf_shape_mismatch() -> None:
    with pytest.raises(ShapeError):
        project_linf([0.0, 1.0], [0.0], AttackBudget(0.1, 0.1))


@pytest.mark.parametrize(
    ['changes', 'name'],
    [
        ({'epsilon': 0.0}, 'epsilon'),
        ({'kappa': -0.1}, 'kappa'),
        ({'steps': 0}, 'steps'),
        ({'bounds': (1.0, 0.0)}, 'bounds'),
    ],
)
def test_invalid_budget(changes: dict[str, object], name: str) -> None:
    with pytest.raises(InvalidParameterError) as exc_info:
        AttackBudget(0.1, 0.1).replace(**changes)

    assert exc_info.value.name == name


def test_input_gradient_of_linear_toy() -> None:
    model = LinearToy([[0.0, 3.0], [0.0, -2.0]])

    grad, loss = input_gradient(model, [[0.0, 0.0]], [0])

    np.testing.assert_allclose(grad, [[1.5, -1.0]])
    assert loss == pytest.approx(math.log(2))


def test_fgsm_follows_gradient_sign() -> None:
    model = LinearToy([[0.0, 3.0], [0.0, -2.0]])

    x_adv = fgsm(model, [[0.0, 0.0]], [0], AttackBudget(0.1, 0.05, bounds=(-1.0, 1.0)))

    np.testing.assert_allclose(x_adv, [[0.1, -0.1]])


@pytest.mark.parametrize('attack', ['fgsm', 'pgd', 'mim'])
def test_zero_gradient_leaves_input_unchanged(attack: str) -> None:
    model = LinearToy([[0.0, 0.0], [0.0, 0.0]])
    x = np.array([[0.3, 0.7]])
    budget = AttackBudget(0.1, 0.05, steps=5)

    x_adv = {'fgsm': fgsm, 'pgd': pgd, 'mim': mim}[attack](model, x, [1], budget)

    np.testing.assert_array_equal(x_adv, x)


def _random_classifier(rng: np.random.Generator) -> tuple[FeedbackModel | ModelParams, int]:
    """A freshly initialized plain or feedback network with a random architecture."""
    dim = int(rng.integers(1, 6))
    classes = int(rng.integers(2, 5))
    hidden = tuple(int(width) for width in rng.integers(2, 12, size=int(rng.integers(1, 3))))
    spec = MlpSpec((dim, *hidden, classes))
    seed = int(rng.integers(0, 2**31))
    if rng.uniform() < 0.5:
        return init_params(spec, seed), dim
    mode = ControllerInput.FEATURES if rng.uniform() < 0.5 else ControllerInput.PREDICTIONS
    unroll = int(rng.integers(1, 3))
    return build_feedback_model(spec, (int(rng.integers(2, 9)),), unroll=unroll, controller_input=mode, seed=seed), dim


def _random_budget(rng: np.random.Generator, **changes: object) -> AttackBudget:
    low = rng.uniform(-1.0, 0.0)
    budget = AttackBudget(
        rng.uniform(0.01, 0.5),
        rng.uniform(0.01, 0.3),
        steps=int(rng.integers(1, 8)),
        random_start=bool(rng.integers(0, 2)),
        bounds=(low, low + rng.uniform(0.5, 2.0)),
    )
    return budget.replace(**changes)


@pytest.mark.parametrize('seed', range(20))
def test_pgd_single_full_step_is_fgsm(seed: int) -> None:
    rng = np.random.default_rng(seed)
    model, dim = _random_classifier(rng)
    budget = _random_budget(rng, steps=1, random_start=False)
    budget = budget.replace(kappa=budget.epsilon)
    x = rng.uniform(*budget.bounds, size=(64, dim))
    y = rng.integers(0, 2, size=64)

    np.testing.assert_array_equal(pgd(model, x, y, budget), fgsm(model, x, y, budget))


@pytest.mark.parametrize('seed', range(20))
def test_mim_without_momentum_is_pgd(seed: int) -> None:
    rng = np.random.default_rng(seed)
    model, dim = _random_classifier(rng)
    budget = _random_budget(rng, random_start=False)
    x = rng.uniform(*budget.bounds, size=(64, dim))
    y = rng.integers(0, 2, size=64)

    np.testing.assert_array_equal(mim(model, x, y, budget, decay=0.0), pgd(model, x, y, budget))


def test_mim_without_momentum_is_pgd_from_the_same_random_start(small_feedback_model: FeedbackModel) -> None:
    rng = np.random.default_rng(3)
    x = rng.uniform(0.0, 1.0, size=(64, 2))
    y = rng.integers(0, 2, size=64)
    budget = AttackBudget(0.2, 0.05, steps=8, random_start=True)

    np.testing.assert_array_equal(
        mim(small_feedback_model, x, y, budget, decay=0.0, rng=11), pgd(small_feedback_model, x, y, budget, rng=11)
    )


def test_mim_with_constant_gradient_sign_is_pgd() -> None:
    model = LinearToy([[0.0, 1.0], [0.0, -4.0]])
    x = np.full((3, 2), 0.5)
    budget = AttackBudget(0.3, 0.04, steps=12)

    np.testing.assert_array_equal(mim(model, x, [0, 0, 0], budget), pgd(model, x, [0, 0, 0], budget))


def test_mim_matches_hand_rolled_iteration(small_mlp: ModelParams, moons: Dataset) -> None:
    x, y = moons.inputs[:16], moons.labels[:16]
    budget = AttackBudget(0.2, 0.05, steps=6)
    decay = 0.7

    x_adv, velocity = x.copy(), np.zeros_like(x)
    for _ in range(budget.steps):
        grad, _ = input_gradient(small_mlp, x_adv, y)
        norms = np.abs(grad).sum(axis=1, keepdims=True)
        velocity = decay * velocity + np.divide(grad, norms, out=np.zeros_like(grad), where=norms > 0)
        x_adv = np.clip(np.clip(x_adv + 0.05 * np.sign(velocity), x - 0.2, x + 0.2), 0.0, 1.0)

    np.testing.assert_array_equal(mim(small_mlp, x, y, budget, decay=decay), x_adv)


def test_mim_rejects_negative_decay(small_mlp: ModelParams) -> None:
    with pytest.raises(InvalidParameterError, match='decay'):
        mim(small_mlp, [[0.5, 0.5]], [0], AttackBudget(0.1, 0.1), decay=-0.5)


@pytest.mark.parametrize(
    ['kappa', 'steps', 'expected'],
    [
        (0.03, 3, 0.59),
        (0.03, 4, 0.6),
        (0.1, 1, 0.6),
        (0.025, 10, 0.6),
    ],
)
def test_pgd_reaches_ball_boundary(kappa: float, steps: int, expected: float) -> None:
    # The loss of class 0 grows with the single input coordinate.
    model = LinearToy([[0.0, 1.0]])
    budget = AttackBudget(0.1, kappa, steps=steps)

    x_adv = pgd(model, [[0.5]], [0], budget)

    assert x_adv[0, 0] == pytest.approx(expected, abs=1e-12)


def test_random_start_is_seeded(small_mlp: ModelParams, moons: Dataset) -> None:
    x, y = moons.inputs[:32], moons.labels[:32]
    budget = AttackBudget(0.2, 0.05, steps=3, random_start=True)

    first = pgd(small_mlp, x, y, budget, rng=np.random.default_rng(5))
    second = pgd(small_mlp, x, y, budget, rng=np.random.default_rng(5))
    other = pgd(small_mlp, x, y, budget, rng=np.random.default_rng(6))

    np.testing.assert_array_equal(first, second)
    assert not np.array_equal(first, other)


def test_attacks_stay_in_ball_and_bounds(rng: np.random.Generator) -> None:
    # 50 random models and budgets, 200 random samples each: 10,000 trials per attack.
    for _ in range(50):
        model, dim = _random_classifier(rng)
        budget = _random_budget(rng)
        x = rng.uniform(*budget.bounds, size=(200, dim))
        y = rng.integers(0, 2, size=200)

        for x_adv in (
            fgsm(model, x, y, budget),
            pgd(model, x, y, budget, rng=rng),
            mim(model, x, y, budget, decay=rng.uniform(0.0, 2.0), rng=rng),
        ):
            assert x_adv.shape == x.shape
            assert np.max(np.abs(x_adv - x)) <= budget.epsilon + 1e-12
            assert x_adv.min() >= budget.bounds[0]
            assert x_adv.max() <= budget.bounds[1]


def test_more_steps_do_not_lower_the_loss(moons: Dataset) -> None:
    model = init_params(MlpSpec((2, 16, 16, 2)), seed=7)
    one_step = AttackBudget(0.3, 0.075, steps=1)
    twenty_steps = AttackBudget(0.3, 0.075, steps=20)

    wins = 0
    total = 0
    for x, y in batches(moons, 40, seed=0):
        wins += _mean_loss(model, pgd(model, x, y, twenty_steps), y) >= _mean_loss(model, pgd(model, x, y, one_step), y)
        total += 1

    assert wins >= 0.9 * total
