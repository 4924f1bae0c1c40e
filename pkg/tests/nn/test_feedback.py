import dataclasses

import numpy as np
import pytest

from feedback_nn.errors import InvalidParameterError
from feedback_nn.gradcheck import relative_error
from feedback_nn.nn import (
    ControllerInput,
    FeedbackModel,
    MlpSpec,
    build_feedback_model,
    controller_forward,
    controller_spec,
    feedback_trace,
    init_params,
    mlp_forward,
)
from feedback_nn.tensor import GradientRecord, Tensor, backward, concat, finite_diff_gradient, softmax_cross_entropy


def _randomize(model: FeedbackModel, rng: np.random.Generator) -> FeedbackModel:
    for tensor in model.named_tensors().values():
        if tensor.data.ndim == 1:
            tensor.data[...] = rng.uniform(-0.5, 0.5, size=tensor.shape)
    return model


@pytest.mark.parametrize(
    ['mode', 'input_width'],
    [
        (ControllerInput.PREDICTIONS, 3),
        (ControllerInput.FEATURES, 3 + 7),
    ],
)
def test_controller_spec(mode: ControllerInput, input_width: int) -> None:
    spec = controller_spec(MlpSpec((5, 7, 3)), (16, 8), mode)

    assert spec.widths == (input_width, 16, 8, 5)


def test_mismatched_controller_is_rejected() -> None:
    main = init_params(MlpSpec((4, 6, 3)), seed=0)
    controller = init_params(MlpSpec((3, 5, 2)), seed=1)

    with pytest.raises(InvalidParameterError, match='controller'):
        FeedbackModel(main, controller)


def test_features_mode_needs_wider_controller() -> None:
    main = init_params(MlpSpec((4, 6, 3)), seed=0)
    controller = init_params(controller_spec(main.spec, (5,), ControllerInput.PREDICTIONS), seed=1)

    with pytest.raises(InvalidParameterError):
        FeedbackModel(main, controller, controller_input=ControllerInput.FEATURES)


def test_unroll_must_be_positive(small_feedback_model: FeedbackModel) -> None:
    with pytest.raises(InvalidParameterError, match='unroll'):
        dataclasses.replace(small_feedback_model, unroll=0)


@pytest.mark.parametrize('mode', list(ControllerInput))
def test_zero_controller_is_identity(mode: ControllerInput, rng: np.random.Generator) -> None:
    model = build_feedback_model(MlpSpec((2, 8, 8, 2)), (8,), unroll=2, controller_input=mode, seed=0)
    model = dataclasses.replace(model, controller=model.controller.zeroed())
    x = rng.uniform(-1, 1, size=(1000, 2))

    trace = feedback_trace(model, Tensor(x))

    assert all(not correction.data.any() for correction in trace.corrections)
    assert np.max(np.abs(trace.logits.data - model.main(Tensor(x)).data)) <= 1e-12


def test_features_controller_sees_hidden_and_logits(rng: np.random.Generator) -> None:
    model = _randomize(
        build_feedback_model(MlpSpec((3, 5, 2)), (4,), controller_input=ControllerInput.FEATURES, seed=2), rng
    )
    x = rng.uniform(-1, 1, size=(4, 3))
    logits, hidden = mlp_forward(model.main, Tensor(x))

    expected = model.controller(concat([hidden, logits])).data

    np.testing.assert_array_equal(controller_forward(model, logits, hidden).data, expected)


@pytest.mark.parametrize('mode', list(ControllerInput))
def test_single_cycle_is_manual_composition(mode: ControllerInput, rng: np.random.Generator) -> None:
    model = _randomize(build_feedback_model(MlpSpec((2, 8, 8, 2)), (8,), controller_input=mode, seed=1), rng)
    x = Tensor(rng.uniform(-1, 1, size=(6, 2)))

    logits, hidden = mlp_forward(model.main, x)
    correction = controller_forward(model, logits, hidden)
    manual = model.main(x - correction).data

    assert np.max(np.abs(model(x).data - manual)) <= 1e-12


def test_trace_records_every_cycle(rng: np.random.Generator) -> None:
    model = build_feedback_model(MlpSpec((2, 8, 8, 2)), (8,), unroll=3, seed=0)
    x = rng.uniform(0, 1, size=(5, 2))

    trace = feedback_trace(model, Tensor(x))

    assert len(trace.corrections) == 3
    total = sum(c.data for c in trace.corrections)
    np.testing.assert_allclose(trace.corrected_input.data, x - total, atol=1e-12)


@pytest.mark.parametrize('mode', list(ControllerInput))
def test_input_gradient_through_two_cycles(mode: ControllerInput, rng: np.random.Generator) -> None:
    model = _randomize(
        build_feedback_model(MlpSpec((2, 8, 8, 2)), (8,), unroll=2, controller_input=mode, seed=4), rng
    )
    x = rng.uniform(-1, 1, size=(3, 2))
    labels = np.array([0, 1, 1])

    record = GradientRecord()
    leaf = record.leaf(x.copy())
    analytic = backward(record, softmax_cross_entropy(model(leaf), labels)).of(leaf)
    numeric = finite_diff_gradient(lambda t: softmax_cross_entropy(model(t), labels), x)

    assert relative_error(analytic, numeric) <= 1e-5


def test_named_tensors_are_prefixed(small_feedback_model: FeedbackModel) -> None:
    names = list(small_feedback_model.named_tensors())

    assert names[:2] == ['main.w0', 'main.b0']
    assert 'controller.w0' in names
    assert len(names) == 2 * 3 + 2 * 2


def test_copy_is_independent(small_feedback_model: FeedbackModel) -> None:
    copy = small_feedback_model.copy()
    copy.controller.weights[0].data[...] = 0.0

    assert small_feedback_model.controller.weights[0].data.any()
    assert copy.unroll == small_feedback_model.unroll
