# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

import numpy as np
import pytest

from constants import LINEAR, SIGMOID, SINE, TANHSHRINK
from core.errors import (
    InvalidArchitectureError,
    ShapeError,
    TapeMismatchError,
    TrainingDivergenceError,
)
from managers.nn import (
    AdamState,
    GradientBundle,
    Layer,
    MlpParams,
    adam_step,
    backward,
    evaluate,
    forward,
    init_siren,
    input_jacobian,
    jacobian_backward,
    jacobian_forward,
)

EPS = 1e-6


def random_network(seed: int) -> MlpParams:
    rng = np.random.default_rng(seed)
    depth = int(rng.integers(1, 6))
    width = int(rng.integers(2, 13))
    in_dim = int(rng.integers(1, 5))
    out_dim = int(rng.integers(1, 4))
    residual = (2,) if depth >= 2 and rng.uniform() < 0.5 else ()
    return init_siren(
        [in_dim] + [width] * depth + [out_dim],
        omega0=float(rng.uniform(1.0, 10.0)),
        omega_hidden=float(rng.uniform(0.5, 2.0)),
        seed=seed,
        output_activation=[LINEAR, SIGMOID, TANHSHRINK][seed % 3],
        residual_layers=residual,
    )


def sampled_entries(params: MlpParams, rng, count: int = 12):
    entries = []
    for _ in range(count):
        index = int(rng.integers(len(params.layers)))
        layer = params.layers[index]
        if rng.uniform() < 0.7:
            position = tuple(int(rng.integers(n)) for n in layer.weight.shape)
            entries.append((index, "weight", position))
        else:
            entries.append((index, "bias", (int(rng.integers(layer.fan_out)),)))
    return entries


def finite_difference(params: MlpParams, entry, loss) -> float:
    index, name, position = entry
    array = getattr(params.layers[index], name)
    original = array[position]
    array[position] = original + EPS
    plus = loss()
    array[position] = original - EPS
    minus = loss()
    array[position] = original
    return (plus - minus) / (2 * EPS)


def analytic(grads: GradientBundle, entry) -> float:
    index, name, position = entry
    return float((grads.weights if name == "weight" else grads.biases)[index][position])


def relative_error(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


@pytest.mark.parametrize("seed", range(100))
def test_backward_matches_finite_differences(seed):
    params = random_network(seed)
    rng = np.random.default_rng(seed + 1000)
    x = rng.uniform(-1, 1, size=(5, params.in_dim))
    weights = rng.normal(size=(5, params.out_dim))

    out, tape = forward(params, x)
    grads = backward(params, tape, weights)

    def loss():
        return float(np.sum(evaluate(params, x) * weights))

    assert np.allclose(out, evaluate(params, x))
    entries = sampled_entries(params, rng)
    numeric = [finite_difference(params, e, loss) for e in entries]
    assert relative_error([analytic(grads, e) for e in entries], numeric) < 1e-4

    # input gradient
    fd_inputs = np.zeros_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            step = np.zeros_like(x)
            step[i, j] = EPS
            fd_inputs[i, j] = (
                np.sum(evaluate(params, x + step) * weights)
                - np.sum(evaluate(params, x - step) * weights)
            ) / (2 * EPS)
    assert relative_error(grads.inputs, fd_inputs) < 1e-4


@pytest.mark.parametrize("seed", range(100))
def test_input_jacobian_matches_finite_differences(seed):
    params = random_network(seed)
    x = np.random.default_rng(seed).uniform(-1, 1, size=(4, params.in_dim))
    jac = input_jacobian(params, x)
    assert jac.shape == (4, params.out_dim, params.in_dim)
    for c in range(params.in_dim):
        step = np.zeros_like(x)
        step[:, c] = EPS
        numeric = (evaluate(params, x + step) - evaluate(params, x - step)) / (2 * EPS)
        assert relative_error(jac[:, :, c], numeric) < 1e-4


@pytest.mark.parametrize("seed", range(40))
def test_jacobian_backward_matches_finite_differences(seed):
    params = random_network(seed)
    rng = np.random.default_rng(seed + 2000)
    x = rng.uniform(-1, 1, size=(4, params.in_dim))
    columns = tuple(range(params.in_dim))[: max(1, params.in_dim - 1)]
    w_out = rng.normal(size=(4, params.out_dim))
    w_jac = rng.normal(size=(4, params.out_dim, len(columns)))

    _, _, tape = jacobian_forward(params, x, columns)
    grads = jacobian_backward(params, tape, w_out, w_jac)

    def loss():
        out, jac, _ = jacobian_forward(params, x, columns)
        return float(np.sum(out * w_out) + np.sum(jac * w_jac))

    entries = sampled_entries(params, rng)
    numeric = [finite_difference(params, e, loss) for e in entries]
    assert relative_error([analytic(grads, e) for e in entries], numeric) < 1e-4


def test_jacobian_forward_outputs_match_evaluate():
    params = random_network(7)
    x = np.random.default_rng(0).uniform(-1, 1, size=(6, params.in_dim))
    out, _, _ = jacobian_forward(params, x)
    assert np.allclose(out, evaluate(params, x), atol=1e-12)


def test_init_siren_bounds_and_zero_biases():
    params = init_siren([3, 64, 64, 1], omega0=30.0, omega_hidden=1.0, seed=0)
    first, hidden, last = params.layers
    assert np.all(np.abs(first.weight) <= 1.0 / 3)
    assert np.all(np.abs(hidden.weight) <= np.sqrt(6.0 / 64))
    assert all(np.all(layer.bias == 0) for layer in params.layers)
    assert (first.activation, hidden.activation, last.activation) == (SINE, SINE, LINEAR)
    assert first.omega == 30.0 and hidden.omega == 1.0


def test_init_siren_variance_of_uniform_law():
    params = init_siren([3, 512, 512, 1], omega0=30.0, omega_hidden=2.0, seed=4)
    bound = np.sqrt(6.0 / 512) / 2.0
    # U(-c, c) has variance c^2 / 3
    assert np.var(params.layers[1].weight) == pytest.approx(bound**2 / 3, rel=0.02)


def test_init_siren_is_seeded():
    a = init_siren([4, 8, 3], 30.0, 1.0, seed=5)
    b = init_siren([4, 8, 3], 30.0, 1.0, seed=5)
    assert all(np.array_equal(x.weight, y.weight) for x, y in zip(a.layers, b.layers))


@pytest.mark.parametrize(
    "dims,omega0",
    [([3], 30.0), ([3, 0, 1], 30.0), ([3, 8, 1], 0.0)],
)
def test_init_siren_rejects_invalid_architectures(dims, omega0):
    with pytest.raises(InvalidArchitectureError):
        init_siren(dims, omega0, 1.0, seed=0)


def test_layers_must_chain():
    with pytest.raises(InvalidArchitectureError):
        MlpParams(
            [
                Layer(np.zeros((4, 3)), np.zeros(4), 1.0, SINE),
                Layer(np.zeros((1, 5)), np.zeros(1), 1.0, LINEAR),
            ]
        )


def test_forward_rejects_wrong_input_width():
    params = init_siren([3, 8, 1], 30.0, 1.0, seed=0)
    with pytest.raises(ShapeError):
        forward(params, np.zeros((2, 4)))


def test_adam_hand_computed_step():
    params = MlpParams([Layer(np.array([[1.0]]), np.array([0.0]), 1.0, LINEAR)])
    state = AdamState.for_params(params, lr=0.1)
    grads = GradientBundle([np.array([[0.5]])], [np.array([-2.0])])

    adam_step(params, state, grads)

    # the first bias-corrected step moves each parameter by lr * sign(g)
    assert params.layers[0].weight[0, 0] == pytest.approx(0.9, abs=1e-7)
    assert params.layers[0].bias[0] == pytest.approx(0.1, abs=1e-7)
    assert state.t == 1
    assert state.m_weights[0][0, 0] == pytest.approx(0.05)
    assert state.v_weights[0][0, 0] == pytest.approx(0.001 * 0.25)


def test_adam_rejects_non_finite_gradients():
    params = init_siren([2, 4, 4, 1], 30.0, 1.0, seed=0)
    state = AdamState.for_params(params, lr=0.1)
    grads = GradientBundle.zeros_like(params)
    grads.weights[1][0, 0] = np.nan
    before = params.layers[0].weight.copy()

    with pytest.raises(TrainingDivergenceError) as e:
        adam_step(params, state, grads)
    assert e.value.layer_index == 1
    assert np.array_equal(params.layers[0].weight, before)


def test_stale_tape_is_rejected():
    params = init_siren([2, 4, 1], 30.0, 1.0, seed=0)
    x = np.zeros((3, 2))
    _, tape = forward(params, x)
    adam_step(params, AdamState.for_params(params, 0.1), GradientBundle.zeros_like(params))
    with pytest.raises(TapeMismatchError):
        backward(params, tape, np.ones((3, 1)))


def test_tape_of_other_params_is_rejected():
    a = init_siren([2, 4, 1], 30.0, 1.0, seed=0)
    b = a.copy()
    _, tape = forward(a, np.zeros((3, 2)))
    with pytest.raises(TapeMismatchError):
        backward(b, tape, np.ones((3, 1)))


def test_tape_arrays_are_read_only():
    params = init_siren([2, 4, 1], 30.0, 1.0, seed=0)
    _, tape = forward(params, np.zeros((3, 2)))
    with pytest.raises(ValueError):
        tape.pre[0][0, 0] = 1.0


def test_float32_mode_keeps_precision_of_weights():
    params = init_siren([3, 8, 1], 30.0, 1.0, seed=0, dtype=np.float32)
    out = evaluate(params, np.zeros((2, 3)))
    assert out.dtype == np.float32
