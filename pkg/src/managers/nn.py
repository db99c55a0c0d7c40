#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""Sinusoidal multilayer perceptron with analytic derivatives and the Adam optimizer.

Batches are row-major: a batch of N points with d features is an (N, d) array, and a layer
with weight W of shape (out, in) computes z = h @ W.T + b. Sine layers output sin(omega * z).
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from constants import ACTIVATIONS, LINEAR, SIGMOID, SINE, TANHSHRINK
from core.errors import (
    InvalidArchitectureError,
    ShapeError,
    TapeMismatchError,
    TrainingDivergenceError,
)

logger = logging.getLogger(__name__)


@dataclass
class Layer:
    """One fully connected layer and its activation."""

    weight: np.ndarray
    bias: np.ndarray
    omega: float
    activation: str
    residual: bool = False

    @property
    def fan_in(self) -> int:
        """Number of input features."""
        return int(self.weight.shape[1])

    @property
    def fan_out(self) -> int:
        """Number of output features."""
        return int(self.weight.shape[0])


@dataclass
class MlpParams:
    """Parameters of a sinusoidal MLP.

    `version` increases on every in-place update so that tapes recorded before an update are
    recognised as stale.
    """

    layers: list[Layer]
    version: int = 0

    def __post_init__(self):
        validate_layers(self.layers)

    @property
    def dims(self) -> list[int]:
        """Layer dimensions, input first."""
        return [self.layers[0].fan_in] + [layer.fan_out for layer in self.layers]

    @property
    def in_dim(self) -> int:
        """Input dimension."""
        return self.layers[0].fan_in

    @property
    def out_dim(self) -> int:
        """Output dimension."""
        return self.layers[-1].fan_out

    @property
    def dtype(self) -> np.dtype:
        """Floating point type of the weights."""
        return self.layers[0].weight.dtype

    def astype(self, dtype: type) -> "MlpParams":
        """Return a copy cast to another precision."""
        return MlpParams(
            [
                Layer(
                    layer.weight.astype(dtype),
                    layer.bias.astype(dtype),
                    layer.omega,
                    layer.activation,
                    layer.residual,
                )
                for layer in self.layers
            ]
        )

    def copy(self) -> "MlpParams":
        """Return a deep copy."""
        return self.astype(self.dtype)


def validate_layers(layers: list[Layer]) -> None:
    """Check the structural invariants of a layer stack."""
    if not layers:
        raise InvalidArchitectureError("An MLP needs at least one layer")
    for index, layer in enumerate(layers):
        if layer.activation not in ACTIVATIONS:
            raise InvalidArchitectureError(f"Layer {index}: unknown activation {layer.activation}")
        if layer.weight.ndim != 2 or layer.bias.shape != (layer.fan_out,):
            raise InvalidArchitectureError(f"Layer {index}: inconsistent weight/bias shapes")
        if layer.activation == SINE and not layer.omega > 0:
            raise InvalidArchitectureError(f"Layer {index}: sine frequency must be positive")
        if layer.residual and layer.fan_in != layer.fan_out:
            raise InvalidArchitectureError(f"Layer {index}: residual needs equal in/out widths")
        if index and layer.fan_in != layers[index - 1].fan_out:
            raise InvalidArchitectureError(
                f"Layer {index}: input width {layer.fan_in} does not chain with "
                f"{layers[index - 1].fan_out}"
            )


def init_siren(
    layer_dims: list[int],
    omega0: float,
    omega_hidden: float,
    seed: int,
    output_activation: str = LINEAR,
    residual_layers: tuple[int, ...] = (),
    dtype: type = np.float64,
) -> MlpParams:
    """Initialise a SIREN.

    The first layer is drawn from U(-1/in, 1/in), every later layer from
    U(-sqrt(6/in)/omega, sqrt(6/in)/omega); biases start at zero. Hidden layers are sine
    layers, the last one uses `output_activation`. `residual_layers` holds 1-based indices
    of hidden layers whose input is added to their output.
    """
    if len(layer_dims) < 2 or any(int(d) <= 0 for d in layer_dims):
        raise InvalidArchitectureError(f"Invalid layer dimensions {layer_dims}")
    if not omega0 > 0 or not omega_hidden > 0:
        raise InvalidArchitectureError("Frequencies must be positive")

    rng = np.random.default_rng(seed)
    n_layers = len(layer_dims) - 1
    layers = []
    for index, (fan_in, fan_out) in enumerate(zip(layer_dims[:-1], layer_dims[1:])):
        last = index == n_layers - 1
        omega = omega0 if index == 0 else omega_hidden
        bound = 1.0 / fan_in if index == 0 else np.sqrt(6.0 / fan_in) / omega
        layers.append(
            Layer(
                weight=rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype),
                bias=np.zeros(fan_out, dtype=dtype),
                omega=float(omega),
                activation=output_activation if last else SINE,
                residual=(index + 1) in residual_layers and not last,
            )
        )
    return MlpParams(layers)


# -------------------
# --- ACTIVATIONS ---
# -------------------


def activate(tag: str, z: np.ndarray, omega: float) -> np.ndarray:
    """Apply an activation to pre-activations."""
    if tag == SINE:
        return np.sin(omega * z)
    if tag == SIGMOID:
        return expit(z)
    if tag == TANHSHRINK:
        return z - np.tanh(z)
    return z


def _derivatives(tag: str, z: np.ndarray, omega: float, order: int = 1):
    """Return the activation, its first and (optionally) second derivative."""
    if tag == SINE:
        arg = omega * z
        a = np.sin(arg)
        da = omega * np.cos(arg)
        d2a = -(omega**2) * a if order > 1 else None
    elif tag == SIGMOID:
        a = expit(z)
        da = a * (1.0 - a)
        d2a = da * (1.0 - 2.0 * a) if order > 1 else None
    elif tag == TANHSHRINK:
        t = np.tanh(z)
        a = z - t
        da = t * t
        d2a = 2.0 * t * (1.0 - t * t) if order > 1 else None
    else:
        a = z
        da = np.ones_like(z)
        d2a = np.zeros_like(z) if order > 1 else None
    return a, da, d2a


# ------------------------
# --- FORWARD/BACKWARD ---
# ------------------------


@dataclass(frozen=True)
class ForwardTape:
    """Cached inputs and pre-activations of one forward call."""

    params_id: int
    version: int
    inputs: tuple[np.ndarray, ...]
    pre: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class JacobianTape:
    """Cached values and tangents of one tangent-carrying forward call."""

    params_id: int
    version: int
    inputs: tuple[np.ndarray, ...]
    tangents: tuple[np.ndarray, ...]
    pre: tuple[np.ndarray, ...]


@dataclass
class GradientBundle:
    """Gradients of a scalar loss with respect to weights, biases and inputs."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    inputs: np.ndarray | None = None

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "GradientBundle":
        """Return an all-zero bundle shaped like `params`."""
        return cls(
            [np.zeros_like(layer.weight) for layer in params.layers],
            [np.zeros_like(layer.bias) for layer in params.layers],
        )

    def accumulate(self, other: "GradientBundle") -> None:
        """Add another bundle in place; input gradients are not accumulated."""
        for mine, theirs in zip(self.weights + self.biases, other.weights + other.biases):
            mine += theirs

    def scale(self, factor: float) -> "GradientBundle":
        """Scale in place and return self."""
        for array in self.weights + self.biases:
            array *= factor
        return self

    def flat(self) -> np.ndarray:
        """All parameter gradients as one vector in checkpoint order."""
        return np.concatenate(
            [np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)]
        )


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ShapeError(f"Expected a (N, {params.in_dim}) batch, got shape {x.shape}")
    return x.astype(params.dtype, copy=False)


def _frozen(array: np.ndarray) -> np.ndarray:
    view = array.view()
    view.setflags(write=False)
    return view


def forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, ForwardTape]:
    """Evaluate the network and record the tape for `backward`."""
    h = _check_input(params, x)
    inputs, pre = [], []
    for layer in params.layers:
        z = h @ layer.weight.T + layer.bias
        inputs.append(_frozen(h))
        pre.append(_frozen(z))
        out = activate(layer.activation, z, layer.omega)
        h = out + h if layer.residual else out
    return h, ForwardTape(id(params), params.version, tuple(inputs), tuple(pre))


def evaluate(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the network without keeping a tape."""
    h = _check_input(params, x)
    for layer in params.layers:
        out = activate(layer.activation, h @ layer.weight.T + layer.bias, layer.omega)
        h = out + h if layer.residual else out
    return h


def _check_tape(params: MlpParams, tape: ForwardTape | JacobianTape) -> None:
    if tape.params_id != id(params) or tape.version != params.version:
        raise TapeMismatchError(
            "Tape was recorded for other parameters or before the last parameter update"
        )
    if len(tape.pre) != len(params.layers):
        raise TapeMismatchError("Tape depth does not match the network")


def backward(params: MlpParams, tape: ForwardTape, upstream: np.ndarray) -> GradientBundle:
    """Reverse-mode gradients given dL/d(output)."""
    _check_tape(params, tape)
    g = np.asarray(upstream, dtype=params.dtype)
    if g.shape != (tape.pre[-1].shape[0], params.out_dim):
        raise ShapeError(f"Upstream gradient has shape {g.shape}")

    weights: list[np.ndarray] = [np.empty(0)] * len(params.layers)
    biases: list[np.ndarray] = [np.empty(0)] * len(params.layers)
    for index in reversed(range(len(params.layers))):
        layer = params.layers[index]
        _, da, _ = _derivatives(layer.activation, tape.pre[index], layer.omega)
        gz = g * da
        weights[index] = gz.T @ tape.inputs[index]
        biases[index] = gz.sum(axis=0)
        g_prev = gz @ layer.weight
        g = g_prev + g if layer.residual else g_prev
    return GradientBundle(weights, biases, g)


def jacobian_forward(
    params: MlpParams, x: np.ndarray, columns: tuple[int, ...] | None = None
) -> tuple[np.ndarray, np.ndarray, JacobianTape]:
    """Evaluate the network together with its input Jacobian.

    Returns the outputs (N, out), the Jacobian (N, out, k) with respect to the k selected
    input columns, and a tape for `jacobian_backward`.
    """
    h = _check_input(params, x)
    cols = tuple(range(params.in_dim)) if columns is None else tuple(columns)
    if any(not 0 <= c < params.in_dim for c in cols):
        raise ShapeError(f"Jacobian columns {cols} outside input dimension {params.in_dim}")

    # tangents are laid out (N, k, width)
    t = np.zeros((h.shape[0], len(cols), params.in_dim), dtype=params.dtype)
    for k, c in enumerate(cols):
        t[:, k, c] = 1.0

    inputs, tangents, pre = [], [], []
    for layer in params.layers:
        z = h @ layer.weight.T + layer.bias
        u = t @ layer.weight.T
        a, da, _ = _derivatives(layer.activation, z, layer.omega)
        inputs.append(_frozen(h))
        tangents.append(_frozen(t))
        pre.append(_frozen(z))
        t_next = u * da[:, None, :]
        h, t = (a + h, t_next + t) if layer.residual else (a, t_next)

    tape = JacobianTape(id(params), params.version, tuple(inputs), tuple(tangents), tuple(pre))
    return h, np.swapaxes(t, 1, 2), tape


def jacobian_backward(
    params: MlpParams,
    tape: JacobianTape,
    upstream_out: np.ndarray | None,
    upstream_jac: np.ndarray | None,
) -> GradientBundle:
    """Reverse-mode gradients of a loss depending on both outputs and input Jacobians.

    `upstream_out` is dL/d(output) (N, out), `upstream_jac` is dL/d(Jacobian) (N, out, k);
    either may be None.
    """
    _check_tape(params, tape)
    n, k = tape.tangents[0].shape[0], tape.tangents[0].shape[1]
    out = params.out_dim
    g = (
        np.zeros((n, out), dtype=params.dtype)
        if upstream_out is None
        else np.asarray(upstream_out, dtype=params.dtype)
    )
    g_t = (
        np.zeros((n, k, out), dtype=params.dtype)
        if upstream_jac is None
        else np.swapaxes(np.asarray(upstream_jac, dtype=params.dtype), 1, 2)
    )
    if g.shape != (n, out) or g_t.shape != (n, k, out):
        raise ShapeError("Upstream gradients do not match the recorded forward pass")

    weights: list[np.ndarray] = [np.empty(0)] * len(params.layers)
    biases: list[np.ndarray] = [np.empty(0)] * len(params.layers)
    for index in reversed(range(len(params.layers))):
        layer = params.layers[index]
        h_prev, t_prev, z = tape.inputs[index], tape.tangents[index], tape.pre[index]
        _, da, d2a = _derivatives(layer.activation, z, layer.omega, order=2)
        u = t_prev @ layer.weight.T
        g_u = g_t * da[:, None, :]
        gz = g * da + (g_t * u).sum(axis=1) * d2a
        weights[index] = gz.T @ h_prev + g_u.reshape(-1, layer.fan_out).T @ t_prev.reshape(
            -1, layer.fan_in
        )
        biases[index] = gz.sum(axis=0)
        g_prev = gz @ layer.weight
        g_t_prev = g_u @ layer.weight
        if layer.residual:
            g_prev, g_t_prev = g_prev + g, g_t_prev + g_t
        g, g_t = g_prev, g_t_prev
    return GradientBundle(weights, biases, g)


def input_jacobian(
    params: MlpParams, x: np.ndarray, columns: tuple[int, ...] | None = None
) -> np.ndarray:
    """Per-point Jacobians d(output)/d(input[columns]), shape (N, out, k)."""
    _, jac, _ = jacobian_forward(params, x, columns)
    return jac


# ------------
# --- ADAM ---
# ------------


@dataclass
class AdamState:
    """Bias-corrected Adam moments for one MlpParams."""

    m_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_weights: list[np.ndarray]
    v_biases: list[np.ndarray]
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0

    @classmethod
    def for_params(
        cls,
        params: MlpParams,
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> "AdamState":
        """Fresh state with zero moments."""
        zeros_w = [np.zeros_like(layer.weight) for layer in params.layers]
        zeros_b = [np.zeros_like(layer.bias) for layer in params.layers]
        return cls(
            m_weights=[z.copy() for z in zeros_w],
            m_biases=[z.copy() for z in zeros_b],
            v_weights=zeros_w,
            v_biases=zeros_b,
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(
    params: MlpParams, state: AdamState, grads: GradientBundle
) -> tuple[MlpParams, AdamState]:
    """Apply one Adam update in place and return the updated params and state."""
    if len(grads.weights) != len(params.layers) or len(state.m_weights) != len(params.layers):
        raise ShapeError("Gradient bundle / optimizer state depth does not match the network")
    for index, layer in enumerate(params.layers):
        gw, gb = grads.weights[index], grads.biases[index]
        if gw.shape != layer.weight.shape or gb.shape != layer.bias.shape:
            raise ShapeError(f"Layer {index}: gradient shape mismatch")
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise TrainingDivergenceError(
                f"Non-finite gradient in layer {index}", layer_index=index
            )

    state.t += 1
    correction1 = 1.0 - state.beta1**state.t
    correction2 = 1.0 - state.beta2**state.t
    for index, layer in enumerate(params.layers):
        for value, grad, m, v in (
            (layer.weight, grads.weights[index], state.m_weights[index], state.v_weights[index]),
            (layer.bias, grads.biases[index], state.m_biases[index], state.v_biases[index]),
        ):
            m *= state.beta1
            m += (1.0 - state.beta1) * grad
            v *= state.beta2
            v += (1.0 - state.beta2) * grad * grad
            value -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    params.version += 1
    return params, state
