#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""Temporal Motion Network (DeformShrink) and Spatial Anatomy Network (SirenRes)."""

import logging
from dataclasses import dataclass

import numpy as np

from constants import CLAMP, PASSTHROUGH, SIGMOID, STRICT, TANHSHRINK
from core.errors import DomainError, InvalidArchitectureError, ShapeError
from managers.nn import MlpParams, evaluate, init_siren

logger = logging.getLogger(__name__)


@dataclass
class TmnModel:
    """Maps (x, y, z, s~) to a displacement in normalized coordinate units."""

    core: MlpParams

    def __post_init__(self):
        if self.core.in_dim != 4 or self.core.out_dim != 3:
            raise InvalidArchitectureError("The motion network maps 4 inputs to 3 outputs")
        if self.core.layers[-1].activation != TANHSHRINK:
            raise InvalidArchitectureError("The motion network ends with tanhshrink")


@dataclass
class SanModel:
    """Maps a canonical-frame coordinate to an intensity in (0, 1)."""

    core: MlpParams

    def __post_init__(self):
        if self.core.in_dim != 3 or self.core.out_dim != 1:
            raise InvalidArchitectureError("The anatomy network maps 3 inputs to 1 output")
        if self.core.layers[-1].activation != SIGMOID:
            raise InvalidArchitectureError("The anatomy network ends with a sigmoid")


def build_tmn(
    depth: int = 4,
    width: int = 256,
    omega0: float = 30.0,
    omega_hidden: float = 1.0,
    seed: int = 0,
    dtype: type = np.float64,
) -> TmnModel:
    """Initialise a DeformShrink network with `depth` hidden sine layers."""
    dims = [4] + [width] * depth + [3]
    return TmnModel(init_siren(dims, omega0, omega_hidden, seed, TANHSHRINK, dtype=dtype))


def build_san(
    depth: int = 4,
    width: int = 512,
    omega0: float = 30.0,
    omega_hidden: float = 1.0,
    seed: int = 0,
    residual_layer: int = 4,
    dtype: type = np.float64,
) -> SanModel:
    """Initialise a SirenRes network.

    The skip connection sits on hidden layer `residual_layer`; shallower networks put it on
    their last hidden layer, and a single hidden layer has none (its input width differs).
    """
    layer = min(residual_layer, depth)
    residual = (layer,) if layer >= 2 else ()
    dims = [3] + [width] * depth + [1]
    return SanModel(init_siren(dims, omega0, omega_hidden, seed, SIGMOID, residual, dtype))


def check_states(s_tilde: float | np.ndarray, policy: str = STRICT) -> np.ndarray | float:
    """Apply the out-of-range policy to network states on the [-1, 1] scale."""
    values = np.asarray(s_tilde, dtype=np.float64)
    outside = (values < -1.0) | (values > 1.0)
    if not np.any(outside) or policy == PASSTHROUGH:
        return s_tilde
    if policy == CLAMP:
        logger.warning(f"Clamping {int(np.sum(outside))} state value(s) outside [-1, 1]")
        clipped = np.clip(values, -1.0, 1.0)
        return float(clipped) if clipped.ndim == 0 else clipped
    raise DomainError(f"Respiratory state outside [-1, 1]: {values[outside].ravel()[:3]}")


def motion_input(x: np.ndarray, s_tilde: float | np.ndarray) -> np.ndarray:
    """Concatenate coordinates with their state (scalar or one per point)."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != 3:
        raise ShapeError(f"Coordinates must have shape (N, 3), got {x.shape}")
    s = np.broadcast_to(np.asarray(s_tilde, dtype=x.dtype), (x.shape[0],))
    return np.column_stack([x, s])


def tmn_displacement(
    model: TmnModel, x: np.ndarray, s_tilde: float | np.ndarray, policy: str = STRICT
) -> np.ndarray:
    """Phi(x, s) = tanhshrink(SIREN(x, s~))."""
    s_tilde = check_states(s_tilde, policy)
    return evaluate(model.core, motion_input(x, s_tilde))


def warp(x: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Pull coordinates back to the reference frame, x_ref = x + Phi."""
    if np.shape(x) != np.shape(phi):
        raise ShapeError(f"Coordinates {np.shape(x)} and displacements {np.shape(phi)} differ")
    return x + phi


def san_intensity(model: SanModel, x_ref: np.ndarray) -> np.ndarray:
    """Canonical intensity at reference-frame coordinates, shape (N,)."""
    return evaluate(model.core, x_ref)[:, 0]


def predict_intensity(
    tmn: TmnModel,
    san: SanModel,
    x: np.ndarray,
    s_tilde: float | np.ndarray,
    policy: str = STRICT,
) -> np.ndarray:
    """I(x, s) = SAN(x + TMN(x, s))."""
    return san_intensity(san, warp(x, tmn_displacement(tmn, x, s_tilde, policy)))
