#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""Photometric L1 term and Jacobian-determinant volume-preservation penalty."""

import numpy as np

from constants import STRICT
from core.domain import LossReport
from core.errors import EmptyInputError, ShapeError
from managers.networks import SanModel, TmnModel, check_states, motion_input
from managers.nn import GradientBundle, backward, forward, jacobian_backward, jacobian_forward

SPATIAL = (0, 1, 2)


def photometric_l1(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean absolute intensity error."""
    pred, gt = np.ravel(pred), np.ravel(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"Prediction {pred.shape} and ground truth {gt.shape} differ")
    if pred.size == 0:
        raise EmptyInputError("Mean of an empty batch is undefined")
    return float(np.mean(np.abs(pred - gt)))


def det3(jac: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Determinants and cofactor matrices of a stack of 3x3 matrices."""
    r0, r1, r2 = jac[:, 0, :], jac[:, 1, :], jac[:, 2, :]
    cof = np.stack([np.cross(r1, r2), np.cross(r2, r0), np.cross(r0, r1)], axis=1)
    return np.einsum("nj,nj->n", r0, cof[:, 0, :]), cof


def jacdet_terms(phi_jac: np.ndarray) -> tuple[float, np.ndarray]:
    """Penalty mean|1 - det(I + dPhi/dx)| and its gradient with respect to dPhi/dx."""
    n = phi_jac.shape[0]
    if n == 0:
        raise EmptyInputError("Mean of an empty batch is undefined")
    det, cof = det3(np.eye(3) + phi_jac)
    gap = 1.0 - det
    grad = -(np.sign(gap) / n)[:, None, None] * cof
    return float(np.mean(np.abs(gap))), grad


def jacdet_penalty(tmn: TmnModel, x: np.ndarray, s_tilde: float | np.ndarray) -> float:
    """Volume-preservation penalty of the map x -> x + Phi(x, s)."""
    _, phi_jac, _ = jacobian_forward(tmn.core, motion_input(x, s_tilde), SPATIAL)
    return jacdet_terms(phi_jac)[0]


def total_loss(
    tmn: TmnModel,
    san: SanModel,
    x: np.ndarray,
    s_tilde: float | np.ndarray,
    gt: np.ndarray,
    lam: float,
    policy: str = STRICT,
) -> tuple[LossReport, GradientBundle, GradientBundle]:
    """Evaluate L_photo + lam * L_jacdet and its gradients for both networks.

    The Jacobian penalty is evaluated on the same coordinates as the photometric term; the
    anatomy network only receives gradients from the photometric term.
    """
    s_tilde = check_states(s_tilde, policy)
    gt = np.ravel(gt)
    if gt.shape[0] != np.shape(x)[0]:
        raise ShapeError("Ground truth and coordinates have different lengths")

    phi, phi_jac, tmn_tape = jacobian_forward(tmn.core, motion_input(x, s_tilde), SPATIAL)
    pred, san_tape = forward(san.core, x + phi)
    pred = pred[:, 0]

    l_photo = photometric_l1(pred, gt)
    l_jacdet, g_jac = jacdet_terms(phi_jac)
    report = LossReport.build(l_photo, l_jacdet, lam, int(gt.shape[0]))

    g_pred = (np.sign(pred - gt) / gt.shape[0])[:, None]
    san_grads = backward(san.core, san_tape, g_pred)
    tmn_grads = jacobian_backward(tmn.core, tmn_tape, san_grads.inputs, lam * g_jac)
    return report, tmn_grads, san_grads
