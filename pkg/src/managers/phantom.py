#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""Analytic 4D thorax phantom: anatomy, ground-truth breathing motion and breathing signal.

Physical positions are in mm with the origin at the volume center; axis 0 runs left-right,
axis 1 anterior-posterior and axis 2 superior (negative) to inferior (positive). Voxel
(i, j, k) sits at (index - (n - 1) / 2) * spacing.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import expit

from common.utils import WithLogging, derive_rng
from constants import (
    BACKGROUND_INTENSITY,
    BODY_INTENSITY,
    LIVER_INTENSITY,
    LUNG_INTENSITY,
    N_LANDMARKS,
    VESSEL_INTENSITY,
)
from core.domain import BreathSpec, GroundTruthMotion, PhantomSpec, VolumeGrid
from core.errors import DomainError

# smoothing length of the dome-height clamp in the displacement decay, mm
_APEX_SOFTNESS = 10.0
# normalized body radius where the displacement starts fading to zero
_BODY_FADE_START = 0.5


@dataclass(frozen=True)
class Vessel:
    """A straight tubular vessel segment."""

    start: np.ndarray
    end: np.ndarray
    radius: float

    @property
    def midpoint(self) -> np.ndarray:
        """Center of the segment."""
        return (self.start + self.end) / 2.0


def smootherstep(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """C2 ramp from 0 (u <= 0) to 1 (u >= 1) and its derivative."""
    u = np.clip(u, 0.0, 1.0)
    return u**3 * (u * (6.0 * u - 15.0) + 10.0), 30.0 * u**2 * (1.0 - u) ** 2


def _coverage(signed_distance: np.ndarray, band: float, antialias: bool) -> np.ndarray:
    """Fraction of a primitive covering a point, from its signed distance (negative inside)."""
    if not antialias:
        return (signed_distance < 0).astype(np.float64)
    return np.clip(0.5 - signed_distance / band, 0.0, 1.0)


def _over(below: np.ndarray, value: float, coverage: np.ndarray) -> np.ndarray:
    return below * (1.0 - coverage) + value * coverage


class PhantomManager(WithLogging):
    """Renders the thorax phantom and its analytic deformation."""

    def __init__(self, spec: PhantomSpec, motion: GroundTruthMotion, antialias: bool = True):
        self.spec = spec
        self.motion = motion
        self.antialias = antialias
        e = spec.half_extent
        self.band = float(min(spec.spacing))

        self.body_center = np.zeros(3)
        self.body_axes = np.array([0.9, 0.75, 0.95]) * e
        self.lung_axes = np.array([0.3, 0.5, 0.55]) * e
        self.lung_centers = [np.array([side * 0.4 * e[0], 0.0, -0.15 * e[2]]) for side in (-1, 1)]
        # the right side (negative x) carries the liver
        self.liver_center = np.array([-0.35 * e[0], 0.0, 0.1 * e[2]])
        self.liver_axes = np.array([0.45, 0.6, 0.6]) * e
        self.dome_apex_z = 0.1 * e[2]
        self.dome_radius = 0.8 * e[0]
        self.lung_top_z = self.lung_centers[0][2] - self.lung_axes[2]

    # ----------------
    # --- ANATOMY ---
    # ----------------

    def voxel_positions(self, index: np.ndarray) -> np.ndarray:
        """Physical positions (mm) of fractional voxel indices, shape (N, 3)."""
        dims = np.asarray(self.spec.dims, dtype=np.float64)
        return (np.asarray(index, dtype=np.float64) - (dims - 1.0) / 2.0) * np.asarray(
            self.spec.spacing
        )

    def position_index(self, points: np.ndarray) -> np.ndarray:
        """Fractional voxel indices of physical positions."""
        dims = np.asarray(self.spec.dims, dtype=np.float64)
        return np.asarray(points) / np.asarray(self.spec.spacing) + (dims - 1.0) / 2.0

    def dome_z(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Height of the diaphragm dome surface under (x, y)."""
        lateral = np.abs(x) - abs(self.lung_centers[0][0])
        return self.dome_apex_z + (lateral**2 + y**2) / (2.0 * self.dome_radius)

    @property
    def diaphragm_apex(self) -> np.ndarray:
        """Top of the right diaphragm dome, above the liver."""
        return np.array([self.lung_centers[0][0], 0.0, self.dome_apex_z])

    @cached_property
    def vessels(self) -> list[Vessel]:
        """Branching vessel tree of both lungs, seeded by the phantom spec."""
        rng = derive_rng(self.spec.seed, 7)
        e = self.spec.half_extent
        voxel = min(self.spec.spacing)
        length = 0.27 * e[2]
        vessels = []
        for center in self.lung_centers:
            side = np.sign(center[0])
            root = np.array([side * 0.25 * e[0], 0.0, -0.3 * e[2]])
            n = self.spec.vessel_trunks
            for trunk in range(n):
                spread = -0.6 + 1.2 * trunk / (n - 1)
                direction = np.array([side * 0.25, spread, 0.76]) + rng.uniform(-0.05, 0.05, 3)
                direction /= np.linalg.norm(direction)
                end = root + length * direction
                vessels.append(Vessel(root, end, 2.0 * voxel))
                for turn in (-0.3, 0.3):
                    child = direction + np.array([side * 0.1, turn, 0.0])
                    child += rng.uniform(-0.05, 0.05, 3)
                    child /= np.linalg.norm(child)
                    radius = voxel * rng.uniform(1.0, 1.5)
                    vessels.append(Vessel(end, end + 0.8 * length * child, radius))
        return vessels

    def _ellipsoid_distance(self, p: np.ndarray, center: np.ndarray, axes: np.ndarray):
        """Approximate signed distance to an ellipsoid surface, mm."""
        rho = np.sqrt((((p - center) / axes) ** 2).sum(axis=1))
        return (rho - 1.0) * axes.min()

    def _vessel_distance(self, p: np.ndarray) -> np.ndarray:
        best = np.full(p.shape[0], np.inf)
        for vessel in self.vessels:
            axis = vessel.end - vessel.start
            t = np.clip(((p - vessel.start) @ axis) / (axis @ axis), 0.0, 1.0)
            closest = vessel.start + t[:, None] * axis[None, :]
            best = np.minimum(best, np.linalg.norm(p - closest, axis=1) - vessel.radius)
        return best

    def anatomy_at(self, points: np.ndarray, antialias: bool = True) -> np.ndarray:
        """Static anatomy intensity at physical positions (N, 3), in [0, 1]."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        band = self.band
        value = np.full(p.shape[0], BACKGROUND_INTENSITY)

        body = _coverage(
            self._ellipsoid_distance(p, self.body_center, self.body_axes), band, antialias
        )
        value = _over(value, BODY_INTENSITY, body)

        liver = _coverage(
            self._ellipsoid_distance(p, self.liver_center, self.liver_axes), band, antialias
        ) * _coverage(self.liver_center[2] - p[:, 2], band, antialias)
        value = _over(value, LIVER_INTENSITY, liver * body)

        # diaphragm: logistic transition of width w_d across the dome surface
        dome = self.dome_z(p[:, 0], p[:, 1])
        above = expit(4.0 * (dome - p[:, 2]) / self.spec.diaphragm_width_mm)
        lung_shape = np.maximum.reduce(
            [
                _coverage(self._ellipsoid_distance(p, c, self.lung_axes), band, antialias)
                for c in self.lung_centers
            ]
        )
        value = _over(value, LUNG_INTENSITY, lung_shape * above)

        vessel = _coverage(self._vessel_distance(p), band, antialias)
        return _over(value, VESSEL_INTENSITY, vessel * lung_shape * above)

    # --------------
    # --- MOTION ---
    # --------------

    def _profile(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Displacement profile g(x) and its gradient.

        g is 1 at the dome apex level, decays exponentially toward the lung apex where it
        reaches 0, and fades to 0 at the body surface.
        """
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        eps, decay = _APEX_SOFTNESS, self.motion.decay_length_mm

        h = self.dome_apex_z - p[:, 2]
        root = np.sqrt(h * h + eps * eps)
        height = 0.5 * (h + root - eps)
        dheight_dz = -0.5 * (1.0 + h / root)
        expo = np.exp(-height / decay)
        dexpo_dz = -expo / decay * dheight_dz

        span = self.dome_apex_z - self.lung_top_z
        apex, dapex = smootherstep((p[:, 2] - self.lung_top_z) / span)
        dapex_dz = dapex / span

        rel = (p - self.body_center) / self.body_axes
        rho = np.sqrt((rel**2).sum(axis=1))
        fade, dfade = smootherstep((rho - _BODY_FADE_START) / (1.0 - _BODY_FADE_START))
        body = 1.0 - fade
        safe_rho = np.where(rho > 0, rho, 1.0)
        dbody = (-dfade / (1.0 - _BODY_FADE_START) / safe_rho)[:, None] * rel / self.body_axes

        g = expo * apex * body
        grad = (expo * apex)[:, None] * dbody
        grad[:, 2] += body * (dexpo_dz * apex + expo * dapex_dz)
        return g, grad

    def _check_amplitude(self, amplitude: float) -> None:
        if not 0.0 <= amplitude <= 1.0:
            raise DomainError(f"Breathing amplitude {amplitude} outside [0, 1]")

    def gt_displacement(self, points: np.ndarray, amplitude: float) -> np.ndarray:
        """Pull-back displacement Phi_gt(x, a) in mm, shape (N, 3)."""
        self._check_amplitude(amplitude)
        g, _ = self._profile(points)
        scale = amplitude * self.motion.peak_displacement_mm * g
        return np.column_stack([self.motion.ap_coupling * scale, np.zeros_like(g), scale])

    def gt_jacobian(self, points: np.ndarray, amplitude: float) -> np.ndarray:
        """Analytic Jacobian d(x + Phi_gt)/dx, shape (N, 3, 3)."""
        self._check_amplitude(amplitude)
        _, grad = self._profile(points)
        direction = np.array([self.motion.ap_coupling, 0.0, 1.0])
        jac = amplitude * self.motion.peak_displacement_mm * direction[None, :, None] * grad[
            :, None, :
        ]
        return jac + np.eye(3)[None, :, :]

    # -----------------
    # --- RENDERING ---
    # -----------------

    def render_points(self, index: np.ndarray, amplitude: float) -> np.ndarray:
        """Intensity of the breathing phantom at voxel indices (N, 3)."""
        points = self.voxel_positions(index)
        warped = points + self.gt_displacement(points, amplitude)
        return self.anatomy_at(warped, antialias=self.antialias)

    def _plane_indices(self, axis: int, position: int) -> np.ndarray:
        dims = list(self.spec.dims)
        others = [d for d in range(3) if d != axis]
        grid = np.meshgrid(
            np.arange(dims[others[0]]), np.arange(dims[others[1]]), indexing="ij"
        )
        index = np.empty((grid[0].size, 3))
        index[:, axis] = position
        index[:, others[0]] = grid[0].ravel()
        index[:, others[1]] = grid[1].ravel()
        return index

    def render_plane(self, axis: int, position: int, amplitude: float) -> np.ndarray:
        """Render one plane perpendicular to `axis` (1: coronal, 0: sagittal)."""
        dims = list(self.spec.dims)
        shape = tuple(d for i, d in enumerate(dims) if i != axis)
        return self.render_points(self._plane_indices(axis, position), amplitude).reshape(shape)

    def render_volume(self, amplitude: float) -> VolumeGrid:
        """Render the full volume at a breathing amplitude, one coronal plane at a time."""
        self._check_amplitude(amplitude)
        nx, ny, nz = self.spec.dims
        data = np.empty((nx, ny, nz))
        for j in range(ny):
            data[:, j, :] = self.render_plane(1, j, amplitude)
        self.logger.debug(f"Rendered phantom volume at amplitude {amplitude:.4f}")
        return VolumeGrid(data, self.spec.spacing, float(amplitude), self.spec.seed)

    # ------------------------
    # --- TRACKER HELPERS ---
    # ------------------------

    @property
    def navigator_position(self) -> int:
        """x index of the sagittal navigator, lateral to the right-lung vessels."""
        center = self.lung_centers[0][0] - 0.6 * self.lung_axes[0]
        return int(round(float(self.position_index(np.array([[center, 0.0, 0.0]]))[0, 0])))

    def navigator_roi(self) -> tuple[int, int]:
        """Row (z index) range bracketing the lung-liver interface over the motion range."""
        x = self.lung_centers[0][0] - 0.6 * self.lung_axes[0]
        y = 0.35 * self.lung_axes[1]
        top = self.dome_apex_z - 1.1 * self.motion.peak_displacement_mm - 2 * self.spec.spacing[2]
        bottom = float(self.dome_z(np.array(x), np.array(y))) + 3 * self.spec.spacing[2]
        rows = self.position_index(np.array([[0.0, 0.0, top], [0.0, 0.0, bottom]]))[:, 2]
        nz = self.spec.dims[2]
        return max(int(np.floor(rows[0])), 1), min(int(np.ceil(rows[1])), nz - 2)

    def landmark_columns(self, count: int = N_LANDMARKS) -> tuple[int, ...]:
        """Evenly spaced navigator columns (y indices) across the right-lung base."""
        half = 0.35 * self.lung_axes[1]
        ys = np.linspace(-half, half, count)
        points = np.column_stack([np.zeros(count), ys, np.zeros(count)])
        return tuple(int(round(float(v))) for v in self.position_index(points)[:, 1])


def breathing_signal(breath: BreathSpec) -> tuple[np.ndarray, np.ndarray]:
    """Irregular breathing amplitude a(t) in [0, 1] sampled every `sample_interval_s`.

    Each cycle k is a raised cosine of period T_k and depth d_k drawn from the jitter laws; a
    slow sinusoidal baseline drift is added and the result clipped to [0, 1].
    """
    rng = derive_rng(breath.seed, 11)
    n = int(np.floor(breath.duration_s / breath.sample_interval_s + 1e-9)) + 1
    t = np.arange(n) * breath.sample_interval_s

    starts, periods, depths = [0.0], [], []
    while starts[-1] <= t[-1]:
        periods.append(breath.period_s * (1.0 + breath.period_jitter * rng.uniform(-1.0, 1.0)))
        depths.append(1.0 - breath.depth_jitter * rng.uniform(0.0, 1.0))
        starts.append(starts[-1] + periods[-1])

    cycle = np.searchsorted(np.asarray(starts), t, side="right") - 1
    phase = (t - np.asarray(starts)[cycle]) / np.asarray(periods)[cycle]
    a = np.asarray(depths)[cycle] * (1.0 - np.cos(2.0 * np.pi * phase)) / 2.0
    drift = breath.drift_amplitude * np.sin(2.0 * np.pi * t / (7.3 * breath.period_s))
    return t, np.clip(a + drift, 0.0, 1.0)
