#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""Volume reconstruction from the trained networks and the amplitude-sorting baseline."""

import math
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from common.utils import WithLogging, normalized_axis
from constants import BIN_MEAN, EVAL_BLOCK, NORM01, PASSTHROUGH, VOXEL_UNITS
from core.domain import (
    GapReport,
    ModelManifest,
    ReconRequest,
    SliceDataset,
    SliceRecord,
    SortingConfig,
    SurrogateSignal,
    VolumeGrid,
)
from core.errors import EmptyInputError, GeometryError
from managers.acquisition import sample_points
from managers.networks import (
    SanModel,
    TmnModel,
    check_states,
    predict_intensity,
    san_intensity,
    tmn_displacement,
    warp,
)
from managers.surrogate import respiratory_phase

BASELINE_NOTE = (
    "Sorting baseline: slices binned by surrogate state and stacked, no deformable registration"
)


def grid_coordinates(dims: tuple[int, int, int]) -> np.ndarray:
    """Normalized coordinates of every voxel center, in C order of an [x, y, z] volume."""
    axes = [normalized_axis(n) for n in dims]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def displacement_scale(manifest: ModelManifest | None, dims: tuple[int, int, int]) -> np.ndarray:
    """Per-axis factor taking network displacements to coordinate units."""
    if manifest is not None and manifest.displacement_units == VOXEL_UNITS:
        return 2.0 / np.asarray(dims, dtype=np.float64)
    return np.ones(3)


class Reconstructor(WithLogging):
    """Evaluates the composed model on coordinate sets in fixed-size blocks.

    Network calls always see the same EVAL_BLOCK-aligned rows, so the requested batch size only
    groups blocks into chunks and never changes the numbers.
    """

    def __init__(
        self,
        tmn: TmnModel,
        san: SanModel,
        manifest: ModelManifest | None = None,
        workers: int = 1,
    ):
        self.tmn = tmn
        self.san = san
        self.manifest = manifest
        self.workers = workers

    def _predict_block(self, x: np.ndarray, s_tilde, scale: np.ndarray) -> np.ndarray:
        if np.all(scale == 1.0):
            return predict_intensity(self.tmn, self.san, x, s_tilde, policy=PASSTHROUGH)
        phi = tmn_displacement(self.tmn, x, s_tilde, policy=PASSTHROUGH) * scale
        return san_intensity(self.san, warp(x, phi))

    def predict(
        self,
        x: np.ndarray,
        s_tilde: float | np.ndarray,
        dims: tuple[int, int, int],
        batch_size: int = EVAL_BLOCK,
    ) -> np.ndarray:
        """Intensities of the composed model at coordinates x with already checked states."""
        n = x.shape[0]
        chunk = EVAL_BLOCK * max(1, math.ceil(batch_size / EVAL_BLOCK))
        scale = displacement_scale(self.manifest, dims)
        states = np.asarray(s_tilde, dtype=np.float64)

        def run(start: int) -> np.ndarray:
            stop = min(start + chunk, n)
            parts = []
            for lo in range(start, stop, EVAL_BLOCK):
                hi = min(lo + EVAL_BLOCK, stop)
                s = states if states.ndim == 0 else states[lo:hi]
                parts.append(self._predict_block(x[lo:hi], s, scale))
            self.logger.debug(f"Evaluated points {start}:{stop}")
            return np.concatenate(parts) if parts else np.empty(0)

        starts = list(range(0, n, chunk))
        if self.workers > 1 and len(starts) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(run, starts))
        else:
            results = [run(start) for start in starts]
        return np.concatenate(results) if results else np.empty(0)

    def _check_geometry(self, dims, spacing) -> None:
        if self.manifest is None:
            return
        if tuple(dims) != tuple(self.manifest.dims) or not np.allclose(
            spacing, self.manifest.spacing
        ):
            raise GeometryError(
                f"Requested grid {tuple(dims)} / {tuple(spacing)} does not match the trained "
                f"geometry {self.manifest.dims} / {self.manifest.spacing}"
            )

    def reconstruct(self, req: ReconRequest) -> VolumeGrid:
        """Render the full volume at one respiratory state."""
        self._check_geometry(req.dims, req.spacing)
        s_tilde = check_states(req.s_tilde, req.policy)
        values = self.predict(grid_coordinates(req.dims), s_tilde, req.dims, req.batch_size)
        state = (float(s_tilde) + 1.0) / 2.0 if req.scale == NORM01 else float(s_tilde)
        return VolumeGrid(values.reshape(req.dims), tuple(req.spacing), amplitude=state)

    def reconstruct_series(
        self, requests: list[ReconRequest]
    ) -> tuple[list[VolumeGrid], list[float]]:
        """Reconstruct several states, recording the wall time of each volume in seconds."""
        volumes, times = [], []
        for req in requests:
            start = time.perf_counter()
            volumes.append(self.reconstruct(req))
            times.append(time.perf_counter() - start)
            self.logger.info(f"Reconstructed state {req.state:.4f} in {times[-1]:.3f}s")
        return volumes, times

    def predict_slice(
        self, record: SliceRecord, dims: tuple[int, int, int], s_tilde: float, policy: str
    ) -> np.ndarray:
        """Render the plane of a record at a state, at its pixel centers."""
        s_tilde = check_states(s_tilde, policy)
        coords, _ = sample_points(record, 0, 0, dims, dense=True)
        return self.predict(coords, s_tilde, dims).reshape(record.pixels.shape)


def reconstruct(
    tmn: TmnModel, san: SanModel, req: ReconRequest, manifest: ModelManifest | None = None
) -> VolumeGrid:
    """Reconstruct one volume with a single-threaded reconstructor."""
    return Reconstructor(tmn, san, manifest).reconstruct(req)


def reconstruct_series(
    tmn: TmnModel,
    san: SanModel,
    requests: list[ReconRequest],
    manifest: ModelManifest | None = None,
) -> tuple[list[VolumeGrid], list[float]]:
    """Reconstruct a list of states with per-volume wall times."""
    return Reconstructor(tmn, san, manifest).reconstruct_series(requests)


# ----------------
# --- BASELINE ---
# ----------------


def bin_of(value: float, n_bins: int) -> int:
    """Bin of a [0, 1] value; values outside fall into the end bins."""
    return int(min(max(math.floor(value * n_bins), 0), n_bins - 1))


def bin_center(bin_index: int, n_bins: int) -> float:
    """Center of a bin on the [0, 1] scale."""
    return (bin_index + 0.5) / n_bins


def fill_between_planes(
    planes: dict[int, np.ndarray], dims: tuple[int, int, int]
) -> np.ndarray:
    """Stack coronal planes at their y positions and fill other rows linearly along y."""
    if not planes:
        raise EmptyInputError("No coronal planes to stack")
    positions = np.array(sorted(planes))
    stack = np.stack([planes[p] for p in positions], axis=1)
    data = np.empty(dims)
    for y in range(dims[1]):
        k = int(np.searchsorted(positions, y))
        if k < len(positions) and positions[k] == y:
            data[:, y, :] = stack[:, k, :]
        elif k == 0:
            data[:, y, :] = stack[:, 0, :]
        elif k == len(positions):
            data[:, y, :] = stack[:, -1, :]
        else:
            lo, hi = positions[k - 1], positions[k]
            w = (y - lo) / (hi - lo)
            data[:, y, :] = (1.0 - w) * stack[:, k - 1, :] + w * stack[:, k, :]
    return data


class SortingBaseline(WithLogging):
    """Conventional respiratory binning and slice stacking."""

    def __init__(self, dataset: SliceDataset, signal: SurrogateSignal, cfg: SortingConfig):
        self.cfg = cfg
        self.dims = dataset.dims
        self.spacing = dataset.spacing
        coronals = [r for r in dataset.coronals if signal.covers(r.timestamp)]
        if not coronals:
            raise EmptyInputError("No coronal slices inside the surrogate span to sort")
        skipped = len(dataset.coronals) - len(coronals)
        if skipped:
            self.logger.debug(f"Skipped {skipped} coronal slices outside the surrogate span")
        self.signal = signal
        self.records = coronals
        self.values = self.values_for([r.timestamp for r in coronals])

    def values_for(self, timestamps: list[float]) -> np.ndarray:
        """Sorting values (norm01 amplitude or phase) at timestamps."""
        if self.cfg.bin_mode == "phase":
            return respiratory_phase(self.signal, np.asarray(timestamps, dtype=np.float64))
        return np.array([self.signal.value_at(t, NORM01) for t in timestamps])

    def distance(self, value: float, center: float) -> float:
        """Distance of a sorting value to a bin center; phase wraps around."""
        if self.cfg.bin_mode == "phase":
            d = abs(value - center) % 1.0
            return min(d, 1.0 - d)
        return abs(value - center)

    def bin_for(self, value: float) -> int:
        """Bin index of a sorting value."""
        return bin_of(value, self.cfg.n_bins)

    def reconstruct(self, bin_index: int) -> tuple[VolumeGrid, GapReport]:
        """Stack, for each coronal position, the slice closest to the bin center.

        With the mean statistic the in-bin slices of a position are averaged instead.
        """
        if not 0 <= bin_index < self.cfg.n_bins:
            raise GeometryError(f"Bin {bin_index} outside [0, {self.cfg.n_bins})")
        center = bin_center(bin_index, self.cfg.n_bins)
        report = GapReport(bin_index, center)
        planes = {}
        for position in sorted({r.plane_position for r in self.records}):
            candidates = [k for k, r in enumerate(self.records) if r.plane_position == position]
            in_bin = [k for k in candidates if self.bin_for(self.values[k]) == bin_index]
            pool = in_bin or candidates
            best = min(pool, key=lambda k: (self.distance(self.values[k], center), k))
            if not in_bin:
                report.borrowed[position] = float(self.values[best])
            if in_bin and self.cfg.statistic == BIN_MEAN:
                planes[position] = np.mean([self.records[k].pixels for k in in_bin], axis=0)
            else:
                planes[position] = self.records[best].pixels
        if not report.empty:
            self.logger.warning(
                f"Bin {bin_index}: borrowed slices for {len(report.borrowed)} position(s)"
            )
        data = fill_between_planes(planes, self.dims)
        return VolumeGrid(data, self.spacing, amplitude=center), report


def reconstruct_baseline(
    dataset: SliceDataset, signal: SurrogateSignal, cfg: SortingConfig, bin_index: int
) -> tuple[VolumeGrid, GapReport]:
    """Amplitude (or phase) sorted volume of one bin and its gap report."""
    if len(dataset) == 0:
        raise EmptyInputError("Cannot sort an empty dataset")
    return SortingBaseline(dataset, signal, cfg).reconstruct(bin_index)


def maximum_intensity_projection(volume: VolumeGrid) -> np.ndarray:
    """MIP over the anterior-posterior axis, oriented with z as rows for display."""
    return volume.mip().T
