#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""Interleaved cine acquisition simulator, temporal split and coordinate sampling."""

import math
from dataclasses import replace
from fractions import Fraction

import numpy as np

from common.utils import WithLogging, derive_rng, to_normalized
from constants import CORONAL, DEFAULT_TRAIN_FRACTION, NAVIGATOR
from core.domain import BreathSpec, SliceDataset, SliceRecord
from core.errors import ConfigurationError, EmptyInputError, GeometryError
from managers.phantom import PhantomManager, breathing_signal

# validation amplitudes should span this share of the training range
MIN_VALIDATION_COVERAGE = 0.6

# (fixed axis, pixel row axis, pixel column axis) per slice kind
PLANE_AXES = {CORONAL: (1, 0, 2), NAVIGATOR: (0, 1, 2)}


class AcquisitionManager(WithLogging):
    """Acquires alternating coronal stack and sagittal navigator slices from the phantom."""

    def __init__(
        self,
        phantom: PhantomManager,
        breath: BreathSpec,
        navigator_position: int | None = None,
    ):
        self.phantom = phantom
        self.breath = breath
        self.navigator_position = (
            phantom.navigator_position if navigator_position is None else navigator_position
        )

    def coronal_positions(self, n_coronal_positions: int) -> list[int]:
        """Evenly spread y indices of the coronal stack."""
        ny = self.phantom.spec.dims[1]
        if not 1 <= n_coronal_positions <= ny:
            raise ConfigurationError(
                f"{n_coronal_positions} coronal positions do not fit a grid with ny={ny}"
            )
        positions = np.round(np.linspace(0, ny - 1, n_coronal_positions)).astype(int)
        return [int(p) for p in positions]

    def acquire(
        self,
        n_coronal_positions: int,
        n_sweeps: int,
        train_fraction: Fraction = DEFAULT_TRAIN_FRACTION,
    ) -> SliceDataset:
        """Simulate `n_sweeps` passes of the coronal stack, each slice followed by a navigator."""
        nx = self.phantom.spec.dims[0]
        if not 0 <= self.navigator_position < nx:
            raise ConfigurationError(
                f"Navigator position {self.navigator_position} outside [0, {nx})"
            )
        if n_sweeps <= 0:
            raise ConfigurationError("n_sweeps must be positive")

        positions = self.coronal_positions(n_coronal_positions)
        n_records = 2 * n_coronal_positions * n_sweeps
        dt = self.breath.sample_interval_s
        breath = replace(self.breath, duration_s=(n_records - 1) * dt)
        _, amplitudes = breathing_signal(breath)

        records = []
        for i in range(n_records):
            a = float(amplitudes[i])
            if i % 2 == 0:
                kind, position = CORONAL, positions[(i // 2) % n_coronal_positions]
                pixels = self.phantom.render_plane(1, position, a)
            else:
                kind, position = NAVIGATOR, self.navigator_position
                pixels = self.phantom.render_plane(0, position, a)
            records.append(SliceRecord(i, kind, position, i * dt, pixels, a))
            if i % 100 == 0:
                self.logger.debug(f"Acquired record {i}/{n_records}")

        dataset = SliceDataset(
            records=records,
            dims=self.phantom.spec.dims,
            spacing=self.phantom.spec.spacing,
            split_index=split_boundary(n_records, train_fraction),
        )
        self.logger.info(
            f"Acquired {n_records} records over {n_coronal_positions} coronal positions, "
            f"navigator at x={self.navigator_position}"
        )
        train, val = split(dataset, train_fraction)
        coverage = amplitude_coverage(train, val)
        if coverage < MIN_VALIDATION_COVERAGE:
            self.logger.warning(
                f"Validation amplitudes span only {coverage:.0%} of the training range"
            )
        return dataset


def split_boundary(n: int, fraction: Fraction | float) -> int:
    """Index of the first validation record."""
    fraction = Fraction(fraction)
    if not 0 < fraction < 1:
        raise ConfigurationError(f"Split fraction {fraction} outside (0, 1)")
    return math.floor(fraction * n)


def split(
    dataset: SliceDataset, fraction: Fraction | float = DEFAULT_TRAIN_FRACTION
) -> tuple[SliceDataset, SliceDataset]:
    """Temporal prefix/suffix split at floor(fraction * n)."""
    if len(dataset) == 0:
        raise EmptyInputError("Cannot split an empty dataset")
    boundary = split_boundary(len(dataset), fraction)
    return dataset.with_records(dataset.records[:boundary]), dataset.with_records(
        dataset.records[boundary:]
    )


def amplitude_coverage(train: SliceDataset, val: SliceDataset) -> float:
    """Share of the training amplitude range spanned by the validation amplitudes."""
    a_train = np.array([r.amplitude_gt for r in train.records])
    a_val = np.array([r.amplitude_gt for r in val.records])
    if a_train.size == 0 or a_val.size == 0:
        return 0.0
    span = np.nanmax(a_train) - np.nanmin(a_train)
    if not span > 0:
        return 1.0
    return float((np.nanmax(a_val) - np.nanmin(a_val)) / span)


def plane_coordinates(
    record: SliceRecord, dims: tuple[int, int, int], rows: np.ndarray, cols: np.ndarray
) -> np.ndarray:
    """Normalized 3D coordinates of pixel centers (rows, cols) of a slice."""
    fixed, row_axis, col_axis = PLANE_AXES[record.kind]
    if not 0 <= record.plane_position < dims[fixed]:
        raise GeometryError(
            f"Record {record.index} plane position {record.plane_position} outside the grid"
        )
    if record.pixels.shape != (dims[row_axis], dims[col_axis]):
        raise GeometryError(
            f"Record {record.index} has {record.pixels.shape} pixels, grid expects "
            f"{(dims[row_axis], dims[col_axis])}"
        )
    coords = np.empty((np.size(rows), 3))
    coords[:, fixed] = to_normalized(record.plane_position, dims[fixed])
    coords[:, row_axis] = to_normalized(rows, dims[row_axis])
    coords[:, col_axis] = to_normalized(cols, dims[col_axis])
    return coords


def sample_points(
    record: SliceRecord,
    n: int,
    seed: int,
    dims: tuple[int, int, int],
    dense: bool = False,
    step: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw pixel centers of a slice uniformly with replacement.

    The stream is derived from (seed, record index, step). With `dense`, every pixel is
    returned exactly once in row-major order and `n` is ignored.
    """
    pixels = record.pixels
    if pixels.size == 0:
        raise EmptyInputError(f"Record {record.index} has no pixels")
    if dense:
        flat = np.arange(pixels.size)
    else:
        if n <= 0:
            raise ConfigurationError("Number of sampled points must be positive")
        flat = derive_rng(seed, record.index, step).integers(0, pixels.size, n)
    rows, cols = np.unravel_index(flat, pixels.shape)
    return plane_coordinates(record, dims, rows, cols), pixels[rows, cols].astype(np.float64)


def adjacent_navigator(dataset: SliceDataset, record: SliceRecord) -> SliceRecord | None:
    """The navigator acquired right after a coronal record, or right before it at the end."""
    position = {r.index: k for k, r in enumerate(dataset.records)}[record.index]
    for k in (position + 1, position - 1):
        if 0 <= k < len(dataset) and dataset.records[k].is_navigator:
            return dataset.records[k]
    return None


def sample_pooled(
    records: list[SliceRecord],
    n: int,
    seed: int,
    dims: tuple[int, int, int],
    step: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample n points split evenly over several records, tagging each point with its record."""
    if not records:
        raise EmptyInputError("No records to sample from")
    shares = np.full(len(records), n // len(records))
    shares[: n % len(records)] += 1
    coords, values, owners = [], [], []
    for record, share in zip(records, shares):
        if share == 0:
            continue
        c, v = sample_points(record, int(share), seed, dims, step=step)
        coords.append(c)
        values.append(v)
        owners.append(np.full(int(share), record.index))
    return np.concatenate(coords), np.concatenate(values), np.concatenate(owners)
