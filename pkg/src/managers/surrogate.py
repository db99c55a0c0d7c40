#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""Respiratory surrogate extraction from sagittal navigator slices.

Navigator pixels are indexed [y, z]: the tracker calls the y index a column and the z index
a row. The lung-liver interface is the largest positive intensity step along a column, so
the diaphragm row decreases as the diaphragm moves superiorly. The raw surrogate is the
negated mean row, which grows with inhalation.
"""

import numpy as np

from common.utils import WithLogging
from constants import NORM11
from core.domain import SliceRecord, SurrogateSignal
from core.errors import DegenerateRangeError, EmptyInputError, GeometryError, TrackingError

DEFAULT_MIN_EDGE_STRENGTH = 0.02
# norm01 level below which a sample belongs to an exhale plateau
END_EXHALE_LEVEL = 0.25


def parabolic_offset(left: float, center: float, right: float) -> float:
    """Vertex offset of the parabola through three samples, limited to half a sample."""
    curvature = left - 2.0 * center + right
    if curvature == 0:
        return 0.0
    return float(np.clip(0.5 * (left - right) / curvature, -0.5, 0.5))


class DiaphragmTracker(WithLogging):
    """Gradient-edge tracker of the diaphragm in navigator slices."""

    def __init__(
        self,
        roi: tuple[int, int],
        columns: tuple[int, ...],
        min_edge_strength: float = DEFAULT_MIN_EDGE_STRENGTH,
    ):
        if roi[1] <= roi[0]:
            raise GeometryError(f"Empty tracking row range {roi}")
        if not columns:
            raise GeometryError("At least one landmark column is required")
        self.roi = (int(roi[0]), int(roi[1]))
        self.columns = tuple(int(c) for c in columns)
        self.min_edge_strength = min_edge_strength

    def _check_geometry(self, pixels: np.ndarray) -> None:
        n_cols, n_rows = pixels.shape
        if min(self.columns) < 0 or max(self.columns) >= n_cols:
            raise GeometryError(f"Landmark columns {self.columns} outside {n_cols} columns")
        if self.roi[0] < 0 or self.roi[1] >= n_rows:
            raise GeometryError(f"Tracking rows {self.roi} outside {n_rows} rows")

    def edge_row(self, profile: np.ndarray, label: str) -> float:
        """Sub-pixel row of the strongest positive step of one column profile."""
        gradient = np.gradient(profile)
        start, stop = self.roi
        peak = start + int(np.argmax(gradient[start : stop + 1]))
        if gradient[peak] < self.min_edge_strength:
            raise TrackingError(
                f"No diaphragm edge above {self.min_edge_strength} in {label}", record=label
            )
        if 0 < peak < len(profile) - 1:
            return peak + parabolic_offset(gradient[peak - 1], gradient[peak], gradient[peak + 1])
        return float(peak)

    def track_frame(self, pixels: np.ndarray, label: str) -> float:
        """Raw surrogate of one navigator frame."""
        self._check_geometry(pixels)
        rows = [self.edge_row(pixels[c, :], f"{label} column {c}") for c in self.columns]
        return -float(np.mean(rows))

    def track_raw(self, frames: list[np.ndarray], sequence: str = "navigators") -> np.ndarray:
        """Raw surrogate of a sequence of navigator frames."""
        if not frames:
            raise EmptyInputError(f"No frames to track in {sequence}")
        return np.array([self.track_frame(f, f"{sequence}[{k}]") for k, f in enumerate(frames)])

    def track(
        self,
        navigators: list[SliceRecord],
        raw_range: tuple[float, float] | None = None,
    ) -> SurrogateSignal:
        """Track navigator records into a surrogate signal.

        Without `raw_range` the normalization range is the min/max of the tracked values.
        """
        if not navigators:
            raise EmptyInputError("No navigator records to track")
        raw = np.array(
            [self.track_frame(r.pixels, f"record {r.index}") for r in navigators], dtype=np.float64
        )
        lo, hi = (float(raw.min()), float(raw.max())) if raw_range is None else raw_range
        signal = SurrogateSignal(
            timestamps=np.array([r.timestamp for r in navigators], dtype=np.float64),
            raw=raw,
            raw_min=lo,
            raw_max=hi,
            landmark_columns=self.columns,
            roi=self.roi,
        )
        self.logger.info(
            f"Tracked {len(navigators)} navigators, raw range [{lo:.3f}, {hi:.3f}] rows"
        )
        return signal


def track_diaphragm(
    navigators: list[SliceRecord],
    roi: tuple[int, int],
    columns: tuple[int, ...],
    min_edge_strength: float = DEFAULT_MIN_EDGE_STRENGTH,
) -> SurrogateSignal:
    """Track navigator slices with a fresh tracker and normalize over the tracked range."""
    return DiaphragmTracker(roi, columns, min_edge_strength).track(navigators)


def state_for_record(signal: SurrogateSignal, record: SliceRecord) -> float:
    """Network state of a record, interpolated between the adjacent navigator samples."""
    return signal.value_at(record.timestamp, NORM11)


def states_at(signal: SurrogateSignal, timestamps: np.ndarray, scale: str = NORM11) -> np.ndarray:
    """Vectorized `SurrogateSignal.value_at`."""
    timestamps = np.asarray(timestamps, dtype=np.float64)
    return np.array([signal.value_at(float(t), scale) for t in timestamps.ravel()]).reshape(
        timestamps.shape
    )


def end_exhale_times(signal: SurrogateSignal, level: float = END_EXHALE_LEVEL) -> np.ndarray:
    """Timestamps of the signal minimum inside each contiguous low-amplitude stretch."""
    values = signal.norm01
    low = values < level
    times = []
    start = None
    for k, is_low in enumerate(np.append(low, False)):
        if is_low and start is None:
            start = k
        elif not is_low and start is not None:
            times.append(signal.timestamps[start + int(np.argmin(values[start:k]))])
            start = None
    return np.asarray(times, dtype=np.float64)


def respiratory_phase(signal: SurrogateSignal, timestamps: np.ndarray) -> np.ndarray:
    """Phase in [0, 1) of each timestamp, 0 at end-exhale.

    Outside the first and last detected end-exhale points the nearest cycle length is used.
    """
    exhale = end_exhale_times(signal)
    if exhale.size < 2:
        raise DegenerateRangeError("Phase needs at least two detected end-exhale points")
    t = np.asarray(timestamps, dtype=np.float64)
    k = np.clip(np.searchsorted(exhale, t, side="right") - 1, 0, exhale.size - 2)
    return np.mod((t - exhale[k]) / (exhale[k + 1] - exhale[k]), 1.0)
