#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""Image and motion-trajectory metrics of reconstructions against ground truth."""

import logging
import math
from typing import Callable, NamedTuple

import numpy as np
from scipy.ndimage import correlate1d
from scipy.stats import pearsonr

from common.utils import WithLogging
from constants import (
    NORM11,
    PASSTHROUGH,
    PSNR_IDENTICAL,
    SSIM_K1,
    SSIM_K2,
    SSIM_SIGMA,
    SSIM_WINDOW,
)
from core.domain import (
    EvalReport,
    SliceDataset,
    SliceRecord,
    SliceScore,
    SurrogateSignal,
    VolumeGrid,
)
from core.errors import DegenerateRangeError, EmptyInputError, ShapeError, TrackingError
from managers.networks import SanModel, TmnModel
from managers.reconstructor import Reconstructor, SortingBaseline
from managers.surrogate import DiaphragmTracker

logger = logging.getLogger(__name__)

# a frame-to-frame change this many times the median counts as a spike
SPIKE_FACTOR = 5.0
# rows of backward apex motion tolerated in a monotone ramp
APEX_TOLERANCE = 0.05


class ImageMetrics(NamedTuple):
    """Image agreement of one prediction/ground-truth pair."""

    mae: float
    mse: float
    psnr: float
    ssim: float


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1D Gaussian weights."""
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(x**2) / (2.0 * sigma**2))
    return w / w.sum()


def _filter_valid(image: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Separable weighted mean over every window lying fully inside the image."""
    half = len(weights) // 2
    out = image
    for axis in range(image.ndim):
        out = correlate1d(out, weights, axis=axis, mode="constant")
    return out[tuple(slice(half, n - half) for n in image.shape)]


def ssim(pred: np.ndarray, gt: np.ndarray, data_range: float = 1.0) -> float:
    """Mean structural similarity over all valid Gaussian windows (2D or 3D)."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"Prediction {pred.shape} and ground truth {gt.shape} differ")
    if min(pred.shape) < SSIM_WINDOW:
        raise ShapeError(f"SSIM needs every axis >= {SSIM_WINDOW}, got {pred.shape}")
    c1, c2 = (SSIM_K1 * data_range) ** 2, (SSIM_K2 * data_range) ** 2
    w = gaussian_window()
    mu_x, mu_y = _filter_valid(pred, w), _filter_valid(gt, w)
    var_x = _filter_valid(pred * pred, w) - mu_x * mu_x
    var_y = _filter_valid(gt * gt, w) - mu_y * mu_y
    cov = _filter_valid(pred * gt, w) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def psnr(mse: float) -> float:
    """Peak signal-to-noise ratio for unit peak; infinite for identical images."""
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def format_psnr(value: float) -> str:
    """PSNR as reported in tables."""
    return PSNR_IDENTICAL if math.isinf(value) else repr(float(value))


def image_metrics(pred: np.ndarray, gt: np.ndarray) -> ImageMetrics:
    """MAE, MSE, PSNR and SSIM of a prediction against ground truth."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"Prediction {pred.shape} and ground truth {gt.shape} differ")
    if pred.size == 0:
        raise EmptyInputError("Cannot score empty images")
    diff = pred - gt
    mse = float(np.mean(diff * diff))
    return ImageMetrics(float(np.mean(np.abs(diff))), mse, psnr(mse), ssim(pred, gt))


def renormalize(values: np.ndarray, label: str = "trajectory") -> np.ndarray:
    """Rescale a trajectory to [0, 1] with its own min and max."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if not hi > lo:
        raise DegenerateRangeError(f"{label} is constant and cannot be normalized")
    return (values - lo) / (hi - lo)


def trajectory_pattern(pred: np.ndarray, gt: np.ndarray) -> float:
    """Global SSIM of two normalized trajectories."""
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    mu_x, mu_y = pred.mean(), gt.mean()
    cov = np.mean((pred - mu_x) * (gt - mu_y))
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (pred.var() + gt.var() + c2)
    return float(num / den)


def trajectories(
    pred_navigators: list[np.ndarray],
    gt_navigators: list[np.ndarray],
    tracker: DiaphragmTracker,
) -> tuple[np.ndarray, np.ndarray]:
    """Track both navigator sequences and normalize each to [0, 1] independently."""
    if len(pred_navigators) != len(gt_navigators):
        raise ShapeError(
            f"{len(pred_navigators)} predicted and {len(gt_navigators)} reference navigators"
        )
    pred = renormalize(tracker.track_raw(pred_navigators, "predicted"), "predicted trajectory")
    gt = renormalize(tracker.track_raw(gt_navigators, "reference"), "reference trajectory")
    return pred, gt


def trajectory_mae(
    pred_navigators: list[np.ndarray],
    gt_navigators: list[np.ndarray],
    tracker: DiaphragmTracker,
) -> float:
    """Mean absolute difference of the two independently normalized diaphragm trajectories."""
    pred, gt = trajectories(pred_navigators, gt_navigators, tracker)
    return float(np.mean(np.abs(pred - gt)))


def inter_frame_differences(volumes: list[np.ndarray]) -> np.ndarray:
    """Mean absolute difference between consecutive frames."""
    frames = [np.asarray(v, dtype=np.float64) for v in volumes]
    return np.array([float(np.mean(np.abs(b - a))) for a, b in zip(frames, frames[1:])])


def spikes(differences: np.ndarray, factor: float = SPIKE_FACTOR) -> list[int]:
    """Indices of frame differences exceeding `factor` times the median difference."""
    if len(differences) == 0:
        return []
    limit = factor * float(np.median(differences))
    return [int(k) for k in np.flatnonzero(np.asarray(differences) > limit)]


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation coefficient of two series."""
    return float(pearsonr(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))[0])


class CoherenceReport(NamedTuple):
    """Frame-to-frame behaviour of a reconstructed ramp of states."""

    states: np.ndarray
    differences: np.ndarray
    spikes: list[int]
    apex: np.ndarray | None
    monotone: bool | None

    @property
    def median(self) -> float:
        """Median inter-frame difference."""
        return float(np.median(self.differences))


def temporal_coherence(
    render: Callable[[float], VolumeGrid],
    states: np.ndarray,
    tracker: DiaphragmTracker,
    navigator_position: int,
    factor: float = SPIKE_FACTOR,
) -> CoherenceReport:
    """Render a ramp of states one volume at a time and check it for jumps.

    The diaphragm apex is tracked on the navigator plane of every frame; a ramp is monotone
    when the apex never moves back by more than APEX_TOLERANCE rows.
    """
    states = np.asarray(states, dtype=np.float64)
    if len(states) < 2:
        raise EmptyInputError("A coherence ramp needs at least two states")
    differences, apex = [], []
    previous = None
    for state in states:
        volume = render(float(state))
        if previous is not None:
            differences.append(inter_frame_differences([previous, volume.data])[0])
        if apex is not None:
            try:
                apex.append(tracker.track_frame(volume.sagittal(navigator_position), "ramp"))
            except TrackingError as e:
                logger.warning(f"Diaphragm apex not trackable along the ramp ({e})")
                apex = None
        previous = volume.data
    differences = np.array(differences)
    monotone = None
    if apex is not None:
        steps = np.diff(apex)
        monotone = bool(np.all(steps >= -APEX_TOLERANCE) or np.all(steps <= APEX_TOLERANCE))
    return CoherenceReport(
        states,
        differences,
        spikes(differences, factor),
        None if apex is None else np.array(apex),
        monotone,
    )


class Evaluator(WithLogging):
    """Scores predicted validation slices against the acquired ones."""

    def __init__(self, signal: SurrogateSignal, tracker: DiaphragmTracker):
        self.signal = signal
        self.tracker = tracker

    def score_records(
        self, method: str, records: list[SliceRecord], predictions: list[np.ndarray]
    ) -> EvalReport:
        """Score predictions aligned with validation records."""
        if not records:
            raise EmptyInputError("Nothing to evaluate")
        report = EvalReport(method=method)
        for record, pred in zip(records, predictions):
            state = self.signal.value_at(record.timestamp, NORM11)
            scores = image_metrics(pred, record.pixels)
            report.scores.append(
                SliceScore(
                    record.index,
                    record.kind,
                    record.plane_position,
                    state,
                    bool(abs(state) > 1.0),
                    *scores,
                )
            )

        pairs = [(p, r.pixels) for r, p in zip(records, predictions) if r.is_navigator]
        if pairs:
            try:
                pred, gt = trajectories([p for p, _ in pairs], [g for _, g in pairs], self.tracker)
                report.trajectory_mae = float(np.mean(np.abs(pred - gt)))
                report.trajectory_pattern = trajectory_pattern(pred, gt)
            except (TrackingError, DegenerateRangeError) as e:
                self.logger.warning(f"{method}: trajectory not available ({e})")
                report.trajectory_status = "untrackable"
        else:
            report.trajectory_status = "no navigators"

        if report.n_out_of_range:
            self.logger.warning(
                f"{method}: {report.n_out_of_range} validation state(s) outside the training range"
            )
        mae, mse = report.mae, report.mse
        self.logger.info(
            f"{method}: MAE {mae[0]:.4f}±{mae[1]:.4f} MSE {mse[0]:.5f}±{mse[1]:.5f} "
            f"trajectory MAE {report.trajectory_mae}"
        )
        return report

    def evaluate_networks(
        self, reconstructor: Reconstructor, val: SliceDataset, method: str = "inr"
    ) -> EvalReport:
        """Render each validation plane at its state with the networks and score it."""
        records = [r for r in val.records if self.signal.covers(r.timestamp)]
        predictions = [
            reconstructor.predict_slice(
                r, val.dims, self.signal.value_at(r.timestamp, NORM11), PASSTHROUGH
            )
            for r in records
        ]
        return self.score_records(method, records, predictions)

    def evaluate_baseline(
        self, baseline: SortingBaseline, val: SliceDataset, method: str = "sorting"
    ) -> EvalReport:
        """Score the binned volume of each validation record's bin at that record's plane."""
        records = [r for r in val.records if self.signal.covers(r.timestamp)]
        volumes = {}
        predictions = []
        for record in records:
            value = float(baseline.values_for([record.timestamp])[0])
            bin_index = baseline.bin_for(value)
            if bin_index not in volumes:
                volumes[bin_index] = baseline.reconstruct(bin_index)[0]
            volume = volumes[bin_index]
            if record.is_coronal:
                predictions.append(volume.coronal(record.plane_position))
            else:
                predictions.append(volume.sagittal(record.plane_position))
        return self.score_records(method, records, predictions)


def evaluate_split(
    tmn: TmnModel,
    san: SanModel,
    val: SliceDataset,
    signal: SurrogateSignal,
    tracker: DiaphragmTracker,
) -> EvalReport:
    """Evaluate trained networks on the validation split."""
    return Evaluator(signal, tracker).evaluate_networks(Reconstructor(tmn, san), val)
