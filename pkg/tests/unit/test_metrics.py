# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

import math
from itertools import product

import numpy as np
import pytest
from scipy.special import expit

from constants import SSIM_K1, SSIM_K2, SSIM_WINDOW
from core.domain import SortingConfig, VolumeGrid
from core.errors import DegenerateRangeError, EmptyInputError, ShapeError
from managers.acquisition import split
from managers.metrics import (
    Evaluator,
    evaluate_split,
    format_psnr,
    gaussian_window,
    image_metrics,
    inter_frame_differences,
    pearson,
    psnr,
    spikes,
    ssim,
    temporal_coherence,
    trajectory_mae,
    trajectory_pattern,
)
from managers.reconstructor import Reconstructor, SortingBaseline
from managers.surrogate import DiaphragmTracker


def brute_force_ssim(x: np.ndarray, y: np.ndarray) -> float:
    """Window-by-window SSIM with an explicit Gaussian kernel."""
    w1 = gaussian_window()
    kernel = w1
    for _ in range(x.ndim - 1):
        kernel = np.multiply.outer(kernel, w1)
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    values = []
    for corner in product(*(range(n - SSIM_WINDOW + 1) for n in x.shape)):
        window = tuple(slice(c, c + SSIM_WINDOW) for c in corner)
        a, b = x[window], y[window]
        mu_a, mu_b = np.sum(kernel * a), np.sum(kernel * b)
        var_a = np.sum(kernel * (a - mu_a) ** 2)
        var_b = np.sum(kernel * (b - mu_b) ** 2)
        cov = np.sum(kernel * (a - mu_a) * (b - mu_b))
        values.append(
            (2 * mu_a * mu_b + c1)
            * (2 * cov + c2)
            / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
        )
    return float(np.mean(values))


@pytest.mark.parametrize("shape", [(14, 13), (12, 11, 13)])
def test_ssim_matches_window_by_window_reference(shape, rng):
    x = rng.uniform(size=shape)
    y = np.clip(x + 0.1 * rng.normal(size=shape), 0, 1)
    assert ssim(x, y) == pytest.approx(brute_force_ssim(x, y), abs=1e-8)


def test_ssim_of_identical_images(rng):
    x = rng.uniform(size=(16, 16))
    assert ssim(x, x) == pytest.approx(1.0)


def test_ssim_shape_checks():
    with pytest.raises(ShapeError):
        ssim(np.zeros((12, 12)), np.zeros((12, 13)))
    with pytest.raises(ShapeError):
        ssim(np.zeros((10, 30)), np.zeros((10, 30)))


def test_psnr():
    assert psnr(0.01) == pytest.approx(20.0)
    assert psnr(0.0) == math.inf
    assert format_psnr(math.inf) == "identical"
    assert format_psnr(20.0) == "20.0"


def test_image_metrics_of_a_constant_offset(rng):
    gt = rng.uniform(0.2, 0.8, size=(16, 12))
    metrics = image_metrics(gt + 0.1, gt)
    assert metrics.mae == pytest.approx(0.1)
    assert metrics.mse == pytest.approx(0.01)
    assert metrics.psnr == pytest.approx(20.0)
    with pytest.raises(EmptyInputError):
        image_metrics(np.zeros((0, 3)), np.zeros((0, 3)))


def edge_frames(rows: list[int]) -> list[np.ndarray]:
    profile = np.arange(40, dtype=np.float64)
    return [np.tile(0.1 + 0.6 * expit((profile - r) / 1.5), (6, 1)) for r in rows]


@pytest.fixture
def edge_tracker():
    return DiaphragmTracker((5, 35), (1, 3))


def test_trajectory_of_an_inverted_breath(edge_tracker):
    gt = edge_frames([12, 16, 20, 16])
    pred = edge_frames([20, 16, 12, 16])
    assert trajectory_mae(pred, gt, edge_tracker) == pytest.approx(0.5, abs=1e-9)


def test_trajectory_ignores_a_constant_offset(edge_tracker):
    gt = edge_frames([12, 16, 20, 16])
    pred = edge_frames([14, 18, 22, 18])
    assert trajectory_mae(pred, gt, edge_tracker) == pytest.approx(0.0, abs=1e-9)


def test_trajectory_errors(edge_tracker):
    with pytest.raises(DegenerateRangeError):
        trajectory_mae(edge_frames([12, 12]), edge_frames([12, 16]), edge_tracker)
    with pytest.raises(ShapeError):
        trajectory_mae(edge_frames([12]), edge_frames([12, 16]), edge_tracker)


def test_trajectory_pattern():
    wave = np.array([0.0, 0.5, 1.0, 0.5])
    assert trajectory_pattern(wave, wave) == pytest.approx(1.0)
    assert trajectory_pattern(1.0 - wave, wave) < 0.5


def test_spikes_between_frames():
    frames = [np.zeros(4), np.full(4, 0.1), np.full(4, 0.2), np.full(4, 1.2), np.full(4, 1.3)]
    differences = inter_frame_differences(frames)
    assert np.allclose(differences, [0.1, 0.1, 1.0, 0.1])
    assert spikes(differences) == [2]
    assert spikes(np.array([])) == []


def test_pearson():
    assert pearson([1.0, 2.0, 3.0], [2.0, 4.0, 6.5]) > 0.99


def test_coherence_of_a_breathing_ramp(phantom, tracker):
    report = temporal_coherence(
        phantom.render_volume, np.linspace(0.0, 1.0, 6), tracker, phantom.navigator_position
    )
    assert len(report.differences) == 5
    assert report.spikes == []
    assert report.monotone is True
    assert abs(report.apex[-1] - report.apex[0]) > 1.0


def test_coherence_flags_a_jump(phantom, tracker):
    def render(state: float) -> VolumeGrid:
        volume = phantom.render_volume(0.1 * state)
        if state > 0.5:
            return VolumeGrid(1.0 - volume.data, volume.spacing)
        return volume

    report = temporal_coherence(render, np.linspace(0.0, 1.0, 8), tracker, 0)
    assert report.spikes == [3]


def test_coherence_of_blank_volumes(phantom, tracker):
    blank = VolumeGrid(np.zeros(phantom.spec.dims), phantom.spec.spacing)
    report = temporal_coherence(lambda _: blank, np.linspace(0.0, 1.0, 3), tracker, 0)
    assert report.apex is None and report.monotone is None
    assert report.median == 0.0 and report.spikes == []
    with pytest.raises(EmptyInputError):
        temporal_coherence(lambda _: blank, np.array([0.5]), tracker, 0)


def test_scoring_the_acquired_slices(dataset, signal, tracker):
    _, val = split(dataset)
    report = Evaluator(signal, tracker).score_records(
        "oracle", val.records, [r.pixels for r in val.records]
    )
    assert len(report.scores) == len(val)
    assert report.mae == (0.0, 0.0)
    assert report.psnr == (math.inf, 0.0)
    assert report.ssim[0] == pytest.approx(1.0)
    assert report.trajectory_mae == pytest.approx(0.0)
    assert report.n_out_of_range == sum(abs(s.state) > 1 for s in report.scores)


def test_scoring_without_navigators(dataset, signal, tracker):
    _, val = split(dataset)
    coronals = [r for r in val.records if r.is_coronal]
    report = Evaluator(signal, tracker).score_records(
        "oracle", coronals, [r.pixels for r in coronals]
    )
    assert report.trajectory_status == "no navigators"
    assert report.trajectory_mae is None
    with pytest.raises(EmptyInputError):
        Evaluator(signal, tracker).score_records("oracle", [], [])


def test_network_evaluation(dataset, signal, tracker, tmn, san):
    _, val = split(dataset)
    report = Evaluator(signal, tracker).evaluate_networks(Reconstructor(tmn, san), val)
    assert report.method == "inr"
    assert [s.index for s in report.scores] == [r.index for r in val.records]
    assert all(0 <= s.mae <= 1 for s in report.scores)
    assert report.trajectory_status in ("ok", "untrackable")


def test_evaluate_split(dataset, signal, tracker, tmn, san):
    _, val = split(dataset)
    report = evaluate_split(tmn, san, val, signal, tracker)
    direct = Evaluator(signal, tracker).evaluate_networks(Reconstructor(tmn, san), val)
    assert [s.mae for s in report.scores] == [s.mae for s in direct.scores]


def test_baseline_evaluation(dataset, signal, tracker):
    train, val = split(dataset)
    baseline = SortingBaseline(train, signal, SortingConfig(n_bins=4))
    report = Evaluator(signal, tracker).evaluate_baseline(baseline, val)
    assert report.method == "sorting"
    assert len(report.scores) == len(val)
    assert all(np.isfinite(s.ssim) for s in report.scores)
