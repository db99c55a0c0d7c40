#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""Evaluation command handler."""

import math

import numpy as np

from constants import PSNR_IDENTICAL
from core.domain import EvalReport, ReconRequest, VolumeGrid
from events.base import BaseCommandHandler, compute_status
from managers.acquisition import split
from managers.metrics import (
    SPIKE_FACTOR,
    CoherenceReport,
    Evaluator,
    format_psnr,
    pearson,
    temporal_coherence,
)
from managers.reconstructor import BASELINE_NOTE, Reconstructor, SortingBaseline

EVALUATION_HEADER = [
    "method",
    "index",
    "kind",
    "plane_position",
    "state",
    "out_of_range",
    "mae",
    "mse",
    "psnr",
    "ssim",
]


def _number(value: float | None) -> str:
    if value is None or math.isnan(value):
        return ""
    return repr(float(value))


def _stat(pair: tuple[float, float], digits: int) -> str:
    mean, std = pair
    return f"{mean:.{digits}f}±{std:.{digits}f}"


def report_rows(report: EvalReport) -> list[list[str]]:
    """Per-slice rows of a report followed by its mean and std footer."""
    rows = [
        [
            report.method,
            str(s.index),
            s.kind,
            str(s.plane_position),
            repr(float(s.state)),
            str(int(s.out_of_range)),
            repr(float(s.mae)),
            repr(float(s.mse)),
            format_psnr(s.psnr),
            repr(float(s.ssim)),
        ]
        for s in report.scores
    ]
    for k, label in enumerate(("mean", "std")):
        rows.append(
            [report.method, label, "", "", "", str(report.n_out_of_range)]
            + [_number(report.mae[k]), _number(report.mse[k])]
            + [format_psnr(report.psnr[k]), _number(report.ssim[k])]
        )
    return rows


def summary_lines(
    reports: list[EvalReport],
    correlation: float | None,
    coherence: CoherenceReport | None = None,
) -> list[str]:
    """Side-by-side text summary of the evaluated methods."""
    header = ("method", "MAE", "MSE", "PSNR", "SSIM", "trajectory")
    widths = (-10, 15, 17, 13, 13, 10)
    lines = [" ".join(f"{h:>{w}}" if w > 0 else f"{h:<{-w}}" for h, w in zip(header, widths))]
    for r in reports:
        psnr = r.psnr
        psnr_text = PSNR_IDENTICAL if math.isinf(psnr[0]) else _stat(psnr, 2)
        trajectory = (
            f"{r.trajectory_mae:.4f}" if r.trajectory_mae is not None else r.trajectory_status
        )
        lines.append(
            f"{r.method:<10} {_stat(r.mae, 4):>15} {_stat(r.mse, 5):>17} {psnr_text:>13} "
            f"{_stat(r.ssim, 4):>13} {trajectory:>10}"
        )
    lines.append("")
    for r in reports:
        lines.append(
            f"{r.method}: {len(r.scores)} validation slices, "
            f"{r.n_out_of_range} outside the training state range"
        )
        if r.trajectory_pattern is not None:
            lines.append(f"{r.method}: trajectory pattern score {r.trajectory_pattern:.4f}")
    if correlation is not None:
        lines.append(f"surrogate vs ground-truth amplitude: pearson r = {correlation:.6f}")
    if coherence is not None:
        lines.extend(coherence_lines(coherence))
    lines.append(BASELINE_NOTE)
    return lines


def coherence_lines(coherence: CoherenceReport) -> list[str]:
    """Summary lines of a reconstructed ramp of states."""
    differences = coherence.differences
    lines = [
        f"temporal coherence: {len(coherence.states)} states, median frame difference "
        f"{coherence.median:.6f}, max {differences.max():.6f}, "
        f"{len(coherence.spikes)} spike(s) above {SPIKE_FACTOR:g}x the median"
    ]
    if coherence.monotone is None:
        lines.append("diaphragm apex along the ramp: untrackable")
    else:
        travel = float(coherence.apex[-1] - coherence.apex[0])
        status = "monotone" if coherence.monotone else "not monotone"
        lines.append(f"diaphragm apex along the ramp: {status}, travel {travel:.3f} rows")
    return lines


class EvaluationCommands(BaseCommandHandler):
    """Class implementing the evaluation of trained networks against the sorting baseline."""

    @compute_status
    def cmd_evaluate(self) -> None:
        """Score the INR and the sorting baseline on the validation split."""
        dataset = self.store.read_dataset(self.paths)
        signal, _ = self.store.read_signal(self.paths.signal, self.paths.signal_meta)
        tmn, san, manifest = self.load_models()
        train, val = split(dataset, self.context.train_fraction)

        evaluator = Evaluator(signal, self.tracker(signal))
        reconstructor = Reconstructor(tmn, san, manifest, workers=self.context["workers"])
        inr = evaluator.evaluate_networks(reconstructor, val)
        baseline = SortingBaseline(train, signal, self.context.sorting_config)
        sorting = evaluator.evaluate_baseline(baseline, val)

        correlation = None
        if self.workload.exists(str(self.paths.ground_truth)):
            amplitudes = self.store.read_ground_truth(self.paths.ground_truth)
            gt = [amplitudes[r.index] for r in dataset.navigators]
            correlation = pearson(signal.norm01, gt)
            self.logger.info(f"Surrogate vs ground-truth amplitude: r = {correlation:.6f}")
        else:
            self.logger.warning("No ground-truth sidecar; skipping surrogate correlation")

        coherence = None
        if self.context["coherence_states"] and dataset.navigators:
            batch_size = self.context["recon_batch_size"]

            def render(state: float) -> VolumeGrid:
                request = ReconRequest(state, dataset.dims, dataset.spacing, batch_size=batch_size)
                return reconstructor.reconstruct(request)

            coherence = temporal_coherence(
                render,
                np.linspace(0.0, 1.0, self.context["coherence_states"]),
                evaluator.tracker,
                dataset.navigators[0].plane_position,
            )
            self.logger.info(
                f"Ramp of {len(coherence.states)} states: {len(coherence.spikes)} spike(s), "
                f"apex monotone {coherence.monotone}"
            )

        self.store.write_table(
            EVALUATION_HEADER, report_rows(inr) + report_rows(sorting), self.paths.evaluation
        )
        lines = summary_lines([inr, sorting], correlation, coherence)
        self.workload.write("\n".join(lines) + "\n", str(self.paths.summary))
        self.logger.info(f"Wrote summary {self.paths.summary}")
        self.write_resolved(self.paths.reports)
