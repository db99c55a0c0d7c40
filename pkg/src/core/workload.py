#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""Artifact layout of a pipeline working directory."""

from pathlib import Path

from common.workload import AbstractWorkload


class PipelinePaths:
    """Object to store the paths of every artifact inside a working directory."""

    def __init__(self, workdir: Path | str):
        self.workdir = workdir if isinstance(workdir, Path) else Path(workdir)

    def resolved_config(self, directory: Path) -> Path:
        """Return the path of the resolved configuration written next to outputs."""
        return directory / "resolved.conf"

    # --- PHANTOM ---

    @property
    def phantom(self) -> Path:
        """Return the directory of rendered phantom volumes."""
        return self.workdir / "phantom"

    @property
    def phantom_spec(self) -> Path:
        """Return the path of the phantom spec file."""
        return self.phantom / "phantom.yaml"

    def phantom_volume(self, amplitude: float) -> Path:
        """Return the path of the phantom volume at an amplitude."""
        return self.phantom / f"phantom_a{amplitude:.3f}.cvol"

    # --- DATASET ---

    @property
    def dataset(self) -> Path:
        """Return the dataset directory."""
        return self.workdir / "dataset"

    @property
    def dataset_meta(self) -> Path:
        """Return the path of the dataset geometry file."""
        return self.dataset / "dataset.yaml"

    @property
    def manifest(self) -> Path:
        """Return the path of the per-record manifest."""
        return self.dataset / "manifest.csv"

    @property
    def slices(self) -> Path:
        """Return the directory of slice files."""
        return self.dataset / "slices"

    def slice_file(self, index: int) -> Path:
        """Return the path of one slice file."""
        return self.slices / f"slice_{index:05d}.slc"

    @property
    def ground_truth(self) -> Path:
        """Return the path of the hidden ground-truth sidecar."""
        return self.dataset / "ground_truth.yaml"

    # --- SURROGATE ---

    @property
    def surrogate(self) -> Path:
        """Return the surrogate directory."""
        return self.workdir / "surrogate"

    @property
    def signal(self) -> Path:
        """Return the path of the signal CSV."""
        return self.surrogate / "signal.csv"

    @property
    def signal_meta(self) -> Path:
        """Return the path of the signal metadata."""
        return self.surrogate / "signal.yaml"

    # --- MODEL ---

    @property
    def model(self) -> Path:
        """Return the model directory."""
        return self.workdir / "model"

    @property
    def model_manifest(self) -> Path:
        """Return the path of the model manifest."""
        return self.model / "model.yaml"

    @property
    def train_log(self) -> Path:
        """Return the path of the training log."""
        return self.model / "train_log.csv"

    @property
    def checkpoints(self) -> Path:
        """Return the directory of intermediate checkpoints."""
        return self.model / "checkpoints"

    def checkpoint(self, network: str, step: int) -> Path:
        """Return the path of an intermediate checkpoint."""
        return self.checkpoints / f"{network}_{step:06d}.ckpt"

    def final_checkpoint(self, network: str) -> Path:
        """Return the path of a trained network next to the model manifest."""
        return self.model / f"{network}.ckpt"

    # --- RECONSTRUCTION ---

    @property
    def reconstructions(self) -> Path:
        """Return the directory of INR reconstructions."""
        return self.workdir / "reconstructions"

    def reconstruction(self, state: float) -> Path:
        """Return the path of a reconstructed volume."""
        return self.reconstructions / f"recon_s{state:.4f}.cvol"

    def reconstruction_image(self, state: float, view: str) -> Path:
        """Return the path of a graymap exported from a reconstruction."""
        return self.reconstructions / f"recon_s{state:.4f}_{view}.pgm"

    @property
    def baseline(self) -> Path:
        """Return the directory of sorting baseline volumes."""
        return self.workdir / "baseline"

    def baseline_volume(self, bin_index: int) -> Path:
        """Return the path of one binned volume."""
        return self.baseline / f"bin_{bin_index:02d}.cvol"

    def baseline_image(self, bin_index: int, view: str) -> Path:
        """Return the path of a graymap exported from a binned volume."""
        return self.baseline / f"bin_{bin_index:02d}_{view}.pgm"

    @property
    def gap_report(self) -> Path:
        """Return the path of the baseline gap report."""
        return self.baseline / "gap_report.yaml"

    # --- REPORTS ---

    @property
    def reports(self) -> Path:
        """Return the reports directory."""
        return self.workdir / "reports"

    @property
    def evaluation(self) -> Path:
        """Return the path of the evaluation CSV."""
        return self.reports / "evaluation.csv"

    @property
    def summary(self) -> Path:
        """Return the path of the evaluation summary."""
        return self.reports / "summary.txt"

    def ablation(self, axis: str) -> Path:
        """Return the path of an ablation table."""
        return self.reports / f"ablation_{axis}.csv"


class PipelineWorkloadBase(AbstractWorkload):
    """Base interface for pipeline workloads."""

    paths: PipelinePaths
