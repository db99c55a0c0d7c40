#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""Phantom, acquisition and surrogate command handlers."""

import numpy as np

from events.base import BaseCommandHandler, compute_status
from managers.acquisition import AcquisitionManager, split_boundary
from managers.phantom import PhantomManager


class DataCommands(BaseCommandHandler):
    """Class implementing the commands that produce the input data of a training run."""

    def _phantom_description(self, phantom: PhantomManager) -> dict:
        spec, motion = phantom.spec, phantom.motion
        return {
            "dims": list(spec.dims),
            "spacing": [float(s) for s in spec.spacing],
            "diaphragm_width_mm": float(spec.diaphragm_width_mm),
            "vessel_trunks": spec.vessel_trunks,
            "n_vessels": len(phantom.vessels),
            "seed": spec.seed,
            "antialias": phantom.antialias,
            "motion": {
                "peak_displacement_mm": float(motion.peak_displacement_mm),
                "decay_length_mm": float(motion.decay_length_mm),
                "ap_coupling": float(motion.ap_coupling),
            },
            "diaphragm_apex_mm": [float(v) for v in phantom.diaphragm_apex],
            "navigator_position": phantom.navigator_position,
            "navigator_roi": list(phantom.navigator_roi()),
            "landmark_columns": list(phantom.landmark_columns(self.context["n_landmarks"])),
        }

    @compute_status
    def cmd_phantom(self) -> None:
        """Render the phantom at the configured amplitudes."""
        phantom = self.phantom()
        for amplitude in self.context["phantom_amplitudes"]:
            target = self.paths.phantom_volume(amplitude)
            self.store.write_volume(phantom.render_volume(float(amplitude)), target)
            self.logger.info(f"Wrote phantom volume {target}")
        self.store.write_yaml(self._phantom_description(phantom), self.paths.phantom_spec)
        self.write_resolved(self.paths.phantom)

    @compute_status
    def cmd_acquire(self) -> None:
        """Simulate the interleaved acquisition and store it with its hidden sidecar."""
        phantom = self.phantom()
        acquisition = AcquisitionManager(
            phantom, self.context.breath_spec, self.context.navigator_position
        )
        dataset = acquisition.acquire(
            self.context["n_coronal_positions"],
            self.context["n_sweeps"],
            self.context.train_fraction,
        )
        self.store.write_dataset(dataset, self.paths)
        self.store.write_ground_truth(
            dataset,
            {
                "phantom": self._phantom_description(phantom),
                "breath": {
                    "period_s": float(acquisition.breath.period_s),
                    "period_jitter": float(acquisition.breath.period_jitter),
                    "depth_jitter": float(acquisition.breath.depth_jitter),
                    "drift_amplitude": float(acquisition.breath.drift_amplitude),
                    "sample_interval_s": float(acquisition.breath.sample_interval_s),
                    "seed": acquisition.breath.seed,
                },
            },
            self.paths.ground_truth,
        )
        self.write_resolved(self.paths.dataset)

    @compute_status
    def cmd_surrogate(self) -> None:
        """Track the navigators and normalize with the training-split range."""
        dataset = self.store.read_dataset(self.paths)
        tracker = self.tracker()
        signal = tracker.track(dataset.navigators)

        boundary = split_boundary(len(dataset), self.context.train_fraction)
        last_train = dataset.records[boundary - 1].timestamp if boundary else -np.inf
        in_train = signal.timestamps <= last_train
        train_raw = signal.raw[in_train]
        if train_raw.size >= 2 and train_raw.max() > train_raw.min():
            signal = signal.renormalized(train_raw.min(), train_raw.max())
        else:
            self.logger.warning("Too few training navigators; normalizing over all navigators")

        outside = int(np.count_nonzero((signal.norm01 < 0) | (signal.norm01 > 1)))
        if outside:
            self.logger.warning(f"{outside} validation navigator(s) outside the training range")
        self.store.write_signal(
            signal,
            {
                "normalization": "training navigators",
                "n_navigators": int(signal.raw.size),
                "n_training_navigators": int(np.count_nonzero(in_train)),
                "min_edge_strength": float(tracker.min_edge_strength),
            },
            self.paths.signal,
            self.paths.signal_meta,
        )
        self.write_resolved(self.paths.surrogate)
