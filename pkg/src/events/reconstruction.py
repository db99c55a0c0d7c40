#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""INR and sorting-baseline reconstruction command handlers."""

from core.domain import VolumeGrid
from events.base import BaseCommandHandler, compute_status
from managers.reconstructor import (
    BASELINE_NOTE,
    Reconstructor,
    SortingBaseline,
    maximum_intensity_projection,
)


class ReconstructionCommands(BaseCommandHandler):
    """Class implementing the commands that render volumes."""

    def _export(self, volume: VolumeGrid, image_path) -> None:
        if self.context["export_graymap"]:
            target = image_path("coronal")
            self.store.write_graymap(volume.coronal(volume.dims[1] // 2).T, target)
            self.logger.info(f"Wrote graymap {target}")
        if self.context["export_mip"]:
            target = image_path("mip")
            self.store.write_graymap(maximum_intensity_projection(volume), target)
            self.logger.info(f"Wrote MIP {target}")

    @compute_status
    def cmd_reconstruct(self, states: list[float]) -> None:
        """Render full volumes at respiratory states on the configured scale."""
        tmn, san, manifest = self.load_models()
        reconstructor = Reconstructor(tmn, san, manifest, workers=self.context["workers"])
        requests = [self.context.recon_request(state) for state in states]
        volumes, _ = reconstructor.reconstruct_series(requests)
        for req, volume in zip(requests, volumes):
            target = self.paths.reconstruction(req.state)
            self.store.write_volume(volume, target)
            self.logger.info(f"Wrote reconstruction {target}")
            self._export(
                volume, lambda view, state=req.state: self.paths.reconstruction_image(state, view)
            )
        self.write_resolved(self.paths.reconstructions)

    @compute_status
    def cmd_baseline(self) -> None:
        """Bin the acquired coronal slices by surrogate state and stack every bin."""
        dataset = self.store.read_dataset(self.paths)
        signal, _ = self.store.read_signal(self.paths.signal, self.paths.signal_meta)
        baseline = SortingBaseline(dataset, signal, self.context.sorting_config)
        reports = []
        for bin_index in range(baseline.cfg.n_bins):
            volume, report = baseline.reconstruct(bin_index)
            self.store.write_volume(volume, self.paths.baseline_volume(bin_index))
            self._export(
                volume, lambda view, b=bin_index: self.paths.baseline_image(b, view)
            )
            reports.append(report)
        self.store.write_gap_report(reports, BASELINE_NOTE, self.paths.gap_report)
        self.logger.info(
            f"Wrote {len(reports)} binned volumes, "
            f"{sum(not r.empty for r in reports)} with borrowed slices"
        )
        self.write_resolved(self.paths.baseline)
