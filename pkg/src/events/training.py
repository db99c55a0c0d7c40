#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""Training and ablation command handlers."""

from pathlib import Path

from core.domain import ModelManifest
from events.base import BaseCommandHandler, compute_status
from managers.trainer import Trainer, ablate, jacobian_deviation

ABLATION_HEADER = ["axis", "value", "val_mae", "val_mse", "trajectory_mae"]


class TrainingCommands(BaseCommandHandler):
    """Class implementing the commands that optimize networks."""

    @compute_status
    def cmd_train(self) -> None:
        """Jointly train both networks on the stored slices and surrogate signal.

        Only the acquired slices and the surrogate are read; the ground-truth sidecar is not.
        """
        dataset = self.store.read_dataset(self.paths)
        signal, _ = self.store.read_signal(self.paths.signal, self.paths.signal_meta)
        cfg = self.context.train_config

        trainer = Trainer(cfg, self.store, self.paths)
        tmn, san, log = trainer.train(dataset, signal, self.tracker(signal))

        manifest = ModelManifest(
            raw_min=signal.raw_min,
            raw_max=signal.raw_max,
            dims=dataset.dims,
            spacing=dataset.spacing,
        )
        for name, model in (("tmn", tmn), ("san", san)):
            self.store.write_checkpoint(
                model.core, self.paths.final_checkpoint(name), trainer.adam[name], cfg.epochs
            )
        deviation = jacobian_deviation(tmn, seed=cfg.seed)
        self.store.write_model_manifest(
            manifest,
            self.paths.model_manifest,
            {
                "epochs": cfg.epochs,
                "seed": cfg.seed,
                "jacdet_weight": float(cfg.jacdet_weight),
                "mean_abs_jacdet_deviation": float(deviation),
                "checkpoints": [Path(p).name for p in log.checkpoints],
                "template_deltas": [float(d) for d in log.template_deltas],
            },
        )
        self.store.write_train_log(log, self.paths.train_log)
        self.logger.info(f"Mean |1 - det J| after training: {deviation:.5f}")
        self.write_resolved(self.paths.model)

    @compute_status
    def cmd_ablate(self, axis: str, values: list[float]) -> None:
        """One identically seeded training run per value of an ablation axis."""
        dataset = self.store.read_dataset(self.paths)
        signal, _ = self.store.read_signal(self.paths.signal, self.paths.signal_meta)
        rows = ablate(
            dataset,
            signal,
            self.context.train_config,
            axis,
            values,
            self.tracker(signal),
            target=self.context["ablation_target"],
        )
        self.store.write_table(
            ABLATION_HEADER,
            [
                [
                    r.axis,
                    repr(float(r.value)),
                    repr(r.val_mae),
                    repr(r.val_mse),
                    "" if r.trajectory_mae is None else repr(r.trajectory_mae),
                ]
                for r in rows
            ],
            self.paths.ablation(axis),
        )
        for r in rows:
            self.logger.info(f"{axis}={r.value}: {r.wall_s:.1f}s")
        self.write_resolved(self.paths.reports)
