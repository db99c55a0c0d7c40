#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""Joint optimization of the motion and anatomy networks, and the ablation harness."""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from common.utils import WithLogging, derive_rng, normalized_axis
from core.domain import (
    AblationRow,
    LossReport,
    SliceDataset,
    SliceRecord,
    SurrogateSignal,
    TrainConfig,
    TrainLog,
    TrainLogRow,
)
from core.errors import ConfigurationError, ExtrapolationError, TrainingDivergenceError
from core.workload import PipelinePaths
from managers.acquisition import adjacent_navigator, sample_points, sample_pooled, split
from managers.losses import jacdet_penalty, total_loss
from managers.metrics import evaluate_split
from managers.networks import SanModel, TmnModel, build_san, build_tmn, san_intensity
from managers.nn import AdamState, GradientBundle, adam_step
from managers.storage import ArtifactStore
from managers.surrogate import DiaphragmTracker, state_for_record

ABLATION_AXES = ("omega", "depth", "width", "data_fraction")
ABLATION_TARGETS = ("tmn", "san", "both")


def template_plane(san: SanModel, dims: tuple[int, int, int]) -> np.ndarray:
    """Anatomy network rendered on the mid-coronal plane at the identity warp."""
    xs, zs = normalized_axis(dims[0]), normalized_axis(dims[2])
    gx, gz = np.meshgrid(xs, zs, indexing="ij")
    y = normalized_axis(dims[1])[dims[1] // 2]
    coords = np.column_stack([gx.ravel(), np.full(gx.size, y), gz.ravel()])
    return san_intensity(san, coords).reshape(dims[0], dims[2])


def jacobian_deviation(tmn: TmnModel, n_points: int = 10000, seed: int = 0) -> float:
    """Mean |1 - det J| over random coordinates and states in [-1, 1]."""
    rng = derive_rng(seed, n_points)
    x = rng.uniform(-1.0, 1.0, size=(n_points, 3))
    s = rng.uniform(-1.0, 1.0, size=n_points)
    return jacdet_penalty(tmn, x, s)


class Trainer(WithLogging):
    """Optimizes a TMN/SAN pair from slice samples and their surrogate states."""

    def __init__(
        self,
        cfg: TrainConfig,
        store: ArtifactStore | None = None,
        paths: PipelinePaths | None = None,
    ):
        self.cfg = cfg
        self.store = store
        self.paths = paths
        self.last_checkpoint: str | None = None
        # optimizer state of the last run, keyed by network name
        self.adam: dict[str, AdamState] = {}

    # ----------------
    # --- SAMPLING ---
    # ----------------

    def eligible_records(
        self, train: SliceDataset, signal: SurrogateSignal
    ) -> tuple[list[SliceRecord], dict[int, float]]:
        """Temporal data_fraction prefix of the training split with states inside [-1, 1]."""
        prefix = train.records[: max(1, math.ceil(self.cfg.data_fraction * len(train)))]
        records, states = [], {}
        for record in prefix:
            if not signal.covers(record.timestamp):
                self.logger.debug(f"Record {record.index} lies outside the surrogate span")
                continue
            state = state_for_record(signal, record)
            if abs(state) > 1.0:
                self.logger.debug(f"Record {record.index} state {state:.4f} outside [-1, 1]")
                continue
            records.append(record)
            states[record.index] = state
        if not records:
            raise ExtrapolationError("The surrogate signal covers none of the training records")
        if len(records) < len(prefix):
            self.logger.info(f"Excluded {len(prefix) - len(records)} training record(s)")
        return records, states

    def _batch(
        self,
        record: SliceRecord,
        train: SliceDataset,
        states: dict[int, float],
        step: int,
    ) -> tuple[np.ndarray, np.ndarray, float | np.ndarray]:
        cfg = self.cfg
        if cfg.sampling_mode == "state" and record.is_coronal:
            navigator = adjacent_navigator(train, record)
            if navigator is not None and navigator.index in states:
                x, gt, owners = sample_pooled(
                    [record, navigator], cfg.points_per_batch, cfg.seed, train.dims, step
                )
                return x, gt, np.array([states[int(o)] for o in owners])
        x, gt = sample_points(record, cfg.points_per_batch, cfg.seed, train.dims, step=step)
        return x, gt, states[record.index]

    # ----------------
    # --- TRAINING ---
    # ----------------

    def init_models(self) -> tuple[TmnModel, SanModel]:
        """Freshly initialised networks for this configuration."""
        cfg = self.cfg
        tmn = build_tmn(
            cfg.tmn_depth,
            cfg.tmn_width,
            cfg.tmn_omega0,
            cfg.tmn_omega_hidden,
            seed=cfg.seed,
            dtype=cfg.dtype,
        )
        san = build_san(
            cfg.san_depth,
            cfg.san_width,
            cfg.san_omega0,
            cfg.san_omega_hidden,
            seed=cfg.seed + 1,
            residual_layer=cfg.san_residual_layer,
            dtype=cfg.dtype,
        )
        return tmn, san

    def _checkpoint(
        self,
        step: int,
        tmn: TmnModel,
        san: SanModel,
        tmn_adam: AdamState,
        san_adam: AdamState,
        log: TrainLog,
        dims: tuple[int, int, int],
        previous: np.ndarray | None,
    ) -> np.ndarray:
        """Snapshot the template and, with a store, write both checkpoints."""
        template = template_plane(san, dims)
        if previous is not None:
            log.template_deltas.append(float(np.mean(np.abs(template - previous))))
        if self.store is not None and self.paths is not None:
            tmn_path = self.paths.checkpoint("tmn", step)
            self.store.write_checkpoint(tmn.core, tmn_path, tmn_adam, step)
            san_path = self.paths.checkpoint("san", step)
            self.store.write_checkpoint(san.core, san_path, san_adam, step)
            self.last_checkpoint = str(tmn_path)
            log.checkpoints.append(str(tmn_path))
        return template

    def train(
        self,
        dataset: SliceDataset,
        signal: SurrogateSignal,
        tracker: DiaphragmTracker | None = None,
    ) -> tuple[TmnModel, SanModel, TrainLog]:
        """Run `epochs` optimization steps, each over `meta_batch` sampled slices."""
        cfg = self.cfg
        train, val = split(dataset, cfg.train_fraction)
        tmn, san = self.init_models()
        log = TrainLog(checkpoint_every=cfg.checkpoint_every)
        adam = {
            name: AdamState.for_params(
                model.core, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps
            )
            for name, model in (("tmn", tmn), ("san", san))
        }
        self.adam = adam
        if cfg.epochs == 0:
            return tmn, san, log

        records, states = self.eligible_records(train, signal)
        self.logger.info(
            f"Training on {len(records)} records for {cfg.epochs} steps "
            f"({cfg.meta_batch} x {cfg.points_per_batch} points, lambda={cfg.jacdet_weight})"
        )
        pool = (
            ThreadPoolExecutor(max_workers=cfg.workers)
            if cfg.workers > 1 and not cfg.deterministic
            else None
        )
        template = None
        start = time.perf_counter()
        try:
            for step in range(1, cfg.epochs + 1):
                tick = time.perf_counter()
                picks = derive_rng(cfg.seed, step).integers(0, len(records), cfg.meta_batch)

                def evaluate(k: int, step=step):
                    x, gt, s = self._batch(records[k], train, states, step)
                    return total_loss(tmn, san, x.astype(cfg.dtype), s, gt, cfg.jacdet_weight)

                results = list(pool.map(evaluate, picks)) if pool else [evaluate(k) for k in picks]

                tmn_grads = GradientBundle.zeros_like(tmn.core)
                san_grads = GradientBundle.zeros_like(san.core)
                for _, g_tmn, g_san in results:
                    tmn_grads.accumulate(g_tmn)
                    san_grads.accumulate(g_san)
                tmn_grads.scale(1.0 / cfg.meta_batch)
                san_grads.scale(1.0 / cfg.meta_batch)
                report = LossReport.build(
                    float(np.mean([r.l_photo for r, _, _ in results])),
                    float(np.mean([r.l_jacdet for r, _, _ in results])),
                    cfg.jacdet_weight,
                    sum(r.n_points for r, _, _ in results),
                )
                if not math.isfinite(report.l_total):
                    raise TrainingDivergenceError(
                        f"Non-finite loss at step {step}", last_checkpoint=self.last_checkpoint
                    )
                try:
                    adam_step(tmn.core, adam["tmn"], tmn_grads)
                    adam_step(san.core, adam["san"], san_grads)
                except TrainingDivergenceError as e:
                    e.last_checkpoint = self.last_checkpoint
                    raise

                log.append(TrainLogRow(step, report, 1000.0 * (time.perf_counter() - tick)))
                if step % cfg.log_every == 0 or step == 1:
                    self.logger.info(
                        f"step {step}: l_photo={report.l_photo:.5f} "
                        f"l_jacdet={report.l_jacdet:.5f} l_total={report.l_total:.5f}"
                    )
                if step % cfg.checkpoint_every == 0 or step == cfg.epochs:
                    template = self._checkpoint(
                        step, tmn, san, adam["tmn"], adam["san"], log, dataset.dims, template
                    )
        finally:
            if pool is not None:
                pool.shutdown()
        log.wall_s = time.perf_counter() - start

        if cfg.validate and tracker is not None and len(val):
            report = evaluate_split(tmn, san, val, signal, tracker)
            log.validation = {"mae": report.mae[0], "mse": report.mse[0]}
            if report.trajectory_mae is not None:
                log.validation["trajectory_mae"] = report.trajectory_mae
        self.logger.info(f"Training finished in {log.wall_s:.1f}s")
        return tmn, san, log


def train(
    dataset: SliceDataset, signal: SurrogateSignal, cfg: TrainConfig
) -> tuple[TmnModel, SanModel, TrainLog]:
    """Train a model pair without writing checkpoints."""
    return Trainer(cfg).train(dataset, signal)


# ----------------
# --- ABLATION ---
# ----------------


def ablation_config(
    base: TrainConfig, axis: str, value: float, target: str = "tmn"
) -> TrainConfig:
    """Configuration of one ablation run."""
    if axis not in ABLATION_AXES:
        raise ConfigurationError(f"Unknown ablation axis {axis}, expected one of {ABLATION_AXES}")
    if target not in ABLATION_TARGETS:
        raise ConfigurationError(f"Unknown ablation target {target}")
    if axis == "data_fraction":
        return replace(base, data_fraction=float(value))
    if axis in ("depth", "width") and (float(value) != int(value) or int(value) <= 0):
        raise ConfigurationError(f"Ablation {axis} values must be positive integers, got {value}")
    field = {"omega": "omega0", "depth": "depth", "width": "width"}[axis]
    cast = float if axis == "omega" else int
    networks = ("tmn", "san") if target == "both" else (target,)
    return replace(base, **{f"{net}_{field}": cast(value) for net in networks})


def ablate(
    dataset: SliceDataset,
    signal: SurrogateSignal,
    base_cfg: TrainConfig,
    axis: str,
    values: list[float],
    tracker: DiaphragmTracker,
    target: str = "tmn",
) -> list[AblationRow]:
    """One independent, identically seeded training run per value, scored on validation."""
    configs = [ablation_config(base_cfg, axis, v, target) for v in values]
    _, val = split(dataset, base_cfg.train_fraction)
    rows = []
    for value, cfg in zip(values, configs):
        trainer = Trainer(replace(cfg, validate=False))
        tmn, san, log = trainer.train(dataset, signal)
        report = evaluate_split(tmn, san, val, signal, tracker)
        rows.append(
            AblationRow(
                axis, value, report.mae[0], report.mse[0], report.trajectory_mae, log.wall_s
            )
        )
        trainer.logger.info(f"Ablation {axis}={value}: MAE {report.mae[0]:.4f}")
    return rows
