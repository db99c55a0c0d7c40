# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

import math
from dataclasses import replace

import numpy as np
import pytest

import managers.trainer as trainer_module
from core.domain import LossReport
from core.errors import ConfigurationError, ExtrapolationError, TrainingDivergenceError
from managers.acquisition import split
from managers.trainer import (
    Trainer,
    ablate,
    ablation_config,
    jacobian_deviation,
    template_plane,
    train,
)


def same_weights(a, b) -> bool:
    return all(
        np.array_equal(x.weight, y.weight) and np.array_equal(x.bias, y.bias)
        for x, y in zip(a.core.layers, b.core.layers)
    )


def test_zero_epochs_returns_the_initialisation(train_config, dataset, signal):
    cfg = replace(train_config, epochs=0)
    tmn, san, log = Trainer(cfg).train(dataset, signal)
    fresh_tmn, fresh_san = Trainer(cfg).init_models()
    assert same_weights(tmn, fresh_tmn) and same_weights(san, fresh_san)
    assert log.rows == []


def test_training_is_reproducible(train_config, dataset, signal):
    a_tmn, a_san, a_log = Trainer(train_config).train(dataset, signal)
    b_tmn, b_san, b_log = Trainer(train_config).train(dataset, signal)
    assert same_weights(a_tmn, b_tmn) and same_weights(a_san, b_san)
    assert [r.report.l_total for r in a_log.rows] == [r.report.l_total for r in b_log.rows]
    fresh_tmn, _ = Trainer(train_config).init_models()
    assert not same_weights(a_tmn, fresh_tmn)


def test_train_function_matches_the_trainer(train_config, dataset, signal):
    tmn, san, log = train(dataset, signal, train_config)
    a_tmn, a_san, _ = Trainer(train_config).train(dataset, signal)
    assert same_weights(tmn, a_tmn) and same_weights(san, a_san)
    assert log.checkpoints == []


def test_threaded_batches_match_serial_batches(train_config, dataset, signal):
    serial = Trainer(train_config).train(dataset, signal)
    cfg = replace(train_config, workers=2, deterministic=False)
    threaded = Trainer(cfg).train(dataset, signal)
    assert same_weights(serial[0], threaded[0]) and same_weights(serial[1], threaded[1])


def test_log_rows(train_config, dataset, signal):
    _, _, log = Trainer(train_config).train(dataset, signal)
    assert [r.step for r in log.rows] == [1, 2, 3, 4]
    for row in log.rows:
        r = row.report
        assert r.l_total == pytest.approx(r.l_photo + train_config.jacdet_weight * r.l_jacdet)
        assert r.n_points == train_config.meta_batch * train_config.points_per_batch


def test_checkpoints_are_written_on_cadence(train_config, dataset, signal, store, workload):
    paths = workload.paths
    trainer = Trainer(train_config, store, paths)
    tmn, _, log = trainer.train(dataset, signal)
    assert log.checkpoints == [str(paths.checkpoint("tmn", 2)), str(paths.checkpoint("tmn", 4))]
    assert workload.exists(str(paths.checkpoint("san", 4)))
    assert len(log.template_deltas) == 1
    params, adam, step = store.read_checkpoint(paths.checkpoint("tmn", 4))
    assert step == 4 and adam.t == 4
    assert trainer.adam["tmn"].t == 4 and trainer.adam["san"].t == 4
    assert all(np.array_equal(a.weight, b.weight) for a, b in zip(params.layers, tmn.core.layers))


@pytest.mark.slow
def test_template_settles_between_checkpoints(train_config, dataset, signal):
    cfg = replace(train_config, epochs=200, checkpoint_every=40, log_every=200)
    _, _, log = Trainer(cfg).train(dataset, signal)
    deltas = log.template_deltas
    assert len(deltas) == 4
    assert deltas[-1] < deltas[0]


def test_jacobian_penalty_regularises_the_motion(train_config, dataset, signal):
    base = replace(
        train_config, epochs=60, points_per_batch=128, log_every=60, checkpoint_every=60
    )
    deviation = {}
    for weight in (0.0, 0.05):
        tmn, _, _ = Trainer(replace(base, jacdet_weight=weight)).train(dataset, signal)
        deviation[weight] = jacobian_deviation(tmn, seed=base.seed)
    assert deviation[0.05] < deviation[0.0]


def test_validation_metrics_are_logged(train_config, dataset, signal, tracker):
    _, _, log = Trainer(train_config).train(dataset, signal, tracker)
    assert set(log.validation) >= {"mae", "mse"}
    assert 0 <= log.validation["mae"] <= 1


def test_eligible_records(train_config, dataset, signal):
    train, _ = split(dataset)
    records, states = Trainer(train_config).eligible_records(train, signal)
    # the first coronal slice precedes the first navigator
    assert len(records) == len(train) - 1
    assert all(abs(s) <= 1 for s in states.values())

    half = Trainer(replace(train_config, data_fraction=0.5)).eligible_records(train, signal)[0]
    assert max(r.index for r in half) == 28

    shifted = signal.renormalized(signal.raw_max + 1.0, signal.raw_max + 2.0)
    with pytest.raises(ExtrapolationError):
        Trainer(train_config).eligible_records(train, shifted)


def test_state_sampling_pairs_coronals_with_navigators(train_config, dataset, signal):
    cfg = replace(train_config, sampling_mode="state")
    trainer = Trainer(cfg)
    train, _ = split(dataset)
    _, states = trainer.eligible_records(train, signal)
    x, gt, s = trainer._batch(train.records[2], train, states, step=1)
    assert x.shape == (64, 3) and gt.shape == (64,)
    assert set(np.unique(s)) == {states[2], states[3]}
    tmn, san, _ = trainer.train(dataset, signal)
    assert tmn is not None and san is not None


def test_divergence_reports_the_last_checkpoint(
    train_config, dataset, signal, store, workload, monkeypatch
):
    real_total_loss = trainer_module.total_loss
    calls = []

    def failing_total_loss(*args):
        calls.append(1)
        report, tmn_grads, san_grads = real_total_loss(*args)
        if len(calls) > 2:
            report = LossReport.build(math.nan, report.l_jacdet, report.lam, report.n_points)
        return report, tmn_grads, san_grads

    monkeypatch.setattr(trainer_module, "total_loss", failing_total_loss)
    cfg = replace(train_config, checkpoint_every=1)
    with pytest.raises(TrainingDivergenceError) as e:
        Trainer(cfg, store, workload.paths).train(dataset, signal)
    assert e.value.last_checkpoint == str(workload.paths.checkpoint("tmn", 1))


def test_jacobian_deviation_and_template(tmn, san):
    deviation = jacobian_deviation(tmn, n_points=500, seed=3)
    assert deviation >= 0
    assert deviation == jacobian_deviation(tmn, n_points=500, seed=3)
    assert template_plane(san, (10, 8, 6)).shape == (10, 6)


def test_ablation_configs(train_config):
    both = ablation_config(train_config, "omega", 10, "both")
    assert (both.tmn_omega0, both.san_omega0) == (10.0, 10.0)
    wide = ablation_config(train_config, "width", 32)
    assert (wide.tmn_width, wide.san_width) == (32, 16)
    assert ablation_config(train_config, "data_fraction", 0.25).data_fraction == 0.25
    with pytest.raises(ConfigurationError):
        ablation_config(train_config, "depth", 2.5)
    with pytest.raises(ConfigurationError):
        ablation_config(train_config, "dropout", 0.1)
    with pytest.raises(ConfigurationError):
        ablation_config(train_config, "width", 8, "decoder")
    with pytest.raises(ConfigurationError):
        ablation_config(train_config, "data_fraction", 0.0)


def test_ablation_rows(train_config, dataset, signal, tracker):
    cfg = replace(train_config, epochs=2)
    rows = ablate(dataset, signal, cfg, "width", [8, 16], tracker)
    assert [(r.axis, r.value) for r in rows] == [("width", 8), ("width", 16)]
    assert all(0 <= r.val_mae <= 1 and r.val_mse <= r.val_mae for r in rows)
