# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

import math

import numpy as np
import pytest

from constants import VOLUME_MAGIC, VOXEL_UNITS
from core.domain import (
    GapReport,
    LossReport,
    ModelManifest,
    TrainLog,
    TrainLogRow,
    VolumeGrid,
)
from core.errors import ArtifactNotFoundError, FormatError
from managers.nn import AdamState, adam_step, backward, forward
from managers.storage import HIDDEN, decode_header, encode_header


def test_volume_keeps_float32_data_and_exact_header(store, workload, rng):
    grid = VolumeGrid(rng.uniform(size=(4, 3, 5)), (2.0, 2.0, 3.5), amplitude=0.1, seed=7)
    path = workload.paths.workdir / "v.cvol"
    store.write_volume(grid, path)
    back = store.read_volume(path)
    assert back.dims == (4, 3, 5)
    assert back.spacing == (2.0, 2.0, 3.5)
    assert back.amplitude == 0.1 and back.seed == 7
    assert np.array_equal(back.data, grid.data.astype(np.float32).astype(np.float64))


def test_volume_payload_is_x_fastest(store, workload):
    grid = VolumeGrid(np.arange(24, dtype=np.float64).reshape(2, 3, 4), (1.0, 1.0, 1.0))
    path = workload.paths.workdir / "v.cvol"
    store.write_volume(grid, path)
    _, payload = decode_header(workload.read_bytes(str(path)), VOLUME_MAGIC, str(path))
    values = np.frombuffer(payload, dtype="<f4")
    assert list(values[:3]) == [grid.data[0, 0, 0], grid.data[1, 0, 0], grid.data[0, 1, 0]]


def test_truncated_volume(store, workload, rng):
    path = workload.paths.workdir / "v.cvol"
    store.write_volume(VolumeGrid(rng.uniform(size=(2, 2, 2)), (1.0, 1.0, 1.0)), path)
    workload.write_bytes(workload.read_bytes(str(path))[:-4], str(path))
    with pytest.raises(FormatError):
        store.read_volume(path)


def test_wrong_magic_and_unterminated_header(store, workload):
    path = workload.paths.workdir / "v.cvol"
    workload.write_bytes(b"NOT-A-VOLUME\n", str(path))
    with pytest.raises(FormatError):
        store.read_volume(path)
    workload.write_bytes(encode_header(VOLUME_MAGIC, {"dims": "2 2 2"})[:-12], str(path))
    with pytest.raises(FormatError):
        store.read_volume(path)


def test_missing_artifact(store, workload):
    with pytest.raises(ArtifactNotFoundError):
        store.read_volume(workload.paths.workdir / "absent.cvol")


def test_dataset_hides_the_ground_truth(store, workload, dataset):
    paths = workload.paths
    store.write_dataset(dataset, paths)
    store.write_ground_truth(dataset, {"seed": 3}, paths.ground_truth)

    manifest = workload.read(str(paths.manifest))
    assert manifest[0] == "index,kind,plane_position,timestamp,amplitude_gt,file"
    assert all(line.split(",")[4] == HIDDEN for line in manifest[1:])

    back = store.read_dataset(paths)
    assert len(back) == len(dataset)
    assert back.dims == dataset.dims and back.split_index == dataset.split_index
    assert all(math.isnan(r.amplitude_gt) for r in back.records)
    first, original = back.records[1], dataset.records[1]
    assert (first.kind, first.plane_position, first.timestamp) == (
        original.kind,
        original.plane_position,
        original.timestamp,
    )
    assert np.allclose(first.pixels, original.pixels, atol=1e-7)

    amplitudes = store.read_ground_truth(paths.ground_truth)
    assert amplitudes[5] == dataset.records[5].amplitude_gt


def test_manifest_row_must_match_its_slice(store, workload, dataset):
    paths = workload.paths
    store.write_dataset(dataset.with_records(dataset.records[:2]), paths)
    store.write_slice(dataset.records[1], paths.slice_file(0))
    with pytest.raises(FormatError):
        store.read_dataset(paths)


def test_signal_and_metadata(store, workload, signal):
    paths = workload.paths
    store.write_signal(signal, {"normalization": "train"}, paths.signal, paths.signal_meta)
    back, meta = store.read_signal(paths.signal, paths.signal_meta)
    assert meta["normalization"] == "train"
    assert back.roi == signal.roi and back.landmark_columns == signal.landmark_columns
    assert np.array_equal(back.raw, signal.raw)
    assert np.array_equal(back.norm01, signal.norm01)


def test_checkpoint_restores_parameters_and_moments(store, workload, tmn):
    _, tape = forward(tmn.core, np.zeros((3, 4)))
    grads = backward(tmn.core, tape, np.ones((3, 3)))
    adam = AdamState.for_params(tmn.core, lr=1e-3)
    adam_step(tmn.core, adam, grads)

    path = workload.paths.checkpoint("tmn", 7)
    store.write_checkpoint(tmn.core, path, adam, step=7)
    params, moments, step = store.read_checkpoint(path)

    assert step == 7
    assert params.dims == tmn.core.dims
    for a, b in zip(params.layers, tmn.core.layers):
        assert np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)
        assert (a.omega, a.activation, a.residual) == (b.omega, b.activation, b.residual)
    assert moments.t == 1 and moments.lr == 1e-3
    assert np.array_equal(moments.v_weights[0], adam.v_weights[0])


def test_checkpoint_without_moments(store, workload, san):
    path = workload.paths.final_checkpoint("san")
    store.write_checkpoint(san.core, path)
    params, moments, step = store.read_checkpoint(path)
    assert moments is None and step == 0
    assert [layer.residual for layer in params.layers] == [
        layer.residual for layer in san.core.layers
    ]


def test_model_manifest(store, workload):
    manifest = ModelManifest(-20.5, -8.25, (32, 32, 24), (3.0, 3.0, 4.0))
    path = workload.paths.model_manifest
    store.write_model_manifest(manifest, path, {"epochs": 4})
    assert store.read_model_manifest(path) == manifest
    assert store.read_yaml(path)["epochs"] == 4


@pytest.mark.parametrize(
    "content",
    [
        "raw_max: 1.0\ndims: [2, 2, 2]\nspacing: [1, 1, 1]\n",
        "raw_min: 0.0\nraw_max: 1.0\ndims: [2, 2, 2]\nspacing: [1, 1, 1]\n"
        "displacement_units: furlongs\n",
        "- not\n- a mapping\n",
    ],
)
def test_invalid_model_manifest(store, workload, content):
    path = workload.paths.model_manifest
    workload.write(content, str(path))
    with pytest.raises(FormatError):
        store.read_model_manifest(path)


def test_voxel_units_are_accepted(store, workload):
    manifest = ModelManifest(0.0, 1.0, (2, 2, 2), (1.0, 1.0, 1.0), displacement_units=VOXEL_UNITS)
    store.write_model_manifest(manifest, workload.paths.model_manifest, {})
    assert store.read_model_manifest(workload.paths.model_manifest).displacement_units == "voxel"


def test_train_log_reads_back_as_a_table(store, workload):
    log = TrainLog(checkpoint_every=2, template_deltas=[0.5, 0.25], validation={"mae": 0.1})
    log.append(TrainLogRow(0, LossReport.build(0.5, 0.2, 0.05, 64), 1.0))
    log.append(TrainLogRow(1, LossReport.build(0.4, 0.1, 0.05, 64), 1.0))
    store.write_train_log(log, workload.paths.train_log)
    rows = store.read_table(workload.paths.train_log)
    assert [r["step"] for r in rows] == ["0", "1"]
    assert float(rows[0]["l_total"]) == pytest.approx(0.51)
    header = workload.read(str(workload.paths.train_log))[:2]
    assert header == ["# checkpoint_every=2", "# template_deltas=0.5,0.25"]


def test_gap_report(store, workload):
    reports = [GapReport(0, 0.05, {4: 0.12}), GapReport(1, 0.15)]
    store.write_gap_report(reports, "sorting borrows slices", workload.paths.gap_report)
    content = store.read_yaml(workload.paths.gap_report)
    assert content["bins"][0]["borrowed"] == {4: 0.12}
    assert content["bins"][1]["borrowed"] == {}


def test_graymap(store, workload):
    path = workload.paths.workdir / "image.pgm"
    store.write_graymap(np.array([[0.0, 0.5, 1.0], [2.0, -1.0, 0.25]]), path)
    content = workload.read_bytes(str(path))
    assert content.startswith(b"P5\n3 2\n255\n")
    assert list(content[-6:]) == [0, 128, 255, 255, 0, 64]
    with pytest.raises(FormatError):
        store.write_graymap(np.zeros(3), path)
