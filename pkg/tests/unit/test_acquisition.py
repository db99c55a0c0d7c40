# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

from fractions import Fraction

import numpy as np
import pytest

from common.utils import to_index, to_normalized
from constants import CORONAL, NAVIGATOR
from core.domain import SliceDataset, SliceRecord
from core.errors import ConfigurationError, EmptyInputError, GeometryError
from managers.acquisition import (
    AcquisitionManager,
    adjacent_navigator,
    sample_points,
    sample_pooled,
    split,
    split_boundary,
)


def synthetic_dataset(n: int) -> SliceDataset:
    records = [
        SliceRecord(i, CORONAL if i % 2 == 0 else NAVIGATOR, 0, 0.32 * i, np.zeros((2, 2)))
        for i in range(n)
    ]
    return SliceDataset(records=records, dims=(2, 2, 2), spacing=(1.0, 1.0, 1.0))


def test_acquisition_alternates_coronal_and_navigator(dataset, phantom):
    assert len(dataset) == 64
    assert [r.kind for r in dataset.records[:4]] == [CORONAL, NAVIGATOR, CORONAL, NAVIGATOR]
    assert all(r.plane_position == phantom.navigator_position for r in dataset.navigators)
    assert len(dataset.coronal_positions) == 8
    assert dataset.coronal_positions[0] == 0
    assert dataset.coronal_positions[-1] == phantom.spec.dims[1] - 1


def test_acquisition_timestamps_and_pixels(dataset, phantom):
    nx, ny, nz = phantom.spec.dims
    timestamps = np.array([r.timestamp for r in dataset.records])
    assert np.allclose(np.diff(timestamps), 0.32)
    assert dataset.coronals[0].pixels.shape == (nx, nz)
    assert dataset.navigators[0].pixels.shape == (ny, nz)
    record = dataset.records[5]
    assert np.allclose(
        record.pixels, phantom.render_plane(0, record.plane_position, record.amplitude_gt)
    )


def test_coronal_stack_cycles_through_positions(dataset):
    positions = [r.plane_position for r in dataset.coronals]
    assert positions[:8] == dataset.coronal_positions
    assert positions[8:16] == positions[:8]


def test_acquisition_is_deterministic(phantom, breath):
    a = AcquisitionManager(phantom, breath).acquire(4, 1)
    b = AcquisitionManager(phantom, breath).acquire(4, 1)
    assert all(np.array_equal(x.pixels, y.pixels) for x, y in zip(a.records, b.records))


def test_acquisition_rejects_invalid_layouts(phantom, breath):
    with pytest.raises(ConfigurationError):
        AcquisitionManager(phantom, breath).acquire(0, 1)
    with pytest.raises(ConfigurationError):
        AcquisitionManager(phantom, breath).acquire(4, 0)
    with pytest.raises(ConfigurationError):
        AcquisitionManager(phantom, breath, navigator_position=999).acquire(4, 1)


def test_temporal_split_of_the_full_protocol():
    train, val = split(synthetic_dataset(768), Fraction(11, 12))
    assert len(train) == 704 and len(val) == 64
    assert train.records[-1].index == 703
    assert val.records[0].index == 704


def test_split_is_a_prefix(dataset):
    train, val = split(dataset)
    assert len(train) == 58 and len(val) == 6
    assert max(r.timestamp for r in train.records) < min(r.timestamp for r in val.records)
    assert dataset.split_index == 58


@pytest.mark.parametrize("fraction", [Fraction(0), Fraction(1), 1.5])
def test_split_rejects_degenerate_fractions(fraction):
    with pytest.raises(ConfigurationError):
        split_boundary(10, fraction)


def test_split_of_empty_dataset():
    with pytest.raises(EmptyInputError):
        split(synthetic_dataset(0))


def test_sampling_is_seeded_per_record_and_step(dataset):
    record = dataset.coronals[3]
    first = sample_points(record, 50, seed=1, dims=dataset.dims)
    again = sample_points(record, 50, seed=1, dims=dataset.dims)
    other = sample_points(record, 50, seed=1, dims=dataset.dims, step=1)
    assert np.array_equal(first[0], again[0])
    assert not np.array_equal(first[0], other[0])


def test_sampled_values_match_coordinates(dataset):
    record = dataset.coronals[2]
    nx, _, nz = dataset.dims
    coords, values = sample_points(record, 0, seed=0, dims=dataset.dims, dense=True)
    assert coords.shape == (nx * nz, 3)
    assert np.all(np.abs(coords) <= 1.0)
    # the fixed axis carries the plane position
    expected_y = 2.0 * record.plane_position / (dataset.dims[1] - 1) - 1.0
    assert np.allclose(coords[:, 1], expected_y)
    assert np.array_equal(values, record.pixels.ravel())
    assert coords[0, 0] == -1.0 and coords[-1, 2] == 1.0


def test_sampling_checks_geometry(dataset):
    record = dataset.coronals[0]
    with pytest.raises(GeometryError):
        sample_points(record, 10, seed=0, dims=(8, 8, 8))
    with pytest.raises(ConfigurationError):
        sample_points(record, 0, seed=0, dims=dataset.dims)


def test_pooled_sampling_spreads_points_over_records(dataset):
    records = dataset.coronals[:3]
    coords, values, owners = sample_pooled(records, 100, seed=0, dims=dataset.dims)
    assert coords.shape == (100, 3) and values.shape == (100,)
    assert [int(np.sum(owners == r.index)) for r in records] == [34, 33, 33]
    with pytest.raises(EmptyInputError):
        sample_pooled([], 10, seed=0, dims=dataset.dims)


def test_adjacent_navigator(dataset):
    coronal = dataset.records[4]
    assert adjacent_navigator(dataset, coronal).index == 5
    lone = dataset.with_records(dataset.records[:1])
    assert adjacent_navigator(lone, lone.records[0]) is None


@pytest.mark.parametrize("n", [1, 2, 3, 24, 96])
def test_voxel_index_round_trip(n):
    indices = np.arange(n)
    coords = to_normalized(indices, n)
    assert np.all((coords >= -1.0) & (coords <= 1.0))
    assert np.allclose(to_index(coords, n), indices)
    assert np.array_equal(np.rint(to_index(coords, n)).astype(int), indices)
