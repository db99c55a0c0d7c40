# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

import numpy as np
import pytest

from core.domain import BreathSpec, GroundTruthMotion, PhantomSpec, TrainConfig
from managers.acquisition import AcquisitionManager
from managers.networks import build_san, build_tmn
from managers.phantom import PhantomManager
from managers.storage import ArtifactStore
from managers.surrogate import DiaphragmTracker
from workload import LocalWorkload


@pytest.fixture
def small_spec():
    """Provide a reduced phantom grid keeping every structure inside the bounds."""
    return PhantomSpec(dims=(32, 32, 24), spacing=(3.0, 3.0, 4.0), seed=3)


@pytest.fixture
def small_motion():
    """Provide a breathing deformation scaled to the reduced grid."""
    return GroundTruthMotion(peak_displacement_mm=10.0)


@pytest.fixture
def phantom(small_spec, small_motion):
    """Provide the reduced phantom."""
    return PhantomManager(small_spec, small_motion)


@pytest.fixture
def breath():
    """Provide the default irregular breathing pattern with a fixed seed."""
    return BreathSpec(seed=3)


@pytest.fixture
def dataset(phantom, breath):
    """Provide a 64-record acquisition over 8 coronal positions."""
    return AcquisitionManager(phantom, breath).acquire(n_coronal_positions=8, n_sweeps=4)


@pytest.fixture
def tracker(phantom):
    """Provide a tracker configured from the phantom geometry."""
    return DiaphragmTracker(phantom.navigator_roi(), phantom.landmark_columns())


@pytest.fixture
def signal(dataset, tracker):
    """Provide the surrogate tracked from every navigator."""
    return tracker.track(dataset.navigators)


@pytest.fixture
def tmn():
    """Provide a small seeded motion network."""
    return build_tmn(depth=2, width=16, omega0=5.0, seed=0)


@pytest.fixture
def san():
    """Provide a small seeded anatomy network with a skip connection."""
    return build_san(depth=3, width=16, omega0=5.0, seed=1, residual_layer=2)


@pytest.fixture
def train_config():
    """Provide a training configuration small enough for unit tests."""
    return TrainConfig(
        epochs=4,
        meta_batch=2,
        points_per_batch=64,
        tmn_depth=2,
        tmn_width=16,
        san_depth=2,
        san_width=16,
        san_residual_layer=2,
        tmn_omega0=5.0,
        san_omega0=5.0,
        learning_rate=1e-3,
        checkpoint_every=2,
        log_every=1,
        seed=0,
    )


@pytest.fixture
def workload(tmp_path):
    """Provide a local workload rooted in a temporary directory."""
    return LocalWorkload(tmp_path)


@pytest.fixture
def store(workload):
    """Provide an artifact store on the temporary workload."""
    return ArtifactStore(workload)


@pytest.fixture
def rng():
    """Provide a seeded generator."""
    return np.random.default_rng(1234)
