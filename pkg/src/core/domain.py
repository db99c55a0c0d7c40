#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""Domain objects of the 4D-MRI reconstruction pipeline."""

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from constants import (
    BIN_MEAN,
    CLAMP,
    CORONAL,
    DEFAULT_ADAM_EPS,
    DEFAULT_BETA1,
    DEFAULT_BETA2,
    DEFAULT_JACDET_WEIGHT,
    DEFAULT_LEARNING_RATE,
    DEFAULT_OMEGA0,
    DEFAULT_OMEGA_HIDDEN,
    DEFAULT_TRAIN_FRACTION,
    NAVIGATOR,
    NEAREST_TO_CENTER,
    NORM01,
    NORM11,
    NORMALIZED_UNITS,
)
from core.errors import ConfigurationError, DegenerateRangeError, ExtrapolationError

# ---------------
# --- VOLUMES ---
# ---------------


@dataclass
class VolumeGrid:
    """A 3D scalar intensity field sampled at voxel centers, indexed [x, y, z]."""

    data: np.ndarray
    spacing: tuple[float, float, float]
    amplitude: float = 0.0
    seed: int = 0

    @property
    def dims(self) -> tuple[int, int, int]:
        """Return the voxel dimensions (nx, ny, nz)."""
        return tuple(int(n) for n in self.data.shape)  # type: ignore

    def coronal(self, y_index: int) -> np.ndarray:
        """Return the coronal plane (x, z) at a y index."""
        return self.data[:, y_index, :]

    def sagittal(self, x_index: int) -> np.ndarray:
        """Return the sagittal plane (y, z) at an x index."""
        return self.data[x_index, :, :]

    def mip(self) -> np.ndarray:
        """Maximum intensity projection over the anterior-posterior (y) axis."""
        return self.data.max(axis=1)


# ---------------
# --- PHANTOM ---
# ---------------


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry of the analytic thorax phantom.

    Anatomy is laid out as fractions of the physical half-extent of the volume, so reduced
    grids keep every primitive inside the bounds. The z axis points inferior.
    """

    dims: tuple[int, int, int] = (96, 96, 64)
    spacing: tuple[float, float, float] = (2.0, 2.0, 3.5)
    diaphragm_width_mm: float = 6.0
    vessel_trunks: int = 3
    seed: int = 42

    def __post_init__(self):
        if any(n < 2 for n in self.dims) or any(s <= 0 for s in self.spacing):
            raise ConfigurationError(f"Invalid phantom grid {self.dims} / {self.spacing}")
        if self.vessel_trunks < 2:
            raise ConfigurationError("At least two vessel trunks per lung are required")

    @property
    def half_extent(self) -> np.ndarray:
        """Half of the physical extent spanned by the voxel centers, in mm."""
        return (np.asarray(self.dims, dtype=np.float64) - 1.0) * np.asarray(self.spacing) / 2.0


@dataclass(frozen=True)
class BreathSpec:
    """Irregular breathing generator parameters."""

    period_s: float = 4.0
    period_jitter: float = 0.15
    depth_jitter: float = 0.2
    drift_amplitude: float = 0.05
    duration_s: float = 204.8
    sample_interval_s: float = 0.32
    seed: int = 42

    def __post_init__(self):
        if self.period_s <= 0 or self.sample_interval_s <= 0 or self.duration_s < 0:
            raise ConfigurationError("Breathing period, duration and sample interval must be > 0")
        if not (0 <= self.period_jitter < 1 and 0 <= self.depth_jitter < 1):
            raise ConfigurationError("Breathing jitters must lie in [0, 1)")


@dataclass(frozen=True)
class GroundTruthMotion:
    """Analytic breathing deformation of the phantom."""

    peak_displacement_mm: float = 18.0
    decay_length_mm: float = 80.0
    ap_coupling: float = 0.15

    def __post_init__(self):
        if not 0 <= self.ap_coupling <= 0.3:
            raise ConfigurationError("ap_coupling must lie in [0, 0.3]")
        if self.decay_length_mm <= 0:
            raise ConfigurationError("decay_length_mm must be positive")


# ---------------------
# --- ACQUISITION ---
# ---------------------


@dataclass
class SliceRecord:
    """One acquired 2D slice."""

    index: int
    kind: str
    plane_position: int
    timestamp: float
    pixels: np.ndarray
    amplitude_gt: float = math.nan

    @property
    def is_navigator(self) -> bool:
        """Whether this is a sagittal navigator slice."""
        return self.kind == NAVIGATOR

    @property
    def is_coronal(self) -> bool:
        """Whether this is a coronal stack slice."""
        return self.kind == CORONAL


@dataclass
class SliceDataset:
    """Timestamped slices with their volume geometry."""

    records: list[SliceRecord]
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    split_index: int | None = None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def navigators(self) -> list[SliceRecord]:
        """Return the navigator records in timestamp order."""
        return [r for r in self.records if r.is_navigator]

    @property
    def coronals(self) -> list[SliceRecord]:
        """Return the coronal records in timestamp order."""
        return [r for r in self.records if r.is_coronal]

    @property
    def coronal_positions(self) -> list[int]:
        """Return the distinct coronal y positions, sorted."""
        return sorted({r.plane_position for r in self.coronals})

    def with_records(self, records: list[SliceRecord]) -> "SliceDataset":
        """Return a dataset sharing geometry with this one."""
        return SliceDataset(records=records, dims=self.dims, spacing=self.spacing)


# -----------------
# --- SURROGATE ---
# -----------------


@dataclass
class SurrogateSignal:
    """Respiratory surrogate derived from navigator slices."""

    timestamps: np.ndarray
    raw: np.ndarray
    raw_min: float
    raw_max: float
    landmark_columns: tuple[int, ...] = ()
    roi: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if not self.raw_max > self.raw_min:
            raise DegenerateRangeError(
                f"Surrogate range is degenerate (min={self.raw_min}, max={self.raw_max})"
            )

    @property
    def norm01(self) -> np.ndarray:
        """Signal normalized to [0, 1] with the frozen min/max."""
        return (self.raw - self.raw_min) / (self.raw_max - self.raw_min)

    @property
    def norm11(self) -> np.ndarray:
        """Signal normalized to [-1, 1] for network input."""
        return 2.0 * self.norm01 - 1.0

    def renormalized(self, raw_min: float, raw_max: float) -> "SurrogateSignal":
        """Return the same signal normalized against another min/max."""
        return replace(self, raw_min=float(raw_min), raw_max=float(raw_max))

    def covers(self, timestamp: float) -> bool:
        """Whether a timestamp lies inside the sampled span."""
        return bool(self.timestamps[0] <= timestamp <= self.timestamps[-1])

    def value_at(self, timestamp: float, scale: str = NORM11) -> float:
        """Linearly interpolate the signal at a timestamp."""
        if not self.covers(timestamp):
            raise ExtrapolationError(
                f"Timestamp {timestamp:.4f}s outside surrogate span "
                f"[{self.timestamps[0]:.4f}, {self.timestamps[-1]:.4f}]"
            )
        values = {NORM01: self.norm01, NORM11: self.norm11}[scale]
        return float(np.interp(timestamp, self.timestamps, values))


# ----------------
# --- TRAINING ---
# ----------------


@dataclass(frozen=True)
class TrainConfig:
    """Joint optimization settings."""

    epochs: int = 10000
    meta_batch: int = 8
    points_per_batch: int = 10000
    learning_rate: float = DEFAULT_LEARNING_RATE
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    adam_eps: float = DEFAULT_ADAM_EPS
    jacdet_weight: float = DEFAULT_JACDET_WEIGHT
    tmn_omega0: float = DEFAULT_OMEGA0
    tmn_omega_hidden: float = DEFAULT_OMEGA_HIDDEN
    san_omega0: float = DEFAULT_OMEGA0
    san_omega_hidden: float = DEFAULT_OMEGA_HIDDEN
    tmn_depth: int = 4
    tmn_width: int = 256
    san_depth: int = 4
    san_width: int = 512
    san_residual_layer: int = 4
    train_fraction: Fraction = DEFAULT_TRAIN_FRACTION
    data_fraction: float = 1.0
    sampling_mode: str = "slice"
    seed: int = 42
    checkpoint_every: int = 200
    log_every: int = 50
    precision: str = "float64"
    deterministic: bool = True
    workers: int = 1
    validate: bool = True

    def __post_init__(self):
        counts = (
            self.meta_batch,
            self.points_per_batch,
            self.tmn_depth,
            self.tmn_width,
            self.san_depth,
            self.san_width,
            self.checkpoint_every,
            self.log_every,
            self.workers,
        )
        if self.epochs < 0 or any(c <= 0 for c in counts):
            raise ConfigurationError("Training counts must be positive")
        if not 0 < self.data_fraction <= 1:
            raise ConfigurationError("data_fraction must lie in (0, 1]")
        if not 0 < self.train_fraction < 1:
            raise ConfigurationError("train_fraction must lie in (0, 1)")
        if self.precision not in ("float64", "float32"):
            raise ConfigurationError(f"Unknown precision {self.precision}")
        if self.sampling_mode not in ("slice", "state"):
            raise ConfigurationError(f"Unknown sampling mode {self.sampling_mode}")
        if self.jacdet_weight < 0:
            raise ConfigurationError("jacdet_weight must be non-negative")

    @property
    def dtype(self) -> type:
        """Floating point type used for the training math."""
        return np.float64 if self.precision == "float64" else np.float32


@dataclass
class LossReport:
    """Terms of the joint objective for one batch."""

    l_photo: float
    l_jacdet: float
    l_total: float
    lam: float
    n_points: int

    @classmethod
    def build(cls, l_photo: float, l_jacdet: float, lam: float, n_points: int) -> "LossReport":
        """Assemble a report whose total is computed from the stored terms."""
        return cls(l_photo, l_jacdet, l_photo + lam * l_jacdet, lam, n_points)


@dataclass
class TrainLogRow:
    """One logged optimization step."""

    step: int
    report: LossReport
    wall_ms: float


@dataclass
class TrainLog:
    """History of a training run."""

    rows: list[TrainLogRow] = field(default_factory=list)
    checkpoint_every: int = 200
    wall_s: float = 0.0
    template_deltas: list[float] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)
    validation: dict[str, float] = field(default_factory=dict)

    def append(self, row: TrainLogRow) -> None:
        """Add a row; steps must strictly increase."""
        if self.rows and row.step <= self.rows[-1].step:
            raise ValueError(f"Non increasing step {row.step}")
        self.rows.append(row)


# ----------------------
# --- RECONSTRUCTION ---
# ----------------------


@dataclass(frozen=True)
class ModelManifest:
    """Normalization constants and geometry a trained model pair depends on."""

    raw_min: float
    raw_max: float
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    displacement_units: str = NORMALIZED_UNITS
    tmn_checkpoint: str = "tmn.ckpt"
    san_checkpoint: str = "san.ckpt"


@dataclass(frozen=True)
class ReconRequest:
    """A volume to reconstruct at one respiratory state."""

    state: float
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    scale: str = NORM01
    batch_size: int = 100000
    policy: str = CLAMP

    def __post_init__(self):
        if self.scale not in (NORM01, NORM11):
            raise ConfigurationError(f"Unknown state scale {self.scale}")
        if self.batch_size <= 0:
            raise ConfigurationError("batch_size must be positive")

    @property
    def s_tilde(self) -> float:
        """State on the [-1, 1] network scale."""
        return 2.0 * self.state - 1.0 if self.scale == NORM01 else float(self.state)


@dataclass(frozen=True)
class SortingConfig:
    """Conventional respiratory binning settings."""

    n_bins: int = 10
    bin_mode: str = "amplitude"
    statistic: str = NEAREST_TO_CENTER

    def __post_init__(self):
        if self.n_bins < 2:
            raise ConfigurationError("At least two bins are required")
        if self.bin_mode not in ("amplitude", "phase"):
            raise ConfigurationError(f"Unknown bin mode {self.bin_mode}")
        if self.statistic not in (NEAREST_TO_CENTER, BIN_MEAN):
            raise ConfigurationError(f"Unknown bin statistic {self.statistic}")


@dataclass
class GapReport:
    """Coronal positions a bin had to borrow a slice for."""

    bin_index: int
    bin_center: float
    borrowed: dict[int, float] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        """Whether every position had a slice inside the bin."""
        return not self.borrowed


# ---------------
# --- METRICS ---
# ---------------


@dataclass
class SliceScore:
    """Image metrics of one validation slice."""

    index: int
    kind: str
    plane_position: int
    state: float
    out_of_range: bool
    mae: float
    mse: float
    psnr: float
    ssim: float


@dataclass
class EvalReport:
    """Aggregated evaluation of a reconstruction method on the validation split."""

    method: str
    scores: list[SliceScore] = field(default_factory=list)
    trajectory_mae: float | None = None
    trajectory_pattern: float | None = None
    trajectory_status: str = "ok"

    def _stat(self, name: str) -> tuple[float, float]:
        values = np.array([getattr(s, name) for s in self.scores], dtype=np.float64)
        if values.size == 0:
            return math.nan, math.nan
        finite = values[np.isfinite(values)]
        if finite.size == 0:
            return math.inf, 0.0
        return float(finite.mean()), float(finite.std())

    @property
    def mae(self) -> tuple[float, float]:
        """Mean and population standard deviation of the slice MAE."""
        return self._stat("mae")

    @property
    def mse(self) -> tuple[float, float]:
        """Mean and population standard deviation of the slice MSE."""
        return self._stat("mse")

    @property
    def psnr(self) -> tuple[float, float]:
        """Mean and population standard deviation over slices with a finite PSNR."""
        return self._stat("psnr")

    @property
    def ssim(self) -> tuple[float, float]:
        """Mean and population standard deviation of the slice SSIM."""
        return self._stat("ssim")

    @property
    def n_out_of_range(self) -> int:
        """Number of slices whose state fell outside the training normalization."""
        return sum(s.out_of_range for s in self.scores)


@dataclass
class AblationRow:
    """Validation outcome of one ablation run."""

    axis: str
    value: float
    val_mae: float
    val_mse: float
    trajectory_mae: float | None
    wall_s: float = 0.0
