#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""Run configuration definition and parsing logic."""

from copy import deepcopy
from fractions import Fraction
from pathlib import Path
from typing import Any

from jsonschema import Draft7Validator

from common.utils import WithLogging
from common.workload import AbstractWorkload
from constants import (
    BIN_MEAN,
    CLAMP,
    DEFAULT_ADAM_EPS,
    DEFAULT_BETA1,
    DEFAULT_BETA2,
    DEFAULT_JACDET_WEIGHT,
    DEFAULT_LEARNING_RATE,
    DEFAULT_OMEGA0,
    DEFAULT_OMEGA_HIDDEN,
    N_LANDMARKS,
    NEAREST_TO_CENTER,
    NORM01,
    NORM11,
    PASSTHROUGH,
    STRICT,
)
from core.domain import (
    BreathSpec,
    GroundTruthMotion,
    PhantomSpec,
    ReconRequest,
    SortingConfig,
    TrainConfig,
)
from core.errors import ConfigurationError, ExitCode

__all__ = ["ExitCode", "RunContext", "CONFIG_SCHEMA", "parse_value", "format_value"]


def _integer(default: int, minimum: int | None = None) -> dict:
    prop: dict[str, Any] = {"type": "integer", "default": default}
    if minimum is not None:
        prop["minimum"] = minimum
    return prop


def _number(default: float, minimum: float | None = None, exclusive: bool = False) -> dict:
    prop: dict[str, Any] = {"type": "number", "default": default}
    if minimum is not None:
        prop["exclusiveMinimum" if exclusive else "minimum"] = minimum
    return prop


def _boolean(default: bool) -> dict:
    return {"type": "boolean", "default": default}


def _choice(default: str, *options: str) -> dict:
    return {"type": "string", "default": default, "enum": list(options)}


def _list(item: str, default: list) -> dict:
    return {"type": "array", "items": {"type": item}, "default": default}


PROPERTIES: dict[str, dict] = {
    # global
    "seed": _integer(42, 0),
    "log_level": _choice("INFO", "CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG"),
    "workdir": {"type": "string", "default": "."},
    # phantom
    "nx": _integer(96, 2),
    "ny": _integer(96, 2),
    "nz": _integer(64, 2),
    "spacing_x": _number(2.0, 0, exclusive=True),
    "spacing_y": _number(2.0, 0, exclusive=True),
    "spacing_z": _number(3.5, 0, exclusive=True),
    "diaphragm_width_mm": _number(6.0, 0, exclusive=True),
    "vessel_trunks": _integer(3, 2),
    "antialias": _boolean(True),
    "phantom_amplitudes": _list("number", [0.0, 0.5, 1.0]),
    # ground-truth motion
    "peak_displacement_mm": _number(18.0, 0),
    "decay_length_mm": _number(80.0, 0, exclusive=True),
    "ap_coupling": _number(0.15, 0),
    # breathing
    "breath_period_s": _number(4.0, 0, exclusive=True),
    "period_jitter": _number(0.15, 0),
    "depth_jitter": _number(0.2, 0),
    "drift_amplitude": _number(0.05, 0),
    "sample_interval_s": _number(0.32, 0, exclusive=True),
    # acquisition
    "n_coronal_positions": _integer(20, 1),
    "n_sweeps": _integer(16, 1),
    "navigator_position": _integer(-1, -1),
    "train_fraction": {"type": "string", "default": "11/12", "pattern": r"^\d+(/\d+)?$"},
    "sampling_mode": _choice("slice", "slice", "state"),
    # surrogate
    "landmark_columns": _list("integer", []),
    "n_landmarks": _integer(N_LANDMARKS, 1),
    "roi_start": _integer(-1, -1),
    "roi_stop": _integer(-1, -1),
    "min_edge_strength": _number(0.02, 0),
    # training
    "epochs": _integer(2000, 0),
    "meta_batch": _integer(8, 1),
    "points_per_batch": _integer(10000, 1),
    "learning_rate": _number(DEFAULT_LEARNING_RATE, 0, exclusive=True),
    "beta1": _number(DEFAULT_BETA1, 0),
    "beta2": _number(DEFAULT_BETA2, 0),
    "adam_eps": _number(DEFAULT_ADAM_EPS, 0, exclusive=True),
    "jacdet_weight": _number(DEFAULT_JACDET_WEIGHT, 0),
    "tmn_omega0": _number(DEFAULT_OMEGA0, 0, exclusive=True),
    "tmn_omega_hidden": _number(DEFAULT_OMEGA_HIDDEN, 0, exclusive=True),
    "san_omega0": _number(DEFAULT_OMEGA0, 0, exclusive=True),
    "san_omega_hidden": _number(DEFAULT_OMEGA_HIDDEN, 0, exclusive=True),
    "tmn_depth": _integer(4, 1),
    "tmn_width": _integer(256, 1),
    "san_depth": _integer(4, 1),
    "san_width": _integer(512, 1),
    "san_residual_layer": _integer(4, 0),
    "data_fraction": _number(1.0, 0, exclusive=True),
    "checkpoint_every": _integer(200, 1),
    "log_every": _integer(50, 1),
    "precision": _choice("float64", "float64", "float32"),
    "deterministic": _boolean(True),
    "workers": _integer(1, 1),
    "validate": _boolean(True),
    # sorting baseline
    "n_bins": _integer(10, 2),
    "bin_mode": _choice("amplitude", "amplitude", "phase"),
    "bin_statistic": _choice(NEAREST_TO_CENTER, NEAREST_TO_CENTER, BIN_MEAN),
    # reconstruction
    "recon_batch_size": _integer(100000, 1),
    "state_policy": _choice(CLAMP, STRICT, CLAMP, PASSTHROUGH),
    "state_scale": _choice(NORM01, NORM01, NORM11),
    "export_graymap": _boolean(False),
    "export_mip": _boolean(False),
    # evaluation
    "coherence_states": _integer(40, 0),
    # ablation
    "ablation_target": _choice("tmn", "tmn", "san", "both"),
}

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "properties": PROPERTIES,
    "additionalProperties": False,
}

_TRUE = ("true", "yes", "on", "1")
_FALSE = ("false", "no", "off", "0")


def parse_value(key: str, raw: str) -> Any:
    """Type a raw configuration string according to the schema of its key."""
    if key not in PROPERTIES:
        raise ConfigurationError(f"Unknown configuration key '{key}'")
    prop = PROPERTIES[key]
    raw = raw.strip()
    try:
        match prop["type"]:
            case "integer":
                return int(raw)
            case "number":
                return float(raw)
            case "boolean":
                if raw.lower() in _TRUE:
                    return True
                if raw.lower() in _FALSE:
                    return False
                raise ValueError(raw)
            case "array":
                cast = int if prop["items"]["type"] == "integer" else float
                return [cast(v) for v in raw.split(",") if v.strip()]
            case _:
                if key == "train_fraction":
                    fraction = Fraction(raw)
                    return f"{fraction.numerator}/{fraction.denominator}"
                return raw
    except (ValueError, ZeroDivisionError):
        raise ConfigurationError(
            f"Invalid value '{raw}' for '{key}' (expected {prop['type']})"
        ) from None


def format_value(value: Any) -> str:
    """Serialize a typed configuration value back to its text form."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RunContext(WithLogging):
    """Fully resolved and validated configuration of a pipeline command."""

    def __init__(self, values: dict[str, Any]):
        errors = sorted(Draft7Validator(CONFIG_SCHEMA).iter_errors(values), key=str)
        if errors:
            e = errors[0]
            where = ".".join(str(p) for p in e.path) or "configuration"
            raise ConfigurationError(f"{where}: {e.message}")
        self.values = values
        if self.roi is not None and self.roi[1] <= self.roi[0]:
            raise ConfigurationError(f"roi_stop must exceed roi_start, got {self.roi}")

    @classmethod
    def defaults(cls) -> dict[str, Any]:
        """Schema defaults of every key."""
        return {key: deepcopy(prop["default"]) for key, prop in PROPERTIES.items()}

    @classmethod
    def load(
        cls,
        workload: AbstractWorkload,
        config_file: str | None = None,
        overrides: list[str] | None = None,
        seed: int | None = None,
        workdir: str | None = None,
    ) -> "RunContext":
        """Resolve defaults < config file < --set overrides < dedicated flags."""
        values = cls.defaults()
        if config_file:
            for key, raw in workload.from_env(workload.read(config_file)).items():
                values[key] = parse_value(key, raw)
        for item in overrides or []:
            if "=" not in item:
                raise ConfigurationError(f"Override '{item}' is not of the form key=value")
            key, raw = item.split("=", maxsplit=1)
            values[key.strip()] = parse_value(key.strip(), raw)
        if seed is not None:
            values["seed"] = seed
        if workdir is not None:
            values["workdir"] = workdir
        return cls(values)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def to_env(self) -> list[str]:
        """Resolved configuration as key=value lines, in schema order."""
        return AbstractWorkload.to_env(
            {key: format_value(self.values[key]) for key in PROPERTIES}
        )

    def write_resolved(self, workload: AbstractWorkload, target: Path) -> Path:
        """Write the fully resolved configuration next to a command's outputs."""
        workload.write("\n".join(self.to_env()) + "\n", str(target))
        self.logger.debug(f"Wrote resolved configuration {target}")
        return target

    # ---------------
    # --- GLOBALS ---
    # ---------------

    @property
    def seed(self) -> int:
        """Global seed."""
        return int(self.values["seed"])

    @property
    def workdir(self) -> Path:
        """Working directory holding every artifact."""
        return Path(self.values["workdir"])

    @property
    def log_level(self) -> str:
        """Root logger level."""
        return self.values["log_level"]

    # --------------------
    # --- MODULE SPECS ---
    # --------------------

    @property
    def dims(self) -> tuple[int, int, int]:
        """Volume dimensions (nx, ny, nz)."""
        return (self.values["nx"], self.values["ny"], self.values["nz"])

    @property
    def spacing(self) -> tuple[float, float, float]:
        """Voxel spacing in mm."""
        return tuple(float(self.values[f"spacing_{a}"]) for a in "xyz")  # type: ignore

    @property
    def phantom_spec(self) -> PhantomSpec:
        """Phantom geometry."""
        return PhantomSpec(
            dims=self.dims,
            spacing=self.spacing,
            diaphragm_width_mm=self.values["diaphragm_width_mm"],
            vessel_trunks=self.values["vessel_trunks"],
            seed=self.seed,
        )

    @property
    def motion(self) -> GroundTruthMotion:
        """Analytic ground-truth deformation."""
        return GroundTruthMotion(
            peak_displacement_mm=self.values["peak_displacement_mm"],
            decay_length_mm=self.values["decay_length_mm"],
            ap_coupling=self.values["ap_coupling"],
        )

    @property
    def breath_spec(self) -> BreathSpec:
        """Breathing generator; the acquisition sets the duration."""
        return BreathSpec(
            period_s=self.values["breath_period_s"],
            period_jitter=self.values["period_jitter"],
            depth_jitter=self.values["depth_jitter"],
            drift_amplitude=self.values["drift_amplitude"],
            sample_interval_s=self.values["sample_interval_s"],
            seed=self.seed,
        )

    @property
    def train_fraction(self) -> Fraction:
        """Temporal train/validation split fraction."""
        return Fraction(self.values["train_fraction"])

    @property
    def navigator_position(self) -> int | None:
        """Explicit navigator x index, or None for the geometry default."""
        position = self.values["navigator_position"]
        return None if position < 0 else position

    @property
    def landmark_columns(self) -> tuple[int, ...] | None:
        """Explicit tracker columns, or None for the geometry default."""
        return tuple(self.values["landmark_columns"]) or None

    @property
    def roi(self) -> tuple[int, int] | None:
        """Explicit tracker row range, or None for the geometry default."""
        start, stop = self.values["roi_start"], self.values["roi_stop"]
        return None if start < 0 or stop < 0 else (start, stop)

    @property
    def train_config(self) -> TrainConfig:
        """Joint optimization settings."""
        keys = (
            "epochs",
            "meta_batch",
            "points_per_batch",
            "learning_rate",
            "beta1",
            "beta2",
            "adam_eps",
            "jacdet_weight",
            "tmn_omega0",
            "tmn_omega_hidden",
            "san_omega0",
            "san_omega_hidden",
            "tmn_depth",
            "tmn_width",
            "san_depth",
            "san_width",
            "san_residual_layer",
            "data_fraction",
            "sampling_mode",
            "checkpoint_every",
            "log_every",
            "precision",
            "deterministic",
            "workers",
            "validate",
        )
        return TrainConfig(
            train_fraction=self.train_fraction,
            seed=self.seed,
            **{key: self.values[key] for key in keys},
        )

    @property
    def sorting_config(self) -> SortingConfig:
        """Sorting baseline settings."""
        return SortingConfig(
            n_bins=self.values["n_bins"],
            bin_mode=self.values["bin_mode"],
            statistic=self.values["bin_statistic"],
        )

    def recon_request(
        self,
        state: float,
        dims: tuple[int, int, int] | None = None,
        spacing: tuple[float, float, float] | None = None,
    ) -> ReconRequest:
        """A reconstruction request at a state on the configured scale."""
        return ReconRequest(
            state=float(state),
            dims=tuple(dims or self.dims),  # type: ignore
            spacing=tuple(spacing or self.spacing),  # type: ignore
            scale=self.values["state_scale"],
            batch_size=self.values["recon_batch_size"],
            policy=self.values["state_policy"],
        )

