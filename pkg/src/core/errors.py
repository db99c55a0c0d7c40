#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""Exceptions raised by the reconstruction pipeline.

Every exception carries the process exit code the command line maps it to.
"""

from enum import IntEnum


class ExitCode(IntEnum):
    """Class bundling all exit statuses a command may end with."""

    OK = 0
    FAILURE = 1
    USAGE = 2
    CONFIG = 3
    MISSING_FILE = 4
    GEOMETRY = 5
    TRACKING = 6
    DIVERGENCE = 7
    DOMAIN = 8
    SHAPE = 9
    FORMAT = 10


class Cpt4dError(Exception):
    """Base class of all pipeline errors."""

    exit_code: ExitCode = ExitCode.FAILURE


class ConfigurationError(Cpt4dError):
    """Invalid, unknown or inconsistent configuration."""

    exit_code = ExitCode.CONFIG


class InvalidArchitectureError(ConfigurationError):
    """Network layer dimensions or flags that cannot form an MLP."""


class ShapeError(Cpt4dError, ValueError):
    """Array shapes that do not match the operation contract."""

    exit_code = ExitCode.SHAPE


class TapeMismatchError(Cpt4dError):
    """A backward pass was given a tape from another forward pass or stale parameters."""

    exit_code = ExitCode.FAILURE


class TrainingDivergenceError(Cpt4dError):
    """Non-finite loss or gradients during optimization."""

    exit_code = ExitCode.DIVERGENCE

    def __init__(
        self, message: str, layer_index: int | None = None, last_checkpoint: str | None = None
    ):
        super().__init__(message)
        self.layer_index = layer_index
        self.last_checkpoint = last_checkpoint


class DomainError(Cpt4dError, ValueError):
    """A respiratory state outside the range the networks were trained on."""

    exit_code = ExitCode.DOMAIN


class GeometryError(Cpt4dError):
    """Volume geometry that does not match the dataset or model manifest."""

    exit_code = ExitCode.GEOMETRY


class TrackingError(Cpt4dError):
    """The diaphragm edge could not be found in a navigator slice."""

    exit_code = ExitCode.TRACKING

    def __init__(self, message: str, record: int | str | None = None):
        super().__init__(message)
        self.record = record


class DegenerateRangeError(Cpt4dError, ValueError):
    """Normalization of a signal whose minimum equals its maximum."""

    exit_code = ExitCode.TRACKING


class ExtrapolationError(Cpt4dError, ValueError):
    """A timestamp outside the span covered by the surrogate signal."""

    exit_code = ExitCode.DOMAIN


class EmptyInputError(Cpt4dError, ValueError):
    """An operation received an empty batch, slice or dataset."""

    exit_code = ExitCode.FAILURE


class FormatError(Cpt4dError):
    """A file that does not follow its declared format."""

    exit_code = ExitCode.FORMAT


class ArtifactNotFoundError(Cpt4dError, FileNotFoundError):
    """A file the command depends on does not exist."""

    exit_code = ExitCode.MISSING_FILE
