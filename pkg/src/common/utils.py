#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""Logging mixin and grid coordinate helpers."""

from logging import Logger, getLogger
from typing import Any, Callable, Literal, TypedDict, Union

import numpy as np

StrLevelTypes = Literal["CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG", "NOTSET"]


class LevelsDict(TypedDict):
    """Log Levels."""

    CRITICAL: Literal[50]
    ERROR: Literal[40]
    WARNING: Literal[30]
    INFO: Literal[20]
    DEBUG: Literal[10]
    NOTSET: Literal[0]


levels: LevelsDict = {
    "CRITICAL": 50,
    "ERROR": 40,
    "WARNING": 30,
    "INFO": 20,
    "DEBUG": 10,
    "NOTSET": 0,
}


class WithLogging:
    """Base class to be used for providing a logger embedded in the class."""

    @property
    def logger(self) -> Logger:
        """Create logger.

        :return: default logger.
        """
        name_logger = str(self.__class__).replace("<class '", "").replace("'>", "")
        return getLogger(name_logger)

    def log_result(
        self, msg: Union[Callable[..., str], str], level: StrLevelTypes = "INFO"
    ) -> Callable[..., Any]:
        """Return a decorator to allow logging of inputs/outputs.

        :param msg: message to log
        :param level: logging level
        :return: wrapped method.
        """

        def wrap(x: Any) -> Any:
            if isinstance(msg, str):
                self.logger.log(levels[level], msg)
            else:
                self.logger.log(levels[level], msg(x))
            return x

        return wrap


def derive_rng(*keys: int) -> np.random.Generator:
    """Return an independent generator for a tuple of integer keys.

    Keys are usually (global seed, record index, step); equal keys always give equal streams.
    """
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def normalized_axis(n: int) -> np.ndarray:
    """Normalized coordinates of the n voxel centers of one axis (center 0 -> -1, n-1 -> +1)."""
    if n == 1:
        return np.zeros(1)
    return 2.0 * np.arange(n, dtype=np.float64) / (n - 1) - 1.0


def to_normalized(index: np.ndarray | float, n: int) -> np.ndarray:
    """Map (fractional) voxel indices of an axis of size n to [-1, 1]."""
    if n == 1:
        return np.zeros_like(np.asarray(index, dtype=np.float64))
    return 2.0 * np.asarray(index, dtype=np.float64) / (n - 1) - 1.0


def to_index(coord: np.ndarray | float, n: int) -> np.ndarray:
    """Inverse of `to_normalized`."""
    if n == 1:
        return np.zeros_like(np.asarray(coord, dtype=np.float64))
    return (np.asarray(coord, dtype=np.float64) + 1.0) * (n - 1) / 2.0
