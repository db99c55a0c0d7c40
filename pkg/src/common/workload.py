#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""Base Abstract classes for the workload."""

from abc import ABC, abstractmethod


class AbstractWorkload(ABC):
    """Base Abstract class representing the storage substrate of a pipeline run."""

    @abstractmethod
    def read(self, path: str) -> list[str]:
        """Reads a text file from the workload.

        Args:
            path: the full filepath to read from

        Returns:
            List of string lines from the specified path

        Raises:
            ArtifactNotFoundError if the file does not exist
        """
        ...

    @abstractmethod
    def write(self, content: str, path: str, mode: str = "w") -> None:
        """Writes content to a workload file.

        Args:
            content: string of content to write
            path: the full filepath to write to
            mode: the write mode. Usually "w" for write, or "a" for append. Default "w"
        """
        ...

    @abstractmethod
    def read_bytes(self, path: str) -> bytes:
        """Reads a binary file from the workload.

        Raises:
            ArtifactNotFoundError if the file does not exist
        """
        ...

    @abstractmethod
    def write_bytes(self, content: bytes, path: str) -> None:
        """Writes a binary file, creating parent directories."""
        ...

    @abstractmethod
    def exists(self, path: str) -> bool:
        """Check for file existence.

        Args:
            path: the full filepath to be checked for
        """

    @staticmethod
    def from_env(content: list[str]) -> dict[str, str]:
        """Parse key=value content into a dict structure.

        Blank lines and lines starting with '#' are skipped; whitespace around keys and values
        is stripped.
        """
        map_env = {}
        for var in content:
            var = var.strip()
            if not var or var.startswith("#"):
                continue
            key = "".join(var.split("=", maxsplit=1)[0]).strip()
            value = "".join(var.split("=", maxsplit=1)[1:]).strip()
            if key:
                # only check for keys, as we can have an empty value for a variable
                map_env[key] = value
        return map_env

    @staticmethod
    def to_env(env: dict[str, str]) -> list[str]:
        """Serialize dict into key=value lines."""
        return [f"{key}={value}" for key, value in env.items()]
