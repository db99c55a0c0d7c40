#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""Module containing the local filesystem workload."""

from pathlib import Path

from common.utils import WithLogging
from core.errors import ArtifactNotFoundError
from core.workload import PipelinePaths, PipelineWorkloadBase


class LocalWorkload(PipelineWorkloadBase, WithLogging):
    """Class representing a pipeline working directory on the local filesystem."""

    def __init__(self, workdir: Path | str):
        self.paths = PipelinePaths(workdir)

    def _existing(self, path: str) -> Path:
        target = Path(path)
        if not target.is_file():
            self.logger.error(f"{target} not found")
            raise ArtifactNotFoundError(f"Required file {target} does not exist")
        return target

    def read(self, path: str) -> list[str]:
        """Read the lines of a text file."""
        return self._existing(path).read_text(encoding="utf-8").splitlines()

    def write(self, content: str, path: str, mode: str = "w") -> None:
        """Write a text file, creating parent directories."""
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        with target.open(mode, encoding="utf-8", newline="") as fid:
            fid.write(content)
        self.logger.debug(f"Wrote {target}")

    def read_bytes(self, path: str) -> bytes:
        """Read a binary file."""
        return self._existing(path).read_bytes()

    def write_bytes(self, content: bytes, path: str) -> None:
        """Write a binary file, creating parent directories."""
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(content)
        self.logger.debug(f"Wrote {target} ({len(content)} bytes)")

    def exists(self, path: str) -> bool:
        """Check whether a file exists."""
        return Path(path).is_file()
