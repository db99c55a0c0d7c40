#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.
import logging
from pathlib import Path

from cli import main

logger = logging.getLogger(__name__)


def write_config(directory: Path, values: dict) -> Path:
    """Write a key = value configuration file."""
    config = directory / "run.conf"
    config.write_text("".join(f"{key} = {value}\n" for key, value in values.items()))
    return config


class Pipeline:
    """Runs `cpt4d` commands against one working directory and configuration."""

    def __init__(self, workdir: Path, config: Path):
        self.workdir = workdir
        self.config = config

    def __call__(self, *args: str) -> int:
        argv = ["--config", str(self.config), "--workdir", str(self.workdir), *args]
        logger.info(f"cpt4d {' '.join(args)}")
        return main(argv)
