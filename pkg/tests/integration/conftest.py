#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.
import pytest

from . import RECONSTRUCTED_STATES, REDUCED_CONFIG
from .test_helpers import Pipeline, write_config


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory) -> Pipeline:
    """A reduced working directory that went through every pipeline command."""
    workdir = tmp_path_factory.mktemp("cpt4d")
    run = Pipeline(workdir, write_config(workdir, REDUCED_CONFIG))
    for command in (
        ["phantom"],
        ["acquire"],
        ["surrogate"],
        ["train"],
        ["reconstruct", RECONSTRUCTED_STATES],
        ["baseline"],
        ["evaluate"],
        ["ablate", "width", "8,16"],
    ):
        assert run(*command) == 0, f"{command[0]} failed"
    return run
