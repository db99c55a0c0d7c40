#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""Base utilities exposing common functionalities for all command handler classes."""

from functools import wraps
from pathlib import Path
from typing import Callable

from common.utils import WithLogging
from core.context import RunContext
from core.domain import ModelManifest, SurrogateSignal
from core.errors import Cpt4dError, ExitCode
from core.workload import PipelineWorkloadBase
from managers.networks import SanModel, TmnModel
from managers.phantom import PhantomManager
from managers.storage import ArtifactStore
from managers.surrogate import DiaphragmTracker


def error_line(error: BaseException) -> str:
    """Single machine-parsable line describing a failed command."""
    code = error.exit_code if isinstance(error, Cpt4dError) else ExitCode.FAILURE
    message = " ".join(str(error).split()) or error.__class__.__name__
    return f"error code={int(code)} kind={error.__class__.__name__} message={message}"


class BaseCommandHandler(WithLogging):
    """Base class for all command handler classes of the pipeline."""

    def __init__(self, context: RunContext, workload: PipelineWorkloadBase):
        self.context = context
        self.workload = workload
        self.paths = workload.paths
        self.store = ArtifactStore(workload)
        self.failure: BaseException | None = None

    def phantom(self) -> PhantomManager:
        """Phantom described by the run configuration."""
        return PhantomManager(
            self.context.phantom_spec, self.context.motion, self.context["antialias"]
        )

    def tracker(self, signal: SurrogateSignal | None = None) -> DiaphragmTracker:
        """Navigator tracker; a stored signal fixes the rows and columns it was tracked with."""
        min_edge = self.context["min_edge_strength"]
        if signal is not None:
            return DiaphragmTracker(signal.roi, signal.landmark_columns, min_edge)
        phantom = self.phantom()
        roi = self.context.roi or phantom.navigator_roi()
        columns = self.context.landmark_columns or phantom.landmark_columns(
            self.context["n_landmarks"]
        )
        return DiaphragmTracker(roi, columns, min_edge)

    def load_models(self) -> tuple[TmnModel, SanModel, ModelManifest]:
        """Trained networks and the manifest they were stored with."""
        manifest = self.store.read_model_manifest(self.paths.model_manifest)
        tmn, _, _ = self.store.read_checkpoint(self.paths.model / manifest.tmn_checkpoint)
        san, _, _ = self.store.read_checkpoint(self.paths.model / manifest.san_checkpoint)
        return TmnModel(tmn), SanModel(san), manifest

    def write_resolved(self, directory: Path) -> None:
        """Store the resolved configuration next to the outputs of a command."""
        self.context.write_resolved(self.workload, self.paths.resolved_config(directory))


def compute_status(
    command: Callable[..., None]
) -> Callable[..., ExitCode]:
    """Decorator turning the outcome of a command into its exit code."""

    @wraps(command)
    def wrapper_command(handler: BaseCommandHandler, *args, **kwargs) -> ExitCode:
        """Return the exit code after running the command."""
        handler.failure = None
        try:
            command(handler, *args, **kwargs)
        except Cpt4dError as e:
            handler.logger.error(f"{command.__name__} failed: {e}")
            handler.failure = e
            return e.exit_code
        except Exception as e:
            handler.logger.exception(f"{command.__name__} failed unexpectedly")
            handler.failure = e
            return ExitCode.FAILURE
        handler.logger.info(f"{command.__name__} finished")
        return ExitCode.OK

    return wrapper_command
