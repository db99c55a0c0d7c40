#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""Command-line front end of the template-free 4D-MRI reconstruction pipeline."""

import argparse
import logging
import sys

from common.utils import WithLogging, levels
from core.context import RunContext
from core.errors import Cpt4dError, ExitCode
from events.base import BaseCommandHandler, error_line
from events.data import DataCommands
from events.evaluation import EvaluationCommands
from events.reconstruction import ReconstructionCommands
from events.training import TrainingCommands
from managers.trainer import ABLATION_AXES
from workload import LocalWorkload

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

EXIT_CODES = {
    ExitCode.OK: "success",
    ExitCode.FAILURE: "unexpected failure",
    ExitCode.USAGE: "invalid command line",
    ExitCode.CONFIG: "bad configuration key or value",
    ExitCode.MISSING_FILE: "a referenced input file does not exist",
    ExitCode.GEOMETRY: "volume geometry does not match the dataset or model",
    ExitCode.TRACKING: "diaphragm tracking failed or the surrogate range is degenerate",
    ExitCode.DIVERGENCE: "training diverged",
    ExitCode.DOMAIN: "state outside the trained range",
    ExitCode.SHAPE: "array shapes do not match",
    ExitCode.FORMAT: "malformed artifact file",
}

HANDLERS: dict[str, type[BaseCommandHandler]] = {
    "phantom": DataCommands,
    "acquire": DataCommands,
    "surrogate": DataCommands,
    "train": TrainingCommands,
    "ablate": TrainingCommands,
    "reconstruct": ReconstructionCommands,
    "baseline": ReconstructionCommands,
    "evaluate": EvaluationCommands,
}


def _values(raw: str) -> list[float]:
    try:
        return [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        message = f"'{raw}' is not a comma-separated list of numbers"
        raise argparse.ArgumentTypeError(message) from None


def _global_options() -> argparse.ArgumentParser:
    # suppressed defaults let the options appear before or after the command
    options = argparse.ArgumentParser(add_help=False)
    options.add_argument("--config", default=argparse.SUPPRESS, help="key = value config file")
    options.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global seed")
    options.add_argument("--workdir", default=argparse.SUPPRESS, help="artifact directory")
    options.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        default=argparse.SUPPRESS,
        help="override one configuration key (repeatable)",
    )
    options.add_argument(
        "--log-level",
        choices=["CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG"],
        default=argparse.SUPPRESS,
    )
    return options


def build_parser() -> argparse.ArgumentParser:
    """Parser of the `cpt4d` command."""
    options = _global_options()
    epilog = "exit codes:\n" + "\n".join(
        f"  {int(code):>2}  {text}" for code, text in EXIT_CODES.items()
    )
    parser = argparse.ArgumentParser(
        prog="cpt4d",
        description=__doc__,
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        parents=[options],
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, text in (
        ("phantom", "render the phantom at the configured amplitudes"),
        ("acquire", "simulate the interleaved slice acquisition"),
        ("surrogate", "track the navigators into the respiratory signal"),
        ("train", "jointly train the motion and anatomy networks"),
        ("baseline", "amplitude or phase sorted volumes with a gap report"),
        ("evaluate", "score the networks and the sorting baseline on validation"),
    ):
        commands.add_parser(name, help=text, parents=[options])

    reconstruct = commands.add_parser(
        "reconstruct", help="render volumes at respiratory states", parents=[options]
    )
    reconstruct.add_argument(
        "states", type=_values, help="comma-separated states on the configured state_scale"
    )

    ablate = commands.add_parser(
        "ablate", help="one training run per value of an ablation axis", parents=[options]
    )
    ablate.add_argument("axis", choices=ABLATION_AXES)
    ablate.add_argument("values", type=_values, help="comma-separated axis values")
    return parser


class CommandLine(WithLogging):
    """Resolves the configuration and dispatches one command."""

    def __init__(self, args: argparse.Namespace):
        self.args = args

    def context(self) -> RunContext:
        """Resolved configuration of this invocation."""
        args = self.args
        return RunContext.load(
            LocalWorkload("."),
            getattr(args, "config", None),
            getattr(args, "set", None),
            getattr(args, "seed", None),
            getattr(args, "workdir", None),
        )

    def run(self) -> int:
        """Run the command and return its exit code."""
        try:
            context = self.context()
        except Cpt4dError as e:
            print(error_line(e), file=sys.stderr)
            return int(e.exit_code)

        level = getattr(self.args, "log_level", None) or context.log_level
        logging.basicConfig(level=levels[level], format=LOG_FORMAT)
        command = self.args.command
        handler = HANDLERS[command](context, LocalWorkload(context.workdir))
        self.logger.info(f"Running {command} in {context.workdir} (seed {context.seed})")

        extra = {
            "reconstruct": lambda: [self.args.states],
            "ablate": lambda: [self.args.axis, self.args.values],
        }.get(command, list)()
        code = getattr(handler, f"cmd_{command}")(*extra)
        if handler.failure is not None:
            print(error_line(handler.failure), file=sys.stderr)
        return self.log_result(lambda c: f"{command} exited with code {c}", "DEBUG")(int(code))


def main(argv: list[str] | None = None) -> int:
    """Entry point; returns the process exit code."""
    return CommandLine(build_parser().parse_args(argv)).run()


def run() -> None:
    """Console script wrapper."""
    sys.exit(main())


if __name__ == "__main__":  # pragma: nocover
    run()
