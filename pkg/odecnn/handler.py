#  MIT License
#
#  Copyright (c) 2021 ben
#
#  Permission is hereby granted, free of charge, to any person obtaining a copy
#  of this software and associated documentation files (the "Software"), to deal
#  in the Software without restriction, including without limitation the rights
#  to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
#  copies of the Software, and to permit persons to whom the Software is
#  furnished to do so, subject to the following conditions:
#
#  The above copyright notice and this permission notice shall be included in all
#  copies or substantial portions of the Software.
#
#  THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
#  IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
#  FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
#  AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
#  LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
#  OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
#  SOFTWARE.
from __future__ import annotations
import argparse
import logging
import sys
import typing as t

from odecnn.context import Context
from odecnn.errors import OdeError, exit_code_for
from odecnn.hooks import HookManager, HookTypes, dispatch_hooks

if t.TYPE_CHECKING:
    from odecnn.commands import Command

__all__: list[str] = ["LOG_FORMAT", "LOG_LEVELS", "configure_logging", "Handler"]

_LOGGER = logging.getLogger("odecnn")

LOG_FORMAT: t.Final[str] = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"
LOG_LEVELS: t.Final[tuple[str, ...]] = ("DEBUG", "INFO", "WARNING", "ERROR")


def configure_logging(level: str = "INFO") -> None:
    """Send package logs to stderr at ``level``. An already configured root logger is left alone."""
    if not logging.getLogger().handlers:
        logging.basicConfig(format=LOG_FORMAT, stream=sys.stderr)
    _LOGGER.setLevel(level.upper())


class Handler:
    """
    The command-line front end: builds one :obj:`argparse` subcommand per registered command, resolves its
    options, dispatches hooks and maps errors to exit codes.

    Exit codes: 0 success, 1 any other failure of the package, 2 usage or configuration, 3 input or output,
    4 numerical failure.

    Parameters
    ----------
    prog : :obj:`str`
        Program name shown in usage messages.
    stdout : Optional[TextIO]
        Where command results are written. Defaults to :obj:`sys.stdout`.
    """

    __slots__ = ("_prog", "_names_to_commands", "_hooks", "_stdout")

    def __init__(self, prog: str = "odecnn", *, stdout: t.Optional[t.TextIO] = None) -> None:
        self._prog: str = prog
        self._names_to_commands: dict[str, Command] = {}
        self._hooks: HookManager = HookManager("handler")
        self._stdout: t.Optional[t.TextIO] = stdout

    @property
    def commands(self) -> list[Command]:
        """
        The registered commands.

        Returns
        -------
        List[:obj:`~.commands.Command`]
            The commands, in registration order.
        """
        return list(self._names_to_commands.values())

    @property
    def hooks(self) -> HookManager:
        """
        The handler's hook manager, dispatched after the command's own.

        Returns
        -------
        :obj:`~.hooks.HookManager`
            The hook manager.
        """
        return self._hooks

    def add_command(self, command: Command) -> Handler:
        if command.name in self._names_to_commands:
            raise ValueError(f"Cannot add command {command.name} as there is already a command by that name.")
        self._names_to_commands[command.name] = command
        return self

    def with_command(self, command: Command) -> Command:
        self.add_command(command)
        return command

    def get_command(self, name: str) -> t.Optional[Command]:
        return self._names_to_commands.get(name)

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(prog=self._prog, description="Omnidirectional depth extension toolkit.")
        parser.add_argument(
            "--log-level", default="INFO", type=str.upper, choices=LOG_LEVELS, help="Logging level (default: INFO)"
        )
        subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
        subparsers.required = True
        for command in self._names_to_commands.values():
            command.add_to_parser(subparsers)
        return parser

    def run(self, argv: t.Optional[t.Sequence[str]] = None) -> int:
        """
        Parse ``argv`` and invoke the selected command.

        Returns
        -------
        :obj:`int`
            The exit code.
        """
        try:
            namespace = self.build_parser().parse_args(argv)
        except SystemExit as ex:
            return ex.code if isinstance(ex.code, int) else 2 if ex.code else 0
        configure_logging(namespace.log_level)
        command = self._names_to_commands[namespace.command]

        context: t.Optional[Context] = None
        try:
            context = Context(self, command, command.resolve_options(vars(namespace)), self._stdout)
            _LOGGER.info(f"Running {command.name} with {context.options}.")
            dispatch_hooks(HookTypes.PRE_INVOKE, command.hooks, self._hooks, context=context)
            code = command.invoke(context)
        except (OdeError, OSError) as ex:
            _LOGGER.error(f"{command.name} failed: {ex}")
            _LOGGER.debug("Traceback:", exc_info=ex)
            dispatch_hooks(HookTypes.ERROR, command.hooks, self._hooks, error=ex)
            return exit_code_for(ex)
        else:
            dispatch_hooks(HookTypes.COMMAND_SUCCESS, command.hooks, self._hooks, context=context)
            return code
        finally:
            if context is not None:
                dispatch_hooks(HookTypes.POST_INVOKE, command.hooks, self._hooks, context=context)
