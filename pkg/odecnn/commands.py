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
import re
import typing as t

from odecnn.checks import AbstractCheck, CheckManager
from odecnn.errors import ConfigError
from odecnn.hooks import HookManager
from odecnn.parsing import Option, OptionType, ParserManager

if t.TYPE_CHECKING:
    from odecnn.context import Context

__all__: list[str] = ["as_command", "Command", "CommandCallbackT"]

CommandCallbackT = t.Callable[["Context"], t.Optional[int]]

_NAME = re.compile(r"^[a-z0-9_-]{1,32}$")


def as_command(name: str, description: str) -> t.Callable[[CommandCallbackT], Command]:
    """
    A decorator that turns a callback into a :obj:`Command`. Options and checks applied to the callback
    with :obj:`~.parsing.with_option` and :obj:`~.checks.with_checks` are carried over.
    """

    def decorate(func: CommandCallbackT) -> Command:
        cmd = Command(callback=func, name=str(name), description=str(description))
        for option in getattr(func, "__odecnn_options__", []):
            cmd.add_option(option)
        for check in getattr(func, "__odecnn_checks__", []):
            cmd.add_check(check)
        return cmd

    return decorate


class Command:
    """
    A subcommand of the command line.

    Parameters
    ----------
    callback : Callable[[:obj:`~.context.Context`], Optional[:obj:`int`]]
        Called with the invocation context, returns the exit code or `None` for success.
    name : :obj:`str`
        The subcommand name.
    description : :obj:`str`
        Help text, 1 to 100 characters.
    """

    __slots__ = ("_callback", "_name", "_description", "_parser", "_check_manager", "_hook_manager")

    def __init__(self, *, callback: CommandCallbackT, name: str, description: str) -> None:
        if not _NAME.match(str(name)):
            raise ConfigError(f"Invalid command name {name!r}.")
        if len(description) > 100 or len(description) < 1:
            raise ConfigError(f"The description of command '{name}' must be 1 to 100 characters long.")
        self._callback: CommandCallbackT = callback
        self._name: str = name
        self._description: str = description
        self._parser: ParserManager = ParserManager(name)
        self._check_manager: CheckManager = CheckManager()
        self._hook_manager: HookManager = HookManager(f"command {name}")

    @property
    def callback(self) -> CommandCallbackT:
        return self._callback

    @property
    def name(self) -> str:
        return self._name

    @property
    def description(self) -> str:
        return self._description

    @property
    def options(self) -> list[Option]:
        return self._parser.options

    @property
    def checks(self) -> CheckManager:
        return self._check_manager

    @property
    def hooks(self) -> HookManager:
        return self._hook_manager

    def add_option(self, option: Option) -> Command:
        self._parser.add_option(option)
        return self

    def add_check(self, check: AbstractCheck) -> Command:
        self._check_manager.add_check(check)
        return self

    def add_to_parser(self, subparsers: t.Any) -> argparse.ArgumentParser:
        """Declare this command and its flags on an :obj:`argparse` subparser group."""
        parser = subparsers.add_parser(self._name, help=self._description, description=self._description)
        for option in self._parser.options:
            kwargs: dict[str, t.Any] = {"dest": option.name, "default": None}
            help_text = option.description
            if not option.required and option.default not in ("", None):
                help_text += f" (default: {option.default})"
            if option.option_type is OptionType.BOOLEAN:
                kwargs.update(action="store_const", const=True)
            else:
                kwargs["required"] = option.required
                if option.option_type is OptionType.STRING and option.choices is not None:
                    kwargs["choices"] = list(option.choices)
            parser.add_argument(option.flag, help=help_text, **kwargs)
        return parser

    def resolve_options(self, raw: t.Mapping[str, t.Any]) -> dict[str, t.Any]:
        """Convert the parsed flag values of this command, filling in defaults. Unrelated keys are ignored."""
        names = {option.name for option in self._parser.options}
        return self._parser.convert_from_mapping({k: v for k, v in raw.items() if k in names and v is not None})

    def invoke(self, context: Context) -> int:
        """Run the checks, then the callback."""
        self._check_manager.run(context)
        result = self._callback(context)
        return 0 if result is None else int(result)

    def __repr__(self) -> str:
        return f"Command(name={self._name!r}, options={[o.name for o in self._parser.options]})"
