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
import sys
import typing as t

if t.TYPE_CHECKING:
    from odecnn.commands import Command
    from odecnn.handler import Handler

__all__: list[str] = ["Context"]


class Context:
    """
    The invocation of a command.

    Parameters
    ----------
    handler : :obj:`~.handler.Handler`
        The handler that parsed the command line.
    command : :obj:`~.commands.Command`
        The command being invoked.
    options : Dict[:obj:`str`, `Any`]
        The command's options, converted and with defaults filled in.
    stdout : Optional[TextIO]
        Where responses are written. Defaults to :obj:`sys.stdout`.
    """

    __slots__ = ("_handler", "_command", "_options", "_stdout", "_responses")

    def __init__(
        self,
        handler: Handler,
        command: Command,
        options: dict[str, t.Any],
        stdout: t.Optional[t.TextIO] = None,
    ) -> None:
        self._handler: Handler = handler
        self._command: Command = command
        self._options: dict[str, t.Any] = options
        self._stdout: t.TextIO = stdout if stdout is not None else sys.stdout
        self._responses: list[str] = []

    @property
    def handler(self) -> Handler:
        """
        The handler instance.

        Returns
        -------
        :obj:`~.handler.Handler`
            The handler instance.
        """
        return self._handler

    @property
    def command(self) -> Command:
        """
        The command that was invoked.

        Returns
        -------
        :obj:`~.commands.Command`
            The command object.
        """
        return self._command

    @property
    def invoking_name(self) -> str:
        return self._command.name

    @property
    def options(self) -> dict[str, t.Any]:
        """
        The resolved options of the invocation.

        Returns
        -------
        Dict[:obj:`str`, `Any`]
            Every option of the command by name.
        """
        return self._options

    @property
    def responses(self) -> list[str]:
        """Everything written with :obj:`respond`, in order."""
        return list(self._responses)

    def respond(self, text: str) -> None:
        """Write a result to the output stream. Results go to stdout, diagnostics go to the log."""
        if not text.endswith("\n"):
            text += "\n"
        self._responses.append(text)
        self._stdout.write(text)
        self._stdout.flush()
