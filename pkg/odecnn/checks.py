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
import typing as t
from abc import ABC, abstractmethod

from odecnn.errors import ConfigError

if t.TYPE_CHECKING:
    from odecnn.context import Context

__all__: list[str] = [
    "AbstractCheck",
    "PanoramaShapeCheck",
    "PositiveCheck",
    "OddKernelCheck",
    "CheckManager",
    "with_checks",
]


class AbstractCheck(ABC):
    __slots__ = ()

    @abstractmethod
    def failure(self, context: Context) -> t.Optional[str]:
        """The reason the resolved options of the context are rejected, or `None`."""

    def check(self, context: Context) -> bool:
        """check

        Parameters
        ----------
        context : :obj:`~.context.Context`
            The context to check against.

        Returns
        -------
        :obj:`bool`
            Returns `True` if the check passes.

        Raises
        ------
        :obj:`~.errors.ConfigError`
            If the check fails.
        """
        reason = self.failure(context)
        if reason is not None:
            raise ConfigError(reason)
        return True

    def check_without_error(self, context: Context) -> bool:
        """check

        Parameters
        ----------
        context : :obj:`~.context.Context`
            The context to check against.

        Returns
        -------
        :obj:`bool`
            Returns `True` if the check passes and `False` if the check fails.
        """
        return self.failure(context) is None


class PanoramaShapeCheck(AbstractCheck):
    """Equirectangular panoramas are exactly twice as wide as high, both a multiple of ``multiple``."""

    __slots__ = ("_h", "_w", "_multiple")

    def __init__(self, h: str = "h", w: str = "w", *, multiple: int = 1) -> None:
        self._h = h
        self._w = w
        self._multiple = multiple

    def failure(self, context: Context) -> t.Optional[str]:
        h, w = context.options.get(self._h), context.options.get(self._w)
        if h is None or w is None:
            return None
        if h < 1 or w != 2 * h:
            return f"Panoramas must be twice as wide as high, got {h}x{w}."
        if h % self._multiple or w % self._multiple:
            return f"Panorama dimensions must be divisible by {self._multiple}, got {h}x{w}."
        return None


class PositiveCheck(AbstractCheck):
    __slots__ = ("_names", "_allow_zero")

    def __init__(self, *names: str, allow_zero: bool = False) -> None:
        self._names = names
        self._allow_zero = allow_zero

    def failure(self, context: Context) -> t.Optional[str]:
        for name in self._names:
            value = context.options.get(name)
            if value is None:
                continue
            if value < 0 or (value == 0 and not self._allow_zero):
                bound = "non-negative" if self._allow_zero else "positive"
                return f"--{name.replace('_', '-')} must be {bound}, got {value}."
        return None


class OddKernelCheck(AbstractCheck):
    __slots__ = ("_names",)

    def __init__(self, *names: str) -> None:
        self._names = names or ("k",)

    def failure(self, context: Context) -> t.Optional[str]:
        for name in self._names:
            value = context.options.get(name)
            if value is not None and (value < 1 or value % 2 == 0):
                return f"Kernel sizes must be odd and positive, got {name} = {value}."
        return None


class CheckManager:
    """The checks a command runs on its resolved options before its callback."""

    __slots__ = ("_checks",)

    def __init__(self, *checks: AbstractCheck) -> None:
        self._checks: list[AbstractCheck] = list(checks)

    @property
    def checks(self) -> list[AbstractCheck]:
        return list(self._checks)

    def add_check(self, check: AbstractCheck) -> CheckManager:
        self._checks.append(check)
        return self

    def run(self, context: Context) -> bool:
        for check in self._checks:
            check.check(context)
        return True

    def failures(self, context: Context) -> list[AbstractCheck]:
        return [check for check in self._checks if not check.check_without_error(context)]


def with_checks(*checks: AbstractCheck) -> t.Callable[[t.Any], t.Any]:
    """A decorator that adds checks to a command, or to a callback that becomes one."""

    def decorate(command: t.Any) -> t.Any:
        if hasattr(command, "add_check"):
            for check in checks:
                command.add_check(check)
        else:
            pending = getattr(command, "__odecnn_checks__", [])
            command.__odecnn_checks__ = list(checks) + pending
        return command

    return decorate
