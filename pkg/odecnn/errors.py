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

__all__: list[str] = [
    "OdeError",
    "ShapeError",
    "NumericalError",
    "ProjectionError",
    "FormatError",
    "DataError",
    "ConfigError",
    "SensorError",
    "MaskError",
    "GradcheckError",
    "exit_code_for",
]


class OdeError(Exception):
    """The base exception for all errors raised by odecnn."""

    __slots__ = ()

    exit_code: t.ClassVar[int] = 1


class ShapeError(OdeError, ValueError):
    """Exception raised when a tensor, kernel or grid violates a shape contract."""

    __slots__ = ()


class NumericalError(OdeError):
    """Exception raised when a non-finite value shows up where a finite one is required."""

    __slots__ = ("what", "epoch", "step")

    exit_code = 4

    def __init__(self, what: str, *, epoch: t.Optional[int] = None, step: t.Optional[int] = None) -> None:
        self.what: str = what
        self.epoch: t.Optional[int] = epoch
        self.step: t.Optional[int] = step
        where = ""
        if epoch is not None:
            where = f" (epoch {epoch}" + (f", step {step})" if step is not None else ")")
        super().__init__(f"Non-finite values in {what}{where}.")


class ProjectionError(OdeError, ValueError):
    """Exception raised when a point lies outside the domain of the gnomonic projection."""

    __slots__ = ()


class FormatError(OdeError):
    """Exception raised when a file does not follow its format. Carries the path and the byte offset."""

    __slots__ = ("path", "offset")

    exit_code = 3

    def __init__(self, path: t.Any, offset: int, message: str) -> None:
        self.path: str = str(path)
        self.offset: int = offset
        super().__init__(f"{self.path}: byte {offset}: {message}")


class DataError(OdeError):
    """Exception raised when reading or writing a data file fails."""

    __slots__ = ("path",)

    exit_code = 3

    def __init__(self, path: t.Any, message: str) -> None:
        self.path: str = str(path)
        super().__init__(f"{self.path}: {message}")


class ConfigError(OdeError, ValueError):
    """Exception raised for unknown configuration keys, invalid values or invalid option combinations."""

    __slots__ = ()

    exit_code = 2


class SensorError(OdeError, ValueError):
    """Exception raised when a sensor mask disagrees with its depth map."""

    __slots__ = ()

    exit_code = 3


class MaskError(OdeError, ValueError):
    """Exception raised when a validity mask selects no pixels, or selects pixels without a valid depth."""

    __slots__ = ()


class GradcheckError(OdeError):
    """Exception raised when analytic gradients disagree with finite differences."""

    __slots__ = ("offenders",)

    exit_code = 4

    def __init__(self, offenders: t.Sequence[str]) -> None:
        self.offenders: list[str] = list(offenders)
        super().__init__("Gradient check failed for: " + ", ".join(self.offenders))


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, OdeError):
        return error.exit_code
    if isinstance(error, OSError):
        return 3
    return 1
