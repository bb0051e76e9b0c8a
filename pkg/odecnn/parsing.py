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
"""Typed options, shared by configuration files and command-line flags."""
from __future__ import annotations
import enum
import re
import typing as t

from odecnn.errors import ConfigError

__all__: list[str] = ["UNDEFINED", "OptionType", "Option", "ParserManager", "with_option"]

_NAME = re.compile(r"^[a-z0-9_-]{1,32}$")
_TRUE = frozenset({"1", "true", "yes", "on"})
_FALSE = frozenset({"0", "false", "no", "off"})


class _Undefined:
    __slots__ = ()

    def __repr__(self) -> str:
        return "UNDEFINED"

    def __bool__(self) -> bool:
        return False


UNDEFINED: t.Final[t.Any] = _Undefined()
"""Default of options that must be given."""


class OptionType(str, enum.Enum):
    STRING = "string"
    INTEGER = "integer"
    BOOLEAN = "boolean"
    FLOAT = "float"
    INT_LIST = "int-list"
    """Comma separated integers."""


class Option:
    """
    A named, typed configuration value.

    Parameters
    ----------
    name : :obj:`str`
        Lowercase key, also the long flag name with underscores turned into dashes.
    description : :obj:`str`
        Help text, 1 to 100 characters.
    option_type : :obj:`OptionType`
        How string values are converted.
    converter : Optional[Callable[[`Any`], `Any`]]
        Applied after the type conversion.
    default : `Any`
        Used when the option is absent. :obj:`UNDEFINED` makes the option required.
    choices : Optional[Sequence[`Any`]]
        Allowed converted values.
    """

    __slots__ = ("_name", "_description", "_option_type", "_converter", "_default", "_choices")

    def __init__(
        self,
        name: str,
        description: str,
        option_type: OptionType = OptionType.STRING,
        converter: t.Optional[t.Callable[[t.Any], t.Any]] = None,
        default: t.Any = UNDEFINED,
        choices: t.Optional[t.Sequence[t.Any]] = None,
    ) -> None:
        if not _NAME.match(str(name)):
            raise ConfigError(f"Invalid option name {name!r}.")
        if len(description) > 100 or len(description) < 1:
            raise ConfigError(f"The description of option '{name}' must be 1 to 100 characters long.")
        if not isinstance(option_type, OptionType):
            raise ConfigError(f"'{option_type}' is not a valid option type.")
        self._name: str = name
        self._description: str = description
        self._option_type: OptionType = option_type
        self._converter = converter
        self._default: t.Any = default
        self._choices: t.Optional[tuple[t.Any, ...]] = tuple(choices) if choices is not None else None

    @property
    def name(self) -> str:
        return self._name

    @property
    def flag(self) -> str:
        return "--" + self._name.replace("_", "-")

    @property
    def description(self) -> str:
        return self._description

    @property
    def option_type(self) -> OptionType:
        return self._option_type

    @property
    def default(self) -> t.Any:
        return self._default

    @property
    def choices(self) -> t.Optional[tuple[t.Any, ...]]:
        return self._choices

    @property
    def required(self) -> bool:
        return self._default is UNDEFINED

    def _from_string(self, text: str) -> t.Any:
        text = text.strip()
        if self._option_type is OptionType.INTEGER:
            return int(text)
        if self._option_type is OptionType.FLOAT:
            return float(text)
        if self._option_type is OptionType.BOOLEAN:
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(f"expected one of {sorted(_TRUE | _FALSE)}")
        if self._option_type is OptionType.INT_LIST:
            return tuple(int(part) for part in text.split(",") if part.strip())
        return text

    def convert(self, original: t.Any) -> t.Any:
        """
        Convert a raw value.

        Raises
        ------
        :obj:`~.errors.ConfigError`
            If the value cannot be converted or is not one of the choices.
        """
        try:
            value = self._from_string(original) if isinstance(original, str) else original
            if self._converter is not None:
                value = self._converter(value)
        except (TypeError, ValueError) as ex:
            raise ConfigError(f"Invalid value {original!r} for '{self._name}': {ex}") from None
        if self._choices is not None and value not in self._choices:
            raise ConfigError(
                f"Invalid value {original!r} for '{self._name}', expected one of: "
                + ", ".join(str(c) for c in self._choices)
            )
        return value

    def __repr__(self) -> str:
        return f"Option(name={self._name!r}, type={self._option_type.value}, default={self._default!r})"


class ParserManager:
    """The options of one configuration section."""

    __slots__ = ("_section", "_names_to_options")

    def __init__(self, section: str, *options: Option) -> None:
        self._section: str = section
        self._names_to_options: dict[str, Option] = {}
        for option in options:
            self.add_option(option)

    @property
    def section(self) -> str:
        return self._section

    @property
    def options(self) -> list[Option]:
        return list(self._names_to_options.values())

    def add_option(self, option: Option) -> ParserManager:
        if option.name in self._names_to_options:
            raise ConfigError(f"Option '{option.name}' is declared twice in [{self._section}].")
        self._names_to_options[option.name] = option
        return self

    def get_option(self, name: str) -> t.Optional[Option]:
        return self._names_to_options.get(name)

    def convert_from_mapping(self, mapping: t.Mapping[str, t.Any]) -> dict[str, t.Any]:
        """
        Convert raw values and fill in defaults.

        Returns
        -------
        Dict[:obj:`str`, `Any`]
            Mapping of every option name to its converted value.

        Raises
        ------
        :obj:`~.errors.ConfigError`
            On an unknown key, a missing required option or an invalid value.
        """
        unknown = sorted(set(mapping) - set(self._names_to_options))
        if unknown:
            raise ConfigError(f"Unknown key(s) in [{self._section}]: {', '.join(unknown)}.")
        values: dict[str, t.Any] = {}
        for name, option in self._names_to_options.items():
            if name in mapping and mapping[name] is not None:
                values[name] = option.convert(mapping[name])
            elif option.required:
                raise ConfigError(f"Missing required key '{name}' in [{self._section}].")
            else:
                values[name] = option.default
        return values

    def convert_from_string(self, text: str) -> dict[str, t.Any]:
        """Convert ``key = value`` lines. Blank lines and ``#`` comments are skipped."""
        mapping: dict[str, str] = {}
        for number, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith(("#", ";")):
                continue
            key, sep, value = stripped.partition("=")
            if not sep:
                raise ConfigError(f"Line {number} of [{self._section}] is not 'key = value': {stripped!r}.")
            mapping[key.strip()] = value.strip()
        return self.convert_from_mapping(mapping)


def with_option(
    name: str,
    description: str,
    *,
    option_type: OptionType = OptionType.STRING,
    converter: t.Optional[t.Callable[[t.Any], t.Any]] = None,
    default: t.Any = UNDEFINED,
    choices: t.Optional[t.Sequence[t.Any]] = None,
) -> t.Callable[[t.Any], t.Any]:
    """
    A decorator that adds a command-line option to a command. Works with commands and with plain callbacks
    that :obj:`~.commands.as_command` turns into commands later.
    """
    option = Option(name, description, option_type, converter, default, choices)

    def decorate(command: t.Any) -> t.Any:
        if hasattr(command, "add_option"):
            command.add_option(option)
        else:
            pending = getattr(command, "__odecnn_options__", [])
            command.__odecnn_options__ = [option] + pending
        return command

    return decorate
