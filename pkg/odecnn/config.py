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
"""The run configuration file: ``[net]``, ``[train]`` and ``[data]`` sections merged with flag overrides."""
from __future__ import annotations
import configparser
import logging
import pathlib
import typing as t

from odecnn.errors import ConfigError, DataError
from odecnn.network import NET_OPTIONS, NetworkConfig
from odecnn.parsing import Option, OptionType, ParserManager
from odecnn.sphere import PinholeFov
from odecnn.training import TRAIN_OPTIONS, TrainConfig

__all__: list[str] = ["DATA_OPTIONS", "SECTIONS", "DataConfig", "RunConfig"]

_LOGGER = logging.getLogger("odecnn.config")

DATA_OPTIONS: t.Final[ParserManager] = ParserManager(
    "data",
    Option("manifest", "Dataset manifest used by training and evaluation", default=""),
    Option("out", "Checkpoint written by training", default=""),
    Option("n", "Samples generated", OptionType.INTEGER, default=576),
    Option("val", "Validation samples among them", OptionType.INTEGER, default=64),
    Option("test", "Test samples among them", OptionType.INTEGER, default=0),
    Option("hfov", "Horizontal field of view of the front sensor, degrees", OptionType.FLOAT, default=70.0),
    Option("vfov", "Vertical field of view of the front sensor, degrees", OptionType.FLOAT, default=60.0),
    Option("seed", "Dataset seed", OptionType.INTEGER, default=0),
)
"""Keys of the ``[data]`` configuration section."""

SECTIONS: t.Final[dict[str, ParserManager]] = {"net": NET_OPTIONS, "train": TRAIN_OPTIONS, "data": DATA_OPTIONS}

_Raw = t.Mapping[str, t.Mapping[str, t.Any]]


class DataConfig(t.NamedTuple):
    manifest: str = ""
    out: str = ""
    n: int = 576
    val: int = 64
    test: int = 0
    hfov: float = 70.0
    vfov: float = 60.0
    seed: int = 0

    @classmethod
    def from_mapping(cls, mapping: t.Mapping[str, t.Any]) -> DataConfig:
        return cls(**DATA_OPTIONS.convert_from_mapping(mapping))

    @property
    def fov(self) -> PinholeFov:
        return PinholeFov.from_degrees(self.hfov, self.vfov)

    def to_text(self) -> str:
        return "\n".join(["[data]"] + [f"{name} = {value}" for name, value in self._asdict().items()]) + "\n"


def _merge(*layers: t.Optional[_Raw]) -> dict[str, dict[str, t.Any]]:
    merged: dict[str, dict[str, t.Any]] = {name: {} for name in SECTIONS}
    for layer in layers:
        for section, values in (layer or {}).items():
            if section not in SECTIONS:
                raise ConfigError(f"Unknown configuration section [{section}], expected one of {', '.join(SECTIONS)}.")
            merged[section].update({key: value for key, value in values.items() if value is not None})
    return merged


class RunConfig(t.NamedTuple):
    """
    Everything a run needs, resolved from defaults, a configuration file and flag overrides, in that order of
    precedence from lowest to highest.
    """

    net: NetworkConfig = NetworkConfig()
    train: TrainConfig = TrainConfig()
    data: DataConfig = DataConfig()

    @classmethod
    def from_text(cls, text: str, *, overrides: t.Optional[_Raw] = None, defaults: t.Optional[_Raw] = None) -> RunConfig:
        """
        Parameters
        ----------
        text : :obj:`str`
            The file content, ``key = value`` lines under section headers.
        overrides : Optional[Mapping[:obj:`str`, Mapping[:obj:`str`, `Any`]]]
            Values by section that win over the file. `None` values are ignored.
        defaults : Optional[Mapping[:obj:`str`, Mapping[:obj:`str`, `Any`]]]
            Values by section used where the file is silent.

        Raises
        ------
        :obj:`~.errors.ConfigError`
            On a malformed file, an unknown section or key, or an invalid value.
        """
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as ex:
            raise ConfigError(f"Malformed configuration file: {ex}") from None
        from_file = {section: dict(parser.items(section)) for section in parser.sections()}
        raw = _merge(defaults, from_file, overrides)
        return cls(
            NetworkConfig.from_mapping(raw["net"]),
            TrainConfig.from_mapping(raw["train"]),
            DataConfig.from_mapping(raw["data"]),
        )

    @classmethod
    def load(
        cls,
        path: t.Optional[t.Union[str, pathlib.Path]] = None,
        *,
        overrides: t.Optional[_Raw] = None,
        defaults: t.Optional[_Raw] = None,
    ) -> RunConfig:
        text = ""
        if path is not None:
            try:
                text = pathlib.Path(path).read_text(encoding="utf-8")
            except OSError as ex:
                raise DataError(path, f"cannot read configuration: {ex.strerror or ex}") from ex
        config = cls.from_text(text, overrides=overrides, defaults=defaults)
        _LOGGER.info(f"Resolved configuration{'' if path is None else f' from {path}'}:\n{config.to_text()}")
        return config

    def to_text(self) -> str:
        return "\n".join([self.net.to_text(), self.train.to_text(), self.data.to_text()])
