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

import types

import pytest

from odecnn import checks
from odecnn import config
from odecnn import errors
from odecnn import network
from odecnn import parsing


def _ctx(**options):
    return types.SimpleNamespace(options=options)


@pytest.mark.parametrize(
    ("option_type", "raw", "expected"),
    [
        (parsing.OptionType.INTEGER, " 12 ", 12),
        (parsing.OptionType.FLOAT, "2e-4", 2e-4),
        (parsing.OptionType.BOOLEAN, "Yes", True),
        (parsing.OptionType.BOOLEAN, "off", False),
        (parsing.OptionType.INT_LIST, "32, 64,128", (32, 64, 128)),
        (parsing.OptionType.STRING, "digt", "digt"),
    ],
)
def test_option_converts_strings(option_type, raw, expected):
    assert parsing.Option("value", "A value", option_type).convert(raw) == expected


def test_option_keeps_converted_values():
    assert parsing.Option("value", "A value", parsing.OptionType.INTEGER).convert(7) == 7


@pytest.mark.parametrize(
    ("option_type", "raw"),
    [(parsing.OptionType.INTEGER, "1.5"), (parsing.OptionType.BOOLEAN, "maybe"), (parsing.OptionType.FLOAT, "x")],
)
def test_option_rejects_bad_strings(option_type, raw):
    with pytest.raises(errors.ConfigError, match="value"):
        parsing.Option("value", "A value", option_type).convert(raw)


def test_option_choices_and_converter():
    option = parsing.Option("mode", "A mode", converter=str.lower, choices=["planar", "digt"])
    assert option.convert("DIGT") == "digt"
    with pytest.raises(errors.ConfigError, match="planar, digt"):
        option.convert("igt")


@pytest.mark.parametrize("name", ["Upper", "with space", "", "x" * 33])
def test_option_rejects_bad_names(name):
    with pytest.raises(errors.ConfigError):
        parsing.Option(name, "A value")


def test_option_flag_and_required():
    option = parsing.Option("batch_size", "Samples per step")
    assert option.flag == "--batch-size"
    assert option.required
    assert not parsing.Option("n", "Count", default=3).required


def test_parser_manager_fills_defaults_and_rejects_unknown_keys():
    manager = parsing.ParserManager(
        "demo",
        parsing.Option("n", "Count", parsing.OptionType.INTEGER, default=3),
        parsing.Option("name", "Name"),
    )
    assert manager.convert_from_mapping({"name": "a"}) == {"n": 3, "name": "a"}
    with pytest.raises(errors.ConfigError, match="Unknown key"):
        manager.convert_from_mapping({"name": "a", "size": "2"})
    with pytest.raises(errors.ConfigError, match="Missing required key 'name'"):
        manager.convert_from_mapping({"n": "4"})


def test_parser_manager_reads_lines():
    manager = parsing.ParserManager("demo", parsing.Option("n", "Count", parsing.OptionType.INTEGER, default=3))
    assert manager.convert_from_string("# comment\n\n n = 5 \n") == {"n": 5}
    with pytest.raises(errors.ConfigError, match="Line 1"):
        manager.convert_from_string("n 5")


def test_parser_manager_rejects_duplicates():
    option = parsing.Option("n", "Count")
    with pytest.raises(errors.ConfigError):
        parsing.ParserManager("demo", option, option)


def test_with_option_collects_in_declaration_order():
    @parsing.with_option("a", "First")
    @parsing.with_option("b", "Second")
    def callback(ctx):
        return None

    assert [option.name for option in callback.__odecnn_options__] == ["a", "b"]


def test_run_config_precedence():
    text = "[net]\nh = 32\nw = 64\nsftl = igt\n\n[train]\nepochs = 4\nlr = 0.001\n"
    resolved = config.RunConfig.from_text(
        text,
        overrides={"net": {"sftl": "planar", "cspn": None}, "train": {"epochs": 2}},
        defaults={"net": {"h": 16, "w": 32, "stem": 4}},
    )
    assert (resolved.net.h, resolved.net.w, resolved.net.stem) == (32, 64, 4)
    assert resolved.net.sftl == "planar"
    assert resolved.net.cspn_name == "d"
    assert resolved.train.epochs == 2
    assert resolved.train.lr == 0.001
    assert resolved.data == config.DataConfig()


def test_run_config_text_round_trip():
    original = config.RunConfig.from_text("[net]\nh = 32\nw = 64\ncspn = ig\n[data]\nmanifest = d/manifest.txt\n")
    assert config.RunConfig.from_text(original.to_text()) == original


@pytest.mark.parametrize(
    "text",
    [
        "[model]\nh = 32\n",
        "[net]\ndepth = 3\n",
        "[net]\nsftl = spherical\n",
        "[train]\nlr = -1\n",
        "h = 32\n",
    ],
)
def test_run_config_rejects_bad_text(text):
    with pytest.raises(errors.ConfigError):
        config.RunConfig.from_text(text)


def test_run_config_load(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[data]\nmanifest = data/manifest.txt\nhfov = 90\n")
    resolved = config.RunConfig.load(path)
    assert resolved.data.manifest == "data/manifest.txt"
    assert resolved.data.fov.hfov == pytest.approx(3.14159265 / 2)
    assert config.RunConfig.load() == config.RunConfig()
    with pytest.raises(errors.DataError):
        config.RunConfig.load(tmp_path / "absent.ini")


def test_network_config_reads_only_its_section():
    text = network.NetworkConfig(h=16, w=32).to_text() + "[train]\nepochs = 3\n"
    assert network.NetworkConfig.from_text(text) == network.NetworkConfig(h=16, w=32)


@pytest.mark.parametrize(
    ("options", "ok"),
    [({"h": 16, "w": 32}, True), ({"h": 16, "w": 30}, False), ({"h": 0, "w": 0}, False), ({}, True)],
)
def test_panorama_shape_check(options, ok):
    assert checks.PanoramaShapeCheck().check_without_error(_ctx(**options)) is ok


def test_panorama_shape_check_multiple():
    check = checks.PanoramaShapeCheck(multiple=16)
    assert check.check(_ctx(h=32, w=64))
    with pytest.raises(errors.ConfigError, match="divisible by 16"):
        check.check(_ctx(h=24, w=48))


def test_positive_check():
    assert checks.PositiveCheck("n").check(_ctx(n=1, other=-1))
    assert checks.PositiveCheck("n", allow_zero=True).check(_ctx(n=0))
    with pytest.raises(errors.ConfigError, match="--n must be positive"):
        checks.PositiveCheck("n").check(_ctx(n=0))
    with pytest.raises(errors.ConfigError, match="non-negative"):
        checks.PositiveCheck("val", allow_zero=True).check(_ctx(val=-2))


@pytest.mark.parametrize(("k", "ok"), [(1, True), (3, True), (4, False), (-1, False), (None, True)])
def test_odd_kernel_check(k, ok):
    assert checks.OddKernelCheck().check_without_error(_ctx(k=k)) is ok


def test_check_manager_lists_failures():
    manager = checks.CheckManager(checks.PositiveCheck("n"), checks.OddKernelCheck())
    context = _ctx(n=0, k=3)
    assert [type(c) for c in manager.failures(context)] == [checks.PositiveCheck]
    with pytest.raises(errors.ConfigError):
        manager.run(context)
