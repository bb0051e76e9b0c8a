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
"""The ``odecnn`` subcommands."""
from __future__ import annotations
import logging
import pathlib
import typing as t

import numpy as np

from odecnn import gradcheck
from odecnn.checkpoint import load_network
from odecnn.checks import OddKernelCheck, PanoramaShapeCheck, PositiveCheck, with_checks
from odecnn.colours import colourise
from odecnn.commands import Command, as_command
from odecnn.config import RunConfig
from odecnn.context import Context
from odecnn.cspn import SensorDepth, replacement_step
from odecnn.errors import ConfigError, GradcheckError
from odecnn.handler import Handler
from odecnn.imageio import read_pfm, read_ppm, write_pfm, write_ppm
from odecnn.layers import SftlMode
from odecnn.metrics import DepthMetrics
from odecnn.network import CSPN_CHOICES, OdeNet
from odecnn.parsing import OptionType, with_option
from odecnn.sampling import (
    OffsetMode,
    SamplingGrid,
    bench_sampling,
    bench_sweep,
    format_bench_csv,
    format_bench_text,
    planar_sampling_grid,
)
from odecnn.sphere import EquirectGrid, PinholeFov
from odecnn.synth import SPLITS, DatasetManifest, SceneSpec, make_dataset, read_manifest, render_sample, render_scene
from odecnn.tensor import set_precision
from odecnn.training import Trainer, evaluate_split

__all__: list[str] = [
    "ABLATION_ROWS",
    "BENCH_SWEEP_SIZES",
    "TAP_HEADER",
    "COMMANDS",
    "build_handler",
    "gen_data",
    "train",
    "evaluate",
    "infer",
    "run_gradcheck",
    "bench",
    "inspect_offsets",
    "render",
    "ablate",
]

_LOGGER = logging.getLogger("odecnn.cli")

_SFTL_CHOICES = [mode.value for mode in SftlMode]
_PD_CHOICES = ["front", "none"]

ABLATION_ROWS: t.Final[tuple[tuple[str, str, str, str], ...]] = (
    ("backbone", "planar", "off", "none"),
    ("pd", "planar", "off", "front"),
    ("igt", "igt", "off", "front"),
    ("digt", "digt", "off", "front"),
    ("cspn", "planar", "cspn", "front"),
    ("ig-cspn", "planar", "ig", "front"),
    ("d-cspn", "planar", "d", "front"),
    ("full", "digt", "d", "front"),
)
"""``(name, sftl, cspn, pd)`` of every ablation configuration, the backbone first and the full model last."""

BENCH_SWEEP_SIZES: t.Final[tuple[tuple[int, int], ...]] = ((16, 32), (32, 64), (64, 128))

TAP_HEADER: t.Final[str] = "tap,tangent_x,tangent_y,delta_a,delta_b,row,col"


def _parse_pixel(text: t.Any) -> tuple[int, int]:
    parts = [part.strip() for part in str(text).split(",")]
    if len(parts) != 2:
        raise ValueError("expected 'I,J'")
    return int(parts[0]), int(parts[1])


def _check_resolution(net: OdeNet, h: int, w: int, what: str) -> None:
    if (net.config.h, net.config.w) != (h, w):
        raise ConfigError(f"The network expects {net.config.h}x{net.config.w} panoramas but {what} is {h}x{w}.")


def _read_input(image_path: str, sensor_path: t.Optional[str]) -> tuple[np.ndarray, t.Optional[SensorDepth]]:
    image = read_ppm(image_path)[None]
    sensor = None if sensor_path is None else SensorDepth(read_pfm(sensor_path)[None])
    return image, sensor


def _infer(net: OdeNet, image: np.ndarray, sensor: t.Optional[SensorDepth]) -> tuple[np.ndarray, t.Any]:
    """Refined depth of one image. Sensor pixels always surface in the output, whatever the network consumes."""
    _check_resolution(net, image.shape[2], image.shape[3], "the image")
    net.eval()
    output = net.forward(image, sensor if net.config.use_partial_depth else None)
    refined = output.depth_refined
    if sensor is not None and not net.config.use_partial_depth:
        refined = replacement_step(refined, sensor)
    return refined, output


@as_command("gen-data", "Render a synthetic panoramic RGB-D dataset and its manifest")
@with_checks(PanoramaShapeCheck(), PositiveCheck("n"), PositiveCheck("val", "test", allow_zero=True))
@with_option("out", "Output directory")
@with_option("n", "Number of samples, all splits included", option_type=OptionType.INTEGER, default=8)
@with_option("h", "Panorama height", option_type=OptionType.INTEGER, default=64)
@with_option("w", "Panorama width", option_type=OptionType.INTEGER, default=128)
@with_option("hfov", "Sensor horizontal field of view, degrees", option_type=OptionType.FLOAT, default=70.0)
@with_option("vfov", "Sensor vertical field of view, degrees", option_type=OptionType.FLOAT, default=60.0)
@with_option("seed", "Dataset seed", option_type=OptionType.INTEGER, default=0)
@with_option("val", "Validation samples", option_type=OptionType.INTEGER, default=0)
@with_option("test", "Test samples", option_type=OptionType.INTEGER, default=0)
def gen_data(ctx: Context) -> None:
    o = ctx.options
    if o["val"] + o["test"] > o["n"]:
        raise ConfigError(f"Cannot hold out {o['val']} validation and {o['test']} test samples from {o['n']}.")
    fov = PinholeFov.from_degrees(o["hfov"], o["vfov"])
    manifest = make_dataset(o["n"], EquirectGrid(o["h"], o["w"]), fov, o["out"], o["seed"], val=o["val"], test=o["test"])
    ctx.respond(f"{len(manifest)} samples written to {manifest.root}")


def _resolve_run(
    o: t.Mapping[str, t.Any], net: t.Optional[t.Mapping[str, t.Any]] = None
) -> tuple[RunConfig, DatasetManifest]:
    """The run configuration of a training command. The panorama size defaults to the dataset's."""
    overrides = {
        "net": dict(net if net is not None else {"sftl": o.get("sftl"), "cspn": o.get("cspn"), "pd": o.get("pd")}),
        "train": {"epochs": o.get("epochs"), "seed": o.get("seed")},
        "data": {"manifest": o.get("data"), "out": o.get("out")},
    }
    manifest_path = o.get("data")
    if manifest_path is None:
        manifest_path = RunConfig.load(o.get("cfg"), overrides=overrides).data.manifest
    if not manifest_path:
        raise ConfigError("No dataset given, pass --data or set 'manifest' in [data].")
    manifest = read_manifest(manifest_path)
    config = RunConfig.load(o.get("cfg"), overrides=overrides, defaults={"net": {"h": manifest.h, "w": manifest.w}})
    if (config.net.h, config.net.w) != (manifest.h, manifest.w):
        raise ConfigError(
            f"The configuration builds {config.net.h}x{config.net.w} networks but the dataset is {manifest.h}x{manifest.w}."
        )
    return config, manifest


@as_command("train", "Train a network on a dataset manifest")
@with_checks(PositiveCheck("epochs"))
@with_option("data", "Dataset manifest, overrides [data] manifest", default=None)
@with_option("cfg", "Configuration file with [net], [train] and [data] sections", default=None)
@with_option("out", "Best checkpoint path, overrides [data] out", default=None)
@with_option("sftl", "Spherical feature transform mode", default=None, choices=_SFTL_CHOICES)
@with_option("cspn", "Propagation refinement", default=None, choices=list(CSPN_CHOICES))
@with_option("pd", "Partial depth input", default=None, choices=_PD_CHOICES)
@with_option("epochs", "Training epochs, overrides [train] epochs", option_type=OptionType.INTEGER, default=None)
@with_option("seed", "Training seed, overrides [train] seed", option_type=OptionType.INTEGER, default=None)
@with_option("resume", "Checkpoint to resume from", default=None)
def train(ctx: Context) -> None:
    config, manifest = _resolve_run(ctx.options)
    if not config.data.out:
        raise ConfigError("No checkpoint path given, pass --out or set 'out' in [data].")
    set_precision(config.train.precision)
    trainer = Trainer(OdeNet(config.net, seed=config.train.seed), config.train)
    records = trainer.fit(manifest, config.data.out, resume_from=ctx.options["resume"])
    lines = [records[0].csv_header()] if records else []
    lines.extend(record.as_csv() for record in records)
    lines.append(f"best val abs_rel {trainer.best_abs_rel:.6f}, checkpoint {config.data.out}")
    ctx.respond("\n".join(lines))


@as_command("eval", "Evaluate a checkpoint on a dataset split")
@with_option("ckpt", "Checkpoint")
@with_option("data", "Dataset manifest")
@with_option("split", "Split to evaluate", default="val", choices=list(SPLITS))
def evaluate(ctx: Context) -> None:
    net, _ = load_network(ctx.options["ckpt"])
    manifest = read_manifest(ctx.options["data"])
    _check_resolution(net, manifest.h, manifest.w, "the dataset")
    entries = manifest.split(ctx.options["split"])
    if not entries:
        raise ConfigError(f"The manifest has no {ctx.options['split']} samples.")
    metrics = evaluate_split(net, manifest, entries)
    ctx.respond(f"{DepthMetrics.csv_header()}\n{metrics.as_csv()}\n\n{metrics.format_table()}")


@as_command("infer", "Predict the full panoramic depth of one image")
@with_option("ckpt", "Checkpoint")
@with_option("image", "Panorama, binary PPM")
@with_option("sensor", "Partial sensor depth, PFM", default=None)
@with_option("out", "Refined depth output, PFM")
@with_option("preview", "Colour-mapped preview output, PPM, defaults beside --out", default=None)
def infer(ctx: Context) -> None:
    o = ctx.options
    net, _ = load_network(o["ckpt"])
    image, sensor = _read_input(o["image"], o["sensor"])
    refined, _ = _infer(net, image, sensor)
    out = pathlib.Path(o["out"])
    preview = pathlib.Path(o["preview"]) if o["preview"] else out.with_suffix(".preview.ppm")
    write_pfm(out, refined[0])
    write_ppm(preview, colourise(refined[0]))
    ctx.respond(f"depth written to {out}, preview to {preview}")


@as_command("gradcheck", "Compare analytic gradients against finite differences")
@with_option("target", "Component to check", default="all", choices=["all"] + gradcheck.target_names())
@with_option("seed", "Seed of the random inputs", option_type=OptionType.INTEGER, default=0)
def run_gradcheck(ctx: Context) -> None:
    target = ctx.options["target"]
    names = gradcheck.target_names() if target == "all" else [target]
    offenders = []
    for name in names:
        for result in gradcheck.run_gradcheck(name, seed=ctx.options["seed"]):
            ctx.respond(str(result))
            if not result.passed:
                offenders.append(f"{result.target}/{result.tensor}")
    if offenders:
        raise GradcheckError(offenders)


@as_command("bench", "Time and measure im2col against deform-im2col")
@with_checks(PositiveCheck("h", "w", "c", "iters"), OddKernelCheck())
@with_option("h", "Feature height", option_type=OptionType.INTEGER, default=64)
@with_option("w", "Feature width", option_type=OptionType.INTEGER, default=128)
@with_option("c", "Feature channels", option_type=OptionType.INTEGER, default=32)
@with_option("k", "Kernel size", option_type=OptionType.INTEGER, default=3)
@with_option("iters", "Timed calls per operation", option_type=OptionType.INTEGER, default=10)
@with_option(
    "sweep", "Sweep sizes and kernels 3 and 5 and fit the extra memory", option_type=OptionType.BOOLEAN, default=False
)
@with_option("format", "Report format", default="csv", choices=["csv", "text"])
def bench(ctx: Context) -> None:
    o = ctx.options
    formatter = format_bench_csv if o["format"] == "csv" else format_bench_text
    if not o["sweep"]:
        ctx.respond(formatter(bench_sampling(o["h"], o["w"], o["c"], o["k"], o["iters"])))
        return
    rows, fit = bench_sweep(BENCH_SWEEP_SIZES, o["c"], (3, 5), o["iters"])
    ctx.respond(formatter(rows))
    ctx.respond(f"extra_bytes ~ {fit.slope:.3f} * h*w*k^2 + {fit.intercept:.0f}, r2 {fit.r2:.4f}")


@as_command("inspect-offsets", "Print the sampled source coordinates of one pixel")
@with_option("ckpt", "Checkpoint")
@with_option("image", "Panorama, binary PPM")
@with_option("sensor", "Partial sensor depth, PFM", default=None)
@with_option("pixel", "Pixel 'I,J' at the resolution of the stage", converter=_parse_pixel)
@with_option("stage", "Layer to inspect", default="sftl", choices=["sftl", "cspn"])
def inspect_offsets(ctx: Context) -> None:
    o = ctx.options
    net, _ = load_network(o["ckpt"])
    image, sensor = _read_input(o["image"], o["sensor"])
    i, j = o["pixel"]

    offsets: t.Optional[np.ndarray]
    if o["stage"] == "sftl":
        h, w = net.config.h // 16, net.config.w // 16
        mode, cap = OffsetMode.TANGENT, net.sftl.offset_cap(h)
    else:
        if net.cspn is None:
            raise ConfigError("This network has no propagation stage.")
        h, w = net.config.h, net.config.w
        mode, cap = OffsetMode.PIXEL, net.cspn.config.offset_cap
    if not (0 <= i < h and 0 <= j < w):
        raise ConfigError(f"Pixel ({i}, {j}) is outside the {h}x{w} {o['stage']} stage.")

    _, output = _infer(net, image, sensor)
    grid: SamplingGrid
    if o["stage"] == "sftl":
        grid = planar_sampling_grid(h, w, net.config.k) if net.sftl.mode is SftlMode.PLANAR else net.sftl.grid_for(h, w)
        offsets = output.sftl_offsets
    else:
        assert net.cspn is not None
        grid = net.cspn.grid_for(h, w)
        offsets = output.cspn_offsets
    table = grid.tap_table(i, j, None if offsets is None else offsets[0], mode, cap)
    lines = [TAP_HEADER]
    lines.extend(",".join(f"{value:.6f}" if isinstance(value, float) else str(value) for value in row) for row in table)
    ctx.respond("\n".join(lines))


@as_command("render", "Render one scene to PPM and PFM files with a depth preview")
@with_checks(PanoramaShapeCheck())
@with_option("out", "Output path prefix")
@with_option("room", "Scene to render", default="random", choices=["random", "box", "sphere"])
@with_option("size", "Half extent of the box room or radius of the sphere room", option_type=OptionType.FLOAT, default=3.0)
@with_option("h", "Panorama height", option_type=OptionType.INTEGER, default=64)
@with_option("w", "Panorama width", option_type=OptionType.INTEGER, default=128)
@with_option("hfov", "Sensor horizontal field of view, degrees", option_type=OptionType.FLOAT, default=70.0)
@with_option("vfov", "Sensor vertical field of view, degrees", option_type=OptionType.FLOAT, default=60.0)
@with_option("seed", "Scene seed of random rooms", option_type=OptionType.INTEGER, default=0)
def render(ctx: Context) -> None:
    o = ctx.options
    grid, fov = EquirectGrid(o["h"], o["w"]), PinholeFov.from_degrees(o["hfov"], o["vfov"])
    if o["room"] == "random":
        sample = render_sample(o["seed"], grid, fov)
    else:
        if not o["size"] > 0:
            raise ConfigError(f"--size must be positive, got {o['size']}.")
        spec = SceneSpec.empty_box(o["size"]) if o["room"] == "box" else SceneSpec.empty_sphere(o["size"])
        sample = render_scene(spec, grid, fov)
    prefix = str(o["out"])
    write_ppm(f"{prefix}_image.ppm", sample.image)
    write_pfm(f"{prefix}_depth.pfm", sample.depth_gt)
    write_pfm(f"{prefix}_sensor.pfm", sample.sensor.dp[0])
    write_ppm(f"{prefix}_preview.ppm", colourise(sample.depth_gt))
    ctx.respond(f"scene written to {prefix}_*.ppm/pfm, sensor coverage {sample.sensor.coverage:.1%}")


@as_command("ablate", "Train every ablation configuration and compare validation Abs Rel")
@with_checks(PositiveCheck("seeds", "epochs"))
@with_option("data", "Dataset manifest, overrides [data] manifest", default=None)
@with_option("cfg", "Configuration file shared by every configuration", default=None)
@with_option("out", "Directory for the checkpoints and metric logs")
@with_option("seeds", "Training seeds per configuration", option_type=OptionType.INTEGER, default=1)
@with_option("epochs", "Training epochs, overrides [train] epochs", option_type=OptionType.INTEGER, default=None)
@with_option("only", "Comma separated configuration names, all by default", default=None)
def ablate(ctx: Context) -> None:
    o = ctx.options
    names = [row[0] for row in ABLATION_ROWS]
    selected = names if o["only"] is None else [name.strip() for name in o["only"].split(",")]
    unknown = sorted(set(selected) - set(names))
    if unknown:
        raise ConfigError(f"Unknown ablation configuration(s) {', '.join(unknown)}, expected {', '.join(names)}.")
    out = pathlib.Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)

    results: dict[str, list[float]] = {}
    for name, sftl, cspn, pd in ABLATION_ROWS:
        if name not in selected:
            continue
        for offset in range(o["seeds"]):
            config, manifest = _resolve_run({**o, "seed": None}, {"sftl": sftl, "cspn": cspn, "pd": pd})
            seed = config.train.seed + offset
            train_config = config.train._replace(seed=seed)
            set_precision(train_config.precision)
            trainer = Trainer(OdeNet(config.net, seed=seed), train_config)
            _LOGGER.info(f"Ablation {name} with seed {seed}.")
            trainer.fit(manifest, out / f"{name}_seed{seed}.ckpt")
            results.setdefault(name, []).append(trainer.best_abs_rel)

    reference = float(np.mean(results[names[0]])) if names[0] in results else None
    lines = [f"{'config':<10} {'sftl':<7} {'cspn':<5} {'pd':<6} {'abs_rel':>9} {'vs backbone':>12}"]
    for name, sftl, cspn, pd in ABLATION_ROWS:
        if name not in results:
            continue
        mean = float(np.mean(results[name]))
        change = f"{100.0 * (mean - reference) / reference:+.1f}%" if reference else "-"
        lines.append(f"{name:<10} {sftl:<7} {cspn:<5} {pd:<6} {mean:>9.4f} {change:>12}")
    ctx.respond("\n".join(lines))


COMMANDS: t.Final[tuple[Command, ...]] = (
    gen_data,
    train,
    evaluate,
    infer,
    run_gradcheck,
    bench,
    inspect_offsets,
    render,
    ablate,
)


def build_handler(stdout: t.Optional[t.TextIO] = None) -> Handler:
    handler = Handler("odecnn", stdout=stdout)
    for command in COMMANDS:
        handler.add_command(command)
    return handler
