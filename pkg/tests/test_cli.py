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

import io

import pytest

from odecnn import cli
from odecnn import hooks
from odecnn import imageio
from odecnn import metrics
from odecnn import synth

SMALL_NET = "[net]\nchannels = 2,2,2,2\nstem = 2\niterations = 2\n\n[train]\nbatch_size = 2\n"


def run(*argv):
    stdout = io.StringIO()
    code = cli.build_handler(stdout=stdout).run(list(argv))
    return code, stdout.getvalue()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    code, out = run("gen-data", "--out", str(root / "data"), "--n", "4", "--h", "16", "--w", "32", "--val", "1")
    assert code == 0, out
    cfg = root / "small.ini"
    cfg.write_text(SMALL_NET)
    manifest = root / "data" / synth.MANIFEST_NAME
    ckpt = root / "net.ckpt"
    code, out = run("train", "--data", str(manifest), "--cfg", str(cfg), "--out", str(ckpt), "--epochs", "1")
    assert code == 0, out
    entry = synth.read_manifest(manifest).split("train")[0]
    return {
        "root": root,
        "cfg": cfg,
        "manifest": manifest,
        "ckpt": ckpt,
        "image": root / "data" / entry.image,
        "sensor": root / "data" / entry.sensor,
    }


def test_gen_data_and_train(workspace):
    assert len(synth.read_manifest(workspace["manifest"])) == 4
    assert workspace["ckpt"].exists()
    assert (workspace["root"] / "net.ckpt.csv").read_text().count("\n") == 2


def test_eval(workspace):
    code, out = run("eval", "--ckpt", str(workspace["ckpt"]), "--data", str(workspace["manifest"]))
    assert code == 0
    assert out.splitlines()[0] == metrics.DepthMetrics.csv_header()


def test_eval_of_empty_split(workspace):
    code, _ = run("eval", "--ckpt", str(workspace["ckpt"]), "--data", str(workspace["manifest"]), "--split", "test")
    assert code == 2


def test_infer_writes_depth_and_preview(workspace, tmp_path):
    out = tmp_path / "depth.pfm"
    code, _ = run(
        "infer",
        "--ckpt",
        str(workspace["ckpt"]),
        "--image",
        str(workspace["image"]),
        "--sensor",
        str(workspace["sensor"]),
        "--out",
        str(out),
    )
    assert code == 0
    assert imageio.read_pfm(out).size == 16 * 32
    assert imageio.read_ppm(tmp_path / "depth.preview.ppm").shape == (3, 16, 32)


def test_infer_of_missing_image(workspace, tmp_path):
    code, _ = run(
        "infer", "--ckpt", str(workspace["ckpt"]), "--image", str(tmp_path / "absent.ppm"), "--out", str(tmp_path / "d.pfm")
    )
    assert code == 3


@pytest.mark.parametrize(("stage", "pixel", "taps"), [("sftl", "0,1", 9), ("cspn", "3,5", 8)])
def test_inspect_offsets(workspace, stage, pixel, taps):
    code, out = run(
        "inspect-offsets",
        "--ckpt",
        str(workspace["ckpt"]),
        "--image",
        str(workspace["image"]),
        "--sensor",
        str(workspace["sensor"]),
        "--pixel",
        pixel,
        "--stage",
        stage,
    )
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == cli.TAP_HEADER
    assert len(lines) >= taps + 1
    assert all(len(line.split(",")) == 7 for line in lines[1:])


@pytest.mark.parametrize("pixel", ["5,5", "1;2"])
def test_inspect_offsets_bad_pixel(workspace, pixel):
    code, _ = run(
        "inspect-offsets", "--ckpt", str(workspace["ckpt"]), "--image", str(workspace["image"]), "--pixel", pixel
    )
    assert code == 2


def test_train_needs_an_output(workspace):
    code, _ = run("train", "--data", str(workspace["manifest"]), "--cfg", str(workspace["cfg"]))
    assert code == 2


def test_train_on_missing_manifest(tmp_path):
    code, _ = run("train", "--data", str(tmp_path / "manifest.txt"), "--out", str(tmp_path / "net.ckpt"))
    assert code == 3


def test_train_with_mismatched_resolution(workspace, tmp_path):
    cfg = tmp_path / "big.ini"
    cfg.write_text(SMALL_NET.replace("[net]\n", "[net]\nh = 32\nw = 64\n"))
    code, _ = run("train", "--data", str(workspace["manifest"]), "--cfg", str(cfg), "--out", str(tmp_path / "n.ckpt"))
    assert code == 2


def test_ablate_selected_rows(workspace, tmp_path):
    code, out = run(
        "ablate",
        "--data",
        str(workspace["manifest"]),
        "--cfg",
        str(workspace["cfg"]),
        "--out",
        str(tmp_path / "ablation"),
        "--epochs",
        "1",
        "--only",
        "backbone,pd",
    )
    assert code == 0
    lines = out.splitlines()
    assert len(lines) == 3
    assert lines[1].startswith("backbone") and lines[1].endswith("+0.0%")
    assert (tmp_path / "ablation" / "pd_seed0.ckpt").exists()


def test_ablate_unknown_row(tmp_path):
    code, _ = run("ablate", "--out", str(tmp_path), "--only", "backbone,magic")
    assert code == 2


@pytest.mark.parametrize(
    "argv",
    [
        ("gen-data", "--out", "x", "--h", "16", "--w", "30"),
        ("gen-data", "--out", "x", "--n", "2", "--val", "2", "--test", "1"),
        ("gen-data", "--out", "x", "--n", "0"),
        ("gen-data", "--out", "x", "--n", "many"),
        ("gen-data",),
        ("bench", "--k", "4"),
        ("render", "--out", "x", "--room", "box", "--size", "-1"),
        ("train", "--sftl", "spherical"),
        ("teleport",),
    ],
)
def test_usage_errors_exit_with_two(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, _ = run(*argv)
    assert code == 2
    assert not (tmp_path / "x").exists()


@pytest.mark.parametrize("room", ["box", "sphere", "random"])
def test_render(room, tmp_path):
    prefix = tmp_path / room
    code, out = run("render", "--out", str(prefix), "--room", room, "--h", "16", "--w", "32")
    assert code == 0
    assert "sensor coverage" in out
    for suffix in ("_image.ppm", "_depth.pfm", "_sensor.pfm", "_preview.ppm"):
        assert (tmp_path / f"{room}{suffix}").exists()


def test_render_sphere_depth_is_the_radius(tmp_path):
    prefix = tmp_path / "room"
    run("render", "--out", str(prefix), "--room", "sphere", "--size", "2.5", "--h", "16", "--w", "32")
    depth = imageio.read_pfm(f"{prefix}_depth.pfm")
    assert abs(float(depth.min()) - 2.5) < 1e-4 and abs(float(depth.max()) - 2.5) < 1e-4


@pytest.mark.parametrize("fmt", ["csv", "text"])
def test_bench(fmt):
    code, out = run("bench", "--h", "8", "--w", "16", "--c", "2", "--iters", "1", "--format", fmt)
    assert code == 0
    if fmt == "csv":
        assert out.splitlines()[0] == "op,h,w,c,k,ns_per_call,extra_bytes"
    assert "deform" in out


def test_gradcheck_single_target():
    code, out = run("gradcheck", "--target", "relu")
    assert code == 0
    assert out.strip() and all(line.rstrip().endswith("ok") for line in out.splitlines())


def test_error_hook_receives_the_error(tmp_path):
    handler = cli.build_handler(stdout=io.StringIO())
    seen = []
    handler.hooks.add_hook_callback(hooks.HookTypes.ERROR, lambda error: seen.append(error), "collect")

    code = handler.run(["eval", "--ckpt", str(tmp_path / "absent.ckpt"), "--data", str(tmp_path / "m.txt")])

    assert code == 3
    assert len(seen) == 1


def test_success_hooks(tmp_path):
    handler = cli.build_handler(stdout=io.StringIO())
    seen = []
    handler.hooks.add_hook_callback(hooks.HookTypes.PRE_INVOKE, lambda context: seen.append("pre"), "pre")
    handler.hooks.add_hook_callback(hooks.HookTypes.COMMAND_SUCCESS, lambda context: seen.append("ok"), "ok")
    handler.hooks.add_hook_callback(
        hooks.HookTypes.POST_INVOKE, lambda context: seen.append(context.invoking_name), "post"
    )

    assert handler.run(["render", "--out", str(tmp_path / "r"), "--room", "box", "--h", "16", "--w", "32"]) == 0
    assert seen == ["pre", "ok", "render"]
