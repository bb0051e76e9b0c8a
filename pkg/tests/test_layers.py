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

import numpy as np
import pytest

from odecnn import errors
from odecnn import layers
from odecnn import sampling
from odecnn.tensor import make_rng


def test_conv_1x1_scales_input():
    conv = layers.Conv2d("c", 1, 1, 1, bias=False)
    conv.weight.value = np.full((1, 1, 1, 1), 2.0)
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32)
    assert conv.forward(x)[0, 0].tolist() == [[2.0, 4.0], [6.0, 8.0]]


def test_conv_centre_delta_is_identity():
    conv = layers.Conv2d("c", 2, 2, 3, bias=False)
    kernel = np.zeros((2, 2, 3, 3))
    kernel[0, 0, 1, 1] = kernel[1, 1, 1, 1] = 1.0
    conv.weight.value = kernel
    x = make_rng(0).standard_normal((1, 2, 4, 8)).astype(np.float32)
    np.testing.assert_array_equal(conv.forward(x), x)


def test_conv_wraps_columns():
    conv = layers.Conv2d("c", 1, 1, 3, bias=False)
    kernel = np.zeros((1, 1, 3, 3))
    kernel[0, 0, 1, 0] = 1.0
    conv.weight.value = kernel
    x = np.arange(8, dtype=np.float32).reshape(1, 1, 1, 8)
    # each output reads its left neighbour, column 0 reads column 7
    assert conv.forward(x)[0, 0, 0].tolist() == [7, 0, 1, 2, 3, 4, 5, 6]


def _direct_conv(x, weight, bias, stride):
    n, c_in, h, w = x.shape
    c_out, _, k, _ = weight.shape
    pad = (k - 1) // 2
    h_out, w_out = (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1
    out = np.zeros((n, c_out, h_out, w_out))
    for b in range(n):
        for o in range(c_out):
            for i in range(h_out):
                for j in range(w_out):
                    total = bias[o]
                    for c in range(c_in):
                        for dy in range(k):
                            row = i * stride - pad + dy
                            if not 0 <= row < h:
                                continue
                            for dx in range(k):
                                total += weight[o, c, dy, dx] * x[b, c, row, (j * stride - pad + dx) % w]
                    out[b, o, i, j] = total
    return out


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_matches_direct_loop(float64, stride):
    rng = make_rng(11)
    conv = layers.Conv2d("c", 2, 3, 3, stride=stride, rng=rng)
    conv.bias.value = rng.standard_normal(3)
    x = rng.standard_normal((2, 2, 8, 16))
    expected = _direct_conv(x, conv.weight.data, conv.bias.data, stride)
    np.testing.assert_allclose(conv.forward(x), expected, rtol=0, atol=1e-12)


def test_conv_rejects_wrong_channels():
    conv = layers.Conv2d("c", 3, 2, 3)
    with pytest.raises(errors.ShapeError):
        conv.forward(np.zeros((1, 2, 4, 8), dtype=np.float32))


def test_tconv_is_adjoint_of_strided_conv(float64):
    rng = make_rng(1)
    conv = layers.Conv2d("c", 3, 4, 3, stride=2, bias=False, rng=rng)
    tconv = layers.ConvTranspose2d("t", 4, 3, 3, stride=2, bias=False, rng=rng)
    tconv.weight.value = conv.weight.data
    x = rng.standard_normal((2, 3, 8, 16))
    y = rng.standard_normal((2, 4, 4, 8))
    assert tconv.forward(y).shape == x.shape
    assert float(np.sum(conv.forward(x) * y)) == pytest.approx(float(np.sum(x * tconv.forward(y))), rel=1e-10)


def test_batchnorm_constant_input_gives_beta():
    bn = layers.BatchNorm2d("bn", 2)
    bn.beta.value = np.array([0.5, -1.0])
    out = bn.forward(np.full((2, 2, 3, 4), 3.0, dtype=np.float32))
    np.testing.assert_allclose(out[:, 0], 0.5)
    np.testing.assert_allclose(out[:, 1], -1.0)


def test_batchnorm_running_statistics(float64):
    bn = layers.BatchNorm2d("bn", 1, momentum=0.5)
    x = make_rng(2).standard_normal((2, 1, 4, 4)) * 3.0 + 1.0
    bn.forward(x)
    assert bn.running_mean[0] == pytest.approx(0.5 * x.mean())
    assert bn.running_var[0] == pytest.approx(0.5 + 0.5 * x.var(ddof=1))
    bn.eval()
    out = bn.forward(x)
    np.testing.assert_allclose(out, (x - bn.running_mean[0]) / np.sqrt(bn.running_var[0] + bn.eps))
    assert set(bn.buffers()) == {"bn.running_mean", "bn.running_var"}


def test_batchnorm_needs_two_values_in_training():
    with pytest.raises(errors.ShapeError):
        layers.BatchNorm2d("bn", 1).forward(np.zeros((1, 1, 1, 1), dtype=np.float32))


def test_relu():
    relu = layers.ReLU()
    x = np.array([-1.0, 0.0, 2.0])
    assert relu.forward(x).tolist() == [0.0, 0.0, 2.0]
    assert relu.forward(relu.forward(x)).tolist() == relu.forward(x).tolist()
    assert relu.backward(np.ones(3)).tolist() == [0.0, 0.0, 1.0]


def test_softplus_is_positive():
    out = layers.Softplus().forward(np.array([-50.0, 0.0, 50.0]))
    assert np.all(out > 0)
    assert out[1] == pytest.approx(np.log(2.0))


def test_residual_with_zeroed_branch_is_identity():
    block = layers.ResidualBlock("enc", 2, 2, rng=make_rng(3))
    block.bn2.gamma.value = np.zeros(2)
    x = np.abs(make_rng(4).standard_normal((2, 2, 4, 8))).astype(np.float32)
    np.testing.assert_allclose(block.forward(x), x)
    assert block.proj is None


def test_residual_identity_shortcut_passes_gradient():
    block = layers.ResidualBlock("enc", 2, 2, rng=make_rng(3))
    block.bn2.gamma.value = np.zeros(2)
    x = np.abs(make_rng(4).standard_normal((2, 2, 4, 8))).astype(np.float32) + 0.1
    block.forward(x)
    grad = make_rng(5).standard_normal(x.shape).astype(np.float32)
    np.testing.assert_array_equal(block.backward(grad), grad)


def test_residual_projects_when_shape_changes():
    block = layers.ResidualBlock("enc1", 2, 4, stride=2, rng=make_rng(5))
    assert block.forward(np.ones((2, 2, 8, 16), dtype=np.float32)).shape == (2, 4, 4, 8)
    names = set(block.named_parameters())
    assert {"enc1.conv1.weight", "enc1.bn1.gamma", "enc1.proj.weight", "enc1.proj_bn.beta"} <= names


def test_train_and_eval_propagate():
    seq = layers.conv_bn_relu("stem", 3, 4)
    seq.eval()
    assert not any(layer.training for layer in seq.layers)
    seq.train()
    assert all(layer.training for layer in seq.layers)
    assert set(seq.named_parameters()) == {"stem.conv.weight", "stem.bn.gamma", "stem.bn.beta"}


def test_zero_grad_clears_every_parameter():
    seq = layers.conv_bn_relu("stem", 1, 2)
    x = np.ones((2, 1, 4, 8), dtype=np.float32)
    seq.backward(np.ones_like(seq.forward(x)))
    seq.zero_grad()
    assert all(not p.grad.any() for p in seq.parameters())


def test_sftl_planar_matches_conv():
    rng = make_rng(6)
    sftl = layers.Sftl("sftl", 2, 3, layers.SftlConfig(mode=layers.SftlMode.PLANAR), rng=rng)
    conv = layers.Conv2d("c", 2, 3, 3, rng=rng)
    conv.weight.value = sftl.weight.data
    conv.bias.value = sftl.bias.data
    x = rng.standard_normal((1, 2, 4, 8)).astype(np.float32)
    np.testing.assert_array_equal(sftl.forward(x), conv.forward(x))
    assert sftl.offset_head is None


def test_fresh_digt_matches_igt(float64):
    rng = make_rng(7)
    digt = layers.Sftl("sftl", 2, 3, layers.SftlConfig(mode=layers.SftlMode.DIGT), rng=rng)
    igt = layers.Sftl("sftl", 2, 3, layers.SftlConfig(mode=layers.SftlMode.IGT), rng=rng)
    igt.weight.value = digt.weight.data
    igt.bias.value = digt.bias.data
    x = rng.standard_normal((2, 2, 8, 16))
    np.testing.assert_array_equal(digt.forward(x), igt.forward(x))
    assert digt.offset_head is not None and igt.offset_head is None
    assert "sftl.offset_head.weight" in digt.named_parameters()


def test_digt_backward_reaches_offset_head(float64):
    rng = make_rng(8)
    sftl = layers.Sftl("sftl", 2, 2, rng=rng)
    sftl.offset_head.weight.value = rng.normal(0.0, 0.02, sftl.offset_head.weight.shape)
    x = rng.standard_normal((1, 2, 8, 16))
    sftl.backward(np.ones_like(sftl.forward(x)))
    assert np.abs(sftl.offset_head.weight.grad).sum() > 0
    assert sftl.last_offsets.shape == (1, 18, 8, 16)


def test_sftl_fixed_grid_resolution_mismatch():
    grid = sampling.planar_sampling_grid(4, 8, 3)
    sftl = layers.Sftl("sftl", 1, 1, layers.SftlConfig(mode=layers.SftlMode.IGT), grid=grid)
    with pytest.raises(errors.ShapeError):
        sftl.forward(np.zeros((1, 1, 8, 16), dtype=np.float32))


def test_sftl_offset_cap_defaults_to_pixel_pitch():
    sftl = layers.Sftl("sftl", 1, 1)
    assert sftl.offset_cap(8) == pytest.approx(4.0 * np.pi / 8)
