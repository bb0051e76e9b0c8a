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
from odecnn import sampling
from odecnn import sphere


def test_bilinear_sample_average_of_corners():
    features = np.array([[[0.0, 1.0], [2.0, 3.0]]])
    assert sampling.bilinear_sample(features, 0.5, 0.5, sampling.WrapPolicy.CLAMP)[0] == pytest.approx(1.5)
    assert sampling.bilinear_sample(features, 0.0, 0.0, sampling.WrapPolicy.CLAMP)[0] == 0.0


def test_bilinear_sample_rejects_nan():
    with pytest.raises(errors.NumericalError):
        sampling.bilinear_sample(np.zeros((1, 2, 2)), np.nan, 0.0)


def test_sphere_policy_wraps_longitude_and_reflects_poles():
    features = np.arange(8, dtype=np.float64).reshape(1, 2, 4)
    # column -1 wraps to column 3
    assert sampling.bilinear_sample(features, 0.0, -1.0)[0] == features[0, 0, 3]
    # row -1 reflects to row 0 half a turn away
    assert sampling.bilinear_sample(features, -1.0, 1.0)[0] == features[0, 0, 3]
    assert sampling.bilinear_sample(features, 2.0, 0.0)[0] == features[0, 1, 2]


def test_panorama_policy_zeroes_rows_outside():
    features = np.ones((1, 2, 4))
    assert sampling.bilinear_sample(features, -1.0, 0.0, sampling.WrapPolicy.PANORAMA)[0] == 0.0
    assert sampling.bilinear_sample(features, 0.0, 5.0, sampling.WrapPolicy.PANORAMA)[0] == 1.0


def test_im2col_k1_is_reshape():
    features = np.random.default_rng(0).standard_normal((2, 3, 4, 8))
    columns = sampling.im2col(features, 1)
    assert np.array_equal(columns, features.reshape(2, 3, 32))


def test_im2col_rejects_even_kernels_and_tiny_outputs():
    with pytest.raises(errors.ShapeError):
        sampling.im2col(np.zeros((1, 1, 4, 4)), 2)
    with pytest.raises(errors.ShapeError):
        sampling.im2col(np.zeros((1, 1, 2, 2)), 5, pad=0, mode=sampling.PadMode.ZERO)


def test_col2im_is_adjoint_of_im2col():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 2, 6, 8))
    for mode in sampling.PadMode:
        for stride in (1, 2):
            columns = sampling.im2col(x, 3, stride, mode=mode)
            y = rng.standard_normal(columns.shape)
            folded = sampling.col2im(y, x.shape, 3, stride, mode=mode)
            assert float(np.sum(columns * y)) == pytest.approx(float(np.sum(x * folded)), rel=1e-10)


def test_deform_im2col_degenerates_to_im2col():
    features = np.random.default_rng(2).standard_normal((2, 3, 8, 16))
    grid = sampling.planar_sampling_grid(8, 16, 3)
    zero = np.zeros((2, 18, 8, 16))
    deformed = sampling.DeformIm2col(grid, sampling.OffsetMode.PIXEL).forward(features, zero)
    assert np.array_equal(deformed, sampling.im2col(features, 3))
    assert np.array_equal(sampling.deform_im2col(features, grid), sampling.im2col(features, 3))


def test_deform_im2col_is_linear_in_features():
    rng = np.random.default_rng(3)
    grid = sphere.ig_sampling_grid(sphere.EquirectGrid(8, 16), 3)
    offsets = rng.uniform(-0.1, 0.1, (1, 18, 8, 16))
    f1, f2 = rng.standard_normal((2, 1, 2, 8, 16))
    unfold = sampling.DeformIm2col(grid)
    combined = unfold.forward(2.0 * f1 - 0.5 * f2, offsets)
    separate = 2.0 * unfold.forward(f1, offsets) - 0.5 * unfold.forward(f2, offsets)
    np.testing.assert_allclose(combined, separate, atol=1e-12)


def test_deform_im2col_grid_mismatch():
    grid = sampling.planar_sampling_grid(4, 8, 3)
    with pytest.raises(errors.ShapeError):
        sampling.deform_im2col(np.zeros((1, 1, 8, 16)), grid)


def test_tangent_offsets_need_projected_grid():
    grid = sampling.planar_sampling_grid(4, 8, 3)
    with pytest.raises(errors.ShapeError):
        grid.deform(np.zeros((1, 18, 4, 8)), sampling.OffsetMode.TANGENT)


def test_deform_clips_to_cap():
    grid = sampling.planar_sampling_grid(4, 8, 3)
    offsets = np.full((1, 18, 4, 8), 5.0)
    coords = grid.deform(offsets, sampling.OffsetMode.PIXEL, cap=1.0)
    np.testing.assert_array_equal(coords.rows, grid.rows + 1.0)
    assert not coords.unclipped.any()


def test_without_center_drops_middle_tap():
    grid = sampling.planar_sampling_grid(4, 8, 3).without_center()
    assert grid.taps == 8
    assert not np.any((grid.rows[:, 1, 1] == 1) & (grid.cols[:, 1, 1] == 1))


def test_tap_table_of_undeformed_grid():
    grid = sphere.ig_sampling_grid(sphere.EquirectGrid(8, 16), 3)
    table = grid.tap_table(4, 5)
    assert len(table) == 9
    centre = table[4]
    assert (centre.tangent_x, centre.tangent_y) == (0.0, 0.0)
    assert centre.row == pytest.approx(4.0)
    assert centre.col == pytest.approx(5.0)
    with pytest.raises(errors.ShapeError):
        grid.tap_table(8, 0)


def test_bilinear_backward_feature_gradient_is_adjoint():
    rng = np.random.default_rng(4)
    features = rng.standard_normal((1, 2, 4, 8))
    rows = rng.uniform(-1, 4, (3, 4, 8))
    cols = rng.uniform(-1, 9, (3, 4, 8))
    sampler = sampling.BilinearSampler()
    out = sampler.forward(features, rows, cols)
    grad_out = rng.standard_normal(out.shape)
    grad_features, _, _ = sampler.backward(grad_out)
    other = rng.standard_normal(features.shape)
    assert float(np.sum(sampler.forward(other, rows, cols) * grad_out)) == pytest.approx(
        float(np.sum(other * grad_features)), rel=1e-10
    )


def test_linear_fit_exact_line():
    fit = sampling.linear_fit([1, 2, 3, 4], [5, 7, 9, 11])
    assert fit.slope == pytest.approx(2.0)
    assert fit.intercept == pytest.approx(3.0)
    assert fit.r2 == pytest.approx(1.0)


def test_bench_sweep_extra_memory_grows_linearly():
    rows, fit = sampling.bench_sweep([(16, 32), (32, 64), (64, 128)], 2, [3, 5], iters=1)
    assert len(rows) == 12
    assert fit.slope > 0
    assert fit.r2 > 0.99


def test_bench_sampling_reports_both_ops():
    rows = sampling.bench_sampling(8, 16, 2, 3, iters=1)
    assert [row.op for row in rows] == ["im2col", "deform_im2col"]
    assert all(row.ns_per_call > 0 for row in rows)
    assert rows[1].extra_bytes > 0
    csv = sampling.format_bench_csv(rows)
    assert csv.splitlines()[0] == "op,h,w,c,k,ns_per_call,extra_bytes"
    assert len(csv.splitlines()) == 3
    assert "deform_im2col / im2col latency" in sampling.format_bench_text(rows)


def test_bench_sampling_rejects_zero_sizes():
    with pytest.raises(errors.ShapeError):
        sampling.bench_sampling(0, 16, 2, 3)
