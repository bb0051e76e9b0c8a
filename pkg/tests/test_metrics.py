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
from odecnn import metrics


def test_perfect_prediction():
    gt = np.array([[1.0, 2.0], [3.0, 4.0]])
    result = metrics.evaluate(gt, gt)
    assert result.abs_rel == result.sq_rel == result.rmse == result.rms_log == 0.0
    assert (result.delta1, result.delta2, result.delta3) == (100.0, 100.0, 100.0)


def test_known_values():
    gt = np.array([1.0, 2.0])
    pred = np.array([2.0, 2.0])
    result = metrics.evaluate(pred, gt)
    assert result.abs_rel == pytest.approx(0.5)
    assert result.sq_rel == pytest.approx(0.5)
    assert result.rmse == pytest.approx(np.sqrt(0.5))
    assert result.rms_log == pytest.approx(np.log(2.0) / np.sqrt(2.0))
    assert result.delta1 == 50.0
    assert result.delta3 == 50.0


def test_zero_ground_truth_is_ignored():
    result = metrics.evaluate(np.array([1.0, 5.0]), np.array([1.0, 0.0]))
    assert result.abs_rel == 0.0


def test_empty_mask_and_bad_depths():
    with pytest.raises(errors.MaskError):
        metrics.evaluate(np.ones(2), np.zeros(2))
    with pytest.raises(errors.MaskError):
        metrics.evaluate(np.array([0.0, 1.0]), np.ones(2))
    with pytest.raises(errors.ShapeError):
        metrics.evaluate(np.ones(2), np.ones(3))


def test_accumulator_averages_per_image():
    acc = metrics.MetricAccumulator()
    gt = np.ones((2, 1, 2, 2))
    pred = gt.copy()
    pred[1] *= 2.0
    acc.add(pred, gt)
    assert len(acc) == 2
    assert acc.mean().abs_rel == pytest.approx(0.5)
    assert acc.mean().delta1 == pytest.approx(50.0)


def test_empty_accumulator():
    with pytest.raises(errors.MaskError):
        metrics.MetricAccumulator().mean()


def test_formats():
    row = metrics.DepthMetrics(0.1, 0.2, 0.3, 0.4, 90.0, 95.0, 99.0)
    assert metrics.DepthMetrics.csv_header().split(",") == ["abs_rel", "sq_rel", "rmse", "rms_log", "d1", "d2", "d3"]
    assert row.as_csv().startswith("0.100000,0.200000")
    assert "Abs Rel" in row.format_table()


def test_single_pixel_twice_too_far():
    result = metrics.evaluate(np.array([2.0]), np.array([1.0]))
    assert (result.abs_rel, result.sq_rel, result.rmse) == (1.0, 1.0, 1.0)
    assert result.rms_log == pytest.approx(0.6931, abs=1e-4)
    assert (result.delta1, result.delta2, result.delta3) == (0.0, 0.0, 0.0)


def test_ratio_on_the_threshold_is_outside_it():
    gt = np.random.default_rng(0).uniform(0.5, 10.0, 10_000)
    result = metrics.evaluate(1.25 * gt, gt)
    assert result.delta1 == 0.0
    assert result.delta2 == result.delta3 == 100.0
    inverse = metrics.evaluate(gt, 1.25 * gt)
    assert inverse.delta1 == 0.0


@pytest.mark.parametrize("alpha", [0.5, 0.9, 1.1, 3.0])
def test_uniform_scale_gives_abs_rel(alpha):
    gt = np.random.default_rng(1).uniform(0.5, 10.0, (8, 16))
    assert metrics.evaluate(alpha * gt, gt).abs_rel == pytest.approx(abs(alpha - 1.0), abs=1e-12)


def _loop_metrics(pred, gt):
    n = 0
    abs_rel = sq_rel = sq = sq_log = 0.0
    hits = [0, 0, 0]
    for d, g in zip(pred.ravel().tolist(), gt.ravel().tolist()):
        if g <= 0:
            continue
        n += 1
        abs_rel += abs(d - g) / g
        sq_rel += (d - g) ** 2 / g
        sq += (d - g) ** 2
        sq_log += (np.log(d) - np.log(g)) ** 2
        for i, threshold in enumerate(metrics.THRESHOLDS):
            hits[i] += max(d / g, g / d) < threshold
    return [abs_rel / n, sq_rel / n, (sq / n) ** 0.5, (sq_log / n) ** 0.5] + [100.0 * h / n for h in hits]


def test_agrees_with_per_pixel_loop():
    rng = np.random.default_rng(2)
    gt = rng.uniform(0.3, 20.0, (32, 64))
    gt[rng.random(gt.shape) < 0.1] = 0.0
    pred = gt * rng.uniform(0.5, 2.0, gt.shape) + (gt == 0)

    result = metrics.evaluate(pred, gt)

    np.testing.assert_allclose(list(result), _loop_metrics(pred, gt), rtol=1e-12, atol=1e-12)


def test_permutation_invariance_and_monotone_deltas():
    rng = np.random.default_rng(3)
    gt = rng.uniform(0.5, 5.0, 500)
    pred = gt * rng.uniform(0.6, 1.6, 500)
    order = rng.permutation(500)
    a, b = metrics.evaluate(pred, gt), metrics.evaluate(pred[order], gt[order])
    np.testing.assert_allclose(list(a), list(b), rtol=1e-12)
    assert a.delta1 <= a.delta2 <= a.delta3
