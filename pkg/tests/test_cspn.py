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

from odecnn import cspn
from odecnn import errors
from odecnn.tensor import make_rng


def test_uniform_affinities():
    field = cspn.normalize_affinity(np.ones((8, 2, 4)))
    np.testing.assert_array_equal(field.kappa, np.full((1, 8, 2, 4), 0.125))
    np.testing.assert_array_equal(field.kappa0, np.zeros((1, 1, 2, 4)))


def test_opposite_affinities_cancel():
    raw = np.zeros((1, 8, 1, 1))
    raw[0, 0], raw[0, 1] = 2.0, -2.0
    field = cspn.normalize_affinity(raw)
    assert field.kappa[0, :, 0, 0].tolist() == [0.5, -0.5, 0, 0, 0, 0, 0, 0]
    assert field.kappa0[0, 0, 0, 0] == 1.0


def test_zero_affinities_are_identity():
    field = cspn.normalize_affinity(np.zeros((1, 8, 2, 4)))
    assert field.dead.all()
    assert not field.kappa.any()
    assert (field.kappa0 == 1).all()


def test_normalized_affinities_are_bounded():
    field = cspn.normalize_affinity(make_rng(0).standard_normal((2, 8, 4, 8)))
    np.testing.assert_allclose(np.abs(field.kappa).sum(axis=1), 1.0)


def test_affinity_invariants_over_many_pixels():
    raw = make_rng(7).standard_normal((1, 8, 100, 1000))
    raw[:, :, :10] = 0.0
    raw[:, :, 10:20] = -np.abs(raw[:, :, 10:20])
    field = cspn.normalize_affinity(raw)
    abs_sum = np.abs(field.kappa).sum(axis=1)
    assert np.all(abs_sum <= 1.0 + 1e-12)
    np.testing.assert_allclose(abs_sum[:, 10:], 1.0, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(field.kappa0, 1.0 - field.kappa.sum(axis=1, keepdims=True))
    assert np.all(field.kappa0[:, :, :10] == 1.0)
    np.testing.assert_allclose(field.kappa0[:, :, 10:20], 2.0, rtol=0, atol=1e-12)


def test_affinity_channel_count_must_be_k2_minus_1():
    with pytest.raises(errors.ShapeError):
        cspn.normalize_affinity(np.ones((1, 7, 2, 4)))


def test_identity_propagation_returns_h0():
    rng = make_rng(1)
    h0 = rng.uniform(1, 2, (1, 1, 4, 8))
    h_tau = rng.uniform(1, 2, (1, 1, 4, 8))
    field = cspn.normalize_affinity(np.zeros((1, 8, 4, 8)))
    out = cspn.propagation_step(h_tau, h0, field, cspn.neighbor_grid(cspn.CspnVariant.CSPN, 4, 8))
    np.testing.assert_array_equal(out, h0)


def _loop_step(h_tau, h0, kappa, kappa0):
    n, _, h, w = h_tau.shape
    taps = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]
    out = np.empty_like(h0)
    for b in range(n):
        for i in range(h):
            for j in range(w):
                total = kappa0[b, 0, i, j] * h0[b, 0, i, j]
                for tap, (dy, dx) in enumerate(taps):
                    row, col = i + dy, j + dx
                    # across a pole the neighbour lies half a turn away
                    if row < 0:
                        row, col = -1 - row, col + w // 2
                    elif row >= h:
                        row, col = 2 * h - 1 - row, col + w // 2
                    total += kappa[b, tap, i, j] * h_tau[b, 0, row, col % w]
                out[b, 0, i, j] = total
    return out


def test_propagation_step_matches_neighbour_loop(float64):
    rng = make_rng(8)
    h0 = rng.uniform(1, 5, (2, 1, 6, 8))
    h_tau = rng.uniform(1, 5, h0.shape)
    field = cspn.normalize_affinity(rng.standard_normal((2, 8, 6, 8)))
    out = cspn.propagation_step(h_tau, h0, field, cspn.neighbor_grid(cspn.CspnVariant.CSPN, 6, 8))
    np.testing.assert_allclose(out, _loop_step(h_tau, h0, field.kappa, field.kappa0), rtol=0, atol=1e-12)


def test_propagation_step_shape_mismatch():
    field = cspn.normalize_affinity(np.ones((1, 8, 4, 8)))
    grid = cspn.neighbor_grid(cspn.CspnVariant.CSPN, 4, 8)
    with pytest.raises(errors.ShapeError):
        cspn.propagation_step(np.ones((1, 1, 4, 8)), np.ones((1, 1, 2, 4)), field, grid)


def test_replacement_step():
    h = np.full((1, 1, 2, 4), 3.0)
    full = cspn.SensorDepth(np.full((1, 1, 2, 4), 2.0))
    empty = cspn.SensorDepth(np.zeros((1, 1, 2, 4)))
    np.testing.assert_array_equal(cspn.replacement_step(h, full), full.dp)
    np.testing.assert_array_equal(cspn.replacement_step(h, empty), h)


def test_sensor_depth_checks_mask():
    dp = np.zeros((1, 2, 4))
    dp[0, 0, 0] = 1.5
    sensor = cspn.SensorDepth(dp)
    assert sensor.dp.shape == (1, 1, 2, 4)
    assert sensor.coverage == pytest.approx(1 / 8)
    with pytest.raises(errors.SensorError):
        cspn.SensorDepth(dp, mask=np.ones((1, 2, 4)))
    with pytest.raises(errors.SensorError):
        cspn.SensorDepth(-dp)


def test_single_identity_iteration_with_empty_mask():
    h0 = make_rng(2).uniform(1, 2, (1, 1, 4, 8))
    config = cspn.PropagationConfig(iterations=1, variant=cspn.CspnVariant.CSPN)
    out = cspn.run_cspn(h0, np.zeros((1, 8, 4, 8)), cspn.SensorDepth(np.zeros((1, 1, 4, 8))), config)
    np.testing.assert_array_equal(out, h0)


@pytest.mark.parametrize("variant", list(cspn.CspnVariant))
def test_sensor_pixels_survive_propagation_exactly(variant):
    rng = make_rng(3)
    h0 = rng.uniform(1, 5, (2, 1, 8, 16))
    dp = rng.uniform(1, 5, h0.shape) * (rng.random(h0.shape) < 0.3)
    sensor = cspn.SensorDepth(dp)
    offsets = rng.uniform(-1, 1, (2, 16, 8, 16)) if variant is cspn.CspnVariant.D_CSPN else None
    config = cspn.PropagationConfig(iterations=4, variant=variant)
    out = cspn.run_cspn(h0, rng.standard_normal((2, 8, 8, 16)), sensor, config, offsets)
    assert np.array_equal(out[sensor.mask], dp[sensor.mask])


@pytest.mark.parametrize("variant", list(cspn.CspnVariant))
def test_nonnegative_affinities_keep_depth_in_range(float64, variant):
    rng = make_rng(9)
    h0 = rng.uniform(1, 5, (2, 1, 8, 16))
    dp = rng.uniform(0.5, 8, h0.shape) * (rng.random(h0.shape) < 0.2)
    sensor = cspn.SensorDepth(dp)
    raw = np.abs(rng.standard_normal((2, 8, 8, 16)))
    raw[:, :, 0] = 0.0
    offsets = rng.uniform(-2, 2, (2, 16, 8, 16)) if variant is cspn.CspnVariant.D_CSPN else None
    out = cspn.run_cspn(h0, raw, sensor, cspn.PropagationConfig(iterations=6, variant=variant), offsets)
    low = min(h0.min(), dp[sensor.mask].min())
    high = max(h0.max(), dp[sensor.mask].max())
    assert low - 1e-12 <= out.min() and out.max() <= high + 1e-12


def test_zero_offsets_reduce_d_cspn_to_ig_cspn():
    rng = make_rng(4)
    h0 = rng.uniform(1, 5, (1, 1, 8, 16))
    raw = rng.standard_normal((1, 8, 8, 16))
    sensor = cspn.SensorDepth(np.zeros_like(h0))
    ig = cspn.run_cspn(h0, raw, sensor, cspn.PropagationConfig(iterations=3, variant=cspn.CspnVariant.IG_CSPN))
    d = cspn.run_cspn(
        h0, raw, sensor, cspn.PropagationConfig(iterations=3, variant=cspn.CspnVariant.D_CSPN), np.zeros((1, 16, 8, 16))
    )
    np.testing.assert_allclose(d, ig, atol=1e-12)


def test_ig_cspn_matches_cspn_at_equator():
    rng = make_rng(5)
    h, w = 256, 512
    cols = np.arange(w)[None, :] * (2 * np.pi / w)
    rows = np.arange(h)[:, None] * (np.pi / h)
    h0 = (2.0 + np.sin(cols) * np.cos(rows))[None, None]
    raw = rng.standard_normal((1, 8, h, w))
    sensor = cspn.SensorDepth(np.zeros_like(h0))
    ig = cspn.run_cspn(h0, raw, sensor, cspn.PropagationConfig(iterations=1, variant=cspn.CspnVariant.IG_CSPN))
    planar = cspn.run_cspn(h0, raw, sensor, cspn.PropagationConfig(iterations=1, variant=cspn.CspnVariant.CSPN))
    equator = slice(h // 2 - 2, h // 2 + 2)
    np.testing.assert_allclose(ig[..., equator, :], planar[..., equator, :], atol=1e-3)


def test_offsets_only_for_d_cspn():
    h0 = np.ones((1, 1, 4, 8))
    sensor = cspn.SensorDepth(np.zeros_like(h0))
    with pytest.raises(errors.ShapeError):
        cspn.run_cspn(h0, np.ones((1, 8, 4, 8)), sensor, cspn.PropagationConfig(variant=cspn.CspnVariant.D_CSPN))
    with pytest.raises(errors.ShapeError):
        cspn.run_cspn(
            h0,
            np.ones((1, 8, 4, 8)),
            sensor,
            cspn.PropagationConfig(variant=cspn.CspnVariant.CSPN),
            np.zeros((1, 16, 4, 8)),
        )


@pytest.mark.parametrize(
    "config",
    [cspn.PropagationConfig(k=2), cspn.PropagationConfig(iterations=0), cspn.PropagationConfig(offset_cap=0)],
)
def test_invalid_propagation_configs(config):
    with pytest.raises(errors.ConfigError):
        config.validate()


def test_backward_gives_zero_gradient_through_sensor_pixels():
    rng = make_rng(6)
    h0 = rng.uniform(1, 5, (1, 1, 4, 8))
    sensor = cspn.SensorDepth(np.where(rng.random(h0.shape) < 0.5, 2.0, 0.0))
    layer = cspn.Cspn(cspn.PropagationConfig(iterations=2, variant=cspn.CspnVariant.CSPN))
    layer.forward(h0, rng.standard_normal((1, 8, 4, 8)), sensor)
    grads = layer.backward(np.where(sensor.mask, 1.0, 0.0))
    assert not grads.h0.any()
    assert not grads.raw_affinity.any()
    assert grads.offsets is None
