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
import math

import numpy as np
import pytest

from odecnn import errors
from odecnn import sphere


def test_pixel_to_sphere_corner():
    grid = sphere.EquirectGrid(2, 4)
    coord = sphere.pixel_to_sphere(grid, 0, 0)
    assert coord.phi == pytest.approx(math.pi / 4)
    assert coord.theta == pytest.approx(-3 * math.pi / 4)


def test_row_zero_is_north():
    grid = sphere.EquirectGrid(8, 16)
    assert sphere.pixel_to_sphere(grid, 0, 3).phi > 0
    assert sphere.pixel_to_sphere(grid, 7, 3).phi < 0


def test_pixel_sphere_round_trip():
    grid = sphere.EquirectGrid(16, 32)
    ii, jj = np.meshgrid(np.arange(16), np.arange(32), indexing="ij")
    rows, cols = sphere.sphere_to_pixel(grid, sphere.pixel_to_sphere(grid, ii, jj))
    np.testing.assert_allclose(rows, ii, atol=1e-12)
    np.testing.assert_allclose(cols, jj, atol=1e-12)


@pytest.mark.parametrize(("h", "w"), [(4, 4), (0, 0), (3, 7)])
def test_grid_needs_two_to_one(h, w):
    with pytest.raises(errors.ShapeError):
        sphere.EquirectGrid(h, w)


def test_inverse_gnomonic_axes():
    origin = sphere.SphereCoord(0.0, 0.0)
    north = sphere.inverse_gnomonic(origin, sphere.TangentCoord(0.0, 1.0))
    east = sphere.inverse_gnomonic(origin, sphere.TangentCoord(1.0, 0.0))
    assert north.phi == pytest.approx(math.pi / 4)
    assert north.theta == pytest.approx(0.0, abs=1e-15)
    assert east.phi == pytest.approx(0.0, abs=1e-15)
    assert east.theta == pytest.approx(math.pi / 4)


def test_inverse_gnomonic_tangent_point_identity():
    coord = sphere.inverse_gnomonic(sphere.SphereCoord(0.3, 1.1), sphere.TangentCoord(0.0, 0.0))
    assert (coord.phi, coord.theta) == (0.3, 1.1)


def test_forward_gnomonic_round_trip():
    rng = np.random.default_rng(1)
    t_point = sphere.SphereCoord(rng.uniform(-1.2, 1.2, 1000), rng.uniform(-3, 3, 1000))
    s = sphere.TangentCoord(rng.uniform(-1, 1, 1000), rng.uniform(-1, 1, 1000))
    back = sphere.forward_gnomonic(t_point, sphere.inverse_gnomonic(t_point, s))
    np.testing.assert_allclose(back.x, s.x, atol=1e-9)
    np.testing.assert_allclose(back.y, s.y, atol=1e-9)


def test_forward_gnomonic_identity_and_domain():
    t_point = sphere.SphereCoord(0.2, -0.4)
    assert sphere.forward_gnomonic(t_point, t_point) == pytest.approx((0.0, 0.0), abs=1e-15)
    with pytest.raises(errors.ProjectionError):
        sphere.forward_gnomonic(sphere.SphereCoord(0.0, 0.0), sphere.SphereCoord(0.0, math.pi / 2))


def test_gnomonic_distance_is_arctan_of_radius():
    rng = np.random.default_rng(2)
    t_point = sphere.SphereCoord(rng.uniform(-1.4, 1.4, 40), rng.uniform(-3, 3, 40))
    s = sphere.TangentCoord(rng.uniform(-2, 2, 40), rng.uniform(-2, 2, 40))
    distance = sphere.great_circle_distance(t_point, sphere.inverse_gnomonic(t_point, s))
    np.testing.assert_allclose(distance, np.arctan(np.hypot(s.x, s.y)), atol=1e-9)


def test_great_circle_distance():
    assert sphere.great_circle_distance(
        sphere.SphereCoord(0.0, 0.0), sphere.SphereCoord(0.0, math.pi / 2)
    ) == pytest.approx(math.pi / 2)
    assert sphere.great_circle_distance(
        sphere.SphereCoord(math.pi / 2, 0.3), sphere.SphereCoord(math.pi / 2, -2.0)
    ) == pytest.approx(0.0, abs=1e-12)


def test_inverse_gnomonic_jacobian_matches_finite_differences():
    t_point = sphere.SphereCoord(0.7, -0.2)
    x, y, h = 0.3, -0.25, 1e-6
    jac = sphere.inverse_gnomonic_jacobian(t_point, sphere.TangentCoord(x, y))

    def at(dx, dy):
        return sphere.inverse_gnomonic(t_point, sphere.TangentCoord(x + dx, y + dy))

    dphi_dx = (at(h, 0).phi - at(-h, 0).phi) / (2 * h)
    dphi_dy = (at(0, h).phi - at(0, -h).phi) / (2 * h)
    dtheta_dx = (at(h, 0).theta - at(-h, 0).theta) / (2 * h)
    dtheta_dy = (at(0, h).theta - at(0, -h).theta) / (2 * h)
    np.testing.assert_allclose([float(v) for v in jac], [dphi_dx, dphi_dy, dtheta_dx, dtheta_dy], atol=1e-6)


def test_ig_grid_k1_samples_itself():
    grid = sphere.ig_sampling_grid(sphere.EquirectGrid(8, 16), k=1)
    ii, jj = np.meshgrid(np.arange(8), np.arange(16), indexing="ij")
    np.testing.assert_allclose(grid.rows[0], ii, atol=1e-9)
    np.testing.assert_allclose(grid.cols[0], jj, atol=1e-9)


def test_ig_grid_is_planar_stencil_at_equator():
    grid = sphere.ig_sampling_grid(sphere.EquirectGrid(64, 128), k=3)
    i, j = 32, 40
    rows, cols = grid.rows[:, i, j], grid.cols[:, i, j]
    np.testing.assert_allclose(rows - i, [-1, -1, -1, 0, 0, 0, 1, 1, 1], atol=0.05)
    np.testing.assert_allclose(cols - j, [-1, 0, 1, -1, 0, 1, -1, 0, 1], atol=0.05)


def test_ig_grid_rejects_even_kernels():
    with pytest.raises(errors.ShapeError):
        sphere.ig_sampling_grid(sphere.EquirectGrid(8, 16), k=2)


def test_ig_grid_widens_near_poles():
    grid = sphere.ig_sampling_grid(sphere.EquirectGrid(32, 64), k=3)
    equator = np.ptp(grid.cols[:, 16, 20])
    polar = np.ptp(grid.cols[:, 1, 20])
    assert polar > 2 * equator


def test_fov_mask_front_view():
    grid = sphere.EquirectGrid(32, 64)
    mask = sphere.fov_mask(grid, sphere.PinholeFov.from_degrees(70, 60))
    assert mask.shape == (1, 1, 32, 64)
    assert set(np.unique(mask)) <= {0.0, 1.0}
    # theta = 0 sits between columns 31 and 32
    assert mask[0, 0, 16, 32] == 1
    assert mask[0, 0, 16, 0] == 0
    assert np.array_equal(mask[0, 0], mask[0, 0, ::-1])


def test_fov_mask_coverage_tracks_solid_angle():
    grid = sphere.EquirectGrid(128, 256)
    fov = sphere.PinholeFov.from_degrees(70, 60)
    mask = sphere.fov_mask(grid, fov)[0, 0]
    ii = np.arange(128)
    weights = np.cos(sphere.pixel_to_sphere(grid, ii, 0).phi)[:, None] * (math.pi / 128) * (2 * math.pi / 256)
    assert float((mask * weights).sum()) == pytest.approx(fov.solid_angle(), rel=0.05)


def test_fov_rejects_out_of_range_angles():
    with pytest.raises(errors.ConfigError):
        sphere.PinholeFov(math.pi, 1.0)


def test_normalize_longitude():
    assert sphere.normalize_longitude(math.pi) == pytest.approx(-math.pi)
    assert sphere.normalize_longitude(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
