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
"""
Coordinate systems of the equirectangular panorama and the gnomonic mappings between the sphere and
its local tangent planes.

Conventions
-----------
- Latitude ``phi`` in ``[-pi/2, pi/2]`` (north positive), longitude ``theta`` in ``[-pi, pi)``.
- Pixel centres: row ``i`` sits at ``phi = pi/2 - (i + 0.5) * pi / h`` and column ``j`` at
  ``theta = -pi + (j + 0.5) * 2 * pi / w``. Row 0 is the northernmost row.
- Tangent plane: ``x`` points east (increasing column), ``y`` points north (decreasing row), one unit is
  the distance from the sphere centre to the tangent point.
- Cartesian: ``(cos phi cos theta, cos phi sin theta, sin phi)``, so ``theta = 0`` looks down ``+x``.

All functions accept scalars or broadcastable numpy arrays.
"""
from __future__ import annotations
import math
import typing as t

import numpy as np

from odecnn.errors import ConfigError, ProjectionError, ShapeError

if t.TYPE_CHECKING:
    from odecnn.sampling import SamplingGrid

__all__: list[str] = [
    "SphereCoord",
    "TangentCoord",
    "EquirectGrid",
    "PinholeFov",
    "normalize_longitude",
    "pixel_to_sphere",
    "sphere_to_pixel",
    "unit_vectors",
    "great_circle_distance",
    "inverse_gnomonic",
    "inverse_gnomonic_jacobian",
    "forward_gnomonic",
    "tangent_tap_offsets",
    "project_tangent_taps",
    "ig_sampling_grid",
    "fov_mask",
]

_SINGULAR_RHO = 1e-12
_TWO_PI = 2.0 * math.pi


class SphereCoord(t.NamedTuple):
    """A point on the unit sphere, ``phi`` latitude and ``theta`` longitude in radians."""

    phi: t.Any
    theta: t.Any


class TangentCoord(t.NamedTuple):
    """A point on the tangent plane of a sphere point, dimensionless."""

    x: t.Any
    y: t.Any


class EquirectGrid:
    """
    A full equirectangular panorama of ``h`` rows and ``w == 2h`` columns.

    Parameters
    ----------
    h : :obj:`int`
        Number of rows.
    w : :obj:`int`
        Number of columns, must be exactly ``2 * h``.

    Raises
    ------
    :obj:`~.errors.ShapeError`
        If the dimensions are not a 2:1 panorama.
    """

    __slots__ = ("_h", "_w")

    def __init__(self, h: int, w: int) -> None:
        if int(h) < 1 or int(w) != 2 * int(h):
            raise ShapeError(f"An equirectangular grid needs w == 2h with h >= 1, got h={h}, w={w}.")
        self._h: int = int(h)
        self._w: int = int(w)

    @property
    def h(self) -> int:
        return self._h

    @property
    def w(self) -> int:
        return self._w

    @property
    def pitch(self) -> float:
        """The angular size of one pixel, ``pi / h`` radians."""
        return math.pi / self._h

    def __eq__(self, other: object) -> bool:
        return isinstance(other, EquirectGrid) and (self._h, self._w) == (other._h, other._w)

    def __hash__(self) -> int:
        return hash((self._h, self._w))

    def __repr__(self) -> str:
        return f"EquirectGrid(h={self._h}, w={self._w})"


class PinholeFov:
    """
    The frustum of a pinhole depth sensor looking out of the panorama centre.

    Parameters
    ----------
    hfov : :obj:`float`
        Horizontal field of view in radians, in ``(0, pi)``.
    vfov : :obj:`float`
        Vertical field of view in radians, in ``(0, pi)``.
    center : :obj:`SphereCoord`
        The optical axis. Defaults to the front view ``(0, 0)``.
    """

    __slots__ = ("_hfov", "_vfov", "_center")

    def __init__(self, hfov: float, vfov: float, center: SphereCoord = SphereCoord(0.0, 0.0)) -> None:
        for name, value in (("hfov", hfov), ("vfov", vfov)):
            if not 0.0 < float(value) < math.pi:
                raise ConfigError(f"{name} must lie strictly between 0 and pi radians, got {value}.")
        self._hfov: float = float(hfov)
        self._vfov: float = float(vfov)
        self._center: SphereCoord = SphereCoord(float(center.phi), float(center.theta))

    @classmethod
    def from_degrees(cls, hfov: float = 70.0, vfov: float = 60.0, center: t.Optional[SphereCoord] = None) -> PinholeFov:
        return cls(math.radians(hfov), math.radians(vfov), center if center is not None else SphereCoord(0.0, 0.0))

    @property
    def hfov(self) -> float:
        return self._hfov

    @property
    def vfov(self) -> float:
        return self._vfov

    @property
    def center(self) -> SphereCoord:
        return self._center

    def solid_angle(self) -> float:
        """Closed-form solid angle of the rectangular frustum, in steradians."""
        return 4.0 * math.asin(math.sin(self._hfov / 2.0) * math.sin(self._vfov / 2.0))

    def __repr__(self) -> str:
        return (
            f"PinholeFov(hfov={math.degrees(self._hfov):.2f}deg, vfov={math.degrees(self._vfov):.2f}deg, "
            f"center={self._center})"
        )


def _unwrap(value: np.ndarray) -> t.Any:
    return float(value) if np.ndim(value) == 0 else value


def normalize_longitude(theta: t.Any) -> t.Any:
    wrapped = np.mod(np.asarray(theta, dtype=np.float64) + math.pi, _TWO_PI) - math.pi
    # mod can round up to exactly 2*pi
    wrapped = np.where(wrapped >= math.pi, wrapped - _TWO_PI, wrapped)
    return _unwrap(wrapped)


def pixel_to_sphere(grid: EquirectGrid, i: t.Any, j: t.Any) -> SphereCoord:
    """
    Map (possibly fractional) pixel coordinates to the sphere. Written as an odd function of the
    distance to the centre row so that mirrored rows map to exactly negated latitudes.
    """
    rows = np.asarray(i, dtype=np.float64)
    cols = np.asarray(j, dtype=np.float64)
    phi = (grid.h - 1 - 2.0 * rows) * (math.pi / (2 * grid.h))
    theta = (2.0 * cols + 1 - grid.w) * (math.pi / grid.w)
    return SphereCoord(_unwrap(phi), _unwrap(theta))


def sphere_to_pixel(grid: EquirectGrid, coord: SphereCoord) -> tuple[t.Any, t.Any]:
    """Inverse of :obj:`pixel_to_sphere`, returns fractional ``(row, col)`` without wrapping."""
    phi = np.asarray(coord.phi, dtype=np.float64)
    theta = np.asarray(coord.theta, dtype=np.float64)
    rows = (grid.h - 1 - phi * (2 * grid.h / math.pi)) / 2.0
    cols = (theta * (grid.w / math.pi) + grid.w - 1) / 2.0
    return _unwrap(rows), _unwrap(cols)


def unit_vectors(coord: SphereCoord) -> np.ndarray:
    phi = np.asarray(coord.phi, dtype=np.float64)
    theta = np.asarray(coord.theta, dtype=np.float64)
    cos_phi = np.cos(phi)
    return np.stack(np.broadcast_arrays(cos_phi * np.cos(theta), cos_phi * np.sin(theta), np.sin(phi)), axis=-1)


def great_circle_distance(a: SphereCoord, b: SphereCoord) -> t.Any:
    """
    Angular distance in radians. Equal to the arccos of the clamped dot product of the unit vectors,
    evaluated as ``atan2(|a x b|, a . b)`` which keeps full precision for tiny angles.
    """
    va, vb = np.broadcast_arrays(unit_vectors(a), unit_vectors(b))
    cross = np.linalg.norm(np.cross(va, vb), axis=-1)
    dot = np.clip(np.sum(va * vb, axis=-1), -1.0, 1.0)
    return _unwrap(np.arctan2(cross, dot))


def inverse_gnomonic(t_point: SphereCoord, s: TangentCoord) -> SphereCoord:
    """
    Map a tangent-plane point back onto the sphere.

    Parameters
    ----------
    t_point : :obj:`SphereCoord`
        The tangent point.
    s : :obj:`TangentCoord`
        Coordinates on the plane tangent at ``t_point``.

    Returns
    -------
    :obj:`SphereCoord`
        The sphere point, longitude normalised into ``[-pi, pi)``. When ``|s| < 1e-12`` the tangent
        point itself is returned unchanged.
    """
    tphi = np.asarray(t_point.phi, dtype=np.float64)
    ttheta = np.asarray(t_point.theta, dtype=np.float64)
    x = np.asarray(s.x, dtype=np.float64)
    y = np.asarray(s.y, dtype=np.float64)

    rho = np.hypot(x, y)
    singular = rho < _SINGULAR_RHO
    rho = np.where(singular, 1.0, rho)
    nu = np.arctan(rho)
    sin_nu, cos_nu = np.sin(nu), np.cos(nu)
    sin_t, cos_t = np.sin(tphi), np.cos(tphi)

    z = cos_nu * sin_t + y * sin_nu * cos_t / rho
    num = x * sin_nu
    den = rho * cos_t * cos_nu - y * sin_t * sin_nu
    phi = np.arctan2(z, np.hypot(num, den) / rho)
    theta = normalize_longitude(ttheta + np.arctan2(num, den))

    phi = np.where(singular, tphi, phi)
    theta = np.where(singular, ttheta, theta)
    return SphereCoord(_unwrap(phi), _unwrap(theta))


def inverse_gnomonic_jacobian(t_point: SphereCoord, s: TangentCoord) -> tuple[np.ndarray, ...]:
    """
    Partial derivatives of :obj:`inverse_gnomonic` with respect to the tangent coordinates.

    Returns
    -------
    Tuple[:obj:`numpy.ndarray`, ...]
        ``(dphi/dx, dphi/dy, dtheta/dx, dtheta/dy)``.
    """
    tphi = np.asarray(t_point.phi, dtype=np.float64)
    x = np.asarray(s.x, dtype=np.float64)
    y = np.asarray(s.y, dtype=np.float64)
    sin_t, cos_t = np.sin(tphi), np.cos(tphi)

    # unnormalised ray c + x*east + y*north in a frame rotated to the tangent longitude
    px = cos_t - y * sin_t
    py = x
    pz = sin_t + y * cos_t
    r2 = np.maximum(px * px + py * py, _SINGULAR_RHO**2)
    r = np.sqrt(r2)
    big_r2 = r2 + pz * pz

    dtheta_dx = px / r2
    dtheta_dy = py * sin_t / r2
    dphi_dx = -pz * py / (r * big_r2)
    dphi_dy = pz * px * sin_t / (r * big_r2) + r * cos_t / big_r2
    return tuple(np.broadcast_arrays(dphi_dx, dphi_dy, dtheta_dx, dtheta_dy))


def forward_gnomonic(t_point: SphereCoord, p: SphereCoord) -> TangentCoord:
    """
    Project a sphere point onto the plane tangent at ``t_point``.

    Raises
    ------
    :obj:`~.errors.ProjectionError`
        If any point is 90 degrees or more away from the tangent point.
    """
    tphi = np.asarray(t_point.phi, dtype=np.float64)
    ttheta = np.asarray(t_point.theta, dtype=np.float64)
    pphi = np.asarray(p.phi, dtype=np.float64)
    ptheta = np.asarray(p.theta, dtype=np.float64)

    dtheta = ptheta - ttheta
    cos_c = np.sin(tphi) * np.sin(pphi) + np.cos(tphi) * np.cos(pphi) * np.cos(dtheta)
    if np.any(cos_c <= _SINGULAR_RHO):
        raise ProjectionError("The gnomonic projection is undefined at or beyond 90 degrees from the tangent point.")
    x = np.cos(pphi) * np.sin(dtheta) / cos_c
    y = (np.cos(tphi) * np.sin(pphi) - np.sin(tphi) * np.cos(pphi) * np.cos(dtheta)) / cos_c
    return TangentCoord(_unwrap(x), _unwrap(y))


def tangent_tap_offsets(k: int, step: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Tangent-plane offsets of a ``k x k`` stencil, taps in row-major ``(dy, dx)`` order.

    Returns
    -------
    Tuple[:obj:`numpy.ndarray`, :obj:`numpy.ndarray`]
        ``(x, y)`` arrays of length ``k * k``.
    """
    if k < 1 or k % 2 == 0:
        raise ShapeError(f"Kernel size must be odd and positive, got {k}.")
    radius = (k - 1) // 2
    dy, dx = np.meshgrid(np.arange(-radius, radius + 1), np.arange(-radius, radius + 1), indexing="ij")
    return dx.ravel() * float(step), -dy.ravel() * float(step)


def project_tangent_taps(
    grid: EquirectGrid, sx: np.ndarray, sy: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """
    Push tangent-plane taps through the inverse gnomonic projection of every pixel.

    Parameters
    ----------
    grid : :obj:`EquirectGrid`
        The panorama the taps are sampled from.
    sx, sy : :obj:`numpy.ndarray`
        Tangent coordinates broadcastable to ``(..., taps, h, w)``.

    Returns
    -------
    Tuple[:obj:`numpy.ndarray`, :obj:`numpy.ndarray`]
        Fractional ``(row, col)``. Columns are wrapped into ``[0, w)``; rows stay within
        ``[-0.5, h - 0.5]`` and pole crossings are resolved by the sampler.
    """
    ii, jj = np.meshgrid(np.arange(grid.h), np.arange(grid.w), indexing="ij")
    centres = pixel_to_sphere(grid, ii, jj)
    # materialise the full shape so every caller evaluates the same contiguous layout
    shape = np.broadcast_shapes(np.shape(sx), np.shape(sy), (grid.h, grid.w))
    sx, sy, phi, theta = (
        np.ascontiguousarray(np.broadcast_to(np.asarray(a, dtype=np.float64), shape))
        for a in (sx, sy, centres.phi, centres.theta)
    )
    points = inverse_gnomonic(SphereCoord(phi, theta), TangentCoord(sx, sy))
    rows, cols = sphere_to_pixel(grid, points)
    cols = np.mod(cols, grid.w)
    cols = np.where(cols >= grid.w, cols - grid.w, cols)
    return np.asarray(rows, dtype=np.float64), np.asarray(cols, dtype=np.float64)


def ig_sampling_grid(grid: EquirectGrid, k: int = 3, step: t.Optional[float] = None) -> SamplingGrid:
    """
    Build the inverse-gnomonic sampling grid of a ``k x k`` kernel.

    Parameters
    ----------
    grid : :obj:`EquirectGrid`
        The resolution the grid samples.
    k : :obj:`int`
        Taps per side, odd.
    step : Optional[:obj:`float`]
        Tangent-plane spacing of the taps. Defaults to the angular pixel pitch ``pi / h``, so the
        grid degenerates to the ordinary stencil at the equator.
    """
    from odecnn.sampling import SamplingGrid, WrapPolicy

    if step is None:
        step = grid.pitch
    if step <= 0:
        raise ShapeError(f"Tangent step must be positive, got {step}.")
    sx, sy = tangent_tap_offsets(k, step)
    rows, cols = project_tangent_taps(grid, sx[:, None, None], sy[:, None, None])
    return SamplingGrid(rows, cols, k=k, policy=WrapPolicy.SPHERE, equirect=grid, tangent=(sx, sy))


def fov_mask(grid: EquirectGrid, fov: PinholeFov) -> np.ndarray:
    """
    Rasterise the pinhole frustum onto the panorama.

    Returns
    -------
    :obj:`numpy.ndarray`
        A ``1 x 1 x h x w`` array of zeros and ones, one where the pixel's ray lies inside the frustum.
    """
    ii, jj = np.meshgrid(np.arange(grid.h), np.arange(grid.w), indexing="ij")
    rays = unit_vectors(pixel_to_sphere(grid, ii, jj))

    cphi, ctheta = fov.center
    forward_axis = np.array([math.cos(cphi) * math.cos(ctheta), math.cos(cphi) * math.sin(ctheta), math.sin(cphi)])
    right_axis = np.array([-math.sin(ctheta), math.cos(ctheta), 0.0])
    up_axis = np.array([-math.sin(cphi) * math.cos(ctheta), -math.sin(cphi) * math.sin(ctheta), math.cos(cphi)])

    forward = rays @ forward_axis
    right = rays @ right_axis
    up = rays @ up_axis
    inside = (
        (forward > 0)
        & (np.abs(np.arctan2(right, forward)) <= fov.hfov / 2.0)
        & (np.abs(np.arctan2(up, forward)) <= fov.vfov / 2.0)
    )
    return inside.astype(np.float64)[None, None]
