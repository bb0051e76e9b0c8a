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
Differentiable sampling: bilinear interpolation with panorama-aware border policies, the integer
``im2col``/``col2im`` pair behind every convolution, and ``deform-im2col`` for fractional,
possibly learned, sampling grids.
"""
from __future__ import annotations
import enum
import logging
import time
import tracemalloc
import typing as t

import numpy as np

from odecnn.errors import NumericalError, ShapeError
from odecnn.sphere import (
    EquirectGrid,
    ig_sampling_grid,
    inverse_gnomonic_jacobian,
    pixel_to_sphere,
    project_tangent_taps,
    TangentCoord,
)
from odecnn.tensor import get_dtype, make_rng

__all__: list[str] = [
    "WrapPolicy",
    "PadMode",
    "OffsetMode",
    "SamplingGrid",
    "DeformedCoords",
    "TapRecord",
    "planar_sampling_grid",
    "BilinearSampler",
    "bilinear_sample",
    "im2col",
    "col2im",
    "conv_output_size",
    "DeformIm2col",
    "deform_im2col",
    "BenchRow",
    "LinearFit",
    "linear_fit",
    "bench_sampling",
    "bench_sweep",
    "format_bench_csv",
    "format_bench_text",
]

_LOGGER = logging.getLogger("odecnn.sampling")

ColumnBuffer = np.ndarray
"""An ``(n, c * taps, h_out * w_out)`` array of unfolded features."""


class WrapPolicy(str, enum.Enum):
    """How sampled indices outside the feature map are resolved."""

    SPHERE = "sphere"
    """Wrap longitude, reflect across the poles with a half-turn in longitude."""

    PANORAMA = "panorama"
    """Zero outside the rows, wrap the columns. The padding of planar panorama convolutions."""

    CLAMP = "clamp"
    """Clamp to the nearest border pixel, for planar images."""

    ZERO = "zero"
    """Zero outside the image in both directions."""


class PadMode(str, enum.Enum):
    ZERO = "zero"
    WRAP_HORIZONTAL = "wrap-horizontal"

    @property
    def policy(self) -> WrapPolicy:
        return WrapPolicy.ZERO if self is PadMode.ZERO else WrapPolicy.PANORAMA


class OffsetMode(str, enum.Enum):
    """Where learned offsets are added to a sampling grid."""

    TANGENT = "tangent"
    """Added to the tangent-plane taps before projection, channels ``(dx, dy)`` per tap."""

    PIXEL = "pixel"
    """Added to the projected pixel coordinates, channels ``(drow, dcol)`` per tap."""


class DeformedCoords(t.NamedTuple):
    rows: np.ndarray
    cols: np.ndarray
    unclipped: np.ndarray
    jacobian: t.Optional[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]


class TapRecord(t.NamedTuple):
    """One tap of a sampling grid at one output pixel, as printed by offset inspection."""

    tap: int
    tangent_x: float
    tangent_y: float
    delta_a: float
    delta_b: float
    row: float
    col: float


class SamplingGrid:
    """
    Fractional source coordinates for every output pixel and tap.

    Parameters
    ----------
    rows, cols : :obj:`numpy.ndarray`
        ``(taps, h, w)`` fractional source coordinates.
    k : :obj:`int`
        Taps per side of the stencil the grid came from. A grid holds ``k * k`` taps, or ``k * k - 1``
        when the centre tap was dropped.
    policy : :obj:`WrapPolicy`
        How out-of-range indices are resolved when sampling.
    equirect : Optional[:obj:`~.sphere.EquirectGrid`]
        The panorama an inverse-gnomonic grid was projected on, needed for tangent-plane deformation.
    tangent : Optional[Tuple[:obj:`numpy.ndarray`, :obj:`numpy.ndarray`]]
        The tangent-plane taps ``(x, y)`` the grid was projected from.
    """

    __slots__ = ("rows", "cols", "k", "policy", "equirect", "tangent")

    def __init__(
        self,
        rows: np.ndarray,
        cols: np.ndarray,
        *,
        k: int,
        policy: WrapPolicy = WrapPolicy.SPHERE,
        equirect: t.Optional[EquirectGrid] = None,
        tangent: t.Optional[tuple[np.ndarray, np.ndarray]] = None,
    ) -> None:
        rows = np.ascontiguousarray(rows, dtype=np.float64)
        cols = np.ascontiguousarray(cols, dtype=np.float64)
        if rows.ndim != 3 or rows.shape != cols.shape:
            raise ShapeError(f"Grid coordinates must be two equal (taps, h, w) arrays, got {rows.shape}, {cols.shape}.")
        if rows.shape[0] not in (k * k, k * k - 1):
            raise ShapeError(f"A k={k} grid must hold {k * k} or {k * k - 1} taps, got {rows.shape[0]}.")
        if not (np.all(np.isfinite(rows)) and np.all(np.isfinite(cols))):
            raise NumericalError("sampling grid coordinates")
        self.rows: np.ndarray = rows
        self.cols: np.ndarray = cols
        self.k: int = k
        self.policy: WrapPolicy = policy
        self.equirect: t.Optional[EquirectGrid] = equirect
        self.tangent: t.Optional[tuple[np.ndarray, np.ndarray]] = tangent

    @property
    def taps(self) -> int:
        return self.rows.shape[0]

    @property
    def height(self) -> int:
        return self.rows.shape[1]

    @property
    def width(self) -> int:
        return self.rows.shape[2]

    def without_center(self) -> SamplingGrid:
        """The same grid with the centre tap removed, the neighbourhood used by propagation."""
        if self.taps != self.k * self.k:
            return self
        keep = np.arange(self.taps) != self.taps // 2
        tangent = None if self.tangent is None else (self.tangent[0][keep], self.tangent[1][keep])
        return SamplingGrid(
            self.rows[keep], self.cols[keep], k=self.k, policy=self.policy, equirect=self.equirect, tangent=tangent
        )

    def deform(self, offsets: np.ndarray, mode: OffsetMode, cap: t.Optional[float] = None) -> DeformedCoords:
        """
        Apply per-pixel offsets of shape ``(n, 2 * taps, h, w)``.

        Offsets are clipped to ``[-cap, cap]`` first when a cap is given.
        """
        expected = (2 * self.taps, self.height, self.width)
        if offsets.ndim != 4 or offsets.shape[1:] != expected:
            raise ShapeError(f"Offsets must have shape (n, {expected[0]}, {expected[1]}, {expected[2]}), got {offsets.shape}.")
        offsets = offsets.astype(np.float64)
        if cap is not None:
            unclipped = np.abs(offsets) <= cap
            offsets = np.clip(offsets, -cap, cap)
        else:
            unclipped = np.ones(offsets.shape, dtype=bool)
        first, second = offsets[:, 0::2], offsets[:, 1::2]

        if mode is OffsetMode.PIXEL:
            return DeformedCoords(self.rows + first, self.cols + second, unclipped, None)

        if self.equirect is None or self.tangent is None:
            raise ShapeError("Tangent-plane offsets need a grid projected from tangent taps.")
        grid = self.equirect
        base_x = self.tangent[0][:, None, None]
        base_y = self.tangent[1][:, None, None]
        rows = np.empty(first.shape)
        cols = np.empty(first.shape)
        jac = tuple(np.empty(first.shape) for _ in range(4))
        ii, jj = np.meshgrid(np.arange(grid.h), np.arange(grid.w), indexing="ij")
        centres = pixel_to_sphere(grid, ii, jj)
        # one batch element at a time so each projection sees the same array layout as the base grid
        for n in range(offsets.shape[0]):
            sx = base_x + first[n]
            sy = base_y + second[n]
            rows[n], cols[n] = project_tangent_taps(grid, sx, sy)
            for target, value in zip(jac, inverse_gnomonic_jacobian(centres, TangentCoord(sx, sy))):
                target[n] = value
        dphi_dx, dphi_dy, dtheta_dx, dtheta_dy = jac
        row_scale = -grid.h / np.pi
        col_scale = grid.w / (2.0 * np.pi)
        jacobian = (row_scale * dphi_dx, row_scale * dphi_dy, col_scale * dtheta_dx, col_scale * dtheta_dy)
        return DeformedCoords(rows, cols, unclipped, jacobian)

    @staticmethod
    def deform_backward(grad_rows: np.ndarray, grad_cols: np.ndarray, coords: DeformedCoords) -> np.ndarray:
        """Chain coordinate gradients back to the offsets given to :obj:`deform`."""
        n, taps, h, w = grad_rows.shape
        grad = np.empty((n, 2 * taps, h, w))
        if coords.jacobian is None:
            grad[:, 0::2] = grad_rows
            grad[:, 1::2] = grad_cols
        else:
            drow_dx, drow_dy, dcol_dx, dcol_dy = coords.jacobian
            grad[:, 0::2] = grad_rows * drow_dx + grad_cols * dcol_dx
            grad[:, 1::2] = grad_rows * drow_dy + grad_cols * dcol_dy
        return grad * coords.unclipped

    def tap_table(
        self,
        i: int,
        j: int,
        offsets: t.Optional[np.ndarray] = None,
        mode: OffsetMode = OffsetMode.TANGENT,
        cap: t.Optional[float] = None,
    ) -> list[TapRecord]:
        """
        Describe every tap sampled by output pixel ``(i, j)``.

        Parameters
        ----------
        offsets : Optional[:obj:`numpy.ndarray`]
            ``(2 * taps, h, w)`` offsets of one image, or `None` for the undeformed grid.
        """
        if not (0 <= i < self.height and 0 <= j < self.width):
            raise ShapeError(f"Pixel ({i}, {j}) is outside a {self.height}x{self.width} grid.")
        if offsets is None:
            rows, cols = self.rows[:, i, j], self.cols[:, i, j]
            deltas = np.zeros((self.taps, 2))
        else:
            deltas = offsets[:, i, j].reshape(self.taps, 2).astype(np.float64)
            if cap is not None:
                deltas = np.clip(deltas, -cap, cap)
            coords = self.deform(offsets[None], mode, cap)
            rows, cols = coords.rows[0, :, i, j], coords.cols[0, :, i, j]
        if self.tangent is not None:
            tx, ty = self.tangent
        else:
            tx = ty = np.full(self.taps, np.nan)
        return [
            TapRecord(tap, float(tx[tap]), float(ty[tap]), float(deltas[tap, 0]), float(deltas[tap, 1]),
                      float(rows[tap]), float(cols[tap]))
            for tap in range(self.taps)
        ]


def planar_sampling_grid(h: int, w: int, k: int, policy: WrapPolicy = WrapPolicy.PANORAMA) -> SamplingGrid:
    """The integer ``k x k`` stencil around every pixel, the grid of an ordinary convolution."""
    if k < 1 or k % 2 == 0:
        raise ShapeError(f"Kernel size must be odd and positive, got {k}.")
    radius = (k - 1) // 2
    dy, dx = np.meshgrid(np.arange(-radius, radius + 1), np.arange(-radius, radius + 1), indexing="ij")
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    rows = ii[None] + dy.ravel()[:, None, None]
    cols = jj[None] + dx.ravel()[:, None, None]
    return SamplingGrid(rows, cols, k=k, policy=policy)


def _resolve(
    rows: np.ndarray, cols: np.ndarray, h: int, w: int, policy: WrapPolicy
) -> tuple[np.ndarray, np.ndarray, t.Optional[np.ndarray]]:
    if policy is WrapPolicy.SPHERE:
        north = rows < 0
        south = rows >= h
        rows = np.where(north, -1 - rows, rows)
        rows = np.where(south, 2 * h - 1 - rows, rows)
        cols = cols + np.where(north | south, w // 2, 0)
        return np.clip(rows, 0, h - 1), np.mod(cols, w), None
    if policy is WrapPolicy.PANORAMA:
        valid = (rows >= 0) & (rows < h)
        return np.clip(rows, 0, h - 1), np.mod(cols, w), valid
    if policy is WrapPolicy.CLAMP:
        return np.clip(rows, 0, h - 1), np.clip(cols, 0, w - 1), None
    valid = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    return np.clip(rows, 0, h - 1), np.clip(cols, 0, w - 1), valid


def _scatter_add(flat_index: np.ndarray, values: np.ndarray, size: int, dtype: np.dtype) -> np.ndarray:
    out = np.empty((size, values.shape[1]), dtype=dtype)
    for channel in range(values.shape[1]):
        out[:, channel] = np.bincount(flat_index, weights=values[:, channel], minlength=size)
    return out


class BilinearSampler:
    """
    Bilinear sampling of ``(n, c, h, w)`` features at fractional coordinates.

    At integer coordinates the derivative with respect to the coordinate is the right-sided one.
    """

    __slots__ = ("_policy", "_cache")

    def __init__(self, policy: WrapPolicy = WrapPolicy.SPHERE) -> None:
        self._policy: WrapPolicy = policy
        self._cache: t.Optional[dict[str, t.Any]] = None

    def forward(self, features: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """
        Parameters
        ----------
        features : :obj:`numpy.ndarray`
            ``(n, c, h, w)`` features.
        rows, cols : :obj:`numpy.ndarray`
            ``(taps, h_out, w_out)`` or ``(n, taps, h_out, w_out)`` coordinates.

        Returns
        -------
        :obj:`numpy.ndarray`
            ``(n, c, taps, h_out, w_out)`` samples.
        """
        if not (np.all(np.isfinite(rows)) and np.all(np.isfinite(cols))):
            raise NumericalError("bilinear sampling coordinates")
        n, _, h, w = features.shape
        rows = np.broadcast_to(rows, (n,) + rows.shape[-3:])
        cols = np.broadcast_to(cols, (n,) + cols.shape[-3:])

        r0f, c0f = np.floor(rows), np.floor(cols)
        fr, fc = rows - r0f, cols - c0f
        r0, c0 = r0f.astype(np.int64), c0f.astype(np.int64)
        batch = np.broadcast_to(np.arange(n).reshape(n, 1, 1, 1), rows.shape)

        corners = []
        for dr, dc in ((0, 0), (0, 1), (1, 0), (1, 1)):
            r, c, valid = _resolve(r0 + dr, c0 + dc, h, w, self._policy)
            values = features[batch, :, r, c]
            if valid is not None:
                values = values * valid[..., None]
            corners.append((r, c, valid, values))

        dtype = features.dtype
        weights = [
            ((1 - fr) * (1 - fc)).astype(dtype),
            ((1 - fr) * fc).astype(dtype),
            (fr * (1 - fc)).astype(dtype),
            (fr * fc).astype(dtype),
        ]
        out = sum(wgt[..., None] * corner[3] for wgt, corner in zip(weights, corners))
        self._cache = {
            "shape": features.shape,
            "dtype": dtype,
            "batch": batch,
            "fr": fr.astype(dtype),
            "fc": fc.astype(dtype),
            "corners": corners,
            "weights": weights,
        }
        return np.ascontiguousarray(np.moveaxis(out, -1, 1))

    def backward(self, grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Returns
        -------
        Tuple[:obj:`numpy.ndarray`, :obj:`numpy.ndarray`, :obj:`numpy.ndarray`]
            Gradients for the features ``(n, c, h, w)``, the rows and the columns ``(n, taps, h_out, w_out)``.
        """
        assert self._cache is not None, "backward called before forward"
        cache = self._cache
        n, c, h, w = cache["shape"]
        grad = np.moveaxis(grad_out, 1, -1)

        indices, contributions = [], []
        for (r, col, valid, _), wgt in zip(cache["corners"], cache["weights"]):
            scale = wgt if valid is None else wgt * valid
            indices.append(((cache["batch"] * h + r) * w + col).ravel())
            contributions.append((grad * scale[..., None]).reshape(-1, c))
        flat = _scatter_add(np.concatenate(indices), np.concatenate(contributions), n * h * w, cache["dtype"])
        grad_features = np.ascontiguousarray(np.moveaxis(flat.reshape(n, h, w, c), -1, 1))

        v00, v01, v10, v11 = (corner[3] for corner in cache["corners"])
        fr, fc = cache["fr"][..., None], cache["fc"][..., None]
        d_rows = (1 - fc) * (v10 - v00) + fc * (v11 - v01)
        d_cols = (1 - fr) * (v01 - v00) + fr * (v11 - v10)
        grad_rows = np.sum(grad * d_rows, axis=-1)
        grad_cols = np.sum(grad * d_cols, axis=-1)
        return grad_features, grad_rows, grad_cols


def bilinear_sample(
    features: np.ndarray, rows: t.Any, cols: t.Any, policy: WrapPolicy = WrapPolicy.SPHERE
) -> np.ndarray:
    """
    Sample ``(c, h, w)`` or ``(n, c, h, w)`` features at fractional ``(row, col)`` points.

    Returns
    -------
    :obj:`numpy.ndarray`
        For a single point on 3-D features, the ``c``-vector. Otherwise the array shaped like the
        coordinates with the channel axis (and batch axis, for 4-D features) in front.
    """
    single = features.ndim == 3
    batch = features[None] if single else features
    rows_arr = np.asarray(rows, dtype=np.float64)
    cols_arr = np.asarray(cols, dtype=np.float64)
    coord_shape = np.broadcast_shapes(rows_arr.shape, cols_arr.shape)
    flat_rows = np.broadcast_to(rows_arr, coord_shape).reshape(1, 1, -1)
    flat_cols = np.broadcast_to(cols_arr, coord_shape).reshape(1, 1, -1)
    out = BilinearSampler(policy).forward(batch, flat_rows, flat_cols)
    out = out.reshape(out.shape[:2] + coord_shape)
    return out[0] if single else out


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    out = (size + 2 * pad - k) // stride + 1
    if out < 1:
        raise ShapeError(f"A k={k}, stride={stride}, pad={pad} window does not fit an input of size {size}.")
    return out


def _pad(features: np.ndarray, pad: int, mode: PadMode) -> np.ndarray:
    if pad == 0:
        return features
    if mode is PadMode.WRAP_HORIZONTAL and pad > features.shape[3]:
        raise ShapeError(f"Cannot wrap-pad {pad} columns around a width of {features.shape[3]}.")
    padded = np.pad(features, ((0, 0), (0, 0), (pad, pad), (0, 0)))
    if mode is PadMode.WRAP_HORIZONTAL:
        return np.pad(padded, ((0, 0), (0, 0), (0, 0), (pad, pad)), mode="wrap")
    return np.pad(padded, ((0, 0), (0, 0), (0, 0), (pad, pad)))


def im2col(
    features: np.ndarray,
    k: int,
    stride: int = 1,
    pad: t.Optional[int] = None,
    mode: PadMode = PadMode.WRAP_HORIZONTAL,
) -> ColumnBuffer:
    """
    Unfold ``k x k`` integer neighbourhoods into columns by shifting the padded features.

    Parameters
    ----------
    features : :obj:`numpy.ndarray`
        ``(n, c, h, w)`` features.
    k : :obj:`int`
        Odd kernel size.
    stride : :obj:`int`
        Window stride.
    pad : Optional[:obj:`int`]
        Padding on every side, defaults to ``(k - 1) // 2``.
    mode : :obj:`PadMode`
        Zero padding, or zero rows with wrapped columns for panoramas.

    Returns
    -------
    :obj:`ColumnBuffer`
        ``(n, c * k * k, h_out * w_out)`` columns, row index ``channel * k * k + dy * k + dx``.
    """
    if k < 1 or k % 2 == 0:
        raise ShapeError(f"Kernel size must be odd and positive, got {k}.")
    pad = (k - 1) // 2 if pad is None else pad
    n, c, h, w = features.shape
    h_out = conv_output_size(h, k, stride, pad)
    w_out = conv_output_size(w, k, stride, pad)
    padded = _pad(features, pad, mode)
    columns = np.empty((n, c, k * k, h_out, w_out), dtype=features.dtype)
    for dy in range(k):
        for dx in range(k):
            columns[:, :, dy * k + dx] = padded[
                :, :, dy : dy + stride * (h_out - 1) + 1 : stride, dx : dx + stride * (w_out - 1) + 1 : stride
            ]
    return columns.reshape(n, c * k * k, h_out * w_out)


def col2im(
    columns: ColumnBuffer,
    shape: tuple[int, int, int, int],
    k: int,
    stride: int = 1,
    pad: t.Optional[int] = None,
    mode: PadMode = PadMode.WRAP_HORIZONTAL,
) -> np.ndarray:
    """The adjoint of :obj:`im2col`: fold columns back, summing overlapping windows."""
    pad = (k - 1) // 2 if pad is None else pad
    n, c, h, w = shape
    h_out = conv_output_size(h, k, stride, pad)
    w_out = conv_output_size(w, k, stride, pad)
    if columns.shape != (n, c * k * k, h_out * w_out):
        raise ShapeError(f"Columns of shape {columns.shape} do not unfold {shape} with k={k}, stride={stride}.")
    if mode is PadMode.WRAP_HORIZONTAL and pad > w:
        raise ShapeError(f"Cannot wrap-pad {pad} columns around a width of {w}.")
    columns = columns.reshape(n, c, k * k, h_out, w_out)
    padded = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=columns.dtype)
    for dy in range(k):
        for dx in range(k):
            padded[
                :, :, dy : dy + stride * (h_out - 1) + 1 : stride, dx : dx + stride * (w_out - 1) + 1 : stride
            ] += columns[:, :, dy * k + dx]
    padded = padded[:, :, pad : pad + h]
    out = padded[..., pad : pad + w].copy()
    if mode is PadMode.WRAP_HORIZONTAL and pad:
        out[..., w - pad :] += padded[..., :pad]
        out[..., :pad] += padded[..., pad + w :]
    return out


class DeformIm2col:
    """
    Unfold features sampled on a fractional grid, optionally deformed per pixel.

    Parameters
    ----------
    grid : :obj:`SamplingGrid`
        Base coordinates, at the resolution of the features it will unfold.
    mode : :obj:`OffsetMode`
        Where offsets are applied. The switch is explicit, never inferred from the grid.
    cap : Optional[:obj:`float`]
        Offsets are clipped to ``[-cap, cap]``, in the units of ``mode``.
    """

    __slots__ = ("_grid", "_mode", "_cap", "_sampler", "_coords", "_shape")

    def __init__(self, grid: SamplingGrid, mode: OffsetMode = OffsetMode.TANGENT, cap: t.Optional[float] = None) -> None:
        self._grid: SamplingGrid = grid
        self._mode: OffsetMode = mode
        self._cap: t.Optional[float] = cap
        self._sampler: BilinearSampler = BilinearSampler(grid.policy)
        self._coords: t.Optional[DeformedCoords] = None
        self._shape: tuple[int, ...] = ()

    @property
    def grid(self) -> SamplingGrid:
        return self._grid

    def forward(self, features: np.ndarray, offsets: t.Optional[np.ndarray] = None) -> ColumnBuffer:
        if features.shape[2:] != (self._grid.height, self._grid.width):
            raise ShapeError(
                f"Features of spatial size {features.shape[2:]} do not match a "
                f"{self._grid.height}x{self._grid.width} sampling grid."
            )
        if offsets is None:
            self._coords = None
            rows, cols = self._grid.rows, self._grid.cols
        else:
            self._coords = self._grid.deform(offsets, self._mode, self._cap)
            rows, cols = self._coords.rows, self._coords.cols
        samples = self._sampler.forward(features, rows, cols)
        n, c = features.shape[:2]
        self._shape = samples.shape
        return samples.reshape(n, c * self._grid.taps, -1)

    def backward(self, grad_columns: ColumnBuffer) -> tuple[np.ndarray, t.Optional[np.ndarray]]:
        """
        Returns
        -------
        Tuple[:obj:`numpy.ndarray`, Optional[:obj:`numpy.ndarray`]]
            Gradients for the features and, when offsets were given, for the offsets.
        """
        grad_features, grad_rows, grad_cols = self._sampler.backward(grad_columns.reshape(self._shape))
        if self._coords is None:
            return grad_features, None
        grad_offsets = SamplingGrid.deform_backward(grad_rows, grad_cols, self._coords)
        return grad_features, grad_offsets.astype(grad_features.dtype)


def deform_im2col(
    features: np.ndarray,
    grid: SamplingGrid,
    offsets: t.Optional[np.ndarray] = None,
    mode: OffsetMode = OffsetMode.TANGENT,
) -> ColumnBuffer:
    return DeformIm2col(grid, mode).forward(features, offsets)


class BenchRow(t.NamedTuple):
    op: str
    h: int
    w: int
    c: int
    k: int
    ns_per_call: float
    extra_bytes: int


class LinearFit(t.NamedTuple):
    slope: float
    intercept: float
    r2: float


def linear_fit(xs: t.Sequence[float], ys: t.Sequence[float]) -> LinearFit:
    """Least-squares line through the points with its coefficient of determination."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sum((y - (slope * x + intercept)) ** 2))
    total = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - residual / total if total > 0 else 1.0
    return LinearFit(float(slope), float(intercept), r2)


def _measure(call: t.Callable[[], np.ndarray], iters: int) -> tuple[float, int]:
    started_here = not tracemalloc.is_tracing()
    if started_here:
        tracemalloc.start()
    try:
        tracemalloc.reset_peak()
        baseline, _ = tracemalloc.get_traced_memory()
        output = call()
        _, peak = tracemalloc.get_traced_memory()
        extra = max(0, peak - baseline - output.nbytes)
    finally:
        if started_here:
            tracemalloc.stop()
    del output

    started = time.perf_counter_ns()
    for _ in range(iters):
        call()
    return (time.perf_counter_ns() - started) / max(iters, 1), extra


def bench_sampling(h: int, w: int, c: int, k: int, iters: int = 10, seed: int = 0) -> list[BenchRow]:
    """
    Time and measure ``im2col`` against ``deform-im2col`` on an inverse-gnomonic grid with learned
    tangent offsets.

    ``extra_bytes`` is the peak traced allocation of one call beyond its returned column buffer. The
    offsets are allocated inside the measured call since they are part of the layer's extra cost.
    """
    if min(h, w, c, k, iters) < 1:
        raise ShapeError("Benchmark sizes must all be at least 1.")
    features = make_rng(seed).standard_normal((1, c, h, w)).astype(get_dtype())
    grid = ig_sampling_grid(EquirectGrid(h, w), k)
    unfold = DeformIm2col(grid, OffsetMode.TANGENT)

    def planar() -> np.ndarray:
        return im2col(features, k)

    def deformed() -> np.ndarray:
        offsets = np.zeros((1, 2 * k * k, h, w), dtype=features.dtype)
        return unfold.forward(features, offsets)

    rows = []
    for op, call in (("im2col", planar), ("deform_im2col", deformed)):
        ns, extra = _measure(call, iters)
        rows.append(BenchRow(op, h, w, c, k, ns, extra))
        _LOGGER.debug(f"{op} at {h}x{w}x{c}, k={k}: {ns:.0f} ns/call, {extra} extra bytes.")
    return rows


def bench_sweep(
    sizes: t.Sequence[tuple[int, int]], c: int, ks: t.Sequence[int], iters: int = 3, seed: int = 0
) -> tuple[list[BenchRow], LinearFit]:
    """Run :obj:`bench_sampling` over sizes and kernels and fit deform extra bytes against ``h * w * k**2``."""
    rows: list[BenchRow] = []
    for h, w in sizes:
        for k in ks:
            rows.extend(bench_sampling(h, w, c, k, iters, seed))
    deformed = [row for row in rows if row.op == "deform_im2col"]
    fit = linear_fit([row.h * row.w * row.k**2 for row in deformed], [row.extra_bytes for row in deformed])
    return rows, fit


def format_bench_csv(rows: t.Iterable[BenchRow]) -> str:
    lines = ["op,h,w,c,k,ns_per_call,extra_bytes"]
    lines.extend(f"{r.op},{r.h},{r.w},{r.c},{r.k},{r.ns_per_call:.0f},{r.extra_bytes}" for r in rows)
    return "\n".join(lines) + "\n"


def format_bench_text(rows: t.Sequence[BenchRow]) -> str:
    lines = [f"{'op':<14} {'h':>5} {'w':>5} {'c':>4} {'k':>2} {'ns/call':>12} {'extra bytes':>12}"]
    lines.extend(
        f"{r.op:<14} {r.h:>5} {r.w:>5} {r.c:>4} {r.k:>2} {r.ns_per_call:>12.0f} {r.extra_bytes:>12}" for r in rows
    )
    by_shape: dict[tuple[int, int, int, int], dict[str, float]] = {}
    for r in rows:
        by_shape.setdefault((r.h, r.w, r.c, r.k), {})[r.op] = r.ns_per_call
    for (h, w, c, k), times in by_shape.items():
        if times.get("im2col") and "deform_im2col" in times:
            ratio = times["deform_im2col"] / times["im2col"]
            lines.append(f"deform_im2col / im2col latency at {h}x{w}x{c}, k={k}: {ratio:.2f}x")
    return "\n".join(lines) + "\n"
