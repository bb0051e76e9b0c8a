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
Convolutional spatial propagation on the sphere: affinity normalization, the recurrent propagation step
in its three neighbourhood variants, and the sensor replacement step.

Depth tensors are ``(n, 1, h, w)``. Affinities and offsets carry one channel, or one channel pair, per
neighbour, the centre tap excluded.
"""
from __future__ import annotations
import enum
import logging
import typing as t

import numpy as np

from odecnn.errors import ConfigError, SensorError, ShapeError
from odecnn.sampling import (
    BilinearSampler,
    DeformedCoords,
    OffsetMode,
    SamplingGrid,
    WrapPolicy,
    planar_sampling_grid,
)
from odecnn.sphere import EquirectGrid, ig_sampling_grid
from odecnn.tensor import check_finite

__all__: list[str] = [
    "AFFINITY_EPS",
    "CspnVariant",
    "PropagationConfig",
    "AffinityField",
    "SensorDepth",
    "normalize_affinity",
    "normalize_affinity_backward",
    "neighbor_grid",
    "PropagationStep",
    "propagation_step",
    "replacement_step",
    "Cspn",
    "CspnGradients",
    "run_cspn",
]

_LOGGER = logging.getLogger("odecnn.cspn")

AFFINITY_EPS: t.Final[float] = 1e-12
"""Pixels whose absolute affinity sum is below this propagate nothing."""


class CspnVariant(str, enum.Enum):
    CSPN = "cspn"
    """The integer neighbourhood of a planar image."""

    IG_CSPN = "ig-cspn"
    """The inverse-gnomonic projected neighbourhood."""

    D_CSPN = "d-cspn"
    """The inverse-gnomonic neighbourhood shifted by learned pixel offsets."""


class PropagationConfig(t.NamedTuple):
    k: int = 3
    iterations: int = 12
    variant: CspnVariant = CspnVariant.D_CSPN
    offset_cap: float = 4.0
    """Clip for learned neighbour offsets, in pixels."""

    def validate(self) -> PropagationConfig:
        if self.k < 3 or self.k % 2 == 0:
            raise ConfigError(f"Propagation kernel size must be odd and at least 3, got {self.k}.")
        if self.iterations < 1:
            raise ConfigError(f"Propagation needs at least one iteration, got {self.iterations}.")
        if self.offset_cap <= 0:
            raise ConfigError(f"Offset cap must be positive, got {self.offset_cap}.")
        return self._replace(variant=CspnVariant(self.variant))

    @property
    def neighbours(self) -> int:
        return self.k * self.k - 1


class AffinityField:
    """
    Normalized propagation weights.

    Attributes
    ----------
    raw : :obj:`numpy.ndarray`
        ``(n, neighbours, h, w)`` unnormalized affinities.
    kappa : :obj:`numpy.ndarray`
        Neighbour weights, ``raw`` divided by its absolute sum over neighbours.
    kappa0 : :obj:`numpy.ndarray`
        ``(n, 1, h, w)`` centre weight, one minus the neighbour sum.
    """

    __slots__ = ("raw", "kappa", "kappa0", "abs_sum", "dead")

    def __init__(self, raw: np.ndarray, kappa: np.ndarray, kappa0: np.ndarray, abs_sum: np.ndarray, dead: np.ndarray):
        self.raw: np.ndarray = raw
        self.kappa: np.ndarray = kappa
        self.kappa0: np.ndarray = kappa0
        self.abs_sum: np.ndarray = abs_sum
        self.dead: np.ndarray = dead

    @property
    def neighbours(self) -> int:
        return self.kappa.shape[1]


def normalize_affinity(raw: np.ndarray) -> AffinityField:
    """
    Normalize raw affinities so the absolute neighbour weights sum to at most one.

    Parameters
    ----------
    raw : :obj:`numpy.ndarray`
        ``(n, k * k - 1, h, w)`` or ``(k * k - 1, h, w)`` affinities.
    """
    if raw.ndim == 3:
        raw = raw[None]
    if raw.ndim != 4:
        raise ShapeError(f"Affinities must be (n, neighbours, h, w), got {raw.shape}.")
    k = int(round(np.sqrt(raw.shape[1] + 1)))
    if k * k - 1 != raw.shape[1] or k % 2 == 0:
        raise ShapeError(f"{raw.shape[1]} affinity channels is not k*k-1 for an odd k.")
    check_finite(raw, "raw affinities")
    abs_sum = np.sum(np.abs(raw), axis=1, keepdims=True)
    dead = abs_sum < AFFINITY_EPS
    kappa = np.where(dead, 0.0, raw / np.where(dead, 1.0, abs_sum)).astype(raw.dtype, copy=False)
    kappa0 = 1.0 - np.sum(kappa, axis=1, keepdims=True)
    return AffinityField(raw, kappa, kappa0, abs_sum, dead)


def normalize_affinity_backward(field: AffinityField, grad_kappa: np.ndarray, grad_kappa0: np.ndarray) -> np.ndarray:
    """Chain gradients of ``kappa`` and ``kappa0`` back to the raw affinities."""
    combined = grad_kappa - grad_kappa0
    safe = np.where(field.dead, 1.0, field.abs_sum)
    weighted = np.sum(combined * field.raw, axis=1, keepdims=True)
    grad = combined / safe - np.sign(field.raw) * weighted / (safe * safe)
    return np.where(field.dead, 0.0, grad).astype(field.raw.dtype, copy=False)


def neighbor_grid(variant: CspnVariant, h: int, w: int, k: int = 3) -> SamplingGrid:
    """The undeformed neighbour coordinates of a propagation variant, centre tap excluded."""
    if CspnVariant(variant) is CspnVariant.CSPN:
        grid = planar_sampling_grid(h, w, k, policy=WrapPolicy.SPHERE)
    else:
        grid = ig_sampling_grid(EquirectGrid(h, w), k)
    return grid.without_center()


def _check_depth(array: np.ndarray, name: str) -> None:
    if array.ndim != 4 or array.shape[1] != 1:
        raise ShapeError(f"{name} must be a (n, 1, h, w) depth tensor, got {array.shape}.")


class SensorDepth:
    """
    Partial metric depth and its availability mask.

    Parameters
    ----------
    dp : :obj:`numpy.ndarray`
        ``(n, 1, h, w)`` or ``(1, h, w)`` depth in meters, zero where there is no reading.
    mask : Optional[:obj:`numpy.ndarray`]
        The availability mask. Derived from ``dp`` when omitted, and checked against it when given.

    Raises
    ------
    :obj:`~.errors.SensorError`
        If the mask disagrees with ``dp > 0`` or the depth is negative or not finite.
    """

    __slots__ = ("dp", "mask")

    def __init__(self, dp: np.ndarray, mask: t.Optional[np.ndarray] = None) -> None:
        if dp.ndim == 3:
            dp = dp[None]
        _check_depth(dp, "Sensor depth")
        if not np.all(np.isfinite(dp)) or np.any(dp < 0):
            raise SensorError("Sensor depth must be finite and non-negative.")
        derived = dp > 0
        if mask is not None:
            given = np.asarray(mask).reshape(dp.shape) > 0
            if not np.array_equal(given, derived):
                raise SensorError("Sensor mask disagrees with the pixels that carry depth.")
        self.dp: np.ndarray = dp
        self.mask: np.ndarray = derived

    @property
    def coverage(self) -> float:
        return float(self.mask.mean())

    def mask_channel(self) -> np.ndarray:
        return self.mask.astype(self.dp.dtype)


class PropagationStep:
    """
    One propagation step, ``kappa0 * h0 + sum(kappa * h_tau(neighbour))``.

    The centre term anchors to the initial hidden state, not the current one.
    """

    __slots__ = ("_sampler", "_field", "_h0", "_samples")

    def __init__(self, policy: WrapPolicy = WrapPolicy.SPHERE) -> None:
        self._sampler: BilinearSampler = BilinearSampler(policy)
        self._field: t.Optional[AffinityField] = None
        self._h0: t.Optional[np.ndarray] = None
        self._samples: t.Optional[np.ndarray] = None

    def forward(
        self, h_tau: np.ndarray, h0: np.ndarray, field: AffinityField, rows: np.ndarray, cols: np.ndarray
    ) -> np.ndarray:
        _check_depth(h_tau, "Hidden state")
        if h_tau.shape != h0.shape or field.kappa.shape[2:] != h0.shape[2:] or field.kappa.shape[0] != h0.shape[0]:
            raise ShapeError(
                f"Propagation inputs disagree: state {h_tau.shape}, initial {h0.shape}, affinity {field.kappa.shape}."
            )
        if rows.shape[-3] != field.neighbours:
            raise ShapeError(f"{rows.shape[-3]} neighbour coordinates for {field.neighbours} affinities.")
        samples = self._sampler.forward(h_tau, rows, cols)[:, 0]
        self._field, self._h0, self._samples = field, h0, samples
        return field.kappa0 * h0 + np.sum(field.kappa * samples, axis=1, keepdims=True)

    def backward(
        self, grad_out: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """
        Returns
        -------
        Tuple[:obj:`numpy.ndarray`, ...]
            Gradients for ``h_tau``, ``h0``, ``kappa``, ``kappa0``, the neighbour rows and columns.
        """
        assert self._field is not None and self._h0 is not None and self._samples is not None
        field = self._field
        grad_h0 = grad_out * field.kappa0
        grad_kappa0 = grad_out * self._h0
        grad_kappa = grad_out * self._samples
        grad_samples = (grad_out * field.kappa)[:, None]
        grad_h_tau, grad_rows, grad_cols = self._sampler.backward(grad_samples)
        return grad_h_tau, grad_h0, grad_kappa, grad_kappa0, grad_rows, grad_cols


def propagation_step(
    h_tau: np.ndarray, h0: np.ndarray, field: AffinityField, grid: SamplingGrid, offsets: t.Optional[np.ndarray] = None
) -> np.ndarray:
    if offsets is None:
        return PropagationStep(grid.policy).forward(h_tau, h0, field, grid.rows, grid.cols)
    coords = grid.deform(offsets, OffsetMode.PIXEL)
    return PropagationStep(grid.policy).forward(h_tau, h0, field, coords.rows, coords.cols)


def replacement_step(h: np.ndarray, sensor: SensorDepth) -> np.ndarray:
    """Overwrite the hidden state with the sensor depth wherever a reading exists."""
    if h.shape != sensor.dp.shape:
        raise ShapeError(f"Hidden state {h.shape} and sensor depth {sensor.dp.shape} disagree.")
    return np.where(sensor.mask, sensor.dp, h).astype(h.dtype, copy=False)


class CspnGradients(t.NamedTuple):
    h0: np.ndarray
    raw_affinity: np.ndarray
    offsets: t.Optional[np.ndarray]


class Cspn:
    """
    Runs ``iterations`` propagation steps, each followed by the replacement step, and differentiates
    through the whole recurrence.

    Parameters
    ----------
    config : :obj:`PropagationConfig`
        Kernel size, iteration count, variant and offset cap.
    """

    __slots__ = ("config", "_grids", "_steps", "_field", "_sensor", "_coords", "_grid")

    def __init__(self, config: PropagationConfig = PropagationConfig()) -> None:
        self.config: PropagationConfig = config.validate()
        self._grids: dict[tuple[int, int], SamplingGrid] = {}
        self._steps: list[PropagationStep] = []
        self._field: t.Optional[AffinityField] = None
        self._sensor: t.Optional[SensorDepth] = None
        self._coords: t.Optional[DeformedCoords] = None
        self._grid: t.Optional[SamplingGrid] = None

    @property
    def variant(self) -> CspnVariant:
        return self.config.variant

    def grid_for(self, h: int, w: int) -> SamplingGrid:
        grid = self._grids.get((h, w))
        if grid is None:
            grid = neighbor_grid(self.variant, h, w, self.config.k)
            self._grids[(h, w)] = grid
        return grid

    def neighbor_coordinates(
        self, h: int, w: int, offsets: t.Optional[np.ndarray] = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Neighbour ``(rows, cols)``, deformed by pixel offsets for ``d-cspn``."""
        grid = self.grid_for(h, w)
        if offsets is None or self.variant is not CspnVariant.D_CSPN:
            return grid.rows, grid.cols
        coords = grid.deform(offsets, OffsetMode.PIXEL, self.config.offset_cap)
        return coords.rows, coords.cols

    def forward(
        self,
        h0: np.ndarray,
        raw_affinity: np.ndarray,
        sensor: SensorDepth,
        offsets: t.Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """
        Parameters
        ----------
        h0 : :obj:`numpy.ndarray`
            ``(n, 1, h, w)`` coarse depth, the initial hidden state.
        raw_affinity : :obj:`numpy.ndarray`
            ``(n, k * k - 1, h, w)`` unnormalized affinities.
        sensor : :obj:`SensorDepth`
            The partial depth re-imposed after every step.
        offsets : Optional[:obj:`numpy.ndarray`]
            ``(n, 2 * (k * k - 1), h, w)`` pixel offsets, channels ``(drow, dcol)`` per neighbour. Required for
            ``d-cspn`` and rejected otherwise.
        """
        _check_depth(h0, "Initial depth")
        n, _, h, w = h0.shape
        if raw_affinity.shape != (n, self.config.neighbours, h, w):
            raise ShapeError(
                f"Expected affinities of shape {(n, self.config.neighbours, h, w)}, got {raw_affinity.shape}."
            )
        if (offsets is None) != (self.variant is not CspnVariant.D_CSPN):
            raise ShapeError(f"Offsets are required by d-cspn and only by d-cspn, variant is {self.variant.value}.")

        grid = self.grid_for(h, w)
        self._grid = grid
        if offsets is not None:
            self._coords = grid.deform(offsets, OffsetMode.PIXEL, self.config.offset_cap)
            rows, cols = self._coords.rows, self._coords.cols
        else:
            self._coords = None
            rows, cols = grid.rows, grid.cols

        field = normalize_affinity(raw_affinity)
        self._field, self._sensor = field, sensor
        self._steps = []
        state = h0
        for _ in range(self.config.iterations):
            step = PropagationStep(grid.policy)
            state = replacement_step(step.forward(state, h0, field, rows, cols), sensor)
            self._steps.append(step)
        return state

    def backward(self, grad_out: np.ndarray) -> CspnGradients:
        assert self._field is not None and self._sensor is not None, "backward called before forward"
        mask = self._sensor.mask
        grad_h0 = np.zeros_like(grad_out)
        grad_kappa = np.zeros_like(self._field.kappa)
        grad_kappa0 = np.zeros_like(self._field.kappa0)
        grad_rows = grad_cols = None
        grad = grad_out
        for step in reversed(self._steps):
            grad = np.where(mask, 0, grad)
            grad, g_h0, g_kappa, g_kappa0, g_rows, g_cols = step.backward(grad)
            grad_h0 += g_h0
            grad_kappa += g_kappa
            grad_kappa0 += g_kappa0
            if self._coords is not None:
                grad_rows = g_rows if grad_rows is None else grad_rows + g_rows
                grad_cols = g_cols if grad_cols is None else grad_cols + g_cols
        grad_h0 += grad
        grad_raw = normalize_affinity_backward(self._field, grad_kappa, grad_kappa0)
        grad_offsets = None
        if self._coords is not None and grad_rows is not None and grad_cols is not None:
            grad_offsets = SamplingGrid.deform_backward(grad_rows, grad_cols, self._coords).astype(grad_out.dtype)
        return CspnGradients(grad_h0, grad_raw, grad_offsets)


def run_cspn(
    h0: np.ndarray,
    raw_affinity: np.ndarray,
    sensor: SensorDepth,
    config: PropagationConfig = PropagationConfig(),
    offsets: t.Optional[np.ndarray] = None,
) -> np.ndarray:
    return Cspn(config).forward(h0, raw_affinity, sensor, offsets)
