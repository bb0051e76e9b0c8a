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
import enum
import typing as t

import numpy as np

__all__: list[str] = ["Colour", "Color", "TURBO_ANCHORS", "TURBO_LUT", "colourise"]


class Colour(int, enum.Enum):
    """Albedo palette of the synthetic scenes, as ``0xRRGGBB``."""

    MAGENTA = 0xE91E63
    PURPLE = 0x9B59B6
    BLUE = 0x3498DB
    TEAL = 0x00E6E6
    GREEN = 0x00CC00
    YELLOW = 0xFFFF66
    GOLD = 0xFFD700
    ORANGE = 0xFFA500
    RED = 0xFF6666
    WHITE = 0xFFFFFF
    LIGHT_GREY = 0xB0B0B0
    LIGHT_GRAY = LIGHT_GREY
    """An alias of `LIGHT_GREY`."""
    GREY = 0x808080
    GRAY = GREY
    """An alias of `GREY`."""

    @property
    def rgb(self) -> tuple[float, float, float]:
        """The colour as three floats in ``[0, 1]``."""
        return ((self.value >> 16) & 0xFF) / 255.0, ((self.value >> 8) & 0xFF) / 255.0, (self.value & 0xFF) / 255.0

    @classmethod
    def palette(cls) -> list[Colour]:
        """Every distinct colour, aliases excluded, in declaration order."""
        return list(cls)


Color = Colour

TURBO_ANCHORS: t.Final[tuple[tuple[int, int, int], ...]] = (
    (48, 18, 59),
    (70, 107, 227),
    (41, 187, 236),
    (49, 242, 153),
    (164, 252, 60),
    (237, 208, 58),
    (251, 128, 34),
    (208, 47, 5),
    (122, 4, 3),
)
"""Evenly spaced samples of a turbo-like rainbow, from near to far."""


def _build_lut() -> np.ndarray:
    anchors = np.asarray(TURBO_ANCHORS, dtype=np.float64)
    positions = np.linspace(0.0, 1.0, len(anchors))
    samples = np.linspace(0.0, 1.0, 256)
    table = np.stack([np.interp(samples, positions, anchors[:, c]) for c in range(3)], axis=-1)
    return np.rint(table).astype(np.uint8)


TURBO_LUT: t.Final[np.ndarray] = _build_lut()
"""256 x 3 ``uint8`` lookup table interpolated from :obj:`TURBO_ANCHORS`."""


def colourise(depth: np.ndarray, lo: t.Optional[float] = None, hi: t.Optional[float] = None) -> np.ndarray:
    """
    Map a depth map to a ``(3, h, w)`` preview in ``[0, 1]``.

    Parameters
    ----------
    depth : :obj:`numpy.ndarray`
        ``(h, w)`` or ``(1, h, w)`` depth. Non-positive pixels are drawn black.
    lo, hi : Optional[:obj:`float`]
        Depth range mapped onto the table. Defaults to the range of the positive pixels.
    """
    values = np.asarray(depth, dtype=np.float64).reshape(depth.shape[-2:])
    valid = values > 0
    if not valid.any():
        return np.zeros((3,) + values.shape)
    lo = float(values[valid].min()) if lo is None else lo
    hi = float(values[valid].max()) if hi is None else hi
    span = hi - lo if hi > lo else 1.0
    index = np.clip(np.rint((values - lo) / span * 255.0), 0, 255).astype(np.intp)
    rgb = TURBO_LUT[index].astype(np.float64) / 255.0
    rgb[~valid] = 0.0
    return np.moveaxis(rgb, -1, 0)
