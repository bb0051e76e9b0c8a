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
"""Depth error statistics: Abs Rel, Sq Rel, RMSE, RMSLog and the threshold accuracies."""
from __future__ import annotations
import typing as t

import numpy as np

from odecnn.errors import MaskError, ShapeError

__all__: list[str] = ["THRESHOLDS", "DepthMetrics", "evaluate", "MetricAccumulator"]

THRESHOLDS: t.Final[tuple[float, float, float]] = (1.25, 1.25**2, 1.25**3)


class DepthMetrics(t.NamedTuple):
    abs_rel: float
    sq_rel: float
    rmse: float
    rms_log: float
    delta1: float
    """Percentage of pixels with ``max(pred / gt, gt / pred) < 1.25``."""
    delta2: float
    delta3: float

    @staticmethod
    def csv_header() -> str:
        return "abs_rel,sq_rel,rmse,rms_log,d1,d2,d3"

    def as_csv(self) -> str:
        return ",".join(f"{value:.6f}" for value in self)

    def format_table(self) -> str:
        names = ("Abs Rel", "Sq Rel", "RMSE", "RMSLog", "d<1.25", "d<1.25^2", "d<1.25^3")
        header = " ".join(f"{name:>10}" for name in names)
        values = " ".join(f"{value:>10.4f}" for value in self)
        return f"{header}\n{values}\n"


def evaluate(pred: np.ndarray, gt: np.ndarray, valid: t.Optional[np.ndarray] = None) -> DepthMetrics:
    """
    Compare a predicted depth map against ground truth.

    Parameters
    ----------
    pred, gt : :obj:`numpy.ndarray`
        Depth maps of equal shape.
    valid : Optional[:obj:`numpy.ndarray`]
        Pixels to evaluate. Defaults to every pixel with ``gt > 0``.

    Raises
    ------
    :obj:`~.errors.MaskError`
        If the mask is empty or selects a non-positive depth.
    """
    if pred.shape != gt.shape:
        raise ShapeError(f"Prediction {pred.shape} and ground truth {gt.shape} disagree.")
    mask = gt > 0 if valid is None else np.asarray(valid).reshape(gt.shape) > 0
    if not mask.any():
        raise MaskError("The valid mask selects no pixels.")
    d = np.asarray(pred, dtype=np.float64)[mask]
    d_star = np.asarray(gt, dtype=np.float64)[mask]
    if np.any(d <= 0) or np.any(d_star <= 0):
        raise MaskError("Depths must be positive on every valid pixel.")

    diff = d - d_star
    # Compared without dividing, a ratio exactly on a threshold stays outside it.
    larger, smaller = np.maximum(d, d_star), np.minimum(d, d_star)
    deltas = [100.0 * float(np.mean(larger < threshold * smaller)) for threshold in THRESHOLDS]
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(diff) / d_star)),
        sq_rel=float(np.mean(diff * diff / d_star)),
        rmse=float(np.sqrt(np.mean(diff * diff))),
        rms_log=float(np.sqrt(np.mean((np.log(d) - np.log(d_star)) ** 2))),
        delta1=deltas[0],
        delta2=deltas[1],
        delta3=deltas[2],
    )


class MetricAccumulator:
    """Averages per-image metrics over a dataset."""

    __slots__ = ("_rows",)

    def __init__(self) -> None:
        self._rows: list[DepthMetrics] = []

    def __len__(self) -> int:
        return len(self._rows)

    def add(self, pred: np.ndarray, gt: np.ndarray, valid: t.Optional[np.ndarray] = None) -> DepthMetrics:
        """Evaluate every image of an ``(n, 1, h, w)`` batch, or a single map."""
        if pred.ndim == 4:
            rows = [evaluate(p, g, None if valid is None else valid[i]) for i, (p, g) in enumerate(zip(pred, gt))]
        else:
            rows = [evaluate(pred, gt, valid)]
        self._rows.extend(rows)
        return rows[-1]

    def mean(self) -> DepthMetrics:
        if not self._rows:
            raise MaskError("No images were evaluated.")
        return DepthMetrics(*np.mean(np.asarray(self._rows, dtype=np.float64), axis=0).tolist())
