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
Readers and writers for the portable float map (depth) and binary portable pixmap (colour) formats.

Arrays are channel-first: ``(1, h, w)`` or ``(3, h, w)``. PFM stores rows bottom-to-top, the readers and
writers flip so row 0 is always the top of the image in memory.
"""
from __future__ import annotations
import logging
import pathlib
import re
import typing as t

import numpy as np

from odecnn.errors import DataError, FormatError, ShapeError

__all__: list[str] = [
    "read_pfm",
    "write_pfm",
    "parse_pfm",
    "encode_pfm",
    "read_ppm",
    "write_ppm",
    "parse_ppm",
    "encode_ppm",
]

_LOGGER = logging.getLogger("odecnn.imageio")

_TOKEN = re.compile(rb"\S+")
PathLike = t.Union[str, pathlib.Path]


def _header(
    data: bytes, count: int, path: PathLike, *, comments: bool = False
) -> tuple[list[tuple[bytes, int]], int]:
    """
    Read ``count`` whitespace-separated header tokens.

    Returns the tokens with their byte offsets, and the offset of the payload, which starts after the single
    whitespace byte that follows the last token.
    """
    tokens: list[tuple[bytes, int]] = []
    offset = 0
    while len(tokens) < count:
        while offset < len(data) and data[offset : offset + 1].isspace():
            offset += 1
        if comments and data[offset : offset + 1] == b"#":
            newline = data.find(b"\n", offset)
            if newline < 0:
                raise FormatError(path, offset, "unterminated header comment")
            offset = newline + 1
            continue
        match = _TOKEN.match(data, offset)
        if match is None:
            raise FormatError(path, offset, f"header ends after {len(tokens)} of {count} fields")
        tokens.append((match.group(), offset))
        offset = match.end()
    if offset >= len(data) or not data[offset : offset + 1].isspace():
        raise FormatError(path, offset, "expected a single whitespace byte after the header")
    return tokens, offset + 1


def _dimension(token: bytes, path: PathLike, offset: int, what: str) -> int:
    if not token.isdigit() or int(token) < 1:
        raise FormatError(path, offset, f"invalid {what} {token!r}")
    return int(token)


def _read_bytes(path: PathLike) -> bytes:
    try:
        return pathlib.Path(path).read_bytes()
    except OSError as ex:
        raise DataError(path, f"cannot read file: {ex.strerror or ex}") from ex


def _write_bytes(path: PathLike, payload: bytes) -> None:
    try:
        pathlib.Path(path).write_bytes(payload)
    except OSError as ex:
        raise DataError(path, f"cannot write file: {ex.strerror or ex}") from ex


def parse_pfm(data: bytes, path: PathLike = "<bytes>") -> np.ndarray:
    """
    Decode a PFM byte string.

    Returns
    -------
    :obj:`numpy.ndarray`
        ``float32`` array of shape ``(1, h, w)`` for ``Pf`` or ``(3, h, w)`` for ``PF``.

    Raises
    ------
    :obj:`~.errors.FormatError`
        On a bad magic, bad dimensions or scale, or a truncated payload.
    """
    tokens, offset = _header(data, 4, path)
    (magic, _), (width, width_at), (height, height_at), (scale, scale_at) = tokens
    if magic not in (b"Pf", b"PF"):
        raise FormatError(path, 0, f"bad magic {magic!r}, expected b'Pf' or b'PF'")
    channels = 1 if magic == b"Pf" else 3
    w = _dimension(width, path, width_at, "width")
    h = _dimension(height, path, height_at, "height")
    try:
        scale_value = float(scale)
    except ValueError:
        raise FormatError(path, scale_at, f"invalid scale {scale!r}") from None
    if scale_value == 0:
        raise FormatError(path, scale_at, "scale must be non-zero")

    expected = w * h * channels * 4
    actual = len(data) - offset
    if actual < expected:
        raise FormatError(path, offset, f"truncated payload, expected {expected} bytes but found {actual}")
    dtype = np.dtype("<f4" if scale_value < 0 else ">f4")
    values = np.frombuffer(data, dtype=dtype, count=w * h * channels, offset=offset)
    image = values.reshape(h, w, channels)[::-1]
    return np.ascontiguousarray(np.moveaxis(image, -1, 0), dtype=np.float32)


def encode_pfm(array: np.ndarray) -> bytes:
    """Encode a ``(h, w)``, ``(1, h, w)`` or ``(3, h, w)`` array as little-endian PFM."""
    if array.ndim == 2:
        array = array[None]
    if array.ndim != 3 or array.shape[0] not in (1, 3):
        raise ShapeError(f"PFM stores (1, h, w) or (3, h, w) arrays, got {array.shape}.")
    channels, h, w = array.shape
    magic = "Pf" if channels == 1 else "PF"
    rows = np.moveaxis(np.asarray(array, dtype="<f4"), 0, -1)[::-1]
    return f"{magic}\n{w} {h}\n-1.0\n".encode("ascii") + np.ascontiguousarray(rows).tobytes()


def read_pfm(path: PathLike) -> np.ndarray:
    return parse_pfm(_read_bytes(path), path)


def write_pfm(path: PathLike, array: np.ndarray) -> None:
    _write_bytes(path, encode_pfm(array))
    _LOGGER.debug(f"Wrote {array.shape} float map to {path}.")


def parse_ppm(data: bytes, path: PathLike = "<bytes>") -> np.ndarray:
    """
    Decode a binary ``P6`` pixmap with maxval 255.

    Returns
    -------
    :obj:`numpy.ndarray`
        ``float32`` array of shape ``(3, h, w)`` in ``[0, 1]``.
    """
    tokens, offset = _header(data, 4, path, comments=True)
    (magic, _), (width, width_at), (height, height_at), (maxval, maxval_at) = tokens
    if magic != b"P6":
        raise FormatError(path, 0, f"bad magic {magic!r}, expected b'P6'")
    w = _dimension(width, path, width_at, "width")
    h = _dimension(height, path, height_at, "height")
    if maxval != b"255":
        raise FormatError(path, maxval_at, f"unsupported maxval {maxval!r}, only 255 is read")
    expected = w * h * 3
    actual = len(data) - offset
    if actual < expected:
        raise FormatError(path, offset, f"truncated payload, expected {expected} bytes but found {actual}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=expected, offset=offset).reshape(h, w, 3)
    return np.ascontiguousarray(np.moveaxis(pixels, -1, 0), dtype=np.float32) / np.float32(255.0)


def encode_ppm(image: np.ndarray) -> bytes:
    """Encode a ``(3, h, w)`` array in ``[0, 1]``, values are clipped and rounded to 8 bits."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"PPM stores (3, h, w) arrays, got {image.shape}.")
    _, h, w = image.shape
    pixels = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(np.moveaxis(pixels, 0, -1)).tobytes()


def read_ppm(path: PathLike) -> np.ndarray:
    return parse_ppm(_read_bytes(path), path)


def write_ppm(path: PathLike, image: np.ndarray) -> None:
    _write_bytes(path, encode_ppm(image))
    _LOGGER.debug(f"Wrote {image.shape[2]}x{image.shape[1]} pixmap to {path}.")
