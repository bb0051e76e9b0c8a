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
from odecnn import imageio


def test_pfm_round_trip_keeps_orientation(tmp_path):
    depth = np.arange(12, dtype=np.float32).reshape(1, 3, 4)
    imageio.write_pfm(tmp_path / "d.pfm", depth)
    back = imageio.read_pfm(tmp_path / "d.pfm")
    assert back.dtype == np.float32
    np.testing.assert_array_equal(back, depth)


def test_pfm_is_bottom_to_top_little_endian():
    data = imageio.encode_pfm(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    header = b"Pf\n2 2\n-1.0\n"
    assert data.startswith(header)
    assert np.frombuffer(data[len(header):], dtype="<f4").tolist() == [3.0, 4.0, 1.0, 2.0]


def test_big_endian_pfm_is_read():
    payload = np.array([3.0, 4.0, 1.0, 2.0], dtype=">f4").tobytes()
    depth = imageio.parse_pfm(b"Pf\n2 2\n1.0\n" + payload)
    assert depth.tolist() == [[[1.0, 2.0], [3.0, 4.0]]]


def test_pfm_bad_magic_reports_offset():
    with pytest.raises(errors.FormatError) as info:
        imageio.parse_pfm(b"P5\n2 2\n-1.0\n" + bytes(16))
    assert info.value.offset == 0


def test_truncated_pfm_names_byte_counts():
    with pytest.raises(errors.FormatError) as info:
        imageio.parse_pfm(b"Pf\n2 2\n-1.0\n" + bytes(10), "x.pfm")
    assert "expected 16 bytes but found 10" in str(info.value)
    assert info.value.path == "x.pfm"
    assert info.value.offset == len(b"Pf\n2 2\n-1.0\n")


@pytest.mark.parametrize("header", [b"Pf\n0 2\n-1.0\n", b"Pf\nx 2\n-1.0\n", b"Pf\n2 2\n0\n", b"Pf\n2"])
def test_pfm_bad_headers(header):
    with pytest.raises(errors.FormatError):
        imageio.parse_pfm(header + bytes(16))


def test_ppm_round_trip_and_comments(tmp_path):
    image = np.zeros((3, 2, 2))
    image[0, 0, 0] = 1.0
    image[2, 1, 1] = 0.5
    imageio.write_ppm(tmp_path / "i.ppm", image)
    back = imageio.read_ppm(tmp_path / "i.ppm")
    assert back.shape == (3, 2, 2)
    assert back[0, 0, 0] == 1.0
    assert back[2, 1, 1] == pytest.approx(128 / 255)

    commented = imageio.parse_ppm(b"P6\n# made by hand\n1 1\n255\n" + bytes([255, 0, 0]))
    assert commented[:, 0, 0].tolist() == [1.0, 0.0, 0.0]


def test_ppm_rejects_other_maxvals():
    with pytest.raises(errors.FormatError):
        imageio.parse_ppm(b"P6\n1 1\n65535\n" + bytes(6))


def test_encoders_check_shapes():
    with pytest.raises(errors.ShapeError):
        imageio.encode_pfm(np.zeros((2, 2, 2)))
    with pytest.raises(errors.ShapeError):
        imageio.encode_ppm(np.zeros((1, 2, 2)))


def test_missing_file_is_a_data_error(tmp_path):
    with pytest.raises(errors.DataError) as info:
        imageio.read_pfm(tmp_path / "missing.pfm")
    assert "missing.pfm" in str(info.value)
