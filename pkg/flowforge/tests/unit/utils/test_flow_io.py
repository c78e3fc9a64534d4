import struct

import numpy as np
import pytest

from flowforge.core.exceptions import BadMagicError, MissingFileError, TruncatedFileError
from flowforge.core.raster import FlowField, Image
from flowforge.utils.flow_io import (
    FLO_MAGIC,
    encode_png,
    load_flo,
    quantize_image,
    read_flo,
    read_png,
    save_flo,
    write_flo,
    write_png,
)


# --- Tests for .flo ---

def test_single_pixel_layout():
    data = write_flo(FlowField(data=np.array([[[1.5, -2.0]]])))
    assert len(data) == 20
    assert data == struct.pack("<fiiff", FLO_MAGIC, 1, 1, 1.5, -2.0)


def test_row_major_interleaved_payload():
    flow = np.arange(12, dtype=np.float32).reshape(2, 3, 2)
    data = write_flo(FlowField(data=flow))
    assert struct.unpack("<ii", data[4:12]) == (3, 2)
    np.testing.assert_array_equal(np.frombuffer(data[12:], "<f4"), np.arange(12))
    np.testing.assert_array_equal(read_flo(data).data, flow)


def test_bad_magic_rejected():
    data = bytearray(write_flo(FlowField.zeros(2, 2)))
    data[0] ^= 0xFF
    with pytest.raises(BadMagicError):
        read_flo(bytes(data))


@pytest.mark.parametrize("cut", [2, 8, 19])
def test_truncated_file_rejected(cut):
    data = write_flo(FlowField(data=np.array([[[1.5, -2.0]]])))
    with pytest.raises(TruncatedFileError):
        read_flo(data[:cut])


def test_missing_file(tmp_path):
    with pytest.raises(MissingFileError):
        load_flo(tmp_path / "absent.flo")


def test_save_and_load(tmp_path):
    flow = FlowField(data=np.random.default_rng(0).normal(size=(5, 7, 2)))
    loaded = load_flo(save_flo(flow, tmp_path / "f.flo"))
    np.testing.assert_array_equal(loaded.data, flow.data)


# --- Tests for PNG ---

def test_png_quantizes_to_nearest_level(tmp_path):
    img = Image(data=np.full((3, 4, 3), 0.5))
    assert quantize_image(img)[0, 0, 0] == 128
    back = read_png(write_png(img, tmp_path / "img.png"))
    np.testing.assert_allclose(back.data, 128 / 255.0)
    assert back.frame == (4, 3)


def test_encode_png_signature():
    assert encode_png(Image.constant(2, 2)).startswith(b"\x89PNG")
