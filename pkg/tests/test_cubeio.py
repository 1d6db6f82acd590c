import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mlekit import cubeio
from mlekit.cubeio import CubeFormatError, decode_cube, encode_cube
from mlekit.imgcore import SpectralCube

cubes = arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 8), st.integers(1, 8)),
               elements=st.floats(-10, 10, width=32, allow_nan=False))


def test_header_layout_bit_exact():
    planes = np.arange(6, dtype=np.float32).reshape(1, 2, 3)
    buf = encode_cube(planes)
    assert buf[:4] == b"MLEC"
    assert struct.unpack_from("<H", buf, 4)[0] == 1
    assert struct.unpack_from("<III", buf, 6) == (3, 2, 1)  # width, height, channels
    assert buf[18] == 1 and buf[19:26] == b"\0" * 7
    assert len(buf) == 26 + 6 * 4
    assert buf[26:30] == struct.pack("<f", 0.0) and buf[-4:] == struct.pack("<f", 5.0)


def test_metadata_trailer():
    buf = encode_cube(np.zeros((1, 1, 1)), {"wavelengths_nm": [406, 446]})
    blob = b'{"wavelengths_nm":[406,446]}'
    assert buf[30:] == struct.pack("<I", len(blob)) + blob
    _, meta = decode_cube(buf)
    assert meta == {"wavelengths_nm": [406, 446]}


@given(cubes)
def test_roundtrip(planes):
    out, meta = decode_cube(encode_cube(planes))
    assert meta is None
    assert np.array_equal(out.astype(np.float32), planes)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda b: b[:10],
        lambda b: b"XLEC" + b[4:],
        lambda b: b[:4] + struct.pack("<H", 2) + b[6:],
        lambda b: b[:18] + b"\x02" + b[19:],
        lambda b: b[:20] + b"\x01" + b[21:],
        lambda b: b[:-1],
        lambda b: b + b"\x01\x00",
    ],
)
def test_malformed_rejected(mutate):
    buf = encode_cube(np.ones((2, 3, 3)))
    with pytest.raises(CubeFormatError):
        decode_cube(mutate(buf))


def test_spectral_cube_file_roundtrip(tmp_path):
    mask = np.ones((4, 5), bool)
    mask[0, 0] = False
    cube = SpectralCube(np.full((3, 4, 5), 0.25), (406, 446, 468), mask)
    cubeio.save_spectral_cube(tmp_path / "c.mlec", cube)
    back = cubeio.load_spectral_cube(tmp_path / "c.mlec")
    assert back.wavelengths_nm == cube.wavelengths_nm
    assert np.array_equal(back.mask, mask) and np.allclose(back.planes, 0.25)


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(0, 1)))
def test_png_and_pgm_16bit_roundtrip(tmp_path_factory, plane):
    d = tmp_path_factory.mktemp("io")
    cubeio.write_png16(d / "p.png", plane)
    cubeio.write_pgm16(d / "p.pgm", plane)
    assert np.max(np.abs(cubeio.read_png16(d / "p.png") - plane)) <= 0.5 / 65535 + 1e-12
    assert np.array_equal(cubeio.read_pgm16(d / "p.pgm"), cubeio.read_png16(d / "p.png"))


def test_pgm_rejects_other_formats(tmp_path):
    (tmp_path / "x.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(CubeFormatError):
        cubeio.read_pgm16(tmp_path / "x.pgm")
