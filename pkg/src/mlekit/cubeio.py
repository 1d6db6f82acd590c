"""MLEC cube container and 16-bit per-plane image files.

MLEC layout (little-endian)::

    0   4s   magic b"MLEC"
    4   H    version (1)
    6   I    width
    10  I    height
    14  I    channels (planes)
    18  B    dtype code (1 = float32)
    19  7x   reserved, zero
    26  ...  payload: planes in order, each row-major height x width float32
    ..  I    optional JSON trailer length, followed by that many UTF-8 bytes
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

MAGIC = b"MLEC"
VERSION = 1
DTYPE_FLOAT32 = 1
_HEADER = struct.Struct("<4sHIIIB7s")
HEADER_SIZE = _HEADER.size  # 26


class CubeFormatError(ValueError):
    pass


def encode_cube(planes: np.ndarray, metadata: dict | None = None) -> bytes:
    planes = np.asarray(planes)
    if planes.ndim == 2:
        planes = planes[None]
    if planes.ndim != 3:
        raise CubeFormatError("planes must be 2-D or (channels, height, width)")
    c, h, w = planes.shape
    header = _HEADER.pack(MAGIC, VERSION, w, h, c, DTYPE_FLOAT32, b"\0" * 7)
    payload = np.ascontiguousarray(planes, dtype="<f4").tobytes()
    out = header + payload
    if metadata is not None:
        blob = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
        out += struct.pack("<I", len(blob)) + blob
    return out


def decode_cube(buf: bytes) -> tuple[np.ndarray, dict | None]:
    if len(buf) < HEADER_SIZE:
        raise CubeFormatError("truncated header")
    magic, version, w, h, c, dtype, reserved = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CubeFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CubeFormatError(f"unsupported version {version}")
    if dtype != DTYPE_FLOAT32:
        raise CubeFormatError(f"unsupported dtype code {dtype}")
    if reserved != b"\0" * 7:
        raise CubeFormatError("reserved header bytes are not zero")
    n = w * h * c * 4
    end = HEADER_SIZE + n
    if len(buf) < end:
        raise CubeFormatError("truncated payload")
    planes = np.frombuffer(buf, dtype="<f4", count=w * h * c, offset=HEADER_SIZE)
    planes = planes.reshape(c, h, w).astype(np.float64)
    meta = None
    rest = len(buf) - end
    if rest:
        if rest < 4:
            raise CubeFormatError("truncated metadata length")
        (mlen,) = struct.unpack_from("<I", buf, end)
        if rest != 4 + mlen:
            raise CubeFormatError("metadata length does not match trailer size")
        meta = json.loads(buf[end + 4 :].decode("utf-8"))
    return planes, meta


def write_cube(path, planes, metadata=None) -> None:
    Path(path).write_bytes(encode_cube(planes, metadata))


def read_cube(path) -> tuple[np.ndarray, dict | None]:
    return decode_cube(Path(path).read_bytes())


def save_spectral_cube(path, cube) -> None:
    """Write a SpectralCube; the validity mask travels as the last plane."""
    planes = np.concatenate([cube.planes, cube.mask[None].astype(np.float64)])
    meta = {"kind": "spectral_cube", "wavelengths_nm": list(cube.wavelengths_nm), "mask_plane": True}
    write_cube(path, planes, meta)


def load_spectral_cube(path):
    from .imgcore import SpectralCube

    planes, meta = read_cube(path)
    if not meta or "wavelengths_nm" not in meta:
        raise CubeFormatError("cube file lacks wavelength metadata")
    mask = None
    if meta.get("mask_plane"):
        mask = planes[-1] > 0.5
        planes = planes[:-1]
    return SpectralCube(planes, meta["wavelengths_nm"], mask)


def _to_u16(plane: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(plane, 0.0, 1.0) * 65535.0 + 0.5).astype(np.uint16)


def write_png16(path, plane: np.ndarray) -> None:
    """Write a [0, 1] plane as a 16-bit grayscale PNG."""
    Image.fromarray(_to_u16(plane)).save(path, format="PNG")


def read_png16(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.array(im)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.float64) / 65535.0


def write_pgm16(path, plane: np.ndarray) -> None:
    """Binary PGM (P5) with maxval 65535; samples are big-endian per the format."""
    u = _to_u16(plane)
    h, w = u.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(u.astype(">u2").tobytes())


def read_pgm16(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise CubeFormatError("not a binary PGM file")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    arr = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return arr.astype(np.float64) / maxval


def write_rgb8(path, rgb: np.ndarray) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def false_color(plane: np.ndarray, lo: float, hi: float, mask=None) -> np.ndarray:
    """Map a scalar plane to 8-bit RGB with a blue-to-red ramp; masked pixels black."""
    t = np.clip((np.asarray(plane, dtype=np.float64) - lo) / max(hi - lo, 1e-12), 0, 1)
    r = np.clip(1.5 - np.abs(4 * t - 3), 0, 1)
    g = np.clip(1.5 - np.abs(4 * t - 2), 0, 1)
    b = np.clip(1.5 - np.abs(4 * t - 1), 0, 1)
    rgb = np.stack([r, g, b], axis=-1)
    if mask is not None:
        rgb[~np.asarray(mask, dtype=bool)] = 0
    return np.floor(rgb * 255 + 0.5).astype(np.uint8)
