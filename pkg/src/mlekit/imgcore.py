"""Frame/field model and shared preprocessing.

Pixels are float64 in [0, 1]. Images are (H, W) for mono or (H, W, 3) for
RGB. Coordinates follow (x, y) = (column, row) everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.ndimage import correlate1d, gaussian_filter, map_coordinates


class InvalidInputError(ValueError):
    """Input data violates an operation's preconditions."""


@dataclass
class Field:
    """One image field with its acquisition metadata.

    ``mask`` marks valid pixels; ``None`` means every pixel is valid.
    """

    pixels: np.ndarray
    parity: Optional[str] = None
    frame_id: int = 0
    illum_tag: str = ""
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim not in (2, 3) or (px.ndim == 3 and px.shape[2] not in (1, 3)):
            raise InvalidInputError(f"unsupported pixel array shape {px.shape}")
        if px.ndim == 3 and px.shape[2] == 1:
            px = px[:, :, 0]
        if px.shape[0] == 0 or px.shape[1] == 0:
            raise InvalidInputError("field must have positive width and height")
        if not np.all(np.isfinite(px)):
            raise InvalidInputError("field contains non-finite pixels")
        if self.parity not in (None, "odd", "even"):
            raise InvalidInputError(f"parity must be 'odd' or 'even', got {self.parity!r}")
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=bool)
            if m.shape != px.shape[:2]:
                raise InvalidInputError("mask shape does not match pixels")
            self.mask = m
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3

    @property
    def valid(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.pixels.shape[:2], dtype=bool)
        return self.mask

    def with_pixels(self, pixels, mask=None, **kw) -> "Field":
        return replace(self, pixels=pixels, mask=mask, **kw)

    def luminance(self) -> "Field":
        if self.channels == 1:
            return self
        lum = self.pixels @ np.array([0.2126, 0.7152, 0.0722])
        return self.with_pixels(lum, self.mask)


def as_field(x) -> Field:
    return x if isinstance(x, Field) else Field(np.asarray(x, dtype=np.float64))


def from_integer(raw: np.ndarray, bit_depth: Optional[int] = None, **meta) -> Field:
    """Ingest an integer image, dividing by the maximum code value."""
    raw = np.asarray(raw)
    if bit_depth is None:
        if raw.dtype == np.uint8:
            bit_depth = 8
        elif raw.dtype == np.uint16:
            bit_depth = 16
        else:
            raise InvalidInputError(f"cannot infer bit depth from dtype {raw.dtype}")
    return Field(raw.astype(np.float64) / float(2**bit_depth - 1), **meta)


@dataclass
class SpectralCube:
    """Per-wavelength reflectance planes sharing one validity mask."""

    planes: np.ndarray  # (n_wavelengths, H, W)
    wavelengths_nm: tuple
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        planes = np.asarray(self.planes, dtype=np.float64)
        if planes.ndim != 3:
            raise InvalidInputError("cube planes must be (n_wavelengths, H, W)")
        wl = tuple(float(w) for w in self.wavelengths_nm)
        if len(wl) != planes.shape[0]:
            raise InvalidInputError("wavelength count does not match planes")
        if any(b <= a for a, b in zip(wl, wl[1:])):
            raise InvalidInputError("wavelengths must be strictly increasing")
        mask = self.mask
        if mask is None:
            mask = np.ones(planes.shape[1:], dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != planes.shape[1:]:
            raise InvalidInputError("mask shape does not match planes")
        mask = mask & np.all(np.isfinite(planes), axis=0)
        self.planes = np.where(np.isfinite(planes), planes, 0.0)
        self.wavelengths_nm = wl
        self.mask = mask

    @property
    def shape(self):
        return self.planes.shape[1:]

    def plane(self, wavelength_nm: float) -> np.ndarray:
        return self.planes[self.wavelengths_nm.index(float(wavelength_nm))]

    def spectra(self) -> np.ndarray:
        """Valid pixels as an (n_pixels, n_wavelengths) array."""
        return self.planes[:, self.mask].T


@dataclass(frozen=True)
class AffineTransform:
    """2x3 matrix mapping moving-image (x, y) to fixed-image (x, y)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64).reshape(2, 3)
        if abs(np.linalg.det(m[:, :2])) <= 1e-8:
            raise InvalidInputError("affine transform is singular")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.array([[1.0, 0, 0], [0, 1.0, 0]]))

    @classmethod
    def from_params(cls, angle_deg=0.0, tx=0.0, ty=0.0, scale=1.0, center=(0.0, 0.0)):
        """Rotation (counter-clockwise in x/y) about ``center`` followed by translation."""
        t = np.radians(angle_deg)
        A = scale * np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
        c = np.asarray(center, dtype=np.float64)
        b = c - A @ c + np.array([tx, ty])
        return cls(np.column_stack([A, b]))

    @property
    def linear(self) -> np.ndarray:
        return self.matrix[:, :2]

    @property
    def offset(self) -> np.ndarray:
        return self.matrix[:, 2]

    def inverse(self) -> "AffineTransform":
        Ai = np.linalg.inv(self.linear)
        return AffineTransform(np.column_stack([Ai, -Ai @ self.offset]))

    def compose(self, other: "AffineTransform") -> "AffineTransform":
        """Return ``self after other``."""
        A = self.linear @ other.linear
        b = self.linear @ other.offset + self.offset
        return AffineTransform(np.column_stack([A, b]))

    def apply(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        return xy @ self.linear.T + self.offset


# --- elementwise / filtering -------------------------------------------------


def subtract_dark(frame: Field, dark: Field) -> Field:
    frame, dark = as_field(frame), as_field(dark)
    if frame.pixels.shape != dark.pixels.shape:
        raise InvalidInputError(
            f"dark frame shape {dark.pixels.shape} != frame shape {frame.pixels.shape}"
        )
    return frame.with_pixels(np.clip(frame.pixels - dark.pixels, 0.0, 1.0), frame.mask)


def _resample_rows(img: np.ndarray, sample_rows: np.ndarray, height: int) -> np.ndarray:
    """Linear interpolation along rows from samples at ``sample_rows``; replicate ends."""
    y = np.arange(height, dtype=np.float64)
    pos = np.interp(y, sample_rows, np.arange(len(sample_rows), dtype=np.float64))
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, len(sample_rows) - 1)
    w = (pos - lo).reshape((-1,) + (1,) * (img.ndim - 1))
    return (1 - w) * img[lo] + w * img[hi]


def deinterlace(frame: Field) -> tuple[Field, Field]:
    """Split into (odd, even) fields, each resized back to full height.

    Rows are 0-based: the even field holds rows 0, 2, ...; the odd field rows
    1, 3, .... Each field keeps its own rows exactly at their native
    positions and linearly interpolates the others.
    """
    frame = as_field(frame)
    h = frame.height
    if h < 2 or h % 2:
        raise InvalidInputError(f"deinterlace needs an even height >= 2, got {h}")
    out = []
    for parity, start in (("odd", 1), ("even", 0)):
        rows = np.arange(start, h, 2)
        px = _resample_rows(frame.pixels[rows], rows.astype(np.float64), h)
        mask = None
        if frame.mask is not None:
            m = _resample_rows(frame.mask[rows].astype(np.float64), rows.astype(np.float64), h)
            mask = m > 0.999
        out.append(replace(frame, pixels=px, mask=mask, parity=parity))
    return out[0], out[1]


def interleave(odd: Field, even: Field) -> Field:
    """Rebuild a frame from the native rows of an odd and an even field."""
    px = np.array(even.pixels, copy=True)
    px[1::2] = odd.pixels[1::2]
    return replace(even, pixels=px, parity=None, mask=None)


def gaussian_kernel(size: int = 5, sigma: float = 0.5) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    k = np.exp(-0.5 * (r / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(f: Field, kernel: int = 5, sigma: float = 0.5) -> Field:
    f = as_field(f)
    k = gaussian_kernel(kernel, sigma)
    px = correlate1d(f.pixels, k, axis=0, mode="nearest")
    px = correlate1d(px, k, axis=1, mode="nearest")
    return f.with_pixels(px, f.mask)


# --- resampling --------------------------------------------------------------


def _sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray):
    """Bilinear sampling; returns (values, inside) with out-of-bounds zeroed."""
    h, w = img.shape[:2]
    eps = 1e-9
    inside = (xs >= -eps) & (xs <= w - 1 + eps) & (ys >= -eps) & (ys <= h - 1 + eps)
    coords = np.stack([np.clip(ys, 0, h - 1), np.clip(xs, 0, w - 1)])
    if img.ndim == 2:
        vals = map_coordinates(img, coords, order=1, mode="nearest")
        vals = np.where(inside, vals, 0.0)
    else:
        vals = np.stack(
            [map_coordinates(img[..., c], coords, order=1, mode="nearest") for c in range(img.shape[2])],
            axis=-1,
        )
        vals = np.where(inside[..., None], vals, 0.0)
    return vals, inside


def _sample_field(f: Field, ys: np.ndarray, xs: np.ndarray) -> Field:
    vals, inside = _sample(f.pixels, ys, xs)
    if f.mask is not None:
        m, _ = _sample(f.mask.astype(np.float64), ys, xs)
        inside &= m > 0.999
    return f.with_pixels(vals, inside)


def apply_distortion_map(f: Field, map_x: np.ndarray, map_y: np.ndarray) -> Field:
    """Resample so that output (y, x) takes the source at (map_y, map_x)."""
    f = as_field(f)
    map_x = np.asarray(map_x, dtype=np.float64)
    map_y = np.asarray(map_y, dtype=np.float64)
    if map_x.shape != map_y.shape:
        raise InvalidInputError("remap x/y arrays differ in shape")
    return _sample_field(f, map_y, map_x)


def warp(f: Field, t: AffineTransform, shape: Optional[tuple] = None) -> Field:
    """Resample a moving field into the fixed frame defined by ``t``."""
    f = as_field(f)
    if not isinstance(t, AffineTransform):
        t = AffineTransform(t)
    h, w = shape if shape is not None else f.pixels.shape[:2]
    inv = t.inverse()
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    src = inv.apply(np.stack([xs.ravel(), ys.ravel()], axis=1))
    return _sample_field(f, src[:, 1].reshape(h, w), src[:, 0].reshape(h, w))


# --- registration ------------------------------------------------------------


@dataclass
class Registration:
    transform: AffineTransform
    mse: float
    converged: bool
    iterations: int


def _downsample(img: np.ndarray) -> np.ndarray:
    img = gaussian_filter(img, 1.0, mode="nearest")
    return img[::2, ::2]


def _mse_and_grad(moving, mmask, fixed, S, weight, center, half):
    """MSE of moving sampled through S against fixed, with gradient in S.

    S acts on normalised coordinates u = (p - center) / half and returns
    pixel coordinates in the moving image.
    """
    h, w = fixed.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    ux = (xs - center[0]) / half
    uy = (ys - center[1]) / half
    sx = S[0, 0] * ux + S[0, 1] * uy + S[0, 2]
    sy = S[1, 0] * ux + S[1, 1] * uy + S[1, 2]
    vals, inside = _sample(moving, sy, sx)
    mvalid, _ = _sample(mmask, sy, sx)
    gy, gx = np.gradient(moving)
    gxs, _ = _sample(gx, sy, sx)
    gys, _ = _sample(gy, sy, sx)
    wgt = weight & inside & (mvalid > 0.999)
    n = wgt.sum()
    if n < 16:
        return np.inf, np.zeros((2, 3)), np.eye(6)
    r = np.where(wgt, vals - fixed, 0.0)
    mse = float((r * r).sum() / n)
    # Jacobian columns in the row-major order of S: d/dS[0, :] then d/dS[1, :]
    J = np.stack([np.where(wgt, g * b, 0.0).ravel() for g in (gxs, gys) for b in (ux, uy, np.ones_like(ux))])
    grad = 2 * (J @ r.ravel()) / n
    curv = 2 * (J @ J.T) / n
    return mse, grad.reshape(2, 3), curv


def _to_normalised(S_pix, center, half):
    """Pixel sampling map (2x3) -> map acting on normalised coordinates."""
    A = S_pix[:, :2] * half
    b = S_pix[:, :2] @ center + S_pix[:, 2]
    return np.column_stack([A, b])


def _to_pixels(S_norm, center, half):
    A = S_norm[:, :2] / half
    b = S_norm[:, 2] - A @ center
    return np.column_stack([A, b])


def register_affine(
    moving: Field,
    fixed: Field,
    max_iter: int = 200,
    tol: float = 1e-7,
    levels: Optional[int] = None,
    init: Optional[AffineTransform] = None,
) -> Registration:
    """Affine registration minimising mean squared error by gradient descent.

    Descent runs coarse-to-fine over an image pyramid on the sampling map
    (fixed -> moving), with steps preconditioned by the Gauss-Newton
    curvature and a backtracking line search, so every accepted step lowers
    the MSE. Returns the moving -> fixed transform.
    """
    m = as_field(moving).luminance().pixels
    f = as_field(fixed).luminance().pixels
    if m.shape != f.shape:
        raise InvalidInputError("moving and fixed fields differ in shape")
    fmask = as_field(fixed).valid
    mmask = as_field(moving).valid.astype(np.float64)
    if levels is None:
        levels = max(1, min(4, int(np.log2(min(f.shape) / 16)) + 1))
    pyr = [(m, f, fmask, mmask)]
    for _ in range(levels - 1):
        pm, pf, pk, pmk = pyr[-1]
        pyr.append((_downsample(pm), _downsample(pf), pk[::2, ::2], pmk[::2, ::2] > 0.999))

    S = (init.inverse() if init is not None else AffineTransform.identity()).matrix.copy()
    scale = 2.0 ** (levels - 1)
    S[:, 2] /= scale
    total_iter = 0
    converged = False
    mse = np.inf
    for lvl in range(levels - 1, -1, -1):
        pm, pf, pk, pmk = pyr[lvl]
        hh, ww = pf.shape
        center = np.array([(ww - 1) / 2.0, (hh - 1) / 2.0])
        half = max(hh, ww) / 2.0
        Sn = _to_normalised(S, center, half)
        mse, grad, curv = _mse_and_grad(pm, pmk, pf, Sn, pk, center, half)
        step = 1.0
        converged = False
        for _ in range(max_iter):
            total_iter += 1
            damped = curv + np.diag(1e-9 + 1e-6 * np.diag(curv))
            direction = -np.linalg.solve(damped, grad.ravel()).reshape(2, 3)
            accepted = False
            while step > 1e-8:
                S_new = Sn + step * direction
                mse_new, grad_new, curv_new = _mse_and_grad(pm, pmk, pf, S_new, pk, center, half)
                if mse_new < mse:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                converged = True
                break
            rel = (mse - mse_new) / max(mse, 1e-300)
            Sn, mse, grad, curv = S_new, mse_new, grad_new, curv_new
            step = min(1.0, step * 2.0)
            if rel < tol or mse < 1e-20:
                converged = True
                break
        S = _to_pixels(Sn, center, half)
        if lvl > 0:
            S[:, 2] *= 2.0
    result = AffineTransform(S).inverse()
    return Registration(result, float(mse), converged, total_iter)
