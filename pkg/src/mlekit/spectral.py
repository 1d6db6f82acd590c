"""Reflectance normalisation and haemoglobin unmixing.

Absorbance ``A = -log10(R)`` is modelled per pixel as
``eps_hbo2 * x1 + eps_hb * x2 + O`` with ``x1, x2 >= 0`` (concentration times
path length) and a free offset ``O``. Oxygen saturation is ``x1 / (x1 + x2)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .imgcore import InvalidInputError, SpectralCube, as_field

PAPER_WAVELENGTHS = (406.0, 446.0, 468.0, 522.0, 543.0, 562.0, 635.0, 657.0)

WHITE_FLOOR = 1e-3
SATURATION_LEVEL = 0.995
RESCALE_DELTA = 1e-3
HB_FLOOR = 1e-6


class ConfigurationError(ValueError):
    """Static setup (tables, rigs, responses) cannot support the requested solve."""


@dataclass(frozen=True)
class ExtinctionTable:
    wavelengths_nm: tuple
    eps_hbo2: np.ndarray
    eps_hb: np.ndarray

    def __post_init__(self):
        e1 = np.asarray(self.eps_hbo2, dtype=np.float64)
        e2 = np.asarray(self.eps_hb, dtype=np.float64)
        if e1.shape != e2.shape or e1.shape != (len(self.wavelengths_nm),):
            raise ConfigurationError("extinction columns do not match wavelengths")
        if np.any(e1 <= 0) or np.any(e2 <= 0):
            raise ConfigurationError("extinction coefficients must be strictly positive")
        object.__setattr__(self, "wavelengths_nm", tuple(float(w) for w in self.wavelengths_nm))
        object.__setattr__(self, "eps_hbo2", e1)
        object.__setattr__(self, "eps_hb", e2)

    def aligned(self, wavelengths_nm: Sequence[float]) -> "ExtinctionTable":
        """Subset/reorder to exactly ``wavelengths_nm``."""
        idx = []
        for w in wavelengths_nm:
            try:
                idx.append(self.wavelengths_nm.index(float(w)))
            except ValueError:
                raise ConfigurationError(f"no extinction coefficients at {w} nm") from None
        return ExtinctionTable(tuple(wavelengths_nm), self.eps_hbo2[idx], self.eps_hb[idx])

    @property
    def design(self) -> np.ndarray:
        """(n_wavelengths, 3) design matrix [eps_hbo2, eps_hb, 1]."""
        return np.column_stack([self.eps_hbo2, self.eps_hb, np.ones_like(self.eps_hb)])


def load_extinction(path=None) -> ExtinctionTable:
    """Read ``wavelength_nm,eps_hbo2,eps_hb`` CSV; defaults to the bundled table."""
    if path is None:
        text = resources.files("mlekit.data").joinpath("hb_extinction.csv").read_text()
    else:
        with open(path, newline="") as fh:
            text = fh.read()
    rows = list(csv.DictReader(text.splitlines()))
    return ExtinctionTable(
        tuple(float(r["wavelength_nm"]) for r in rows),
        [float(r["eps_hbo2"]) for r in rows],
        [float(r["eps_hb"]) for r in rows],
    )


@dataclass
class ChromophoreMaps:
    chbo2_L: np.ndarray
    chb_L: np.ndarray
    offset: np.ndarray
    sto2: np.ndarray
    mask: np.ndarray

    @property
    def thb_L(self) -> np.ndarray:
        return self.chbo2_L + self.chb_L


def _stack(planes) -> np.ndarray:
    if isinstance(planes, SpectralCube):
        return planes.planes
    if isinstance(planes, np.ndarray):
        return np.asarray(planes, dtype=np.float64)
    return np.stack([as_field(p).pixels for p in planes])


def normalize_reflectance(
    raw,
    white,
    wavelengths_nm: Sequence[float],
    pulse_widths,
    white_pulse_widths=None,
    raw_wavelengths_nm: Optional[Sequence[float]] = None,
    white_wavelengths_nm: Optional[Sequence[float]] = None,
) -> SpectralCube:
    """Duty-cycle corrected ratio of sample to white reference.

    ``raw`` and ``white`` are per-wavelength planes (sequence of Fields, a
    (n, H, W) array, or SpectralCube). Pulse widths are per wavelength, in ms.
    Pixels where the white reference is below ``WHITE_FLOOR`` or the raw value
    is at or above ``SATURATION_LEVEL`` are masked.
    """
    if raw_wavelengths_nm is not None and white_wavelengths_nm is not None:
        if [float(w) for w in raw_wavelengths_nm] != [float(w) for w in white_wavelengths_nm]:
            raise InvalidInputError("raw and white reference wavelength sets differ")
    R = _stack(raw)
    W = _stack(white)
    if R.shape != W.shape:
        raise InvalidInputError("raw and white reference stacks differ in shape")
    n = R.shape[0]
    if len(wavelengths_nm) != n:
        raise InvalidInputError("wavelength list does not match the number of planes")
    pw = np.broadcast_to(np.asarray(pulse_widths, dtype=np.float64), (n,))
    pw_white = pw if white_pulse_widths is None else np.broadcast_to(
        np.asarray(white_pulse_widths, dtype=np.float64), (n,)
    )
    if np.any(pw <= 0) or np.any(pw_white <= 0):
        raise InvalidInputError("pulse widths must be positive")
    mask = np.all(W >= WHITE_FLOOR, axis=0) & np.all(R < SATURATION_LEVEL, axis=0)
    safe_w = np.where(W >= WHITE_FLOOR, W, 1.0)
    refl = (R / pw[:, None, None]) / (safe_w / pw_white[:, None, None])
    refl = np.where(mask[None], refl, 0.0)
    return SpectralCube(refl, wavelengths_nm, mask)


def cube_rescale(cube: SpectralCube, delta: float = RESCALE_DELTA) -> SpectralCube:
    """Divide by (max valid reflectance + delta) so values fall strictly below 1."""
    if cube.mask.any():
        peak = float(cube.planes[:, cube.mask].max())
    else:
        peak = 0.0
    return SpectralCube(cube.planes / (peak + delta), cube.wavelengths_nm, cube.mask.copy())


def absorbance(cube: SpectralCube) -> tuple[np.ndarray, np.ndarray]:
    """Return (A planes, mask); pixels with any non-positive R are masked."""
    mask = cube.mask & np.all(cube.planes > 0, axis=0)
    R = np.where(mask[None], cube.planes, 1.0)
    return -np.log10(R), mask


class Unmixer:
    """Per-pixel NNLS solver bound to one extinction table.

    The free offset is eliminated by centring each spectrum across
    wavelengths; the remaining two non-negative unknowns are solved with
    column-normalised Lawson-Hanson on the shared Gram matrix.
    """

    def __init__(self, table: ExtinctionTable, backend=None):
        E = np.column_stack([table.eps_hbo2, table.eps_hb])
        m = E.shape[0]
        if m < 3:
            raise ConfigurationError("unmixing needs at least 3 wavelengths")
        if np.linalg.matrix_rank(table.design) < 3:
            raise ConfigurationError("design matrix [eps_hbo2, eps_hb, 1] is rank deficient")
        Ec = E - E.mean(axis=0)
        self.col_scale = np.linalg.norm(Ec, axis=0)
        self.Ec = Ec / self.col_scale
        self.E_mean = E.mean(axis=0)
        self.G = np.ascontiguousarray(self.Ec.T @ self.Ec)
        self.table = table
        self.nnls = backend.nnls_gram if backend is not None else kernels.nnls_gram

    def solve(self, A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """A: (n_pixels, n_wavelengths). Returns (x (n,2), offset (n,))."""
        A = np.asarray(A, dtype=np.float64)
        Am = A.mean(axis=1)
        H = np.ascontiguousarray((A - Am[:, None]) @ self.Ec)
        X = self.nnls(self.G, H) / self.col_scale
        offset = Am - X @ self.E_mean
        return X, offset


def unmix(A, table: ExtinctionTable, mask: Optional[np.ndarray] = None, backend=None) -> ChromophoreMaps:
    """Unmix absorbance planes (n_wavelengths, H, W) into chromophore maps."""
    if isinstance(A, tuple):
        A, mask = A
    A = np.asarray(A, dtype=np.float64)
    n, h, w = A.shape
    if len(table.wavelengths_nm) != n:
        raise ConfigurationError("extinction table is not aligned to the absorbance planes")
    if mask is None:
        mask = np.ones((h, w), dtype=bool)
    mask = np.asarray(mask, dtype=bool) & np.all(np.isfinite(A), axis=0)
    solver = Unmixer(table, backend)
    X, O = solver.solve(A[:, mask].T)
    x1 = np.zeros((h, w))
    x2 = np.zeros((h, w))
    off = np.zeros((h, w))
    x1[mask], x2[mask], off[mask] = X[:, 0], X[:, 1], O
    total = x1 + x2
    valid = mask & (total >= HB_FLOOR)
    sto2 = np.where(valid, x1 / np.where(valid, total, 1.0), 0.0)
    return ChromophoreMaps(x1, x2, off, np.clip(sto2, 0.0, 1.0), valid)


def sto2_map(cube: SpectralCube, table: Optional[ExtinctionTable] = None, rescale: bool = True) -> ChromophoreMaps:
    """Cube -> chromophore maps, with the max-reflectance rescale applied first."""
    table = (table or load_extinction()).aligned(cube.wavelengths_nm)
    if rescale:
        cube = cube_rescale(cube)
    return unmix(absorbance(cube), table)


def _roi_mask(roi, shape) -> np.ndarray:
    if roi is None:
        return np.ones(shape, dtype=bool)
    if isinstance(roi, np.ndarray) and roi.dtype == bool:
        return roi
    m = np.zeros(shape, dtype=bool)
    m[roi] = True
    return m


def square_roi(center_row: int, center_col: int, size: int = 50) -> tuple:
    """Slices for a ``size`` x ``size`` region centred on a pixel."""
    r0 = center_row - size // 2
    c0 = center_col - size // 2
    return (slice(r0, r0 + size), slice(c0, c0 + size))


def sto2_timeseries(maps: Sequence[ChromophoreMaps], roi=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-map mean and (population) standard deviation of valid ROI pixels."""
    means, stds = [], []
    for cm in maps:
        sel = _roi_mask(roi, cm.sto2.shape) & cm.mask
        vals = cm.sto2[sel]
        if vals.size == 0:
            means.append(np.nan)
            stds.append(np.nan)
        else:
            means.append(vals.mean())
            stds.append(vals.std())
    return np.array(means), np.array(stds)
