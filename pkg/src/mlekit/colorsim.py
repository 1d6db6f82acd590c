"""Colour rendering from reflectance cubes and spectral-enhancement optimisation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np

from . import kernels
from .imgcore import InvalidInputError, SpectralCube
from .spectral import ConfigurationError

# linear sRGB primaries to XYZ, D65 white
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_D65 = np.array([0.95047, 1.0, 1.08883])

NBI_BANDS_NM = (415.0, 540.0)
NBI_FWHM_NM = 30.0


@dataclass
class SpectralResponse:
    wavelengths_nm: tuple
    illum: np.ndarray  # (n,)
    bayer: np.ndarray  # (3, n)
    omega: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        self.wavelengths_nm = tuple(float(w) for w in self.wavelengths_nm)
        self.illum = np.asarray(self.illum, dtype=np.float64)
        self.bayer = np.asarray(self.bayer, dtype=np.float64)
        self.omega = np.asarray(self.omega, dtype=np.float64)
        n = len(self.wavelengths_nm)
        if self.illum.shape != (n,) or self.bayer.shape != (3, n) or self.omega.shape != (3,):
            raise ConfigurationError("response arrays do not match the wavelength count")
        if np.any(self.illum < 0) or np.any(self.bayer < 0):
            raise ConfigurationError("illumination and Bayer weights must be non-negative")
        if np.any(self.omega <= 0):
            raise ConfigurationError("channel correction factors must be positive")

    @property
    def weights(self) -> np.ndarray:
        """(3, n) effective per-wavelength channel weights."""
        return self.omega[:, None] * self.bayer * self.illum[None, :]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["wavelength_nm", "illum", "bayer_r", "bayer_g", "bayer_b"])
            for i, wl in enumerate(self.wavelengths_nm):
                w.writerow([f"{wl:g}", f"{self.illum[i]:.9g}"] + [f"{self.bayer[c, i]:.9g}" for c in range(3)])


def _read_csv(name_or_path, bundled: bool) -> list[dict]:
    if bundled:
        text = resources.files("mlekit.data").joinpath(name_or_path).read_text()
    else:
        with open(name_or_path, newline="") as fh:
            text = fh.read()
    return list(csv.DictReader(text.splitlines()))


def load_camera_curves(path=None) -> tuple[np.ndarray, np.ndarray]:
    """Densely sampled camera sensitivities: (wavelengths, (3, n) r/g/b)."""
    rows = _read_csv(path or "camera_sensitivity_full.csv", path is None)
    wl = np.array([float(r["wavelength_nm"]) for r in rows])
    rgb = np.array([[float(r[c]) for r in rows] for c in "rgb"])
    return wl, rgb


def channel_correction(illum_full, bayer_full, illum_sparse, bayer_sparse) -> np.ndarray:
    """Ratio of dense to sparse channel energy, per colour channel."""
    dense = (np.asarray(bayer_full) * np.asarray(illum_full)[None]).sum(axis=1)
    sparse = (np.asarray(bayer_sparse) * np.asarray(illum_sparse)[None]).sum(axis=1)
    if np.any(sparse <= 0):
        raise ConfigurationError("a colour channel has zero sparse response")
    return dense / sparse


def load_response(path=None, illum_full=None) -> SpectralResponse:
    """Read a ``wavelength_nm,illum,bayer_r,bayer_g,bayer_b`` asset.

    ``illum_full`` is the dense illumination spectrum on the camera-curve grid
    (flat when omitted) used for the channel correction factors.
    """
    rows = _read_csv(path or "response_default.csv", path is None)
    wl = tuple(float(r["wavelength_nm"]) for r in rows)
    illum = np.array([float(r["illum"]) for r in rows])
    bayer = np.array([[float(r[f"bayer_{c}"]) for r in rows] for c in "rgb"])
    full_wl, full_rgb = load_camera_curves()
    ill_full = np.ones_like(full_wl) if illum_full is None else np.asarray(illum_full, dtype=np.float64)
    omega = channel_correction(ill_full, full_rgb, illum, bayer)
    return SpectralResponse(wl, illum, bayer, omega)


def gaussian_bands(wavelengths_nm, centers=NBI_BANDS_NM, fwhm: float = NBI_FWHM_NM) -> np.ndarray:
    wl = np.asarray(wavelengths_nm, dtype=np.float64)
    s = fwhm / (2 * np.sqrt(2 * np.log(2)))
    return sum(np.exp(-0.5 * ((wl - c) / s) ** 2) for c in centers)


def nbi_response(base: Optional[SpectralResponse] = None) -> SpectralResponse:
    """Two narrow illumination bands with the default camera curves."""
    base = base or load_response()
    full_wl, full_rgb = load_camera_curves()
    illum = gaussian_bands(base.wavelengths_nm)
    omega = channel_correction(gaussian_bands(full_wl), full_rgb, illum, base.bayer)
    return SpectralResponse(base.wavelengths_nm, illum, base.bayer, omega)


def _cube_planes(cube) -> tuple[np.ndarray, np.ndarray, tuple]:
    if isinstance(cube, SpectralCube):
        return cube.planes, cube.mask, cube.wavelengths_nm
    planes = np.asarray(cube, dtype=np.float64)
    return planes, np.ones(planes.shape[1:], dtype=bool), ()


def _check_alignment(wls, resp: SpectralResponse):
    if wls and tuple(float(w) for w in wls) != resp.wavelengths_nm:
        raise ConfigurationError("cube and response wavelengths differ")


def color_balance(rgb: np.ndarray, reference: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-channel least-squares gain that best maps ``rgb`` onto ``reference``."""
    m = np.ones(rgb.shape[:2], dtype=bool) if mask is None else mask
    out = rgb.copy()
    for c in range(3):
        s = rgb[..., c][m]
        den = float(s @ s)
        gain = float(s @ reference[..., c][m]) / den if den > 0 else 1.0
        out[..., c] *= gain
    return out


def render_color(cube, resp: SpectralResponse, reference: Optional[np.ndarray] = None) -> np.ndarray:
    """(H, W, 3) linear RGB: omega_c * sum_l illum(l) R(l) bayer_c(l)."""
    planes, mask, wls = _cube_planes(cube)
    _check_alignment(wls, resp)
    if planes.shape[0] != len(resp.wavelengths_nm):
        raise ConfigurationError("cube plane count does not match the response")
    rgb = np.einsum("cl,lhw->hwc", resp.weights, planes)
    rgb[~mask] = 0.0
    if reference is not None:
        rgb = color_balance(rgb, np.asarray(reference, dtype=np.float64), mask)
    return rgb


def render_nbi(cube, resp: Optional[SpectralResponse] = None, reference=None) -> np.ndarray:
    """Green response drives the red output; blue drives green and blue."""
    resp = resp or nbi_response()
    raw = render_color(cube, resp)
    out = np.stack([raw[..., 1], raw[..., 2], raw[..., 2]], axis=-1)
    if reference is not None:
        _, mask, _ = _cube_planes(cube)
        out = color_balance(out, np.asarray(reference, dtype=np.float64), mask)
    return out


def rescale_to_dataset_mean(cube: SpectralCube, dataset_mean) -> SpectralCube:
    """Scale each wavelength plane so its valid-pixel mean equals ``dataset_mean``."""
    target = np.asarray(dataset_mean, dtype=np.float64)
    if target.shape != (cube.planes.shape[0],):
        raise ConfigurationError("dataset mean vector must have one entry per wavelength")
    if not cube.mask.any():
        raise InvalidInputError("cube has no valid pixels")
    cur = cube.planes[:, cube.mask].mean(axis=1)
    scale = np.where(cur > 0, target / np.where(cur > 0, cur, 1.0), 1.0)
    return SpectralCube(cube.planes * scale[:, None, None], cube.wavelengths_nm, cube.mask.copy())


def normalize_display(rgb, mode: str = "pixel_max", pixel_max: float = 0.8, image_mean: float = 0.4):
    """Brightness normalisation.

    ``pixel_max``: each pixel scaled so its largest channel is ``pixel_max``;
    returns (rgb, degenerate) where degenerate flags all-black pixels left
    unchanged. ``image_mean``: one global gain so the mean equals
    ``image_mean``; returns rgb only.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    if mode == "pixel_max":
        peak = rgb.max(axis=-1, keepdims=True)
        degenerate = peak[..., 0] <= 0
        scale = np.where(peak > 0, pixel_max / np.where(peak > 0, peak, 1.0), 1.0)
        return rgb * scale, degenerate
    if mode == "image_mean":
        m = rgb.mean()
        return rgb * (image_mean / m) if m > 0 else rgb.copy()
    raise ValueError(f"unknown normalisation mode {mode!r}")


def rgb_to_lab(rgb) -> np.ndarray:
    """Linear RGB in [0, 1] to CIE Lab (D65, 2 degree)."""
    xyz = np.asarray(rgb, dtype=np.float64) @ _RGB_TO_XYZ.T / _D65
    eps = 216 / 24389
    kappa = 24389 / 27
    f = np.where(xyz > eps, np.cbrt(xyz), (kappa * xyz + 16) / 116)
    L = 116 * f[..., 1] - 16
    a = 500 * (f[..., 0] - f[..., 1])
    b = 200 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def ciede2000(lab1, lab2, backend=None) -> np.ndarray:
    """CIEDE2000 colour difference (kL = kC = kH = 1), broadcasting over leading axes."""
    a, b = np.broadcast_arrays(np.asarray(lab1, dtype=np.float64), np.asarray(lab2, dtype=np.float64))
    shape = a.shape[:-1]
    impl = backend or kernels
    out = impl.ciede2000(np.ascontiguousarray(a.reshape(-1, 3)), np.ascontiguousarray(b.reshape(-1, 3)))
    return np.asarray(out).reshape(shape)


def mean_pairwise_de(lab_a: np.ndarray, lab_b: np.ndarray) -> float:
    """Mean CIEDE2000 over every (a_i, b_j) pair."""
    na, nb = len(lab_a), len(lab_b)
    A = np.repeat(lab_a, nb, axis=0)
    B = np.tile(lab_b, (na, 1))
    return float(ciede2000(A, B).mean())


def sample_roi(cube, roi_mask, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` valid pixel spectra (with replacement if the ROI is smaller)."""
    planes, mask, _ = _cube_planes(cube)
    sel = np.flatnonzero(np.asarray(roi_mask, dtype=bool) & mask)
    if sel.size == 0:
        raise InvalidInputError("ROI has no valid pixels")
    idx = rng.choice(sel, size=n, replace=sel.size < n)
    return planes.reshape(planes.shape[0], -1)[:, idx].T


def separation(spectra_a, spectra_b, weights: np.ndarray, illum=None) -> float:
    """Mean pairwise CIEDE2000 between two spectra sets rendered with (3, n) weights."""
    ill = 1.0 if illum is None else np.asarray(illum)[None, :]
    W = np.asarray(weights) * ill
    labs = []
    for s in (spectra_a, spectra_b):
        rgb, _ = normalize_display(np.asarray(s) @ W.T)
        labs.append(rgb_to_lab(rgb))
    return mean_pairwise_de(*labs)


@dataclass
class OptimizationResult:
    response: SpectralResponse
    trace: np.ndarray
    initial: float
    aborted: bool = False


def optimize_se(
    cube,
    normal_mask,
    lesion_mask,
    n_pixels: int = 100,
    init: Optional[SpectralResponse] = None,
    lr: float = 0.05,
    iters: int = 60,
    seed: int = 0,
    h: float = 1e-4,
) -> OptimizationResult:
    """Projected gradient ascent of the lesion/normal CIEDE2000 separation.

    Camera weights (3 x n wavelengths) are non-negative; the illumination of
    ``init`` is held fixed. Gradients are central differences. A step is only
    accepted if it does not lower the objective (step halved up to 30 times),
    so the returned trace never decreases.
    """
    rng = np.random.default_rng(seed)
    init = init or load_response()
    _, _, wls = _cube_planes(cube)
    _check_alignment(wls, init)
    a = sample_roi(cube, normal_mask, n_pixels, rng)
    b = sample_roi(cube, lesion_mask, n_pixels, rng)
    illum = init.illum

    W = init.omega[:, None] * init.bayer
    W = W / W.max()
    f = separation(a, b, W, illum)
    trace = [f]
    aborted = not np.isfinite(f)
    step = lr
    for _ in range(0 if aborted else iters):
        g = np.zeros_like(W)
        for idx in np.ndindex(W.shape):
            up, dn = W.copy(), W.copy()
            up[idx] += h
            dn[idx] = max(dn[idx] - h, 0.0)
            g[idx] = (separation(a, b, up, illum) - separation(a, b, dn, illum)) / (up[idx] - dn[idx])
        if not np.all(np.isfinite(g)):
            aborted = True
            break
        gn = np.abs(g).max()
        if gn == 0:
            break
        accepted = False
        for _ in range(30):
            trial = np.maximum(W + step * g / gn, 0.0)
            if trial.max() > 0:
                trial = trial / trial.max()
                ft = separation(a, b, trial, illum)
                if np.isfinite(ft) and ft >= f:
                    W, f, accepted = trial, ft, True
                    break
            step *= 0.5
        trace.append(f)
        if not accepted:
            break
        step = min(step * 2.0, lr)
    resp = SpectralResponse(init.wavelengths_nm, illum, W, np.ones(3))
    return OptimizationResult(resp, np.array(trace), trace[0], aborted)
