"""Photometric stereo: normals, high-pass filtering, height integration, relighting.

Camera frame: +x along image columns, +y along image rows (down), +z toward
the camera. A frontoparallel surface has normal (0, 0, 1). Height gradients
are ``p = dh/dx = -n_x/n_z`` and ``q = dh/dy = -n_y/n_z``.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, replace
from importlib import resources
from typing import Optional, Sequence

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import gaussian_filter

from .imgcore import InvalidInputError, as_field
from .spectral import ConfigurationError

SPECULAR_THRESHOLD = 0.98
NZ_FLOOR = 1e-3


@dataclass(frozen=True)
class LightRig:
    directions: np.ndarray  # (N, 3) unit vectors
    labels: tuple = ()

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=np.float64)
        if d.ndim != 2 or d.shape[1] != 3 or d.shape[0] < 3:
            raise ConfigurationError("a light rig needs at least three 3-vectors")
        if np.any(np.abs(np.linalg.norm(d, axis=1) - 1.0) > 1e-9):
            raise ConfigurationError("light directions must be unit vectors")
        if np.linalg.matrix_rank(d) < 3:
            raise ConfigurationError("light directions are coplanar (rank < 3)")
        labels = tuple(self.labels) or tuple(f"L{i + 1}" for i in range(len(d)))
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_json(cls, path=None) -> "LightRig":
        if path is None:
            text = resources.files("mlekit.data").joinpath("rig_default.json").read_text()
        else:
            with open(path) as fh:
                text = fh.read()
        spec = json.loads(text)
        d = np.asarray(spec["directions"], dtype=np.float64)
        d = d / np.linalg.norm(d, axis=1, keepdims=True)
        return cls(d, tuple(spec.get("labels", ())))

    def to_json(self) -> str:
        return json.dumps({"labels": list(self.labels), "directions": self.directions.tolist()}, indent=2)


def default_rig(tilt_deg: float = 30.0) -> LightRig:
    """Three sources around the lens: upper right, upper left, lower left."""
    t = np.radians(tilt_deg)
    out = []
    for az in (-45.0, -135.0, 135.0):  # image y points down, so "upper" is -y
        a = np.radians(az)
        out.append([np.sin(t) * np.cos(a), np.sin(t) * np.sin(a), np.cos(t)])
    return LightRig(np.array(out), ("L1", "L2", "L3"))


@dataclass
class SurfaceField:
    albedo: np.ndarray
    normal: np.ndarray  # (H, W, 3)
    mask: np.ndarray
    height: Optional[np.ndarray] = None
    highpassed: bool = False
    flagged: Optional[np.ndarray] = None


def _stack_images(images) -> tuple[np.ndarray, np.ndarray]:
    fields = [as_field(im) for im in images]
    px = np.stack([f.pixels for f in fields])
    valid = np.all(np.stack([f.valid for f in fields]), axis=0)
    return px, valid


def inpaint_speculars(images, threshold: float = SPECULAR_THRESHOLD, tol: float = 1e-4,
                      max_iter: int = 20000) -> tuple[list[np.ndarray], np.ndarray]:
    """Fill pixels that reach ``threshold`` in any image by neighbour diffusion.

    Jacobi iterations of the 4-neighbour average (replicate borders) run until
    the largest update falls below ``tol``.
    """
    px, _ = _stack_images(images)
    spec = np.any(px >= threshold, axis=0)
    if not spec.any():
        return [p.copy() for p in px], spec
    out = []
    for img in px:
        u = img.copy()
        good = ~spec
        u[spec] = img[good].mean() if good.any() else 0.0
        for _ in range(max_iter):
            p = np.pad(u, 1, mode="edge")
            avg = 0.25 * (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:])
            delta = np.abs(avg[spec] - u[spec]).max()
            u[spec] = avg[spec]
            if delta < tol:
                break
        out.append(u)
    return out, spec


def solve_normals(images, rig: LightRig, mask: Optional[np.ndarray] = None) -> SurfaceField:
    """Per-pixel least squares of I = S n over all lights."""
    px, valid = _stack_images(images)
    if px.shape[0] != len(rig.directions):
        raise ConfigurationError(f"{px.shape[0]} images for a {len(rig.directions)}-light rig")
    if px.ndim != 3:
        raise InvalidInputError("photometric stereo needs single-channel images")
    n_img, h, w = px.shape
    pinv = np.linalg.pinv(rig.directions)  # (3, N)
    nvec = np.einsum("kn,nhw->hwk", pinv, px)
    mag = np.linalg.norm(nvec, axis=-1)
    ok = valid & (mag >= 1e-6)
    if mask is not None:
        ok &= np.asarray(mask, dtype=bool)
    normal = np.zeros((h, w, 3))
    normal[..., 2] = 1.0
    normal[ok] = nvec[ok] / mag[ok][:, None]
    albedo = np.where(ok, np.pi * mag, 0.0)
    return SurfaceField(albedo, normal, ok)


def _normalised_lowpass(comp: np.ndarray, mask: np.ndarray, sigma: float) -> np.ndarray:
    m = mask.astype(np.float64)
    num = gaussian_filter(comp * m, sigma, mode="nearest")
    den = gaussian_filter(m, sigma, mode="nearest")
    return num / np.maximum(den, 1e-12)


def highpass_normals(sf: SurfaceField, sigma: float = 150.0) -> SurfaceField:
    """Subtract a Gaussian low-pass from each normal component.

    The residual is re-referenced to the frontoparallel normal (+z), its z
    component clamped at zero, then renormalised.
    """
    n = sf.normal
    res = np.empty_like(n)
    for c in range(3):
        res[..., c] = n[..., c] - _normalised_lowpass(n[..., c], sf.mask, sigma)
    res[..., 2] = np.maximum(res[..., 2] + 1.0, 0.0)
    norm = np.linalg.norm(res, axis=-1, keepdims=True)
    res = np.where(norm > 1e-12, res / np.maximum(norm, 1e-12), np.array([0.0, 0.0, 1.0]))
    res[~sf.mask] = (0.0, 0.0, 1.0)
    return replace(sf, normal=res, highpassed=True)


def normals_to_gradients(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    nz = normal[..., 2]
    flagged = nz < NZ_FLOOR
    nz = np.maximum(nz, NZ_FLOOR)
    return -normal[..., 0] / nz, -normal[..., 1] / nz, flagged


def _divergence(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """RHS of the Neumann normal equations for forward-difference gradients."""
    pe = 0.5 * (p[:, :-1] + p[:, 1:])  # gradient on vertical cell edges
    qe = 0.5 * (q[:-1, :] + q[1:, :])
    div = np.zeros_like(p)
    div[:, :-1] += pe
    div[:, 1:] -= pe
    div[:-1, :] += qe
    div[1:, :] -= qe
    return div


def poisson_dct(f: np.ndarray) -> np.ndarray:
    """Solve the cell-centred Neumann Poisson problem L h = f (zero-mean h)."""
    h, w = f.shape
    F = dctn(f, type=2, norm="ortho")
    ky = 2 * np.cos(np.pi * np.arange(h) / h) - 2
    kx = 2 * np.cos(np.pi * np.arange(w) / w) - 2
    denom = ky[:, None] + kx[None, :]
    denom[0, 0] = 1.0
    U = F / denom
    U[0, 0] = 0.0
    return idctn(U, type=2, norm="ortho")


def _laplacian(u: np.ndarray) -> np.ndarray:
    p = np.pad(u, 1, mode="edge")
    return p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4 * u


def _neighbour_count(shape) -> np.ndarray:
    h, w = shape
    c = np.full(shape, 4.0)
    c[0, :] -= 1
    c[-1, :] -= 1
    c[:, 0] -= 1
    c[:, -1] -= 1
    return c


def _smooth(u: np.ndarray, f: np.ndarray, sweeps: int) -> np.ndarray:
    """Red-black Gauss-Seidel on the Neumann Laplacian."""
    cnt = _neighbour_count(u.shape)
    ii, jj = np.indices(u.shape)
    colors = [(ii + jj) % 2 == 0, (ii + jj) % 2 == 1]
    for _ in range(sweeps):
        for col in colors:
            p = np.pad(u, 1, mode="edge")
            nb = p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]
            # edge padding adds the centre value once per missing neighbour
            nb = nb - (4 - cnt) * u
            u = np.where(col, (nb - f) / cnt, u)
    return u


def _restrict(r: np.ndarray) -> np.ndarray:
    return r[0::2, 0::2] + r[1::2, 0::2] + r[0::2, 1::2] + r[1::2, 1::2]


def _prolong(e: np.ndarray, shape) -> np.ndarray:
    return np.kron(e, np.ones((2, 2)))[: shape[0], : shape[1]]


def _coarse_solve(f: np.ndarray) -> np.ndarray:
    h, w = f.shape
    n = h * w
    L = np.zeros((n, n))
    eye = np.eye(n)
    for k in range(n):
        L[:, k] = _laplacian(eye[k].reshape(h, w)).ravel()
    u = np.linalg.lstsq(L, f.ravel(), rcond=None)[0].reshape(h, w)
    return u - u.mean()


def _vcycle(u: np.ndarray, f: np.ndarray, pre=3, post=3) -> np.ndarray:
    h, w = f.shape
    if h * w <= 256 or h % 2 or w % 2:
        if h * w <= 1024:
            return _coarse_solve(f)
        return _smooth(u, f, 200)
    u = _smooth(u, f, pre)
    r = f - _laplacian(u)
    # unscaled 5-point stencil: the coarse residual is the sum over children
    rc = _restrict(r)
    ec = _vcycle(np.zeros_like(rc), rc, pre, post)
    u = u + _prolong(ec, u.shape)
    return _smooth(u, f, post)


def poisson_multigrid(f: np.ndarray, tol: float = 1e-10, max_cycles: int = 200) -> np.ndarray:
    """Multigrid V-cycles on the same discrete problem as :func:`poisson_dct`."""
    f = f - f.mean()
    u = np.zeros_like(f)
    scale = max(np.abs(f).max(), 1e-300)
    for _ in range(max_cycles):
        u = _vcycle(u, f)
        u -= u.mean()
        if np.abs(f - _laplacian(u)).max() < tol * scale:
            break
    return u


def integrate_gradients(p: np.ndarray, q: np.ndarray, method: str = "dct") -> np.ndarray:
    f = _divergence(p, q)
    f = f - f.mean()
    if method == "dct":
        return poisson_dct(f)
    if method == "multigrid":
        return poisson_multigrid(f)
    raise ValueError(f"unknown Poisson method {method!r}")


def normalize_height(h: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Zero-mean, max-|h| = 1 scaling over valid pixels."""
    m = np.ones(h.shape, dtype=bool) if mask is None else mask
    if not m.any():
        return np.zeros_like(h)
    h = h - h[m].mean()
    peak = np.abs(h[m]).max()
    if peak < 1e-12:
        return np.zeros_like(h)
    return np.where(m, h / peak, 0.0)


def integrate_normals(sf: SurfaceField, method: str = "dct", normalize: bool = True) -> SurfaceField:
    p, q, flagged = normals_to_gradients(sf.normal)
    p = np.where(sf.mask, p, 0.0)
    q = np.where(sf.mask, q, 0.0)
    h = integrate_gradients(p, q, method)
    h = normalize_height(h, sf.mask) if normalize else h - h.mean()
    return replace(sf, height=h, flagged=flagged)


def highpass_height(h: np.ndarray, sigma: float = 150.0, mask=None) -> np.ndarray:
    """Height-domain variant of the high-pass (for comparing against rendered truth)."""
    m = np.ones(h.shape, dtype=bool) if mask is None else mask
    return h - _normalised_lowpass(h, m, sigma)


def height_to_normals(h: np.ndarray, relief: float = 1.0) -> np.ndarray:
    gy, gx = np.gradient(h * relief)
    n = np.stack([-gx, -gy, np.ones_like(h)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def render_relit(
    height: np.ndarray,
    light_dir=(0.0, 0.0, 1.0),
    ambient: float = 0.1,
    diffuse: float = 0.7,
    specular: float = 0.2,
    shininess: float = 20.0,
    relief: float = 1.0,
    overlay: Optional[np.ndarray] = None,
    alpha: float = 0.0,
) -> np.ndarray:
    """Phong shading of a height map under one directional light, viewer on +z."""
    n = height_to_normals(np.asarray(height, dtype=np.float64), relief)
    l = np.asarray(light_dir, dtype=np.float64)
    l = l / np.linalg.norm(l)
    ndl = n @ l
    refl = 2 * ndl[..., None] * n - l
    rv = np.clip(refl[..., 2], 0.0, None)
    shade = ambient + diffuse * np.clip(ndl, 0.0, None) + specular * rv**shininess
    if overlay is None:
        return shade
    ov = np.asarray(overlay, dtype=np.float64)
    base = np.repeat(shade[..., None], 3, axis=-1)
    return (1 - alpha) * base + alpha * ov * shade[..., None]


def normals_to_rgb8(normal: np.ndarray) -> np.ndarray:
    """Components scaled from [-1, 1] to bytes as round(127.5 * (c + 1)), halves up."""
    return np.floor(127.5 * (np.clip(normal, -1, 1) + 1.0) + 0.5).astype(np.uint8)


def rgb8_to_normals(rgb: np.ndarray) -> np.ndarray:
    return np.asarray(rgb, dtype=np.float64) / 127.5 - 1.0


class PhotometricStream:
    """Rolling photometric stereo: re-solve whenever a new directional field arrives."""

    def __init__(self, rig: LightRig, highpass_sigma: Optional[float] = 150.0, inpaint: bool = True):
        self.rig = rig
        self.sigma = highpass_sigma
        self.inpaint = inpaint
        self.latest = {}
        self.order = deque(maxlen=len(rig.directions))

    def push(self, image, light_index: int) -> Optional[SurfaceField]:
        if not 0 <= light_index < len(self.rig.directions):
            raise InvalidInputError(f"light index {light_index} outside the rig")
        self.latest[light_index] = image
        if len(self.latest) < len(self.rig.directions):
            return None
        imgs = [self.latest[i] for i in range(len(self.rig.directions))]
        if self.inpaint:
            imgs, _ = inpaint_speculars(imgs)
        sf = solve_normals(imgs, self.rig)
        if self.sigma is not None:
            sf = highpass_normals(sf, self.sigma)
        return integrate_normals(sf)


def surface_pipeline(images: Sequence, rig: LightRig, highpass_sigma: Optional[float] = 150.0,
                     inpaint: bool = True, method: str = "dct") -> SurfaceField:
    if inpaint:
        images, _ = inpaint_speculars(images)
    sf = solve_normals(images, rig)
    if highpass_sigma is not None:
        sf = highpass_normals(sf, highpass_sigma)
    return integrate_normals(sf, method)
