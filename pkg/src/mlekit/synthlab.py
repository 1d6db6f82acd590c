"""Seeded synthetic phantoms with known ground truth.

Every generator takes an explicit seed (or ``numpy.random.Generator``) and is
deterministic under it.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import binary_dilation, binary_erosion, gaussian_filter

from .imgcore import AffineTransform, Field, SpectralCube, warp
from .pse import LightRig, default_rig, height_to_normals
from .spectral import PAPER_WAVELENGTHS, ExtinctionTable, load_extinction

KINDS = ("speckle_flow", "vessel_sequence", "lambertian_surface", "spectral_scene", "macbeth")


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


# ---------------------------------------------------------------- speckle


def _complex_gaussian(shape, rng) -> np.ndarray:
    return (rng.normal(size=shape) + 1j * rng.normal(size=shape)) / np.sqrt(2)


def _band_limit(e: np.ndarray, grain: float) -> np.ndarray:
    """Circular pupil giving roughly ``grain``-pixel speckles (1 = independent pixels)."""
    if grain <= 1:
        return e
    h, w = e.shape
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    pupil = np.hypot(fx, fy) <= 0.5 / grain
    out = np.fft.ifft2(np.fft.fft2(e) * pupil)
    return out / np.sqrt(np.mean(np.abs(out) ** 2))


def gen_static_speckle(shape=(128, 128), seed=0, grain: float = 1.0, mean: float = 0.1) -> np.ndarray:
    """Fully developed polarised speckle intensity (exponential statistics)."""
    rng = _rng(seed)
    e = _band_limit(_complex_gaussian(shape, rng), grain)
    return mean * np.abs(e) ** 2


def correlation_time_ms(velocity_mm_s: float, tau0: float = 20.0) -> float:
    """Field correlation time, inversely proportional to scatterer velocity."""
    return np.inf if velocity_mm_s <= 0 else tau0 / velocity_mm_s


def theoretical_contrast(exposure_ms: float, tau_c_ms: float) -> float:
    """K for an exponential field correlation (Lorentzian spectrum), unit coherence factor."""
    if not np.isfinite(tau_c_ms):
        return 1.0
    x = exposure_ms / tau_c_ms
    return float(np.sqrt((np.exp(-2 * x) - 1 + 2 * x) / (2 * x * x)))


def _integrate_exposure(e0: np.ndarray, rho: float, n_steps: int, rng) -> np.ndarray:
    """Time-average |E|^2 of an AR(1) complex field over ``n_steps`` sub-exposures."""
    e = e0.copy()
    acc = np.abs(e) ** 2
    innov = np.sqrt(max(1.0 - rho * rho, 0.0))
    for _ in range(n_steps - 1):
        e = rho * e + innov * _complex_gaussian(e.shape, rng)
        acc += np.abs(e) ** 2
    return acc / n_steps


@dataclass
class SpeckleSequence:
    frames: list  # Field
    channel_mask: np.ndarray
    velocity_mm_s: float
    exposure_ms: float
    tau_c_ms: float


def gen_dynamic_speckle(
    velocity_mm_s: float,
    exposure_ms: float,
    frames: int = 3,
    shape=(64, 96),
    channel_rows: Optional[tuple] = None,
    dt_ms: float = 0.1,
    tau0: float = 20.0,
    mean: float = 0.1,
    seed=0,
) -> SpeckleSequence:
    """Speckle frames of a flow channel embedded in a static background.

    Inside the channel the complex field decorrelates as exp(-t / tau_c),
    tau_c = tau0 / velocity; each frame integrates ``exposure / dt``
    sub-exposures. The background keeps one static realisation per frame.
    """
    rng = _rng(seed)
    h, w = shape
    r0, r1 = channel_rows or (h // 2 - h // 8, h // 2 + h // 8)
    chan = np.zeros(shape, dtype=bool)
    chan[r0:r1] = True
    tau_c = correlation_time_ms(velocity_mm_s, tau0)
    n_steps = max(1, int(round(exposure_ms / dt_ms)))
    rho = 0.0 if tau_c == 0 else float(np.exp(-dt_ms / tau_c)) if np.isfinite(tau_c) else 1.0
    out = []
    for _ in range(frames):
        img = np.abs(_complex_gaussian(shape, rng)) ** 2
        img[chan] = _integrate_exposure(_complex_gaussian(int(chan.sum()), rng), rho, n_steps, rng)
        out.append(Field(np.clip(mean * img, 0.0, 1.0)))
    return SpeckleSequence(out, chan, velocity_mm_s, exposure_ms, tau_c)


def flow_sweep(
    velocities: Sequence[float] = tuple(np.round(np.arange(0.4, 2.21, 0.2), 2)),
    exposures: Sequence[float] = (3.0, 5.0, 7.0, 9.0, 11.0, 13.0),
    frames: int = 2,
    seed: int = 0,
    **kw,
) -> list[dict]:
    """Channel and background K for each (velocity, exposure) pair.

    Every condition reuses the same random stream (common random numbers),
    so differences between conditions reflect the parameters rather than
    sampling noise.
    """
    from .lsci import speckle_contrast

    rows = []
    for t in exposures:
        for v in velocities:
            seq = gen_dynamic_speckle(v, t, frames=frames, seed=seed, **kw)
            # keep 5x5 windows from straddling the channel edge
            inner = binary_erosion(seq.channel_mask, iterations=2)
            bg = ~binary_dilation(seq.channel_mask, iterations=2)
            ks = [speckle_contrast(f).k for f in seq.frames]
            rows.append(
                {
                    "velocity": float(v),
                    "exposure": float(t),
                    "k_channel": float(np.mean([k[inner].mean() for k in ks])),
                    "k_background": float(np.mean([k[bg].mean() for k in ks])),
                }
            )
    return rows


@dataclass
class VesselScene:
    speckle: list  # Field per frame
    color: list  # Field per frame (RGB)
    vessel_mask: np.ndarray
    shifts: np.ndarray  # (frames, 2) true (dx, dy) of each frame


def gen_vessel_sequence(
    frames: int = 15,
    shape=(96, 96),
    exposure_ms: float = 5.0,
    vessel_velocity: float = 4.0,
    tissue_velocity: float = 0.5,
    max_shift: float = 1.5,
    seed=0,
) -> VesselScene:
    """Perfused-tissue scene: a fast vessel crossing slower tissue, with frame jitter.

    Each frame is displaced by a random sub-pixel translation; the paired
    white-light field carries a fixed texture moved by the same transform.
    """
    rng = _rng(seed)
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    centre = h / 2 + 8 * np.sin(2 * np.pi * xx / w)
    vessel = np.abs(yy - centre) < 6
    texture = gaussian_filter(rng.normal(size=(h, w)), 3.0)
    texture = (texture - texture.min()) / (texture.max() - texture.min())
    base_rgb = np.stack([0.55 + 0.35 * texture, 0.35 + 0.25 * texture, 0.30 + 0.2 * texture], axis=-1)
    base_rgb[vessel] *= (1.0, 0.6, 0.6)
    n_steps = max(1, int(round(exposure_ms / 0.1)))
    rho_v = float(np.exp(-0.1 / correlation_time_ms(vessel_velocity)))
    rho_t = float(np.exp(-0.1 / correlation_time_ms(tissue_velocity)))
    speckle, color, shifts = [], [], []
    for i in range(frames):
        img = np.empty((h, w))
        img[vessel] = _integrate_exposure(_complex_gaussian(int(vessel.sum()), rng), rho_v, n_steps, rng)
        img[~vessel] = _integrate_exposure(_complex_gaussian(int((~vessel).sum()), rng), rho_t, n_steps, rng)
        dx, dy = (0.0, 0.0) if i == frames // 2 else rng.uniform(-max_shift, max_shift, 2)
        t = AffineTransform.from_params(tx=dx, ty=dy)
        sp = warp(Field(np.clip(0.25 * img, 0, 1)), t)
        cf = warp(Field(base_rgb), t)
        speckle.append(sp)
        color.append(cf)
        shifts.append((dx, dy))
    return VesselScene(speckle, color, vessel, np.array(shifts))


# ---------------------------------------------------------------- surfaces


def bump_height(shape=(64, 64), amplitude: float = 5.0, sigma: float = 8.0, center=None) -> np.ndarray:
    h, w = shape
    cy, cx = center or ((h - 1) / 2, (w - 1) / 2)
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    return amplitude * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * sigma**2))


def sphere_cap_height(shape=(64, 64), radius: float = 40.0, center=None) -> np.ndarray:
    h, w = shape
    cy, cx = center or ((h - 1) / 2, (w - 1) / 2)
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    r2 = (x - cx) ** 2 + (y - cy) ** 2
    return np.sqrt(np.clip(radius**2 - r2, 0.0, None))


def colon_height(shape=(256, 256), seed=0) -> np.ndarray:
    """Haustral folds plus a few sessile bumps on a slowly curving wall."""
    rng = _rng(seed)
    h, w = shape
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    folds = 3.0 * np.sin(2 * np.pi * (x + 0.3 * y) / 48.0)
    wall = 40.0 * ((x - w / 2) ** 2 + (y - h / 2) ** 2) / (w * w)
    height = folds + wall
    for _ in range(4):
        cy, cx = rng.uniform(0.2, 0.8, 2) * (h, w)
        height += bump_height(shape, rng.uniform(3, 8), rng.uniform(6, 14), (cy, cx))
    return height


@dataclass
class LambertianScene:
    images: list  # np.ndarray per light
    normals: np.ndarray
    height: np.ndarray
    albedo: np.ndarray
    rig: LightRig


def gen_lambertian_scene(
    height,
    rig: Optional[LightRig] = None,
    albedo=0.8,
    noise: float = 0.0,
    seed=0,
    shape=(64, 64),
) -> LambertianScene:
    """Render I_n = (albedo / pi) * max(s_n . n, 0) for each light of the rig."""
    rng = _rng(seed)
    rig = rig or default_rig()
    hmap = height(shape) if callable(height) else np.asarray(height, dtype=np.float64)
    normals = height_to_normals(hmap)
    rho = np.broadcast_to(np.asarray(albedo, dtype=np.float64), hmap.shape).copy()
    images = []
    for s in rig.directions:
        img = rho / np.pi * np.clip(normals @ s, 0.0, None)
        if noise > 0:
            img = img + rng.normal(0.0, noise, img.shape)
        images.append(img)
    return LambertianScene(images, normals, hmap, rho, rig)


# ---------------------------------------------------------------- spectra


def gen_spectral_scene(
    sto2: np.ndarray,
    thb: np.ndarray,
    offset=0.05,
    table: Optional[ExtinctionTable] = None,
    wavelengths_nm: Sequence[float] = PAPER_WAVELENGTHS,
    noise: float = 0.0,
    seed=0,
) -> SpectralCube:
    """Forward Beer-Lambert: R = 10^-(eps_HbO2 * sto2 * thb + eps_Hb * (1 - sto2) * thb + O).

    ``noise`` is the relative standard deviation of multiplicative Gaussian
    noise on reflectance.
    """
    rng = _rng(seed)
    table = (table or load_extinction()).aligned(wavelengths_nm)
    sto2 = np.asarray(sto2, dtype=np.float64)
    thb = np.broadcast_to(np.asarray(thb, dtype=np.float64), sto2.shape)
    off = np.broadcast_to(np.asarray(offset, dtype=np.float64), sto2.shape)
    x1 = sto2 * thb
    x2 = (1.0 - sto2) * thb
    A = table.eps_hbo2[:, None, None] * x1 + table.eps_hb[:, None, None] * x2 + off
    R = 10.0 ** (-A)
    if noise > 0:
        R = R * (1.0 + noise * rng.normal(size=R.shape))
    R = np.clip(R, 1e-9, None)
    return SpectralCube(R, tuple(wavelengths_nm))


def checkerboard(shape, block: int, values=(0.3, 0.7)) -> np.ndarray:
    y, x = np.indices(shape)
    return np.where(((y // block) + (x // block)) % 2 == 0, values[0], values[1])


def load_macbeth_spectra(path=None) -> tuple[list, np.ndarray]:
    if path is None:
        text = resources.files("mlekit.data").joinpath("macbeth_spectra.csv").read_text()
    else:
        with open(path, newline="") as fh:
            text = fh.read()
    rows = list(csv.reader(text.splitlines()))
    names = [r[0] for r in rows[1:]]
    spectra = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return names, spectra


def gen_macbeth_cube(
    path=None, patch: int = 20, gap: int = 4, cols: int = 6, wavelengths_nm=PAPER_WAVELENGTHS
) -> tuple[SpectralCube, dict]:
    """Chart of uniform patches on a black surround; returns the cube and patch slices."""
    names, spectra = load_macbeth_spectra(path)
    rows = int(np.ceil(len(names) / cols))
    h = rows * (patch + gap) + gap
    w = cols * (patch + gap) + gap
    planes = np.full((len(wavelengths_nm), h, w), 0.02)
    rois = {}
    for i, (name, spec) in enumerate(zip(names, spectra)):
        r, c = divmod(i, cols)
        y0, x0 = gap + r * (patch + gap), gap + c * (patch + gap)
        sl = (slice(y0, y0 + patch), slice(x0, x0 + patch))
        planes[:, sl[0], sl[1]] = spec[:, None, None]
        rois[name] = sl
    return SpectralCube(planes, tuple(wavelengths_nm)), rois


# ---------------------------------------------------------------- spec dispatch


@dataclass
class PhantomSpec:
    kind: str
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown phantom kind {self.kind!r}; expected one of {KINDS}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PhantomSpec":
        return cls(**json.loads(text))


def generate(spec: PhantomSpec) -> dict:
    """Named arrays for a phantom spec (used by the command line)."""
    p = dict(spec.params)
    if spec.kind == "speckle_flow":
        seq = gen_dynamic_speckle(
            p.get("velocity", 1.0), p.get("exposure", 5.0), frames=p.get("frames", 3),
            shape=tuple(p.get("shape", (64, 96))), seed=spec.seed,
        )
        return {"frames": np.stack([f.pixels for f in seq.frames]), "channel_mask": seq.channel_mask}
    if spec.kind == "vessel_sequence":
        scene = gen_vessel_sequence(p.get("frames", 15), tuple(p.get("shape", (96, 96))), seed=spec.seed)
        return {
            "frames": np.stack([f.pixels for f in scene.speckle]),
            "color": np.stack([f.luminance().pixels for f in scene.color]),
            "vessel_mask": binary_erosion(scene.vessel_mask, iterations=3),
            "background_mask": binary_erosion(~scene.vessel_mask, iterations=6),
        }
    if spec.kind == "lambertian_surface":
        shape = tuple(p.get("shape", (64, 64)))
        height = bump_height(shape, p.get("amplitude", 5.0), p.get("sigma", 8.0))
        scene = gen_lambertian_scene(height, albedo=p.get("albedo", 0.8), noise=p.get("noise", 0.0), seed=spec.seed)
        return {"images": np.stack(scene.images), "height": scene.height, "normals": scene.normals,
                "rig": scene.rig}
    if spec.kind == "spectral_scene":
        shape = tuple(p.get("shape", (64, 64)))
        sto2 = checkerboard(shape, p.get("block", 8), tuple(p.get("values", (0.3, 0.7))))
        cube = gen_spectral_scene(sto2, p.get("thb", 3e-6), p.get("offset", 0.05), noise=p.get("noise", 0.0),
                                  seed=spec.seed)
        return {"cube": cube, "sto2": sto2}
    cube, rois = gen_macbeth_cube(patch=p.get("patch", 20))
    return {"cube": cube, "rois": rois}
