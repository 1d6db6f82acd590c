"""Secant-style auto-exposure and related per-diode mappings."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

I_TARGET = 128.0
I_MAX = 255.0
P_MAX_MS = 14.0
P_MIN_MS = 0.010

OK, SATURATED, DIVERGED = "ok", "saturated", "diverged"


@dataclass
class ExposureState:
    i_target: float = I_TARGET
    i_max: float = I_MAX
    p_max: float = P_MAX_MS
    p_min: float = P_MIN_MS
    history: list = field(default_factory=list)  # (P_n, I_n, P_{n+1}, status)


def secant_step(i_n: float, p_n: float, state: ExposureState | None = None) -> tuple[float, str]:
    """One pulse-width update and its status.

    Lines through (P_max, I_max) in 1/P space are root-solved for the
    target. A non-positive numerator (frame at or above I_max) returns
    P_min; this check runs before the divergence guard, so the degenerate
    0/0 corner at (P_max, I_max) also resolves to P_min.
    """
    s = state or ExposureState()
    if not 0 < p_n <= s.p_max + 1e-12:
        raise ValueError(f"pulse width {p_n} ms outside (0, {s.p_max}]")
    if not 0 <= i_n <= s.i_max:
        raise ValueError(f"intensity {i_n} outside [0, {s.i_max}]")
    num = (s.i_max - i_n) * p_n * s.p_max
    if num <= 0:
        return s.p_min, SATURATED
    den = (s.i_target - i_n) * p_n + (s.i_max - s.i_target) * s.p_max
    if den <= 0:
        return s.p_max, DIVERGED
    return float(np.clip(num / den, s.p_min, s.p_max)), OK


def auto_exposure_update(i_n: float, p_n: float, state: ExposureState | None = None) -> float:
    """Next pulse width (ms); the step is appended to ``state.history`` when given."""
    p, status = secant_step(i_n, p_n, state)
    if state is not None:
        state.history.append((p_n, i_n, p, status))
    return p


def iterate_exposure(scene, p0: float, n_updates: int, state: ExposureState | None = None) -> np.ndarray:
    """Zero-delay iteration: returns [P_0, ..., P_n]."""
    s = state or ExposureState()
    ps = [p0]
    for _ in range(n_updates):
        ps.append(auto_exposure_update(float(np.clip(scene(ps[-1]), 0, s.i_max)), ps[-1], s))
    return np.array(ps)


def select_exposure_channel(wavelength_nm, bayer=None, wavelengths_nm=None):
    """Index of the colour channel with the highest transmissivity at a diode.

    Without explicit weights the bundled dense camera curves are interpolated.

    ``wavelength_nm='white'`` (or None) selects the three-channel average and
    returns ``'average'``. Ties go to the lowest channel index.
    """
    if wavelength_nm is None or wavelength_nm == "white":
        return "average"
    if bayer is None:
        from ..colorsim import load_camera_curves

        grid, curves = load_camera_curves()
        col = np.array([np.interp(float(wavelength_nm), grid, c) for c in curves])
        return int(np.argmax(col))
    wls = [float(w) for w in wavelengths_nm]
    try:
        col = np.asarray(bayer)[:, wls.index(float(wavelength_nm))]
    except ValueError:
        raise ValueError(f"no Bayer weights at {wavelength_nm} nm") from None
    return int(np.argmax(col))


def exposure_intensity(channel_means, channel) -> float:
    m = np.asarray(channel_means, dtype=np.float64)
    return float(m.mean()) if channel == "average" else float(m[channel])


def hwp_angle(p_ms: float, p_max: float = P_MAX_MS) -> float:
    """Half-wave-plate angle (deg): 0 ms -> 0, P_max -> 45, clamped."""
    return float(np.clip(45.0 * p_ms / p_max, 0.0, 45.0))
