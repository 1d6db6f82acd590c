"""Laser speckle contrast, flow contrast and registered temporal averaging."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import median_filter

from . import kernels
from .imgcore import Field, InvalidInputError, as_field, register_affine, warp

MEAN_FLOOR = 1e-4
K_FLOOR = 1e-3


@dataclass
class ContrastMap:
    k: np.ndarray
    window: int
    mask: np.ndarray


@dataclass
class FlowMap:
    v: np.ndarray
    frames_averaged: int
    mask: np.ndarray
    dropped: int = 0


def speckle_contrast(f, window: int = 5, backend=None) -> ContrastMap:
    """Local sigma/mean over a ``window`` x ``window`` neighbourhood.

    sigma is the sample standard deviation (n - 1 normalisation) of the
    window, with replicate borders so every window holds ``window**2`` values.
    """
    f = as_field(f)
    if f.channels != 1:
        raise InvalidInputError("speckle contrast needs a single-channel field")
    if window < 3 or window % 2 == 0:
        raise InvalidInputError("window must be an odd size of at least 3")
    impl = backend or kernels
    mean, std = impl.local_contrast(np.ascontiguousarray(f.pixels), int(window))
    n = window * window
    std = std * np.sqrt(n / (n - 1))
    mask = (mean >= MEAN_FLOOR) & f.valid
    k = np.where(mask, std / np.where(mask, mean, 1.0), 0.0)
    return ContrastMap(k, window, mask)


def flow_from_contrast(c: ContrastMap) -> FlowMap:
    """V = 1 / K^2 with K floored at ``K_FLOOR``; masked pixels hold 0."""
    v = 1.0 / np.maximum(c.k, K_FLOOR) ** 2
    return FlowMap(np.where(c.mask, v, 0.0), 1, c.mask.copy())


def register_to_reference(color_fields: Sequence[Field], reference: int, max_iter: int = 200) -> list:
    """Registration of each colour field onto ``color_fields[reference]`` (None for the reference)."""
    fixed = as_field(color_fields[reference]).luminance()
    return [
        None if i == reference else register_affine(as_field(cf).luminance(), fixed, max_iter=max_iter)
        for i, cf in enumerate(color_fields)
    ]


def temporal_average(
    flows: Sequence[FlowMap],
    color_fields: Sequence[Field],
    reference: Optional[int] = None,
    max_iter: int = 200,
    registrations: Optional[Sequence] = None,
) -> FlowMap:
    """Average flow maps after aligning them via their paired colour fields.

    Each colour field is registered to the reference (centre of the window by
    default) and the resulting transform is applied to its flow map. Frames
    whose registration does not converge are dropped and counted.
    ``registrations`` may supply precomputed results of
    ``register_to_reference`` for the same reference.
    """
    if len(flows) != len(color_fields) or not flows:
        raise InvalidInputError("flow and colour sequences must be non-empty and equal length")
    ref = len(flows) // 2 if reference is None else reference
    if registrations is None:
        registrations = register_to_reference(color_fields, ref, max_iter)
    elif len(registrations) != len(flows):
        raise InvalidInputError("one registration per frame is required")
    mean = np.zeros_like(flows[ref].v)
    mask = np.ones_like(flows[ref].mask)
    used = dropped = 0
    for i, (fm, reg) in enumerate(zip(flows, registrations)):
        if i == ref:
            aligned_v, aligned_m = fm.v, fm.mask
        else:
            if not reg.converged:
                dropped += 1
                continue
            wf = warp(Field(fm.v, mask=fm.mask), reg.transform)
            aligned_v, aligned_m = wf.pixels, wf.mask
        used += 1
        # running mean: identical inputs reproduce the input exactly
        mean += (np.where(aligned_m, aligned_v, 0.0) - mean) / used
        mask &= aligned_m
    return FlowMap(np.where(mask, mean, 0.0), used, mask, dropped)


def rolling_average(flows, color_fields, window: int = 15, **kw) -> list[FlowMap]:
    """Centre-referenced rolling ``temporal_average`` over a sequence."""
    n = len(flows)
    out = []
    half = window // 2
    for i in range(n):
        lo = max(0, i - half)
        hi = min(n, lo + window)
        lo = max(0, hi - window)
        out.append(temporal_average(flows[lo:hi], color_fields[lo:hi], reference=i - lo, **kw))
    return out


def rms_contrast(values: np.ndarray, roi_a, roi_b, mask: Optional[np.ndarray] = None) -> float:
    """Standard deviation of pooled ROI pixels after min-max scaling to the map's range."""
    values = np.asarray(values, dtype=np.float64)
    valid = np.ones(values.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)

    def sel(roi):
        m = np.zeros(values.shape, dtype=bool)
        if isinstance(roi, np.ndarray) and roi.dtype == bool:
            m |= roi
        else:
            m[roi] = True
        return m

    a, b = sel(roi_a), sel(roi_b)
    if (a & b).any():
        raise InvalidInputError("ROIs must be disjoint")
    a &= valid
    b &= valid
    if a.sum() < 25 or b.sum() < 25:
        raise InvalidInputError("each ROI needs at least 25 valid pixels")
    lo = values[valid].min()
    hi = values[valid].max()
    if hi <= lo:
        return 0.0
    pooled = (np.concatenate([values[a], values[b]]) - lo) / (hi - lo)
    return float(pooled.std())


def display_median(v: np.ndarray, size: int = 9) -> np.ndarray:
    """Median filter for visualisation only; not used in quantitative paths."""
    return median_filter(v, size=size, mode="nearest")
