"""Spatial source bump and the piecewise true temporal amplitude."""
from __future__ import annotations

import numpy as np

SOURCE_CENTER = (0.5, 0.35)
SOURCE_WIDTH = 0.05
WIDTH_KINDS = ("std", "variance")


def source_spatial(x, width=SOURCE_WIDTH, center=SOURCE_CENTER, width_kind="std"):
    """Gaussian bump with peak ``1 / (2 pi width)``; ``x`` is (..., 2).

    ``width_kind="std"`` uses ``exp(-|x-c|^2 / (2 width^2))``, whose integral
    over the plane is ``width``. ``"variance"`` uses ``exp(-|x-c|^2 / (2 width))``,
    a unit-mass bump. Both share the peak value.
    """
    if width_kind not in WIDTH_KINDS:
        raise ValueError(f"width_kind must be one of {WIDTH_KINDS}")
    x = np.asarray(x, dtype=float)
    r2 = np.sum((x - np.asarray(center)) ** 2, axis=-1)
    spread = width**2 if width_kind == "std" else width
    return np.exp(-r2 / (2 * spread)) / (2 * np.pi * width)


def _bump(t):
    # exp(1 - 1/(1 - 16 (t-0.45)^2)) with compact support |t - 0.45| < 0.25
    z = 1.0 - 16.0 * (t - 0.45) ** 2
    out = np.zeros_like(t)
    pos = z > 0
    out[pos] = np.exp(1.0 - 1.0 / z[pos])
    return out


def source_temporal_truth(t):
    """True source amplitude: plateau 80, smooth rise to 100 at 0.45, fall to plateau 50."""
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    if np.any((t < 0) | (t > 1)):
        raise ValueError("source_temporal_truth is defined on [0, 1]")
    b = _bump(t)
    out = np.where(t <= 0.2, 80.0, np.where(t <= 0.45, 80.0 + 20.0 * b, np.where(t <= 0.7, 50.0 + 50.0 * b, 50.0)))
    return float(out[0]) if scalar else out
