"""sRGB to CIELAB conversion (D65 white point, piecewise gamma)."""

from __future__ import annotations

import numpy as np

from .errors import ParameterError

# sRGB linear-light to XYZ, D65 reference white.
_SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_WHITE_D65 = np.array([0.95047, 1.0, 1.08883])

_DELTA = 6.0 / 29.0


def rgb_to_cielab(r: int, g: int, b: int) -> tuple:
    """Convert one 8-bit sRGB triplet to (L, a, b).

    L lies in [0, 100]; grayscale inputs map to a = b = 0.
    """
    lab = rgb_array_to_cielab(np.array([[r, g, b]]))
    return tuple(float(v) for v in lab[0])


def rgb_array_to_cielab(colors) -> np.ndarray:
    """Vectorized conversion of an (n, 3) array of 8-bit sRGB values."""
    colors = np.asarray(colors, dtype=np.float64)
    if colors.size and (colors.min() < 0 or colors.max() > 255):
        raise ParameterError("color channels must be in [0, 255]")

    c = colors / 255.0
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _SRGB_TO_XYZ.T / _WHITE_D65

    f = np.where(xyz > _DELTA ** 3,
                 np.cbrt(xyz),
                 xyz / (3.0 * _DELTA ** 2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    # The 7-digit matrix rows do not sum exactly to 1, so white can land a
    # few 1e-6 above 100; clamp to the nominal range.
    lab[:, 0] = np.clip(116.0 * f[:, 1] - 16.0, 0.0, 100.0)
    lab[:, 1] = 500.0 * (f[:, 0] - f[:, 1])
    lab[:, 2] = 200.0 * (f[:, 1] - f[:, 2])
    return lab
