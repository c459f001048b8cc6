"""Grid containers for complex-energy spectral data and the peak detection
used to turn maps into assertions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _strictly_increasing(axis: np.ndarray) -> bool:
    return len(axis) < 2 or bool(np.all(np.diff(axis) > 0))


@dataclass
class SpectralMap:
    """Spectral values on a rectangular grid in the complex energy plane.
    values[i, j] belongs to re_omega_axis[i] + 1j * im_omega_axis[j]."""

    re_omega_axis: np.ndarray
    im_omega_axis: np.ndarray
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.re_omega_axis = np.asarray(self.re_omega_axis, dtype=float)
        self.im_omega_axis = np.asarray(self.im_omega_axis, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if not (_strictly_increasing(self.re_omega_axis) and _strictly_increasing(self.im_omega_axis)):
            raise ValueError("grid axes must be strictly increasing")
        expected = (len(self.re_omega_axis), len(self.im_omega_axis))
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} does not match axes {expected}")

    def same_grid(self, other: "SpectralMap") -> bool:
        return (self.re_omega_axis.shape == other.re_omega_axis.shape
                and self.im_omega_axis.shape == other.im_omega_axis.shape
                and np.array_equal(self.re_omega_axis, other.re_omega_axis)
                and np.array_equal(self.im_omega_axis, other.im_omega_axis))

    def plane_integral(self) -> complex:
        """Trapezoid integral of the values over the covered rectangle."""
        inner = np.trapezoid(self.values, self.im_omega_axis, axis=1)
        return complex(np.trapezoid(inner, self.re_omega_axis))


@dataclass
class ProjectedProfile:
    """Real-energy, per-site spectral weight; values[i, k] >= 0 belongs to
    E_axis[i] and site_axis[k]."""

    E_axis: np.ndarray
    site_axis: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.E_axis = np.asarray(self.E_axis, dtype=float)
        self.site_axis = np.asarray(self.site_axis, dtype=int)
        self.values = np.asarray(self.values, dtype=float)
        if not _strictly_increasing(self.E_axis):
            raise ValueError("E axis must be strictly increasing")
        if self.values.shape != (len(self.E_axis), len(self.site_axis)):
            raise ValueError("values shape does not match axes")
        if np.any(self.values < 0):
            raise ValueError("projected weights must be non-negative")


def linear_axis(lo: float, hi: float, n: int) -> np.ndarray:
    if n < 1 or hi <= lo and n > 1:
        raise ValueError(f"bad axis spec ({lo}, {hi}, {n})")
    return np.linspace(lo, hi, n)


def find_peaks(spectral_map: SpectralMap, merge_radius: float,
               min_ratio: float = 3.0, rel_floor: float = 0.08) -> list[tuple[complex, float]]:
    """Local maxima of |values| above min_ratio times the median background,
    merged within merge_radius (strongest survivor kept).  Returned sorted by
    descending weight.

    rel_floor drops maxima below that fraction of the global maximum: the
    expansion kernel rings at ~5% of each peak, and on sparse-spectrum maps
    the median background is so small that bare thresholding would report
    those ring lobes as peaks."""
    A = np.abs(spectral_map.values)
    background = float(np.median(A))
    threshold = max(min_ratio * background, rel_floor * float(A.max()))
    n_re, n_im = A.shape
    padded = np.full((n_re + 2, n_im + 2), -np.inf)
    padded[1:-1, 1:-1] = A
    is_max = np.ones_like(A, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            is_max &= A >= padded[1 + di:n_re + 1 + di, 1 + dj:n_im + 1 + dj]
    ii, jj = np.nonzero(is_max & (A > threshold))
    omegas = spectral_map.re_omega_axis[ii] + 1j * spectral_map.im_omega_axis[jj]
    weights = A[ii, jj]
    order = np.argsort(-weights)
    kept: list[tuple[complex, float]] = []
    for idx in order:
        w = omegas[idx]
        if all(abs(w - k) > merge_radius for k, _ in kept):
            kept.append((complex(w), float(weights[idx])))
    return kept
