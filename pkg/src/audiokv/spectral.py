"""Spectral score smoothing: low-pass filtering of per-head importance signals.

A head's importance signal (e.g. window-averaged attention over past tokens)
is transformed with a real-input FFT, truncated at an energy-driven cutoff,
optionally softened with a cosine transition band, transformed back, and mixed
with the original signal. Forward transform is unnormalized, inverse carries
the 1/L factor, matching the usual numerical-library convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatchError


@dataclass(frozen=True)
class Spectrum:
    """Half spectrum of a real signal: floor(L/2)+1 complex bins."""

    bins: np.ndarray
    original_length: int

    @property
    def num_bins(self) -> int:
        return len(self.bins)


@dataclass(frozen=True)
class SpectralMask:
    weights: np.ndarray
    cutoff_index: int


@dataclass(frozen=True)
class SssConfig:
    """Smoothing parameters.

    transition_bins=None selects the adaptive default max(2, ceil(0.05 * num_bins));
    0 gives the hard rectangular mask.
    """

    cutoff_ratio: float = 0.7
    mix_alpha: float = 0.5
    transition_bins: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.cutoff_ratio <= 1.0:
            raise ValueError(f"cutoff_ratio must be in (0, 1], got {self.cutoff_ratio}")
        if not 0.0 <= self.mix_alpha <= 1.0:
            raise ValueError(f"mix_alpha must be in [0, 1], got {self.mix_alpha}")
        if self.transition_bins is not None and self.transition_bins < 0:
            raise ValueError("transition_bins must be >= 0")


def rfft(signal: np.ndarray) -> Spectrum:
    """Forward real-input DFT: bins[k] = sum_n x[n] exp(-2*pi*i*k*n/L)."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("signal must be a non-empty 1-D array")
    if not np.all(np.isfinite(x)):
        raise ValueError("signal values must be finite")
    return Spectrum(bins=np.fft.rfft(x), original_length=x.size)


def irfft(spectrum: Spectrum, n: int) -> np.ndarray:
    """Inverse of rfft via Hermitian extension, scaled by 1/L."""
    if n != spectrum.original_length:
        raise LengthMismatchError(
            f"requested length {n} != spectrum origin {spectrum.original_length}"
        )
    if spectrum.num_bins != n // 2 + 1:
        raise LengthMismatchError(
            f"spectrum has {spectrum.num_bins} bins, expected {n // 2 + 1} for length {n}"
        )
    return np.fft.irfft(spectrum.bins, n=n)


def energy_cutoff(spectrum: Spectrum, cutoff_ratio: float) -> int:
    """Smallest bin index k whose cumulative |bin|^2 energy reaches the ratio.

    Returns num_bins-1 (keep everything) for a zero-energy spectrum, and for
    cutoff_ratio >= 1 so trailing zero-energy bins never shrink the full mask.
    """
    if not 0.0 < cutoff_ratio <= 1.0:
        raise ValueError(f"cutoff_ratio must be in (0, 1], got {cutoff_ratio}")
    last = spectrum.num_bins - 1
    if cutoff_ratio >= 1.0:
        return last
    energy = np.abs(spectrum.bins) ** 2
    cum = np.cumsum(energy)
    total = cum[-1]
    if total <= 0.0:
        return last
    return int(np.searchsorted(cum, total * cutoff_ratio, side="left"))


def default_transition_bins(num_bins: int) -> int:
    """Adaptive transition width: 5% of the band, at least 2 bins."""
    return max(2, math.ceil(0.05 * num_bins))


def build_mask(cutoff_index: int, length: int, transition_bins: int) -> SpectralMask:
    """Low-pass mask: ones through cutoff_index, cosine roll-off, zeros beyond."""
    if not 0 <= cutoff_index < length:
        raise ValueError(f"cutoff_index {cutoff_index} out of range for {length} bins")
    weights = np.zeros(length, dtype=np.float64)
    weights[: cutoff_index + 1] = 1.0
    if transition_bins > 0:
        offsets = np.arange(1, transition_bins + 1)
        stop = min(cutoff_index + transition_bins, length - 1)
        count = stop - cutoff_index
        if count > 0:
            ramp = 0.5 * (1.0 + np.cos(np.pi * offsets[:count] / transition_bins))
            weights[cutoff_index + 1 : cutoff_index + 1 + count] = ramp
    return SpectralMask(weights=weights, cutoff_index=cutoff_index)


def sss(signal: np.ndarray, config: SssConfig) -> np.ndarray:
    """Smooth one importance signal: (1-alpha)*x + alpha*irfft(rfft(x)*mask)."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("signal must be a non-empty 1-D array")
    if config.mix_alpha == 0.0:
        return x.copy()
    spectrum = rfft(x)
    cutoff = energy_cutoff(spectrum, config.cutoff_ratio)
    transition = (
        default_transition_bins(spectrum.num_bins)
        if config.transition_bins is None
        else config.transition_bins
    )
    mask = build_mask(cutoff, spectrum.num_bins, transition)
    filtered = Spectrum(bins=spectrum.bins * mask.weights, original_length=x.size)
    smoothed = irfft(filtered, x.size)
    return (1.0 - config.mix_alpha) * x + config.mix_alpha * smoothed


def smooth_rows(matrix: np.ndarray, config: SssConfig) -> np.ndarray:
    """Apply sss independently to each row of a 2-D array."""
    rows = np.asarray(matrix, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError("expected a 2-D array of signals")
    return np.stack([sss(row, config) for row in rows])
