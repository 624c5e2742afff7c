"""Brute-force O(L^2) direct-summation DFT used as an independent oracle.

Deliberately written from the defining sums, with no FFT machinery, so the
library's transforms are checked against an independent route.
"""

import numpy as np


def direct_rfft(x):
    """Half-spectrum forward DFT: F[k] = sum_n x[n] exp(-2i*pi*k*n/L)."""
    x = np.asarray(x, dtype=np.float64)
    length = x.size
    num_bins = length // 2 + 1
    out = np.empty(num_bins, dtype=np.complex128)
    n = np.arange(length)
    for k in range(num_bins):
        out[k] = np.sum(x * np.exp(-2j * np.pi * k * n / length))
    return out


def direct_irfft(bins, length):
    """Inverse via explicit Hermitian extension of the half spectrum."""
    bins = np.asarray(bins, dtype=np.complex128)
    full = np.empty(length, dtype=np.complex128)
    full[: bins.size] = bins
    for k in range(bins.size, length):
        full[k] = np.conj(bins[length - k])
    out = np.empty(length, dtype=np.float64)
    k = np.arange(length)
    for n in range(length):
        out[n] = np.real(np.sum(full * np.exp(2j * np.pi * k * n / length))) / length
    return out
