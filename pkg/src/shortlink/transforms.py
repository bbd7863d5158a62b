"""Unitary DFT helpers shared by the channel and acquisition code."""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=16)
def _dft(n: int) -> np.ndarray:
    k = np.arange(n)
    u = np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)
    u.setflags(write=False)
    return u


def dft(n: int) -> np.ndarray:
    """Unitary DFT matrix ``U[a, b] = exp(-j 2 pi a b / n) / sqrt(n)``."""
    return _dft(n)


def to_beamspace(h: np.ndarray) -> np.ndarray:
    """``X`` with ``H = U X U``."""
    scale = np.sqrt(h.shape[-2] * h.shape[-1])
    return np.fft.ifft2(h, axes=(-2, -1)) * scale


def from_beamspace(x: np.ndarray) -> np.ndarray:
    scale = np.sqrt(x.shape[-2] * x.shape[-1])
    return np.fft.fft2(x, axes=(-2, -1)) / scale
