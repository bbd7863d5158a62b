"""Zadoff-Chu training sequences, circulant shifts, spectral masks and q-bit phases."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .transforms import dft


@dataclass(frozen=True)
class ZcSequence:
    z: np.ndarray
    root: int

    @property
    def n(self) -> int:
        return self.z.size


def zc_sequence(n: int, t: int) -> ZcSequence:
    """Unit-norm ZC sequence of length ``n`` and root ``t``."""
    if n < 1 or math.gcd(t, n) != 1:
        raise ValueError(f"root {t} is not co-prime with length {n}")
    k = np.arange(n, dtype=float)
    if n % 2:
        phase = np.pi * t * k * (k + 1) / n
    else:
        # k^2 mod 2n keeps the exponent exact for large k
        phase = np.pi * t * ((k.astype(np.int64) ** 2) % (2 * n)) / n
    z = np.exp(1j * phase) / np.sqrt(n)
    z.setflags(write=False)
    return ZcSequence(z, t)


def circulant_shift(v: np.ndarray, shift: int) -> np.ndarray:
    """Apply the shift-by-``shift`` circulant delay: ``out[i] = v[i - shift]``."""
    v = np.asarray(v)
    return np.roll(v, int(shift) % v.shape[0], axis=0)


def delay_matrix(n: int, shift: int = 1) -> np.ndarray:
    return circulant_shift(np.eye(n), shift)


def spectral_mask(z: ZcSequence, tol: float = 1e-6) -> np.ndarray:
    """Diagonal of the spectral mask, ``sqrt(N) * U_N z``."""
    lam = np.sqrt(z.n) * (dft(z.n) @ z.z)
    dev = np.max(np.abs(np.abs(lam) - 1.0))
    if dev > tol:
        raise ValueError(f"DFT of the sequence is not unimodular (max dev {dev:.3g})")
    return lam


def mask(x: np.ndarray, lam: np.ndarray) -> np.ndarray:
    return lam[:, None] * x * lam[None, :]


def unmask(s: np.ndarray, lam: np.ndarray) -> np.ndarray:
    inv = 1.0 / lam
    return inv[:, None] * s * inv[None, :]


@dataclass(frozen=True)
class PhaseAlphabet:
    q: int
    n: int

    @property
    def size(self) -> int:
        return 2 ** self.q

    @property
    def entries(self) -> np.ndarray:
        return np.exp(2j * np.pi * np.arange(self.size) / self.size) / np.sqrt(self.n)

    def contains(self, v: np.ndarray, tol: float = 1e-9) -> bool:
        v = np.asarray(v)
        if np.any(np.abs(np.abs(v) - 1 / np.sqrt(self.n)) > tol):
            return False
        idx = np.angle(v) * self.size / (2 * np.pi)
        return bool(np.all(np.abs(idx - np.round(idx)) * 2 * np.pi / self.size < tol))


def phase_indices(v: np.ndarray, q: int) -> np.ndarray:
    """Nearest q-bit phase index per entry; ties go to the smaller index."""
    v = np.asarray(v)
    size = 2 ** q
    x = np.mod(np.angle(v), 2 * np.pi) * size / (2 * np.pi)
    idx = np.ceil(x - 0.5).astype(np.int64) % size
    idx[np.abs(v) == 0] = 0
    return idx


def phase_quantize(v: np.ndarray, q: int) -> np.ndarray:
    v = np.asarray(v)
    if q < 1:
        raise ValueError("q must be at least 1")
    idx = phase_indices(v, q)
    return np.exp(2j * np.pi * idx / 2 ** q) / np.sqrt(v.shape[0])


def is_realizable(z: ZcSequence, q: int, tol: float = 1e-9) -> bool:
    """True when every circulant shift of ``z`` lies in the q-bit alphabet."""
    # shifts permute entries, so checking z itself covers all of them
    return PhaseAlphabet(q, z.n).contains(z.z, tol)


def check_realizable(z: ZcSequence, q: int) -> bool:
    ok = is_realizable(z, q)
    if not ok:
        warnings.warn(
            f"ZC sequence (N={z.n}, t={z.root}) is not realizable with {q}-bit "
            "phase shifters; training beams use unquantized phases",
            RuntimeWarning,
            stacklevel=2,
        )
    return ok


def steering(n: int, angle: float | np.ndarray) -> np.ndarray:
    """Half-wavelength ULA response ``[exp(-j pi k sin(angle))]_k``.

    With an array of angles the result has shape ``(n, len(angle))``.
    """
    k = np.arange(n)
    s = np.sin(np.asarray(angle, dtype=float))
    return np.exp(-1j * np.pi * np.multiply.outer(k, s))
