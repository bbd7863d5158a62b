"""Geometry-aided message passing over the chain of per-subarray local AoAs.

Each AP subarray yields a likelihood over a discrete angle grid.  Adjacent
subarrays are tied by conditional tables ``p(w_out | w_in)`` that follow from
the array layout and a uniform prior on the AP-STA distance; one forward and
one backward sweep fuse the likelihoods.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .acquisition import gain_compensate
from .codebook import steering

_SIGMA2_FLOOR = 1e-300


@dataclass(frozen=True)
class AngularGrid:
    angles: np.ndarray
    step: float

    @classmethod
    def from_resolution(cls, delta: float = 1 / 180) -> "AngularGrid":
        """Uniform grid with spacing ``delta * pi`` inside the open interval (-pi/2, pi/2)."""
        if not 0 < delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        count = int(round(1 / delta)) - 1
        step = delta * np.pi
        angles = (np.arange(count) - (count - 1) / 2) * step
        angles.setflags(write=False)
        return cls(angles, step)

    @property
    def size(self) -> int:
        return self.angles.size

    def nearest(self, angle) -> np.ndarray:
        idx = np.rint((np.asarray(angle) - self.angles[0]) / self.step).astype(np.int64)
        return np.clip(idx, 0, self.size - 1)


@dataclass(frozen=True)
class AngularBelief:
    grid: AngularGrid
    weights: np.ndarray

    @classmethod
    def from_log(cls, grid: AngularGrid, log_w: np.ndarray) -> "AngularBelief":
        return cls(grid, _normalize(log_w))

    @classmethod
    def uniform(cls, grid: AngularGrid) -> "AngularBelief":
        return cls(grid, np.full(grid.size, 1.0 / grid.size))


def _normalize(log_w: np.ndarray) -> np.ndarray:
    log_w = np.asarray(log_w, dtype=float)
    m = np.max(log_w)
    if not np.isfinite(m):
        raise ValueError("belief has no finite mass")
    w = np.exp(log_w - m)
    return w / w.sum()


def log_likelihood(y_comp: np.ndarray, probes: np.ndarray, alpha: complex,
                   sigma: float, grid: AngularGrid) -> np.ndarray:
    """``-|alpha|^2 ||y_comp - Psi a(w)||^2 / sigma^2`` on every grid angle."""
    resp = probes @ steering(probes.shape[1], grid.angles)
    res = np.sum(np.abs(y_comp[:, None] - resp) ** 2, axis=0)
    return -np.abs(alpha) ** 2 * res / max(sigma ** 2, _SIGMA2_FLOOR)


def aoa_likelihood(y: np.ndarray, probes: np.ndarray, sigma: float,
                   grid: AngularGrid, floor: float = 1e-6) -> AngularBelief:
    """Gain-compensate raw probe outputs and score every grid angle.

    An unreliable gain estimate returns the uniform belief.
    """
    gain = gain_compensate(y, probes[0, 0], floor)
    if not gain.reliable:
        return AngularBelief.uniform(grid)
    return AngularBelief.from_log(
        grid, log_likelihood(gain.y_comp, probes, gain.alpha, sigma, grid))


def geometry_map(omega_a, d, l_a: float, l_b: float):
    """Local AoA at subarray ``b`` implied by AoA ``omega_a`` at subarray ``a``.

    ``d`` is the AP-STA midpoint distance and ``l_a``, ``l_b`` the subarray
    offsets measured along the direction of positive AoA.  Infeasible pairs
    (no positive distance to subarray ``a``) come back as NaN.
    """
    omega_a = np.asarray(omega_a, dtype=float)
    d = np.asarray(d, dtype=float)
    s, c = np.sin(omega_a), np.cos(omega_a)
    disc = d ** 2 - (l_a * c) ** 2
    with np.errstate(invalid="ignore"):
        d1 = -l_a * s + np.sqrt(disc)
        out = np.arctan2(l_a - l_b + d1 * s, d1 * c)
    bad = (disc < 0) | ~(d1 > 0)
    out = np.where(bad, np.nan, out)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class GeometryFactorTable:
    table: np.ndarray  # (G_in, G_out), rows sum to one
    d_min: float
    d_max: float
    l_in: float
    l_out: float


def build_factor_table(grid: AngularGrid, d_min: float, d_max: float,
                       l_in: float, l_out: float,
                       n_samples: int = 2000) -> GeometryFactorTable:
    """Histogram of ``geometry_map(w_in, r)`` over ``r`` uniform on [d_min, d_max]."""
    if not 0 < d_min <= d_max:
        raise ValueError("need 0 < d_min <= d_max")
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    r = d_min + (np.arange(n_samples) + 0.5) * (d_max - d_min) / n_samples
    mapped = geometry_map(grid.angles[:, None], r[None, :], l_in, l_out)
    valid = np.isfinite(mapped)
    mapped = np.where(valid, mapped, 0.0)
    counts = kernels.bin_pushforward(mapped, valid, float(grid.angles[0]),
                                     grid.step, grid.size)
    totals = counts.sum(axis=1, keepdims=True)
    table = np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0),
                     1.0 / grid.size)
    return GeometryFactorTable(table, d_min, d_max, l_in, l_out)


@dataclass(frozen=True)
class ChainTables:
    """Forward and backward tables for a chain of subarrays."""

    forward: np.ndarray  # (K-1, G, G): p(w_{k+1} | w_k)
    backward: np.ndarray  # (K-1, G, G): p(w_k | w_{k+1})
    grid: AngularGrid


def build_chain_tables(grid: AngularGrid, offsets: np.ndarray, d_min: float,
                       d_max: float, n_samples: int = 2000) -> ChainTables:
    K = len(offsets)
    fwd = np.empty((max(K - 1, 0), grid.size, grid.size))
    bwd = np.empty_like(fwd)
    for k in range(K - 1):
        fwd[k] = build_factor_table(grid, d_min, d_max, offsets[k], offsets[k + 1],
                                    n_samples).table
        bwd[k] = build_factor_table(grid, d_min, d_max, offsets[k + 1], offsets[k],
                                    n_samples).table
    return ChainTables(fwd, bwd, grid)


@dataclass(frozen=True)
class GmpResult:
    grid: AngularGrid
    likelihood: np.ndarray  # (K, G) normalized
    fwd_in: np.ndarray
    bwd_in: np.ndarray
    combined: np.ndarray

    def estimates(self) -> np.ndarray:
        return self.grid.angles[np.argmax(self.combined, axis=1)]

    def ml_estimates(self) -> np.ndarray:
        return self.grid.angles[np.argmax(self.likelihood, axis=1)]


def forward_backward(log_lik: np.ndarray, tables: ChainTables) -> GmpResult:
    """Single forward and backward sweep; beliefs combine likelihood and both inflows."""
    log_lik = np.asarray(log_lik, dtype=float)
    if not np.all(np.isfinite(np.max(log_lik, axis=1))):
        raise ValueError("likelihood has no finite mass")
    ll, fwd, bwd, comb = kernels.gmp_beliefs(log_lik, tables.forward, tables.backward)
    return GmpResult(tables.grid, np.exp(ll), np.exp(fwd), np.exp(bwd), np.exp(comb))


def estimate_aoa(belief: AngularBelief) -> float:
    """Grid angle of largest weight; ties go to the smaller angle."""
    return float(belief.grid.angles[int(np.argmax(belief.weights))])


def sta_ml_aoa(y: np.ndarray, probes: np.ndarray, sigma: float,
               grid: AngularGrid, floor: float = 1e-6) -> float:
    return estimate_aoa(aoa_likelihood(y, probes, sigma, grid, floor))


def dump_beliefs(path: str | Path, result: GmpResult) -> None:
    """CSV rows ``node,angle_deg,likelihood,fwd,bwd,combined``."""
    lines = ["node,angle_deg,likelihood,fwd,bwd,combined"]
    deg = np.degrees(result.grid.angles)
    for k in range(result.likelihood.shape[0]):
        for g in range(deg.size):
            lines.append(
                f"{k},{deg[g]:.6f},{result.likelihood[k, g]:.9e},"
                f"{result.fwd_in[k, g]:.9e},{result.bwd_in[k, g]:.9e},"
                f"{result.combined[k, g]:.9e}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
