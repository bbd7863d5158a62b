"""Array layouts for the subarray AP and the STA, and element-pair distances.

All coordinates live in the common horizontal plane of the two arrays.  The AP
lies on the x axis centred at the origin, its broadside normal is +y, and a
STA is placed by its midpoint distance ``d``, its bearing ``gamma`` from the AP
normal (positive toward +x) and its tilt ``theta`` against the x axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_SPAN_TOL = 1e-12


@dataclass(frozen=True)
class ApLayout:
    element_positions: np.ndarray  # (n * n_rf, 2)
    subarray_offsets: np.ndarray  # (n_rf,) signed midpoint offsets along x
    n: int
    n_rf: int
    wavelength: float

    @property
    def span(self) -> float:
        x = self.element_positions[:, 0]
        return float(x.max() - x.min())

    def subarray(self, k: int) -> np.ndarray:
        return self.element_positions[k * self.n:(k + 1) * self.n]


@dataclass(frozen=True)
class StaPlacement:
    d: float
    gamma: float
    theta: float
    element_positions: np.ndarray  # (n, 2)
    wavelength: float

    @property
    def midpoint(self) -> np.ndarray:
        return self.element_positions.mean(axis=0)

    @property
    def axis(self) -> np.ndarray:
        return np.array([np.cos(self.theta), np.sin(self.theta)])


def build_ap_layout(n: int, n_rf: int, wavelength: float, l_ap: float) -> ApLayout:
    """Place ``n_rf`` half-wavelength ULAs of ``n`` elements on a span of ``l_ap``.

    Gaps between the edge elements of neighbouring subarrays are all equal, so
    the outermost elements sit exactly at ``-l_ap/2`` and ``+l_ap/2``.
    """
    if n < 2 or n_rf < 1:
        raise ValueError(f"need n >= 2 and n_rf >= 1, got n={n}, n_rf={n_rf}")
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    sub_span = (n - 1) * wavelength / 2
    slack = l_ap - n_rf * sub_span
    if slack < -_SPAN_TOL:
        raise ValueError(
            f"l_ap={l_ap} cannot hold {n_rf} subarrays of span {sub_span}"
        )
    if n_rf == 1:
        if abs(slack) > 1e-9:
            raise ValueError(
                f"a single subarray spans {sub_span} m, not l_ap={l_ap} m"
            )
        gap = 0.0
    else:
        gap = max(slack, 0.0) / (n_rf - 1)

    starts = -l_ap / 2 + np.arange(n_rf) * (sub_span + gap)
    if n_rf == 1:
        starts = np.array([-sub_span / 2])
    x = (starts[:, None] + np.arange(n)[None, :] * wavelength / 2).ravel()
    pos = np.column_stack([x, np.zeros_like(x)])
    offsets = starts + sub_span / 2
    pos.setflags(write=False)
    offsets.setflags(write=False)
    return ApLayout(pos, offsets, n, n_rf, wavelength)


def place_sta(ap: ApLayout, d: float, gamma: float, theta: float, n: int,
              l_sta: float | None = None) -> StaPlacement:
    """Lay an ``n``-element half-wavelength ULA at ``(d, gamma, theta)``.

    ``l_sta`` is the physical footprint of the STA array.  Elements keep their
    half-wavelength pitch, so the footprint must lie between the element span
    ``(n-1)*lambda/2`` and ``n*lambda/2``.
    """
    lam = ap.wavelength
    if d <= 0:
        raise ValueError("d must be positive")
    if not abs(gamma) < np.pi / 2:
        raise ValueError("|gamma| must be below pi/2")
    if l_sta is not None:
        lo, hi = (n - 1) * lam / 2, n * lam / 2
        if not lo - 1e-9 <= l_sta <= hi + 1e-9:
            raise ValueError(
                f"l_sta={l_sta} incompatible with {n} elements at lambda/2 pitch"
            )
    mid = d * np.array([np.sin(gamma), np.cos(gamma)])
    s = (np.arange(n) - (n - 1) / 2) * lam / 2
    axis = np.array([np.cos(theta), np.sin(theta)])
    pos = mid[None, :] + s[:, None] * axis[None, :]
    pos.setflags(write=False)
    sta = StaPlacement(float(d), float(gamma), float(theta), pos, lam)
    if np.any(pairwise_distances(ap, sta) <= 0):
        raise ValueError("STA overlaps the AP array")
    return sta


def pairwise_distances(ap: ApLayout, sta: StaPlacement) -> np.ndarray:
    diff = ap.element_positions[:, None, :] - sta.element_positions[None, :, :]
    return np.sqrt(np.sum(diff ** 2, axis=-1))


def subarray_bearings(ap: ApLayout, point: np.ndarray) -> np.ndarray:
    """Bearing of ``point`` from every subarray midpoint, from the normal toward +x."""
    dx = point[0] - ap.subarray_offsets
    return np.arctan2(dx, point[1])


def true_local_aoas(ap: ApLayout, sta: StaPlacement) -> np.ndarray:
    """Local AoAs in the steering-vector convention of ``codebook.steering``.

    The LoS phase ``exp(-j 2 pi d / lambda)`` advances along +x toward the STA,
    so the steering angle is the negated geometric bearing.
    """
    return -subarray_bearings(ap, sta.midpoint)


def true_sta_aoas(ap: ApLayout, sta: StaPlacement) -> np.ndarray:
    """STA-side angles (steering convention) of the rays from every AP subarray midpoint."""
    mids = np.column_stack([ap.subarray_offsets, np.zeros(ap.n_rf)])
    r = sta.midpoint[None, :] - mids
    r /= np.linalg.norm(r, axis=1, keepdims=True)
    return np.arcsin(np.clip(r @ sta.axis, -1.0, 1.0))


def aoa_offsets(ap: ApLayout) -> np.ndarray:
    """Subarray offsets oriented like positive local AoA (i.e. along -x)."""
    return -np.asarray(ap.subarray_offsets)
