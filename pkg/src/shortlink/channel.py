"""Near-field channel synthesis: LoS plus image-method wall and ceiling bounces."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import ApLayout, StaPlacement, pairwise_distances
from .transforms import from_beamspace, to_beamspace


@dataclass(frozen=True)
class ChannelSet:
    H: np.ndarray  # (n * n_rf, n)
    n: int
    n_rf: int
    wavelength: float

    @property
    def subchannels(self) -> np.ndarray:
        """(n_rf, n, n) view; stacking the blocks reproduces ``H``."""
        return self.H.reshape(self.n_rf, self.n, self.H.shape[1])

    @property
    def beamspace(self) -> np.ndarray:
        return to_beamspace(self.subchannels)

    def scaled(self, factor: float) -> "ChannelSet":
        return ChannelSet(self.H * factor, self.n, self.n_rf, self.wavelength)


@dataclass(frozen=True)
class RoomSpec:
    """Box room ``[0, width] x [0, depth] x [0, height]``.

    The AP hangs on the wall ``y = depth`` at ``(ap_x, depth, ap_height)`` and
    faces -y.  Sidewalls are the planes ``x = 0`` and ``x = width``.
    """

    width: float = 5.0
    depth: float = 5.0
    height: float = 3.0
    ap_x: float = 2.5
    ap_height: float = 1.5
    ceiling_coef: complex = -0.6
    sidewall_coefs: tuple = (-0.6, -0.6)
    floor_coef: complex = -0.6
    floor_reflections_enabled: bool = False

    def __post_init__(self):
        coefs = [self.ceiling_coef, *self.sidewall_coefs, self.floor_coef]
        if any(abs(c) > 1 for c in coefs):
            raise ValueError("reflection coefficients must have magnitude <= 1")
        if min(self.width, self.depth, self.height) <= 0:
            raise ValueError("room dimensions must be positive")

    @classmethod
    def free_space(cls) -> "RoomSpec":
        return cls(ceiling_coef=0.0, sidewall_coefs=(0.0, 0.0), floor_coef=0.0)

    def to_world(self, xy: np.ndarray) -> np.ndarray:
        """Map array-plane coordinates (AP axis, AP normal) into the room."""
        xy = np.atleast_2d(xy)
        return np.column_stack([
            self.ap_x + xy[:, 0],
            self.depth - xy[:, 1],
            np.full(xy.shape[0], self.ap_height),
        ])

    def contains(self, pts: np.ndarray, tol: float = 1e-9) -> bool:
        lo = -tol
        hi = np.array([self.width, self.depth, self.height]) + tol
        return bool(np.all(pts >= lo) and np.all(pts <= hi))

    def images(self) -> list[tuple[str, np.ndarray, np.ndarray, complex]]:
        """Mirror maps ``p -> sign * p + shift`` for every modelled bounce path."""
        w, h = self.width, self.height
        cx0, cx1 = self.sidewall_coefs
        one = np.ones(3)
        rays = [
            ("los", one, np.zeros(3), 1.0),
            ("ceiling", np.array([1, 1, -1.0]), np.array([0, 0, 2 * h]), self.ceiling_coef),
            ("wall_x0", np.array([-1.0, 1, 1]), np.zeros(3), cx0),
            ("wall_x1", np.array([-1.0, 1, 1]), np.array([2 * w, 0, 0]), cx1),
            # x0 then x1, and x1 then x0
            ("wall_x0_x1", one, np.array([2 * w, 0, 0]), cx0 * cx1),
            ("wall_x1_x0", one, np.array([-2 * w, 0, 0]), cx0 * cx1),
            ("ceiling_x0", np.array([-1.0, 1, -1]), np.array([0, 0, 2 * h]), self.ceiling_coef * cx0),
            ("ceiling_x1", np.array([-1.0, 1, -1]), np.array([2 * w, 0, 2 * h]), self.ceiling_coef * cx1),
        ]
        if self.floor_reflections_enabled:
            fc = self.floor_coef
            rays += [
                ("floor", np.array([1, 1, -1.0]), np.zeros(3), fc),
                ("floor_x0", np.array([-1.0, 1, -1]), np.zeros(3), fc * cx0),
                ("floor_x1", np.array([-1.0, 1, -1]), np.array([2 * w, 0, 0]), fc * cx1),
            ]
        return rays


def los_channel(distances: np.ndarray, wavelength: float) -> np.ndarray:
    d = np.asarray(distances, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distances must be strictly positive")
    return wavelength / (4 * np.pi * d) * np.exp(-2j * np.pi * d / wavelength)


def synthesize_channel(ap: ApLayout, sta: StaPlacement,
                       room: RoomSpec | None = None) -> ChannelSet:
    """LoS channel plus every bounce path listed by ``room.images()``.

    ``room=None`` gives the 2D free-space LoS channel.
    """
    lam = ap.wavelength
    if room is None:
        H = los_channel(pairwise_distances(ap, sta), lam)
        return ChannelSet(H, ap.n, ap.n_rf, lam)
    ap_w = room.to_world(ap.element_positions)
    sta_w = room.to_world(sta.element_positions)
    if not (room.contains(ap_w) and room.contains(sta_w)):
        raise ValueError("both arrays must lie inside the room")
    H = np.zeros((ap_w.shape[0], sta_w.shape[0]), dtype=complex)
    for _, sign, shift, coef in room.images():
        if coef == 0:
            continue
        img = sta_w * sign + shift
        dist = np.linalg.norm(ap_w[:, None, :] - img[None, :, :], axis=-1)
        H += coef * los_channel(dist, lam)
    return ChannelSet(H, ap.n, ap.n_rf, lam)


def ray_count(room: RoomSpec) -> int:
    return len(room.images())


def energy_metrics(channel: ChannelSet) -> tuple[float, float]:
    """Rank-one energy fractions of the full channel and the mean over subchannels."""
    H = channel.H
    fro = np.linalg.norm(H) ** 2
    if fro == 0:
        raise ValueError("all-zero channel")
    e_f = np.linalg.norm(H, 2) ** 2 / fro
    sub = channel.subchannels
    sv = np.linalg.svd(sub, compute_uv=False)
    e_s = float(np.mean(sv[:, 0] ** 2 / np.sum(sv ** 2, axis=1)))
    return float(e_f), e_s


def beamspace(subchannel: np.ndarray) -> np.ndarray:
    return to_beamspace(np.asarray(subchannel))


def antenna_domain(x: np.ndarray) -> np.ndarray:
    return from_beamspace(np.asarray(x))


def dump_matrix(path: str | Path, H: np.ndarray, n: int, n_rf: int,
                wavelength: float) -> None:
    """Text dump: one header line, then one row per line as ``re im`` pairs."""
    H = np.asarray(H)
    lines = [f"# shortlink-matrix rows={H.shape[0]} cols={H.shape[1]} "
             f"n={n} n_rf={n_rf} wavelength={wavelength!r}"]
    for row in H:
        lines.append(" ".join(f"{float(z.real)!r} {float(z.imag)!r}" for z in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_matrix(path: str | Path) -> tuple[np.ndarray, dict]:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    head = dict(kv.split("=", 1) for kv in text[0].split()[2:])
    meta = {"n": int(head["n"]), "n_rf": int(head["n_rf"]),
            "wavelength": float(head["wavelength"])}
    rows, cols = int(head["rows"]), int(head["cols"])
    vals = np.array([[float(v) for v in line.split()] for line in text[1:1 + rows]])
    H = vals[:, 0::2] + 1j * vals[:, 1::2]
    if H.shape != (rows, cols):
        raise ValueError(f"expected {rows}x{cols} entries, got {H.shape}")
    return H, meta
