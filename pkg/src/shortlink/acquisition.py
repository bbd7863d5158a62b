"""Pilot schedules and measurement models for both training pipelines.

The compressive pipeline applies random circulant ZC shifts at both ends and
sees each subchannel through a partial 2D-DFT of its masked beamspace.  The
geometry pipeline probes every AP subarray with shifted ZC beams while the
STA holds a fixed ZC beam.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codebook import ZcSequence, circulant_shift


@dataclass(frozen=True)
class ShiftSchedule:
    c: np.ndarray  # (m,) STA shifts
    r: np.ndarray  # (n_rf, m) AP shifts per subarray
    n: int

    @property
    def m(self) -> int:
        return self.c.size

    @property
    def n_rf(self) -> int:
        return self.r.shape[0]

    def pairs(self, k: int) -> np.ndarray:
        return np.column_stack([self.r[k], self.c])


def draw_schedule(m: int, n: int, n_rf: int, rng: np.random.Generator,
                  max_tries: int = 10_000) -> ShiftSchedule:
    """Random shifts with no (row, column) pair repeated within a subarray.

    Columns come with replacement; a column is only drawn while it still has a
    free row, which is the same for every subarray since all share ``c``.
    """
    if not 1 <= m <= n * n:
        raise ValueError(f"need 1 <= m <= n^2, got m={m}, n={n}")
    used = np.zeros((n_rf, n, n), dtype=bool)
    c = np.empty(m, dtype=np.int64)
    r = np.empty((n_rf, m), dtype=np.int64)
    col_count = np.zeros(n, dtype=np.int64)
    for i in range(m):
        for _ in range(max_tries):
            ci = int(rng.integers(n))
            if col_count[ci] < n:
                break
        else:
            raise RuntimeError("could not find a fresh column")
        col_count[ci] += 1
        c[i] = ci
        for k in range(n_rf):
            free = np.flatnonzero(~used[k, :, ci])
            rk = int(free[rng.integers(free.size)])
            used[k, rk, ci] = True
            r[k, i] = rk
    return ShiftSchedule(c, r, n)


def full_schedule(n: int, n_rf: int) -> ShiftSchedule:
    """Deterministic sweep over all n^2 pairs (every subarray uses the same rows)."""
    rr, cc = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    r = np.tile(rr.ravel(), (n_rf, 1))
    return ShiftSchedule(cc.ravel().copy(), r, n)


def save_schedule(path: str | Path, sched: ShiftSchedule) -> None:
    lines = [f"# m={sched.m} n={sched.n} n_rf={sched.n_rf}"]
    for i in range(sched.m):
        lines.append(" ".join(str(v) for v in (i, sched.c[i], *sched.r[:, i])))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_schedule(path: str | Path) -> ShiftSchedule:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    head = dict(kv.split("=") for kv in text[0].lstrip("# ").split())
    rows = np.array([[int(v) for v in ln.split()] for ln in text[1:] if ln.strip()],
                    dtype=np.int64).reshape(-1, 2 + int(head["n_rf"]))
    return ShiftSchedule(rows[:, 1].copy(), rows[:, 2:].T.copy(), int(head["n"]))


def shifted_beams(z: ZcSequence, shifts: np.ndarray) -> np.ndarray:
    """Rows are the circulantly delayed sequences ``J_s z``."""
    return np.stack([circulant_shift(z.z, s) for s in np.atleast_1d(shifts)])


def complex_noise(rng: np.random.Generator, sigma: float, shape) -> np.ndarray:
    return sigma * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


@dataclass(frozen=True)
class MeasurementBatch:
    y: np.ndarray  # (n_rf, m)
    noise_var: float
    schedule: ShiftSchedule | None = None
    probes: np.ndarray | None = None


def measure(subchannels: np.ndarray, f: np.ndarray, w: np.ndarray, sigma: float,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """``y[k, m] = w[k, m]^T H_k f[m] + v``.

    ``subchannels`` is (n_rf, n, n), ``f`` is (m, n) and ``w`` is (n_rf, m, n).
    """
    subchannels = np.asarray(subchannels)
    f = np.atleast_2d(f)
    w = np.asarray(w)
    if w.ndim == 2:
        w = w[None]
    if subchannels.shape[0] != w.shape[0] or f.shape[0] != w.shape[1]:
        raise ValueError("beam and channel dimensions disagree")
    if subchannels.shape[2] != f.shape[1] or subchannels.shape[1] != w.shape[2]:
        raise ValueError("beam length does not match the array size")
    y = np.einsum("kmi,kij,mj->km", w, subchannels, f)
    if sigma > 0:
        if rng is None:
            raise ValueError("noisy measurements need a generator")
        y = y + complex_noise(rng, sigma, y.shape)
    return y


def measure_zc(subchannels: np.ndarray, z: ZcSequence, sched: ShiftSchedule,
               sigma: float, rng: np.random.Generator | None = None) -> MeasurementBatch:
    f = shifted_beams(z, sched.c)
    w = np.stack([shifted_beams(z, sched.r[k]) for k in range(sched.n_rf)])
    y = measure(subchannels, f, w, sigma, rng)
    return MeasurementBatch(y, sigma ** 2, schedule=sched)


class CsOperator:
    """Partial unitary 2D-DFT ``S -> [(U S U)[r_m, c_m]]_m`` and its adjoint.

    Both maps cost one N x N FFT.  Vectors follow ``vec`` in column-major
    order to match the Kronecker row structure ``(e_c^T U) kron (e_r^T U)``.
    """

    def __init__(self, rows: np.ndarray, cols: np.ndarray, n: int):
        self.rows = np.asarray(rows, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)
        self.n = n
        if self.rows.shape != self.cols.shape:
            raise ValueError("row and column index vectors differ in length")

    @classmethod
    def from_schedule(cls, sched: ShiftSchedule, k: int) -> "CsOperator":
        return cls(sched.r[k], sched.c, sched.n)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows.size, self.n * self.n

    def forward(self, S: np.ndarray) -> np.ndarray:
        full = np.fft.fft2(S) / self.n
        return full[self.rows, self.cols]

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        Y = np.zeros((self.n, self.n), dtype=complex)
        np.add.at(Y, (self.rows, self.cols), y)
        return np.fft.ifft2(Y) * self.n

    def matvec(self, s: np.ndarray) -> np.ndarray:
        return self.forward(s.reshape(self.n, self.n, order="F"))

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        return self.adjoint(y).ravel(order="F")

    def dense(self) -> np.ndarray:
        from .transforms import dft
        U = dft(self.n)
        return np.stack([np.kron(U[c], U[r]) for r, c in zip(self.rows, self.cols)])


def cs_forward(sched: ShiftSchedule, k: int, S: np.ndarray) -> np.ndarray:
    return CsOperator.from_schedule(sched, k).forward(S)


def cs_adjoint(sched: ShiftSchedule, k: int, y: np.ndarray) -> np.ndarray:
    return CsOperator.from_schedule(sched, k).adjoint(y)


def aoa_probe_schedule(m_ap: int, z: ZcSequence,
                       rng: np.random.Generator) -> np.ndarray:
    """Probe matrix: ``m_ap - 1`` distinct ZC shifts plus the sign-flipped first row."""
    n = z.n
    if m_ap < 2:
        raise ValueError("m_ap must be at least 2")
    if m_ap - 1 > n:
        raise ValueError(f"only {n} distinct shifts exist, need {m_ap - 1}")
    shifts = rng.choice(n, size=m_ap - 1, replace=False)
    rows = shifted_beams(z, shifts)
    flip = np.ones(n)
    flip[1:] = -1
    return np.vstack([rows, rows[0] * flip])


@dataclass(frozen=True)
class GainEstimate:
    alpha: complex
    y_comp: np.ndarray
    reliable: bool


def gain_compensate(y: np.ndarray, w_first: complex,
                    floor: float = 1e-6) -> GainEstimate:
    """Estimate the common gain from the first probe and its sign-flipped twin."""
    if w_first == 0:
        raise ValueError("first probe entry must be nonzero")
    y = np.asarray(y)
    alpha = (y[0] + y[-1]) / (2 * w_first)
    ref = floor * np.mean(np.abs(y) ** 2)
    if not np.abs(alpha) ** 2 > ref:
        return GainEstimate(complex(alpha), np.full_like(y, np.nan), False)
    return GainEstimate(complex(alpha), y / alpha, True)


class StackedCsOperator:
    """Independent partial 2D-DFT operators applied to a stack of B planes.

    ``rows`` and ``cols`` are (B, M); inputs are (B, N, N), outputs (B, M).
    """

    def __init__(self, rows: np.ndarray, cols: np.ndarray, n: int):
        self.rows = np.atleast_2d(np.asarray(rows, dtype=np.int64))
        self.cols = np.atleast_2d(np.asarray(cols, dtype=np.int64))
        if self.rows.shape != self.cols.shape:
            raise ValueError("row and column index arrays differ in shape")
        self.n = n
        self._b = np.arange(self.rows.shape[0])[:, None]
        flat = self.rows * n + self.cols
        self._unique = all(np.unique(f).size == f.size for f in flat)

    @classmethod
    def from_operators(cls, ops: list[CsOperator]) -> "StackedCsOperator":
        return cls(np.stack([o.rows for o in ops]), np.stack([o.cols for o in ops]),
                   ops[0].n)

    @property
    def batch(self) -> int:
        return self.rows.shape[0]

    @property
    def m(self) -> int:
        return self.rows.shape[1]

    def determined(self) -> np.ndarray:
        """Per plane: True when the samples cover every DFT bin (the operator is unitary)."""
        nn = self.n * self.n
        if self.m < nn:
            return np.zeros(self.batch, dtype=bool)
        flat = self.rows * self.n + self.cols
        return np.array([np.unique(f).size == nn for f in flat])

    def take(self, idx) -> "StackedCsOperator":
        return StackedCsOperator(self.rows[idx], self.cols[idx], self.n)

    def forward(self, S: np.ndarray) -> np.ndarray:
        full = np.fft.fft2(S, axes=(-2, -1)) / self.n
        return full[self._b, self.rows, self.cols]

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        Y = np.zeros((self.batch, self.n, self.n), dtype=complex)
        if self._unique:
            Y[self._b, self.rows, self.cols] = y
        else:
            np.add.at(Y, (np.broadcast_to(self._b, self.rows.shape), self.rows, self.cols), y)
        return np.fft.ifft2(Y, axes=(-2, -1)) * self.n
