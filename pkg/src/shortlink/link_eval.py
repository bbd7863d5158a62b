"""Beamformers, effective multi-user uplink channel and MMSE rates.

``run_trial`` draws one multi-user placement, runs every requested link
configuration pipeline on it and scores the resulting beams.  All methods of
one trial see the same channel; the compressive methods share their pilot
measurements, and ML and GMP share the uplink probes.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import dcs_amp as dcs
from . import geo_mp
from .acquisition import (StackedCsOperator, aoa_probe_schedule, complex_noise,
                          draw_schedule, measure_zc)
from .channel import RoomSpec, synthesize_channel
from .codebook import (check_realizable, phase_quantize, spectral_mask, steering,
                       zc_sequence)
from .config import METHODS, ScenarioConfig
from .geometry import aoa_offsets, build_ap_layout, place_sta, true_local_aoas

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BeamPair:
    f: np.ndarray
    w: np.ndarray
    flagged: bool = False


@dataclass(frozen=True)
class LinkReport:
    method: str
    H_UL: np.ndarray
    sinr: np.ndarray
    rate: np.ndarray
    seed: int
    flagged: tuple = ()


def default_beam(n: int) -> np.ndarray:
    return np.full(n, 1 / np.sqrt(n), dtype=complex)


def _fix_phase(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    if v[i] == 0:
        return v
    return v * (np.conj(v[i]) / np.abs(v[i]))


def svd_beamformers(H: np.ndarray, q: int) -> BeamPair:
    """Quantized top singular pair: ``f`` from the right, ``w`` the conjugate left."""
    H = np.asarray(H)
    n = H.shape[0]
    if not np.all(np.isfinite(H)) or not np.any(H):
        return BeamPair(default_beam(H.shape[1]), default_beam(n), True)
    u, _, vh = np.linalg.svd(H)
    f = phase_quantize(_fix_phase(vh[0].conj()), q)
    w = phase_quantize(np.conj(_fix_phase(u[:, 0])), q)
    return BeamPair(f, w)


def steering_beamformer(omega: float, q: int, n: int) -> np.ndarray:
    if not abs(omega) < np.pi / 2:
        raise ValueError("steering angle must lie in (-pi/2, pi/2)")
    return phase_quantize(np.conj(steering(n, omega)), q)


def effective_channel(subchannels: np.ndarray, f: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``H_UL[i, j] = w_i^T H_{i,j} f_j``.

    ``subchannels`` is (K, U, N, N) indexed [AP subarray, STA]; ``f`` is
    (U, N) and ``w`` is (K, N).
    """
    return np.einsum("ki,kuij,uj->ku", w, subchannels, f)


def mmse_sinr_rates(H_UL: np.ndarray, snr: float) -> tuple[np.ndarray, np.ndarray]:
    if not snr > 0:
        raise ValueError("snr must be positive")
    H = np.atleast_2d(H_UL)
    G = H.conj().T @ H + np.eye(H.shape[1]) / snr
    try:
        diag = np.real(np.diag(np.linalg.inv(G)))
    except np.linalg.LinAlgError as exc:
        raise FloatingPointError("MMSE matrix inversion failed") from exc
    rho = np.maximum(snr / diag - 1.0, 0.0)
    return rho, np.log2(1.0 + rho)


def trial_seed(master_seed: int, trial: int) -> int:
    """Counter-based split: one 63-bit seed per (master seed, trial index)."""
    ss = np.random.SeedSequence([int(master_seed), int(trial)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


_STREAMS = {"placement": 0, "cs": 1, "uplink": 2, "downlink": 3}


def _stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _STREAMS[name]]))


class Scenario:
    """Physical setup and offline tables for one (SNR, M) operating point."""

    def __init__(self, cfg: ScenarioConfig, snr_db: float | None = None,
                 m: int | None = None, noiseless_training: bool = False):
        self.cfg = cfg
        self.noiseless_training = noiseless_training
        self.snr_db = float(cfg.snr_db[0] if snr_db is None else snr_db)
        self.m = int(cfg.m_pilots[0] if m is None else m)
        if not 1 <= self.m <= cfg.n ** 2:
            raise ValueError("m must lie in [1, n^2]")
        self.ap = build_ap_layout(cfg.n, cfg.n_rf, cfg.wavelength_m, cfg.l_ap_m)
        r = cfg.room
        self.room = RoomSpec(r.width_m, r.depth_m, r.height_m, r.ap_x_m, r.ap_height_m,
                             r.ceiling_coef, (r.wall_x0_coef, r.wall_x1_coef),
                             r.floor_coef, r.floor_reflections) if r.enabled else None
        self.zc = zc_sequence(cfg.n, cfg.zc_root)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            self.zc_realizable = check_realizable(self.zc, cfg.q_bits)
        self.lam = spectral_mask(self.zc)
        self.grid = geo_mp.AngularGrid.from_resolution(cfg.grid_deg / 180)

    @property
    def snr(self) -> float:
        return 10 ** (self.snr_db / 10)

    @property
    def pilot_sigma(self) -> float:
        """Noise std on training measurements; the rate evaluation always uses ``snr``."""
        return 0.0 if self.noiseless_training else float(np.sqrt(1 / self.snr))

    @property
    def m_ap(self) -> int:
        return min(max(self.m // 2, 2), self.cfg.n + 1)

    @property
    def m_sta(self) -> int:
        return min(max(self.m - self.m // 2, 2), self.cfg.n + 1)

    @cached_property
    def chain_tables(self) -> geo_mp.ChainTables:
        return geo_mp.build_chain_tables(self.grid, aoa_offsets(self.ap), self.cfg.d_min_m,
                                         self.cfg.d_max_m, self.cfg.factor_samples)

    def draw_placement(self, rng: np.random.Generator):
        cfg = self.cfg
        gam = rng.choice(np.asarray(cfg.gamma_set_deg, float), cfg.n_rf, replace=False)
        the = rng.choice(np.asarray(cfg.theta_set_deg, float), cfg.n_rf, replace=True)
        return [place_sta(self.ap, cfg.d_m, np.radians(g), np.radians(t), cfg.n, cfg.l_sta_m)
                for g, t in zip(gam, the)]

    def channels(self, stas) -> np.ndarray:
        """(K, U, N, N) subchannels scaled to unit mean gain per antenna pair."""
        H = np.stack([synthesize_channel(self.ap, s, self.room).subchannels for s in stas],
                     axis=1)
        power = np.mean(np.sum(np.abs(H) ** 2, axis=(2, 3))) / self.cfg.n ** 2
        return H / np.sqrt(power)


@dataclass
class TrialOutcome:
    seed: int
    reports: dict = field(default_factory=dict)
    aoa_errors: dict = field(default_factory=dict)


def _cs_estimates(sc: Scenario, H: np.ndarray, rng: np.random.Generator,
                  methods) -> dict[str, np.ndarray]:
    """Antenna-domain estimates (K, U, N, N) for the compressive methods."""
    cfg = sc.cfg
    K, U, N = H.shape[0], H.shape[1], cfg.n
    sigma = sc.pilot_sigma
    scheds = [draw_schedule(sc.m, N, K, rng) for _ in range(U)]
    y = np.stack([measure_zc(H[:, u], sc.zc, scheds[u], sigma, rng).y for u in range(U)],
                 axis=1)  # (K, U, M)
    ops = [StackedCsOperator(np.stack([scheds[u].r[k] for u in range(U)]),
                             np.stack([scheds[u].c for u in range(U)]), N) for k in range(K)]
    flat_op = StackedCsOperator(np.concatenate([o.rows for o in ops]),
                                np.concatenate([o.cols for o in ops]), N)
    noise_var = sigma ** 2
    std = dcs.em_bg_amp(y.reshape(K * U, -1), flat_op, noise_var, cfg.em_iters,
                        cfg.amp_iters, cfg.amp_tol)
    S_amp = std.amp.mean.reshape(K, U, N, N)
    out = {}
    if "amp" in methods:
        out["amp"] = dcs.unmask_reconstruct(S_amp, sc.lam)[1]
    if "dcs-amp" in methods:
        groups = [list(dcs.group_active(S_amp[:, u], cfg.delta_e)) for u in range(U)]
        est = dcs.dcs_amp(y, ops, noise_var, groups=groups, passes=cfg.dcs_passes,
                          max_iters=cfg.amp_iters, tol=cfg.amp_tol)
        out["dcs-amp"] = dcs.unmask_reconstruct(est.S, sc.lam)[1]
    return out


def uplink_log_likelihoods(sc: Scenario, H_sta: np.ndarray,
                           rng: np.random.Generator) -> np.ndarray:
    """(K, G) local-AoA log-likelihoods from one STA's uplink probes.

    The STA holds the unshifted ZC beam; every AP subarray draws its own
    probe matrix.  A subarray whose gain estimate trips the floor gets a flat
    log-likelihood.
    """
    K = H_sta.shape[0]
    sigma = sc.pilot_sigma
    probes = [aoa_probe_schedule(sc.m_ap, sc.zc, rng) for _ in range(K)]
    noise = complex_noise(rng, sigma, (K, sc.m_ap))
    out = np.zeros((K, sc.grid.size))
    for k in range(K):
        y = probes[k] @ H_sta[k] @ sc.zc.z + noise[k]
        gain = geo_mp.gain_compensate(y, probes[k][0, 0])
        if gain.reliable:
            out[k] = geo_mp.log_likelihood(gain.y_comp, probes[k], gain.alpha, sigma, sc.grid)
    return out


def _aoa_pipeline(sc: Scenario, H: np.ndarray, seed: int, methods, truth=None):
    """Beams for the ML and GMP methods: uplink local AoAs, then downlink STA AoAs."""
    cfg = sc.cfg
    K, U, N = H.shape[0], H.shape[1], cfg.n
    sigma = sc.pilot_sigma
    up = _stream(seed, "uplink")
    log_lik = np.stack([uplink_log_likelihoods(sc, H[:, u], up) for u in range(U)])
    down = _stream(seed, "downlink")
    sta_probes = [aoa_probe_schedule(sc.m_sta, sc.zc, down) for _ in range(U)]
    sta_noise = complex_noise(down, sigma, (U, sc.m_sta))

    out, errs = {}, {}
    for method in ("ml", "gmp"):
        if method not in methods:
            continue
        omega = np.empty((U, K))
        for u in range(U):
            if method == "gmp":
                res = geo_mp.forward_backward(log_lik[u], sc.chain_tables)
                omega[u] = res.estimates()
            else:
                omega[u] = sc.grid.angles[np.argmax(log_lik[u], axis=1)]
        w = np.stack([steering_beamformer(omega[k, k], cfg.q_bits, N) for k in range(K)])
        f = np.empty((U, N), dtype=complex)
        for u in range(U):
            y = sta_probes[u] @ (H[u, u].T @ w[u]) + sta_noise[u]
            phi = geo_mp.sta_ml_aoa(y, sta_probes[u], sigma, sc.grid)
            f[u] = steering_beamformer(phi, cfg.q_bits, N)
        out[method] = (f, w)
        if truth is not None:
            errs[method] = np.abs(omega - truth)
    return out, errs


def run_trial(sc: Scenario, seed: int, methods=METHODS) -> TrialOutcome:
    """Run every method in ``methods`` on one seeded placement."""
    cfg = sc.cfg
    methods = tuple(methods)
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods: {sorted(unknown)}")
    stas = sc.draw_placement(_stream(seed, "placement"))
    H = sc.channels(stas)
    K, U, N = H.shape[0], H.shape[1], cfg.n
    beams: dict[str, tuple[np.ndarray, np.ndarray, tuple]] = {}

    def from_estimates(Hhat):
        pairs = [svd_beamformers(Hhat[k, k], cfg.q_bits) for k in range(K)]
        f = np.stack([p.f for p in pairs])
        w = np.stack([p.w for p in pairs])
        return f, w, tuple(k for k, p in enumerate(pairs) if p.flagged)

    if "perfect-csi" in methods:
        beams["perfect-csi"] = from_estimates(H)
    cs = [m for m in ("amp", "dcs-amp") if m in methods]
    if cs:
        try:
            est = _cs_estimates(sc, H, _stream(seed, "cs"), cs)
            for m in cs:
                beams[m] = from_estimates(est[m])
        except (FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("seed %d: compressive estimation failed (%s)", seed, exc)
            for m in cs:
                beams[m] = _fallback(K, U, N)
    outcome = TrialOutcome(seed)
    geo = [m for m in ("ml", "gmp") if m in methods]
    if geo:
        truth = np.stack([true_local_aoas(sc.ap, s) for s in stas])
        try:
            res, errs = _aoa_pipeline(sc, H, seed, geo, truth)
            for m, (f, w) in res.items():
                beams[m] = (f, w, ())
            outcome.aoa_errors.update(errs)
        except (FloatingPointError, ValueError) as exc:
            log.warning("seed %d: AoA pipeline failed (%s)", seed, exc)
            for m in geo:
                beams[m] = _fallback(K, U, N)

    for m in methods:
        f, w, flagged = beams[m]
        H_UL = effective_channel(H, f, w)
        sinr, rate = mmse_sinr_rates(H_UL, sc.snr)
        outcome.reports[m] = LinkReport(m, H_UL, sinr, rate, seed, flagged)
    return outcome


def _fallback(K, U, N):
    f = np.tile(default_beam(N), (U, 1))
    w = np.tile(default_beam(N), (K, 1))
    return f, w, tuple(range(K))
