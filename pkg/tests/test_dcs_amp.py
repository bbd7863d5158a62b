import itertools

import numpy as np
import pytest

from shortlink import _kernels_py, kernels
from shortlink.acquisition import CsOperator, StackedCsOperator, draw_schedule, full_schedule
from shortlink.codebook import mask, spectral_mask, zc_sequence
from shortlink.dcs_amp import (EPS_RANGE, BgPrior, DcsPosterior, PlanePrior, bg_amp,
                               bg_amp_robust, dcs_amp, em_bg_amp, em_update, group_active,
                               initial_prior, unmask_reconstruct)
from shortlink.transforms import from_beamspace

from conftest import crandn

N = 16


def nmse(est, ref):
    return np.linalg.norm(est - ref) ** 2 / np.linalg.norm(ref) ** 2


def _full_op():
    s = full_schedule(N, 1)
    return CsOperator(s.r[0], s.c, N)


def _bg_signal(rng, k_active, shape=(N, N)):
    S = np.zeros(shape, complex)
    idx = rng.choice(S.size, k_active, replace=False)
    S.ravel()[idx] = crandn(rng, k_active) * 3
    return S


def test_prior_validation():
    assert BgPrior(eps=0.2, p_act=0.1).p_deact == pytest.approx(0.4)
    with pytest.raises(ValueError):
        BgPrior(eps=0.2, p_act=0.5)
    with pytest.raises(ValueError):
        BgPrior(kappa=1.5)


def test_noiseless_full_sampling_one_sparse():
    op = _full_op()
    S = np.zeros((N, N), complex)
    S[3, 7] = 2 - 1j
    res = bg_amp(op.forward(S), op, BgPrior(eps=0.05, rho=4.0), noise_var=0.0)
    assert 10 * np.log10(nmse(res.mean, S)) < -80


def test_noiseless_full_sampling_dense(rng):
    op = _full_op()
    S = crandn(rng, N, N)
    res = em_bg_amp(op.forward(S), op, 0.0)
    # dense linear-solve oracle on the explicit sensing matrix
    A = op.dense()
    direct = np.linalg.solve(A, op.forward(S)).reshape(N, N, order="F")
    assert np.max(np.abs(res.amp.mean - direct)) < 1e-8


def test_support_recovery_rate():
    hits = 0
    for t in range(200):
        r = np.random.default_rng(1000 + t)
        S = _bg_signal(r, 4)
        op = CsOperator.from_schedule(draw_schedule(96, N, 1, r), 0)
        clean = op.forward(S)
        nv = np.mean(np.abs(clean) ** 2) / 100
        y = clean + np.sqrt(nv / 2) * (r.standard_normal(96) + 1j * r.standard_normal(96))
        res = em_bg_amp(y, op, nv)
        hits += np.array_equal(res.amp.pi_post > 0.5, S != 0)
    assert hits >= 180


def test_backends_agree(rng):
    B, M = 3, 40
    rows = rng.integers(N, size=(B, M))
    cols = rng.integers(N, size=(B, M))
    y = crandn(rng, B, M)
    pi = np.full((B, N * N), 0.1)
    xi = np.zeros((B, N * N), complex)
    psi = np.full((B, N * N), 2.0)
    nv = np.full(B, 0.05)
    x0 = np.zeros((B, N * N), complex)
    v0 = pi * psi
    s0 = np.zeros((B, M), complex)
    a = _kernels_py.amp_solve(y, rows, cols, N, pi, xi, psi, nv, x0, v0, s0, 25, 1e-6, 1.0)
    b = kernels.amp_solve(y, rows, cols, N, pi, xi, psi, nv, x0, v0, s0, 25, 1e-6, 1.0)
    for u, v in zip(a, b):
        assert np.allclose(u, v, rtol=1e-9, atol=1e-11)


def test_bg_denoise_backends(rng):
    r = crandn(rng, 50)
    args = (r, 0.3, np.full(50, 0.2), np.zeros(50, complex), np.full(50, 2.0))
    for u, v in zip(_kernels_py.bg_denoise(*args), kernels.bg_denoise(*args)):
        assert np.allclose(u, v, rtol=1e-12, atol=1e-14)


def test_bg_denoise_against_quadrature():
    # posterior mean by direct numerical integration of the 2D complex density
    r, tau, pi, xi, psi = 0.8 - 0.3j, 0.4, 0.3, 0.2 + 0.1j, 1.5
    g = np.linspace(-8, 8, 801)
    X = g[:, None] + 1j * g[None, :]
    slab = np.exp(-np.abs(X - xi) ** 2 / psi) / (np.pi * psi)
    lik = np.exp(-np.abs(r - X) ** 2 / tau) / (np.pi * tau)
    dA = (g[1] - g[0]) ** 2
    w_on = pi * np.sum(slab * lik) * dA
    w_off = (1 - pi) * np.exp(-abs(r) ** 2 / tau) / (np.pi * tau)
    mean_ref = pi * np.sum(X * slab * lik) * dA / (w_on + w_off)
    mean, _, p, _ = _kernels_py.bg_denoise(np.array([r]), tau, np.array([pi]),
                                           np.array([xi]), np.array([psi]))
    assert p[0] == pytest.approx(w_on / (w_on + w_off), rel=1e-6)
    assert mean[0] == pytest.approx(mean_ref, rel=1e-6)


def test_stacked_matches_single(rng):
    ops = [CsOperator.from_schedule(draw_schedule(40, N, 1, rng), 0) for _ in range(3)]
    S = [_bg_signal(rng, 5) for _ in range(3)]
    ys = [o.forward(s) for o, s in zip(ops, S)]
    prior = BgPrior(eps=0.05, rho=9.0)
    stacked = bg_amp(np.stack(ys), StackedCsOperator.from_operators(ops), prior, 1e-3)
    for b in range(3):
        single = bg_amp(ys[b], ops[b], prior, 1e-3)
        assert np.allclose(stacked.mean[b], single.mean, atol=1e-12)


def test_robust_retry_clears_or_keeps_flag(rng):
    op = CsOperator.from_schedule(draw_schedule(16, N, 1, rng), 0)
    y = op.forward(crandn(rng, N, N))
    res = bg_amp_robust(y, op, BgPrior(eps=0.5, rho=1e-6), 1e-9)
    assert np.all(np.isfinite(res.mean))
    assert res.diverged.dtype == bool


def test_initial_prior_energy():
    y = np.full(10, 2.0 + 0j)
    p = initial_prior(y, 1.0, eps=0.05)
    assert p.rho == pytest.approx((4.0 - 1.0) / 0.05)
    assert (p.eps, p.kappa, p.p_act, p.zeta) == (0.05, 0.5, 0.05, 0.0)


# group_active

def test_groups_full_fraction():
    E = np.zeros((2, 4, 4))
    E[0, 1, 1], E[1, 2, 3], E[0, 0, 0] = 1.0, 2.0, 0.5
    s1, s2 = group_active(E, 1.0)
    assert s1.sum() == 3 and not np.any(s1 & s2) and np.all(s1 | s2)


def test_groups_dominant_entry():
    E = np.full((1, 4, 4), np.sqrt(0.05 / 15))
    E[0, 2, 2] = np.sqrt(0.95)
    s1, _ = group_active(E, 0.9)
    assert s1.sum() == 1 and s1[2, 2]


def test_groups_zero_energy():
    s1, s2 = group_active(np.zeros((3, 4, 4)))
    assert not s1.any() and s2.all()


def test_groups_minimal_bruteforce(rng):
    for _ in range(5):
        E = rng.random((1, 4, 4)) ** 3
        s1, _ = group_active(np.sqrt(E), 0.9)
        e = E[0].ravel()
        target = 0.9 * e.sum()
        best = next(size for size in range(1, 17)
                    if any(e[list(c)].sum() >= target
                           for c in itertools.combinations(range(16), size)))
        assert s1.sum() == best
        assert e[s1.ravel()].sum() >= target


# EM

def _exact_posterior(rng, eps, zeta, rho, shape):
    on = rng.random(shape) < eps
    amp = zeta + np.sqrt(rho) * crandn(rng, *shape)
    mu = np.where(on, amp, zeta)
    return DcsPosterior(on.astype(float), mu, np.where(on, 0.0, rho))


def test_em_recovers_generator():
    rng = np.random.default_rng(2)
    post = _exact_posterior(rng, 0.2, 0.5 - 0.5j, 2.0, (4, 50, 50))
    g = np.ones((50, 50), dtype=bool)
    (p,) = em_update(post, [g], [BgPrior()])
    assert p.eps == pytest.approx(0.2, rel=0.05)
    assert p.rho == pytest.approx(2.0, rel=0.05)
    assert abs(p.zeta - (0.5 - 0.5j)) < 0.05 * abs(0.5 - 0.5j)


def test_em_all_inactive_hits_floor():
    post = DcsPosterior(np.zeros((4, 8, 8)), np.zeros((4, 8, 8), complex), np.ones((4, 8, 8)))
    (p,) = em_update(post, [np.ones((8, 8), bool)], [BgPrior()])
    assert p.eps == EPS_RANGE[0]


def test_em_two_groups_ordering():
    rng = np.random.default_rng(3)
    a = _exact_posterior(rng, 0.3, 0, 1.0, (4, 16, 16))
    b = _exact_posterior(rng, 0.01, 0, 1.0, (4, 16, 16))
    g1 = np.zeros((16, 16), bool)
    g1[:8] = True
    post = DcsPosterior(np.where(g1, a.pi, b.pi), np.where(g1, a.mu, b.mu),
                        np.where(g1, a.nu, b.nu))
    p1, p2 = em_update(post, [g1, ~g1], [BgPrior(), BgPrior()])
    assert p1.eps > p2.eps


def test_em_empty_group_unchanged():
    post = DcsPosterior(np.ones((2, 4, 4)), np.ones((2, 4, 4), complex), np.zeros((2, 4, 4)))
    prior = BgPrior(eps=0.1, rho=3.0)
    out = em_update(post, [np.zeros((4, 4), bool)], [prior])
    assert out[0] is prior


def test_em_support_chain_stays_persistent():
    # alternating on/off beliefs must not produce an anti-persistent chain
    pi = np.zeros((4, 1, 1))
    pi[::2] = 1.0
    post = DcsPosterior(pi, np.ones((4, 1, 1), complex), np.zeros((4, 1, 1)))
    (p,) = em_update(post, [np.ones((1, 1), bool)], [BgPrior()])
    assert p.p_act <= p.eps
    assert 1 - p.p_deact >= p.p_act


def test_em_clips_ranges(rng):
    post = _exact_posterior(rng, 0.9, 0, 1.0, (3, 8, 8))
    (p,) = em_update(post, [np.ones((8, 8), bool)], [BgPrior()])
    assert p.eps == EPS_RANGE[1] and 0 <= p.kappa <= 0.99


# DCS-AMP

def _plane_ops(rng, k, m):
    return [CsOperator.from_schedule(draw_schedule(m, N, 1, rng), 0) for _ in range(k)]


def test_dcs_identical_planes_pool_information():
    wins, diffs = 0, []
    for t in range(40):
        r = np.random.default_rng(500 + t)
        S = _bg_signal(r, 4)
        ops = _plane_ops(r, 4, 16)
        clean = [o.forward(S) for o in ops]
        nv = np.mean(np.abs(clean) ** 2) / 10
        y = np.stack([c + np.sqrt(nv / 2) * (r.standard_normal(16) + 1j * r.standard_normal(16))
                      for c in clean])
        prior = BgPrior(eps=4 / 256, zeta=0, rho=9.0, kappa=0.99, p_act=1e-6, noise_var=nv)
        single = np.mean([nmse(bg_amp(y[k], ops[k], prior).mean, S) for k in range(4)])
        est = dcs_amp(y, ops, nv, priors=[prior], passes=4)
        joint = np.mean([nmse(est.S[k], S) for k in range(4)])
        diffs.append(joint - single)
    assert np.mean(diffs) < 0


def test_dcs_independent_planes_reduce_to_amp():
    r = np.random.default_rng(7)
    ops = _plane_ops(r, 3, 60)
    S = [_bg_signal(r, 5) for _ in range(3)]
    y = np.stack([o.forward(s) for o, s in zip(ops, S)])
    eps = 5 / 256
    prior = BgPrior(eps=eps, rho=9.0, kappa=0.0, p_act=eps, noise_var=1e-4)
    # stationary, memoryless chain: the cross-plane messages carry the prior only
    est = dcs_amp(y, ops, 1e-4, priors=[prior], passes=1)
    for k in range(3):
        ref = bg_amp(y[k], ops[k], prior)
        assert nmse(est.S[k], ref.mean) < 1e-6


def test_dcs_batched_matches_single(rng):
    K, B = 3, 2
    scheds = [draw_schedule(30, N, K, rng) for _ in range(B)]
    S = [[_bg_signal(rng, 4) for _ in range(K)] for _ in range(B)]
    y = np.stack([[CsOperator.from_schedule(scheds[b], k).forward(S[b][k]) for b in range(B)]
                  for k in range(K)])
    ops = [StackedCsOperator(np.stack([scheds[b].r[k] for b in range(B)]),
                             np.stack([scheds[b].c for b in range(B)]), N) for k in range(K)]
    est = dcs_amp(y, ops, 1e-3, passes=3)
    for b in range(B):
        one = dcs_amp(y[:, b], [CsOperator.from_schedule(scheds[b], k) for k in range(K)],
                      1e-3, passes=3)
        assert np.allclose(est.S[:, b], one.S, atol=1e-9)


def test_dcs_needs_two_planes(rng):
    op = _plane_ops(rng, 1, 10)
    with pytest.raises(ValueError):
        dcs_amp(np.zeros((1, 10), complex), op, 0.1)


def test_dcs_noiseless_full_sampling_exact(rng):
    op = _full_op()
    S = crandn(rng, 4, N, N)
    est = dcs_amp(np.stack([op.forward(s) for s in S]), [op] * 4, 0.0, passes=2)
    assert 10 * np.log10(nmse(est.S, S)) < -80


# unmask / reconstruct

def test_unmask_chain(rng):
    lam = spectral_mask(zc_sequence(N, 9))
    X = crandn(rng, N, N)
    S = mask(X, lam)
    Xh, Hh = unmask_reconstruct(S, lam)
    assert np.allclose(Hh, from_beamspace(X), atol=1e-10)
    assert np.allclose(unmask_reconstruct(np.zeros((N, N)), lam)[1], 0)
    E = S + 0.1 * crandn(rng, N, N)
    Xe, He = unmask_reconstruct(E, lam)
    assert nmse(E, S) == pytest.approx(nmse(Xe, X), rel=1e-9)
    assert nmse(He, from_beamspace(X)) == pytest.approx(nmse(Xe, X), rel=1e-9)
