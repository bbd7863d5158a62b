import numpy as np
import pytest

from shortlink.acquisition import (CsOperator, StackedCsOperator, aoa_probe_schedule,
                                   complex_noise, cs_adjoint, cs_forward, draw_schedule,
                                   full_schedule, gain_compensate, load_schedule, measure,
                                   measure_zc, save_schedule, shifted_beams)
from shortlink.channel import RoomSpec, synthesize_channel
from shortlink.codebook import (PhaseAlphabet, circulant_shift, mask, spectral_mask, steering,
                                zc_sequence)
from shortlink.transforms import dft, to_beamspace

from conftest import crandn

Z = zc_sequence(16, 9)
LAM = spectral_mask(Z)


def _distinct_pairs(sched):
    for k in range(sched.n_rf):
        pairs = {(int(r), int(c)) for r, c in sched.pairs(k)}
        if len(pairs) != sched.m:
            return False
    return True


def test_schedule_deterministic_and_distinct():
    a = draw_schedule(100, 16, 4, np.random.default_rng(5))
    b = draw_schedule(100, 16, 4, np.random.default_rng(5))
    c = draw_schedule(100, 16, 4, np.random.default_rng(6))
    assert np.array_equal(a.c, b.c) and np.array_equal(a.r, b.r)
    assert not np.array_equal(a.r, c.r)
    assert _distinct_pairs(a) and _distinct_pairs(c)
    assert a.r.min() >= 0 and a.r.max() < 16 and a.c.max() < 16


def test_schedule_exhaustion():
    s = draw_schedule(256, 16, 4, np.random.default_rng(0))
    assert _distinct_pairs(s)
    full = full_schedule(16, 2)
    assert {(int(r), int(c)) for r, c in full.pairs(1)} == {(r, c) for r in range(16)
                                                            for c in range(16)}


def test_schedule_single_and_bounds():
    assert draw_schedule(1, 16, 4, np.random.default_rng(0)).m == 1
    with pytest.raises(ValueError):
        draw_schedule(257, 16, 4, np.random.default_rng(0))


def test_schedule_text_round_trip(tmp_path):
    s = draw_schedule(20, 16, 4, np.random.default_rng(2))
    save_schedule(tmp_path / "s.txt", s)
    back = load_schedule(tmp_path / "s.txt")
    assert np.array_equal(back.c, s.c) and np.array_equal(back.r, s.r) and back.n == 16


def test_measure_triple_product(rng):
    H = np.zeros((1, 16, 16), complex)
    H[0, 0, 0] = 1
    f = circulant_shift(Z.z, 3)[None]
    w = circulant_shift(Z.z, 5)[None, None]
    y = measure(H, f, w, 0.0)
    assert y[0, 0] == pytest.approx(w[0, 0, 0] * f[0, 0])
    assert np.all(measure(H, np.zeros((1, 16)), w, 0.0) == 0)


def test_measure_noise_variance(rng):
    H = np.zeros((1, 16, 16), complex)
    f = np.tile(Z.z, (10_000, 1))
    w = np.tile(Z.z, (1, 10_000, 1))
    y = measure(H, f, w, 0.5, rng)
    assert np.var(y) == pytest.approx(0.25, rel=0.05)


def test_measure_shape_checks():
    with pytest.raises(ValueError):
        measure(np.zeros((2, 16, 16)), np.zeros((3, 16)), np.zeros((2, 4, 16)), 0.0)


def _eq6_dense(Hk, sched, k):
    """Literal shifted-ZC measurement of U X U through explicit delay matrices."""
    U = dft(16)
    X = U.conj().T @ Hk @ U.conj().T
    J = np.zeros((16, 16))
    J[np.arange(16), (np.arange(16) - 1) % 16] = 1
    out = []
    for r, c in sched.pairs(k):
        w = np.linalg.matrix_power(J, r) @ Z.z
        f = np.linalg.matrix_power(J, c) @ Z.z
        out.append(w @ U @ X @ U @ f)
    return np.array(out)


def test_model_equivalence(ap, sta):
    ch = synthesize_channel(ap, sta, RoomSpec())
    sched = draw_schedule(40, 16, 4, np.random.default_rng(9))
    y = measure_zc(ch.subchannels, Z, sched, 0.0).y
    for k in range(4):
        S = mask(to_beamspace(ch.subchannels[k]), LAM)
        ref = _eq6_dense(ch.subchannels[k], sched, k)
        scale = np.max(np.abs(ref))
        assert np.max(np.abs(cs_forward(sched, k, S) - ref)) < 1e-9 * scale
        assert np.max(np.abs(y[k] - ref)) < 1e-9 * scale


def test_single_entry_is_dft_sample():
    sched = draw_schedule(30, 16, 1, np.random.default_rng(3))
    S = np.zeros((16, 16), complex)
    S[4, 11] = 2 - 1j
    U = dft(16)
    ref = np.array([U[r, 4] * U[11, c] * S[4, 11] for r, c in sched.pairs(0)])
    assert np.allclose(cs_forward(sched, 0, S), ref, atol=1e-14)


def test_adjoint_identity(rng):
    sched = draw_schedule(50, 16, 2, rng)
    for k in range(2):
        S, y = crandn(rng, 16, 16), crandn(rng, 50)
        lhs = np.vdot(y, cs_forward(sched, k, S))
        rhs = np.vdot(cs_adjoint(sched, k, y), S)
        assert abs(lhs - rhs) < 1e-10 * abs(lhs)


def test_operator_matches_dense(rng):
    op = CsOperator.from_schedule(draw_schedule(20, 16, 1, rng), 0)
    A = op.dense()
    s, y = crandn(rng, 256), crandn(rng, 20)
    assert np.allclose(op.matvec(s), A @ s, atol=1e-12)
    assert np.allclose(op.rmatvec(y), A.conj().T @ y, atol=1e-12)


def test_stacked_operator(rng):
    ops = [CsOperator.from_schedule(draw_schedule(12, 16, 1, rng), 0) for _ in range(3)]
    st = StackedCsOperator.from_operators(ops)
    S = crandn(rng, 3, 16, 16)
    y = crandn(rng, 3, 12)
    fw, adj = st.forward(S), st.adjoint(y)
    for b, op in enumerate(ops):
        assert np.allclose(fw[b], op.forward(S[b]))
        assert np.allclose(adj[b], op.adjoint(y[b]))
    assert not st.determined().any()
    full = full_schedule(16, 1)
    assert StackedCsOperator(full.r, full.c[None], 16).determined().all()


def test_probe_schedule_structure(rng):
    P = aoa_probe_schedule(8, Z, rng)
    assert P.shape == (8, 16)
    shifts = [next(s for s in range(16) if np.allclose(circulant_shift(Z.z, s), row))
              for row in P[:-1]]
    assert len(set(shifts)) == 7
    total = P[0] + P[-1]
    assert total[0] == pytest.approx(2 * P[0, 0])
    assert np.allclose(total[1:], 0)
    assert aoa_probe_schedule(2, Z, rng).shape == (2, 16)
    with pytest.raises(ValueError):
        aoa_probe_schedule(18, Z, rng)


def test_probe_rows_in_alphabet_of_sequence():
    # every ZC shift uses the entries of z itself, so membership follows z's grid
    P = aoa_probe_schedule(6, Z, np.random.default_rng(0))
    assert PhaseAlphabet(5, 16).contains(P[:-1])


def test_gain_compensation_noiseless():
    omega, alpha = 0.3, 0.7 - 0.2j
    P = aoa_probe_schedule(6, Z, np.random.default_rng(1))
    y = alpha * P @ steering(16, omega)
    g = gain_compensate(y, P[0, 0])
    assert g.reliable
    assert g.alpha == pytest.approx(alpha, abs=1e-12)
    g2 = gain_compensate(y * (3 + 4j), P[0, 0])
    assert np.allclose(g2.y_comp, g.y_comp)


def test_gain_floor_trips():
    g = gain_compensate(np.array([1.0, 2.0, -1.0]), 0.25)
    assert not g.reliable
    with pytest.raises(ValueError):
        gain_compensate(np.ones(3), 0.0)


def test_gain_unbiased_under_noise():
    r = np.random.default_rng(4)
    P = aoa_probe_schedule(4, Z, r)
    alpha, sigma = 0.8 + 0.1j, 0.3
    clean = alpha * P @ steering(16, -0.4)
    est = np.array([gain_compensate(clean + complex_noise(r, sigma, 4), P[0, 0]).alpha
                    for _ in range(10_000)])
    se = est.std() / np.sqrt(est.size)
    assert abs(est.mean() - alpha) < 3 * se


def test_snr_bookkeeping(ap, sta):
    # unit mean gain per antenna pair makes E|w^T H f|^2 = 1 over the shift schedule
    H = synthesize_channel(ap, sta, RoomSpec()).subchannels[:1]
    H = H / np.sqrt(np.sum(np.abs(H) ** 2) / 256)
    full = full_schedule(16, 1)
    assert np.mean(np.abs(measure_zc(H, Z, full, 0.0).y) ** 2) == pytest.approx(1.0, rel=1e-10)
    r = np.random.default_rng(8)
    sigma = np.sqrt(0.1)
    sched = draw_schedule(256, 16, 1, r)
    rx = [measure_zc(H, Z, sched, sigma, r).y for _ in range(40)]
    noise = np.concatenate([y - measure_zc(H, Z, sched, 0.0).y for y in rx], axis=None)
    signal = np.mean(np.abs(measure_zc(H, Z, sched, 0.0).y) ** 2)
    emp_db = 10 * np.log10(signal / np.mean(np.abs(noise) ** 2))
    assert abs(emp_db - 10.0) < 0.2
