import numpy as np
import pytest

from shortlink.channel import (ChannelSet, RoomSpec, antenna_domain, beamspace, dump_matrix,
                               energy_metrics, load_matrix, los_channel, ray_count,
                               synthesize_channel)
from shortlink.codebook import steering
from shortlink.geometry import build_ap_layout, pairwise_distances, place_sta
from shortlink.transforms import dft

from conftest import crandn

LAM = 0.005


def test_los_scalar_examples():
    h = los_channel(np.array([0.8]), LAM)[0]
    assert abs(h) == pytest.approx(0.005 / (4 * np.pi * 0.8), rel=1e-12)
    assert abs(np.angle(h)) < 1e-9
    assert los_channel(np.array([LAM]), LAM)[0] == pytest.approx(1 / (4 * np.pi))


def test_los_rejects_nonpositive():
    with pytest.raises(ValueError):
        los_channel(np.array([0.1, 0.0]), LAM)


def test_los_elementwise_oracle(ap):
    sta = place_sta(ap, 0.8, 0.2, 0.5, 16, 0.04)
    H = synthesize_channel(ap, sta, None).H
    assert H.shape == (64, 16)
    for i in range(0, 64, 7):
        for j in range(16):
            p, q = ap.element_positions[i], sta.element_positions[j]
            dist = np.hypot(*(p - q))
            ref = LAM / (4 * np.pi * dist) * np.exp(-2j * np.pi * dist / LAM)
            assert H[i, j] == pytest.approx(ref, rel=1e-12)


def test_zero_coefficients_reduce_to_los(ap, sta):
    H0 = synthesize_channel(ap, sta, RoomSpec.free_space()).H
    H1 = los_channel(pairwise_distances(ap, sta), LAM)
    # world-frame translation costs a few ulps
    assert np.allclose(H0, H1, rtol=1e-10, atol=0)


def test_ceiling_bounce_single_pair():
    ap = build_ap_layout(2, 1, 0.01, 0.005)
    sta = place_sta(ap, 1.0, 0.0, 0.0, 2)
    room = RoomSpec(ceiling_coef=-0.5, sidewall_coefs=(0.0, 0.0))
    H = synthesize_channel(ap, sta, room).H
    los = los_channel(pairwise_distances(ap, sta), 0.01)
    d = pairwise_distances(ap, sta)[0, 0]
    h_gap = 3.0 - 1.5
    L = 2 * np.sqrt(h_gap ** 2 + (d / 2) ** 2)
    ref = -0.5 * 0.01 / (4 * np.pi * L) * np.exp(-2j * np.pi * L / 0.01)
    assert (H - los)[0, 0] == pytest.approx(ref, rel=1e-10)


def test_room_ray_count():
    assert ray_count(RoomSpec()) == 8
    assert ray_count(RoomSpec(floor_reflections_enabled=True)) == 11


def test_room_validation(ap):
    with pytest.raises(ValueError):
        RoomSpec(ceiling_coef=1.5)
    far = place_sta(ap, 6.0, 0.0, 0.0, 16, 0.04)
    with pytest.raises(ValueError):
        synthesize_channel(ap, far, RoomSpec())


def test_subchannels_stack_to_full(ap, sta):
    ch = synthesize_channel(ap, sta, RoomSpec())
    assert np.array_equal(np.vstack(list(ch.subchannels)), ch.H)
    U = dft(16)
    for k in range(4):
        assert np.allclose(U @ ch.beamspace[k] @ U, ch.subchannels[k], rtol=1e-10, atol=1e-16)


def test_energy_rank_one(rng):
    a, b = crandn(rng, 64), crandn(rng, 16)
    e_f, e_s = energy_metrics(ChannelSet(np.outer(a, b), 16, 4, LAM))
    assert e_f == pytest.approx(1.0)
    assert e_s == pytest.approx(1.0)


def test_energy_rejects_zero():
    with pytest.raises(ValueError):
        energy_metrics(ChannelSet(np.zeros((64, 16)), 16, 4, LAM))


def test_energy_sweep_ordering_and_trend(ap):
    ds = np.linspace(0.2, 3.0, 30)
    vals = []
    for d in ds:
        ch = synthesize_channel(ap, place_sta(ap, d, 0.0, np.pi / 4, 16, 0.04), None)
        e_f, e_s = energy_metrics(ch)
        # spectral-norm oracle straight from the singular values
        sv = np.linalg.svd(ch.H, compute_uv=False)
        assert e_f == pytest.approx(sv[0] ** 2 / np.sum(sv ** 2), rel=1e-12)
        vals.append((e_f, e_s))
    vals = np.array(vals)
    assert np.all(vals[:, 1] >= vals[:, 0])
    assert np.all(np.diff(vals[:, 0]) >= -1e-12)
    assert np.all(np.diff(vals[:, 1]) >= -1e-12)


def test_beamspace_basis_cases(rng):
    U = dft(16)
    e0 = np.zeros((16, 16))
    e0[0, 0] = 1
    assert np.allclose(beamspace(U @ e0 @ U), e0, atol=1e-14)
    # on-grid steering vectors: sin(w) = 2 m / N
    a = steering(16, np.arcsin(2 * 3 / 16))
    b = steering(16, np.arcsin(-2 * 5 / 16))
    X = beamspace(np.outer(a, b))
    assert np.sum(np.abs(X) > 1e-9) == 1


def test_beamspace_round_trip(rng):
    H = crandn(rng, 16, 16)
    X = beamspace(H)
    U = dft(16)
    assert np.allclose(X, U.conj().T @ H @ U.conj().T, atol=1e-12)
    assert np.allclose(antenna_domain(X), H, atol=1e-12)
    assert np.linalg.norm(X) == pytest.approx(np.linalg.norm(H), rel=1e-13)


def test_beamspace_peak_drift(ap, sta):
    X = synthesize_channel(ap, sta, RoomSpec()).beamspace
    peaks = np.array([np.unravel_index(np.argmax(np.abs(x)), x.shape) for x in X])
    drift = np.abs(np.diff(peaks, axis=0))
    drift = np.minimum(drift, 16 - drift)  # DFT bins wrap
    assert drift.max() <= 3


def test_magnitude_mirror_symmetry(ap):
    a = synthesize_channel(ap, place_sta(ap, 0.8, 0.4, 0.7, 16, 0.04), None).H
    b = synthesize_channel(ap, place_sta(ap, 0.8, -0.4, -0.7, 16, 0.04), None).H
    assert np.allclose(np.abs(a), np.abs(b)[::-1, ::-1], atol=1e-10)


def test_matrix_dump_round_trip(tmp_path, rng):
    H = crandn(rng, 64, 16)
    dump_matrix(tmp_path / "h.txt", H, 16, 4, LAM)
    back, meta = load_matrix(tmp_path / "h.txt")
    assert np.array_equal(back, H)
    assert meta == {"n": 16, "n_rf": 4, "wavelength": LAM}
