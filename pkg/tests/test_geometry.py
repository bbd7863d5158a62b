import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shortlink.geometry import (aoa_offsets, build_ap_layout, pairwise_distances, place_sta,
                                subarray_bearings, true_local_aoas, true_sta_aoas)

LAM = 0.005


def test_ap_span_and_gap(ap):
    assert ap.span == pytest.approx(0.20, abs=1e-12)
    x = ap.element_positions[:, 0]
    # edge-to-edge gaps between neighbouring subarrays
    gaps = [x[(k + 1) * 16] - x[k * 16 + 15] for k in range(3)]
    assert np.allclose(gaps, 0.05 / 3, atol=1e-12)
    assert np.allclose(np.diff(x[:16]), LAM / 2)


def test_subarray_offsets_are_midpoints(ap):
    for k in range(4):
        assert ap.subarray(k)[:, 0].mean() == pytest.approx(ap.subarray_offsets[k])
    assert np.allclose(ap.subarray_offsets, -ap.subarray_offsets[::-1])


def test_layout_rejects_short_span():
    with pytest.raises(ValueError):
        build_ap_layout(16, 4, LAM, 0.10)


def test_single_element_arrays_coincident_midpoints():
    lay = build_ap_layout(2, 1, 2.0, 1.0)
    # two-element arrays of pitch 1 m; compare midpoints directly
    sta = place_sta(lay, 1.0, 0.0, 0.0, 2)
    d = pairwise_distances(lay, sta)
    assert np.hypot(0.0, 1.0) == pytest.approx(d[0, 0])


def test_distances_against_coordinate_loop(ap, sta):
    d = pairwise_distances(ap, sta)
    ref = np.empty((64, 16))
    for i, p in enumerate(ap.element_positions):
        for j, q in enumerate(sta.element_positions):
            ref[i, j] = np.sqrt((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2)
    assert np.allclose(d, ref, atol=1e-15)
    # broadside bound: every path is at least the perpendicular distance
    assert d.min() >= 0.8 * np.cos(np.arctan(0.12 / 0.8)) - 1e-12


def test_reversing_sta_elements_reverses_columns(ap):
    sta = place_sta(ap, 0.8, 0.3, 0.4, 16, 0.04)
    flipped = place_sta(ap, 0.8, 0.3, 0.4 + np.pi, 16, 0.04)
    assert np.allclose(pairwise_distances(ap, flipped), pairwise_distances(ap, sta)[:, ::-1])


def test_mirror_symmetry(ap):
    a = pairwise_distances(ap, place_sta(ap, 0.8, 0.4, 0.7, 16, 0.04))
    b = pairwise_distances(ap, place_sta(ap, 0.8, -0.4, -0.7, 16, 0.04))
    # mirroring x flips AP element order and (with theta -> -theta) STA order too
    assert np.allclose(a, b[::-1, ::-1], atol=1e-15)


def test_far_field_plane_wave_fit(ap):
    d = 100 * 0.20
    sta = place_sta(ap, d, 0.3, 0.0, 16, 0.04)
    D = pairwise_distances(ap, sta)
    for k in range(4):
        rows = D[k * 16:(k + 1) * 16]
        i, j = np.meshgrid(np.arange(16), np.arange(16), indexing="ij")
        A = np.column_stack([np.ones(256), i.ravel(), j.ravel()])
        coef, *_ = np.linalg.lstsq(A, rows.ravel(), rcond=None)
        assert np.max(np.abs(A @ coef - rows.ravel())) < LAM / 100


def test_l_sta_footprint_checked(ap):
    with pytest.raises(ValueError):
        place_sta(ap, 0.8, 0.0, 0.0, 16, 0.2)


def test_bearings_and_local_aoa_sign(ap):
    sta = place_sta(ap, 0.8, 0.0, 0.0, 16, 0.04)
    b = subarray_bearings(ap, sta.midpoint)
    # subarrays left of centre see the STA toward +x
    assert b[0] > 0 > b[3]
    assert np.allclose(true_local_aoas(ap, sta), -b)
    assert np.allclose(aoa_offsets(ap), -ap.subarray_offsets)


def test_sta_aoas_broadside_parallel(ap):
    sta = place_sta(ap, 0.8, 0.0, 0.0, 16, 0.04)
    phi = true_sta_aoas(ap, sta)
    # STA axis along +x: sine of the angle is the x-component of the ray
    mids = ap.subarray_offsets
    ref = np.arcsin(-mids / np.hypot(mids, 0.8))
    assert np.allclose(phi, ref, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(-1.2, 1.2), st.floats(-3.0, 3.0))
def test_distances_positive_and_symmetric_count(d, gamma, theta):
    ap = build_ap_layout(16, 4, LAM, 0.20)
    sta = place_sta(ap, d, gamma, theta, 16, 0.04)
    D = pairwise_distances(ap, sta)
    assert D.shape == (64, 16)
    assert np.all(D > 0)
    assert np.linalg.norm(sta.midpoint) == pytest.approx(d)
