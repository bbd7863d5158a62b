# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: the Bernoulli-Gaussian denoiser, log-domain message
propagation for the angle chain, and factor-table binning."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, fabs, INFINITY, isfinite, lrint

cnp.import_array()


cdef inline double _abs2(double complex z) nogil:
    return z.real * z.real + z.imag * z.imag


def bg_denoise(r, tau, pi_in, xi, psi):
    cdef Py_ssize_t n = np.asarray(r).shape[0]
    cdef const double complex[::1] rv = np.ascontiguousarray(r, dtype=np.complex128)
    cdef const double[::1] pv = np.ascontiguousarray(np.broadcast_to(pi_in, (n,)), dtype=np.float64)
    cdef const double complex[::1] xv = np.ascontiguousarray(np.broadcast_to(xi, (n,)), dtype=np.complex128)
    cdef const double[::1] sv = np.ascontiguousarray(np.broadcast_to(psi, (n,)), dtype=np.float64)
    cdef const double[::1] tv = np.ascontiguousarray(np.broadcast_to(tau, (n,)), dtype=np.float64)

    mean_a = np.empty(n, dtype=np.complex128)
    var_a = np.empty(n, dtype=np.float64)
    post_a = np.empty(n, dtype=np.float64)
    llr_a = np.empty(n, dtype=np.float64)
    cdef double complex[::1] mean = mean_a
    cdef double[::1] var = var_a
    cdef double[::1] post = post_a
    cdef double[::1] llr = llr_a

    cdef Py_ssize_t i
    cdef double t, s, tot, l, logit, z, p, v
    cdef double complex mu
    with nogil:
        for i in range(n):
            t = tv[i]
            s = sv[i]
            tot = s + t
            l = _abs2(rv[i]) / t - _abs2(rv[i] - xv[i]) / tot - log(tot / t)
            p = pv[i]
            if p <= 0.0:
                logit = -INFINITY
            elif p >= 1.0:
                logit = INFINITY
            else:
                logit = log(p) - log(1.0 - p)
            z = logit + l
            if z > 700.0:
                z = 700.0
            elif z < -700.0:
                z = -700.0
            p = 1.0 / (1.0 + exp(-z))
            mu = (s * rv[i] + t * xv[i]) / tot
            v = s * t / tot
            mean[i] = p * mu
            v = p * (v + _abs2(mu)) - _abs2(mean[i])
            var[i] = v if v > 0.0 else 0.0
            post[i] = p
            llr[i] = l
    return mean_a, var_a, post_a, llr_a


cdef void _propagate(const double[::1] log_p, const double[:, ::1] table,
                     double[::1] out) noexcept nogil:
    cdef Py_ssize_t G_in = table.shape[0], G_out = table.shape[1], i, j
    cdef double m = -INFINITY, w
    for i in range(G_in):
        if log_p[i] > m:
            m = log_p[i]
    for j in range(G_out):
        out[j] = 0.0
    if not isfinite(m):
        for j in range(G_out):
            out[j] = -INFINITY
        return
    cdef double* acc = &out[0]
    cdef const double* row
    for i in range(G_in):
        w = exp(log_p[i] - m)
        if w == 0.0:
            continue
        row = &table[i, 0]
        for j in range(G_out):
            acc[j] += w * row[j]
    for j in range(G_out):
        out[j] = log(out[j]) + m if out[j] > 0.0 else -INFINITY


cdef void _normalize(double[::1] v) noexcept nogil:
    cdef Py_ssize_t n = v.shape[0], i
    cdef double m = -INFINITY, s = 0.0
    for i in range(n):
        if v[i] > m:
            m = v[i]
    if not isfinite(m):
        return
    for i in range(n):
        s += exp(v[i] - m)
    s = m + log(s)
    for i in range(n):
        v[i] -= s


def propagate_log(log_p, table):
    cdef const double[::1] lp = np.ascontiguousarray(log_p, dtype=np.float64)
    cdef const double[:, ::1] tb = np.ascontiguousarray(table, dtype=np.float64)
    out_a = np.empty(tb.shape[1])
    cdef double[::1] out = out_a
    with nogil:
        _propagate(lp, tb, out)
    return out_a


cdef void _sweep(const double[:, ::1] ll, const double[:, :, ::1] ft,
                 const double[:, :, ::1] bt, double[:, ::1] fwd, double[:, ::1] bwd,
                 double[::1] tmp) noexcept nogil:
    cdef Py_ssize_t K = ll.shape[0], G = ll.shape[1], k, j
    cdef double lu = -log(<double>G)
    for j in range(G):
        fwd[0, j] = lu
        bwd[K - 1, j] = lu
    for k in range(K - 1):
        for j in range(G):
            tmp[j] = ll[k, j] + fwd[k, j]
        _normalize(tmp)
        _propagate(tmp, ft[k], fwd[k + 1])
        _normalize(fwd[k + 1])
    for k in range(K - 1, 0, -1):
        for j in range(G):
            tmp[j] = ll[k, j] + bwd[k, j]
        _normalize(tmp)
        _propagate(tmp, bt[k - 1], bwd[k - 1])
        _normalize(bwd[k - 1])


def forward_backward(log_lik, fwd_tables, bwd_tables):
    cdef const double[:, ::1] ll = np.ascontiguousarray(log_lik, dtype=np.float64)
    cdef const double[:, :, ::1] ft = np.ascontiguousarray(fwd_tables, dtype=np.float64)
    cdef const double[:, :, ::1] bt = np.ascontiguousarray(bwd_tables, dtype=np.float64)
    cdef Py_ssize_t K = ll.shape[0], G = ll.shape[1]
    fwd_a = np.empty((K, G))
    bwd_a = np.empty((K, G))
    cdef double[:, ::1] fwd = fwd_a
    cdef double[:, ::1] bwd = bwd_a
    cdef double[::1] tmp = np.empty(G)
    with nogil:
        _sweep(ll, ft, bt, fwd, bwd, tmp)
    return fwd_a, bwd_a


def gmp_beliefs(log_lik, fwd_tables, bwd_tables):
    """Normalized log-likelihoods, both log inflows and the normalized log beliefs."""
    ll_a = np.array(log_lik, dtype=np.float64, order="C")
    cdef double[:, ::1] ll = ll_a
    cdef const double[:, :, ::1] ft = np.ascontiguousarray(fwd_tables, dtype=np.float64)
    cdef const double[:, :, ::1] bt = np.ascontiguousarray(bwd_tables, dtype=np.float64)
    cdef Py_ssize_t K = ll.shape[0], G = ll.shape[1], k, j
    fwd_a = np.empty((K, G))
    bwd_a = np.empty((K, G))
    comb_a = np.empty((K, G))
    cdef double[:, ::1] fwd = fwd_a
    cdef double[:, ::1] bwd = bwd_a
    cdef double[:, ::1] comb = comb_a
    cdef double[::1] tmp = np.empty(G)
    cdef double m
    with nogil:
        for k in range(K):
            _normalize(ll[k])
        _sweep(ll, ft, bt, fwd, bwd, tmp)
        for k in range(K):
            m = -INFINITY
            for j in range(G):
                comb[k, j] = ll[k, j] + fwd[k, j] + bwd[k, j]
                if comb[k, j] > m:
                    m = comb[k, j]
            if not isfinite(m):
                for j in range(G):
                    comb[k, j] = ll[k, j]
            _normalize(comb[k])
    return ll_a, fwd_a, bwd_a, comb_a


def bin_pushforward(angles_out, valid, double first, double step, Py_ssize_t n_bins):
    cdef const double[:, ::1] a = np.ascontiguousarray(angles_out, dtype=np.float64)
    cdef const cnp.uint8_t[:, ::1] ok = np.ascontiguousarray(valid, dtype=np.uint8)
    counts_a = np.zeros((a.shape[0], n_bins))
    cdef double[:, ::1] counts = counts_a
    cdef Py_ssize_t i, s, idx
    with nogil:
        for i in range(a.shape[0]):
            for s in range(a.shape[1]):
                if not ok[i, s]:
                    continue
                idx = lrint((a[i, s] - first) / step)
                if idx < 0:
                    idx = 0
                elif idx >= n_bins:
                    idx = n_bins - 1
                counts[i, idx] += 1.0
    return counts_a


# ---- fused AMP solver -------------------------------------------------------

cdef struct Fft:
    Py_ssize_t n
    bint pow2
    double complex* tw      # exp(-2 pi j k / n), k < n
    Py_ssize_t* rev         # bit reversal permutation (pow2 only)
    double complex* buf     # scratch of length n


cdef void _fft1(Fft* f, double complex* a, Py_ssize_t stride, bint inverse) noexcept nogil:
    cdef Py_ssize_t n = f.n, i, j, k, half, step, m
    cdef double complex t, w
    if f.pow2:
        for i in range(n):
            f.buf[f.rev[i]] = a[i * stride]
        m = 2
        while m <= n:
            half = m // 2
            step = n // m
            k = 0
            while k < n:
                for j in range(half):
                    w = f.tw[j * step]
                    if inverse:
                        w = w.conjugate()
                    t = w * f.buf[k + j + half]
                    f.buf[k + j + half] = f.buf[k + j] - t
                    f.buf[k + j] = f.buf[k + j] + t
                k += m
            m *= 2
        for i in range(n):
            a[i * stride] = f.buf[i]
    else:
        for i in range(n):
            t = 0
            for j in range(n):
                w = f.tw[(i * j) % n]
                if inverse:
                    w = w.conjugate()
                t = t + a[j * stride] * w
            f.buf[i] = t
        for i in range(n):
            a[i * stride] = f.buf[i]


cdef void _fft2(Fft* f, double complex* a, bint inverse) noexcept nogil:
    cdef Py_ssize_t n = f.n, i
    for i in range(n):
        _fft1(f, a + i * n, 1, inverse)
    for i in range(n):
        _fft1(f, a + i, n, inverse)


cdef void _cs_forward(Fft* f, const double complex* x, double complex* work,
                      const cnp.int64_t* rows, const cnp.int64_t* cols, Py_ssize_t m,
                      double complex* out) noexcept nogil:
    cdef Py_ssize_t n = f.n, i
    for i in range(n * n):
        work[i] = x[i]
    _fft2(f, work, False)
    cdef double inv = 1.0 / n
    for i in range(m):
        out[i] = work[rows[i] * n + cols[i]] * inv


cdef void _cs_adjoint(Fft* f, const double complex* s, double complex* work,
                      const cnp.int64_t* rows, const cnp.int64_t* cols, Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t n = f.n, i
    cdef double inv = 1.0 / n
    for i in range(n * n):
        work[i] = 0
    for i in range(m):
        work[rows[i] * n + cols[i]] += s[i]
    _fft2(f, work, True)
    for i in range(n * n):
        work[i] = work[i] * inv


def amp_solve(y, rows, cols, Py_ssize_t n, pi_in, xi, psi, nv, x0, v0, s0,
              int max_iters, double tol, double damping):
    """Fused AMP iterations for a stack of independent planes.

    Each plane stops on its own once the relative change of its estimate
    drops below ``tol`` or its residual exceeds ten times its minimum.
    """
    cdef const double complex[:, ::1] Y = np.ascontiguousarray(y, dtype=np.complex128)
    cdef const cnp.int64_t[:, ::1] R = np.ascontiguousarray(rows, dtype=np.int64)
    cdef const cnp.int64_t[:, ::1] C = np.ascontiguousarray(cols, dtype=np.int64)
    cdef const double[:, ::1] PI = np.ascontiguousarray(pi_in, dtype=np.float64)
    cdef const double complex[:, ::1] XI = np.ascontiguousarray(xi, dtype=np.complex128)
    cdef const double[:, ::1] PS = np.ascontiguousarray(psi, dtype=np.float64)
    cdef const double[::1] NV = np.ascontiguousarray(nv, dtype=np.float64)
    cdef Py_ssize_t B = Y.shape[0], M = Y.shape[1], NN = n * n
    x_a = np.array(x0, dtype=np.complex128, order="C", copy=True)
    v_a = np.array(v0, dtype=np.float64, order="C", copy=True)
    s_a = np.array(s0, dtype=np.complex128, order="C", copy=True)
    r_a = np.zeros((B, NN), dtype=np.complex128)
    post_a = np.zeros((B, NN))
    llr_a = np.zeros((B, NN))
    tau_a = np.zeros(B)
    iters_a = np.zeros(B, dtype=np.int64)
    div_a = np.zeros(B, dtype=np.uint8)
    cdef double complex[:, ::1] X = x_a
    cdef double[:, ::1] V = v_a
    cdef double complex[:, ::1] S = s_a
    cdef double complex[:, ::1] Rr = r_a
    cdef double[:, ::1] POST = post_a
    cdef double[:, ::1] LLR = llr_a
    cdef double[::1] TAU = tau_a
    cdef cnp.int64_t[::1] ITERS = iters_a
    cdef cnp.uint8_t[::1] DIV = div_a

    ax_a = np.empty(M, dtype=np.complex128)
    snew_a = np.empty(M, dtype=np.complex128)
    work_a = np.empty(NN, dtype=np.complex128)
    tw_a = np.exp(-2j * np.pi * np.arange(n) / n)
    cdef double complex[::1] AX = ax_a
    cdef double complex[::1] SNEW = snew_a
    cdef double complex[::1] WORK = work_a
    cdef double complex[::1] TW = tw_a
    buf_a = np.empty(n, dtype=np.complex128)
    cdef double complex[::1] BUF = buf_a
    cdef bint pow2 = n > 0 and (n & (n - 1)) == 0
    rev_a = np.zeros(n, dtype=np.intp)
    cdef Py_ssize_t[::1] REV = rev_a
    cdef Py_ssize_t i, j, bits, b, it, idx
    if pow2:
        bits = 0
        while (1 << bits) < n:
            bits += 1
        for i in range(n):
            j = 0
            for idx in range(bits):
                if i & (1 << idx):
                    j |= 1 << (bits - 1 - idx)
            REV[i] = j
    cdef Fft f
    f.n = n
    f.pow2 = pow2
    f.tw = &TW[0]
    f.rev = &REV[0]
    f.buf = &BUF[0]

    cdef double tau_p, tau_r, tot, itot, l, logit, z, p, var, dn, xn, res, best, pin, sv, ig
    cdef double complex mu, mean, r
    logit_a = np.empty((B, NN))
    cdef double[:, ::1] LOGIT = logit_a
    with nogil:
        for b in range(B):
            for i in range(NN):
                pin = PI[b, i]
                if pin <= 0.0:
                    LOGIT[b, i] = -INFINITY
                elif pin >= 1.0:
                    LOGIT[b, i] = INFINITY
                else:
                    LOGIT[b, i] = log(pin) - log(1.0 - pin)
        for b in range(B):
            best = INFINITY
            _cs_forward(&f, &X[b, 0], &WORK[0], &R[b, 0], &C[b, 0], M, &AX[0])
            for it in range(1, max_iters + 1):
                tau_p = 0.0
                for i in range(NN):
                    tau_p += V[b, i]
                tau_p /= NN
                ig = 1.0 / (tau_p + NV[b])
                for i in range(M):
                    SNEW[i] = (Y[b, i] - (AX[i] - tau_p * S[b, i])) * ig
                tau_r = NN * (tau_p + NV[b]) / M
                _cs_adjoint(&f, &SNEW[0], &WORK[0], &R[b, 0], &C[b, 0], M)
                dn = 0.0
                xn = 0.0
                for i in range(NN):
                    r = X[b, i] + tau_r * WORK[i]
                    Rr[b, i] = r
                    sv = PS[b, i]
                    tot = sv + tau_r
                    itot = 1.0 / tot
                    l = _abs2(r) / tau_r - _abs2(r - XI[b, i]) * itot - log(tot / tau_r)
                    z = LOGIT[b, i] + l
                    if z > 700.0:
                        z = 700.0
                    elif z < -700.0:
                        z = -700.0
                    p = 1.0 / (1.0 + exp(-z))
                    mu = (sv * r + tau_r * XI[b, i]) * itot
                    mean = p * mu
                    var = p * (sv * tau_r * itot + _abs2(mu)) - _abs2(mean)
                    if var < 0.0:
                        var = 0.0
                    POST[b, i] = p
                    LLR[b, i] = l
                    if damping < 1.0:
                        mean = damping * mean + (1.0 - damping) * X[b, i]
                        var = damping * var + (1.0 - damping) * V[b, i]
                    dn += _abs2(mean - X[b, i])
                    xn += _abs2(mean)
                    X[b, i] = mean
                    V[b, i] = var
                for i in range(M):
                    if damping < 1.0:
                        S[b, i] = damping * SNEW[i] + (1.0 - damping) * S[b, i]
                    else:
                        S[b, i] = SNEW[i]
                TAU[b] = tau_r
                ITERS[b] = it
                _cs_forward(&f, &X[b, 0], &WORK[0], &R[b, 0], &C[b, 0], M, &AX[0])
                res = 0.0
                for i in range(M):
                    res += _abs2(Y[b, i] - AX[i])
                res = sqrt(res)
                if res < best:
                    best = res
                if res > 10.0 * best + 1e-300:
                    DIV[b] = 1
                    break
                if xn < 1e-300:
                    xn = 1e-300
                if sqrt(dn / xn) < tol:
                    break
    return x_a, v_a, s_a, r_a, tau_a, post_a, llr_a, iters_a, div_a.astype(bool)
