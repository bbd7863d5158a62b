"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``.

Signatures and results match the compiled module; ``shortlink.kernels`` picks
whichever is importable.
"""

import numpy as np

_LOG_PI = np.log(np.pi)


def bg_denoise(r, tau, pi_in, xi, psi):
    """Bernoulli-Gaussian posterior under ``r = x + CN(0, tau)``.

    Prior per entry: ``x = 0`` w.p. ``1 - pi_in``, else ``CN(xi, psi)``.
    Returns posterior mean, posterior variance, posterior activity and the
    measurement log-likelihood ratio (active vs inactive).
    """
    tot = psi + tau
    llr = (np.abs(r) ** 2 / tau - np.abs(r - xi) ** 2 / tot
           - np.log(tot / tau))
    with np.errstate(divide="ignore"):
        prior_logit = np.log(pi_in) - np.log1p(-pi_in)
    z = np.clip(prior_logit + llr, -700.0, 700.0)
    pi_post = 1.0 / (1.0 + np.exp(-z))
    mu = (psi * r + tau * xi) / tot
    v = psi * tau / tot
    mean = pi_post * mu
    var = pi_post * (v + np.abs(mu) ** 2) - np.abs(mean) ** 2
    return mean, np.maximum(var, 0.0), pi_post, llr


def propagate_log(log_p, table):
    """``log sum_i exp(log_p[i]) * table[i, j]`` with max-shift for stability."""
    m = np.max(log_p)
    if not np.isfinite(m):
        return np.full(table.shape[1], -np.inf)
    p = np.exp(log_p - m)
    out = p @ table
    with np.errstate(divide="ignore"):
        return np.log(out) + m


def _normalize_log(log_p):
    m = np.max(log_p)
    if not np.isfinite(m):
        return log_p
    return log_p - (m + np.log(np.sum(np.exp(log_p - m))))


def forward_backward(log_lik, fwd_tables, bwd_tables):
    """One forward and one backward sweep over a chain of angle nodes.

    ``log_lik`` is (K, G).  ``fwd_tables[k]`` holds p(node k+1 | node k) and
    ``bwd_tables[k]`` holds p(node k | node k+1), both indexed [in, out].
    Returns normalized log incoming messages ``(log_fwd_in, log_bwd_in)``.
    """
    K, G = log_lik.shape
    uniform = np.full(G, -np.log(G))
    log_fwd = np.empty((K, G))
    log_bwd = np.empty((K, G))
    log_fwd[0] = uniform
    for k in range(K - 1):
        out = _normalize_log(log_lik[k] + log_fwd[k])
        log_fwd[k + 1] = _normalize_log(propagate_log(out, fwd_tables[k]))
    log_bwd[K - 1] = uniform
    for k in range(K - 1, 0, -1):
        out = _normalize_log(log_lik[k] + log_bwd[k])
        log_bwd[k - 1] = _normalize_log(propagate_log(out, bwd_tables[k - 1]))
    return log_fwd, log_bwd


def gmp_beliefs(log_lik, fwd_tables, bwd_tables):
    """Normalized log-likelihoods, both log inflows and the normalized log beliefs."""
    ll = np.array([_normalize_log(row) for row in np.asarray(log_lik, dtype=float)])
    fwd, bwd = forward_backward(ll, fwd_tables, bwd_tables)
    comb = ll + fwd + bwd
    dead = ~np.isfinite(np.max(comb, axis=1))
    comb[dead] = ll[dead]
    return ll, fwd, bwd, np.array([_normalize_log(row) for row in comb])


def bin_pushforward(angles_out, valid, first, step, n_bins):
    """Row histogram of mapped angles: ``angles_out`` is (G_in, S)."""
    idx = np.rint((angles_out - first) / step).astype(np.int64)
    np.clip(idx, 0, n_bins - 1, out=idx)
    G_in = angles_out.shape[0]
    counts = np.zeros((G_in, n_bins))
    rows = np.broadcast_to(np.arange(G_in)[:, None], idx.shape)
    np.add.at(counts, (rows[valid], idx[valid]), 1.0)
    return counts


def _cs_forward(x, rows, cols, n):
    full = np.fft.fft2(x.reshape(-1, n, n), axes=(-2, -1)) / n
    b = np.arange(rows.shape[0])[:, None]
    return full[b, rows, cols]


def _cs_adjoint(s, rows, cols, n):
    B = rows.shape[0]
    Y = np.zeros((B, n, n), dtype=complex)
    b = np.broadcast_to(np.arange(B)[:, None], rows.shape)
    np.add.at(Y, (b, rows, cols), s)
    return (np.fft.ifft2(Y, axes=(-2, -1)) * n).reshape(B, n * n)


def amp_solve(y, rows, cols, n, pi_in, xi, psi, nv, x0, v0, s0,
              max_iters, tol, damping):
    """Fused AMP iterations for a stack of independent planes.

    Arrays are (B, n*n) per coefficient and (B, M) per measurement.  Each
    plane freezes once its relative change drops below ``tol`` or its
    residual exceeds ten times its running minimum.
    """
    y = np.asarray(y, dtype=complex)
    B, M = y.shape
    NN = n * n
    x = np.array(x0, dtype=complex)
    v = np.array(v0, dtype=float)
    s = np.array(s0, dtype=complex)
    r_out = np.zeros((B, NN), dtype=complex)
    post = np.zeros((B, NN))
    llr_out = np.zeros((B, NN))
    tau_out = np.zeros(B)
    iters = np.zeros(B, dtype=np.int64)
    div = np.zeros(B, dtype=bool)
    active = np.ones(B, dtype=bool)
    best = np.full(B, np.inf)
    ax = _cs_forward(x, rows, cols, n)
    for it in range(1, max_iters + 1):
        a = np.flatnonzero(active)
        if a.size == 0:
            break
        tau_p = v[a].mean(axis=1)
        s_new = (y[a] - (ax[a] - tau_p[:, None] * s[a])) / (tau_p + nv[a])[:, None]
        tau_r = NN * (tau_p + nv[a]) / M
        r = x[a] + tau_r[:, None] * _cs_adjoint(s_new, rows[a], cols[a], n)
        mean, var, p, l = bg_denoise(r, tau_r[:, None], pi_in[a], xi[a], psi[a])
        if damping < 1.0:
            mean = damping * mean + (1 - damping) * x[a]
            var = damping * var + (1 - damping) * v[a]
            s_new = damping * s_new + (1 - damping) * s[a]
        dn = np.sum(np.abs(mean - x[a]) ** 2, axis=1)
        xn = np.maximum(np.sum(np.abs(mean) ** 2, axis=1), 1e-300)
        x[a], v[a], s[a] = mean, var, s_new
        r_out[a], post[a], llr_out[a], tau_out[a] = r, p, l, tau_r
        iters[a] = it
        ax[a] = _cs_forward(x[a], rows[a], cols[a], n)
        res = np.linalg.norm(y[a] - ax[a], axis=1)
        best[a] = np.minimum(best[a], res)
        bad = res > 10 * best[a] + 1e-300
        div[a] = bad
        done = bad | (np.sqrt(dn / xn) < tol)
        active[a[done]] = False
    return x, v, s, r_out, tau_out, post, llr_out, iters, div
