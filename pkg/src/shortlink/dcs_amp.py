"""Sparse recovery of masked beamspace subchannels.

``bg_amp`` is a Bernoulli-Gaussian AMP solver for one plane (or a stack of
independent planes).  ``dcs_amp`` chains the planes of one STA with a binary
Markov model on the support and a Gauss-Markov model on the amplitudes and
sweeps forward and backward, re-learning the prior by EM after every sweep.

Because every entry of a partial unitary 2D-DFT row has magnitude ``1/N``,
the scalar-variance AMP recursion is exact here and needs no per-entry
variance bookkeeping.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .acquisition import CsOperator, StackedCsOperator
from .codebook import unmask
from .transforms import from_beamspace

log = logging.getLogger(__name__)

EPS_RANGE = (1e-4, 0.5)
KAPPA_RANGE = (0.0, 0.99)
RHO_MIN = 1e-12
P_ACT_MIN = 1e-6
_POST_FLOOR = 1e-3
_NOISE_FLOOR = 1e-12
_LLR_CAP = 50.0


@dataclass(frozen=True)
class BgPrior:
    eps: float = 0.05
    zeta: complex = 0.0
    rho: float = 1.0
    kappa: float = 0.5
    p_act: float = 0.05
    noise_var: float = 0.0

    def __post_init__(self):
        if not 0 <= self.eps <= 1 or not 0 <= self.p_act <= 1:
            raise ValueError("probabilities must lie in [0, 1]")
        if not 0 <= self.kappa <= 1:
            raise ValueError("kappa must lie in [0, 1]")
        if self.rho < 0 or self.noise_var < 0:
            raise ValueError("variances must be nonnegative")
        if self.eps > 0 and self.p_deact > 1 + 1e-12:
            raise ValueError("p_act too large for a stationary activity of eps")

    @property
    def p_deact(self) -> float:
        """P(inactive | active) that keeps the chain stationary at ``eps``."""
        if self.eps == 0:
            return 1.0
        return self.p_act * (1 - self.eps) / self.eps


@dataclass(frozen=True)
class PlanePrior:
    """Per-coefficient BG prior: activity ``pi`` and amplitude ``CN(xi, psi)``."""

    pi: np.ndarray
    xi: np.ndarray
    psi: np.ndarray

    @classmethod
    def from_bg(cls, prior: BgPrior) -> "PlanePrior":
        return cls(np.asarray(prior.eps, float), np.asarray(prior.zeta, complex),
                   np.asarray(prior.rho, float))


@dataclass
class AmpState:
    x: np.ndarray
    v: np.ndarray
    s: np.ndarray


@dataclass
class AmpResult:
    """Posterior of a (stack of) plane(s).

    ``mean``/``var`` are the full BG posterior moments; ``mu``/``nu`` the
    moments conditioned on the coefficient being active.  ``r``, ``tau`` and
    ``llr`` form the likelihood-only message used across planes.
    """

    mean: np.ndarray
    var: np.ndarray
    pi_post: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    llr: np.ndarray
    r: np.ndarray
    tau: np.ndarray
    iters: int
    diverged: np.ndarray
    state: AmpState


def _stack(op, y):
    if isinstance(op, CsOperator):
        return StackedCsOperator(op.rows[None], op.cols[None], op.n), np.asarray(y)[None], True
    return op, np.atleast_2d(y), False


def _squeeze(res: AmpResult) -> AmpResult:
    return AmpResult(res.mean[0], res.var[0], res.pi_post[0], res.mu[0], res.nu[0],
                     res.llr[0], res.r[0], res.tau[0], res.iters, res.diverged[0],
                     AmpState(res.state.x, res.state.v, res.state.s))


def bg_amp(y: np.ndarray, op, prior: BgPrior | PlanePrior, noise_var=None,
           max_iters: int = 25, tol: float = 1e-6, damping: float = 1.0,
           init: AmpState | None = None) -> AmpResult:
    """AMP with Onsager-corrected residuals and BG denoising.

    ``op`` is a ``CsOperator`` (``y`` of length M, results N x N) or a
    ``StackedCsOperator`` (``y`` of shape (B, M), results (B, N, N)).
    ``damping`` is the weight of the new iterate.  A plane whose residual
    grows tenfold over its running minimum is flagged in ``diverged``.
    """
    op, y, single = _stack(op, y)
    if y.shape != (op.batch, op.m) or op.m < 1:
        raise ValueError("measurement shape does not match the operator")
    if isinstance(prior, BgPrior):
        if noise_var is None:
            noise_var = prior.noise_var
        prior = PlanePrior.from_bg(prior)
    if noise_var is None:
        raise ValueError("noise variance is required")
    res = _amp_core(y, op, prior, noise_var, max_iters, tol, damping, init)
    return _squeeze(res) if single else res


def _amp_core(y, op, prior, noise_var, max_iters, tol, damping, init):
    B, M, N = op.batch, op.m, op.n
    NN = N * N
    pi_in = np.ascontiguousarray(np.broadcast_to(prior.pi, (B, N, N)).reshape(B, NN), float)
    xi = np.ascontiguousarray(np.broadcast_to(prior.xi, (B, N, N)).reshape(B, NN), complex)
    psi = np.ascontiguousarray(np.broadcast_to(prior.psi, (B, N, N)).reshape(B, NN), float)

    ypow = np.sum(np.abs(y) ** 2, axis=1) / M
    nv = np.maximum(np.broadcast_to(np.asarray(noise_var, float), (B,)),
                    _NOISE_FLOOR * np.maximum(ypow, 1e-300))
    if init is None:
        x = pi_in * xi
        v = pi_in * (psi + np.abs(xi) ** 2) - np.abs(x) ** 2
        s = np.zeros((B, M), dtype=complex)
    else:
        x, v, s = (init.x.reshape(B, NN), init.v.reshape(B, NN), init.s)
    x, v, s, r, tau, pi_post, llr, iters, diverged = kernels.amp_solve(
        y, op.rows, op.cols, N, pi_in, xi, psi, nv, x, v, s, max_iters, tol, damping)

    exact = (np.broadcast_to(np.asarray(noise_var, float), (B,)) == 0) & op.determined()
    if np.any(exact):
        # noiseless and fully sampled: the posterior is a point mass on the
        # unique solution, which AMP only approaches asymptotically
        sol = op.take(exact).adjoint(y[exact]).reshape(-1, NN)
        x[exact], r[exact], v[exact] = sol, sol, 0.0
        tau[exact] = nv[exact]
        pi_post[exact], llr[exact] = 1.0, _LLR_CAP
        diverged[exact] = False

    shape = (B, N, N)
    tau_b = tau[:, None]
    mu = (psi * r + tau_b * xi) / (psi + tau_b)
    nu = psi * tau_b / (psi + tau_b)
    x, v = x.reshape(shape), v.reshape(shape)
    return AmpResult(x, v, pi_post.reshape(shape), mu.reshape(shape), nu.reshape(shape),
                     llr.reshape(shape), r.reshape(shape), tau, int(iters.max(initial=0)),
                     diverged, AmpState(x, v, s))


def bg_amp_robust(y, op, prior, noise_var=None, max_iters: int = 25,
                  tol: float = 1e-6, init: AmpState | None = None) -> AmpResult:
    """``bg_amp``; planes flagged as diverged are re-run once with damping 0.5."""
    res = bg_amp(y, op, prior, noise_var, max_iters, tol, 1.0, init)
    if not np.any(res.diverged):
        return res
    if res.diverged.ndim == 0:
        return bg_amp(y, op, prior, noise_var, max_iters, tol, 0.5, None)
    idx = np.flatnonzero(res.diverged)
    log.debug("AMP diverged on %d plane(s); retrying damped", idx.size)
    sub_prior = PlanePrior(*(_take(a, idx, res.mean.shape) for a in
                             (prior.pi, prior.xi, prior.psi))) if isinstance(prior, PlanePrior) else prior
    nvar = noise_var if noise_var is None or np.ndim(noise_var) == 0 else np.asarray(noise_var)[idx]
    again = bg_amp(np.asarray(y)[idx], op.take(idx), sub_prior, nvar, max_iters, tol, 0.5)
    for name in ("mean", "var", "pi_post", "mu", "nu", "llr", "r", "tau", "diverged"):
        getattr(res, name)[idx] = getattr(again, name)
    res.state.x[idx] = again.state.x
    res.state.v[idx] = again.state.v
    res.state.s[idx] = again.state.s
    return res


def _take(a, idx, shape):
    return np.broadcast_to(a, shape)[idx]


def initial_prior(y: np.ndarray, noise_var: float, eps: float = 0.05) -> BgPrior:
    """Weakly informative start; ``rho`` matches the per-measurement energy."""
    m = np.asarray(y).shape[-1]
    energy = float(np.sum(np.abs(y) ** 2)) / (np.asarray(y).size // m) / m
    rho = max(energy - noise_var, energy * 1e-3, RHO_MIN) / eps
    return BgPrior(eps=eps, zeta=0.0, rho=rho, kappa=0.5, p_act=0.05, noise_var=noise_var)


def _em_bg(pi, mu, nu, prior: BgPrior) -> BgPrior:
    """Closed-form EM step for (eps, zeta, rho) from one group's posteriors."""
    if pi.size == 0:
        return prior
    eps = float(np.clip(pi.mean(), *EPS_RANGE))
    w = pi.sum()
    if w <= 1e-300:
        return replace(prior, eps=eps, p_act=min(prior.p_act, eps))
    zeta = complex(np.sum(pi * mu) / w)
    rho = float(max(np.sum(pi * (np.abs(mu - zeta) ** 2 + nu)) / w, RHO_MIN))
    return replace(prior, eps=eps, zeta=zeta, rho=rho,
                   p_act=min(prior.p_act, eps))


@dataclass
class StandardAmpResult:
    amp: AmpResult
    priors: list[BgPrior]


def em_bg_amp(y: np.ndarray, op, noise_var, em_iters: int = 8,
              max_iters: int = 25, tol: float = 1e-6) -> StandardAmpResult:
    """Per-plane BG-AMP with the prior learned by EM (standard AMP baseline).

    Planes in a stack are handled independently; each learns its own prior.
    """
    op, y, single = _stack(op, y)
    B = op.batch
    nv = np.broadcast_to(np.asarray(noise_var, float), (B,))
    priors = [initial_prior(y[b], float(nv[b])) for b in range(B)]
    state = None
    res = None
    for _ in range(max(em_iters, 1)):
        pp = _plane_prior_stack(priors, op.n)
        res = bg_amp_robust(y, op, pp, nv, max_iters, tol, state)
        state = res.state
        priors = [_em_bg(res.pi_post[b].ravel(), res.mu[b].ravel(), res.nu[b].ravel(),
                         priors[b]) for b in range(B)]
    return StandardAmpResult(_squeeze(res) if single else res, priors)


def _plane_prior_stack(priors: list[BgPrior], n: int) -> PlanePrior:
    eps = np.array([p.eps for p in priors])[:, None, None]
    zeta = np.array([p.zeta for p in priors], dtype=complex)[:, None, None]
    rho = np.array([p.rho for p in priors])[:, None, None]
    shape = (len(priors), n, n)
    return PlanePrior(np.broadcast_to(eps, shape), np.broadcast_to(zeta, shape),
                      np.broadcast_to(rho, shape))


def group_active(estimates: np.ndarray, delta_e: float = 0.9) -> tuple[np.ndarray, np.ndarray]:
    """Split locations into the strong set ``S1`` and the rest ``S2``.

    ``estimates`` is (K, N, N); the energy map sums ``|S_k|^2`` over ``k``.
    ``S1`` is the smallest set of largest-energy entries holding at least a
    ``delta_e`` fraction of the total.  Both are returned as boolean masks.
    """
    if not 0 < delta_e <= 1:
        raise ValueError("delta_e must lie in (0, 1]")
    energy = np.sum(np.abs(np.asarray(estimates)) ** 2, axis=0)
    s1 = np.zeros(energy.shape, dtype=bool)
    total = energy.sum()
    if total <= 0:
        return s1, ~s1
    flat = energy.ravel()
    order = np.argsort(-flat, kind="stable")
    csum = np.cumsum(flat[order])
    target = delta_e * total * (1 - 1e-12)
    count = int(np.searchsorted(csum, target, side="left")) + 1
    count = min(count, int(np.count_nonzero(flat)))
    s1.ravel()[order[:count]] = True
    return s1, ~s1


@dataclass
class DcsPosterior:
    """Posterior moments of one STA's planes, each array (K, N, N).

    ``off_on`` and ``off`` are optional (K-1, N, N) pairwise support beliefs
    ``P(s_k = 0, s_k+1 = 1)`` and ``P(s_k = 0)`` from the chain messages.
    Without them adjacent marginals are treated as independent.
    """

    pi: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    off_on: np.ndarray | None = None
    off: np.ndarray | None = None


def em_update(post: DcsPosterior, groups: list[np.ndarray],
              priors: list[BgPrior]) -> list[BgPrior]:
    """Per-group EM re-estimates of (eps, zeta, rho, kappa, p_act).

    ``p_act`` uses the pairwise support beliefs when ``post`` carries them;
    ``kappa`` always uses the product of adjacent amplitude marginals.
    Empty groups keep their parameters.
    """
    out = []
    K = post.pi.shape[0]
    for g, prior in zip(groups, priors):
        if not np.any(g):
            out.append(prior)
            continue
        pi, mu, nu = post.pi[:, g], post.mu[:, g], post.nu[:, g]
        new = _em_bg(pi.ravel(), mu.ravel(), nu.ravel(), prior)
        kappa, p_act = new.kappa, new.p_act
        if K > 1:
            a, b = pi[:-1], pi[1:]
            da, db = mu[:-1] - new.zeta, mu[1:] - new.zeta
            w = a * b
            den = np.sum(w * 0.5 * (np.abs(da) ** 2 + np.abs(db) ** 2 + nu[:-1] + nu[1:]))
            if den > 1e-300:
                kappa = float(np.clip(np.real(np.sum(w * np.conj(da) * db)) / den,
                                      *KAPPA_RANGE))
            if post.off_on is not None:
                num, off = np.sum(post.off_on[:, g]), np.sum(post.off[:, g])
            else:
                num, off = np.sum((1 - a) * b), np.sum(1 - a)
            if off > 1e-300:
                p_act = float(num / off)
        # p_act <= eps keeps P(on | on) >= P(on | off): the chain may not alternate
        p_act = float(np.clip(p_act, P_ACT_MIN, new.eps))
        out.append(replace(new, kappa=kappa, p_act=p_act))
    return out


@dataclass
class BeamspaceEstimate:
    """Posterior means/variances per plane plus the learned group priors."""

    S: np.ndarray
    var: np.ndarray
    priors: list
    groups: tuple
    diverged: np.ndarray


def _group_maps(priors: list[BgPrior], groups) -> dict[str, np.ndarray]:
    maps = {}
    for name in ("eps", "zeta", "rho", "kappa", "p_act"):
        vals = [getattr(p, name) for p in priors]
        dtype = complex if name == "zeta" else float
        m = np.zeros(groups[0].shape, dtype=dtype)
        for g, v in zip(groups, vals):
            m[g] = v
        maps[name] = m
    d = np.zeros(groups[0].shape)
    for g, p in zip(groups, priors):
        d[g] = p.p_deact
    maps["p_deact"] = d
    return maps


def _combine_prob(a, b):
    num = a * b
    den = num + (1 - a) * (1 - b)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.5)


def _combine_gauss(a1, v1, a2, v2):
    p1 = np.where(np.isinf(v1), 0.0, 1.0 / v1)
    p2 = np.where(np.isinf(v2), 0.0, 1.0 / v2)
    prec = p1 + p2
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(prec > 0, 1.0 / prec, np.inf)
        m = np.where(prec > 0, (a1 * p1 + a2 * p2) * np.where(prec > 0, v, 0.0), 0.0)
    return m, v


def _pair_beliefs(lf, lb, pout, pm):
    """Joint support beliefs of adjacent planes from the chain messages."""
    left = _combine_prob(lf[:-1], pout[:-1])  # P(s_k = 1) from the left and plane k
    right = _combine_prob(lb[1:], pout[1:])  # evidence for s_k+1 = 1 from the right
    pa, pd = pm["p_act"], pm["p_deact"]
    j00 = (1 - left) * (1 - pa) * (1 - right)
    j01 = (1 - left) * pa * right
    j10 = left * pd * (1 - right)
    j11 = left * (1 - pd) * right
    z = np.maximum(j00 + j01 + j10 + j11, 1e-300)
    return j01 / z, (j00 + j01) / z


def dcs_amp(y: np.ndarray, ops, noise_var, groups=None, priors=None,
            passes: int = 12, max_iters: int = 25, tol: float = 1e-6) -> BeamspaceEstimate:
    """DCS-AMP over the K planes of one STA, or over a stack of STAs.

    ``y`` is (K, M) with ``ops`` a list of K ``CsOperator``, or (K, B, M)
    with K ``StackedCsOperator`` of batch B (one problem per STA).
    ``groups`` are boolean (N, N) location masks, one list per STA (a single
    list is shared); ``priors`` likewise gives one ``BgPrior`` per group.
    """
    y = np.asarray(y)
    single = isinstance(ops[0], CsOperator)
    if single:
        ops = [StackedCsOperator(o.rows[None], o.cols[None], o.n) for o in ops]
        y = y[:, None, :]
    K, B = y.shape[0], y.shape[1]
    if K < 2:
        raise ValueError("DCS-AMP needs at least two planes")
    if len(ops) != K:
        raise ValueError("one operator per plane is required")
    N = ops[0].n
    shape = (B, N, N)
    nv = np.broadcast_to(np.asarray(noise_var, float), (B,))

    if groups is None:
        all_loc = np.ones((N, N), dtype=bool)
        groups = [all_loc]
    if isinstance(groups[0], np.ndarray):
        groups = [list(groups)] * B
    if priors is None:
        priors = [[initial_prior(y[:, b], float(nv[b]))] * len(groups[b]) for b in range(B)]
    elif isinstance(priors[0], BgPrior):
        priors = [list(priors)] * B
    priors = [list(p) for p in priors]

    def maps():
        per = [_group_maps(priors[b], groups[b]) for b in range(B)]
        return {k: np.stack([p[k] for p in per]) for k in per[0]}

    pm = maps()
    lf = np.empty((K,) + shape)
    lb = np.full((K,) + shape, 0.5)
    af = np.zeros((K,) + shape, dtype=complex)
    bf = np.empty((K,) + shape)
    ab = np.zeros((K,) + shape, dtype=complex)
    bb = np.full((K,) + shape, np.inf)
    pout = np.full((K,) + shape, 0.5)
    xo = np.zeros((K,) + shape, dtype=complex)
    po = np.full((K,) + shape, np.inf)
    results: list[AmpResult | None] = [None] * K
    states: list[AmpState | None] = [None] * K

    def fwd_msg(k):
        if k == 0:
            lf[0], af[0], bf[0] = pm["eps"], pm["zeta"], pm["rho"]
            return
        q = _combine_prob(lf[k - 1], pout[k - 1])
        lf[k] = q * (1 - pm["p_deact"]) + (1 - q) * pm["p_act"]
        a, b = _combine_gauss(af[k - 1], bf[k - 1], xo[k - 1], po[k - 1])
        kap = pm["kappa"]
        af[k] = pm["zeta"] + kap * (a - pm["zeta"])
        bf[k] = np.where(np.isinf(b), pm["rho"], kap ** 2 * np.where(np.isinf(b), 0, b)
                         + (1 - kap ** 2) * pm["rho"])

    def bwd_msg(k):
        if k == K - 1:
            lb[k], ab[k], bb[k] = 0.5, 0.0, np.inf
            return
        q = _combine_prob(lb[k + 1], pout[k + 1])
        pd, pa = pm["p_deact"], pm["p_act"]
        l1 = (1 - pd) * q + pd * (1 - q)
        l0 = pa * q + (1 - pa) * (1 - q)
        lb[k] = l1 / np.maximum(l1 + l0, 1e-300)
        a, b = _combine_gauss(ab[k + 1], bb[k + 1], xo[k + 1], po[k + 1])
        kap = pm["kappa"]
        ok = (kap > 1e-6) & np.isfinite(b)
        safe = np.where(ok, kap, 1.0)
        ab[k] = np.where(ok, (a - (1 - kap) * pm["zeta"]) / safe, 0.0)
        bb[k] = np.where(ok, (np.where(ok, b, 0) + (1 - kap ** 2) * pm["rho"]) / safe ** 2,
                         np.inf)

    def run_plane(k):
        pi_in = _combine_prob(lf[k], lb[k])
        xi, psi = _combine_gauss(af[k], bf[k], ab[k], bb[k])
        res = bg_amp_robust(y[k], ops[k], PlanePrior(pi_in, xi, np.maximum(psi, RHO_MIN)),
                            nv, max_iters, tol, states[k])
        states[k] = res.state
        results[k] = res
        bad = res.diverged[:, None, None]
        pout[k] = np.where(bad, 0.5, 1.0 / (1.0 + np.exp(-np.clip(res.llr, -700, 700))))
        xo[k] = np.where(bad, 0.0, res.r)
        po[k] = np.where(bad, np.inf,
                         res.tau[:, None, None] / np.maximum(res.pi_post, _POST_FLOOR))

    for t in range(passes):
        for k in range(0 if t == 0 else 1, K):
            fwd_msg(k)
            run_plane(k)
        for k in range(K - 2, -1, -1):
            bwd_msg(k)
            run_plane(k)
        off_on, off = _pair_beliefs(lf, lb, pout, pm)
        post = [DcsPosterior(np.stack([r.pi_post[b] for r in results]),
                             np.stack([r.mu[b] for r in results]),
                             np.stack([r.nu[b] for r in results]),
                             off_on[:, b], off[:, b]) for b in range(B)]
        priors = [em_update(post[b], groups[b], priors[b]) for b in range(B)]
        pm = maps()
        # forward messages out of plane 0 are rebuilt from the new prior
        lf[0], af[0], bf[0] = pm["eps"], pm["zeta"], pm["rho"]

    S = np.stack([r.mean for r in results])
    var = np.stack([r.var for r in results])
    div = np.stack([r.diverged for r in results])
    if single:
        return BeamspaceEstimate(S[:, 0], var[:, 0], priors[0], tuple(groups[0]), div[:, 0])
    return BeamspaceEstimate(S, var, priors, tuple(tuple(g) for g in groups), div)


def unmask_reconstruct(S_hat: np.ndarray, lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Masked beamspace estimates to beamspace and antenna-domain subchannels."""
    X = unmask(np.asarray(S_hat), lam)
    return X, from_beamspace(X)
