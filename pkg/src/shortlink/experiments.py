"""Seeded Monte Carlo campaigns and their CSV outputs.

Trial ``i`` of a campaign always uses ``trial_seed(master_seed, i)``, so a
run is reproducible regardless of how many worker processes share the work
and any row can be replayed alone with ``run_trial``.
"""

from __future__ import annotations

import logging
import multiprocessing as mp
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, geo_mp, kernels
from .channel import energy_metrics, synthesize_channel
from .config import ScenarioConfig, dump_config
from .geometry import place_sta, true_local_aoas
from .link_eval import (Scenario, _stream, run_trial, trial_seed,
                        uplink_log_likelihoods)

log = logging.getLogger(__name__)

KINDS = ("rate-cdf", "rate-vs-snr", "rate-vs-m", "energy-metric", "aoa-demo")


@dataclass(frozen=True)
class _Task:
    point: int
    trial: int


def _fmt(v: float) -> str:
    return f"{v:.10g}"


def _write_csv(path: Path, header: str, rows: list[str]) -> None:
    path.write_text("\n".join([header, *rows]) + "\n", encoding="utf-8", newline="\n")


def _points(cfg: ScenarioConfig, kind: str) -> list[tuple[float, int, float]]:
    """(snr_db, m, x) per operating point."""
    if kind == "rate-vs-snr":
        return [(s, cfg.m_pilots[0], s) for s in cfg.snr_db]
    if kind == "rate-vs-m":
        return [(cfg.snr_db[0], m, float(m)) for m in cfg.m_pilots]
    return [(cfg.snr_db[0], cfg.m_pilots[0], cfg.snr_db[0])]


_WORKER: dict = {}


def _init_worker(cfg: ScenarioConfig, points):
    _WORKER["cfg"] = cfg
    _WORKER["scen"] = [Scenario(cfg, snr, m) for snr, m, _ in points]


def _run_task(task: _Task):
    cfg = _WORKER["cfg"]
    seed = trial_seed(cfg.master_seed, task.trial)
    try:
        out = run_trial(_WORKER["scen"][task.point], seed, cfg.methods)
    except Exception as exc:  # noqa: BLE001 - one bad trial must not stop a campaign
        return task, seed, None, f"{type(exc).__name__}: {exc}"
    rows = {m: (r.sinr.copy(), r.rate.copy()) for m, r in out.reports.items()}
    return task, seed, rows, None


def _execute(cfg: ScenarioConfig, points, threads: int):
    tasks = [_Task(p, t) for p in range(len(points)) for t in range(cfg.trials)]
    if threads <= 1 or len(tasks) <= 1:
        _init_worker(cfg, points)
        results = [_run_task(t) for t in tasks]
    else:
        ctx = mp.get_context("spawn")
        with ctx.Pool(threads, initializer=_init_worker, initargs=(cfg, points)) as pool:
            results = list(pool.imap_unordered(_run_task, tasks, chunksize=4))
    results.sort(key=lambda r: (r[0].point, r[0].trial))
    return results


def _git_revision() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).resolve().parent)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def _manifest(out: Path, cfg: ScenarioConfig, kind: str, extra: dict) -> Path:
    lines = [
        f"kind: {kind}",
        f"config_sha256: {cfg.digest()}",
        f"master_seed: {cfg.master_seed}",
        f"trials_requested: {cfg.trials}",
        f"shortlink_version: {__version__}",
        f"kernel_backend: {kernels.BACKEND}",
        f"source_revision: {_git_revision()}",
        "seed_rule: SeedSequence([master_seed, trial]) -> 63-bit trial seed",
    ]
    lines += [f"{k}: {v}" for k, v in extra.items()]
    path = out / "manifest.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return path


def _percentiles(v: np.ndarray) -> tuple[float, float, float]:
    return tuple(float(x) for x in np.percentile(v, [10, 50, 90]))


def _rate_campaign(cfg: ScenarioConfig, kind: str, out: Path, threads: int) -> list[Path]:
    points = _points(cfg, kind)
    results = _execute(cfg, points, threads)
    failed = [(r[0], r[1], r[3]) for r in results if r[3] is not None]
    for task, seed, msg in failed:
        log.warning("trial %d (point %d, seed %d) failed: %s", task.trial, task.point, seed, msg)

    written = []
    per_point: dict[int, list[str]] = {p: [] for p in range(len(points))}
    rates: dict[tuple[int, str], list[np.ndarray]] = {}
    for task, seed, rows, _ in results:
        if rows is None:
            continue
        for method in cfg.methods:
            sinr, rate = rows[method]
            rates.setdefault((task.point, method), []).append(rate)
            for u in range(rate.size):
                sinr_db = 10 * np.log10(sinr[u]) if sinr[u] > 0 else float("-inf")
                per_point[task.point].append(
                    f"{task.trial},{method},{u},{_fmt(sinr_db)},{_fmt(rate[u])},{seed}")

    header = "trial,method,user,sinr_db,rate_bps_hz,seed"
    if len(points) == 1:
        path = out / "raw.csv"
        _write_csv(path, header, per_point[0])
        written.append(path)
    else:
        for p, (_, _, x) in enumerate(points):
            path = out / f"raw_x{_fmt(x)}.csv"
            _write_csv(path, header, per_point[p])
            written.append(path)

    agg = []
    for method in cfg.methods:
        for p, (_, _, x) in enumerate(points):
            vals = rates.get((p, method))
            if not vals:
                continue
            v = np.concatenate(vals)
            p10, p50, p90 = _percentiles(v)
            agg.append(f"{method},{_fmt(x)},{_fmt(v.mean())},{_fmt(p10)},{_fmt(p50)},{_fmt(p90)}")
    path = out / "aggregate.csv"
    _write_csv(path, "method,x,mean,p10,p50,p90", agg)
    written.append(path)

    if kind == "rate-cdf":
        cdf, cdf_user = [], []
        for method in cfg.methods:
            vals = rates.get((0, method))
            if not vals:
                continue
            stack = np.stack(vals)  # (trials, users)
            v = np.sort(stack.ravel())
            for i, r in enumerate(v):
                cdf.append(f"{method},{_fmt(r)},{_fmt((i + 1) / v.size)}")
            for u in range(stack.shape[1]):
                vu = np.sort(stack[:, u])
                for i, r in enumerate(vu):
                    cdf_user.append(f"{method},{u},{_fmt(r)},{_fmt((i + 1) / vu.size)}")
        for name, head, rows in (("cdf.csv", "method,rate_bps_hz,cdf", cdf),
                                 ("cdf_per_user.csv", "method,user,rate_bps_hz,cdf", cdf_user)):
            _write_csv(out / name, head, rows)
            written.append(out / name)

    done = sum(1 for r in results if r[3] is None)
    extra = {"points": len(points), "trials_completed": done, "trials_failed": len(failed)}
    if failed:
        extra["failed_seeds"] = " ".join(str(s) for _, s, _ in failed)
    written.append(_manifest(out, cfg, kind, extra))
    return written


def energy_sweep(cfg: ScenarioConfig) -> list[tuple[float, float, float]]:
    """(d, E_F, E_S) for the LoS-only channel over the configured distance sweep."""
    sc = Scenario(cfg)
    rows = []
    for d in np.linspace(cfg.energy_d_min_m, cfg.energy_d_max_m, cfg.energy_points):
        sta = place_sta(sc.ap, float(d), np.radians(cfg.energy_gamma_deg),
                        np.radians(cfg.energy_theta_deg), cfg.n, cfg.l_sta_m)
        e_f, e_s = energy_metrics(synthesize_channel(sc.ap, sta, None))
        rows.append((float(d), e_f, e_s))
    return rows


def _energy_campaign(cfg: ScenarioConfig, out: Path) -> list[Path]:
    rows = [f"{_fmt(d)},{_fmt(f)},{_fmt(s)}" for d, f, s in energy_sweep(cfg)]
    path = out / "energy.csv"
    _write_csv(path, "d_m,e_f,e_s", rows)
    return [path, _manifest(out, cfg, "energy-metric", {"points": len(rows)})]


def _aoa_demo(cfg: ScenarioConfig, out: Path) -> list[Path]:
    """Local-AoA beliefs for one STA; errors of ML and GMP over the trials."""
    sc = Scenario(cfg)
    sta = place_sta(sc.ap, cfg.d_m, np.radians(cfg.demo_gamma_deg),
                    np.radians(cfg.demo_theta_deg), cfg.n, cfg.l_sta_m)
    H = synthesize_channel(sc.ap, sta, sc.room).subchannels
    H = H / np.sqrt(np.mean(np.sum(np.abs(H) ** 2, axis=(1, 2))) / cfg.n ** 2)
    truth = true_local_aoas(sc.ap, sta)
    rows = []
    written = []
    for trial in range(cfg.trials):
        seed = trial_seed(cfg.master_seed, trial)
        ll = uplink_log_likelihoods(sc, H, _stream(seed, "uplink"))
        res = geo_mp.forward_backward(ll, sc.chain_tables)
        if trial == 0:
            path = out / "beliefs.csv"
            geo_mp.dump_beliefs(path, res)
            written.append(path)
        ml, gmp = res.ml_estimates(), res.estimates()
        for k in range(truth.size):
            rows.append(f"{trial},{k},{_fmt(np.degrees(truth[k]))},{_fmt(np.degrees(ml[k]))},"
                        f"{_fmt(np.degrees(gmp[k]))},{seed}")
    path = out / "aoa_estimates.csv"
    _write_csv(path, "trial,node,true_deg,ml_deg,gmp_deg,seed", rows)
    written.append(path)
    written.append(_manifest(out, cfg, "aoa-demo", {"trials_completed": cfg.trials}))
    return written


def run_experiment(cfg: ScenarioConfig, kind: str, out_dir: str | Path | None = None,
                   threads: int = 1) -> list[Path]:
    """Run one campaign and return the paths written under ``out_dir``."""
    if kind not in KINDS:
        raise ValueError(f"unknown experiment kind {kind!r}; choose from {', '.join(KINDS)}")
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_resolved.toml").write_text(dump_config(cfg), encoding="utf-8",
                                              newline="\n")
    if kind == "energy-metric":
        return _energy_campaign(cfg, out)
    if cfg.trials == 0:
        return [_manifest(out, cfg, kind, {"trials_completed": 0, "trials_failed": 0})]
    if kind == "aoa-demo":
        return _aoa_demo(cfg, out)
    return _rate_campaign(cfg, kind, out, max(1, int(threads)))
