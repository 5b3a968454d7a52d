"""Ensemble orchestration with counter-based seeding, reduction and audit."""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from ._fft import backend_name
from .bounds import AuditInputs, BoundReport, audit
from .config import RunConfig
from .forcing import compute_G, noise_fourth_moment
from .integrator import EnergyLedger, ModeVariance, run_trajectory, stationary_mode_variance
from .reports import series_rows
from .spectral_field import random_divfree_field, zeros
from .statistics import EnsembleStats, TrajectoryDiagnostics, TrajectoryStats, ensemble_reduce, finalize_trajectory

__all__ = [
    "NOISE_STREAM",
    "INIT_STREAM",
    "SEED_DERIVATION",
    "derive_seed",
    "TrajectoryResult",
    "EnsembleRun",
    "forcing_scales",
    "run_single",
    "run_ensemble",
    "audit_inputs_for",
    "linear_oracle",
]

NOISE_STREAM, INIT_STREAM = 0, 1
SEED_DERIVATION = (
    "seed(i, purpose) = 128-bit integer from numpy SeedSequence(master_seed, "
    "spawn_key=(i, purpose)).generate_state(4, uint32), little-endian words; "
    "purpose 0 drives the noise, 1 the initial field; each stream is PCG64(seed)"
)


def derive_seed(master_seed: int, index: int, purpose: int = NOISE_STREAM) -> int:
    """Stream seed for trajectory ``index``; independent of m and of run order."""
    words = np.random.SeedSequence(master_seed, spawn_key=(index, purpose)).generate_state(4, np.uint32)
    return sum(int(w) << (32 * i) for i, w in enumerate(words))


@dataclass
class TrajectoryResult:
    index: int
    seed: int
    init_seed: int
    stats: TrajectoryStats
    series: np.ndarray | None = None
    mode_moments: dict | None = None


def forcing_scales(cfg: RunConfig) -> dict:
    grid, noise, force = cfg.grid(), cfg.noise(), cfg.force()
    G = compute_G(noise, grid, cfg.t_end, cfg.dt)
    return {
        "F": force.F,
        "G": G,
        "G_sq": G * G,
        "L": force.L,
        "grad_rms": force.grad_rms,
        "grad_sup": force.grad_sup,
        "K_G4": noise_fourth_moment(noise, cfg.t_end, cfg.dt),
        "trace": noise.sum_g_sq(),
        "volume": grid.volume,
    }


def run_single(cfg: RunConfig, index: int, keep_series: bool = False,
               mode_variance: bool = False) -> TrajectoryResult:
    """Trajectory ``index`` of the ensemble described by ``cfg``."""
    grid = cfg.grid()
    seed = derive_seed(cfg.master_seed, index, NOISE_STREAM)
    init_seed = derive_seed(cfg.master_seed, index, INIT_STREAM)
    if cfg.init_shells:
        u0 = random_divfree_field(grid, cfg.spectrum(), np.random.Generator(np.random.PCG64(init_seed)))
    else:
        u0 = zeros(grid)
    observers = [EnergyLedger(), TrajectoryDiagnostics()]
    if mode_variance:
        observers.append(ModeVariance())
    rec = run_trajectory(cfg.params(), cfg.force(), cfg.noise(), u0, seed, observers)
    stats = finalize_trajectory(rec, cfg.stationarity_tol)
    series = series_rows(rec.outputs["ledger"], cfg.series_stride) if keep_series else None
    mm = rec.outputs.get("mode_variance")
    return TrajectoryResult(index, seed, init_seed, stats, series, mm)


def _run_star(args):
    return run_single(*args)


@dataclass
class EnsembleRun:
    config: RunConfig
    results: list
    ensemble: EnsembleStats
    inputs: AuditInputs
    report: BoundReport
    document: dict


def audit_inputs_for(cfg: RunConfig, scales: dict, ens: EnsembleStats) -> AuditInputs:
    return AuditInputs(
        eps_mean=ens.eps_mean,
        stderr_eps=ens.stderr_eps,
        eps_var=ens.eps_var,
        G=scales["G"],
        F=scales["F"],
        L=scales["L"],
        U=ens.U,
        nu=cfg.nu,
        ell=cfg.ell,
        stderr_U=ens.stderr_U,
        m=ens.m,
        balance_rel=ens.balance_rel,
        balance_tol=cfg.balance_tol,
        K_G4=scales["K_G4"],
        u6_moment=ens.u6_mean,
    )


def run_ensemble(cfg: RunConfig, *, keep_series: bool | None = None, mode_variance: bool = False,
                 progress=None) -> EnsembleRun:
    """Run ``cfg.m`` trajectories, reduce, audit and assemble the report document.

    Results are collected in index order, so the document does not depend on
    ``cfg.workers``.
    """
    t0 = time.perf_counter()
    keep = cfg.write_series if keep_series is None else keep_series
    jobs = [(cfg, i, keep, mode_variance) for i in range(cfg.m)]
    if cfg.workers > 1 and cfg.m > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_star, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_run_star(job))
            if progress is not None:
                progress(len(results), cfg.m)
    ens = ensemble_reduce([r.stats for r in results])
    scales = forcing_scales(cfg)
    inputs = audit_inputs_for(cfg, scales, ens)
    report = audit(inputs, cfg.rel_tol)
    scales["U"] = ens.U
    scales["stderr_U"] = ens.stderr_U
    scales["Re"] = report.reynolds
    doc = build_document(cfg, results, ens, scales, inputs, report, time.perf_counter() - t0)
    return EnsembleRun(cfg, results, ens, inputs, report, doc)


def build_document(cfg, results, ens, scales, inputs, report, wall_time) -> dict:
    ens_d = ens.to_dict()
    ens_d.pop("paths")
    return {
        "format": "stochns-report/1",
        "config": {"text": cfg.to_text(content_only=True), "values": cfg.to_dict(content_only=True)},
        "trajectories": [
            {**r.stats.to_dict(), "index": r.index, "seed": str(r.seed), "init_seed": str(r.init_seed)}
            for r in results
        ],
        "ensemble": ens_d,
        "scales": scales,
        "audit_inputs": inputs.to_dict(),
        "bounds": report.to_dict(),
        "convergence": {
            "stationarity_tol": cfg.stationarity_tol,
            "n_converged": ens.n_converged,
            "stationarity_dev": [r.stats.stationarity_dev for r in results],
            "balance_residual": [r.stats.balance_residual for r in results],
            "balance_rel": ens.balance_rel,
            "balance_tol": cfg.balance_tol,
            "ke_guard_violations": sum(1 for r in results if r.stats.ke_guard_violated),
        },
        "provenance": {
            "master_seed": cfg.master_seed,
            "seed_derivation": SEED_DERIVATION,
            "version": __version__,
            "fft_backend": backend_name(),
            "wall_time": wall_time,
        },
    }


def linear_oracle(cfg: RunConfig) -> dict:
    """Stokes-mode checks: per-mode stationary variance and E<eps> = G^2/2.

    Each forced mode's time-averaged (e_m, u)^2 is compared across paths
    with the exact stationary value of the scheme, within 3 standard errors.
    """
    cfg = replace(cfg, linear_only=True)
    run = run_ensemble(cfg, keep_series=False, mode_variance=True)
    noise = cfg.noise()
    grid = cfg.grid()
    moms = np.array([r.mode_moments["second_moment"] for r in run.results if not r.stats.aborted])
    modes = []
    for j, mode in enumerate(noise.modes):
        mu = cfg.nu * grid.k0**2 * float(np.dot(mode.k, mode.k))
        target = stationary_mode_variance(mode.amplitude, mu, cfg.dt, cfg.noise_form)
        col = moms[:, j]
        mean = math.fsum(col) / len(col)
        se = float(np.std(col, ddof=1) / math.sqrt(len(col))) if len(col) > 1 else math.nan
        modes.append({
            "k": list(mode.k), "polarization": mode.polarization, "target": target,
            "mean": mean, "stderr": se,
            "pass": bool(abs(mean - target) <= 3 * se) if math.isfinite(se) else None,
        })
    G_sq = run.inputs.G_sq
    se = run.ensemble.stderr_eps
    eps_ok = abs(run.ensemble.eps_mean - 0.5 * G_sq) <= 3 * se if se is not None else None
    return {
        "modes": modes,
        "eps_mean": run.ensemble.eps_mean,
        "stderr_eps": se,
        "target_eps": 0.5 * G_sq,
        "eps_pass": eps_ok,
        "run": run,
    }
