"""Acceptance criteria 1-8, each at its stated tolerance.

Every test appends one ``criterion N: PASS|FAIL ...`` line to the session
summary before asserting.  The heavy ensembles are cached per module and
shared between criteria.  Run with ``pytest -m slow tests/test_acceptance.py``
or directly as a script.
"""

import functools
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import SMALL_CONFIG, rand_field, unit_shell_noise
from oracles import quadrature_norm_sq, series_eval, grid_points, taylor_green_symbolic
from stochns.bounds import PASS, AuditInputs, audit
from stochns.config import load_config, parse_config
from stochns.ensemble import audit_inputs_for, forcing_scales, linear_oracle, run_ensemble
from stochns.forcing import DeterministicForce, ForcedMode, basis_field
from stochns.integrator import EnergyLedger, SolverParams, SolverState, cfl_check, run_trajectory
from stochns.reports import report_body
from stochns.spectral_field import (
    GridSpec,
    from_physical,
    inner,
    l2_norm_sq,
    leray_project,
    nonlinear_term,
    zeros,
)
from stochns.statistics import energy_balance_residual, ensemble_reduce

pytestmark = pytest.mark.slow

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
ZEROTH = CONFIGS / "zeroth_law.cfg"
DT_CANDIDATES = (2e-3, 1e-3, 5e-4, 2.5e-4)


def _report(line, ok, log):
    text = f"{line.split(':')[0]}: {'PASS' if ok else 'FAIL'} {line.split(':', 1)[1].strip()}"
    log.append(text)
    print(text)
    return ok


def _base():
    return load_config(ZEROTH)


@functools.lru_cache(maxsize=None)
def zeroth_run(m=32):
    return run_ensemble(_base().with_override("ensemble.size", str(m)), keep_series=False)


def reaudit(cfg, results):
    """Audit for a subset of an ensemble's paths (trajectories do not depend on m)."""
    ens = ensemble_reduce([r.stats for r in results])
    inputs = audit_inputs_for(cfg, forcing_scales(cfg), ens)
    return ens, audit(inputs, cfg.rel_tol)


@functools.lru_cache(maxsize=None)
def zeroth16():
    run = zeroth_run()
    return reaudit(run.config, run.results[:16])


class _CflProbe:
    name = "cfl"

    def __init__(self, every=200):
        self.every = every
        self.advisory = math.inf

    def start(self, ctx):
        self.params = ctx.params

    def step(self, info):
        if info.index % self.every == 0:
            s = SolverState(info.t, info.field, None, info.index)
            self.advisory = min(self.advisory, cfl_check(s, self.params))

    def finish(self, info):
        pass

    def result(self):
        return self.advisory


@functools.lru_cache(maxsize=None)
def cfl_dt(nu):
    """Largest candidate dt below the CFL advisory seen on a burn-in pilot of path 0."""
    cfg = _base().with_override("physics.nu", repr(nu))
    pilot = replace(cfg.params(), t_end=cfg.burn_in, burn_in=0.0)
    probe = _CflProbe()
    run_trajectory(pilot, cfg.force(), cfg.noise(), zeros(cfg.grid()), 0, [probe])
    adv = probe.advisory
    dt = next((d for d in DT_CANDIDATES if d <= adv), DT_CANDIDATES[-1])
    return dt, adv


@functools.lru_cache(maxsize=None)
def nu_run(nu):
    if nu == 0.5:
        run = zeroth_run()
        ens, _ = zeroth16()
        return ens, run.config.dt, math.nan
    dt, adv = cfl_dt(nu)
    cfg = _base().with_override("physics.nu", repr(nu)).with_override("time.dt", repr(dt))
    run = run_ensemble(cfg, keep_series=False)
    return run.ensemble, dt, adv, run


@functools.lru_cache(maxsize=None)
def forced_run():
    # f = (0, 0.05 sin x, 0): coefficient 0.05/(2i) on k = (1,0,0), conjugate implied
    return run_ensemble(load_config(CONFIGS / "two_sided.cfg"), keep_series=False)


@functools.lru_cache(maxsize=None)
def linear_run(dt):
    cfg = _base().with_override("scheme.linear_only", "true").with_override("time.dt", repr(dt))
    return linear_oracle(cfg)


# -----------------------------------------------------------------------

def test_criterion_1_zeroth_law(acceptance_log):
    ens, rep = zeroth16()
    tol = max(3 * ens.stderr_eps, 0.05)
    dev = abs(ens.eps_mean - 1.0)
    ok = dev <= tol and ens.n_aborted == 0
    _report(f"criterion 1: E<eps> = {ens.eps_mean:.4f} +- {ens.stderr_eps:.4f} (m={ens.m}), "
            f"|dev| {dev:.4f} <= {tol:.4f}; check_zeroth_law {rep.by_name('zeroth_law').verdict}",
            ok, acceptance_log)
    assert ok
    assert rep.by_name("zeroth_law").verdict == PASS


def test_criterion_2_nu_independence(acceptance_log):
    rows = []
    for nu in (0.5, 0.25, 0.125):
        out = nu_run(nu)
        rows.append((nu, out[0].eps_mean, out[0].stderr_eps, out[1], out[2], out[0].n_aborted))
    worst = 0.0
    ok = all(r[5] == 0 for r in rows)
    for i in range(3):
        for j in range(i + 1, 3):
            band = 3 * math.hypot(rows[i][2], rows[j][2])
            gap = abs(rows[i][1] - rows[j][1])
            worst = max(worst, gap / band)
            ok &= gap <= band
    desc = "; ".join(f"nu={r[0]} dt={r[3]:g} (adv {r[4]:.3g}): {r[1]:.4f} +- {r[2]:.4f}" for r in rows)
    _report(f"criterion 2: {desc}; worst pair gap/3sigma = {worst:.2f}", ok, acceptance_log)
    assert ok


@pytest.mark.parametrize("dt", [2e-3, 2e-2])
def test_criterion_3_linear_oracle(dt, acceptance_log):
    res = linear_run(dt)
    z = [abs(m["mean"] - m["target"]) / m["stderr"] for m in res["modes"]]
    modes_ok = all(m["pass"] for m in res["modes"])
    ok = modes_ok and bool(res["eps_pass"])
    _report(f"criterion 3 (dt={dt:g}): {sum(m['pass'] for m in res['modes'])}/12 modes within 3 se "
            f"(max z {max(z):.2f}); E<eps> = {res['eps_mean']:.4f} +- {res['stderr_eps']:.4f} "
            f"vs G^2/2 = {res['target_eps']:.4f}", ok, acceptance_log)
    assert ok


def _all_reports():
    """(report, stderr_eps) for every ensemble simulated in this suite."""
    z = zeroth_run()
    ens16, rep16 = zeroth16()
    reps = {"zeroth m=32": (z.report, z.ensemble.stderr_eps), "zeroth m=16": (rep16, ens16.stderr_eps)}
    runs = {f"nu={nu}": nu_run(nu)[3] for nu in (0.25, 0.125)}
    runs["forced"] = forced_run()
    for dt in (2e-3, 2e-2):
        runs[f"linear dt={dt:g}"] = linear_run(dt)["run"]
    runs["small"] = run_ensemble(parse_config(SMALL_CONFIG))
    reps.update({k: (r.report, r.ensemble.stderr_eps) for k, r in runs.items()})
    return reps


def test_criterion_4_upper_bounds(acceptance_log):
    worst = []
    ok = True
    for label, (rep, se) in _all_reports().items():
        se = se or 0.0
        for name in ("upper_bound", "intermediate_upper"):
            c = rep.by_name(name)
            good = c.verdict == PASS and c.margin >= -3 * se
            ok &= good
            worst.append((c.margin, label, name))
    m, label, name = min(worst)
    _report(f"criterion 4: {len(worst)} checks over {len(worst) // 2} runs; smallest margin "
            f"{m:+.4g} ({name}, {label})", ok, acceptance_log)
    assert ok


def test_criterion_5_two_sided(acceptance_log):
    run = forced_run()
    rep = run.report
    dom = rep.by_name("dominance")
    names = ("two_sided_lower_1", "two_sided_upper_1", "two_sided_lower_2", "two_sided_upper_2")
    checks = [rep.by_name(n) for n in names]
    ok = dom.verdict == PASS and all(c.verdict == PASS for c in checks) and run.ensemble.n_aborted == 0
    desc = ", ".join(f"{c.name} {c.verdict} ({c.margin:+.3g}/{c.stat_band:.3g})" for c in checks)
    _report(f"criterion 5: F={run.inputs.F:.4g} U={run.inputs.U:.4g} 2FU={dom.lhs:.4g} < G^2={dom.rhs:.4g}; "
            f"E<eps> = {run.ensemble.eps_mean:.4f}; {desc}", ok, acceptance_log)
    assert ok


def test_criterion_6_variance(acceptance_log):
    run = zeroth_run()
    rep = run.report
    var = run.ensemble.eps_var
    checks = [rep.by_name(n) for n in ("variance_1", "variance_2", "variance_F0")]
    ok = run.ensemble.m == 32 and var <= 7.0 and all(c.verdict == PASS for c in checks)
    desc = ", ".join(f"{c.name} rhs {c.rhs:.4g} margin {c.margin:+.4g}" for c in checks)
    _report(f"criterion 6: Var = {var:.4g} (m={run.ensemble.m}) <= 7; {desc}", ok, acceptance_log)
    assert ok


def _residual_levels(form, m=16):
    """Seed-averaged |R(T)|/T at three dt levels; weak noise, energetic start."""
    g = GridSpec(16, 2 * math.pi)
    u0 = rand_field(g, 5)
    noise = unit_shell_noise(g, G2=0.02)
    force = DeterministicForce.zero(g)
    out = []
    for dt in (0.01, 0.005, 0.0025):
        p = SolverParams(nu=0.5, dt=dt, t_end=1.0, noise_form=form)
        R = [abs(energy_balance_residual(run_trajectory(p, force, noise, u0, s, [EnergyLedger()])))
             for s in range(m)]
        out.append(math.fsum(R) / m / p.t_end)
    return out


def test_criterion_7_residual_refinement(acceptance_log):
    ok = True
    parts = []
    for form in ("plain", "ou_exact"):
        lv = _residual_levels(form)
        r = (lv[0] / lv[1], lv[1] / lv[2])
        ok &= min(r) >= 1.5
        parts.append(f"{form}: " + " ".join(f"{v:.3e}" for v in lv) + f" ratios {r[0]:.2f}, {r[1]:.2f}")
    _report("criterion 7: " + "; ".join(parts), ok, acceptance_log)
    assert ok


def test_criterion_8_property_suite(acceptance_log):
    rng = np.random.default_rng(8)
    results = {}
    g = GridSpec(16, 2 * math.pi)
    # projection idempotence on a raw (not divergence-free) field
    raw = from_physical(g, rng.standard_normal((3, 16, 16, 16)))
    p1 = leray_project(raw)
    results["idempotence"] = bool(np.array_equal(leray_project(p1).coeffs, p1.coeffs))
    # energy neutrality of the nonlinear term
    u = rand_field(g, 1, {s: 1.0 / s for s in range(1, 8)})
    nl = nonlinear_term(u)
    results["neutrality"] = abs(inner(nl, u)) <= 1e-10 * math.sqrt(l2_norm_sq(u) * l2_norm_sq(nl))
    # Taylor-Green: u.grad u is a pure gradient, so its projection vanishes
    _, conv = taylor_green_symbolic()
    x = np.arange(16) * g.dx
    X, Y, _ = np.meshgrid(x, x, x, indexing="ij")
    tg = from_physical(g, np.stack([np.cos(X) * np.sin(Y), -np.sin(X) * np.cos(Y), 0 * X]))
    results["taylor_green"] = math.sqrt(l2_norm_sq(nonlinear_term(tg))) <= 1e-8 * math.sqrt(conv)
    # Parseval: spectral norm vs quadrature of an explicit Fourier sum; round trip
    g8 = GridSpec(8, 1.7)
    v = rand_field(g8, 2)
    quad = quadrature_norm_sq(series_eval(v, grid_points(g8)), g8)
    back = from_physical(g8, v.to_physical())
    results["parseval"] = (abs(l2_norm_sq(v) - quad) <= 1e-12 * quad
                           and np.max(np.abs(back.coeffs - v.coeffs)) <= 1e-12 * np.max(np.abs(v.coeffs)))
    # basis orthonormality
    modes = [ForcedMode(k, p, 1.0) for k in [(1, 0, 0), (0, -1, 0), (1, 2, 0), (0, 1, -2), (2, -1, 1)]
             for p in (0, 1)]
    E = [basis_field(mo, g8) for mo in modes]
    gram = np.array([[inner(a, b) for b in E] for a in E])
    results["orthonormality"] = float(np.max(np.abs(gram - np.eye(len(E))))) <= 1e-12
    # U ordering: mean of square roots
    from stochns.statistics import TrajectoryStats

    paths = [TrajectoryStats(eps_avg=1.0, usq_avg=q, u_rms=math.sqrt(q), balance_residual=0.0, aborted=False,
                             balance_scale=1.0, t_end=1.0) for q in (1.0, 4.0)]
    results["U_ordering"] = ensemble_reduce(paths).U == 1.5
    # determinism: identical configs give byte-identical report bodies
    cfg = parse_config(SMALL_CONFIG).with_override("time.t_end", "0.5")
    results["determinism"] = report_body(run_ensemble(cfg).document) == report_body(run_ensemble(cfg).document)
    # audit scale-invariance on real ensemble inputs
    x = zeroth_run().inputs
    same = True
    for j in (-2, -1, 1, 2):
        c = 64.0**j
        y = AuditInputs(
            eps_mean=x.eps_mean * c, stderr_eps=x.stderr_eps * c, eps_var=x.eps_var * c * c,
            G=x.G * 8.0**j, F=x.F * 16.0**j, L=x.L, U=x.U * 4.0**j, nu=x.nu * 4.0**j, ell=x.ell,
            stderr_U=x.stderr_U * 4.0**j, m=x.m, balance_rel=x.balance_rel, balance_tol=x.balance_tol,
            K_G4=x.K_G4 * c * c, u6_moment=x.u6_moment * c * c,
        )
        same &= audit(y).verdicts == audit(x).verdicts
    results["scale_invariance"] = same
    ok = all(results.values())
    _report("criterion 8: " + ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in results.items()),
            ok, acceptance_log)
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s", "-rA"]))
