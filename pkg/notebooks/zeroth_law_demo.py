"""Zeroth law on a small grid: E<eps> against G^2/2 for two viscosities.

A shortened version of configs/zeroth_law.cfg (n = 8, T = 60, 6 paths per
viscosity) so it finishes in about a minute.  The dissipation rate should sit
near G^2/2 = 1 for both values of nu, while U grows as nu drops.
"""

from pathlib import Path

from stochns.config import load_config
from stochns.ensemble import run_ensemble

cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "zeroth_law.cfg")
for key, value in [("grid.n", "8"), ("time.dt", "5e-3"), ("time.burn_in", "12"), ("time.t_end", "60"),
                   ("ensemble.size", "6")]:
    cfg = cfg.with_override(key, value)

print(f"{'nu':>6} {'E<eps>':>9} {'stderr':>8} {'U':>7} {'Re':>7}  zeroth_law")
for nu in ("0.5", "0.25"):
    run = run_ensemble(cfg.with_override("physics.nu", nu), keep_series=False)
    e = run.ensemble
    print(f"{nu:>6} {e.eps_mean:9.4f} {e.stderr_eps:8.4f} {e.U:7.3f} {run.report.reynolds:7.2f}  "
          f"{run.report.by_name('zeroth_law').verdict}")

print("\nfull audit for the last run:")
for c in run.report.checks:
    margin = "n/a" if c.margin is None else f"{c.margin:+.4g}"
    print(f"  {c.name:<20} {c.verdict:<12} margin {margin}")
