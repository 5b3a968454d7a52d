"""Stokes-mode oracle: with the nonlinear term off every forced coefficient is
an independent OU process, so its stationary variance is known exactly.

The exact OU increment gives that variance at any dt; the plain sqrt(dt)
increment gives the AR(1) value g^2 dt / (1 - exp(-2 mu dt)), which drifts
away from g^2 / (2 mu) as dt grows.
"""

import math
from pathlib import Path

from stochns.config import load_config
from stochns.ensemble import linear_oracle
from stochns.integrator import stationary_mode_variance

cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "stokes.cfg")
cfg = cfg.with_override("time.burn_in", "10").with_override("time.t_end", "100").with_override("ensemble.size", "8")

for form in ("ou_exact", "plain"):
    for dt in ("2e-3", "2e-2"):
        res = linear_oracle(cfg.with_override("scheme.noise_form", form).with_override("time.dt", dt))
        worst = max(abs(m["mean"] - m["target"]) / m["stderr"] for m in res["modes"])
        print(f"{form:>8} dt={dt:<5} modes within 3 se: {sum(m['pass'] for m in res['modes'])}/12 "
              f"(max z {worst:.2f})  E<eps> = {res['eps_mean']:.4f} +- {res['stderr_eps']:.4f}")

m0 = cfg.noise().modes[0]
mu = cfg.nu
for dt in (2e-3, 2e-2, 0.2):
    exact = stationary_mode_variance(m0.amplitude, mu, dt, "ou_exact")
    plain = stationary_mode_variance(m0.amplitude, mu, dt, "plain")
    print(f"dt={dt:<6} ou_exact {exact:.6f}  plain {plain:.6f}  continuum {m0.amplitude**2 / (2 * mu):.6f}  "
          f"ratio {plain / exact:.4f} vs 2 mu dt / (1 - exp(-2 mu dt)) = {2 * mu * dt / -math.expm1(-2 * mu * dt):.4f}")
