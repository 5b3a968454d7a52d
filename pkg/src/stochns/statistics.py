"""Per-path time averages, the discrete energy-balance residual and ensemble reduction."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .spectral_field import FourierField, grad_norm_sq

__all__ = [
    "DegenerateWindowError",
    "ObserverMissingError",
    "TimeAverager",
    "accumulate",
    "epsilon_instant",
    "energy_balance_residual",
    "energy_balance_scale",
    "balance_partial_series",
    "TrajectoryDiagnostics",
    "TrajectoryStats",
    "finalize_trajectory",
    "EnsembleStats",
    "ensemble_reduce",
]


class DegenerateWindowError(ValueError):
    """Raised when an average is requested over an empty window."""


class ObserverMissingError(KeyError):
    def __str__(self):
        return self.args[0] if self.args else "observer not attached"


def _overlap(t: float, dt: float, lo: float, hi: float = math.inf) -> float:
    """Length of [t, t + dt] inside [lo, hi]."""
    return max(0.0, min(t + dt, hi) - max(t, lo))


@dataclass
class TimeAverager:
    burn_in: float = 0.0
    integral: float = 0.0
    elapsed: float = 0.0

    @property
    def defined(self) -> bool:
        return self.elapsed > 0

    @property
    def average(self) -> float:
        if self.elapsed <= 0:
            raise DegenerateWindowError("degenerate averaging window: no time after burn-in")
        return self.integral / self.elapsed


def accumulate(avg: TimeAverager, value: float, t: float, dt: float) -> TimeAverager:
    """Add the left-endpoint contribution of ``value`` over [t, t + dt].

    A step straddling the burn-in threshold contributes only its part after
    the threshold.  Mutates and returns ``avg``.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    w = _overlap(t, dt, avg.burn_in)
    if w > 0:
        avg.integral += value * w
        avg.elapsed += w
    return avg


def epsilon_instant(field: FourierField, nu: float) -> float:
    """nu ||grad u||^2 / |D|."""
    return nu * grad_norm_sq(field) / field.grid.volume


def _ledger(record) -> dict:
    out = getattr(record, "outputs", record)
    if not isinstance(out, dict) or "ledger" not in out:
        raise ObserverMissingError("observer not attached: energy ledger (noise projections) missing")
    return out["ledger"]


def energy_balance_residual(record) -> float:
    """R(T) of the discrete energy identity for one trajectory record.

    R = ||u_N||^2 + 2 nu sum ||grad u_j||^2 dt - ||u_0||^2 - sum Tr_j dt
        - 2 sum (f, u_j) dt - 2 sum_j sum_k g_k (e_k, u_j) dW_kj.

    For an aborted record the identity is closed at the last finite state.
    Accepts a :class:`TrajectoryRecord` or its ``outputs`` mapping.
    """
    led = _ledger(record)
    n = led["steps"]
    usq_end = led["usq_final"]
    if not math.isfinite(usq_end):
        if n == 0:
            return math.nan
        # the state after the last logged step blew up; stop one step earlier
        usq_end = float(led["usq"][n - 1])
        n -= 1
    if n == 0:
        return 0.0 if not led["steps"] else usq_end - float(led["usq"][0])
    dt, nu = led["dt"], led["nu"]
    grad = led["grad_sq"][:n]
    terms = [
        usq_end,
        -float(led["usq"][0]),
        2.0 * nu * dt * math.fsum(grad),
        -dt * math.fsum(led["trace"][:n]),
        -2.0 * dt * math.fsum(led["force_work"][:n]),
        -2.0 * math.fsum(led["noise_work"][:n]),
    ]
    return math.fsum(terms)


def energy_balance_scale(record) -> float:
    """Energy throughput of a record: the sum of magnitudes of the identity's terms.

    Used to express R(T) as a relative defect.
    """
    led = _ledger(record)
    n = led["steps"]
    dt, nu = led["dt"], led["nu"]
    end = led["usq_final"] if math.isfinite(led["usq_final"]) else (led["usq"][n - 1] if n else 0.0)
    m = n if math.isfinite(led["usq_final"]) else max(n - 1, 0)
    start = float(led["usq"][0]) if n else float(end)
    return math.fsum([
        float(end),
        start,
        2.0 * nu * dt * math.fsum(led["grad_sq"][:m]),
        dt * math.fsum(led["trace"][:m]),
        2.0 * dt * math.fsum(np.abs(led["force_work"][:m])),
    ])


def balance_partial_series(led: dict) -> np.ndarray:
    """R(t_j) for j = 0..N, the running defect of the energy identity."""
    n = led["steps"]
    usq = np.append(led["usq"][:n], led["usq_final"])
    dt, nu = led["dt"], led["nu"]
    inc = 2.0 * nu * dt * led["grad_sq"][:n] - dt * led["trace"][:n] \
        - 2.0 * dt * led["force_work"][:n] - 2.0 * led["noise_work"][:n]
    return usq - usq[0] + np.concatenate(([0.0], np.cumsum(inc)))


class TrajectoryDiagnostics:
    """Time averages of epsilon and ||u||^2/|D| plus convergence diagnostics.

    The post-burn-in window is split at its midpoint; the two half-window
    averages of epsilon feed the stationarity check.  The integral of
    ||u||^6 over the whole run is kept as the sixth-moment diagnostic.
    """

    name = "diagnostics"

    def start(self, ctx):
        p = ctx.params
        self.nu = p.nu
        self.volume = ctx.grid.volume
        self.burn_in = p.burn_in
        self.t_end = p.t_end
        self.mid = 0.5 * (p.burn_in + p.t_end)
        self.eps = TimeAverager(p.burn_in)
        self.usq = TimeAverager(p.burn_in)
        self.halves = [TimeAverager(p.burn_in), TimeAverager(self.mid)]
        self.u6 = 0.0
        self.usq_max = 0.0
        self.t_reached = 0.0

    def step(self, info):
        t, dt = info.t, info.dt
        e = self.nu * info.grad_sq / self.volume
        self.usq_max = max(self.usq_max, info.usq / self.volume)
        self.u6 += info.usq * info.usq * info.usq * dt  # inf, not OverflowError, near blow-up
        self.t_reached = t + dt
        if t + dt <= self.burn_in:
            return
        accumulate(self.eps, e, t, dt)
        accumulate(self.usq, info.usq / self.volume, t, dt)
        w0 = _overlap(t, dt, self.burn_in, self.mid)
        if w0 > 0:
            self.halves[0].integral += e * w0
            self.halves[0].elapsed += w0
        accumulate(self.halves[1], e, t, dt)

    def finish(self, info):
        self.usq_max = max(self.usq_max, info.usq / self.volume)

    def result(self):
        def avg(a):
            return a.average if a.defined else None

        return {
            "eps_avg": avg(self.eps),
            "usq_avg": avg(self.usq),
            "elapsed": self.eps.elapsed,
            "half_eps": [avg(h) for h in self.halves],
            "u6_integral": self.u6,
            "usq_max": self.usq_max,
            "t_reached": self.t_reached,
        }


@dataclass
class TrajectoryStats:
    eps_avg: float
    usq_avg: float
    u_rms: float
    balance_residual: float | None
    aborted: bool = False
    balance_scale: float | None = None
    seed: int | None = None
    abort_reason: str | None = None
    converged: bool | None = None
    stationarity_dev: float | None = None
    half_eps: list = field(default_factory=list)
    elapsed: float = 0.0
    t_end: float = 0.0
    u6_integral: float = 0.0
    usq_max: float = 0.0
    ke_guard_violated: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryStats":
        return cls(**d)


def finalize_trajectory(record, stationarity_tol: float = 0.1) -> TrajectoryStats:
    """Package the diagnostics observer output of one record.

    Raises :class:`DegenerateWindowError` when a completed run has no time
    after burn-in.  An aborted run keeps whatever partial averages exist.
    """
    out = record.outputs
    if "diagnostics" not in out:
        raise ObserverMissingError("observer not attached: trajectory diagnostics missing")
    d = out["diagnostics"]
    aborted = bool(record.aborted)
    if d["eps_avg"] is None and not aborted:
        raise DegenerateWindowError("degenerate averaging window: burn_in >= t_end")
    eps = d["eps_avg"] if d["eps_avg"] is not None else math.nan
    usq = d["usq_avg"] if d["usq_avg"] is not None else math.nan
    h0, h1 = d["half_eps"]
    dev = None
    converged = None
    if h0 is not None and h1 is not None:
        ref = 0.5 * (abs(h0) + abs(h1))
        dev = abs(h0 - h1) / ref if ref > 0 else 0.0
        converged = bool(dev <= stationarity_tol) and not aborted
    resid = energy_balance_residual(out) if "ledger" in out else None
    scale = energy_balance_scale(out) if "ledger" in out else None
    return TrajectoryStats(
        eps_avg=eps,
        usq_avg=usq,
        u_rms=math.sqrt(usq) if usq >= 0 else math.nan,
        balance_residual=resid,
        aborted=aborted,
        balance_scale=scale,
        seed=getattr(record, "seed", None),
        abort_reason=record.abort_reason,
        converged=converged,
        stationarity_dev=dev,
        half_eps=[h0, h1],
        elapsed=d["elapsed"],
        t_end=d["t_reached"],
        u6_integral=d["u6_integral"],
        usq_max=d["usq_max"],
        ke_guard_violated=bool(getattr(record, "ke_guard_violated", False)),
    )


@dataclass
class EnsembleStats:
    m: int
    n_aborted: int
    eps_mean: float
    eps_var: float | None
    U: float
    stderr_eps: float | None
    stderr_U: float | None
    usq_mean: float
    u6_mean: float
    u6_max: float
    n_converged: int
    balance_rel: float | None = None
    paths: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["paths"] = [p.to_dict() for p in self.paths]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleStats":
        d = dict(d)
        d["paths"] = [TrajectoryStats.from_dict(p) for p in d.get("paths", [])]
        return cls(**d)


def _mean_var(x: Sequence[float]) -> tuple[float, float | None]:
    m = len(x)
    mean = math.fsum(x) / m
    if m < 2:
        return mean, None
    return mean, math.fsum((v - mean) ** 2 for v in x) / (m - 1)


def _balance_rel(good: Sequence[TrajectoryStats]) -> float | None:
    """Mean over paths of |R(T)| / throughput, or None without ledgers."""
    r = [abs(s.balance_residual) / s.balance_scale for s in good
         if s.balance_residual is not None and s.balance_scale]
    if len(r) < len(good) or not r:
        return None
    return math.fsum(r) / len(r)


def ensemble_reduce(stats: Sequence[TrajectoryStats]) -> EnsembleStats:
    """E[<eps>], its sample variance and U = E[<|u|^2/|D|>^(1/2)].

    Aborted paths are excluded and counted.  Sums are exactly rounded, so the
    result does not depend on the order of ``stats``.
    """
    if not stats:
        raise ValueError("empty ensemble")
    good = [s for s in stats if not s.aborted]
    if not good:
        raise RuntimeError(f"all {len(stats)} trajectories aborted")
    m = len(good)
    eps_mean, eps_var = _mean_var([s.eps_avg for s in good])
    U, var_u = _mean_var([s.u_rms for s in good])
    usq_mean = math.fsum(s.usq_avg for s in good) / m
    u6 = [s.u6_integral / s.t_end if s.t_end > 0 else 0.0 for s in good]
    return EnsembleStats(
        m=m,
        n_aborted=len(stats) - m,
        eps_mean=eps_mean,
        eps_var=eps_var,
        U=U,
        stderr_eps=math.sqrt(eps_var / m) if eps_var is not None else None,
        stderr_U=math.sqrt(var_u / m) if var_u is not None else None,
        usq_mean=usq_mean,
        u6_mean=math.fsum(u6) / m,
        u6_max=max(u6),
        n_converged=sum(1 for s in good if s.converged),
        balance_rel=_balance_rel(good),
        paths=list(stats),
    )
