"""Exponential Euler-Maruyama stepping of the truncated stochastic NSE.

Per stored wavevector with decay rate mu = nu |k~|^2 one step reads

    c'(k) = exp(-mu dt) (c(k) + dt N(k) + dt f(k)) + eta(k),

with N the dealiased projected advection term frozen at the step start and
eta the noise.  In the default ``ou_exact`` form each forced mode receives
s(t) g_m sqrt((1 - exp(-2 mu dt)) / (2 mu)) xi_m e_m, the exact
Ornstein-Uhlenbeck increment, so the linear (Stokes) statistics do not depend
on dt.  The ``plain`` form uses s(t) g_m sqrt(dt) xi_m e_m instead.  The
increment recorded as dW_m is the factor multiplying s(t) g_m e_m.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

import numpy as np

from ._fft import TransformPair
from .forcing import DeterministicForce, NoiseSpec, _basis_entries, compute_G, step_count, trace_covariance
from .spectral_field import (
    _PAIRS,
    _SYM,
    FourierField,
    GridSpec,
)

__all__ = [
    "NOISE_FORMS",
    "BlowUpError",
    "SolverParams",
    "SolverState",
    "StepInfo",
    "FinalInfo",
    "TrajectoryContext",
    "TrajectoryRecord",
    "Observer",
    "EnergyLedger",
    "EnergySeries",
    "ModeVariance",
    "Stepper",
    "step",
    "run_trajectory",
    "cfl_check",
    "ke_guard_threshold",
    "stationary_mode_variance",
]

NOISE_FORMS = ("ou_exact", "plain")


class BlowUpError(FloatingPointError):
    def __init__(self, t: float):
        super().__init__(f"blow-up at t={t!r}: non-finite coefficient")
        self.t = t


@dataclass(frozen=True)
class SolverParams:
    nu: float
    dt: float
    t_end: float
    burn_in: float | None = None
    linear_only: bool = False
    cfl_safety: float = 0.5
    noise_form: str = "ou_exact"
    ke_guard: float = 10.0

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be > 0")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.t_end >= 0:
            raise ValueError("t_end must be >= 0")
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", 0.2 * self.t_end)
        if not (0 <= self.burn_in and (self.burn_in < self.t_end or self.t_end == 0)):
            raise ValueError("burn_in must satisfy 0 <= burn_in < t_end")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if self.noise_form not in NOISE_FORMS:
            raise ValueError(f"noise_form must be one of {NOISE_FORMS}")
        step_count(self.t_end, self.dt)

    @property
    def n_steps(self) -> int:
        return step_count(self.t_end, self.dt)


@dataclass
class SolverState:
    t: float
    field: FourierField
    stream: np.random.Generator
    step_index: int = 0


@dataclass(frozen=True)
class StepInfo:
    """Pre-step diagnostics at t_j plus the noise drawn for step j -> j+1."""

    index: int
    t: float
    dt: float
    usq: float  # ||u_j||^2
    grad_sq: float  # ||grad u_j||^2
    force_work: float  # (f, u_j)
    trace: float  # Tr(g* g)(t_j)
    noise_work: float  # sum_m s g_m (e_m, u_j) dW_m
    projections: np.ndarray  # (e_m, u_j)
    dW: np.ndarray
    amplitudes: np.ndarray  # s(t_j) g_m
    vec: np.ndarray  # u_j on the stepper's active mode set
    stepper: "Stepper"

    @property
    def field(self) -> FourierField:
        return FourierField(self.stepper.grid, self.stepper.expand(self.vec))


@dataclass(frozen=True)
class FinalInfo:
    index: int
    t: float
    usq: float
    grad_sq: float
    force_work: float
    projections: np.ndarray
    vec: np.ndarray
    stepper: "Stepper"

    @property
    def field(self) -> FourierField:
        return FourierField(self.stepper.grid, self.stepper.expand(self.vec))


@dataclass(frozen=True)
class TrajectoryContext:
    grid: GridSpec
    params: SolverParams
    force: DeterministicForce
    noise: NoiseSpec
    n_steps: int
    mode_decay: np.ndarray  # mu_m per forced mode


class Observer(Protocol):
    name: str

    def start(self, ctx: TrajectoryContext) -> None: ...

    def step(self, info: StepInfo) -> None: ...

    def finish(self, info: FinalInfo) -> None: ...

    def result(self) -> Any: ...


class EnergyLedger:
    """Per-step terms of the discrete energy identity (left endpoint, Ito)."""

    name = "ledger"

    def start(self, ctx):
        n = ctx.n_steps
        self.nu = ctx.params.nu
        self.dt = ctx.params.dt
        self.volume = ctx.grid.volume
        self._cols = {c: np.zeros(n) for c in ("t", "usq", "grad_sq", "force_work", "trace", "noise_work")}
        self._n = 0
        self.final = None

    def step(self, info):
        j = self._n
        cols = self._cols
        cols["t"][j] = info.t
        cols["usq"][j] = info.usq
        cols["grad_sq"][j] = info.grad_sq
        cols["force_work"][j] = info.force_work
        cols["trace"][j] = info.trace
        cols["noise_work"][j] = info.noise_work
        self._n += 1

    def finish(self, info):
        self.final = info

    def result(self):
        n = self._n
        out = {k: v[:n].copy() for k, v in self._cols.items()}
        out.update(
            nu=self.nu, dt=self.dt, volume=self.volume, steps=n,
            t_final=self.final.t if self.final else n * self.dt,
            usq_final=self.final.usq if self.final else float("nan"),
            grad_sq_final=self.final.grad_sq if self.final else float("nan"),
        )
        return out


class EnergySeries:
    """||u(t_j)||^2 at every step, including the final state."""

    name = "energy"

    def start(self, ctx):
        self.values = []

    def step(self, info):
        self.values.append(info.usq)

    def finish(self, info):
        self.values.append(info.usq)

    def result(self):
        return np.array(self.values)


class ModeVariance:
    """Post-burn-in time averages of (e_m, u)^2 for every forced mode."""

    name = "mode_variance"

    def start(self, ctx):
        self.burn_in = ctx.params.burn_in
        self.sum_sq = np.zeros(len(ctx.noise.modes))
        self.sum_lin = np.zeros(len(ctx.noise.modes))
        self.elapsed = 0.0

    def step(self, info):
        w = min(info.dt, max(0.0, info.t + info.dt - self.burn_in))
        if w > 0:
            self.sum_sq += w * info.projections**2
            self.sum_lin += w * info.projections
            self.elapsed += w

    def finish(self, info):
        pass

    def result(self):
        if self.elapsed <= 0:
            return {"second_moment": None, "mean": None, "elapsed": 0.0}
        return {
            "second_moment": self.sum_sq / self.elapsed,
            "mean": self.sum_lin / self.elapsed,
            "elapsed": self.elapsed,
        }


def stationary_mode_variance(g: float, mu: float, dt: float, noise_form: str = "ou_exact") -> float:
    """Stationary variance of (e_m, u) for a forced mode in the linear scheme."""
    if noise_form == "ou_exact":
        return g * g / (2.0 * mu)
    decay = math.exp(-2.0 * mu * dt)
    return g * g * dt / (1.0 - decay)


class Stepper:
    """Precomputed operators for one (grid, params, force, noise) combination.

    The state is carried as a compressed vector over the active mode set: the
    2/3-rule modes plus whatever the force, the noise and ``support`` occupy
    (with Hermitian partners).  No other coefficient can become nonzero under
    the step law.  Holds FFT workspaces, so use one instance per trajectory.
    """

    def __init__(self, grid: GridSpec, params: SolverParams, force: DeterministicForce,
                 noise: NoiseSpec, support: np.ndarray | None = None):
        self.grid = grid
        self.params = params
        self.force = force
        self.noise = noise
        self.volume = grid.volume
        n = grid.n
        entries = [_basis_entries(m, grid) for m in noise.modes]
        # Stokes mode couples nothing, so only occupied modes are carried
        if params.linear_only:
            active = np.zeros(grid.shape[1:], dtype=bool)
        else:
            active = np.array(grid.dealias_mask)
        for e in entries:
            for pos, _ in e:
                active[pos] = True
        f = force.field.coeffs
        active |= np.any(f != 0, axis=0)
        if support is not None:
            active |= np.any(support != 0, axis=0)
        active &= ~grid.nyquist
        active[0, 0, 0] = False
        plane = active[..., 0]
        idx = (-np.arange(n)) % n
        active[..., 0] = plane | plane[idx][:, idx]
        self.active = active
        self.flat = np.flatnonzero(active)
        sel = (slice(None), active)
        self.kv = np.array(grid.wavevectors[sel])
        self.inv_k2 = np.array(grid.inv_k_sq[active])
        self.decay = np.exp(-params.nu * grid.k_sq[active] * params.dt)
        self.w = np.array(grid.weights[active])
        self.wk2 = self.w * grid.k_sq[active]
        self.f = np.array(f[sel])
        self.has_force = bool(np.any(self.f))
        self.fw = self.volume * self.w * np.conj(self.f)
        # position of every stored index inside the compressed vector
        lookup = np.full(active.shape, -1, dtype=np.int64)
        lookup[active] = np.arange(self.flat.size)
        self._lookup = lookup
        m = grid.dealias_mask[active] if not params.linear_only else np.zeros(self.flat.size, bool)
        self.m_idx = np.flatnonzero(m)
        self.m_flat = self.flat[self.m_idx]
        self.km = self.kv[:, self.m_idx]
        kz0 = grid.int_wavevectors[2][active] == 0
        ii, jj, _ = np.unravel_index(self.flat[kz0], active.shape)
        self.h_p = np.flatnonzero(kz0)
        self.h_q = lookup[(-ii) % n, (-jj) % n, 0]
        # complex copies: mixed float/complex ufuncs are markedly slower
        self._kv_c = self.kv.astype(np.complex128)
        self._inv_k2_c = self.inv_k2.astype(np.complex128)
        self._decay_c = self.decay.astype(np.complex128)
        self._dt_f = params.dt * self.f
        self._fw_c = np.conj(self.fw)
        self._w2 = self.volume * np.repeat(self.w, 2)
        self._wk2_2 = self.volume * np.repeat(self.wk2, 2)
        # -i dt k / n^3 folds the transform scale and the step size together
        self._km_c = (-1j * params.dt / n**3) * self.km
        self._linear = params.linear_only
        if not self._linear:
            self.fft = TransformPair(n, 3, 6)
        self._setup_noise(entries)

    def _setup_noise(self, entries):
        grid, noise, params = self.grid, self.noise, self.params
        M = len(noise.modes)
        self.n_modes = M
        self.g = noise.amplitudes
        positions: list[tuple[int, int, int]] = []
        self.mu = np.zeros(M)
        for m, mode in enumerate(noise.modes):
            for pos, _ in entries[m]:
                if pos not in positions:
                    positions.append(pos)
            self.mu[m] = params.nu * grid.k0**2 * float(np.dot(mode.k, mode.k))
        W = np.zeros((len(positions), 3, M), dtype=complex)
        for m, e in enumerate(entries):
            for pos, v in e:
                W[positions.index(pos), :, m] += v
        self.W = W
        self.pos = np.array([self._lookup[p] for p in positions], dtype=np.int64)
        wp = np.array([grid.weights[p] for p in positions]) if positions else np.zeros(0)
        self._proj_w = self.volume * wp[:, None, None] * np.conj(W)
        P = len(positions)
        self._W2 = W.reshape(P * 3, M)
        self._proj_w2 = self._proj_w.reshape(P * 3, M)
        dt = params.dt
        if params.noise_form == "ou_exact":
            self.factor = np.sqrt(-np.expm1(-2.0 * self.mu * dt) / (2.0 * self.mu))
        else:
            self.factor = np.full(M, math.sqrt(dt))

    # layout ------------------------------------------------------------

    def compress(self, coeffs: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(coeffs[:, self.active])

    def expand(self, vec: np.ndarray) -> np.ndarray:
        full = np.zeros(self.grid.shape, dtype=np.complex128)
        full[:, self.active] = vec
        return full

    # diagnostics -------------------------------------------------------

    def projections(self, v: np.ndarray) -> np.ndarray:
        if not self.n_modes:
            return np.zeros(0)
        return (np.take(v, self.pos, axis=1).T.ravel() @ self._proj_w2).real

    def diagnostics(self, v: np.ndarray) -> tuple[float, float, float, np.ndarray]:
        vf = np.ascontiguousarray(v).view(np.float64)
        a2 = np.einsum("cp,cp->p", vf, vf)
        usq = float(self._w2 @ a2)
        grad = float(self._wk2_2 @ a2)
        fwork = float(np.vdot(self._fw_c, v).real) if self.has_force else 0.0
        return usq, grad, fwork, self.projections(v)

    # dynamics ----------------------------------------------------------

    def _project(self, v: np.ndarray, k: np.ndarray, inv_k2: np.ndarray) -> None:
        s = (k[0] * v[0] + k[1] * v[1] + k[2] * v[2]) * inv_k2
        v -= k * s

    def nonlinear(self, v: np.ndarray) -> np.ndarray:
        """Unprojected -div(u u) on the 2/3-rule modes, scaled by dt."""
        fft = self.fft
        phys = fft.inverse_sparse(self.m_flat, np.take(v, self.m_idx, axis=1))
        buf = fft.forward_buffer
        for p, (i, j) in enumerate(_PAIRS):
            np.multiply(phys[i], phys[j], out=buf[p])
        ph = fft.forward_gather(buf, self.m_flat, scaled=False)
        kc = self._km_c
        out = np.empty((3, kc.shape[1]), dtype=np.complex128)
        for i in range(3):
            s = _SYM[i]
            out[i] = kc[0] * ph[s[0]] + kc[1] * ph[s[1]] + kc[2] * ph[s[2]]
        return out

    def draw(self, t: float, rng: np.random.Generator):
        """Noise values at the forced positions, dW and amplitudes s(t) g_m."""
        if not self.n_modes:
            return None, np.zeros(0), np.zeros(0)
        xi = rng.standard_normal(self.n_modes)
        dW = self.factor * xi
        amp = float(self.noise.schedule(t)) * self.g
        eta = (self._W2 @ (amp * dW)).reshape(-1, 3).T
        return eta, dW, amp

    def advance(self, v: np.ndarray, t: float, rng: np.random.Generator):
        rhs = np.array(v, order="C")
        if not self._linear:
            rhs[:, self.m_idx] += self.nonlinear(v)
        if self.has_force:
            rhs += self._dt_f
        rhs *= self._decay_c
        eta, dW, amp = self.draw(t, rng)
        if eta is not None:
            rhs[:, self.pos] += eta
        # one projection covers N and the roundoff of the other terms
        self._project(rhs, self._kv_c, self._inv_k2_c)
        p, q = self.h_p, self.h_q
        rhs[:, p] = 0.5 * (np.take(rhs, p, axis=1) + np.conj(np.take(rhs, q, axis=1)))
        return rhs, dW, amp


def step(state: SolverState, params: SolverParams, force: DeterministicForce, noise: NoiseSpec) -> SolverState:
    """Advance one step; consumes normals from ``state.stream``."""
    grid = state.field.grid
    adv = cfl_check(state, params)
    if params.dt > adv:
        warnings.warn(f"dt={params.dt} exceeds CFL advisory {adv:.4g}", RuntimeWarning, stacklevel=2)
    st = Stepper(grid, params, force, noise, support=state.field.coeffs)
    v, _, _ = st.advance(st.compress(state.field.coeffs), state.t, state.stream)
    t_new = (state.step_index + 1) * params.dt
    if not np.all(np.isfinite(v)):
        raise BlowUpError(t_new)
    return SolverState(t_new, FourierField(grid, st.expand(v)), state.stream, state.step_index + 1)


def cfl_check(state: SolverState, params: SolverParams) -> float:
    """Advisory maximum step: cfl_safety * dx / max |u| over collocation points."""
    u = state.field.to_physical()
    umax = float(np.sqrt(np.max(np.sum(u**2, axis=0))))
    if umax == 0.0:
        return math.inf
    return params.cfl_safety * state.field.grid.dx / umax


def ke_guard_threshold(grid: GridSpec, params: SolverParams, force: DeterministicForce,
                       noise: NoiseSpec, usq0: float) -> float:
    """Guard on ||u(t)||^2/|D| from the kinetic-energy boundedness estimate."""
    if params.t_end > 0:
        G2 = compute_G(noise, grid, params.t_end, params.dt) ** 2
    else:
        G2 = trace_covariance(noise, 0.0) / grid.volume
    cp = (grid.ell / (2 * math.pi)) ** 2
    level = 2.0 * G2 * cp / params.nu + force.F**2 * cp**2 / params.nu**2
    return params.ke_guard * level + usq0 / grid.volume


@dataclass
class TrajectoryRecord:
    seed: int
    params: SolverParams
    initial: FourierField
    final_state: SolverState | None
    steps: int
    n_steps: int
    aborted: bool = False
    abort_reason: str | None = None
    outputs: dict = field(default_factory=dict)
    ke_guard_threshold: float = math.inf
    ke_guard_max: float = 0.0
    ke_guard_violated: bool = False


def run_trajectory(
    params: SolverParams,
    force: DeterministicForce,
    noise: NoiseSpec,
    u0: FourierField,
    seed: int,
    observers: Sequence[Observer] = (),
) -> TrajectoryRecord:
    """Integrate one path from t = 0 to t_end.

    The result is a deterministic function of the arguments.  A blow-up stops
    the path; the record is returned with ``aborted`` set and observer outputs
    covering the completed steps.
    """
    grid = u0.grid
    rng = np.random.Generator(np.random.PCG64(seed))
    st = Stepper(grid, params, force, noise, support=u0.coeffs)
    n_steps = params.n_steps
    ctx = TrajectoryContext(grid, params, force, noise, n_steps, st.mu.copy())
    for obs in observers:
        obs.start(ctx)
    c = st.compress(u0.coeffs)
    c.flags.writeable = False
    dt = params.dt
    usq, grad, fwork, proj = st.diagnostics(c)
    guard = ke_guard_threshold(grid, params, force, noise, usq)
    rec = TrajectoryRecord(seed, params, u0, None, 0, n_steps, ke_guard_threshold=guard)
    rec.ke_guard_max = usq / grid.volume
    j = 0
    try:
        for j in range(n_steps):
            t = j * dt
            c_new, dW, amp = st.advance(c, t, rng)
            info = StepInfo(
                j, t, dt, usq, grad, fwork, trace_covariance(noise, t),
                float(np.sum(amp * proj * dW)), proj, dW, amp, c, st,
            )
            for obs in observers:
                obs.step(info)
            usq, grad, fwork, proj = st.diagnostics(c_new)
            if not math.isfinite(usq):
                raise BlowUpError((j + 1) * dt)
            c = c_new
            c.flags.writeable = False
            rec.steps = j + 1
            e = usq / grid.volume
            if e > rec.ke_guard_max:
                rec.ke_guard_max = e
            if e > guard and not rec.ke_guard_violated:
                rec.ke_guard_violated = True
                warnings.warn(
                    f"kinetic energy {e:.4g} exceeds guard {guard:.4g} at t={(j + 1) * dt:.4g}",
                    RuntimeWarning, stacklevel=2,
                )
    except BlowUpError as exc:
        rec.aborted = True
        rec.abort_reason = str(exc)
    t_final = rec.steps * dt
    final = FinalInfo(rec.steps, t_final, usq, grad, fwork, proj, c, st)
    if not rec.aborted:
        for obs in observers:
            obs.finish(final)
        rec.final_state = SolverState(t_final, FourierField(grid, st.expand(c)), rng, rec.steps)
    rec.outputs = {obs.name: obs.result() for obs in observers}
    return rec
