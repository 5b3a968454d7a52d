"""Deterministic body force and white-in-time noise with their scales F, G, L.

Noise is a finite sum ``sum_m s(t) g_m e_m dW_m`` over real orthonormal
solenoidal basis fields.  Each forced wavevector ``k`` and its mirror ``-k``
give two independent real modes (cosine-like for the lexicographically
positive one, sine-like for the other); each carries two polarizations from
the frame perpendicular to ``k``.  One scalar Brownian motion drives each
(k, polarization) entry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .spectral_field import (
    FourierField,
    GridSpec,
    _repair_inplace,
    grad_norm_sq,
    l2_norm_sq,
    to_physical,
    zeros,
)

__all__ = [
    "ModeUnresolvableError",
    "ForcedMode",
    "ConstantSchedule",
    "StepSchedule",
    "ExpSchedule",
    "BoundedSchedule",
    "NoiseSpec",
    "DeterministicForce",
    "polarization_frame",
    "basis_field",
    "trace_covariance",
    "sample_noise_increment",
    "compute_G",
    "compute_F_L",
    "noise_fourth_moment",
    "step_count",
]


class ModeUnresolvableError(ValueError):
    pass


def _is_positive(k) -> bool:
    for v in k:
        if v:
            return v > 0
    return False


@dataclass(frozen=True)
class ForcedMode:
    k: tuple[int, int, int]
    polarization: int
    amplitude: float

    def __post_init__(self):
        k = tuple(int(v) for v in self.k)
        if len(k) != 3:
            raise ValueError("k must have three integer components")
        if k == (0, 0, 0):
            raise ValueError("forced wavevector must be nonzero")
        if self.polarization not in (0, 1):
            raise ValueError("polarization must be 0 or 1")
        if not (math.isfinite(self.amplitude) and self.amplitude >= 0):
            raise ValueError("amplitude must be finite and >= 0")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "amplitude", float(self.amplitude))


# Schedules: s(t) >= 0 with a known finite supremum.


@dataclass(frozen=True)
class ConstantSchedule:
    value: float = 1.0

    @property
    def bound(self) -> float:
        return abs(self.value)

    def __call__(self, t: float) -> float:
        return self.value

    def describe(self) -> str:
        return "constant" if self.value == 1.0 else f"constant {self.value!r}"


@dataclass(frozen=True)
class StepSchedule:
    """``before`` for t < t_off, ``after`` from then on."""

    t_off: float
    before: float = 1.0
    after: float = 0.0

    @property
    def bound(self) -> float:
        return max(abs(self.before), abs(self.after))

    def __call__(self, t: float) -> float:
        return self.before if t < self.t_off else self.after

    def describe(self) -> str:
        return f"step {self.t_off!r}"


@dataclass(frozen=True)
class ExpSchedule:
    """exp(-rate t); rate must be >= 0 to keep the schedule bounded."""

    rate: float

    @property
    def bound(self) -> float:
        return 1.0

    def __call__(self, t: float) -> float:
        return math.exp(-self.rate * t)

    def describe(self) -> str:
        return f"exp {self.rate!r}"


@dataclass(frozen=True)
class BoundedSchedule:
    """Arbitrary callable with a caller-declared supremum."""

    func: Callable[[float], float]
    bound: float

    def __call__(self, t: float) -> float:
        v = float(self.func(t))
        if v < 0 or v > self.bound:
            raise ValueError(f"schedule value {v} at t={t} outside [0, {self.bound}]")
        return v

    def describe(self) -> str:
        return f"callable bound {self.bound!r}"


@dataclass(frozen=True)
class NoiseSpec:
    modes: tuple[ForcedMode, ...] = ()
    schedule: object = field(default_factory=ConstantSchedule)

    def __post_init__(self):
        modes = tuple(self.modes)
        seen = set()
        for m in modes:
            key = (m.k, m.polarization)
            if key in seen:
                raise ValueError(f"duplicate mode {m.k} polarization {m.polarization}")
            seen.add(key)
        object.__setattr__(self, "modes", modes)
        bound = getattr(self.schedule, "bound", None)
        if not callable(self.schedule) or bound is None:
            raise TypeError("schedule must be callable and declare a finite bound")
        if not math.isfinite(bound):
            raise ValueError("unbounded noise schedule")
        if isinstance(self.schedule, ExpSchedule) and self.schedule.rate < 0:
            raise ValueError("unbounded noise schedule: exp rate must be >= 0")
        if isinstance(self.schedule, (ConstantSchedule, StepSchedule)):
            if min(self.schedule(0.0), getattr(self.schedule, "after", 0.0)) < 0:
                raise ValueError("schedule must be nonnegative")

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([m.amplitude for m in self.modes], dtype=float)

    def sum_g_sq(self) -> float:
        return math.fsum(m.amplitude**2 for m in self.modes)

    def scaled(self, factor: float) -> "NoiseSpec":
        return NoiseSpec(
            tuple(ForcedMode(m.k, m.polarization, m.amplitude * factor) for m in self.modes),
            self.schedule,
        )


def polarization_frame(k) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal pair spanning the plane perpendicular to ``k``.

    e0 ~ k x z (k x x when k is parallel to z), e1 ~ k x e0.
    """
    k = np.asarray(k, dtype=float)
    ref = np.array([0.0, 0.0, 1.0])
    if k[0] == 0 and k[1] == 0:
        ref = np.array([1.0, 0.0, 0.0])
    e0 = np.cross(k, ref)
    e0 /= np.linalg.norm(e0)
    e1 = np.cross(k, e0)
    e1 /= np.linalg.norm(e1)
    return e0, e1


def _basis_entries(mode: ForcedMode, grid: GridSpec):
    """(storage index tuples, complex 3-vectors) of the basis field e_m."""
    if not grid.resolves(mode.k):
        raise ModeUnresolvableError(f"mode unresolvable: {mode.k} on n={grid.n}")
    kp = mode.k if _is_positive(mode.k) else tuple(-v for v in mode.k)
    p = polarization_frame(kp)[mode.polarization]
    c = math.sqrt(2.0 / grid.volume)
    vec = (0.5 * c) * p.astype(complex)
    if kp != mode.k:
        vec = vec / 1j  # sine-like partner
    entries = []
    for kk, v in ((kp, vec), (tuple(-x for x in kp), np.conj(vec))):
        i, j, l, conj = grid.index_of(kk)
        if not conj:
            entries.append(((i, j, l), v))
    return entries


def basis_field(mode: ForcedMode, grid: GridSpec) -> FourierField:
    """Real, solenoidal, unit-L2-norm field supported on +-mode.k."""
    c = np.zeros(grid.shape, dtype=np.complex128)
    for (i, j, l), v in _basis_entries(mode, grid):
        c[:, i, j, l] = v
    return FourierField(grid, c)


def trace_covariance(spec: NoiseSpec, t: float = 0.0) -> float:
    """Tr(g* g)(t) = sum_k (s(t) g_k)^2."""
    s = float(spec.schedule(t))
    return s * s * spec.sum_g_sq()


def sample_noise_increment(
    spec: NoiseSpec, grid: GridSpec, dt: float, rng: np.random.Generator, t: float = 0.0
) -> FourierField:
    """One increment sum_m s(t) g_m e_m dW_m with dW_m ~ N(0, dt) independent."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    xi = rng.standard_normal(len(spec.modes))
    if dt == 0 or not spec.modes:
        return zeros(grid)
    s = float(spec.schedule(t))
    c = np.zeros(grid.shape, dtype=np.complex128)
    for m, x in zip(spec.modes, xi):
        a = s * m.amplitude * math.sqrt(dt) * x
        for (i, j, l), v in _basis_entries(m, grid):
            c[:, i, j, l] += a * v
    return FourierField(grid, c)


def step_count(t_end: float, dt: float) -> int:
    """Number of steps on [0, t_end]; t_end must be a multiple of dt."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    n = int(round(t_end / dt))
    if abs(n * dt - t_end) > 1e-9 * max(1.0, abs(t_end)):
        raise ValueError(f"t_end={t_end} is not a whole number of steps dt={dt}")
    return n


def _schedule_sq_mean(spec: NoiseSpec, t_end: float, dt: float) -> float:
    if isinstance(spec.schedule, ConstantSchedule):
        return spec.schedule.value**2
    n = step_count(t_end, dt)
    return math.fsum(float(spec.schedule(j * dt)) ** 2 for j in range(n)) / n


def compute_G(spec: NoiseSpec, grid: GridSpec, t_end: float, dt: float) -> float:
    """G = ((1/T) int_0^T Tr(g*g)/|D| dt)^(1/2), left-endpoint sum on the step grid."""
    if t_end <= 0:
        raise ValueError("averaging window must have T > 0")
    return math.sqrt(spec.sum_g_sq() / grid.volume * _schedule_sq_mean(spec, t_end, dt))


def noise_fourth_moment(spec: NoiseSpec, t_end: float, dt: float) -> float:
    """K_G^4 = < (sum_k |g_k|^2)^2 >, the time-averaged squared trace."""
    sg = spec.sum_g_sq()
    if isinstance(spec.schedule, ConstantSchedule):
        return (spec.schedule.value**2 * sg) ** 2
    n = step_count(t_end, dt)
    return math.fsum((float(spec.schedule(j * dt)) ** 2 * sg) ** 2 for j in range(n)) / n


def compute_F_L(force: FourierField) -> tuple[float, float, float, float]:
    """Amplitude F, gradient rms, collocation sup of |grad f|_F, and length L.

    Returns ``(F, L, grad_rms, grad_sup)`` with
    L = min(ell, F / grad_rms, F / grad_sup) when F > 0 and L = ell otherwise.
    """
    grid = force.grid
    F = math.sqrt(l2_norm_sq(force) / grid.volume)
    grad_rms = math.sqrt(grad_norm_sq(force) / grid.volume)
    k = grid.wavevectors
    frob = np.zeros((grid.n,) * 3)
    for j in range(3):
        dj = to_physical(FourierField(grid, 1j * k[j] * force.coeffs))
        frob += np.sum(dj**2, axis=0)
    grad_sup = float(np.sqrt(frob.max()))
    if F > 0:
        L = min(grid.ell, F / grad_rms, F / grad_sup)
    else:
        L = grid.ell
    return F, L, grad_rms, grad_sup


@dataclass(frozen=True, eq=False)
class DeterministicForce:
    """Time-independent, mean-zero, solenoidal body force with derived scales."""

    field: FourierField
    F: float
    grad_rms: float
    grad_sup: float
    L: float

    @classmethod
    def from_field(cls, f: FourierField, tol: float = 1e-12) -> "DeterministicForce":
        from .spectral_field import divergence_residual

        if np.any(f.coeffs[:, 0, 0, 0] != 0):
            raise ValueError("deterministic force must be mean-zero")
        if divergence_residual(f) > tol:
            raise ValueError("deterministic force must be divergence-free")
        F, L, gr, gs = compute_F_L(f)
        return cls(f, F, gr, gs, L)

    @classmethod
    def zero(cls, grid: GridSpec) -> "DeterministicForce":
        return cls(zeros(grid), 0.0, 0.0, 0.0, grid.ell)

    @classmethod
    def from_modes(cls, grid: GridSpec, modes: Sequence[tuple[tuple[int, int, int], Sequence[complex]]],
                   tol: float = 1e-12) -> "DeterministicForce":
        """Force from ``(k, (cx, cy, cz))`` pairs; the conjugate at -k is implied.

        If both ``k`` and ``-k`` are listed their coefficients must be complex
        conjugates of each other.
        """
        table: dict[tuple[int, int, int], np.ndarray] = {}
        for k, vec in modes:
            k = tuple(int(v) for v in k)
            vec = np.asarray(vec, dtype=complex)
            if k == (0, 0, 0):
                raise ValueError("deterministic force must be mean-zero (k = 0 given)")
            if not grid.resolves(k):
                raise ModeUnresolvableError(f"mode unresolvable: {k} on n={grid.n}")
            kk = np.asarray(k, float) * grid.k0
            if abs(kk @ vec) > tol * max(1.0, np.linalg.norm(kk) * np.linalg.norm(vec)):
                raise ValueError(f"force mode {k} is not divergence-free")
            if k in table:
                raise ValueError(f"duplicate force mode {k}")
            mk = tuple(-v for v in k)
            if mk in table and not np.allclose(table[mk], np.conj(vec), rtol=0, atol=tol):
                raise ValueError(f"force modes {k} and {mk} violate Hermitian symmetry")
            table[k] = vec
        c = np.zeros(grid.shape, dtype=np.complex128)
        for k, vec in table.items():
            i, j, l, conj = grid.index_of(k)
            c[:, i, j, l] = np.conj(vec) if conj else vec
            mi, mj, ml, mconj = grid.index_of(tuple(-v for v in k))
            c[:, mi, mj, ml] = vec if mconj else np.conj(vec)
        _repair_inplace(c, grid)
        return cls.from_field(FourierField(grid, c), tol=max(tol, 1e-12))
