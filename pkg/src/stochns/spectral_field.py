"""Truncated divergence-free vector fields on the periodic box [0, ell]^3.

A field is stored as the half spectrum of ``numpy.fft.rfftn`` over the three
spatial axes, shape ``(3, n, n, n//2 + 1)``, with the convention

    u(x) = sum_k c_k exp(i k~ . x),     k~ = 2 pi k / ell,

so no 1/n^3 factors live in the coefficients and every L2 quantity carries an
explicit volume factor, e.g. ``||u||^2 = |D| sum_k |c_k|^2``.  Coefficients at
``-k`` are implied by Hermitian symmetry.  Nyquist planes (index n/2 along any
axis) are kept at zero: their conjugate partner aliases onto themselves and
their derivative is not real.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping

import numpy as np

from ._fft import to_physical_array, to_spectral_array

__all__ = [
    "GridSpec",
    "FourierField",
    "zeros",
    "from_physical",
    "to_physical",
    "hermitian_repair",
    "leray_project",
    "divergence_residual",
    "inner",
    "l2_norm_sq",
    "grad_norm_sq",
    "nonlinear_term",
    "random_divfree_field",
]


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GridSpec:
    """Collocation grid with ``n`` points (modes) per axis on a box of side ``ell``."""

    n: int
    ell: float = 2.0 * math.pi

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or isinstance(self.n, bool):
            raise TypeError("n must be an integer")
        if self.n < 4 or self.n % 2:
            raise ValueError("n must be even ≥ 4")
        if not (self.ell > 0 and math.isfinite(self.ell)):
            raise ValueError("ell must be positive and finite")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "ell", float(self.ell))

    @property
    def volume(self) -> float:
        return self.ell**3

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (3, self.n, self.n, self.n // 2 + 1)

    @property
    def dx(self) -> float:
        return self.ell / self.n

    @property
    def k0(self) -> float:
        """Smallest nonzero physical wavenumber, 2 pi / ell."""
        return 2.0 * math.pi / self.ell

    @cached_property
    def int_wavevectors(self) -> np.ndarray:
        """Integer wavevector of each stored coefficient, shape (3, n, n, n//2+1)."""
        n = self.n
        k = np.fft.fftfreq(n, 1.0 / n).astype(np.int64)
        kz = np.arange(n // 2 + 1, dtype=np.int64)
        kk = np.stack(np.meshgrid(k, k, kz, indexing="ij"))
        return _readonly(kk)

    @cached_property
    def wavevectors(self) -> np.ndarray:
        return _readonly(self.k0 * self.int_wavevectors.astype(float))

    @cached_property
    def k_sq(self) -> np.ndarray:
        return _readonly(np.sum(self.wavevectors**2, axis=0))

    @cached_property
    def inv_k_sq(self) -> np.ndarray:
        k2 = self.k_sq
        out = np.zeros_like(k2)
        np.divide(1.0, k2, out=out, where=k2 > 0)
        return _readonly(out)

    @cached_property
    def weights(self) -> np.ndarray:
        """Multiplicity of each stored coefficient in the full spectrum."""
        w = np.full((self.n, self.n, self.n // 2 + 1), 2.0)
        w[..., 0] = 1.0
        w[..., -1] = 1.0
        return _readonly(w)

    @cached_property
    def nyquist(self) -> np.ndarray:
        """True where any component of k sits on a Nyquist plane."""
        h = self.n // 2
        return _readonly(np.any(np.abs(self.int_wavevectors) == h, axis=0))

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Modes kept by the 2/3 rule: 3 |k_i| < n on every axis."""
        return _readonly(np.all(3 * np.abs(self.int_wavevectors) < self.n, axis=0))

    @cached_property
    def shell(self) -> np.ndarray:
        """Integer shell index round(|k|) for each stored coefficient."""
        kk = self.int_wavevectors.astype(float)
        return _readonly(np.rint(np.sqrt(np.sum(kk**2, axis=0))).astype(np.int64))

    def index_of(self, k) -> tuple[int, int, int, bool]:
        """Storage index of wavevector ``k`` and whether the value is conjugated.

        Wavevectors with negative z component are stored through their
        conjugate partner ``-k``.
        """
        kx, ky, kz = (int(v) for v in k)
        conj = kz < 0
        if conj:
            kx, ky, kz = -kx, -ky, -kz
        return kx % self.n, ky % self.n, kz, conj

    def resolves(self, k) -> bool:
        return all(abs(int(v)) < self.n // 2 for v in k)


@dataclass(frozen=True, eq=False)
class FourierField:
    """Real vector field in half-spectrum coefficients; immutable."""

    grid: GridSpec
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs)
        if c.shape != self.grid.shape:
            raise ValueError(f"coefficient shape {c.shape} does not match grid {self.grid.shape}")
        if c.dtype != np.complex128 or c.flags.writeable:
            c = np.array(c, dtype=np.complex128)
        object.__setattr__(self, "coeffs", _readonly(c))

    def to_physical(self) -> np.ndarray:
        return to_physical(self)

    def coeff(self, k) -> np.ndarray:
        """Full-spectrum coefficient vector at integer wavevector ``k``."""
        i, j, l, conj = self.grid.index_of(k)
        c = self.coeffs[:, i, j, l]
        return np.conj(c) if conj else c.copy()

    def __add__(self, other: "FourierField") -> "FourierField":
        _same_grid(self, other)
        return FourierField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: "FourierField") -> "FourierField":
        _same_grid(self, other)
        return FourierField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> "FourierField":
        return FourierField(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "FourierField":
        return FourierField(self.grid, -self.coeffs)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.coeffs)))


def _same_grid(a: FourierField, b: FourierField):
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")


def zeros(grid: GridSpec) -> FourierField:
    return FourierField(grid, np.zeros(grid.shape, dtype=np.complex128))


def to_physical(field: FourierField) -> np.ndarray:
    """Values of the field on the n^3 collocation grid, shape (3, n, n, n)."""
    return to_physical_array(field.coeffs, field.grid.n)


def from_physical(grid: GridSpec, values: np.ndarray) -> FourierField:
    """Coefficients of real collocation values (no projection, no repair)."""
    values = np.asarray(values, dtype=float)
    if values.shape != (3, grid.n, grid.n, grid.n):
        raise ValueError("expected physical values of shape (3, n, n, n)")
    return FourierField(grid, to_spectral_array(values))


def _conj_partner_plane(plane: np.ndarray) -> np.ndarray:
    """conj of the coefficient at (-kx, -ky) within a kz = const plane."""
    n = plane.shape[-1]
    idx = (-np.arange(n)) % n
    return np.conj(plane[..., idx, :][..., idx])


def _repair_inplace(c: np.ndarray, grid: GridSpec) -> np.ndarray:
    plane = c[..., 0]
    c[..., 0] = 0.5 * (plane + _conj_partner_plane(plane))
    c[:, grid.nyquist] = 0.0
    c[:, 0, 0, 0] = 0.0
    return c


def hermitian_repair(field: FourierField) -> FourierField:
    """Average conjugate pairs in the kz = 0 plane; zero Nyquist and mean modes."""
    c = np.array(field.coeffs)
    return FourierField(field.grid, _repair_inplace(c, field.grid))


def _project_inplace(c: np.ndarray, grid: GridSpec) -> np.ndarray:
    k = grid.wavevectors
    s = np.einsum("i...,i...->...", k, c) * grid.inv_k_sq
    c -= k * s
    return c


# Parallel parts at or below this multiple of eps * |c(k)| are roundoff from
# an earlier projection; leaving them untouched makes projection an exact
# fixed point on its own output.
_ROUNDOFF_PARALLEL = 64.0 * np.finfo(float).eps


def leray_project(field: FourierField) -> FourierField:
    """Remove the component of each coefficient along its wavevector.

    The mean mode is set to zero.  Applying the projection to its own output
    returns a bitwise-identical field.
    """
    grid = field.grid
    c = np.array(field.coeffs)
    khat = grid.wavevectors * np.sqrt(grid.inv_k_sq)
    par = np.einsum("i...,i...->...", khat, c)
    size = np.sqrt(np.sum(np.abs(c) ** 2, axis=0))
    act = np.abs(par) > _ROUNDOFF_PARALLEL * size
    c[:, act] -= khat[:, act] * par[act]
    c[:, 0, 0, 0] = 0.0
    return FourierField(grid, c)


def divergence_residual(field: FourierField) -> float:
    """max_k |k~ . c(k)| / max_k |k~| |c(k)|; zero for an exactly solenoidal field."""
    k = field.grid.wavevectors
    div = np.abs(np.einsum("i...,i...->...", k, field.coeffs))
    scale = np.max(np.sqrt(field.grid.k_sq) * np.sqrt(np.sum(np.abs(field.coeffs) ** 2, axis=0)))
    return float(div.max() / scale) if scale > 0 else 0.0


def inner(a: FourierField, b: FourierField) -> float:
    """L2(D) inner product via Parseval."""
    _same_grid(a, b)
    w = a.grid.weights
    s = np.sum(w * np.sum((a.coeffs * np.conj(b.coeffs)).real, axis=0))
    return float(a.grid.volume * s)


def l2_norm_sq(field: FourierField) -> float:
    """||u||^2 = |D| sum_k |c_k|^2 over the full spectrum."""
    a2 = np.sum(field.coeffs.real**2 + field.coeffs.imag**2, axis=0)
    return float(field.grid.volume * np.sum(field.grid.weights * a2))


def grad_norm_sq(field: FourierField) -> float:
    """||grad u||^2 = |D| sum_k |k~|^2 |c_k|^2."""
    g = field.grid
    a2 = np.sum(field.coeffs.real**2 + field.coeffs.imag**2, axis=0)
    return float(g.volume * np.sum(g.weights * g.k_sq * a2))


_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
# position in _PAIRS of the symmetric product u_i u_j
_SYM = np.array([[0, 3, 4], [3, 1, 5], [4, 5, 2]])


def nonlinear_term(field: FourierField) -> FourierField:
    """Dealiased, projected advection term -P(u . grad u).

    Evaluated in divergence form -P div(u u) (equal to the convective form for
    solenoidal u).  The input is truncated by the 2/3 rule before the product
    and the output is truncated to the same mode set, so the result is the
    exact Galerkin projection of the quadratic term and is energy neutral:
    ``inner(nonlinear_term(u), u) == 0`` up to roundoff.
    """
    grid = field.grid
    mask = grid.dealias_mask
    u = to_physical_array(field.coeffs * mask, grid.n)
    prod = np.stack([u[i] * u[j] for i, j in _PAIRS])
    ph = to_spectral_array(prod)
    k = grid.wavevectors
    out = np.empty(grid.shape, dtype=np.complex128)
    for i in range(3):
        out[i] = -1j * (k[0] * ph[_SYM[i, 0]] + k[1] * ph[_SYM[i, 1]] + k[2] * ph[_SYM[i, 2]])
    out *= mask
    _project_inplace(out, grid)
    _repair_inplace(out, grid)
    return FourierField(grid, out)


def random_divfree_field(
    grid: GridSpec, spectrum: Mapping[int, float], rng: np.random.Generator
) -> FourierField:
    """Random solenoidal field with prescribed pre-projection shell energies.

    ``spectrum`` maps an integer shell ``s`` (modes with round(|k|) == s) to a
    target mean-square velocity ``sum_{k in shell} |c_k|^2``.  Gaussian
    coefficients are drawn on the half spectrum, made Hermitian, rescaled per
    shell to hit the target exactly and then projected, which removes the
    longitudinal part (on average one third of the energy).
    """
    c = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    _repair_inplace(c, grid)
    keep = np.zeros(grid.shape[1:], dtype=bool)
    a2 = np.sum(np.abs(c) ** 2, axis=0) * grid.weights
    for s, amp in spectrum.items():
        amp = float(amp)
        if not math.isfinite(amp) or amp < 0:
            raise ValueError(f"shell amplitude for shell {s} must be finite and >= 0")
        sel = (grid.shell == int(s)) & ~grid.nyquist
        sel[0, 0, 0] = False
        total = float(np.sum(a2[sel]))
        if total == 0.0 or amp == 0.0:
            continue
        c[:, sel] *= math.sqrt(amp / total)
        keep |= sel
    c[:, ~keep] = 0.0
    _project_inplace(c, grid)
    return FourierField(grid, c)
