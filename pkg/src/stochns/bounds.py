"""Machine checks of the dissipation-rate bounds against ensemble estimates.

Every check carries ``margin = rhs - lhs`` and a statistical band (plus a few
ulps of floating-point slack); the verdict is ``pass`` when
``margin >= -stat_band``.  Checks whose prerequisites are not
met are ``inconclusive``.
"""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace

__all__ = [
    "AuditInputs",
    "Check",
    "BoundReport",
    "reynolds",
    "check_intermediate_upper",
    "check_upper_bound",
    "check_F_estimate",
    "check_dominance",
    "check_two_sided",
    "check_zeroth_law",
    "check_variance_bounds",
    "audit",
    "PASS",
    "FAIL",
    "INCONCLUSIVE",
    "DEFAULT_BALANCE_TOL",
]

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"
DEFAULT_BALANCE_TOL = 0.02


@dataclass(frozen=True)
class AuditInputs:
    """Estimated and derived scales that feed every check.

    ``balance_rel`` is the relative energy-identity defect of the ensemble
    (mean |R| over the energy throughput); ``None`` means it was not measured.
    ``m`` sizes the band on the variance checks; without it that band is 0.
    """

    eps_mean: float
    stderr_eps: float | None
    eps_var: float | None
    G: float
    F: float
    L: float
    U: float
    nu: float
    ell: float
    stderr_U: float | None = None
    m: int | None = None
    balance_rel: float | None = None
    balance_tol: float = DEFAULT_BALANCE_TOL
    K_G4: float | None = None
    u6_moment: float | None = None

    def __post_init__(self):
        for name in ("eps_mean", "G", "F", "U", "nu", "ell"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be finite and >= 0, got {v!r}")
        for name in ("stderr_eps", "eps_var", "stderr_U"):
            v = getattr(self, name)
            if v is not None and not v >= 0:
                raise ValueError(f"{name} must be >= 0, got {v!r}")
        if not self.nu > 0:
            raise ValueError("nu must be > 0")
        if not 0 < self.L <= self.ell * (1 + 1e-12):
            raise ValueError(f"L must lie in (0, ell], got L={self.L!r}, ell={self.ell!r}")

    @property
    def G_sq(self) -> float:
        return self.G * self.G

    @property
    def band(self) -> float:
        return 3.0 * (self.stderr_eps or 0.0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AuditInputs":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True)
class Check:
    name: str
    lhs: float | None
    rhs: float | None
    margin: float | None
    stat_band: float
    verdict: str
    kind: str = "bound"
    note: str = ""
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Check":
        return cls(**d)


# Bands include a few ulps of the compared magnitudes, so a bound met with
# equality in exact arithmetic (e.g. G = sqrt(2), E<eps> = 1 = G^2/2) passes.
_ROUNDOFF = 8.0 * sys.float_info.epsilon


def _check(name: str, lhs: float, rhs: float, band: float, **kw) -> Check:
    margin = rhs - lhs
    band = band + _ROUNDOFF * max(abs(lhs), abs(rhs))
    verdict = PASS if margin >= -band else FAIL
    return Check(name, lhs, rhs, margin, band, verdict, **kw)


def _inconclusive(c: Check, why: str) -> Check:
    return replace(c, verdict=INCONCLUSIVE, note=why)


def reynolds(U: float, L: float, nu: float) -> float:
    """Re = U L / nu."""
    if not nu > 0:
        raise ValueError("nu must be > 0")
    if U == 0:
        return 0.0
    return U * L / nu


def _cubic_term(x: AuditInputs) -> float:
    """(2 + 1/Re) U^3 / L, written as 2U^3/L + nu U^2/L^2 so that U = 0 is regular."""
    return 2.0 * x.U**3 / x.L + x.nu * x.U**2 / x.L**2


def check_intermediate_upper(x: AuditInputs) -> Check:
    """E<eps> <= G^2/2 + F U."""
    return _check("intermediate_upper", x.eps_mean, 0.5 * x.G_sq + x.F * x.U, x.band)


def check_upper_bound(x: AuditInputs) -> Check:
    """E<eps> <= G^2 + (2 + 1/Re) U^3 / L."""
    return _check(
        "upper_bound", x.eps_mean, x.G_sq + _cubic_term(x), x.band,
        detail={"Re": reynolds(x.U, x.L, x.nu)},
    )


def check_F_estimate(x: AuditInputs) -> Check:
    """F <= U^2/L + U nu/(2 L^2) + eps/(2U).

    The band is the 3-sigma band of eps propagated through eps/(2U).
    """
    if x.U > 0:
        rhs = x.U**2 / x.L + 0.5 * x.U * x.nu / x.L**2 + 0.5 * x.eps_mean / x.U
        return _check("F_estimate", x.F, rhs, 0.5 * x.band / x.U)
    return Check("F_estimate", x.F, None, None, 0.0, INCONCLUSIVE, note="U = 0")


def check_dominance(x: AuditInputs) -> Check:
    """Strict G^2 > 2 F U; a prerequisite rather than a bound."""
    lhs, rhs = 2.0 * x.F * x.U, x.G_sq
    verdict = PASS if rhs > lhs else FAIL
    return Check("dominance", lhs, rhs, rhs - lhs, 0.0, verdict, kind="prerequisite")


def _balance_holds(x: AuditInputs) -> tuple[bool, str]:
    if x.balance_rel is None:
        return True, "energy equality not measured; assumed"
    if not math.isfinite(x.balance_rel):
        return False, "energy-balance residual not finite"
    if x.balance_rel <= x.balance_tol:
        return True, f"energy-balance residual {x.balance_rel:.3g} <= {x.balance_tol:.3g}"
    return False, f"energy-balance residual {x.balance_rel:.3g} > {x.balance_tol:.3g}"


def _two_sided_prereq(x: AuditInputs) -> tuple[bool, str]:
    if check_dominance(x).verdict != PASS:
        return False, "dominance G^2 > 2FU not met"
    return _balance_holds(x)


def check_two_sided(x: AuditInputs) -> list[Check]:
    """Both lower and both upper bounds under stochastic dominance."""
    third = _cubic_term(x)
    b = x.band
    checks = [
        _check("two_sided_lower_1", 0.5 * x.G_sq - x.F * x.U, x.eps_mean, b),
        _check("two_sided_upper_1", x.eps_mean, 0.5 * x.G_sq + x.F * x.U, b),
        _check("two_sided_lower_2", (x.G_sq - third) / 3.0, x.eps_mean, b),
        _check("two_sided_upper_2", x.eps_mean, x.G_sq + third, b),
    ]
    ok, why = _two_sided_prereq(x)
    if not ok:
        return [_inconclusive(c, why) for c in checks]
    return [replace(c, note=why) for c in checks]


def check_zeroth_law(x: AuditInputs, rel_tol: float = 0.05) -> Check:
    """|E<eps> - G^2/2| <= max(3 stderr, rel_tol G^2/2) when F = 0."""
    target = 0.5 * x.G_sq
    dev = abs(x.eps_mean - target)
    rel = dev / target if target > 0 else None
    c = _check("zeroth_law", dev, max(x.band, rel_tol * target), 0.0,
               detail={"target": target, "rel_dev": rel, "rel_tol": rel_tol})
    if x.F != 0:
        return _inconclusive(c, "F != 0")
    ok, why = _two_sided_prereq(x)
    if not ok:
        return _inconclusive(c, why)
    return c


def check_variance_bounds(x: AuditInputs) -> list[Check]:
    """Var<eps> against both theorem bounds, plus 7/4 G^4 when F = 0.

    The band is 3 standard errors of the sample variance under a Gaussian
    approximation, var * sqrt(2/(m-1)), and 0 when m is unknown.
    """
    if x.eps_var is None or (x.m is not None and x.m < 2):
        raise ValueError("variance checks need m >= 2")
    v = x.eps_var
    band = 3.0 * v * math.sqrt(2.0 / (x.m - 1)) if x.m else 0.0
    G4 = x.G_sq**2
    third = _cubic_term(x)
    low = max(0.5 * x.G_sq - x.F * x.U, 0.0)
    checks = [
        _check("variance_1", v, 2 * G4 + 2 * x.F**2 * x.U**2 - low**2, band),
        _check("variance_2", v, 2 * G4 + x.G_sq * third + 1.5 * third**2, band),
    ]
    if x.F == 0:
        checks.append(_check("variance_F0", v, 1.75 * G4, band))
    bad = [n for n, val in (("K_G^4", x.K_G4), ("sixth moment", x.u6_moment))
           if val is not None and not math.isfinite(val)]
    if bad:
        return [_inconclusive(c, f"{' and '.join(bad)} not finite") for c in checks]
    return checks


@dataclass(frozen=True)
class BoundReport:
    checks: list
    reynolds: float
    notes: list = field(default_factory=list)

    def by_name(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def verdicts(self) -> dict:
        return {c.name: c.verdict for c in self.checks}

    @property
    def any_fail(self) -> bool:
        """True when a bound (not a prerequisite) fails."""
        return any(c.verdict == FAIL and c.kind == "bound" for c in self.checks)

    def to_dict(self) -> dict:
        return {"checks": [c.to_dict() for c in self.checks], "reynolds": self.reynolds,
                "notes": list(self.notes)}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundReport":
        return cls([Check.from_dict(c) for c in d["checks"]], d["reynolds"], list(d.get("notes", [])))


def audit(x: AuditInputs, rel_tol: float = 0.05) -> BoundReport:
    """Run every check; variance checks become inconclusive when m < 2."""
    checks = [
        check_dominance(x),
        check_intermediate_upper(x),
        check_upper_bound(x),
        check_F_estimate(x),
        *check_two_sided(x),
        check_zeroth_law(x, rel_tol),
    ]
    if x.eps_var is None or (x.m is not None and x.m < 2):
        for name in ("variance_1", "variance_2") + (("variance_F0",) if x.F == 0 else ()):
            checks.append(Check(name, None, None, None, 0.0, INCONCLUSIVE, note="m < 2"))
    else:
        checks.extend(check_variance_bounds(x))
    notes = [
        "lower bounds rely on the truncated energy equality (balance residual) "
        "in place of the energy equality for martingale solutions",
        _balance_holds(x)[1],
    ]
    if x.stderr_U is not None:
        notes.append(f"U = {x.U!r} +- {x.stderr_U!r} (1 sigma); Re inherits this uncertainty")
    if x.K_G4 is not None:
        notes.append(f"K_G^4 = {x.K_G4!r}")
    if x.u6_moment is not None:
        notes.append(f"time-averaged ||u||^6 = {x.u6_moment!r}")
    return BoundReport(checks, reynolds(x.U, x.L, x.nu), notes)
