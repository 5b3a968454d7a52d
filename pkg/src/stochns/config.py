"""Line-oriented run configuration: ``section.key = value`` with ``#`` comments.

Repeated keys build lists::

    grid.n = 16
    grid.ell = 2*pi
    physics.nu = 0.5
    time.dt = 2e-3
    time.t_end = 200
    noise.mode = (1,0,0) 0 1.5      # k, polarization, amplitude
    noise.normalize_G2 = 2          # rescale all amplitudes to this G^2
    force.mode = (1,0,0) 0 -0.025j 0  # k, then the complex vector at k
    init.shell = 1 0.5              # random initial field: shell, mean square
    ensemble.size = 16
    ensemble.master_seed = 2024

Numeric values accept arithmetic on literals and ``pi`` (``2*pi``, ``1/3``).
"""

from __future__ import annotations

import ast
import math
import operator
import re
from dataclasses import dataclass, fields, replace
from typing import Any, Callable

from .forcing import (
    ConstantSchedule,
    DeterministicForce,
    ExpSchedule,
    ForcedMode,
    NoiseSpec,
    StepSchedule,
    compute_G,
    step_count,
)
from .integrator import NOISE_FORMS, SolverParams
from .spectral_field import GridSpec

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "KEYS"]


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(key)
        super().__init__(f"{': '.join(where)}: {message}" if where else message)


# value parsers ----------------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}


def _arith(text: str, allow_complex: bool = False):
    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and type(node.value) in (int, float, complex):
            if isinstance(node.value, complex) and not allow_complex:
                raise ValueError("complex value not allowed")
            return node.value
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        raise ValueError(f"not a number: {text!r}")

    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError:
        raise ValueError(f"not a number: {text!r}") from None
    return ev(tree)


def _float(text: str) -> float:
    v = _arith(text)
    v = float(v)
    if not math.isfinite(v):
        raise ValueError(f"not a finite number: {text!r}")
    return v


def _int(text: str) -> int:
    t = text.strip()
    if not re.fullmatch(r"[+-]?\d+", t):
        raise ValueError(f"expected an integer, got {t!r}")
    return int(t)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected true/false, got {text.strip()!r}")


def _str(text: str) -> str:
    t = text.strip()
    if len(t) >= 2 and t[0] == t[-1] and t[0] in "'\"":
        t = t[1:-1]
    return t


_TRIPLE = re.compile(r"^\(\s*([+-]?\d+)\s*,\s*([+-]?\d+)\s*,\s*([+-]?\d+)\s*\)\s*(.*)$")


def _triple(text: str) -> tuple[tuple[int, int, int], list[str]]:
    m = _TRIPLE.match(text.strip())
    if not m:
        raise ValueError(f"expected a wavevector like (1,0,0), got {text.strip()!r}")
    k = (int(m.group(1)), int(m.group(2)), int(m.group(3)))
    return k, m.group(4).split()


def _noise_mode(text: str):
    k, rest = _triple(text)
    if len(rest) != 2:
        raise ValueError("expected '(kx,ky,kz) polarization amplitude'")
    return (k, _int(rest[0]), _float(rest[1]))


def _force_mode(text: str):
    k, rest = _triple(text)
    if len(rest) != 3:
        raise ValueError("expected '(kx,ky,kz) cx cy cz'")
    vec = []
    for r in rest:
        v = complex(_arith(r, allow_complex=True))
        if not (math.isfinite(v.real) and math.isfinite(v.imag)):
            raise ValueError(f"not finite: {r!r}")
        vec.append(v)
    return (k, tuple(vec))


def _shell(text: str):
    parts = text.split()
    if len(parts) != 2:
        raise ValueError("expected 'shell mean_square'")
    return (_int(parts[0]), _float(parts[1]))


def _schedule(text: str) -> str:
    _make_schedule(text)
    return " ".join(text.split())


def _make_schedule(text: str):
    parts = text.split()
    if not parts:
        raise ValueError("empty schedule")
    kind, args = parts[0].lower(), [_float(a) for a in parts[1:]]
    if kind == "constant" and len(args) <= 1:
        return ConstantSchedule(*args)
    if kind == "step" and 1 <= len(args) <= 3:
        return StepSchedule(*args)
    if kind == "exp" and len(args) == 1:
        return ExpSchedule(args[0])
    raise ValueError("schedule must be 'constant [value]', 'step t_off [before after]' or 'exp rate'")


@dataclass(frozen=True)
class _Key:
    attr: str
    parse: Callable[[str], Any]
    repeated: bool = False


KEYS: dict[str, _Key] = {
    "grid.n": _Key("n", _int),
    "grid.ell": _Key("ell", _float),
    "physics.nu": _Key("nu", _float),
    "time.dt": _Key("dt", _float),
    "time.t_end": _Key("t_end", _float),
    "time.burn_in": _Key("burn_in", _float),
    "noise.mode": _Key("noise_modes", _noise_mode, True),
    "noise.normalize_G2": _Key("normalize_G2", _float),
    "noise.schedule": _Key("schedule", _schedule),
    "force.mode": _Key("force_modes", _force_mode, True),
    "init.shell": _Key("init_shells", _shell, True),
    "ensemble.size": _Key("m", _int),
    "ensemble.master_seed": _Key("master_seed", _int),
    "ensemble.workers": _Key("workers", _int),
    "scheme.linear_only": _Key("linear_only", _bool),
    "scheme.cfl_safety": _Key("cfl_safety", _float),
    "scheme.noise_form": _Key("noise_form", _str),
    "scheme.ke_guard": _Key("ke_guard", _float),
    "output.directory": _Key("output_dir", _str),
    "output.series_stride": _Key("series_stride", _int),
    "output.series": _Key("write_series", _bool),
    "audit.rel_tol": _Key("rel_tol", _float),
    "audit.balance_tol": _Key("balance_tol", _float),
    "diagnostics.stationarity_tol": _Key("stationarity_tol", _float),
}
_ATTR_TO_KEY = {v.attr: k for k, v in KEYS.items()}
_NON_CONTENT = ("output_dir", "workers")
_REQUIRED = ("grid.n", "physics.nu", "time.dt", "time.t_end")


@dataclass(frozen=True)
class RunConfig:
    n: int
    nu: float
    dt: float
    t_end: float
    ell: float = 2.0 * math.pi
    burn_in: float | None = None
    noise_modes: tuple = ()
    normalize_G2: float | None = None
    schedule: str = "constant"
    force_modes: tuple = ()
    init_shells: tuple = ()
    m: int = 1
    master_seed: int = 0
    workers: int = 1
    linear_only: bool = False
    cfl_safety: float = 0.5
    noise_form: str = "ou_exact"
    ke_guard: float = 10.0
    output_dir: str = "out"
    series_stride: int = 1
    write_series: bool = True
    rel_tol: float = 0.05
    balance_tol: float = 0.02
    stationarity_tol: float = 0.1

    def __post_init__(self):
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", 0.2 * self.t_end)
        for name in ("noise_modes", "force_modes", "init_shells"):
            object.__setattr__(self, name, tuple(tuple(x) for x in getattr(self, name)))

    # derived objects ----------------------------------------------------

    def grid(self) -> GridSpec:
        return GridSpec(self.n, self.ell)

    def params(self) -> SolverParams:
        return SolverParams(
            nu=self.nu, dt=self.dt, t_end=self.t_end, burn_in=self.burn_in,
            linear_only=self.linear_only, cfl_safety=self.cfl_safety,
            noise_form=self.noise_form, ke_guard=self.ke_guard,
        )

    def noise(self) -> NoiseSpec:
        spec = NoiseSpec(tuple(ForcedMode(k, p, a) for k, p, a in self.noise_modes),
                         _make_schedule(self.schedule))
        if self.normalize_G2 is not None and spec.modes:
            G2 = compute_G(spec, self.grid(), self.t_end, self.dt) ** 2
            if G2 > 0:
                spec = spec.scaled(math.sqrt(self.normalize_G2 / G2))
        return spec

    def force(self) -> DeterministicForce:
        if not self.force_modes:
            return DeterministicForce.zero(self.grid())
        return DeterministicForce.from_modes(self.grid(), self.force_modes)

    def spectrum(self) -> dict[int, float]:
        return {s: a for s, a in self.init_shells}

    # text form ----------------------------------------------------------

    def to_text(self, content_only: bool = False) -> str:
        """Canonical config text; ``parse_config(c.to_text()) == c``.

        ``content_only`` drops the keys that cannot change any number
        (output directory, worker count).
        """
        lines = []
        for f in fields(self):
            if content_only and f.name in _NON_CONTENT:
                continue
            key = _ATTR_TO_KEY[f.name]
            v = getattr(self, f.name)
            if v is None:
                continue
            if KEYS[key].repeated:
                lines.extend(f"{key} = {_render_item(f.name, item)}" for item in v)
            else:
                lines.append(f"{key} = {_render(v)}")
        return "\n".join(lines) + "\n"

    def to_dict(self, content_only: bool = False) -> dict:
        d = {}
        for f in fields(self):
            if content_only and f.name in _NON_CONTENT:
                continue
            v = getattr(self, f.name)
            if f.name == "force_modes":
                v = [[list(k), [[c.real, c.imag] for c in vec]] for k, vec in v]
            elif isinstance(v, tuple):
                v = [[list(x) if isinstance(x, tuple) else x for x in item] for item in v]
            d[f.name] = v
        return d

    def with_override(self, key: str, value: str) -> "RunConfig":
        """Copy with one ``section.key`` replaced by a textual value, revalidated."""
        if key not in KEYS:
            raise ConfigError("unknown key", key)
        spec = KEYS[key]
        if spec.repeated:
            raise ConfigError("cannot override a repeated key", key)
        try:
            v = spec.parse(value)
        except ValueError as exc:
            raise ConfigError(str(exc), key) from None
        changes = {spec.attr: v}
        if key == "time.t_end":
            # keep the burn-in fraction when only the horizon changes
            changes["burn_in"] = self.burn_in / self.t_end * v
        cfg = replace(self, **changes)
        _validate(cfg, {})
        return cfg


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _complex_text(c: complex) -> str:
    if c.imag == 0:
        return repr(c.real)
    if c.real == 0:
        return f"{c.imag!r}j"
    return f"({c.real!r}{'+' if c.imag >= 0 else '-'}{abs(c.imag)!r}j)"


def _render_item(attr: str, item) -> str:
    if attr == "noise_modes":
        k, p, a = item
        return f"({k[0]},{k[1]},{k[2]}) {p} {a!r}"
    if attr == "force_modes":
        k, vec = item
        return f"({k[0]},{k[1]},{k[2]}) " + " ".join(_complex_text(complex(c)) for c in vec)
    s, a = item
    return f"{s} {a!r}"


def _validate(cfg: RunConfig, lines: dict[str, int]) -> None:
    def err(key, msg):
        raise ConfigError(msg, key, lines.get(key))

    try:
        grid = cfg.grid()
    except (TypeError, ValueError) as exc:
        key = "grid.n" if "n must" in str(exc) else "grid.ell"
        err(key, str(exc))
    try:
        cfg.params()
    except ValueError as exc:
        msg = str(exc)
        key = next((k for k in ("physics.nu", "time.dt", "time.burn_in", "scheme.cfl_safety",
                                "scheme.noise_form", "scheme.ke_guard")
                    if msg.startswith(KEYS[k].attr)), "time.t_end")
        err(key, msg)
    if cfg.noise_form not in NOISE_FORMS:
        err("scheme.noise_form", f"must be one of {NOISE_FORMS}")
    if not cfg.t_end > 0:
        err("time.t_end", "t_end must be > 0")
    if not cfg.burn_in < cfg.t_end:
        err("time.burn_in", "burn_in must be < t_end")
    try:
        step_count(cfg.t_end, cfg.dt)
    except ValueError as exc:
        err("time.t_end", str(exc))
    if not cfg.ke_guard > 0:
        err("scheme.ke_guard", "ke_guard must be > 0")
    if cfg.m < 1:
        err("ensemble.size", "ensemble size must be >= 1")
    if cfg.workers < 1:
        err("ensemble.workers", "workers must be >= 1")
    if cfg.series_stride < 1:
        err("output.series_stride", "series_stride must be >= 1")
    if cfg.master_seed < 0:
        err("ensemble.master_seed", "master_seed must be >= 0")
    if cfg.normalize_G2 is not None and not cfg.normalize_G2 >= 0:
        err("noise.normalize_G2", "normalize_G2 must be >= 0")
    for name in ("rel_tol", "balance_tol", "stationarity_tol"):
        if not getattr(cfg, name) >= 0:
            err(_ATTR_TO_KEY[name], f"{name} must be >= 0")
    seen = set()
    for k, p, a in cfg.noise_modes:
        try:
            mode = ForcedMode(k, p, a)
        except ValueError as exc:
            err("noise.mode", str(exc))
        if not grid.resolves(mode.k):
            err("noise.mode", f"mode unresolvable: {mode.k} on n={grid.n}")
        if (mode.k, p) in seen:
            err("noise.mode", f"duplicate mode {mode.k} polarization {p}")
        seen.add((mode.k, p))
    try:
        cfg.noise()
    except (TypeError, ValueError) as exc:
        err("noise.schedule", str(exc))
    try:
        cfg.force()
    except ValueError as exc:
        err("force.mode", str(exc))
    for s, a in cfg.init_shells:
        if s < 1 or not a >= 0:
            err("init.shell", "shell must be >= 1 and mean square >= 0")


def parse_config(text: str) -> RunConfig:
    """Parse and validate configuration text.

    Errors name the key and the line (the last occurrence for list keys).
    """
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError("expected 'section.key = value'", None, ln)
        key, _, val = body.partition("=")
        key = key.strip()
        if key not in KEYS:
            raise ConfigError("unknown key", key, ln)
        spec = KEYS[key]
        try:
            parsed = spec.parse(val)
        except ValueError as exc:
            raise ConfigError(str(exc), key, ln) from None
        if spec.repeated:
            values.setdefault(spec.attr, []).append(parsed)
            if key == "noise.mode":
                k, p, _ = parsed
                if sum(1 for q in values[spec.attr] if q[0] == k and q[1] == p) > 1:
                    raise ConfigError(f"duplicate mode {k} polarization {p}", key, ln)
        else:
            if spec.attr in values:
                raise ConfigError("key given twice", key, ln)
            values[spec.attr] = parsed
        lines[key] = ln
    for key in _REQUIRED:
        if KEYS[key].attr not in values:
            raise ConfigError("required key missing", key)
    cfg = RunConfig(**values)
    _validate(cfg, lines)
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
