"""Time-series and report serialization."""

from __future__ import annotations

import io
import json
import os
from typing import Any

import numpy as np

from .statistics import _ledger, balance_partial_series

__all__ = [
    "SERIES_HEADER",
    "SinkError",
    "series_rows",
    "write_series",
    "write_report",
    "read_report",
    "report_body",
    "dumps_report",
]

SERIES_HEADER = ("t", "kinetic_energy", "epsilon", "noise_work_increment", "balance_partial")


class SinkError(OSError):
    pass


def series_rows(led: dict, stride: int = 1) -> np.ndarray:
    """Rows (t_j, ||u_j||^2, eps_j, noise work over (t_{j-1}, t_j], R(t_j)).

    One row per ``stride`` steps starting at t = 0 and including t_N only when
    N is a multiple of ``stride``.  A record with no steps yields no rows.  For
    an aborted run the rows stop at the last finite state.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n = led["steps"]
    if n == 0:
        return np.zeros((0, len(SERIES_HEADER)))
    usq = np.append(led["usq"][:n], led["usq_final"])
    grad = np.append(led["grad_sq"][:n], led["grad_sq_final"])
    nw = np.concatenate(([0.0], led["noise_work"][:n]))
    t = np.arange(n + 1) * led["dt"]
    part = balance_partial_series(led)
    rows = np.column_stack([t, usq, led["nu"] * grad / led["volume"], nw, part])
    last = n if np.isfinite(usq[-1]) else n - 1
    return rows[: last + 1 : stride]


def _open(sink, mode: str):
    if hasattr(sink, "write") or hasattr(sink, "read"):
        return sink, False
    try:
        return open(sink, mode, encoding="utf-8", newline=""), True
    except OSError as exc:
        raise SinkError(f"cannot open {os.fspath(sink)!r}: {exc.strerror or exc}") from exc


def write_series(trajectory, sink, stride: int = 1) -> int:
    """Write the energy series of a record (or precomputed rows) as CSV.

    Reals use 17 significant digits in scientific notation, which round-trip
    exactly.  Returns the number of data rows.
    """
    if isinstance(trajectory, np.ndarray):
        rows = trajectory
    else:
        rows = series_rows(_ledger(trajectory), stride)
    buf = io.StringIO()
    buf.write(",".join(SERIES_HEADER) + "\n")
    for r in rows:
        buf.write(",".join(format(float(v), ".16e") for v in r) + "\n")
    fh, close = _open(sink, "w")
    try:
        fh.write(buf.getvalue())
    except OSError as exc:
        raise SinkError(f"cannot write {getattr(fh, 'name', sink)!r}: {exc}") from exc
    finally:
        if close:
            fh.close()
    return len(rows)


def _clean(obj: Any):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def dumps_report(doc: dict) -> str:
    """JSON text; Python's float repr keeps every real round-trip exact."""
    return json.dumps(_clean(doc), indent=1) + "\n"


def report_body(doc: dict) -> str:
    """The report text without the wall-time field, for determinism checks."""
    d = json.loads(dumps_report(doc))
    d.get("provenance", {}).pop("wall_time", None)
    return json.dumps(d, indent=1)


def write_report(doc: dict, sink) -> None:
    text = dumps_report(doc)
    fh, close = _open(sink, "w")
    try:
        fh.write(text)
    except OSError as exc:
        raise SinkError(f"cannot write {getattr(fh, 'name', sink)!r}: {exc}") from exc
    finally:
        if close:
            fh.close()


def read_report(source) -> dict:
    fh, close = _open(source, "r")
    try:
        return json.load(fh)
    finally:
        if close:
            fh.close()
