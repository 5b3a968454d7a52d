"""Command-line entry point: ``stochns simulate|audit|validate-linear|sweep``.

Exit codes: 0 when every bound passes (or is inconclusive by design), 1 when
a bound fails, 2 on configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import replace

from .bounds import AuditInputs, audit
from .config import ConfigError, RunConfig, load_config
from .ensemble import run_ensemble, linear_oracle
from .reports import SinkError, read_report, write_report, write_series

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def _print_report(report, out=None) -> None:
    out = out or sys.stdout
    for c in report.checks:
        margin = "n/a" if c.margin is None else f"{c.margin:+.6g}"
        extra = f"  ({c.note})" if c.note and c.verdict != "pass" else ""
        print(f"  {c.name:<20s} {c.verdict:<12s} margin {margin}  band {c.stat_band:.3g}{extra}", file=out)
    print(f"  Re = {report.reynolds:.6g}", file=out)


def _write_outputs(run, outdir: str) -> str:
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "report.json")
    write_report(run.document, path)
    if run.config.write_series:
        sdir = os.path.join(outdir, "series")
        os.makedirs(sdir, exist_ok=True)
        for r in run.results:
            write_series(r.series, os.path.join(sdir, f"trajectory_{r.index:04d}.csv"))
    return path


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    changes = {}
    if getattr(args, "seeds", None) is not None:
        changes["m"] = args.seeds
    if getattr(args, "master_seed", None) is not None:
        changes["master_seed"] = args.master_seed
    if getattr(args, "workers", None) is not None:
        changes["workers"] = args.workers
    if getattr(args, "output", None) is not None:
        changes["output_dir"] = args.output
    if changes:
        cfg = replace(cfg, **changes)
        if cfg.m < 1 or cfg.master_seed < 0 or cfg.workers < 1:
            raise ConfigError("--seeds and --workers must be >= 1, --master-seed >= 0")
    return cfg


def cmd_simulate(args) -> int:
    cfg = _load(args)
    run = run_ensemble(cfg, progress=_progress if args.verbose else None)
    path = _write_outputs(run, cfg.output_dir)
    e = run.ensemble
    se = "n/a" if e.stderr_eps is None else f"{e.stderr_eps:.4g}"
    print(f"m = {e.m} ({e.n_aborted} aborted), E<eps> = {e.eps_mean:.6g} +- {se}, U = {e.U:.6g}")
    _print_report(run.report)
    print(f"report: {path}")
    return EXIT_FAIL if run.report.any_fail else EXIT_OK


def _progress(done: int, total: int) -> None:
    print(f"  trajectory {done}/{total}", file=sys.stderr)


def cmd_audit(args) -> int:
    doc = read_report(args.report)
    inputs = AuditInputs.from_dict(doc["audit_inputs"])
    rel_tol = doc.get("config", {}).get("values", {}).get("rel_tol", 0.05)
    report = audit(inputs, rel_tol)
    stored = {c["name"]: c["verdict"] for c in doc.get("bounds", {}).get("checks", [])}
    _print_report(report)
    differ = [c.name for c in report.checks if stored.get(c.name) != c.verdict]
    if differ:
        print(f"verdicts differ from the stored report: {', '.join(differ)}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_FAIL if report.any_fail else EXIT_OK


def cmd_validate_linear(args) -> int:
    cfg = _load(args)
    res = linear_oracle(cfg)
    ok = True
    for m in res["modes"]:
        verdict = {True: "pass", False: "fail", None: "n/a (m < 2)"}[m["pass"]]
        ok &= m["pass"] is not False
        print(f"  k={tuple(m['k'])} pol {m['polarization']}: {m['mean']:.6g} +- {m['stderr']:.3g} "
              f"vs {m['target']:.6g}  {verdict}")
    ev = {True: "pass", False: "fail", None: "n/a (m < 2)"}[res["eps_pass"]]
    ok &= res["eps_pass"] is not False
    se = res["stderr_eps"]
    print(f"  E<eps> = {res['eps_mean']:.6g} +- {se if se is not None else math.nan:.3g} "
          f"vs G^2/2 = {res['target_eps']:.6g}  {ev}")
    return EXIT_OK if ok else EXIT_FAIL


def _parse_values(text: str) -> list[str]:
    vals = [v.strip() for v in text.split(",") if v.strip()]
    if not vals:
        raise ConfigError("--values must list at least one value")
    return vals


def cmd_sweep(args) -> int:
    base = _load(args)
    values = _parse_values(args.values)
    paired = _parse_values(args.paired_values) if args.paired_key else None
    if paired is not None and len(paired) != len(values):
        raise ConfigError("--paired-values must match --values in length")
    outroot = args.output or base.output_dir
    rows = []
    status = EXIT_OK
    for i, v in enumerate(values):
        cfg = base.with_override(args.key, v)
        if paired is not None:
            cfg = cfg.with_override(args.paired_key, paired[i])
        run = run_ensemble(cfg)
        _write_outputs(run, os.path.join(outroot, f"sweep_{i:02d}"))
        if run.report.any_fail:
            status = EXIT_FAIL
        e = run.ensemble
        rows.append((v, e.eps_mean, e.stderr_eps, e.U, run.report.by_name("zeroth_law").verdict))
    os.makedirs(outroot, exist_ok=True)
    table = os.path.join(outroot, "sweep.csv")
    with open(table, "w", encoding="utf-8") as fh:
        fh.write(f"{args.key},eps_mean,stderr_eps,U,zeroth_law\n")
        for v, em, se, U, zl in rows:
            fh.write(f"{v},{em!r},{se!r},{U!r},{zl}\n")
    print(f"{args.key:>12s}  {'E<eps>':>12s}  {'stderr':>10s}  {'U':>10s}  zeroth_law")
    for v, em, se, U, zl in rows:
        print(f"{v:>12s}  {em:12.6g}  {se if se is not None else math.nan:10.3g}  {U:10.4g}  {zl}")
    for i in range(len(rows)):
        for j in range(i + 1, len(rows)):
            a, b = rows[i], rows[j]
            if a[2] is None or b[2] is None:
                continue
            if abs(a[1] - b[1]) > 3 * math.hypot(a[2], b[2]):
                print(f"values {a[0]} and {b[0]} disagree beyond 3 combined sigma")
                status = EXIT_FAIL
    print(f"table: {table}")
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochns", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run an ensemble and audit the bounds")
    s.add_argument("--config", required=True)
    s.add_argument("--output")
    s.add_argument("--seeds", type=int, help="ensemble size (overrides ensemble.size)")
    s.add_argument("--master-seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("audit", help="re-audit an existing report")
    a.add_argument("--report", required=True)
    a.set_defaults(func=cmd_audit)

    v = sub.add_parser("validate-linear", help="Stokes-mode variance and dissipation oracles")
    v.add_argument("--config", required=True)
    v.add_argument("--seeds", type=int)
    v.add_argument("--master-seed", type=int)
    v.set_defaults(func=cmd_validate_linear)

    w = sub.add_parser("sweep", help="vary one key across values")
    w.add_argument("--config", required=True)
    w.add_argument("--key", required=True)
    w.add_argument("--values", required=True)
    w.add_argument("--paired-key", help="second key varied in lockstep, e.g. time.dt")
    w.add_argument("--paired-values")
    w.add_argument("--output")
    w.add_argument("--seeds", type=int)
    w.add_argument("--master-seed", type=int)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, SinkError, ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
