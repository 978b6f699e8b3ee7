"""Command-line entry point.

Every subcommand is a thin wrapper over the library.  Outputs go to
``--out-dir`` (JSON/CSV with 17 significant digits) together with a
``manifest.json`` listing each written file with its sha256.

Exit codes: 0 success, 1 assumption failure, 2 config error, 3 stage failure.
"""

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, _accel
from .coefficients import check_H4, check_monotonicity, compute_rho_b
from .config import load_spec, spec_to_dict
from .errors import AssumptionError, ConfigError, HamspecError, InputError
from .riccati import blow_up_time
from .spectrum import (
    ROOT_TOL, EigenvalueRecord, check_H5, eigenvalue_1d, first_eigenvalue_multidim, growth_order_fit,
)
from .stochastic import STORE_PATHS, simulate_eigenfunction

log = logging.getLogger("hamspec")

EXIT_OK, EXIT_ASSUMPTION, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2, 3
GROWTH_MIN = 5


class StageError(Exception):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


# -- deterministic output --------------------------------------------------------

def fmt(x):
    """17 significant digits; non-finite values become empty strings."""
    x = float(x)
    return "%.17g" % x if math.isfinite(x) else ""


def _json_text(obj, indent=0):
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_json_text(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.floating, np.integer)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_json_text(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _json_text(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, np.ndarray):
        return _json_text(obj.tolist(), indent)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj) if math.isfinite(obj) else "null"
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def dumps(obj):
    return _json_text(obj) + "\n"


class Outputs:
    """Collects written files for the manifest."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.files = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name):
        return name if os.path.isabs(name) else os.path.join(self.out_dir, name)

    def write(self, name, text):
        p = self.path(name)
        parent = os.path.dirname(p)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        self.files.append(p)
        return p


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(outs, args, t_start):
    entries = [{"path": os.path.relpath(p, outs.out_dir), "sha256": sha256_file(p), "bytes": os.path.getsize(p)}
               for p in outs.files]
    flags = {k: v for k, v in sorted(vars(args).items()) if k != "func" and not callable(v)}
    manifest = {
        "tool": "hamspec",
        "version": __version__,
        "subcommand": args.command,
        "flags": flags,
        "config": None,
        "seed": args.seed,
        "backend": _accel.backend(),
        "outputs": entries,
        "duration_s": time.perf_counter() - t_start,
    }
    if args.config:
        manifest["config"] = {"path": args.config, "sha256": sha256_file(args.config)}
    path = os.path.join(outs.out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(manifest))
    return path


# -- stages ------------------------------------------------------------------------

def run_checks(spec, requested=None):
    """Rows ``(name, ok, margin, detail)``; ``requested`` decides which rows gate the exit code."""
    rows = []
    mono = check_monotonicity(spec)
    rows.append(("monotonicity", mono.satisfied, mono.margin, f"worst t={fmt(mono.worst_t)}"))
    rows.append(("schur", mono.schur_ok, mono.schur_margin, f"worst t={fmt(mono.schur_worst_t)}"))
    if spec.n == 1:
        h4 = check_H4(spec)
        rows.append(("H4", h4.holds, float("nan"), h4.reason or "ok"))
        try:
            rho_b = compute_rho_b(spec)
            rows.append(("rho_b", True, rho_b, "lower bound of the spectrum"))
            h5 = check_H5(spec)
            rows.append(("H5", h5.holds, h5.rhs - h5.mid,
                         f"{fmt(h5.lhs)} <= {fmt(h5.mid)} < {fmt(h5.rhs)}"))
        except AssumptionError as exc:
            rows.append(("rho_b", False, float("nan"), str(exc)))
    if requested is None:
        requested = {"monotonicity", "H4"} if spec.n == 1 else {"monotonicity"}
    unknown = set(requested) - {r[0] for r in rows}
    if unknown:
        raise InputError(f"unknown or inapplicable checks: {sorted(unknown)}")
    ok = all(r[1] for r in rows if r[0] in requested)
    return rows, ok, sorted(requested)


def _check_table(rows, requested):
    lines = [f"{'check':<14}{'status':<8}{'margin':>26}  detail"]
    for name, ok, margin, detail in rows:
        status = ("PASS" if ok else "FAIL") if name in requested else ("info" if ok else "warn")
        lines.append(f"{name:<14}{status:<8}{fmt(margin) or '-':>26}  {detail}")
    return "\n".join(lines)


def _parse_grid(text):
    try:
        a, b, steps = text.split(":")
        a, b, steps = float(a), float(b), int(steps)
    except ValueError:
        raise InputError(f"--param-grid must look like a:b:steps, got {text!r}") from None
    if steps < 1:
        raise InputError("--param-grid needs at least one step")
    return np.linspace(a, b, steps) if steps > 1 else np.array([a])


def _default_pattern(spec):
    return "shift" if spec.n == 1 else "coupling"


def compute_spectrum(spec, count, tol, threads=1):
    if spec.n != 1:
        raise InputError("spectrum computes the one-dimensional sequence; use first-eig for n > 1")
    ms = list(range(1, count + 1))
    if threads > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda m: eigenvalue_1d(spec, m, tol=tol), ms))
    return [eigenvalue_1d(spec, m, tol=tol) for m in ms]


def eigenfunction_csv(paths, csv_paths):
    n = paths[0].x.shape[1] if paths else 1
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["path_id", "t", "state"] + [f"{v}{i + 1}" for v in ("x", "y", "z", "theta") for i in range(n)])
    for p in paths[:csv_paths]:
        for k, t in enumerate(p.times):
            row = [p.path_id, fmt(t), int(p.states[k])]
            for arr in (p.x, p.y, p.z, p.theta):
                row.extend(fmt(v) for v in arr[k])
            w.writerow(row)
    return buf.getvalue()


def growth_report(records):
    fit = growth_order_fit(records)
    return {
        "model": "rho_m = a + b (m - c)^s",
        "slope": fit.slope, "r2": fit.r2, "a": fit.a, "b": fit.b, "c": fit.c,
        "slope_unshifted": fit.slope_unshifted, "r2_unshifted": fit.r2_unshifted,
        "m": [int(r.m) if isinstance(r, EigenvalueRecord) else int(r[0]) for r in records],
    }


def _load_records(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, f"{path}: line {exc.lineno} column {exc.colno}") from None
    except OSError as exc:
        raise ConfigError(str(exc), path) from None
    if isinstance(data, dict):
        data = [data]
    if not isinstance(data, list) or not data:
        raise ConfigError("expected a record or a non-empty array of records", path)
    return [EigenvalueRecord.from_dict(d) for d in data]


def _stage(name, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except (AssumptionError, ConfigError):
        raise
    except (HamspecError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


# -- subcommands -----------------------------------------------------------------------

def _need_spec(args):
    if not args.config:
        raise ConfigError("--config is required for this subcommand", "--config")
    try:
        return load_spec(args.config)
    except OSError as exc:
        raise ConfigError(str(exc), args.config) from None


def cmd_check(args, outs):
    spec = _need_spec(args)
    requested = set(args.checks.split(",")) if args.checks else None
    rows, ok, req = run_checks(spec, requested)
    print(_check_table(rows, req))
    if args.echo:
        print(dumps(spec_to_dict(spec)), end="")
    if args.out:
        outs.write(args.out, dumps({"ok": ok, "requested": req, "checks": [
            {"name": r[0], "ok": r[1], "margin": r[2], "detail": r[3]} for r in rows]}))
    return EXIT_OK if ok else EXIT_ASSUMPTION


def cmd_blowup(args, outs):
    spec = _need_spec(args)
    grid = _parse_grid(args.param_grid)
    pattern = args.pattern or _default_pattern(spec)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["param", "blow_up_time", "bracket_lo", "bracket_hi", "norm_at_stop"])
    for p in grid:
        r = _stage("blowup", blow_up_time, spec, float(p), args.family, pattern=pattern)
        lo, hi = r.bracket
        w.writerow([fmt(p), fmt(r.value), fmt(lo), fmt(hi), fmt(r.norm_at_stop)])
    outs.write(args.out, buf.getvalue())
    return EXIT_OK


def cmd_spectrum(args, outs):
    spec = _need_spec(args)
    if spec.n != 1:
        raise InputError("spectrum computes the one-dimensional sequence; use first-eig for n > 1")
    recs = _stage("spectrum", compute_spectrum, spec, args.count, args.tol, args.threads)
    outs.write(args.out, dumps([r.to_dict() for r in recs]))
    for r in recs:
        print(f"m={r.m} rho={fmt(r.rho)}")
    return EXIT_OK


def cmd_first_eig(args, outs):
    spec = _need_spec(args)
    bracket = None
    if args.bracket:
        try:
            bracket = tuple(float(v) for v in args.bracket.split(":"))
        except ValueError:
            raise InputError(f"--bracket must look like lo:hi, got {args.bracket!r}") from None
    rec = _stage("first-eig", first_eigenvalue_multidim, spec, rho_bracket=bracket, tol=args.tol,
                 split=args.split)
    outs.write(args.out, dumps([rec.to_dict()]))
    print(f"m=1 rho={fmt(rec.rho)} kernel_dim={rec.kernel_basis.shape[1]}")
    return EXIT_OK


def _simulate(spec, rec, args, outs, csv_name, summary_name):
    store = max(args.csv_paths, 0)
    paths, report = _stage("eigenfunction", simulate_eigenfunction, rec, spec, args.paths, args.seed,
                           args.dt, initial_state=args.initial_state, store_paths=store)
    outs.write(csv_name, eigenfunction_csv(paths, store))
    summary = {"m": int(rec.m), "rho": rec.rho, "paths": args.paths, "seed": args.seed,
               "dt": args.dt, "residuals": report.to_dict()}
    outs.write(summary_name, dumps(summary))
    return report


def cmd_eigenfunction(args, outs):
    spec = _need_spec(args)
    recs = _load_records(args.record)
    sel = [r for r in recs if r.m == args.index] if args.index else recs[:1]
    if not sel:
        raise ConfigError(f"no record with m={args.index}", args.record)
    summary = args.summary or os.path.splitext(args.out)[0] + ".summary.json"
    rep = _simulate(spec, sel[0], args, outs, args.out, summary)
    print(dumps(rep.to_dict()), end="")
    return EXIT_OK


def cmd_growth(args, outs):
    recs = _load_records(args.input)
    if len(recs) < GROWTH_MIN:
        raise InputError(f"growth fit needs at least {GROWTH_MIN} eigenvalues, got {len(recs)}")
    rep = _stage("growth", growth_report, recs)
    text = dumps(rep)
    if args.out:
        outs.write(args.out, text)
    print(text, end="")
    return EXIT_OK


def cmd_pipeline(args, outs):
    spec = _need_spec(args)
    outs.write("config.normalized.json", dumps(spec_to_dict(spec)))
    rows, ok, req = run_checks(spec)
    outs.write("check.json", dumps({"ok": ok, "requested": req, "checks": [
        {"name": r[0], "ok": r[1], "margin": r[2], "detail": r[3]} for r in rows]}))
    print(_check_table(rows, req))
    if not ok:
        return EXIT_ASSUMPTION
    if args.count == 0:
        return EXIT_OK
    if spec.n == 1:
        recs = _stage("spectrum", compute_spectrum, spec, args.count, args.tol, args.threads)
    else:
        if args.count > 1:
            log.warning("only the first eigenvalue is available for n > 1")
        recs = [_stage("first-eig", first_eigenvalue_multidim, spec, tol=args.tol)]
    outs.write("spectrum.json", dumps([r.to_dict() for r in recs]))
    for r in recs:
        _simulate(spec, r, args, outs, f"eigenfunction_m{r.m}.csv", f"eigenfunction_m{r.m}.summary.json")
    if len(recs) >= GROWTH_MIN:
        outs.write("growth.json", dumps(_stage("growth", growth_report, recs)))
    else:
        log.info("growth fit skipped: needs at least %d eigenvalues", GROWTH_MIN)
    return EXIT_OK


# -- argument parsing --------------------------------------------------------------------

EXAMPLES = {
    "check": "hamspec check --config spec.json --echo",
    "blowup": "hamspec blowup --config spec.json --family primal --param-grid 1:3:50 --out blowup.csv",
    "spectrum": "hamspec spectrum --config spec.json --count 5 --tol 1e-8 --out spectrum.json",
    "first-eig": "hamspec first-eig --config spec2d.json --out first.json",
    "eigenfunction": ("hamspec eigenfunction --config spec.json --record spectrum.json --index 1 "
                      "--paths 1000 --dt 2.4e-4 --seed 7 --out ef.csv"),
    "growth": "hamspec growth --in spectrum.json",
    "pipeline": "hamspec --out-dir run1 --seed 7 pipeline --config spec.json --count 5 --paths 200",
}


def _globals(suppress):
    p = argparse.ArgumentParser(add_help=False)
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="JSON spec file")
    p.add_argument("--out-dir", default=d("."), help="directory for outputs and manifest.json")
    p.add_argument("--seed", type=int, default=d(0), help="root seed for Monte Carlo stages")
    p.add_argument("--threads", type=int, default=d(1), help="worker threads for independent eigenvalues")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return p


def _sim_flags(p):
    p.add_argument("--paths", type=int, default=1000)
    p.add_argument("--dt", type=float, default=None, help="grid step (default T/4096)")
    p.add_argument("--csv-paths", type=int, default=STORE_PATHS, help="paths written to the CSV")
    p.add_argument("--initial-state", type=int, default=None, help="chain state at time 0 (1-based)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hamspec", parents=[_globals(False)],
        description="Eigenvalues and eigenfunctions of linear stochastic Hamiltonian systems.",
        epilog="exit codes: 0 ok, 1 assumption failure, 2 config error, 3 stage failure",
    )
    parser.add_argument("--version", action="version", version=f"hamspec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _globals(True)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_, description=help_,
                           epilog=f"example:\n  {EXAMPLES[name]}",
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(func=func)
        return p

    p = add("check", cmd_check, "check the structural assumptions of a spec")
    p.add_argument("--checks", default=None,
                   help="comma list gating the exit code (default monotonicity,H4 for n=1)")
    p.add_argument("--echo", action="store_true", help="print the normalized config")
    p.add_argument("--out", default=None, help="JSON report")

    p = add("blowup", cmd_blowup, "blow-up times over a parameter grid")
    p.add_argument("--family", choices=("primal", "dual"), default="primal")
    p.add_argument("--param-grid", required=True, help="a:b:steps")
    p.add_argument("--pattern", choices=("coupling", "shift"), default=None,
                   help="perturbation pattern (default shift for n=1, coupling otherwise)")
    p.add_argument("--out", default="blowup.csv")

    p = add("spectrum", cmd_spectrum, "first M eigenvalues of a one-dimensional spec")
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--tol", type=float, default=ROOT_TOL)
    p.add_argument("--out", default="spectrum.json")

    p = add("first-eig", cmd_first_eig, "first eigenvalue of a multi-dimensional spec")
    p.add_argument("--tol", type=float, default=ROOT_TOL)
    p.add_argument("--bracket", default=None, help="lo:hi bracket in rho")
    p.add_argument("--split", type=float, default=None, help="primal/dual splice time")
    p.add_argument("--out", default="first_eig.json")

    p = add("eigenfunction", cmd_eigenfunction, "Monte Carlo eigenfunction paths for a record")
    p.add_argument("--record", required=True, help="JSON written by spectrum or first-eig")
    p.add_argument("--index", type=int, default=None, help="eigenvalue index m (default: first record)")
    _sim_flags(p)
    p.add_argument("--out", default="eigenfunction.csv")
    p.add_argument("--summary", default=None, help="residual report JSON (default next to --out)")

    p = add("growth", cmd_growth, "fit the growth exponent of an eigenvalue sequence")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", default=None)

    p = add("pipeline", cmd_pipeline, "check, spectrum, eigenfunctions and growth fit in one run")
    p.add_argument("--count", type=int, default=5, help="number of eigenvalues (0: checks only)")
    p.add_argument("--tol", type=float, default=ROOT_TOL)
    _sim_flags(p)
    p.set_defaults(paths=200)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.threads < 1:
        parser.error("--threads must be positive")
    t0 = time.perf_counter()
    try:
        outs = Outputs(args.out_dir)
        code = args.func(args, outs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssumptionError as exc:
        print(f"assumption failure: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except StageError as exc:
        print(f"{exc.stage}: {exc.cause}", file=sys.stderr)
        return EXIT_STAGE
    if outs.files:
        write_manifest(outs, args, t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
