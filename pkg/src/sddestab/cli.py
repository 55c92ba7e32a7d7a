"""Command-line front end.

Every command writes its artifacts atomically into ``--out`` together with
a ``<command>.manifest.json`` recording the resolved settings and SHA-256
digests of the artifacts.  Usage errors exit with status 2; failures
inside a computation exit with status 1 and a JSON diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
import time

import numpy as np

from . import __version__, charfn, corpus, dde, laplace, mc, moments, spectral, verdict
from .model import ConfigError, load_system

COMMANDS = ("analyze", "roots", "charfn", "beta0", "moments", "simulate", "laplace-check", "verify")


class UsageError(Exception):
    pass


def jsonable(obj):
    """Recursively convert to JSON-safe values; non-finite floats become ``None``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": jsonable(float(obj.real)), "im": jsonable(float(obj.imag))}
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if hasattr(obj, "to_dict"):
        return jsonable(obj.to_dict())
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), indent=2, allow_nan=False) + "\n"


def write_atomic(path, text: str):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON system description")
    common.add_argument("--out", metavar="DIR", default="sddestab-out", help="output directory")
    common.add_argument("--threads", type=int, default=1, metavar="N", help="worker threads")
    common.add_argument("--seed", type=int, metavar="U64", help="random seed")
    common.add_argument("--tmax", type=float, help="time horizon")
    common.add_argument("--dt", type=float, help="time step (must divide the delay)")
    common.add_argument("--paths", type=int, help="Monte Carlo paths")

    p = argparse.ArgumentParser(prog="sddestab", description="Second-moment stability of linear SDDEs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    sub.add_parser("analyze", parents=[common], help="boundedness verdict as JSON")
    sub.add_parser("roots", parents=[common], help="rightmost zeros of h and the deterministic-mode check")
    c = sub.add_parser("charfn", parents=[common], help="sample H along vertical lines")
    c.add_argument("--re", type=float, nargs="+", help="real parts of the lines (default: 0)")
    c.add_argument("--omega", type=float, default=20.0, help="half-height of the lines")
    c.add_argument("--samples", type=int, default=201)
    sub.add_parser("beta0", parents=[common], help="alpha_bar0 and the rightmost zero of H")
    sub.add_parser("moments", parents=[common], help="M(t), N(t) trajectories as CSV")
    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo ensemble moments as CSV")
    s.add_argument("--checkpoints", type=int, default=10, help="number of evenly spaced checkpoints")
    lc = sub.add_parser("laplace-check", parents=[common], help="frequency vs time product transforms")
    lc.add_argument("--samples", type=int, default=20)
    sub.add_parser("verify", parents=[common], help="run the built-in verification corpus")
    return p


def _resolve(args):
    if args.config is None:
        raise UsageError(f"{args.command} requires --config PATH")
    try:
        system, phi, settings = load_system(args.config)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from exc
    except ConfigError as exc:
        raise UsageError(f"invalid config: {exc}") from exc
    try:
        settings = settings.replace(seed=args.seed, t_max=args.tmax, dt=args.dt, paths=args.paths)
        if args.dt is not None:
            dde.steps_per_delay(settings.dt)
    except (ConfigError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    if args.threads < 1:
        raise UsageError("--threads must be positive")
    return system, phi, settings


def _cmd_analyze(args, system, phi, settings):
    v = verdict.decide(system, phi, settings, seed=0)
    text = dumps(v)
    return {"verdict.json": text}, text


def _cmd_roots(args, system, phi, settings):
    summ = spectral.spectral_summary(system, root_tol=settings.root_tol, full=True)
    rep = spectral.check_assumption_h(system, summ)
    text = dumps({"spectral": summ, "assumption_h": rep})
    return {"roots.json": text}, text


def _cmd_charfn(args, system, phi, settings):
    a0 = spectral.spectral_summary(system, root_tol=settings.root_tol).alpha0
    if a0 >= 0:
        raise ValueError(f"alpha0 = {a0:.6g} >= 0: H is not defined near the imaginary axis")
    lines = args.re if args.re else [0.0]
    left = min(lines)
    if left <= 2 * a0:
        raise ValueError(f"Re l = {left} must exceed 2*alpha0 = {2 * a0:.6g}")
    prov = charfn.default_provider(system, a0, left, dt=min(settings.dt, 1 / 128), quad_tol=settings.quad_tol)
    return {"charfn.csv": charfn.charfn_csv(system, prov, lines, args.omega, args.samples)}, None


def _cmd_beta0(args, system, phi, settings):
    ms = charfn.compute_beta0(system, settings)
    text = dumps(ms)
    return {"beta0.json": text}, text


def _cmd_moments(args, system, phi, settings):
    grid = dde.fundamental_matrix(system, settings.dt, settings.t_max)
    tr = moments.moment_volterra(system, phi, grid, settings.t_max)
    return {"moments.csv": tr.to_csv()}, None


def _cmd_simulate(args, system, phi, settings):
    if args.checkpoints < 1:
        raise UsageError("--checkpoints must be positive")
    steps = int(round(settings.t_max / settings.dt))
    idx = np.unique(np.rint(np.linspace(0, steps, args.checkpoints + 1)[1:]).astype(int))
    cps = tuple(float(i * settings.dt) for i in idx)
    try:
        spec = mc.EnsembleSpec(settings.paths, settings.dt, steps * settings.dt, settings.seed, cps)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ens = mc.simulate_ensemble(system, phi, spec, threads=args.threads)
    return {"simulate.csv": ens.to_csv()}, None


def _cmd_laplace_check(args, system, phi, settings):
    a0 = spectral.spectral_summary(system, root_tol=settings.root_tol).alpha0
    if a0 >= 0:
        raise ValueError(f"alpha0 = {a0:.6g} >= 0: product transforms need alpha0 < 0")
    rng = np.random.default_rng(settings.seed)
    lams = rng.uniform(-0.5 * abs(a0), 2.0, args.samples) + 1j * rng.uniform(-10.0, 10.0, args.samples)
    tp = laplace.TimeProvider(system, None, alpha0=a0, dt=min(settings.dt, 1 / 128), t_max=80.0,
                              quad_tol=settings.quad_tol, strict=False)
    K2, L2, e2 = tp.evaluate(lams)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["re", "im", "freq_re", "freq_im", "time_re", "time_im", "max_abs_diff", "tolerance", "pass"])
    failed = 0
    for i, lam in enumerate(lams):
        K1, L1, eK, eL = laplace.product_tensors_freq(system, lam, a0, settings.quad_tol)
        diff = max(float(np.max(np.abs(K1 - K2[i]))), float(np.max(np.abs(L1 - L2[i]))))
        tol = max(1e-6, 3 * (float(max(eK.max(), eL.max())) + float(e2[i])))
        f, t = K1[0, 0, 0, 0], K2[i, 0, 0, 0, 0]
        failed += diff > tol
        w.writerow([repr(float(v)) for v in (lam.real, lam.imag, f.real, f.imag, t.real, t.imag, diff, tol)]
                   + [str(diff <= tol).lower()])
    if failed:
        raise ValueError(f"{failed} of {len(lams)} points exceed the dual-path tolerance")
    return {"laplace_check.csv": buf.getvalue()}, None


def _cmd_verify(args):
    rows = corpus.run_checks(stream=sys.stdout)
    failed = sum(not ok for _, ok, _ in rows)
    print(f"{len(rows) - failed}/{len(rows)} checks passed")
    doc = [{"check": n, "pass": ok, "detail": d} for n, ok, d in rows]
    return {"verify.json": dumps(doc)}, failed == 0


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    t0 = time.perf_counter()
    try:
        if args.command == "verify":
            resolved, config = {}, args.config
            files, ok = _cmd_verify(args)
            status = 0 if ok else 1
            stdout = None
        else:
            system, phi, settings = _resolve(args)
            resolved, config = settings.to_dict(), args.config
            resolved["threads"] = args.threads
            handler = globals()["_cmd_" + args.command.replace("-", "_")]
            files, stdout = handler(args, system, phi, settings)
            status = 0
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sddestab: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        diag = {"command": args.command, "error": type(exc).__name__, "message": str(exc)}
        sys.stderr.write(json.dumps(diag) + "\n")
        return 1
    digests = {}
    for name, text in files.items():
        digests[name] = write_atomic(os.path.join(args.out, name), text)
    manifest = {
        "command": args.command,
        "config": None if config is None else os.path.abspath(config),
        "settings": resolved,
        "version": __version__,
        "wall_time_s": round(time.perf_counter() - t0, 3),
        "outputs": digests,
    }
    write_atomic(os.path.join(args.out, f"{args.command}.manifest.json"), dumps(manifest))
    if stdout is not None:
        sys.stdout.write(stdout)
    return status


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
