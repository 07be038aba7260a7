"""Command-line interface.

Exit codes: 0 success, 1 configuration or usage error, 2 numerical failure,
3 input/output failure. Every command writes ``manifest.json`` into its
output directory before doing any work and completes it at the end.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from . import __version__
from .convergence import run_convergence
from .ctmc import sample_path
from .errors import BlowUp, MfgLqgError, ModelError, OutOfRange, SchemaError
from .model import ModelSpec, load_model, two_regime_config, to_config
from .nplayer import DEFAULT_CAP, PATTERN_CLASSES, solve_full, solve_reduced, value_along_paths, verify_pattern
from .paths import refine_grid, simulate_conditional_moments, _brownian, _coefficients, _mfg_kernel, _nplayer_kernel
from .riccati import explicit_no_common_noise, fmt, solve_extended_riccati, solve_mfg_riccati
from .streams import StreamFactory

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICS, EXIT_IO = 0, 1, 2, 3


class UsageError(ModelError):
    """Invalid command-line usage."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# -- run context --------------------------------------------------------------


class Run:
    """Output directory, manifest bookkeeping and file emission for one command."""

    def __init__(self, args: argparse.Namespace, argv: Sequence[str], spec: ModelSpec, config: dict):
        self.args = args
        self.out = Path(args.out)
        self.spec = spec
        self.outputs: list[str] = []
        self.start = time.perf_counter()
        canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
        self.manifest = {
            "command": args.command,
            "argv": list(argv),
            "toolkit_version": __version__,
            "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
            "config": config,
            "seeds": {"seed": args.seed},
            "grid": {"T": spec.T, "n_steps": spec.grid.n_steps, "dt": spec.grid.dt},
            "scheme": args.scheme,
            "outputs": self.outputs,
            "status": "running",
        }
        self.out.mkdir(parents=True, exist_ok=True)
        self._write_manifest()

    def _write_manifest(self):
        (self.out / "manifest.json").write_text(json.dumps(self.manifest, indent=2) + "\n")

    def write(self, name: str, text: str) -> Path:
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.outputs.append(name)
        return path

    def finish(self, status: str = "complete", **extra):
        self.manifest.update(extra)
        self.manifest["status"] = status
        self.manifest["wall_clock_seconds"] = round(time.perf_counter() - self.start, 6)
        self._write_manifest()


def _parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise UsageError(f"override must look like KEY=VALUE, got {text!r}", "--override")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        raise UsageError(f"value for {key} is not valid JSON: {raw!r}", "--override") from None
    return key.strip(), value


def _load_spec(args) -> tuple[ModelSpec, dict]:
    if args.config:
        try:
            text = Path(args.config).read_text()
        except FileNotFoundError:
            raise SchemaError(f"configuration file {args.config} not found", "--config") from None
        spec = load_model(text, strict=False)
        config = to_config(spec)
    else:
        config = to_config(load_model(two_regime_config()))
    strict = True
    for item in args.override or []:
        key, value = _parse_override(item)
        if key in ("h", "g"):
            config["costs"][key] = value
            strict = False
        elif key in ("mu0", "nu0", "family"):
            config["initial"][key] = value
        else:
            config[key] = value
    if args.dt is not None:
        if not args.dt > 0:
            raise UsageError(f"--dt must be positive, got {args.dt}", "--dt")
        config["n_steps"] = max(1, round(config["horizon"] / args.dt))
    spec = load_model(config, strict=strict)
    return spec, to_config(spec)


# -- commands -------------------------------------------------------------------


def cmd_solve_mfg(run: Run) -> int:
    spec = run.spec
    ric = solve_mfg_riccati(spec, run.args.scheme)
    ext = solve_extended_riccati(spec, run.args.scheme)
    run.write("riccati.csv", ric.to_csv())
    run.write("riccati_extended.csv", ext.to_csv())
    dev = ext.deviations()
    print("extended-system deviations: " + " ".join(f"max|{k}|={v:.3e}" for k, v in dev.items()))
    run.finish(deviations=dev)
    return EXIT_OK


def cmd_solve_nplayer(run: Run) -> int:
    args, spec = run.args, run.spec
    N = args.N
    if N < 2:
        raise UsageError(f"N must be at least 2, got {N}", "--N")
    if args.full and N < 3:
        raise UsageError("--full needs N >= 3", "--N")
    reduced = solve_reduced(spec, N, scheme=args.scheme)
    run.write("reduced.csv", reduced.to_csv())
    extra = {}
    if args.full:
        full = solve_full(spec, N, cap=args.cap, scheme=args.scheme)
        report = verify_pattern(full, reduced)
        probes = [spec.grid.index_of(t) for t in args.probe_times]
        rows = ["t,player,state,row,col,value"]
        for k in probes:
            for i in range(N):
                for y in range(spec.kappa):
                    m = full.A[k, i, y]
                    rows += [f"{fmt(full.t[k])},{i},{y},{p},{q},{fmt(m[p, q])}" for p in range(N) for q in range(N)]
        run.write("matrices.csv", "\n".join(rows) + "\n")
        run.write("pattern.csv", report.to_csv())
        run.write("pattern_probe.csv", report.to_csv(probes))
        for k in probes:
            for y in range(spec.kappa):
                vals = " ".join(f"{c}={v:.6f}" for c, v in zip(PATTERN_CLASSES, report.values[k, y]))
                print(f"t={full.t[k]:g} state={y}: {vals}")
        print(f"pattern: max spread {report.max_spread:.3e}, max deviation {report.max_deviation:.3e}")
        extra = {"pattern_max_spread": report.max_spread, "pattern_max_deviation": report.max_deviation}
    run.finish(N=N, **extra)
    return EXIT_OK


def _series_rows(rows: list[str], t: np.ndarray, name: str, replica: int, values: np.ndarray):
    rows.extend(f"{fmt(tk)},{name},{replica},{fmt(v)}" for tk, v in zip(t, values))


def _along(nodes: np.ndarray, curve: np.ndarray, t: np.ndarray, states: np.ndarray) -> np.ndarray:
    return np.array([np.interp(tk, nodes, curve[:, y]) for tk, y in zip(t, states)])


def cmd_simulate(run: Run) -> int:
    args, spec = run.args, run.spec
    ric = solve_mfg_riccati(spec, args.scheme)
    factory = StreamFactory(args.seed)
    Ns = sorted(set(args.N))
    if any(N < 2 for N in Ns):
        raise UsageError("every N must be at least 2", "--N")
    reduceds = {N: solve_reduced(spec, N, scheme=args.scheme) for N in Ns}
    nodes = spec.grid.nodes

    coef_rows = ["t,state,a,b,c,k"]
    for k, tk in enumerate(nodes):
        for y in range(spec.kappa):
            vals = (ric.a[k, y], ric.b[k, y], ric.c[k, y], ric.k_coef[k, y])
            coef_rows.append(",".join([fmt(tk), str(y), *map(fmt, vals)]))
    run.write("fig1a_fig2_coefficients.csv", "\n".join(coef_rows) + "\n")

    header = "t,series_name,replica,value"
    fig1, fig3, fig4 = [header], [header], [header]
    path_text = []
    for r in range(args.replicas):
        y_path = sample_path(spec.generator, args.y0, spec.T, factory(r, "Y"))
        path_text.append(f"# replica {r}\n" + y_path.to_csv())
        grid = refine_grid(spec.grid, y_path)
        T = grid.t
        max_n = max(Ns)
        z0 = factory(r, "init").standard_normal(max_n)
        dw_pool = [_brownian(factory(r, "W", i), grid.dt) for i in range(max_n)]
        c = _coefficients(spec, grid.t, grid.state, ric=ric)
        x0 = spec.initial.from_normals(z0)
        xhat, mu = _mfg_kernel(x0[:1], spec.initial.mu0, c, grid.dt[None], dw_pool[0][None])
        xhat, mu = xhat[0], mu[0]
        moments = simulate_conditional_moments(spec, ric, y_path)
        states = y_path.states_at(T)
        a_t, b_t, c_t, k_t = (_along(nodes, getattr(ric, name), T, states) for name in ("a", "b", "c", "k_coef"))
        nu = moments.nu
        value = a_t * xhat**2 - 2 * a_t * xhat * mu + k_t * mu**2 + b_t * nu + c_t
        b2 = np.array([spec.curves.at_time("b2", tk)[y] for tk, y in zip(T, states)])
        control = -2 * b2 * a_t * (xhat - mu)
        for name, vals in (("y", states.astype(float)), ("xhat", xhat), ("mu", moments.mu), ("nu", nu), ("value", value), ("control", control)):
            _series_rows(fig1, T, name, r, vals)
        _series_rows(fig3, T, "mu_mfg", r, moments.mu)
        _series_rows(fig3, T, "nu_mfg", r, nu)
        _series_rows(fig4, T, "value_mfg", r, value)
        for N in Ns:
            red = reduceds[N]
            cN = _coefficients(spec, grid.t, grid.state, reduced=red)
            dw = np.stack(dw_pool[:N], axis=-1)[None]
            xs, _ = _nplayer_kernel(x0[None, :N], cN, grid.dt[None], dw, N)
            xs = xs[0]
            _series_rows(fig3, T, f"mu_N{N}", r, xs.mean(axis=-1))
            _series_rows(fig3, T, f"nu_N{N}", r, (xs**2).mean(axis=-1))
            _series_rows(fig4, T, f"value1_N{N}", r, value_along_paths(red, xs, states, T, i=0))
    run.write("fig1b_paths.csv", "\n".join(fig1) + "\n")
    run.write("fig3_moments.csv", "\n".join(fig3) + "\n")
    run.write("fig4_values.csv", "\n".join(fig4) + "\n")
    run.write("y_paths.csv", "".join(path_text))
    run.finish(N=Ns, replicas=args.replicas, y0=args.y0)
    return EXIT_OK


def cmd_converge(run: Run) -> int:
    args, spec = run.args, run.spec
    report = run_convergence(spec, args.Ns, args.replicas, args.seed, args.eval_times, y0=args.y0)
    run.write("convergence.csv", report.to_csv())
    run.write("summary.txt", report.summary() + "\n")
    print(report.summary())
    fit = None if report.fit is None else {"slope": report.fit.slope, "intercept": report.fit.intercept, "r2": report.fit.r2}
    run.finish(Ns=report.Ns, replicas=args.replicas, fit=fit, degenerate=report.degenerate)
    return EXIT_OK


def cmd_validate_explicit(run: Run) -> int:
    args, spec = run.args, run.spec
    from .model import scalar_model

    rows = ["h,check,value,reference,error,tolerance,pass"]
    curves = ["h,t,closed_form,solver"]
    ok = True
    T, n = spec.T, spec.grid.n_steps
    for h in args.h:
        model = scalar_model(h, 0.0, T, n)
        closed = explicit_no_common_noise(h, args.sigma, T, model.grid)
        if h > 0:
            solved = solve_mfg_riccati(model, args.scheme).a[:, 0]
            err = float(np.max(np.abs(solved - closed.value)))
            passed = err <= args.tol
            rows.append(f"{fmt(h)},sup_error,{fmt(err)},0,{fmt(err)},{fmt(args.tol)},{int(passed)}")
            curves += [f"{fmt(h)},{fmt(t)},{fmt(v)},{fmt(s)}" for t, v, s in zip(model.grid.nodes, closed.value, solved)]
        else:
            t0 = closed.blow_up_time or 0.0
            try:
                solve_mfg_riccati(model, args.scheme)
                blow = float("nan")
            except BlowUp as exc:
                blow = exc.t
            err = abs(blow - t0) if math.isfinite(blow) else float("inf")
            passed = err <= args.blowup_tol
            rows.append(f"{fmt(h)},blow_up_time,{fmt(blow)},{fmt(t0)},{fmt(err)},{fmt(args.blowup_tol)},{int(passed)}")
        ok &= passed
        print(rows[-1])
    run.write("explicit.csv", "\n".join(rows) + "\n")
    run.write("explicit_curves.csv", "\n".join(curves) + "\n")
    run.finish(passed=bool(ok))
    return EXIT_OK if ok else EXIT_NUMERICS


def cmd_reproduce_figures(run: Run) -> int:
    base = run.args
    results = {}
    for sub, extra in (
        ("solve-mfg", {}),
        ("solve-nplayer", {"N": 5, "full": True, "probe_times": [1.0], "cap": DEFAULT_CAP}),
        ("simulate", {"N": [10, 20, 50, 100], "replicas": base.replicas, "y0": base.y0}),
    ):
        ns = argparse.Namespace(**{**vars(base), **extra, "command": sub, "out": str(Path(base.out) / sub)})
        sub_run = Run(ns, run.manifest["argv"], run.spec, run.manifest["config"])
        results[sub] = COMMANDS[sub](sub_run)
        run.outputs.extend(f"{sub}/{name}" for name in sub_run.outputs)
    run.finish(steps=list(results))
    return max(results.values())


def cmd_replay(run_args: argparse.Namespace, out: str | None) -> int:
    manifest = json.loads(Path(run_args.manifest).read_text())
    argv = list(manifest["argv"])
    if out is not None:
        argv += ["--out", out]
    return main(argv)


COMMANDS = {
    "solve-mfg": cmd_solve_mfg,
    "solve-nplayer": cmd_solve_nplayer,
    "simulate": cmd_simulate,
    "converge": cmd_converge,
    "validate-explicit": cmd_validate_explicit,
    "reproduce-figures": cmd_reproduce_figures,
}


# -- parser -------------------------------------------------------------------------


def _add_globals(p: argparse.ArgumentParser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="model configuration (JSON or TOML); defaults to the built-in two-regime example")
    p.add_argument("--seed", type=int, default=d(0), help="experiment seed (unsigned 64-bit)")
    p.add_argument("--out", default=d("out"), help="output directory")
    p.add_argument("--dt", type=float, default=d(None), help="time step; overrides n_steps")
    p.add_argument("--scheme", choices=("rk4", "euler"), default=d("rk4"), help="backward ODE scheme")
    p.add_argument(
        "--override",
        action="append",
        metavar="KEY=JSON",
        default=d(None),
        help="replace a config field, e.g. h=[-2,-5]; overriding h or g lifts the positivity check",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mfg-lqg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _add_globals(p, suppress=True)
        return p

    add("solve-mfg", "solve the mean-field Riccati system and the extended diagnostics")

    p = add("solve-nplayer", "solve the N-player Riccati system")
    p.add_argument("--N", type=int, required=True, help="number of players")
    p.add_argument("--full", action="store_true", help="also solve the full matrix system and verify the pattern")
    p.add_argument("--probe-times", type=float, nargs="+", default=[1.0], help="times at which to dump full matrices")
    p.add_argument("--cap", type=int, default=DEFAULT_CAP, help="largest N accepted with --full")

    p = add("simulate", "simulate equilibrium paths for the figure series")
    p.add_argument("--N", type=int, nargs="+", default=[10, 20, 50, 100], help="player counts")
    p.add_argument("--replicas", type=int, default=1, help="number of sample paths")
    p.add_argument("--y0", type=int, default=0, help="initial regime")

    p = add("converge", "estimate the convergence rate with the coupling")
    p.add_argument("--Ns", type=int, nargs="+", default=[8, 16, 32, 64, 128], help="increasing player counts")
    p.add_argument("--replicas", type=int, default=10_000)
    p.add_argument("--eval-times", type=float, nargs="+", default=None, help="defaults to T/5, T/2, T")
    p.add_argument("--y0", type=int, default=0, help="initial regime")

    p = add("validate-explicit", "compare single-state solves with the closed forms")
    p.add_argument("--h", type=float, nargs="+", default=[0.5, 2.0, 5.0, -2.0])
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--blowup-tol", type=float, default=0.05)

    p = add("reproduce-figures", "run the solve and simulate pipeline into subdirectories")
    p.add_argument("--replicas", type=int, default=1)
    p.add_argument("--y0", type=int, default=0)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="write into this directory instead of the recorded one")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "replay":
            return cmd_replay(args, args.out)
        if args.seed < 0 or args.seed >= 2**64:
            raise UsageError(f"seed must be an unsigned 64-bit integer, got {args.seed}", "--seed")
        spec, config = _load_spec(args)
        run = Run(args, argv, spec, config)
        return COMMANDS[args.command](run)
    except MfgLqgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if isinstance(exc, (ModelError, OutOfRange)) else exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, ArithmeticError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICS


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
