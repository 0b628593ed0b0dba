"""Command-line front end.

Exit codes: 0 success, 1 configuration or usage error, 2 numerical failure
(truncation, quadrature, tail mass, infeasible detuning search).
"""

from __future__ import annotations

import argparse
import ast
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, format_config, load_config
from .dynamics import simulate, validity_check
from .errors import ConfigError, NoFeasibleDetuning, NumericalError
from .figures import FIG2_ETAS, fig2_sweep, fig3_runs, fig4_curves, ground_ratio
from .fock import displacement_element
from .io import write_csv
from .plotting import render, write_plot_script
from .protocol import DEFAULT_BASIS_CAP, FIG2_DURATION, OptimizationProblem, PulseBounds, default_problem, optimize_sequence, seed_cycles
from .rates import PhysicalParams, emptying_rates

log = logging.getLogger("fockcool")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # usage errors share the configuration exit code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _nmax(text: str):
    if text == "auto":
        return "auto"
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or 'auto', got {text!r}") from None
    if value < 11:
        raise argparse.ArgumentTypeError("n_max must be at least 11")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def _common(p: argparse.ArgumentParser, config=True):
    if config:
        p.add_argument("--config", metavar="PATH", help="run configuration file")
    p.add_argument("--out", metavar="DIR", help="output directory (default: current directory)")
    p.add_argument("--quad-order", type=int, metavar="N", help="angular quadrature nodes (default: automatic)")
    p.add_argument("--nmax", type=_nmax, default=None, metavar="N|auto", help="basis size")
    p.add_argument("--angular", choices=("dipole", "isotropic"), help="emission pattern")
    p.add_argument("--gamma-ratio", type=float, metavar="R", help="gamma / Gamma")
    p.add_argument("--eta", type=float, help="Lamb-Dicke parameter (overrides the config)")
    p.add_argument("--no-plot", action="store_true", help="skip rendering PNGs (scripts are still written)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fockcool", description="Rate-equation laser cooling beyond the Lamb-Dicke limit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("elements", help="one matrix element of exp(i eta (a + a^dagger))")
    p.add_argument("n", type=int)
    p.add_argument("m", type=int)
    p.add_argument("eta", type=float)

    p = sub.add_parser("rates", help="emptying rates Gamma_n for one detuning")
    _common(p)
    p.add_argument("--delta", type=float, required=True, help="detuning in units of nu")

    p = sub.add_parser("simulate", help="run a pulse cycle from a config file")
    _common(p)

    p = sub.add_parser("reproduce", help="regenerate a figure's data, plot script and PNG")
    p.add_argument("figure", choices=("fig2", "fig3", "fig4"))
    _common(p, config=False)
    p.add_argument("--jobs", type=_positive_int, default=1, help="concurrent eta points for fig2")
    p.add_argument("--fig2-duration", type=float, default=FIG2_DURATION,
                   help=f"pulse length for fig2 in Gamma/Omega^2 (default {FIG2_DURATION}, calibrated)")
    p.add_argument("--etas", help="comma-separated eta values for fig2 (default 0.1..4.0 step 0.1)")
    p.add_argument("--basis-cap", type=_positive_int, default=None,
                   help="largest automatic basis for fig2 before a point is reported as failed")
    p.add_argument("--scheme-b", choices=("fig3b", "fig3b_caption"), default="fig3b")

    p = sub.add_parser("optimize", help="search pulse detunings and durations")
    _common(p)
    p.add_argument("--budget", type=int, default=200, help="maximum number of simulated cycles")
    p.add_argument("--bounds", help="list of (delta_lo, delta_hi, t_lo, t_hi) per pulse, as a Python literal")
    p.add_argument("--basis-cap", type=_positive_int, default=DEFAULT_BASIS_CAP,
                   help=f"largest automatic basis; candidates needing more count as failed (default {DEFAULT_BASIS_CAP})")
    return parser


# --- helpers ----------------------------------------------------------------


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if args.eta is not None:
        if not (math.isfinite(args.eta) and args.eta >= 0):
            raise ConfigError("eta must be non-negative", key="--eta")
        cfg.eta = args.eta
    if args.nmax is not None:
        cfg.n_max = None if args.nmax == "auto" else args.nmax
    if args.quad_order is not None:
        if args.quad_order < 32:
            raise ConfigError("must be at least 32", key="--quad-order")
        cfg.quad_order = args.quad_order
    if args.angular is not None:
        cfg.angular = args.angular
    if args.gamma_ratio is not None:
        if not (0 < args.gamma_ratio <= 1):
            raise ConfigError("must be in (0, 1]", key="--gamma-ratio")
        cfg.gamma_ratio = args.gamma_ratio
    return cfg


def _outdir(args, cfg: RunConfig | None = None) -> Path:
    out = args.out or (cfg.out_dir if cfg is not None else None) or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _param_meta(p: PhysicalParams) -> dict:
    return {
        "eta": p.eta,
        "Gamma_over_nu": p.Gamma,
        "gamma_over_nu": p.gamma,
        "Omega_over_nu": p.Omega,
        "angular": p.angular.kind,
        "rate_unit": "Omega^2/Gamma",
        "time_unit": "Gamma/Omega^2",
    }


def _emit(args, kind, csv_path, columns, rows, meta):
    write_csv(csv_path, columns, rows, meta)
    script = write_plot_script(kind, csv_path)
    print(f"wrote {csv_path}")
    print(f"wrote {script}")
    if not args.no_plot:
        render(script, csv_path, csv_path.with_suffix(".png"))


def _pulses_text(pulses) -> str:
    return "[" + ", ".join(f"({p.delta:g}, {p.duration:.12g})" for p in pulses) + "]"


# --- commands -----------------------------------------------------------------


def cmd_elements(args) -> int:
    if args.n < 0 or args.m < 0:
        print("error: Fock indices must be non-negative", file=sys.stderr)
        return EXIT_CONFIG
    if not math.isfinite(args.eta):
        print("error: eta must be finite", file=sys.stderr)
        return EXIT_CONFIG
    a = displacement_element(args.n, args.m, args.eta)
    print(f"<{args.n}|exp(i*{args.eta:g}*(a+a^dagger))|{args.m}> = {a.real:.12e} {a.imag:+.12e}j")
    print(f"magnitude {abs(a):.12f}")
    return EXIT_OK


def cmd_rates(args) -> int:
    cfg = _config(args)
    p = cfg.physical_params()
    n_top = cfg.n_max if cfg.n_max is not None else 60
    gam = emptying_rates(args.delta, p, n_top)
    out = _outdir(args, cfg)
    meta = {"command": "rates", "delta": args.delta, **_param_meta(p), "n_max": n_top}
    _emit(args, "rates", out / "rates.csv", ["n", "gamma_n_units_omega2_over_gamma"],
          [(n, g) for n, g in enumerate(gam)], meta)
    ratio = gam[0] / gam[1] if gam[1] > 0 else math.inf
    print(f"Gamma_0 = {gam[0]:.6e}  Gamma_1 = {gam[1]:.6e}  Gamma_0/Gamma_1 = {ratio:.6g}")
    return EXIT_OK


def _run_meta(cfg: RunConfig, p: PhysicalParams, trace) -> dict:
    return {
        "command": "simulate",
        **_param_meta(p),
        "pulses": _pulses_text(trace.cycle.pulses),
        "n_cycles": trace.cycle.n_cycles,
        "initial": f"thermal nbar={cfg.nbar}" if cfg.vector is None else "explicit vector",
        "n_max": trace.n_max,
        "basis_attempts": " ".join(map(str, trace.basis_attempts)),
        "quad_orders": " ".join(f"{d:g}:{q}" for d, q in sorted(trace.quad_orders.items())),
    }


def cmd_simulate(args) -> int:
    cfg = _config(args)
    p = cfg.physical_params()
    cycle = cfg.cycle()
    for w in validity_check(p):
        print(f"warning: {w}", file=sys.stderr)
    trace = simulate(cycle, p, nbar=cfg.nbar, vector=cfg.vector, n_max=cfg.n_max, quad_order=cfg.quad_order)
    out = _outdir(args, cfg)
    meta = _run_meta(cfg, p, trace)
    if cfg.scheme and cfg.scheme.startswith("fig2") and cfg.pulses is None:
        meta["fig2_duration_note"] = "pulse length set in Gamma/Omega^2 units, not the caption's t = 0.1/nu"
    cycles = np.arange(cycle.n_cycles + 1)
    _emit(args, "trace", out / "trace.csv", ["cycle", "P0", "mean_n", "tail_mass"],
          list(zip(cycles, trace.snapshots[:, 0], trace.mean_n, trace.tail_mass)), meta)
    _emit(args, "distribution", out / "distribution.csv", ["n", "P_n"], list(enumerate(trace.final)), meta)
    print(f"final P0 = {trace.p0:.12f}")
    print(f"final <n> = {trace.mean_n[-1]:.6f}")
    print(f"basis n_max = {trace.n_max}; max |sum P - 1| = {trace.max_norm_error:.2e}; min P = {trace.min_population:.2e}")
    return EXIT_OK


def _reproduce_params(args, eta: float) -> PhysicalParams:
    cfg = RunConfig(eta=eta)
    if args.angular is not None:
        cfg.angular = args.angular
    if args.gamma_ratio is not None:
        if not (0 < args.gamma_ratio <= 1):
            raise ConfigError("must be in (0, 1]", key="--gamma-ratio")
        cfg.gamma_ratio = args.gamma_ratio
    return cfg.physical_params()


def cmd_reproduce(args) -> int:
    out = _outdir(args)
    quad = args.quad_order
    if quad is not None and quad < 32:
        raise ConfigError("must be at least 32", key="--quad-order")
    t0 = time.perf_counter()
    if args.figure == "fig4":
        p = _reproduce_params(args, 5.0 if args.eta is None else args.eta)
        n_top = 60 if args.nmax in (None, "auto") else args.nmax
        curves = fig4_curves(p, (7.0, 9.0), n_top)
        cols = ["n"] + [f"gamma_n_delta_{d:g}" for d in curves]
        rows = [(n, *(c[n] for c in curves.values())) for n in range(n_top + 1)]
        meta = {"command": "reproduce fig4", **_param_meta(p), "deltas": "7 9"}
        _emit(args, "fig4", out / "fig4.csv", cols, rows, meta)
        for d, c in curves.items():
            print(f"delta = +{d:g}: Gamma_0/Gamma_1 = {ground_ratio(c):.6g}")
    elif args.figure == "fig3":
        p = _reproduce_params(args, 5.0 if args.eta is None else args.eta)
        a, b = fig3_runs(p, scheme_b=args.scheme_b, quad_order=quad)
        size = max(a.n_max, b.n_max) + 1
        pa, pb = np.zeros(size), np.zeros(size)
        pa[: a.n_max + 1], pb[: b.n_max + 1] = a.final, b.final
        meta = {
            "command": "reproduce fig3",
            **_param_meta(p),
            "pulses_a": _pulses_text(a.cycle.pulses),
            "pulses_b": _pulses_text(b.cycle.pulses),
            "n_cycles": a.cycle.n_cycles,
            "initial": "thermal nbar=6",
            "n_max_a": a.n_max,
            "n_max_b": b.n_max,
            "P0_a": a.p0,
            "P0_b": b.p0,
        }
        _emit(args, "fig3", out / "fig3.csv", ["n", "P_n_a", "P_n_b"],
              [(n, pa[n], pb[n]) for n in range(size)], meta)
        print(f"final P0: (a) {a.p0:.6f}  (b) {b.p0:.6f}")
    else:
        p = _reproduce_params(args, 1.0)
        etas = FIG2_ETAS if not args.etas else [float(x) for x in args.etas.split(",")]
        res = fig2_sweep(p, etas, args.fig2_duration, jobs=args.jobs, n_cap=args.basis_cap, quad_order=quad)
        meta = {
            "command": "reproduce fig2",
            **{k: v for k, v in _param_meta(p).items() if k != "eta"},
            "curve_labels": "a: delta=-max(2,eta_hat^2); b: delta=-1; c: a then b (caption labelling)",
            "pulse_duration": args.fig2_duration,
            "duration_note": "Gamma/Omega^2 units, calibrated; the caption's t = 0.1/nu needs an unstated Omega",
            "n_cycles": res.n_cycles,
            "initial": "thermal nbar=6",
            "failed": "; ".join(f"eta={e:g} {s}" for e, s, _ in res.failures) or "none",
        }
        _emit(args, "fig2", out / "fig2.csv", ["eta", "P0_a", "P0_b", "P0_c"], res.rows(), meta)
        for e, s, msg in res.failures:
            print(f"warning: eta={e:g} {s}: {msg}", file=sys.stderr)
    print(f"elapsed {time.perf_counter() - t0:.1f} s")
    return EXIT_OK


def _parse_bounds(text: str):
    try:
        raw = ast.literal_eval(text)
    except (ValueError, SyntaxError):
        raise ConfigError(f"cannot parse bounds {text!r}", key="--bounds") from None
    try:
        return tuple(PulseBounds(*map(float, b)) for b in raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad bounds: {exc}", key="--bounds") from None


def cmd_optimize(args) -> int:
    if args.budget < 1:
        raise ConfigError(f"budget must be at least 1, got {args.budget}", key="--budget")
    cfg = _config(args)
    p = cfg.physical_params()
    problem = default_problem(p, budget=args.budget, n_cycles=cfg.n_cycles, nbar=cfg.nbar if cfg.nbar is not None else 6.0,
                              n_cap=args.basis_cap)
    if cfg.vector is not None:
        raise ConfigError("optimize starts from a thermal state; set initial.nbar", key="initial.vector")
    if args.bounds:
        problem.bounds = _parse_bounds(args.bounds)
    problem.quad_order = cfg.quad_order
    problem.n_max = cfg.n_max
    if cfg.pulses is not None or cfg.scheme is not None:
        given = cfg.cycle()
        if len(given.pulses) != len(problem.bounds):
            raise ConfigError(f"seed cycle has {len(given.pulses)} pulses but the bounds describe {len(problem.bounds)}",
                              key="cycle.pulses")
        problem.seeds = (given, *seed_cycles(OptimizationProblem(problem.bounds, p, problem.n_cycles, 1)))
    problem = OptimizationProblem(problem.bounds, p, problem.n_cycles, problem.budget, problem.nbar,
                                  problem.seeds, problem.quad_order, problem.n_max, problem.n_cap)
    res = optimize_sequence(problem)

    out = _outdir(args, cfg)
    n_p = len(problem.bounds)
    cols = ["evaluation", "start", "P0", "incumbent_P0"]
    for i in range(n_p):
        cols += [f"delta_{i + 1}", f"duration_{i + 1}"]
    rows = []
    for e in res.log:
        row = [e.index, e.start, e.p0, e.incumbent_p0]
        for q in e.pulses:
            row += [q.delta, q.duration]
        rows.append(row)
    meta = {"command": "optimize", **_param_meta(p), "budget": args.budget,
            "basis_cap": args.basis_cap, "budget_exhausted": res.budget_exhausted, "converged": res.converged}
    _emit(args, "optimize", out / "optimize_log.csv", cols, rows, meta)

    best_cfg = RunConfig(eta=p.eta, Gamma=cfg.Gamma, gamma_ratio=cfg.gamma_ratio, Omega=cfg.Omega, angular=cfg.angular,
                         n_max=res.n_max if res.n_max is not None else cfg.n_max, nbar=problem.nbar,
                         pulses=tuple((q.delta, q.duration) for q in res.cycle.pulses),
                         n_cycles=problem.n_cycles, quad_order=cfg.quad_order)
    fragment = format_config(best_cfg)
    (out / "best_cycle.cfg").write_text(fragment, encoding="utf-8")
    print(f"wrote {out / 'best_cycle.cfg'}")

    print("incumbent history (evaluation: P0):")
    last = None
    for e in res.log:
        if e.incumbent_p0 != last:
            print(f"  {e.index:4d}: {e.incumbent_p0:.12f}")
            last = e.incumbent_p0
    for note in res.notes:
        print(f"note: {note}")
    print(f"best P0 = {res.p0:.12f} after {len(res.log)} evaluations")
    print("best cycle as config:")
    print(fragment, end="")
    return EXIT_OK


COMMANDS = {
    "elements": cmd_elements,
    "rates": cmd_rates,
    "simulate": cmd_simulate,
    "reproduce": cmd_reproduce,
    "optimize": cmd_optimize,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, NoFeasibleDetuning) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
