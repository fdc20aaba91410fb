"""Command-line interface.

Exit codes: 0 success, 1 a validation verdict failed, 2 usage error,
3 request refused (hypotheses violated, out-of-scope kernel, cost cap),
4 domain error (e.g. a filter with real characteristic roots).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from fractions import Fraction

import numpy as np

from . import __version__
from .inputs import parse_count, parse_positive, parse_probability, parse_rational
from .moment_engine import DEFAULT_ORDER, MomentModel, closed_form_moment, moment_bound, series_for_groups
from .monte_carlo import (
    DEFAULT_OP_CAP,
    DataModel,
    FilterNoise,
    Noise,
    SimConfig,
    SimulationError,
    epsilon_grid_for_probabilities,
    hardware_error_paths,
    levy_factor_check,
    scenario_sigma,
    simulate_paths,
    validate_bound,
)
from .scenarios import (
    ErrorVariableSpec,
    FilterSpec,
    Scenario,
    ScenarioError,
    bibo_bound,
    exact_coefficient_sum,
    filter_error_scenario,
    impulse_response,
    scenario_to_dict,
)
from .table1 import REL_TOL, reproduce
from .tail_bounds import (
    best_probability,
    epsilon_for_probability,
    optimize_k,
    significant_bits,
    tail_bound,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_REFUSED, EXIT_DOMAIN = 0, 1, 2, 3, 4

ASSUMPTIONS = [
    "errors are mutually independent",
    "every error is symmetric about zero (odd moments vanish)",
]
LEVY_NOTE = "max over time bounded via P(max |S_i| >= eps) <= 2 P(|S_n| >= eps)"
UNSUPPORTED_KERNELS = {
    "sum-of-squares": "errors entering a sum of squares are not symmetric, so the maximal "
                      "inequality for symmetric summands cannot be applied",
    "taylor": "higher-order Taylor terms of a program are products of errors and are not "
              "symmetric independent summands; this needs a sub-martingale inequality",
}


class Refused(Exception):
    pass


class DomainError(Exception):
    pass


# -- formatting ---------------------------------------------------------------

def _sig(x: float, digits: int) -> float:
    if x is None or not math.isfinite(x) or x == 0:
        return x
    return float(f"{x:.{digits}g}")


def log10_decimal(q: Fraction, digits: int) -> str:
    """Scientific rendering of an exact rational of any magnitude."""
    if q == 0:
        return "0"
    lg = (math.log(q.numerator) - math.log(q.denominator)) / math.log(10)
    exp = math.floor(lg)
    mant = 10 ** (lg - exp)
    if round(mant, digits - 1) >= 10:
        mant, exp = mant / 10, exp + 1
    return f"{mant:.{digits - 1}f}e{exp:+d}"


def _clean(obj, digits: int):
    if isinstance(obj, float):
        if math.isnan(obj) or math.isinf(obj):
            return None
        return _sig(obj, digits)
    if isinstance(obj, dict):
        return {k: _clean(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v, digits) for v in obj]
    if isinstance(obj, Fraction):
        return f"{obj.numerator}/{obj.denominator}"
    return obj


def emit(report: dict, fmt: str, digits: int, out) -> None:
    report = _clean(report, digits)
    if fmt == "json":
        out.write(json.dumps(report, sort_keys=True, indent=2) + "\n")
        return
    rows = report.get("rows", [])
    columns = report.get("columns") or (list(rows[0]) if rows else [])
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow(["" if r.get(c) is None else r.get(c) for c in columns])
        out.write(buf.getvalue())
        return
    for key in ("title",):
        if report.get(key):
            out.write(f"{report[key]}\n")
    if rows:
        cells = [[("" if r.get(c) is None else str(r.get(c))) for c in columns] for r in rows]
        widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
        out.write("  ".join(c.rjust(w) for c, w in zip(columns, widths)) + "\n")
        out.write("  ".join("-" * w for w in widths) + "\n")
        for row in cells:
            out.write("  ".join(v.rjust(w) for v, w in zip(row, widths)) + "\n")
    for key, value in report.items():
        if key in ("rows", "columns", "title", "command", "grid"):
            continue
        if isinstance(value, list):
            out.write(f"{key}:\n")
            for v in value:
                out.write(f"  - {v}\n")
        else:
            out.write(f"{key}: {value}\n")


# -- shared argument handling -------------------------------------------------

def _check_hypotheses(args) -> None:
    if getattr(args, "asymmetric", False) or getattr(args, "dependent", False):
        raise Refused(
            "refused: the bounds hold only for independent, symmetric errors "
            "(the maximal inequality and the moment formulas both require them); "
            "center directed-rounding errors first, and do not use these bounds for correlated errors")
    kernel = getattr(args, "kernel", "accumulation")
    if kernel in UNSUPPORTED_KERNELS:
        raise Refused(f"refused: kernel '{kernel}': {UNSUPPORTED_KERNELS[kernel]}")


def _model(args, u: Fraction) -> MomentModel:
    return MomentModel.support(u) if args.model == "support" else MomentModel.uniform(u)


def _scenario(args) -> Scenario:
    u = args.u
    return Scenario((ErrorVariableSpec(_model(args, u), args.n * args.m, "rounding"),),
                    description=f"accumulation n={args.n} m={args.m}")


def _order(args) -> int:
    k = getattr(args, "k", None)
    return max(DEFAULT_ORDER, args.k_max, k or 0)


def _assumptions(args, levy: bool) -> list[str]:
    out = list(ASSUMPTIONS)
    if args.model == "support":
        out.append("E(X^2j) <= u^2j (any distribution supported in [-u, u])")
    else:
        out.append("E(X^2j) <= u^2j / (2j+1) (uniform-type moments on [-u, u])")
    out.append(LEVY_NOTE if levy else "endpoint event only: P(|S_n| >= eps)")
    return out


def _limit_note(args, k: int) -> list[str]:
    if getattr(args, "k", None) is None and k == args.k_max:
        return [f"best order found at the search limit 2k={2 * k}; a larger --k-max may tighten the bound"]
    return []


# -- commands -----------------------------------------------------------------

def cmd_epsilon(args) -> tuple[dict, int]:
    _check_hypotheses(args)
    levy = not args.no_levy
    series = series_for_groups(_scenario(args).groups, _order(args))
    if args.k is not None:
        k = args.k
        eps = epsilon_for_probability(series, k, args.P, levy)
    else:
        best = optimize_k(series, args.P, levy, args.k_max)
        k, eps = best.k_used, best.epsilon
    moment = moment_bound(series, k)
    row = {
        "u": args.u_text, "n": args.n, "m": args.m, "P": float(args.P), "2k": 2 * k,
        "epsilon": eps, "log2_epsilon": significant_bits(eps) if eps > 0 else None,
        "moment_bound": log10_decimal(moment, args.digits),
    }
    report = {
        "command": "epsilon",
        "title": "Threshold epsilon with P(max_i |S_i| >= epsilon) <= P" if levy
                 else "Threshold epsilon with P(|S_n| >= epsilon) <= P",
        "columns": ["u", "n", "m", "P", "2k", "epsilon", "log2_epsilon", "moment_bound"],
        "rows": [row],
        "k_search": "fixed" if args.k is not None else f"exhaustive 1..{args.k_max}",
        "notes": _limit_note(args, k),
        "levy_factor_applied": levy,
        "assumptions": _assumptions(args, levy),
    }
    return report, EXIT_OK


def cmd_prob(args) -> tuple[dict, int]:
    _check_hypotheses(args)
    levy = not args.no_levy
    scen = _scenario(args)
    series = series_for_groups(scen.groups, _order(args))
    eps = args.epsilon
    notes = []
    if args.k is not None:
        res = tail_bound(series, args.k, eps, levy)
    else:
        res = best_probability(series, eps, levy, args.k_max)
    prob, log10p = res.probability, res.log10_probability
    if eps > scen.deterministic_max:
        prob, log10p = 0.0, None
        notes.append(f"epsilon exceeds the deterministic maximum n*m*u = "
                     f"{float(scen.deterministic_max):.6g}; the event is impossible")
    elif res.probability_is_tiny:
        notes.append("probability below 1e-300: see log10_probability")
    if prob > 0:
        notes.extend(_limit_note(args, res.k_used))
    row = {
        "u": args.u_text, "n": args.n, "m": args.m, "epsilon": float(eps), "2k": res.two_k,
        "probability": prob, "log10_probability": log10p,
        "moment_bound": log10_decimal(res.moment, args.digits),
    }
    report = {
        "command": "prob",
        "title": "Probability bound for max_i |S_i| >= epsilon" if levy
                 else "Probability bound for |S_n| >= epsilon",
        "columns": ["u", "n", "m", "epsilon", "2k", "probability", "log10_probability", "moment_bound"],
        "rows": [row],
        "levy_factor_applied": levy,
        "notes": notes,
        "assumptions": _assumptions(args, levy),
    }
    return report, EXIT_OK


def cmd_table1(args) -> tuple[dict, int]:
    rows, elapsed = reproduce(args.k_max)
    out = []
    for r in rows:
        out.append({
            "block": r.block, "u": r.u, "n": r.n, "m": r.m, "P": r.P, "2k": r.two_k,
            "epsilon": r.epsilon, "log2_epsilon": r.log2_epsilon,
            "published_epsilon": r.published_epsilon, "published_log2": r.published_log2,
            "rel_dev": r.rel_dev, "ok": r.ok, "note": r.note,
        })
    all_ok = all(r.ok for r in rows)
    report = {
        "command": "table1",
        "title": "Significant bits log2(epsilon) with P(max_i |S_i| >= epsilon) <= P",
        "columns": ["block", "u", "n", "m", "P", "2k", "epsilon", "log2_epsilon",
                    "published_epsilon", "rel_dev", "ok", "note"],
        "rows": out,
        "tolerance": REL_TOL,
        "all_within_tolerance": all_ok,
        "runtime_seconds": elapsed if args.timing else None,
    }
    return report, EXIT_OK if all_ok else EXIT_FAIL


def cmd_filter(args) -> tuple[dict, int]:
    try:
        filt = FilterSpec(args.b1, args.b2)
    except ScenarioError as exc:
        raise DomainError(
            f"{exc}. Only second-order IIR sections whose characteristic polynomial "
            "has no real zero are covered") from None
    levy = args.levy
    report = {
        "command": "filter",
        "b1": float(filt.b1), "b2": float(filt.b2),
        "stable": filt.stable,
        "root_modulus": filt.root_modulus,
        "envelope_amplitude": filt.envelope_amplitude(),
        "impulse_response": impulse_response(filt, min(args.show, args.n)),
    }
    if filt.stable:
        report["closed_form_bibo_bound"] = bibo_bound(filt)
        report["exact_coefficient_sum"] = exact_coefficient_sum(filt, args.tol)
        report["stability_note"] = ("BIBO stable: both the closed-form bound "
                                    "sqrt(b2 + 2 b1^2)/(1 - sqrt(b2)) and the certified sum of |y_i| are shown")
    else:
        report["closed_form_bibo_bound"] = None
        report["exact_coefficient_sum"] = None
        report["stability_note"] = "not BIBO stable: worst case unbounded as n grows; the probabilistic bound below still applies at finite n"
    scen = filter_error_scenario(filt, args.n, args.u, args.m, args.buckets)
    worst = float(args.u) * args.m * math.fsum(abs(y) for y in impulse_response(filt, args.n - 1))
    report["worst_case_error_at_n"] = worst
    report["scenario_groups"] = len(scen.groups)
    rows = []
    if scen.degenerate:
        report["notes"] = list(scen.notes)
    else:
        series = scen.series(_order(args))
        if args.k is not None:
            k, eps = args.k, epsilon_for_probability(series, args.k, args.P, levy)
        else:
            best = optimize_k(series, args.P, levy, args.k_max)
            k, eps = best.k_used, best.epsilon
        rows.append({"n": args.n, "m": args.m, "u": args.u_text, "P": float(args.P), "2k": 2 * k,
                     "epsilon": eps, "log2_epsilon": significant_bits(eps)})
        report["notes"] = _limit_note(args, k)
    report["columns"] = ["n", "m", "u", "P", "2k", "epsilon", "log2_epsilon"]
    report["rows"] = rows
    report["event"] = ("max over time, Levy factor applied per the published IIR claim "
                       "(not established for reweighted errors)" if levy
                       else "error at horizon n only (no Levy factor)")
    report["assumptions"] = list(ASSUMPTIONS) + [
        f"weights |y_(n-i)| rounded up into {args.buckets} log-spaced buckets"]
    return report, EXIT_OK


def _grid(args, scen: Scenario) -> tuple[float, ...]:
    points = set()
    if args.epsilon:
        points.update(float(parse_positive(e)) for e in args.epsilon.split(","))
    if args.bound_k is not None:
        series = scen.series(max(DEFAULT_ORDER, args.bound_k))
        points.add(epsilon_for_probability(series, args.bound_k, args.bound_P, True))
    if args.grid_points:
        lo, hi = args.grid_range
        probs = np.geomspace(hi, lo, args.grid_points)
        points.update(epsilon_grid_for_probabilities(scenario_sigma(scen), probs))
    if not points:
        raise argparse.ArgumentTypeError("no epsilon grid: give --epsilon, --bound-k or --grid-points")
    return tuple(sorted(points))


def cmd_simulate(args) -> tuple[dict, int]:
    _check_hypotheses(args)
    if args.reps < 1:
        raise argparse.ArgumentTypeError("--reps must be >= 1")
    noise = Noise(args.noise.upper())
    filter_noise = None
    if args.b1 is not None or args.b2 is not None:
        if args.b1 is None or args.b2 is None:
            raise argparse.ArgumentTypeError("--b1 and --b2 go together")
        try:
            filt = FilterSpec(args.b1, args.b2)
        except ScenarioError as exc:
            raise DomainError(str(exc)) from None
        filter_noise = FilterNoise(filt, args.u, args.m)
        scen = filter_error_scenario(filt, args.n, args.u, args.m)
    else:
        scen = _scenario(args)
    grid = _grid(args, scen)
    cfg = SimConfig(
        seed=args.seed, replications=args.reps, epsilon_grid=grid, steps=args.n,
        scenario=None if (filter_noise or noise is Noise.HARDWARE) else scen,
        filter_noise=filter_noise, noise=noise,
        data_model=DataModel(args.data), op_cap=args.cap, workers=args.workers,
    )
    try:
        sim = simulate_paths(cfg)
    except SimulationError as exc:
        raise Refused(f"refused: {exc}") from None
    report = {"command": "simulate"}
    report.update(sim.to_dict(include_runtime=args.timing))
    report["scenario"] = scenario_to_dict(scen)
    report["noise"] = noise.value

    validations = []
    passed = True
    series = None if scen.degenerate else scen.series(max(DEFAULT_ORDER, max(args.validate_k)))
    if series is not None and noise is Noise.MODEL:
        # filter errors at different times reweight the same variables: endpoint bound only
        levy = filter_noise is None
        for k in args.validate_k:
            bounds = [tail_bound(series, k, e, levy) for e in grid]
            v = validate_bound(sim, bounds)
            passed &= v.passed
            entry = {"2k": 2 * k, "bounds": [b.probability for b in bounds]}
            entry.update(v.to_dict())
            validations.append(entry)
    report["validation"] = validations
    if filter_noise is None:
        levy_check = levy_factor_check(sim)
        passed &= levy_check.passed
        report["levy_check"] = levy_check.to_dict()
    if noise is Noise.HARDWARE:
        hs = hardware_error_paths(args.n, DataModel(args.data), args.seed, args.reps,
                                  op_cap=args.cap, workers=args.workers)
        report["hardware"] = {
            "samples": hs.samples,
            "normalized_moments": {str(j): v for j, v in hs.normalized_moments.items()},
            "standard_errors": {str(j): v for j, v in hs.standard_errors.items()},
            "mean_over_sigma": hs.mean_over_sigma,
            "max_consistency_residual": hs.max_consistency_residual,
        }
    report["verdict"] = "PASS" if passed else "FAIL"
    report["columns"] = ["epsilon", "count_max", "count_end", "p_max", "p_end", "ci_lo", "ci_hi"]
    report["rows"] = report["grid"]
    return report, EXIT_OK if passed else EXIT_FAIL


def cmd_moments(args) -> tuple[dict, int]:
    _check_hypotheses(args)
    scen = _scenario(args)
    series = scen.series(max(DEFAULT_ORDER, args.k_max))
    N = args.n * args.m
    rows = []
    all_match = True
    for k in range(1, args.k_max + 1):
        mb = moment_bound(series, k)
        row = {"2k": 2 * k, "moment_bound": log10_decimal(mb, args.digits), "exact": mb,
               "closed_form": None, "match": None}
        if k <= 4 and args.model == "uniform":
            cf = closed_form_moment(N, args.u, k)
            row["closed_form"] = cf
            row["match"] = cf == mb
            all_match &= cf == mb
        rows.append(row)
    report = {
        "command": "moments",
        "title": "Bounds on E(S^2k) for n*m independent symmetric errors",
        "columns": ["2k", "moment_bound", "exact", "closed_form", "match"],
        "rows": rows,
        "variables": N,
        "all_closed_forms_match": all_match,
        "assumptions": _assumptions(args, False)[:-1],
    }
    return report, EXIT_OK if all_match else EXIT_FAIL


# -- parser ---------------------------------------------------------------------

def _typed(fn, name):
    def parse(text):
        try:
            return fn(text)
        except (ValueError, ZeroDivisionError) as exc:
            raise argparse.ArgumentTypeError(f"{name}: {exc}") from None
    parse.__name__ = name
    return parse


def _ks(text: str) -> list[int]:
    ks = [int(x) for x in text.split(",") if x.strip()]
    if not ks or any(k < 1 for k in ks):
        raise argparse.ArgumentTypeError("k list must hold positive integers")
    return ks


def _add_output(p):
    p.add_argument("--format", choices=["table", "json", "csv"], default="table")
    p.add_argument("--digits", type=int, default=5, help="significant digits (17 for full binary64)")


def _add_accumulation(p, need_n=True):
    p.add_argument("--n", type=_typed(parse_count, "n"), required=need_n, default=None if need_n else 1)
    p.add_argument("--m", type=_typed(parse_count, "m"), default=1)
    p.add_argument("--u", dest="u_text", required=True, help="half-width: 2^-24, 1/3 or 0.001")
    p.add_argument("--model", choices=["uniform", "support"], default="uniform")
    p.add_argument("--kernel", choices=["accumulation", "sum-of-squares", "taylor"], default="accumulation")
    p.add_argument("--asymmetric", action="store_true", help="errors are not symmetric (refused)")
    p.add_argument("--dependent", action="store_true", help="errors are correlated (refused)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roundoff-bounds",
                                     description="Probabilistic bounds on accumulated round-off error.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("epsilon", help="error threshold for a failure probability")
    _add_accumulation(p)
    p.add_argument("--P", type=_typed(parse_probability, "P"), required=True)
    p.add_argument("--k", type=int, default=None, help="fixed moment order k (2k-th moment)")
    p.add_argument("--k-max", type=int, default=32)
    p.add_argument("--no-levy", action="store_true", help="bound the endpoint only")
    _add_output(p)
    p.set_defaults(func=cmd_epsilon)

    p = sub.add_parser("prob", help="failure probability for an error threshold")
    _add_accumulation(p)
    p.add_argument("--epsilon", type=_typed(parse_positive, "epsilon"), required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--k-max", type=int, default=32)
    p.add_argument("--no-levy", action="store_true")
    _add_output(p)
    p.set_defaults(func=cmd_prob)

    p = sub.add_parser("table1", help="recompute the published significant-bits table")
    p.add_argument("--k-max", type=int, default=32)
    p.add_argument("--timing", action="store_true", help="include runtime (breaks byte-identical output)")
    _add_output(p)
    p.set_defaults(func=cmd_table1)

    p = sub.add_parser("filter", help="second-order IIR filter analysis")
    p.add_argument("--b1", type=_typed(parse_rational, "b1"), required=True)
    p.add_argument("--b2", type=_typed(parse_positive, "b2"), required=True)
    p.add_argument("--n", type=_typed(parse_count, "n"), required=True, help="horizon")
    p.add_argument("--u", dest="u_text", required=True)
    p.add_argument("--m", type=_typed(parse_count, "m"), default=1)
    p.add_argument("--P", type=_typed(parse_probability, "P"), required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--k-max", type=int, default=32)
    p.add_argument("--buckets", type=int, default=64)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--show", type=int, default=20, help="impulse response terms to print")
    p.add_argument("--levy", action="store_true",
                   help="apply the factor 2 for the max over time (not established for filters)")
    _add_output(p)
    p.set_defaults(func=cmd_filter, model="uniform")

    p = sub.add_parser("simulate", help="Monte Carlo validation of the bounds")
    _add_accumulation(p)
    p.add_argument("--seed", type=_typed(parse_count, "seed"), required=True)
    p.add_argument("--reps", type=_typed(parse_count, "reps"), required=True)
    p.add_argument("--cap", type=_typed(parse_count, "cap"), default=DEFAULT_OP_CAP, help="max path-steps")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--noise", choices=["model", "hardware"], default="model")
    p.add_argument("--data", choices=["uniform", "logarithmic", "constant"], default="uniform",
                   help="data distribution for hardware noise")
    p.add_argument("--epsilon", default=None, help="comma-separated thresholds")
    p.add_argument("--bound-k", type=int, default=None, help="add the epsilon of this order's bound")
    p.add_argument("--bound-P", type=_typed(parse_probability, "bound-P"), default=Fraction(1, 10))
    p.add_argument("--grid-points", type=int, default=0)
    p.add_argument("--grid-range", type=float, nargs=2, default=(1e-3, 0.9), metavar=("PLO", "PHI"))
    p.add_argument("--validate-k", type=_ks, default=[1, 2, 3, 4])
    p.add_argument("--b1", type=_typed(parse_rational, "b1"), default=None)
    p.add_argument("--b2", type=_typed(parse_positive, "b2"), default=None)
    p.add_argument("--timing", action="store_true")
    p.add_argument("--k-max", type=int, default=32)
    _add_output(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("moments", help="exact even-moment bounds with closed-form cross-check")
    _add_accumulation(p)
    p.add_argument("--k-max", type=int, default=4)
    _add_output(p)
    p.set_defaults(func=cmd_moments)
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:   # argparse: --help, --version, bad flags
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        if getattr(args, "u_text", None) is not None:
            args.u = parse_positive(args.u_text)
        if getattr(args, "digits", 5) < 1:
            raise argparse.ArgumentTypeError("--digits must be >= 1")
        if getattr(args, "k", None) is not None and args.k < 1:
            raise argparse.ArgumentTypeError("--k must be >= 1")
        report, code = args.func(args)
    except Refused as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_REFUSED
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (argparse.ArgumentTypeError, ValueError) as exc:
        # includes MomentModelError, ScenarioError, TailBoundError
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    emit(report, args.format, args.digits, out)
    return code


if __name__ == "__main__":
    sys.exit(main())
