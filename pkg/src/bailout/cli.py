"""Command line front end.

Exit codes: 0 success, 2 schema violation, 3 failed model assumption,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import config
from .errors import AssumptionViolation, BailoutError, NumericalError
from .levy_model import ValidationReport
from .regime_switching import ThresholdVector, apply_T, lift_payoff, solve
from .scale_functions import self_check
from .simulator import PathConfig, simulate_regime, simulate_single_regime
from .single_regime import _Barrier, optimal_threshold, verify_optimality

OUT_ENV = "BAILOUT_OUT_DIR"

UNITS = {
    "x": "surplus, in currency units",
    "value": "expected discounted NPV, in currency units",
    "derivative": "marginal value, dimensionless",
    "rates": "per unit time",
}
AUX_MAPPING = "single problem: discount q, exponential horizon at rate r, alpha = q + r"
REGIME_MAPPING = (
    "state i epoch problem uses discount q := r(i) and horizon rate r := q_i "
    "(the total switching rate out of i), so alpha_i = r(i) + q_i"
)


def _meta(mapping, doc):
    return {"units": UNITS, "alpha_q_r_mapping": mapping, "config": doc}


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not serialisable: {type(obj)!r}")


def _write_csv(path, columns, data, mapping, doc, extra=()):
    header = [
        f"units: x = {UNITS['x']}; values = {UNITS['value']}",
        f"mapping: {mapping}",
        f"config: {json.dumps(doc, sort_keys=True)}",
        *extra,
        ",".join(columns),
    ]
    np.savetxt(path, np.column_stack(data), delimiter=",", fmt="%.17g", header="\n".join(header), comments="# ")


def _resolved(doc, args):
    """Fold command-line settings into the document's run block."""
    doc = json.loads(json.dumps(doc))
    run = doc.setdefault("run", {})
    for key, flag in (("tol", "tol"), ("grid_points", "grid_points"), ("x_max", "x_max"), ("paths", "paths"), ("seed", "seed"), ("dt", "dt")):
        val = getattr(args, flag, None)
        if val is not None:
            run[key] = val
    config.check_schema(doc)
    return doc


def _path_config(run):
    return PathConfig(
        dt=run.get("dt", 0.02),
        horizon=run.get("horizon", 200.0),
        n_paths=run.get("paths", 20_000),
        seed=run.get("seed", 12345),
        antithetic=run.get("antithetic", False),
    )


def _require_aux(doc, command):
    if "auxiliary" not in doc:
        raise config.SchemaError("auxiliary", f"'{command}' needs an auxiliary problem")
    return config.auxiliary_from_dict(doc["auxiliary"])


# ------------------------------------------------------------- commands ---
def cmd_check(doc, out):
    if "auxiliary" in doc:
        report: ValidationReport = config.auxiliary_from_dict(doc["auxiliary"]).validate()
    else:
        report = config.regime_from_dict(doc["regime"]).validate()
    _write_json(out / "check.json", {**report.as_dict(), "config": doc})
    for c in report.checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}" + (f": {c['reason']}" if c["reason"] else ""))
    report.require()


def cmd_scale(doc, out):
    prob = _require_aux(doc, "scale")
    prob.validate(check_payoff=False).require()
    run = doc.get("run", {})
    sfs = prob.scales
    x = np.linspace(0.0, run.get("x_max", 5.0), run.get("grid_points", 201))
    xp = np.where(x > 0, x, np.nextafter(0.0, 1.0))
    cols = ["x", "W", "W_prime", "Z", "Wbar", "Zbar", "W_refracted", "Wbar_refracted"]
    data = [x, sfs.W(x), sfs.W_prime(xp), sfs.Z(x), sfs.Wbar(x), sfs.Zbar(x), sfs.W(x, "Y"), sfs.Wbar(x, "Y")]
    _write_csv(out / "scale_table.csv", cols, data, AUX_MAPPING, doc, [f"scale functions built at alpha = {prob.alpha!r}"])
    report = self_check(sfs, x[x > 0][:: max(1, x.size // 25)])
    report.update({"alpha": prob.alpha, "Phi": sfs.phi_X, "phi_refracted": sfs.phi_Y, "W0": sfs.W0(), "W_prime0": sfs.W_prime0(), "meta": _meta(AUX_MAPPING, doc)})
    _write_json(out / "self_check.json", report)
    print(f"max self-check residual {report['max_residual']:.3e}")


def cmd_solve_single(doc, out):
    prob = _require_aux(doc, "solve-single")
    prob.validate().require()
    run = doc.get("run", {})
    sol = optimal_threshold(prob)
    x_max = run.get("x_max", max(2.0 * sol.b_star, sol.b_star + 3.0))
    x = np.linspace(0.0, x_max, run.get("grid_points", 801))
    bar = _Barrier(prob, sol.b_star)
    v = bar.value(x)
    dv = bar.derivative(x, x >= sol.b_star)
    _write_csv(out / "value.csv", ["x", "v", "v_prime"], [x, v, dv], AUX_MAPPING, doc,
               [f"b_star = {sol.b_star!r}", "v_prime at x = b_star is the right limit"])
    report = verify_optimality(prob, sol, x)
    report["meta"] = _meta(AUX_MAPPING, doc)
    report["alpha"] = prob.alpha
    _write_json(out / "solution.json", report)
    print(f"b* = {sol.b_star:.12g}  |g(b*)| = {abs(sol.g_at_b):.3e}  checks {'ok' if report['ok'] else 'FAILED'}")


def _regime_derivative(regime, V, b, i):
    prob = regime.auxiliary(i, lift_payoff(regime, V, i))
    x = V.grid
    return _Barrier(prob, b[i]).derivative(x, x >= b[i])


def cmd_solve_regime(doc, out):
    if "regime" not in doc:
        raise config.SchemaError("regime", "'solve-regime' needs a regime model")
    regime = config.regime_from_dict(doc["regime"])
    regime.validate().require()
    run = doc.get("run", {})
    tol = run.get("tol", 1e-6)
    sol = solve(regime, tol=tol, max_iter=run.get("max_iter", 500), n_points=run.get("grid_points", 801), x_max=run.get("x_max"))
    V, b = sol.V, sol.b_star
    residual = apply_T(regime, b, V).distance(V)
    for i, name in enumerate(regime.states):
        dv = _regime_derivative(regime, V, b, i)
        _write_csv(out / f"value_{name}.csv", ["x", "V", "V_prime"], [V.grid, V.values[i], dv], REGIME_MAPPING, doc,
                   [f"state = {name}", f"b_star = {b[i]!r}"])
    n, err = (np.array(c) for c in zip(*sol.trace))
    _write_csv(out / "trace.csv", ["iteration", "sup_norm_change"], [n, err], REGIME_MAPPING, doc)
    payload = {
        "b_star": dict(zip(regime.states, b.b.tolist())),
        "fixed_point_residual": residual,
        "tol": tol,
        "diagnostics": sol.diagnostics,
        "grid": V.grid,
        "values": {name: V.values[i] for i, name in enumerate(regime.states)},
        "tail_slopes": dict(zip(regime.states, V.tail_slopes.tolist())),
        "meta": _meta(REGIME_MAPPING, doc),
    }
    _write_json(out / "solution.json", payload)
    print("b* = " + ", ".join(f"{k}: {v:.12g}" for k, v in payload["b_star"].items()) + f"  fixed-point residual {residual:.3e}")
    if residual >= tol:
        raise NumericalError("fixed-point residual exceeds tolerance", {"residual": residual})


def cmd_simulate(doc, out, solution_path=None):
    run = doc.get("run", {})
    cfg = _path_config(run)
    x = float(run.get("x", 0.0))
    analytic = None
    if "auxiliary" in doc:
        prob = config.auxiliary_from_dict(doc["auxiliary"])
        if "b" not in run:
            raise config.SchemaError("run/b", "simulate needs a threshold")
        b = float(run["b"])
        est = simulate_single_regime(prob, b, x, cfg)
        mapping = AUX_MAPPING
        if prob.scales.closed_form:
            analytic = float(_Barrier(prob, b).value(np.array([x]))[0])
        where = {"b": b, "x": x}
    else:
        regime = config.regime_from_dict(doc["regime"])
        i = config.state_index(regime.states, run.get("state", 0), "run/state")
        mapping = REGIME_MAPPING
        sol = None
        if solution_path is not None:
            with open(solution_path) as fh:
                sol = json.load(fh)
            b = [sol["b_star"][name] for name in regime.states]
        elif "b" in run:
            b = run["b"] if isinstance(run["b"], list) else [run["b"]] * regime.n_states
        else:
            raise config.SchemaError("run/b", "simulate needs a threshold vector or --solution")
        if len(b) != regime.n_states:
            raise config.SchemaError("run/b", "one threshold per state expected")
        est = simulate_regime(regime, ThresholdVector(b).b, x, i, cfg)
        if sol is not None:
            grid = np.array(sol["grid"])
            vals = np.array(sol["values"][regime.states[i]])
            analytic = float(np.interp(x, grid, vals)) if x <= grid[-1] else float(vals[-1] + sol["tail_slopes"][regime.states[i]] * (x - grid[-1]))
        where = {"b": list(map(float, b)), "x": x, "state": regime.states[i]}
    payload = {"estimate": est.as_dict(), "path_config": asdict(cfg), "where": where, "meta": _meta(mapping, doc)}
    _write_json(out / "estimate.json", payload)
    print(f"MC mean {est.mean:.10g} +/- {est.stderr:.3g}")
    if analytic is not None:
        diff = abs(analytic - est.mean)
        comp = {"analytic": analytic, "mc_mean": est.mean, "mc_stderr": est.stderr, "abs_diff": diff,
                "within_3_stderr": bool(diff < 3.0 * est.stderr), "where": where, "meta": _meta(mapping, doc)}
        _write_json(out / "comparison.json", comp)
        print(f"analytic {analytic:.10g}  |diff|/stderr = {diff / est.stderr:.3f}")


# ----------------------------------------------------------------- main ---
def build_parser():
    parser = argparse.ArgumentParser(prog="bailout", description="Optimal bail-out dividend thresholds.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("check", "validate the standing assumptions"),
        ("scale", "tabulate scale functions and run the self check"),
        ("solve-single", "optimal threshold of a single exponential-horizon problem"),
        ("solve-regime", "value iteration for a regime-switching model"),
        ("simulate", "Monte-Carlo NPV of a threshold strategy"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--model", required=True, help="JSON model document")
        p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./bailout_out)")
        p.add_argument("--tol", type=float)
        p.add_argument("--grid-points", dest="grid_points", type=int)
        p.add_argument("--x-max", dest="x_max", type=float)
        p.add_argument("--paths", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--dt", type=float)
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a document field, e.g. run.x=1.5 or regime.beta=1.4")
        if name == "simulate":
            p.add_argument("--solution", help="solution.json from solve-regime to compare against")
    return parser


def run(argv=None):
    args = build_parser().parse_args(argv)
    out = Path(args.out or os.environ.get(OUT_ENV, "bailout_out"))
    try:
        doc = config.load(args.model, args.overrides)
        doc = _resolved(doc, args)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "config.json", doc)
        if args.command == "check":
            cmd_check(doc, out)
        elif args.command == "scale":
            cmd_scale(doc, out)
        elif args.command == "solve-single":
            cmd_solve_single(doc, out)
        elif args.command == "solve-regime":
            cmd_solve_regime(doc, out)
        else:
            cmd_simulate(doc, out, args.solution)
    except config.SchemaError as exc:
        print(f"schema error at {exc.path}: {exc.message}", file=sys.stderr)
        return 2
    except AssumptionViolation as exc:
        print(f"assumption violated: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, BailoutError, ValueError, ArithmeticError) as exc:
        diag = getattr(exc, "diagnostics", {})
        print(f"numerical failure: {exc}", file=sys.stderr)
        if diag:
            print(json.dumps(diag, default=_json_default)[:2000], file=sys.stderr)
        return 4
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
