"""Command-line front end.

Every subcommand builds a report document (schema ``rgl/1``) plus a list of
table rows with a fixed column set, and exits with

* 0 when every expectation of the run is met,
* 1 on an unexpected violation, a failed reproduction or an I/O failure,
* 2 on usage or input errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np

from rgl import geometry, lab
from rgl.divergences import (
    alpha_divergence,
    appendix_a_eigenvalues,
    limit_at_zero,
    psi,
    sandwiched_log_eigenvalues,
    sandwiched_renyi,
    zero_limit_bounds,
)
from rgl.errors import NumericalError, RGLError
from rgl.states import DensityState, chart, make_rng, random_state, state_from_json

SCHEMA = "rgl/1"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class Outcome:
    """What a subcommand produced: the JSON body, CSV rows and the verdict."""

    command: str
    columns: list
    rows: list
    results: dict = field(default_factory=dict)
    ok: bool = True
    messages: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# argument helpers


def parse_grid(spec: str) -> list:
    """``start:stop:step`` (stop inclusive) or a comma-separated list."""
    try:
        if ":" in spec:
            start, stop, step = (float(x) for x in spec.split(":"))
            if step == 0 or (stop - start) * step < 0:
                raise UsageError(f"grid {spec!r} does not reach its stop value")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [float(round(start + k * step, 12)) for k in range(count)]
        return [float(x) for x in spec.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"malformed grid {spec!r}; expected start:stop:step or a comma list") from None


def _int_list(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


def _load_state(path: str) -> DensityState:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read state file {path}: {exc}") from None
    try:
        return state_from_json(doc)
    except RGLError as exc:
        raise UsageError(f"invalid state in {path}: {exc}") from None


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("RGL_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"RGL_SEED must be an integer, got {env!r}") from None


def _alphas(args, default: list) -> tuple:
    """Alpha values from --alpha / --alpha-grid; zero is dropped and reported."""
    if args.alpha_grid is not None:
        grid = parse_grid(args.alpha_grid)
    elif args.alpha is not None:
        grid = list(args.alpha)
    else:
        grid = list(default)
    skipped = [a for a in grid if a == 0]
    return [a for a in grid if a != 0], skipped


def _one_dim(args, default: int) -> int:
    if args.dim is None:
        return default
    if len(args.dim) != 1:
        raise UsageError("this subcommand takes a single --dim")
    return args.dim[0]


def _finite(x):
    return None if x is None or not np.isfinite(x) else float(x)


# ---------------------------------------------------------------------------
# subcommands


def cmd_divergence(args, seed) -> Outcome:
    if not (args.rho and args.sigma):
        raise UsageError("divergence needs --rho and --sigma state files")
    rho, sigma = _load_state(args.rho), _load_state(args.sigma)
    if rho.dim != sigma.dim:
        raise UsageError(f"dimension mismatch: rho {rho.dim}, sigma {sigma.dim}")
    alphas, skipped = _alphas(args, [0.5, 1.0, 2.0])
    if args.alpha is not None and skipped:
        raise UsageError("alpha = 0 is outside the domain; the one-sided limits are reported by appendix-a")
    rows = []
    for a in alphas:
        rows.append(
            {
                "alpha": a,
                "D_alpha": alpha_divergence(rho, sigma, a),
                "D_tilde": sandwiched_renyi(rho, sigma, a) if a != 1 else alpha_divergence(rho, sigma, 1.0),
                "psi": psi(rho, sigma, a),
            }
        )
    return Outcome("divergence", ["alpha", "D_alpha", "D_tilde", "psi"], rows, {"skipped_alpha": skipped})


def _appendix_a_data() -> dict:
    with resources.files("rgl").joinpath("data/appendix_a.json").open() as fh:
        return json.load(fh)


def cmd_appendix_a(args, seed) -> Outcome:
    doc = _appendix_a_data()
    if args.rho or args.sigma:
        rho = _load_state(args.rho) if args.rho else state_from_json(doc["rho"])
        sigma = _load_state(args.sigma) if args.sigma else state_from_json(doc["sigma"])
        expected = {}
    else:
        rho, sigma = state_from_json(doc["rho"]), state_from_json(doc["sigma"])
        expected = doc["expected"]
    tol = args.tol if args.tol is not None else 1e-4
    rows = []
    ok = True
    for side, key in (("above", "limit_above"), ("below", "limit_below")):
        est = limit_at_zero(rho, sigma, side)
        exp = expected.get(key)
        err = None if exp is None else abs(est.value - exp)
        passed = err is None or err <= tol
        ok &= passed
        rows.append({"quantity": key, "alpha": 0.0, "value": est.value, "expected": exp, "error": err, "pass": passed})
    lo, hi = zero_limit_bounds(rho, sigma)
    if expected:
        for a in doc["eigenvalue_alphas"]:
            got = np.exp(sandwiched_log_eigenvalues(rho, sigma, a))
            ref = appendix_a_eigenvalues(a)
            err = float(np.max(np.abs(got - ref)))
            passed = err <= 1e-10
            ok &= passed
            rows.append({"quantity": "eigenvalues", "alpha": a, "value": got.tolist(), "expected": ref.tolist(), "error": err, "pass": passed})
    results = {"bounds": [lo, hi], "tolerance": tol}
    for r in rows[:2]:
        inside = lo - 1e-9 <= r["value"] <= hi + 1e-9
        ok &= inside
    return Outcome("appendix-a", ["quantity", "alpha", "value", "expected", "error", "pass"], rows, results, ok)


def _seeded_pair(args, seed, n):
    if args.rho or args.sigma:
        rho = _load_state(args.rho) if args.rho else None
        sigma = _load_state(args.sigma) if args.sigma else rho
        rho = rho if rho is not None else sigma
        if rho.dim != sigma.dim:
            raise UsageError(f"dimension mismatch: rho {rho.dim}, sigma {sigma.dim}")
        return rho, sigma
    return random_state(n, make_rng(seed, 0), floor=0.05), random_state(n, make_rng(seed, 1), floor=0.05)


SCAN_COLUMNS = [
    "alpha",
    "D_alpha",
    "D_tilde",
    "psi",
    "metric_eig_min",
    "metric_eig_max",
    "duality_residual",
    "curvature_primal",
    "curvature_dual",
]


def cmd_scan_alpha(args, seed) -> Outcome:
    n = _one_dim(args, 2)
    rho, sigma = _seeded_pair(args, seed, n)
    default = [float(round(-2.0 + 0.25 * k, 12)) for k in range(17)]
    alphas, skipped = _alphas(args, default)
    ch = chart(rho.dim)
    rows = []
    for a in alphas:
        g = geometry.metric_matrix(rho, ch, a)
        eig = np.linalg.eigvalsh(g)
        rows.append(
            {
                "alpha": a,
                "D_alpha": alpha_divergence(rho, sigma, a),
                "D_tilde": sandwiched_renyi(rho, sigma, a) if a != 1 else alpha_divergence(rho, sigma, 1.0),
                "psi": psi(rho, sigma, a),
                "metric_eig_min": float(eig[0]),
                "metric_eig_max": float(eig[-1]),
                "duality_residual": float(geometry.duality_residuals(rho, ch, a).max()),
                "curvature_primal": geometry.curvature(rho, ch, a, "primal").max_abs_riemann,
                "curvature_dual": geometry.curvature(rho, ch, a, "dual").max_abs_riemann,
            }
        )
    ok = all(np.isfinite(v) for r in rows for v in r.values())
    return Outcome("scan-alpha", SCAN_COLUMNS, rows, {"skipped_alpha": skipped}, ok)


EXPERIMENT_COLUMNS = ["claim", "alpha", "beta", "dim", "which", "trials", "violations", "worst_margin", "degenerate", "errors"]


def _experiment_rows(report: lab.ExperimentReport) -> list:
    rows = []
    for c in report.cells:
        rows.append(
            {
                "claim": report.claim,
                "alpha": c.params.get("alpha"),
                "beta": c.params.get("beta"),
                "dim": c.params.get("dim"),
                "which": c.params.get("which"),
                "trials": c.trials,
                "violations": c.violations,
                "worst_margin": _finite(c.worst_margin),
                "degenerate": c.degenerate,
                "errors": c.errors,
            }
        )
    return rows


def _verdict(reports: list, expect_violation: bool) -> bool:
    ok = True
    for rep in reports:
        if rep.report_only:
            continue
        for c in rep.cells:
            ok &= (c.violations > 0) if expect_violation else (c.violations == 0)
    return ok


def _experiment_outcome(name, reports, args) -> Outcome:
    rows = [r for rep in reports for r in _experiment_rows(rep)]
    results = {"reports": [rep.to_json() for rep in reports]}
    ok = _verdict(reports, args.expect_violation)
    for rep in reports:
        if rep.counterexamples:
            results.setdefault("reverify_max_deviation", 0.0)
            results["reverify_max_deviation"] = max(results["reverify_max_deviation"], rep.reverify())
    return Outcome(name, EXPERIMENT_COLUMNS, rows, results, ok)


def _search_kw(args) -> dict:
    kw = {"threads": args.threads}
    if args.expect_violation:
        kw["stop_after"] = 1
    return kw


def cmd_monotone_f(args, seed) -> Outcome:
    betas = args.beta if args.beta is not None else [-1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0]
    dims = args.dim or ([2] if args.expect_violation else [2, 3, 4])
    trials = args.trials or (100000 if args.expect_violation else 1000)
    reports = [lab.operator_monotone_test(geometry.KernelFamily(b), dims, trials, seed, **_search_kw(args)) for b in betas]
    return _experiment_outcome("monotone-f", reports, args)


def cmd_monotone_metric(args, seed) -> Outcome:
    default = [-0.5, 0.3] if args.expect_violation else [-2.0, -1.0, 0.5, 1.0, 2.0, 5.0]
    alphas, _ = _alphas(args, default)
    trials = args.trials or (10000 if args.expect_violation else 500)
    # one report per alpha so that early stopping is per cell
    reports = [lab.metric_monotonicity_experiment([a], _one_dim(args, 2), trials, seed, **_search_kw(args)) for a in alphas]
    return _experiment_outcome("monotone-metric", reports, args)


def cmd_monotone_divergence(args, seed) -> Outcome:
    default = [-0.5, 0.3] if args.expect_violation else [2.0]
    alphas, _ = _alphas(args, default)
    trials = args.trials or (10000 if args.expect_violation else 1000)
    n = _one_dim(args, 2)
    if args.which == "conjecture":
        alphas, _ = _alphas(args, [-3.0, -2.0, -1.0])
        reports = [lab.negative_alpha_conjecture_experiment(alphas, n, trials, seed, threads=args.threads)]
    else:
        reports = [
            lab.divergence_monotonicity_experiment([a], n, trials, seed, which=args.which, **_search_kw(args)) for a in alphas
        ]
    return _experiment_outcome("monotone-divergence", reports, args)


def cmd_flatness(args, seed) -> Outcome:
    alphas, skipped = _alphas(args, [0.5, 1.0, 2.0])
    n = _one_dim(args, 2)
    states = args.trials or 10
    tol = args.tol if args.tol is not None else 5e-3
    ch = chart(n)
    rows = []
    for a in alphas:
        prim, dual = 0.0, 0.0
        for s in range(states):
            rho = random_state(n, make_rng(seed, s), floor=0.05)
            prim = max(prim, geometry.curvature(rho, ch, a, "primal").max_abs_riemann)
            dual = max(dual, geometry.curvature(rho, ch, a, "dual").max_abs_riemann)
        rows.append({"alpha": a, "dim": n, "states": states, "curvature_primal": prim, "curvature_dual": dual})
    ok = all(max(r["curvature_primal"], r["curvature_dual"]) <= tol for r in rows if r["alpha"] == 1.0)
    return Outcome(
        "flatness", ["alpha", "dim", "states", "curvature_primal", "curvature_dual"], rows, {"tolerance": tol, "skipped_alpha": skipped}, ok
    )


def cmd_positivity(args, seed) -> Outcome:
    alphas, _ = _alphas(args, [-3.0, -2.0, -1.0, -0.5, 0.3, 0.5, 1.0, 2.0, 5.0])
    rep = lab.positivity_experiment(alphas, _one_dim(args, 2), args.trials or 1000, seed, threads=args.threads)
    return _experiment_outcome("positivity", [rep], args)


def cmd_pinching_lemmas(args, seed) -> Outcome:
    dims = args.dim or [2, 3]
    trials = args.trials or 10000
    reports = [
        lab.pinching_lemma_experiment(trials, seed, dims=dims, threads=args.threads),
        lab.strict_convexity_spectra_oracle(trials, seed, dims=dims, threads=args.threads),
    ]
    return _experiment_outcome("pinching-lemmas", reports, args)


COMMANDS = {
    "divergence": cmd_divergence,
    "appendix-a": cmd_appendix_a,
    "scan-alpha": cmd_scan_alpha,
    "monotone-f": cmd_monotone_f,
    "monotone-metric": cmd_monotone_metric,
    "monotone-divergence": cmd_monotone_divergence,
    "flatness": cmd_flatness,
    "positivity": cmd_positivity,
    "pinching-lemmas": cmd_pinching_lemmas,
}


# ---------------------------------------------------------------------------
# output


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def report_document(outcome: Outcome, config: dict) -> dict:
    return _json_safe(
        {
            "schema": SCHEMA,
            "command": outcome.command,
            "config": config,
            "ok": outcome.ok,
            "columns": outcome.columns,
            "rows": outcome.rows,
            "results": outcome.results,
            "messages": outcome.messages,
        }
    )


def render_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (list, tuple)):
        return " ".join(_csv_cell(x) for x in v)
    return str(v)


def render_csv(columns: list, rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_csv_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def emit_report(outcome: Outcome, config: dict, fmt: str = "json", out: Optional[str] = None) -> str:
    """Render and write the report; returns the rendered text.

    Files are written atomically (temporary file + rename) so a failure
    never leaves partial output behind.
    """
    if fmt == "json":
        text = render_json(report_document(outcome, config))
    elif fmt == "csv":
        text = render_csv(outcome.columns, outcome.rows)
    else:
        raise UsageError(f"unknown format {fmt!r}")
    if out is None or out == "-":
        sys.stdout.write(text)
        return text
    directory = os.path.dirname(os.path.abspath(out))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".rgl-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return text


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rgl", description="Rescaled sandwiched Renyi divergences: experiments and reports.")
    p.add_argument("command", choices=sorted(COMMANDS), help="subcommand to run")
    p.add_argument("--alpha", type=float, action="append", help="alpha value (repeatable)")
    p.add_argument("--alpha-grid", help="alpha grid start:stop:step (inclusive) or comma list")
    p.add_argument("--beta", type=float, action="append", help="kernel parameter beta (repeatable)")
    p.add_argument("--dim", type=_int_list, help="dimension(s), comma separated")
    p.add_argument("--trials", type=int, help="trials per cell (flatness: number of random states)")
    p.add_argument("--seed", type=int, help="master seed (default: $RGL_SEED or 0)")
    p.add_argument("--tol", type=float, help="tolerance for reproduction checks")
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--format", choices=("json", "csv"), default=None)
    p.add_argument("--threads", type=int, help="worker threads (default: logical cores)")
    p.add_argument("--expect-violation", action="store_true", help="succeed only if every cell finds a violation")
    p.add_argument("--which", choices=("rescaled", "sandwiched", "conjecture"), default=None)
    p.add_argument("--rho", help="state file (JSON)")
    p.add_argument("--sigma", help="state file (JSON)")
    p.add_argument("--config", help="JSON file with default values for the flags above")
    return p


_CONFIG_KEYS = {
    "alpha", "alpha_grid", "beta", "dim", "trials", "seed", "tol", "out",
    "format", "threads", "expect_violation", "which", "rho", "sigma",
}


def _apply_config(args):
    if not args.config:
        return
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    unknown = set(cfg) - _CONFIG_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    for key, value in cfg.items():
        if key in ("alpha", "beta") and not isinstance(value, list):
            value = [value]
        if key == "dim" and not isinstance(value, list):
            value = [value]
        if key == "alpha_grid" and isinstance(value, list):
            value = ",".join(str(v) for v in value)
        current = getattr(args, key)
        if current is None or current is False:
            setattr(args, key, value)


def _validate(args):
    if args.trials is not None and args.trials < 1:
        raise UsageError("--trials must be >= 1")
    if args.threads is not None and args.threads < 1:
        raise UsageError("--threads must be >= 1")
    if args.dim is not None and any(n < 2 for n in args.dim):
        raise UsageError("--dim values must be >= 2")
    if args.tol is not None and not args.tol > 0:
        raise UsageError("--tol must be positive")
    if args.out and args.out != "-":
        directory = os.path.dirname(os.path.abspath(args.out))
        if not os.path.isdir(directory) or not os.access(directory, os.W_OK):
            raise OSError(f"output directory {directory} is not writable")


def _config_record(args, seed) -> dict:
    return {
        "alpha": args.alpha,
        "alpha_grid": args.alpha_grid,
        "beta": args.beta,
        "dim": args.dim,
        "trials": args.trials,
        "seed": seed,
        "tol": args.tol,
        "expect_violation": args.expect_violation,
        "which": args.which,
    }


def _glue_grid_values(argv: list) -> list:
    """Let ``--alpha-grid -1:1:0.5`` through argparse, which takes a leading dash for an option."""
    out, i = [], 0
    while i < len(argv):
        if argv[i] == "--alpha-grid" and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"--alpha-grid={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def run(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(_glue_grid_values(argv))
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        _apply_config(args)
        args.format = args.format or "json"
        args.which = args.which or "rescaled"
        args.threads = args.threads or os.cpu_count() or 1
        if args.format not in ("json", "csv"):
            raise UsageError(f"unknown format {args.format!r}")
        seed = _resolve_seed(args)
        _validate(args)
        outcome = COMMANDS[args.command](args, seed)
    except UsageError as exc:
        print(f"rgl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"rgl: numerical failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except RGLError as exc:
        print(f"rgl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"rgl: I/O error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    try:
        emit_report(outcome, _config_record(args, seed), args.format, args.out)
    except OSError as exc:
        print(f"rgl: I/O error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    if not outcome.ok:
        print(f"rgl: {args.command}: expectations not met", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
