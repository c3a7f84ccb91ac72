"""Command-line driver: ``blowlab {ode,bounds,classify,pde,verify}``.

Exit codes: 0 success, 1 invariant failure, 2 validation error,
3 inconclusive or unsupported.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

import numpy as np

from . import bounds as bnd
from .coeffs import ExprError
from .companion import (
    Bracket,
    InconclusiveBracket,
    PipelineInconsistency,
    blow_up_bracket,
    comparison_check,
    power_product_identity,
    solve as companion_solve,
)
from .config import ConfigError, ExperimentConfig, load_config
from .pde import (
    domination_margin,
    far_field_error,
    picard_validate,
    run as pde_run,
    space_infinity_report,
)

log = logging.getLogger("blowlab")

EXIT_OK, EXIT_INVARIANT, EXIT_VALIDATION, EXIT_INCONCLUSIVE = 0, 1, 2, 3


def _clean(obj):
    """JSON-safe copy: non-finite floats become strings, numpy scalars become floats."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(report: dict) -> str:
    return json.dumps(_clean(report), indent=2, sort_keys=True) + "\n"


def _emit(report: dict, out_dir: Optional[str], name: str) -> None:
    text = dumps(report)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, name), "w") as fh:
            fh.write(text)
    sys.stdout.write(text)


def _bracket_dict(res) -> dict:
    if isinstance(res, Bracket):
        return {"status": "BlowUp", "bracket": [res.t_lo, res.t_hi], "width": res.width,
                "time_error": res.time_error}
    return {"status": "Global", "horizon_reached": res.horizon_reached, "evidence": res.evidence}


# --------------------------------------------------------------------------
# subcommands


def cmd_ode(cfg: ExperimentConfig, out_dir: Optional[str]) -> int:
    prob = cfg.companion
    report = {"command": "ode", "config": cfg.resolved}
    traj = companion_solve(prob, cfg.ode["horizon"], rtol=cfg.ode["rtol"])
    report["trajectory"] = {"status": traj.status.kind, "n_steps": traj.n_steps,
                            "n_rejected": traj.n_rejected, "t_last": float(traj.t[-1])}
    code = EXIT_OK
    try:
        report["result"] = _bracket_dict(blow_up_bracket(prob, cfg.ode["horizon"], cfg.ode["rtol"]))
    except InconclusiveBracket as exc:
        report["result"] = {"status": "Inconclusive", "reason": str(exc)}
        code = EXIT_INCONCLUSIVE
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        traj.to_csv(os.path.join(out_dir, "trajectory.csv"))
    _emit(report, out_dir, "ode_report.json")
    return code


def cmd_bounds(cfg: ExperimentConfig, out_dir: Optional[str]) -> int:
    prob = cfg.companion
    report = {"command": "bounds", "config": cfg.resolved}
    try:
        report.update(bnd.all_verdicts(prob, override=cfg.bounds.get("case")))
    except ValueError as exc:
        report["error"] = str(exc)
        _emit(report, out_dir, "bounds_report.json")
        return EXIT_VALIDATION
    if cfg.bounds.get("audit"):
        try:
            report["companion"] = _bracket_dict(blow_up_bracket(prob, cfg.ode["horizon"], cfg.ode["rtol"]))
        except InconclusiveBracket as exc:
            report["companion"] = {"status": "Inconclusive", "reason": str(exc)}
    _emit(report, out_dir, "bounds_report.json")
    return EXIT_INCONCLUSIVE if report["case"] == "unsupported" else EXIT_OK


def cmd_classify(cfg: ExperimentConfig, out_dir: Optional[str]) -> int:
    report = {"command": "classify", "config": cfg.resolved}
    if not (cfg.h1.is_constant and cfg.h2.is_constant):
        report["error"] = "classification needs constant h1 and h2"
        _emit(report, out_dir, "classify_report.json")
        return EXIT_VALIDATION
    P = cfg.exponents
    report["classification"] = bnd.corollary_classify(P)
    report["determinant"] = (P.p11 - 1) * (P.p22 - 1) - P.p12 * P.p21
    _emit(report, out_dir, "classify_report.json")
    return EXIT_OK


def cmd_pde(cfg: ExperimentConfig, out_dir: Optional[str]) -> int:
    report = {"command": "pde", "config": cfg.resolved}
    try:
        r = pde_run(cfg.pde_config())
    except FloatingPointError as exc:
        report["error"] = str(exc)
        _emit(report, out_dir, "pde_report.json")
        return EXIT_INVARIANT
    report.update({"status": r.status, "t_last": r.t_last, "L": r.grid.L, "n_steps": r.n_steps,
                   "n_rejected": r.n_rejected, "domination_margin": domination_margin(r),
                   "snapshots": [s.row() for s in r.snapshots]})
    if r.status == "BlowUpDetected":
        report["space_infinity"] = space_infinity_report(r)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        r.to_csv(os.path.join(out_dir, "snapshots.csv"))
        r.dump_fields(os.path.join(out_dir, "fields.csv"))
    _emit(report, out_dir, "pde_report.json")
    return EXIT_INCONCLUSIVE if r.status == "BudgetExceeded" else EXIT_OK


# --------------------------------------------------------------------------
# verification suites


def lemma1_fuzz(n: int, seed: int) -> float:
    """Worst ``|lhs - rhs| / (1 + |lhs|)`` over ``n`` seeded random tuples."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        a, b, c, d = rng.uniform(0.1, 10.0, 4)
        p, q = rng.uniform(0.0, 4.0, 2)
        lhs, rhs = power_product_identity(a, b, c, d, p, q)
        worst = max(worst, abs(lhs - rhs) / (1 + abs(lhs)))
    return worst


def _suite_pde(cfg: ExperimentConfig) -> dict:
    r = pde_run(cfg.pde_config())
    v = cfg.verify
    dom = domination_margin(r)
    far = far_field_error(r, v["track_until"])
    return {
        "domination": {"passed": dom <= v["domination_tol"], "value": dom, "tolerance": v["domination_tol"]},
        "far_field_tracking": {"passed": far <= v["far_field_tol"], "value": far,
                               "tolerance": v["far_field_tol"], "t_max": v["track_until"], "L": r.grid.L},
    }


def _suite_comparison(cfg: ExperimentConfig) -> dict:
    prob = cfg.companion
    horizon = cfg.verify["comparison_horizon"]
    if horizon is None:
        try:
            res = blow_up_bracket(prob, cfg.ode["horizon"], cfg.ode["rtol"])
            horizon = 0.5 * res.t_lo if isinstance(res, Bracket) else 2.0
        except InconclusiveBracket:
            horizon = 1.0
    out = {}
    ok = True
    try:
        for direction in ("super", "sub"):
            rep = comparison_check(prob, direction, horizon)
            out[direction] = {"integral_margin": rep.integral_margin,
                              "pointwise_margin": rep.pointwise_margin}
            ok = ok and rep.passed
    except PipelineInconsistency as exc:
        return {"comparison": {"passed": False, "error": str(exc), "horizon": horizon}}
    traj = companion_solve(prob, horizon, t_eval=np.linspace(0, horizon, 201)[1:-1])
    slack = bnd.inequality_slack(prob, traj)
    slack_ok = all(s >= -1e-8 for s in slack.values())
    return {"comparison": {"passed": ok, "horizon": horizon, **out},
            "comparison_constants": {"passed": slack_ok, "slack": slack}}


def _suite_lemma1(cfg: ExperimentConfig) -> dict:
    worst = lemma1_fuzz(cfg.verify["lemma1_samples"], cfg.seed)
    return {"lemma1": {"passed": worst <= 1e-8, "value": worst, "samples": cfg.verify["lemma1_samples"],
                       "seed": cfg.seed}}


def _suite_picard(cfg: ExperimentConfig) -> dict:
    v = cfg.verify
    pc = cfg.pde_config(N=v["picard_N"])
    rep = picard_validate(pc, v["picard_T_short"], v["picard_iterations"])
    passed = rep.contraction_ok and not rep.diverging and rep.discrepancy <= v["picard_tol"]
    return {"picard": {"passed": passed, "value": rep.discrepancy, "tolerance": v["picard_tol"],
                       "T_short": rep.T_short, "contraction_ok": rep.contraction_ok,
                       "distances": rep.distances}}


SUITES: list[tuple[str, Callable]] = [
    ("pde", _suite_pde),
    ("comparison", _suite_comparison),
    ("lemma1", _suite_lemma1),
    ("picard", _suite_picard),
]


def cmd_verify(cfg: ExperimentConfig, out_dir: Optional[str], workers: int = 1) -> int:
    def guarded(fn):
        try:
            return fn(cfg)
        except Exception as exc:  # a crashing suite is reported as a failed check
            log.exception("suite %s crashed", fn.__name__)
            return {fn.__name__.removeprefix("_suite_"): {"passed": False, "error": f"{type(exc).__name__}: {exc}"}}

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(guarded, [fn for _, fn in SUITES]))
    checks = {}
    for r in results:
        checks.update(r)
    failed = [name for name, c in checks.items() if not c["passed"]]
    report = {"command": "verify", "config": cfg.resolved, "checks": checks, "failed": failed}
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "verify_report.json"), "w") as fh:
            fh.write(dumps(report))
    width = max(len(n) for n in checks)
    for name, c in checks.items():
        detail = f"value={c['value']:.3e}" if isinstance(c.get("value"), float) else c.get("error", "")
        print(f"{name:<{width}}  {'PASS' if c['passed'] else 'FAIL'}  {detail}".rstrip())
    if failed:
        print("failed: " + ", ".join(failed))
    return EXIT_INVARIANT if failed else EXIT_OK


COMMANDS = {"ode": cmd_ode, "bounds": cmd_bounds, "classify": cmd_classify, "pde": cmd_pde,
            "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blowlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment config (defaults built in)")
        p.add_argument("--out", help="output directory for reports and CSV files")
        p.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
        p.add_argument("--workers", type=int, default=1, help="concurrent verification suites")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.seed)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except ExprError as exc:
        print(f"config error: parse error at byte {exc.offset}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        if args.command == "verify":
            return cmd_verify(cfg, args.out, args.workers)
        return COMMANDS[args.command](cfg, args.out)
    except PipelineInconsistency as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
