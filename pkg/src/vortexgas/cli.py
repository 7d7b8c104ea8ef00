"""Command line entry point: ``vortexgas <subcommand> [--config PATH] [--seed N] [--out DIR] [--workers N] [--set k=v]``.

Exit codes: 0 ok, 1 failed self-check or unexpected error, 2 invalid configuration,
3 budget or cap exceeded, 4 fit-domain failure. Failures also write one JSON line
to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, canonical_json, load_raw
from .errors import DivergentMomentError, InvalidSpecError, VortexGasError
from .estimators import (
    default_fit_range,
    ensemble_structure_function,
    fit_zeta,
    occupation_moment_scan,
    poisson_moment_check,
    single_filament_structure,
    symmetry_suite,
)
from .brownian import DtPolicy
from .gamma import analytic_moment_lower, analytic_moment_upper, theoretical_zeta, zeta_crossovers, zeta_table
from .kernel import invariant_suite
from .streams import RandomStreams

SUBCOMMANDS = ("structure", "zeta", "occupation", "validate-moments", "symmetry", "kernel-check", "analytic")
CSV_HEADER = ("estimator", "kind", "p", "epsilon", "mean", "stderr", "n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


class Run:
    """Artifact writer bound to one configuration."""

    def __init__(self, cfg: ExperimentConfig, out: Path, subcommand: str):
        self.cfg = cfg
        self.out = out
        self.subcommand = subcommand
        out.mkdir(parents=True, exist_ok=True)

    @property
    def meta(self) -> dict:
        return {
            "version": __version__,
            "subcommand": self.subcommand,
            "config_hash": self.cfg.hash,
            "seed": self.cfg.seed,
            "config": self.cfg.raw,
        }

    def write_json(self, name: str, payload: dict) -> Path:
        path = self.out / name
        body = {"meta": self.meta, **payload}
        path.write_text(json.dumps(_jsonable(body), indent=2, sort_keys=True) + "\n")
        return path

    def write_csv(self, name: str, rows) -> Path:
        buf = io.StringIO()
        buf.write(f"# vortexgas {__version__}\n")
        buf.write(f"# subcommand: {self.subcommand}\n")
        buf.write(f"# config_hash: {self.cfg.hash}\n")
        buf.write(f"# seed: {self.cfg.seed}\n")
        buf.write(f"# timestamp: {time.strftime('%Y-%m-%dT%H:%M:%S%z')}\n")
        buf.write(f"# config: {canonical_json(self.cfg.raw)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            estimator, kind, p, eps, mean, se, n = r
            w.writerow([estimator, kind, _number(p), repr(float(eps)), repr(float(mean)), repr(float(se)), int(n)])
        path = self.out / name
        path.write_text(buf.getvalue())
        return path


def _streams(cfg, name):
    return RandomStreams(cfg.seed).spawn(name)


def _structure_estimates(cfg: ExperimentConfig, estimators):
    est = []
    common = dict(kernel_spec=cfg.mollifier, dt_policy=cfg.dt_policy, batches=cfg.batches, workers=cfg.workers)
    if "single_filament" in estimators:
        est += single_filament_structure(
            cfg.gamma, cfg.eta, cfg.ps, cfg.epsilons, cfg.e, cfg.kinds, cfg.budget, _streams(cfg, "single_filament"),
            x=cfg.x, proposal=cfg.proposal, **common,
        )
    if "full_field" in estimators:
        est += ensemble_structure_function(
            cfg.gamma, cfg.window, cfg.x, cfg.e, cfg.epsilons, cfg.ps, cfg.kinds, cfg.realizations,
            _streams(cfg, "full_field"), max_expected_count=cfg.max_expected_count, **common,
        )
    return est


def _fits(cfg, estimates):
    rng = cfg.fit_range or default_fit_range(cfg.epsilons, cfg.eta, cfg.gamma.l_max)
    out = []
    for est in estimates:
        fit = fit_zeta(est, rng)
        rep = fit.report(est.p, theoretical_zeta(cfg.gamma, est.p))
        rep.update({"kind": est.kind, "estimator": est.estimator})
        out.append(rep)
    return out


def cmd_structure(cfg, run: Run, args):
    estimators = cfg.raw.get("structure", {}).get("estimators", ["single_filament"])
    for name in estimators:
        if name not in ("single_filament", "full_field"):
            raise InvalidSpecError(f"unknown estimator {name!r}")
    estimates = _structure_estimates(cfg, estimators)
    run.write_csv("structure.csv", [r for est in estimates for r in est.rows()])
    fits = _fits(cfg, estimates)
    run.write_json("fits.json", {"fits": fits})
    for f in fits:
        print(f"{f['estimator']:>15} {f['kind']:>14} p={f['p']}: zeta_hat={f['zeta_hat']:.4f} +- {f['stderr']:.4f}"
              f" (theory {f['zeta_theory']:.4f})")
    return 0


def cmd_zeta(cfg, run: Run, args):
    estimators = cfg.raw.get("structure", {}).get("estimators", ["single_filament"])
    estimates = _structure_estimates(cfg, estimators)
    run.write_csv("structure.csv", [r for est in estimates for r in est.rows()])
    fits = _fits(cfg, estimates)
    table = zeta_table(cfg.gamma, cfg.ps)
    run.write_json("zeta.json", {"fits": fits, "theory": table})
    for f in fits:
        print(f"p={f['p']} {f['kind']}: zeta_hat={f['zeta_hat']:.4f} +- {f['stderr']:.4f} theory={f['zeta_theory']:.4f}")
    return 0


def cmd_occupation(cfg, run: Run, args):
    o = cfg.raw.get("occupation", {})
    report = occupation_moment_scan(
        o["ells"], o["Ts"], o["p"], o.get("R0"), cfg.budget, _streams(cfg, "occupation"),
        shifts=int(o.get("shifts", 256)),
        dt_policy=DtPolicy(cfg.dt_policy.resolution_scale, cfg.dt_policy.dt_min, int(o.get("min_steps", 64))),
        batches=cfg.batches, workers=cfg.workers,
    )
    rows = [("occupation", f"T={c['T']!r}", int(p), c["ell"], m["mean"], m["stderr"], m["n"])
            for c in report["cells"] for p, m in c["moments"].items()]
    run.write_csv("occupation.csv", rows)
    run.write_json("occupation.json", report)
    for c in report["cells"]:
        if "mean_ratio" in c:
            print(f"ell={c['ell']:g} T={c['T']:g}: mean/exact = {c['mean_ratio']:.4f} (z={c['mean_z']:+.2f})")
    for row in report["ell_exponents"]:
        for f in row["fits"]:
            print(f"T={row['T']:g} p={f['p']:g}: ell-exponent {f['exponent']:.3f} +- {f['stderr']:.3f}")
    for row in report["T_exponents"]:
        for f in row["fits"]:
            print(f"ell={row['ell']:g} p={f['p']:g}: T-exponent {f['exponent']:.3f} +- {f['stderr']:.3f}")
    return 0


def cmd_validate_moments(cfg, run: Run, args):
    po = cfg.raw.get("poisson", {})
    report = poisson_moment_check(
        cfg.gamma, cfg.window, po.get("phi"), int(po.get("p_max", 4)), cfg.realizations,
        _streams(cfg, "poisson"), kernel_spec=cfg.mollifier, dt_policy=cfg.dt_policy,
        nu_samples=po.get("nu_samples"), batches=cfg.batches, workers=cfg.workers,
        max_expected_count=cfg.max_expected_count,
    )
    rows = [("poisson_mc", "phi", r["p"], 0.0, r["mc_moment"], r["mc_stderr"], report["realizations"])
            for r in report["moments"]]
    rows += [("poisson_formula", "phi", r["p"], 0.0, r["predicted"], r["predicted_stderr"], report["nu_samples"])
             for r in report["moments"]]
    run.write_csv("poisson_moments.csv", rows)
    run.write_json("poisson_moments.json", report)
    for r in report["moments"]:
        print(f"p={r['p']}: MC {r['mc_moment']:.6g} +- {r['mc_stderr']:.2g}  formula {r['predicted']:.6g}"
              f" +- {r['predicted_stderr']:.2g}  z={r['z']:+.2f}")
    return 0


def cmd_symmetry(cfg, run: Run, args):
    sy = cfg.raw.get("symmetry", {})
    report = symmetry_suite(
        cfg.gamma, cfg.window, cfg.x, sy.get("v", (0.3, 0.2, 0.1)), cfg.e, float(sy.get("eps", 0.1)),
        cfg.realizations, _streams(cfg, "symmetry"), kernel_spec=cfg.mollifier, dt_policy=cfg.dt_policy,
        batches=cfg.batches, workers=cfg.workers, max_expected_count=cfg.max_expected_count,
    )
    rows = [("symmetry", t["name"], 0, 0.0, t["mean"], t["stderr"], report["realizations"]) for t in report["tests"]]
    run.write_csv("symmetry.csv", rows)
    run.write_json("symmetry.json", report)
    for t in report["tests"]:
        print(f"{t['name']:>30}: z={t['z']:+.2f} {'ok' if t['passed'] else 'FAIL'}")
    return 0


def cmd_kernel_check(cfg, run: Run, args):
    results = invariant_suite(cfg.mollifier, seed=cfg.seed)
    ok = all(r["passed"] for r in results)
    run.write_json("kernel_check.json", {"mollifier": cfg.mollifier.kind, "checks": results, "all_passed": ok})
    for r in results:
        print(f"{r['name']:>28}: {r['value']:.3e} <= {r['tolerance']:.1e} {'ok' if r['passed'] else 'FAIL'}")
    if not ok:
        _report_error(1, "kernel_check_failed", "one or more kernel invariants failed")
        return 1
    return 0


def _number(v):
    v = float(v)
    return int(v) if v.is_integer() else v


def cmd_analytic(cfg, run: Run, args):
    an = cfg.raw.get("analytic", {})
    ps = [_number(p) for p in an.get("p", cfg.ps)]
    eps_grid = an.get("epsilons") or cfg.epsilons
    table = zeta_table(cfg.gamma, ps)
    rows = []
    moments = []
    for p in ps:
        for eps in eps_grid:
            try:
                lo = analytic_moment_lower(cfg.gamma, p, eps)
                hi = analytic_moment_upper(cfg.gamma, p, eps)
            except DivergentMomentError:
                moments.append({"p": p, "epsilon": eps, "lower": None, "upper": None, "divergent": True})
                continue
            rows.append(("analytic_lower", "gamma", p, eps, lo, 0.0, 0))
            rows.append(("analytic_upper", "gamma", p, eps, hi, 0.0, 0))
            moments.append({"p": p, "epsilon": eps, "lower": lo, "upper": hi})
    run.write_csv("analytic.csv", rows)
    run.write_json("analytic.json", {"zeta": table, "crossovers": zeta_crossovers(cfg.gamma), "moments": moments})
    print("p     zeta_p   active_atom")
    for r in table:
        print(f"{r['p']:<5} {r['zeta_theory']:.4f}   {r['active_atom']}")
    return 0


HANDLERS = {
    "structure": cmd_structure,
    "zeta": cmd_zeta,
    "occupation": cmd_occupation,
    "validate-moments": cmd_validate_moments,
    "symmetry": cmd_symmetry,
    "kernel-check": cmd_kernel_check,
    "analytic": cmd_analytic,
}


def _report_error(code: int, reason: str, message: str):
    sys.stderr.write(json.dumps({"status": "error", "exit_code": code, "reason": reason, "message": message}) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vortexgas", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"vortexgas {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="JSON configuration file")
        p.add_argument("--seed", type=int, default=None, help="64-bit master seed (overrides mc.seed)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--workers", type=int, default=None, help="worker processes (overrides mc.workers)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-path override, repeatable")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code not in (0, None):
            _report_error(2, "usage", "invalid command line")
            return 2
        return 0
    try:
        raw = load_raw(args.config, args.overrides, args.seed, args.workers)
        cfg = ExperimentConfig.from_raw(raw)
        return HANDLERS[args.subcommand](cfg, Run(cfg, args.out, args.subcommand), args)
    except VortexGasError as exc:
        _report_error(exc.exit_code, exc.reason, str(exc))
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001
        _report_error(1, "internal_error", f"{type(exc).__name__}: {exc}")
        return 1


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
