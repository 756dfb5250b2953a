"""Command line entry point.

Exit codes: 0 when the run's verdict is PASS, 1 when it is FAIL, 2 for
configuration errors (including a violated contraction hypothesis).
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import experiments as E
from . import kernels
from .config import ConfigError, emit_report, load_config
from .solver import NoContraction, PathDivergence

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

COMMANDS = {
    "simulate": "simulate the eps ladder and the averaged equation; check the mean-square bound",
    "average": "closed-form averaged coefficients against long-window quadrature",
    "converge": "W2 between oscillating and averaged ensembles along the eps ladder",
    "continuity": "W2 along a schedule of perturbed drifts converging to the configured one",
    "convolution-check": "semigroup-weighted averages of F and G Q G^T along a fixed curve",
    "stationarity": "time invariance of the averaged solution's marginals",
    "check-constants": "contraction constants, moment constants and the moment bound",
    "verify-novikov": "Monte Carlo check of the stochastic-integral moment inequality",
    "verify-gronwall": "moment-difference curve against the Gronwall variant",
}


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 bits, got {text}")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochavg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version="stochavg 0.1.0")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", required=True, metavar="PATH", help="experiment configuration (JSON)")
        p.add_argument("--seed", type=_u64, metavar="U64", help="override the master seed")
        p.add_argument("--out", metavar="DIR", help="override the output directory")
        p.add_argument("--threads", type=_positive, default=1, metavar="N", help="worker threads for path simulation")
        p.add_argument("--backend", choices=("cython", "numpy"), help="kernel backend (default: best available)")
        if name == "check-constants":
            p.add_argument("--p", type=float, action="append", metavar="P", help="moment order (repeatable)")
            p.add_argument("--require", choices=("theta", "theta_prime", "both", "none"), default="both",
                           help="condition(s) that must hold for exit code 0")
    return parser


def _run(args, cfg):
    t, b = args.threads, args.backend
    cmd = args.command
    if cmd == "simulate":
        return E.run_simulate(cfg, t, b, out_dir=cfg.output_dir)
    if cmd == "average":
        return E.run_average_check(cfg)
    if cmd == "converge":
        return E.run_convergence(cfg, t, b)
    if cmd == "continuity":
        return E.run_coefficient_continuity(cfg, t, b)
    if cmd == "convolution-check":
        return E.run_convolution_from_config(cfg)
    if cmd == "stationarity":
        return E.run_stationarity_check(cfg, t, b)
    if cmd == "check-constants":
        req = {"both": ("theta", "theta_prime"), "none": ()}.get(args.require, (args.require,))
        return E.run_check_constants(cfg, tuple(args.p or (2.0, 4.0)), req)
    if cmd == "verify-novikov":
        return E.run_novikov_check(cfg, b)
    if cmd == "verify-gronwall":
        return E.run_gronwall_check(cfg, t, b)
    raise AssertionError(cmd)


def _print_summary(report: dict, out) -> None:
    print(f"{report['kind']}: {report['verdict']}", file=out)
    if report["kind"] == "check-constants":
        c = report["summary"]["constants"]
        for key in ("K", "delta", "trace_q", "theta", "theta_prime", "moment_bound_l2"):
            print(f"  {key:16s} {c[key]}", file=out)
        for p, v in c["theta_prime_p"].items():
            cp, cs = c["novikov_c_p"][p]
            print(f"  p={p:<6s} C_p={cp:.6g} c*={cs:.6g} theta'_p={v:.6g}", file=out)
    for name, table in report["tables"].items():
        if len(table["rows"]) <= 12:
            print(f"  [{name}] " + ", ".join(table["columns"]), file=out)
            for row in table["rows"]:
                print("    " + ", ".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in row), file=out)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.backend:
        try:
            kernels.set_backend(args.backend)
        except ImportError as exc:
            print(f"configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        cfg = load_config(args.config).with_overrides(args.seed, args.out)
        report = _run(args, cfg)
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for path, msg in exc.errors:
            print(f"  {path}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except NoContraction as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PathDivergence as exc:
        print(f"FAIL: {exc}", file=sys.stderr)
        return EXIT_FAIL
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    emit_report(report, out_dir)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(cfg.raw, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _print_summary(report, sys.stdout)
    return EXIT_PASS if report["verdict"] == "PASS" else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
