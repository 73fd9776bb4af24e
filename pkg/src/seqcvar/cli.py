"""Command-line entry point: ``seqcvar <subcommand> [options]``.

Exit codes: 0 success, 1 a verification check failed, 2 invalid configuration
or unwritable output.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .experiments import (METHODS, ConfigError, dump_solution, resolve_config, run_chain_stages,
                          run_navigation, run_risk_discounting, run_verify)

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG = 0, 1, 2


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _u64(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqcvar", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"seqcvar {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, experiment_flag=False):
        p.add_argument("--config", help="JSON config file; flags override its fields")
        p.add_argument("--out", help="output directory (file for dump-solution)")
        p.add_argument("--seed", type=_u64, help="base rollout seed; rollout i uses seed + i")
        p.add_argument("--alpha", type=_float_list, help="comma-separated risk levels in (0, 1]")
        p.add_argument("--method", type=_str_list, help=f"comma-separated subset of {','.join(METHODS)}")
        if experiment_flag:
            p.add_argument("--experiment", default="navigation",
                           choices=("navigation", "chain-stages", "risk-discounting"),
                           help="experiment whose environment is solved")
        else:
            p.add_argument("--dump-solution", metavar="DIR",
                           help="also write each solved table as JSON into DIR")

    for name, text in (("navigation", "gridworld routes, visit frequencies and tracked risk levels"),
                       ("chain-stages", "reward-chain start values against distance"),
                       ("risk-discounting", "hazard-chain values and implied discount factors"),
                       ("verify", "oracle and invariant checks with a JSON report")):
        common(sub.add_parser(name, help=text))
    common(sub.add_parser("dump-solution", help="solve one (method, alpha) and write it as JSON"),
           experiment_flag=True)
    return parser


def _load_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError([f"config: cannot read {path}: {exc.strerror}"])
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config: {path} is not valid JSON ({exc.msg} at line {exc.lineno})"])
    if not isinstance(data, dict):
        raise ConfigError([f"config: {path} must hold a JSON object"])
    return data


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    experiment = args.experiment if args.command == "dump-solution" else args.command
    try:
        file_config = _load_file(args.config)
        overrides = {"out": args.out, "seed": args.seed, "alphas": args.alpha, "methods": args.method}
        if args.command == "dump-solution":
            overrides["out"] = None
            if not args.out:
                raise ConfigError(["out: dump-solution needs --out <file>"])
            if not (args.alpha and args.method and len(args.alpha) == 1 and len(args.method) == 1):
                raise ConfigError(["alpha/method: dump-solution needs exactly one of each"])
            file_config = {k: v for k, v in file_config.items() if k != "experiment"}
        cfg = resolve_config(experiment, file_config, overrides)
        if args.command == "dump-solution":
            dump_solution(cfg, args.method[0], args.alpha[0], args.out)
            print(f"wrote {args.out}")
            return EXIT_OK
        if args.command == "verify":
            report = run_verify(cfg)
            for c in report["checks"]:
                flag = "PASS" if c["passed"] else ("FAIL" if c["gating"] else "KNOWN-GAP")
                print(f"{flag:9s} {c['name']}: error {c['error']:.3g} (tol {c['tolerance']:g})")
            return EXIT_OK if report["passed"] else EXIT_CHECK_FAILED
        runner = {"navigation": run_navigation, "chain-stages": run_chain_stages,
                  "risk-discounting": run_risk_discounting}[args.command]
        runner(cfg, dump_dir=args.dump_solution)
        print(f"wrote {cfg.out}")
        return EXIT_OK
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
