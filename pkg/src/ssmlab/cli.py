"""Command-line front end.

Subcommands:
  run <config>            execute an experiment config, write CSVs + summary JSON
  sweep <config> --set .. cartesian sweep over dotted-path overrides
  verify <suite>          run a named invariant suite, print its JSON report
  saddle-report           closed-form saddle report for given d and L
  adversarial             zero-loss / high-error construction report

Exit codes: 0 success, 1 config error, 2 numerical failure, 3 failed check.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .analysis import RegimeError, find_saddle
from .data import IllConditionedNodesError, adversarial_zero_loss, canonical_teacher
from .experiments import ConfigError, load_config, run_experiment, run_sweep
from .optimize import DivergenceError, IntegrationError
from .ssm_core import generalization_error, impulse_response, normalized_generalization_error
from .verify import SUITES, run_suite

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_CHECK_FAILED = 3

_BUNDLED = Path(__file__).parent / "configs"


def resolve_config_path(arg: str) -> Path:
    """Accept a filesystem path or the name of a bundled config."""
    p = Path(arg)
    if p.exists():
        return p
    candidates = [_BUNDLED / arg, _BUNDLED / f"{arg}.json"]
    for c in candidates:
        if c.exists():
            return c
    raise ConfigError("<file>", f"config not found: {arg}")


def _parse_set(entries) -> dict:
    overrides = {}
    for entry in entries or []:
        if "=" not in entry:
            raise ConfigError("<override>", f"expected key=v1,v2,... got {entry!r}")
        key, _, raw = entry.partition("=")
        values = []
        for piece in raw.split(","):
            try:
                values.append(json.loads(piece))
            except json.JSONDecodeError:
                values.append(piece)
        if not values:
            raise ConfigError(key, "empty override list")
        if key == "seeds" and len(set(values)) != len(values):
            raise ConfigError("seeds", "duplicate seed")
        overrides[key] = values
    return overrides


def cmd_run(args) -> int:
    config = load_config(resolve_config_path(args.config))
    summary = run_experiment(config, args.outdir)
    print(json.dumps({"name": summary["name"], "mean": summary["mean"]}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    path = resolve_config_path(args.config)
    with open(path) as fh:
        base_doc = json.load(fh)
    overrides = _parse_set(args.set)
    merged = run_sweep(base_doc, overrides, args.outdir)
    print(json.dumps(merged, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_verify(args) -> int:
    report = run_suite(args.suite)
    print(json.dumps(report, indent=2))
    return EXIT_OK if report["passed"] else EXIT_CHECK_FAILED


def cmd_saddle_report(args) -> int:
    report = find_saddle(args.d, args.L)
    print(json.dumps(report.as_dict(), indent=2))
    return EXIT_OK


def cmd_adversarial(args) -> int:
    teacher = canonical_teacher(args.d)
    adv = adversarial_zero_loss(teacher, args.kappa, args.d, args.eps)
    report = {
        "kappa": args.kappa,
        "d": args.d,
        "eps": args.eps,
        "nodes": adv.a.tolist(),
        "output_weights": adv.c.tolist(),
        "markov_student": impulse_response(adv, args.kappa + 2).tolist(),
        "markov_teacher": impulse_response(teacher, args.kappa + 2).tolist(),
        "gen_error_kappa": generalization_error(adv, teacher, args.kappa),
        "gen_error_kappa_plus_1": generalization_error(adv, teacher, args.kappa + 1),
        "normalized_gen_error_kappa_plus_1": normalized_generalization_error(adv, teacher, args.kappa + 1),
    }
    print(json.dumps(report, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssmlab", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config", help="path to a config JSON (or a bundled config name)")
    p.add_argument("--outdir", default=".", help="directory for CSV/JSON artifacts")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="cartesian sweep over config overrides")
    p.add_argument("config")
    p.add_argument("--set", action="append", metavar="PATH=V1,V2,...", help="override list for a dotted config path")
    p.add_argument("--outdir", default=".")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run an invariant suite")
    p.add_argument("suite", choices=sorted(SUITES))
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("saddle-report", help="closed-form saddle report")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--L", type=int, required=True)
    p.set_defaults(func=cmd_saddle_report)

    p = sub.add_parser("adversarial", help="zero-loss / high-error construction")
    p.add_argument("--kappa", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.set_defaults(func=cmd_adversarial)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, RegimeError, IllConditionedNodesError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, IntegrationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
