"""Command line entry point: tune, grid, random, noise-study, report.

Exit status is 0 on success. Failures print one JSON object
``{"error": <code>, "message": ...}`` on stderr and exit with:

    2  invalid configuration
    3  evaluation failure that stopped the run
    4  numerical failure in the GP
    1  anything else
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .evaluator import EvaluationError
from .gp import GPNumericalError
from .harness import (ConfigError, ExperimentConfig, compare_report,
                      format_noise_table, format_report, noise_study,
                      run_experiment, write_report)

EXIT_CONFIG, EXIT_EVALUATION, EXIT_NUMERICAL, EXIT_OTHER = 2, 3, 4, 1


def _add_common(p):
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--threshold", type=float, help="minimum words/minute")
    p.add_argument("--delta", type=float, help="constraint tolerance")
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--external-command", dest="external_command",
                   help="decoder command template with {d} {s} {n} {sentences}")
    p.add_argument("--full-set", dest="full_set_path")
    p.add_argument("--subset", dest="subset_path")
    p.add_argument("--full-set-words", dest="full_set_words", type=int)
    p.add_argument("--subset-words", dest="subset_words", type=int)
    p.add_argument("--timeout", dest="timeout_seconds", type=float)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="speedbo",
        description="Speed-constrained tuning of decoder parameters.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tune", help="constrained Bayesian optimization")
    _add_common(p)
    p.add_argument("--decoupled", action="store_true",
                   help="measure speed on the sentence subset separately")
    p.add_argument("--budget", type=int)
    p.add_argument("--n-init", dest="n_init", type=int)
    p.add_argument("--no-overhead", dest="record_overhead",
                   action="store_const", const=False,
                   help="record zero BO overhead (byte-identical traces)")

    p = sub.add_parser("grid", help="grid search baseline")
    _add_common(p)
    p.add_argument("--values-per-dim", dest="values_per_dim", type=int)

    p = sub.add_parser("random", help="random search baseline")
    _add_common(p)
    p.add_argument("--budget", type=int)

    p = sub.add_parser("noise-study", help="repeated speed measurements")
    _add_common(p)
    p.add_argument("--repeats", type=int, default=100)
    p.add_argument("--slow", type=int, nargs=3, default=[5, 100, 100])
    p.add_argument("--fast", type=int, nargs=3, default=[0, 1, 1])

    p = sub.add_parser("report", help="compare finished runs")
    p.add_argument("traces", nargs="+", help="trace files or run directories")
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--output", help="CSV path for the comparison table")
    return parser


_EXTERNAL_KEYS = ("full_set_path", "subset_path", "full_set_words",
                  "subset_words", "timeout_seconds")
_CONFIG_KEYS = ("threshold", "delta", "seed", "output_dir", "budget",
                "n_init", "values_per_dim", "record_overhead")


def config_from_args(args, method) -> ExperimentConfig:
    data = {}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
    data["method"] = method
    for key in _CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            data[key] = v
    if args.external_command:
        ext = dict(data.get("external") or {})
        ext["command"] = args.external_command
        data["external"] = ext
        data.pop("simulator", None)
    if data.get("external") is not None:
        for key in _EXTERNAL_KEYS:
            v = getattr(args, key, None)
            if v is not None:
                data["external"][key] = v
    return ExperimentConfig.from_dict(data)


def _fail(code, kind, message):
    print(json.dumps({"error": kind, "code": code, "message": message}),
          file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            table = compare_report(args.traces, args.epsilon)
            print(format_report(table))
            if args.output:
                write_report(table, args.output)
            return 0
        if args.command == "noise-study":
            cfg = config_from_args(args, "random")
            report = noise_study(cfg.make_evaluator(), args.slow, args.fast,
                                 args.repeats)
            print(format_noise_table(report))
            out = Path(cfg.output_dir)
            out.mkdir(parents=True, exist_ok=True)
            with open(out / "noise_study.json", "w") as fh:
                json.dump(report, fh, indent=2)
            return 0
        method = {"grid": "grid", "random": "random"}.get(args.command)
        if method is None:
            method = "bo-d" if args.decoupled else "bo-s"
        cfg = config_from_args(args, method)
        summary = run_experiment(cfg)
        print(json.dumps({k: summary[k] for k in
                          ("method", "x", "tuning_objective",
                           "measured_speed_wpm", "iterations",
                           "total_decode_seconds")}))
        return 0
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except EvaluationError as exc:
        return _fail(EXIT_EVALUATION, "evaluation", str(exc))
    except GPNumericalError as exc:
        return _fail(EXIT_NUMERICAL, "numerical", str(exc))
    except Exception as exc:  # noqa: BLE001
        logging.getLogger(__name__).exception("unexpected failure")
        return _fail(EXIT_OTHER, "internal", repr(exc))


if __name__ == "__main__":
    sys.exit(main())
