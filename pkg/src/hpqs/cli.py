"""``hpqs`` command line: run, compare, selftest, prepare-data.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.  Failures
print one JSON object ``{"error": ..., "type": ..., "message": ...}`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

import yaml
from pydantic import ValidationError

from hpqs import __version__

EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int) -> None:
        super().__init__(message)
        self.kind, self.message, self.code = kind, message, code


def _config_error(exc: Exception) -> CliError:
    if isinstance(exc, KeyError):
        message = exc.args[0] if exc.args else str(exc)
    elif isinstance(exc, ValidationError):
        message = "; ".join(f"{'.'.join(map(str, e['loc'])) or '<root>'}: {e['msg']}" for e in exc.errors())
    else:
        message = str(exc)
    return CliError("config", str(message), EXIT_CONFIG)


def cmd_run(args) -> int:
    from hpqs.config import load_config
    from hpqs.runner import emit_comparison, run_dir, run_experiment

    try:
        config = load_config(args.config, args.set)
        if args.output_dir:
            config = config.model_copy(update={"output_dir": args.output_dir})
    except (ValidationError, KeyError, ValueError, yaml.YAMLError, FileNotFoundError) as exc:
        raise _config_error(exc) from exc
    record = run_experiment(config)
    _, table = emit_comparison([record])
    print(table)
    print(f"wrote {run_dir(config)}")
    return 0


def cmd_compare(args) -> int:
    from hpqs.runner import emit_comparison, load_record

    records = [load_record(p) for p in args.records]
    csv_text, table = emit_comparison(records)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            fh.write(csv_text)
    print(table)
    return 0


def cmd_selftest(args) -> int:
    from hpqs.selftest import run_selftest

    results = run_selftest(args.seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    failed = sum(not ok for _, ok, _ in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else EXIT_RUNTIME


def cmd_prepare_data(args) -> int:
    from hpqs.data import DATA_ENV, prepare_mnist_subset

    out = prepare_mnist_subset(args.dir, args.train_per_class)
    print(f"wrote MNIST IDX files to {out}; export {DATA_ENV}={out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hpqs", description="Hybrid PQC/NQS experiments")
    parser.add_argument("--version", action="version", version=f"hpqs {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment config over its seeds")
    run.add_argument("--config", required=True, help="YAML experiment file")
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a config entry, dotted keys for sections (repeatable)")
    run.add_argument("--output-dir", help="override output_dir")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="tabulate run records of one task")
    cmp_.add_argument("records", nargs="+", help="run directories or record.json files")
    cmp_.add_argument("--csv", help="also write the CSV table here")
    cmp_.set_defaults(func=cmd_compare)

    st = sub.add_parser("selftest", help="run the built-in invariant checks")
    st.add_argument("--seed", type=int, default=0)
    st.set_defaults(func=cmd_selftest)

    prep = sub.add_parser("prepare-data", help="write the bundled 5000-image MNIST subset as IDX files")
    prep.add_argument("dir")
    prep.add_argument("--train-per-class", type=int, default=400)
    prep.set_defaults(func=cmd_prepare_data)
    return parser


def _report(kind: str, exc_type: str, message: str) -> None:
    print(json.dumps({"error": kind, "type": exc_type, "message": message}), file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        _report(exc.kind, type(exc.__cause__).__name__ if exc.__cause__ else "CliError", exc.message)
        return exc.code
    except Exception as exc:  # noqa: BLE001 - surfaced as a structured message
        _report("runtime", type(exc).__name__, str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
