"""Command-line interface.

Results go to stdout as one JSON object per line; failures print a single
JSON error line to stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments as ex
from .config import load_config
from .errors import MfpinnError

EXIT_ERROR = 2
EXIT_INTERNAL = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(json.dumps({"error": "usage", "type": "ArgumentError", "message": message}), file=sys.stderr)
        sys.exit(EXIT_ERROR)


def _common(p: argparse.ArgumentParser) -> None:
    # SUPPRESS keeps a flag given before the subcommand from being reset by the subparser default
    p.add_argument("--config", default=argparse.SUPPRESS, help="TOML experiment config (defaults built in)")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="run only this seed")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory (overrides out_dir)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mfpinn", description="Multi-fidelity PINN heat-transfer experiments")
    _common(parser)
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("generate", help="write oracle fields and labeled datasets"))
    p = sub.add_parser("train", help="train one variant over the configured seeds")
    p.add_argument("variant", choices=ex.VARIANTS)
    p.add_argument("--labels", type=int, default=None, help="number of labeled high-fidelity points")
    _common(p)
    p = sub.add_parser("evaluate", help="metrics and error field of a saved model bundle")
    p.add_argument("bundle")
    _common(p)
    _common(sub.add_parser("reproduce-table2", help="labeled-data sweep for the vanilla PINN"))
    _common(sub.add_parser("reproduce-table3", help="all four variants over the configured seeds"))
    p = sub.add_parser("midpoint", help="mid-thickness temperature history of a saved model")
    p.add_argument("bundle")
    _common(p)
    return parser


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True), flush=True)


def _table(rows) -> None:
    for row in rows:
        _emit({"variant": row.variant, "labeled_n": row.labeled_n, "median_rel_l2": row.median,
               "rel_l2": [r.rel_l2 for r in row.runs], "seeds": [r.seed for r in row.runs]})


def run(args: argparse.Namespace) -> None:
    config = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        config = config.with_seeds([args.seed])
    if getattr(args, "out", None) is not None:
        config = replace(config, out_dir=args.out)
    out = Path(config.out_dir)
    cmd = args.command
    if cmd in ("generate", "train", "reproduce-table2", "reproduce-table3"):
        ex.write_config_json(config, out)
    if cmd == "generate":
        for p in ex.generate(config, out):
            _emit({"wrote": str(p)})
    elif cmd == "train":
        res = ex.run_experiment(config, args.variant, out, args.labels)
        for r in res.runs:
            _emit(r.as_dict())
        _table([res])
    elif cmd == "evaluate":
        _emit(ex.evaluate_bundle(config, args.bundle, getattr(args, "out", None)).as_dict())
    elif cmd == "reproduce-table2":
        _table(ex.reproduce_table2(config, out))
    elif cmd == "reproduce-table3":
        _table(ex.reproduce_table3(config, out))
    elif cmd == "midpoint":
        _emit({"wrote": str(ex.midpoint(config, args.bundle, getattr(args, "out", None)))})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except MfpinnError as exc:
        print(json.dumps({"error": exc.code, "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - report anything else in the same machine-readable form
        print(json.dumps({"error": "internal", "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_INTERNAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
