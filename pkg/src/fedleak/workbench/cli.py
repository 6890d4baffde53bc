"""Command line entry point: ``fedleak <verb> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..attacks import kdr_horizontal, kdr_vertical
from ..errors import FedLeakError
from ..recovery import constrained_dof, quadratic_dof
from .config import ScenarioConfig
from .report import ERROR, AttackReport, diff_reports
from .runner import run_scenario

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2
ATTACKS = ("vfl-linreg", "vfl-logreg", "hfl-linreg", "vfl-multi", "secureboost")


def _globals(suppress: bool) -> argparse.ArgumentParser:
    # subcommands repeat the global flags; SUPPRESS keeps them from
    # overwriting values given before the verb
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", help="scenario file (YAML)", **kw)
    g.add_argument("--seed", type=int, help="override the scenario seed", **kw)
    g.add_argument("--out", help="where to write the JSON report", **kw)
    g.add_argument("--verbose", "-v", action="store_true", **kw)
    return g


def _parser() -> argparse.ArgumentParser:
    common = _globals(True)
    p = argparse.ArgumentParser(prog="fedleak", parents=[_globals(False)],
                                description="Federated-learning inversion workbench")
    sub = p.add_subparsers(dest="verb", required=True)

    att = sub.add_parser("attack", parents=[common], help="train, attack and report")
    att.add_argument("kind", choices=ATTACKS)
    att.add_argument("--plots", help="directory for plot-ready CSV files")

    dof = sub.add_parser("dof", parents=[common], help="degrees of freedom of a victim matrix")
    dof.add_argument("m", type=int)
    dof.add_argument("n", type=int)
    dof.add_argument("--linear", action="store_true", help="a linear side AW = Z is available")

    kdr = sub.add_parser("kdr", parents=[common], help="known-data ratio")
    kdr.add_argument("setting", choices=("vertical", "horizontal"))
    kdr.add_argument("a", type=int, help="victim features (vertical) or victim samples")
    kdr.add_argument("b", type=int, help="samples (vertical) or features (horizontal)")

    diff = sub.add_parser("report-diff", parents=[common], help="compare two reports")
    diff.add_argument("left")
    diff.add_argument("right")
    diff.add_argument("--rtol", type=float, default=0.0)
    return p


def _attack(args) -> int:
    if not args.config:
        print("attack needs --config", file=sys.stderr)
        return EXIT_ERROR
    cfg = ScenarioConfig.load(args.config)
    if cfg.kind != args.kind:
        print(f"config describes {cfg.kind!r}, not {args.kind!r}", file=sys.stderr)
        return EXIT_ERROR
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.output.report = args.out
    if args.plots:
        cfg.output.plots = args.plots
    rep = run_scenario(cfg)
    print(rep.summary())
    if rep.status == ERROR:
        return EXIT_ERROR
    return EXIT_OK if rep.passed else EXIT_FAIL


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "attack":
            return _attack(args)
        if args.verb == "dof":
            f = constrained_dof if args.linear else quadratic_dof
            print(f(args.m, args.n))
            return EXIT_OK
        if args.verb == "kdr":
            val = (kdr_vertical(args.a, args.b) if args.setting == "vertical"
                   else kdr_horizontal(args.a, args.b))
            print(f"{val:.6f} ({100 * val:.1f}%)")
            return EXIT_OK
        if args.verb == "report-diff":
            left = AttackReport.from_json(Path(args.left).read_text(encoding="utf-8"))
            right = AttackReport.from_json(Path(args.right).read_text(encoding="utf-8"))
            diffs = diff_reports(left, right, args.rtol)
            for line in diffs:
                print(line)
            if not diffs:
                print("reports match (timing and output paths ignored)")
            return EXIT_FAIL if diffs else EXIT_OK
    except (FedLeakError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
