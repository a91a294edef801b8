"""Command-line entry point: ``crouchsim <subcommand> ...``.

Output directory precedence: ``--out`` > ``$CROUCHSIM_OUT`` > ``output_dir`` in the config.
Exit codes: 0 success, 2 configuration/construction error, 3 divergence or
settle failure, 4 analysis error (see :mod:`crouchsim.harness`).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import harness as H
from .config import ConfigError, load_config

logger = logging.getLogger("crouchsim")


def _config(args):
    cfg = load_config(args.config)
    changes = {}
    if getattr(args, "trials", None) is not None:
        changes["trials"] = args.trials
    if getattr(args, "seed", None) is not None:
        changes["sim"] = dataclasses.replace(cfg.sim, seed=args.seed)
    if changes:
        cfg = cfg.replace(**changes)
        cfg.validate()
    return cfg


def _number(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crouchsim", description="Spider-robot crouch sensing on an orb web.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, trials=True):
        sp.add_argument("--config", default="paper.default", help="shipped name, YAML path")
        sp.add_argument("--out", default=None)
        sp.add_argument("--seed", type=int, default=None)
        if trials:
            sp.add_argument("--trials", type=int, default=None)
            sp.add_argument("--jobs", type=int, default=1)
            sp.add_argument("--format", choices=("csv", "json"), default="csv")

    sp = sub.add_parser("build-web", help="build the web (and optionally the robot) and dump graph JSON")
    common(sp, trials=False)
    sp.add_argument("--with-robot", action="store_true")

    sp = sub.add_parser("run", help="settle, run the trials and analyse them")
    common(sp)

    sp = sub.add_parser("compare", help="overlay two run directories")
    sp.add_argument("run_a")
    sp.add_argument("run_b")
    sp.add_argument("--out", default=None)
    sp.add_argument("--prey-band", type=float, nargs=2, default=(5.0, 6.0))

    sp = sub.add_parser("sweep", help="repeat the run over one parameter")
    common(sp)
    sp.add_argument("--param", required=True, choices=H.SWEEP_PARAMETERS)
    sp.add_argument("--values", required=True, nargs="+", type=_number)

    sp = sub.add_parser("plot", help="SVG figures for a run or comparison directory")
    sp.add_argument("run_dir")
    sp.add_argument("--out", default=None)

    sp = sub.add_parser("pose-ratios", help="segment ratios from a landmark CSV")
    sp.add_argument("csv")
    sp.add_argument("--out", default=None)
    sp.add_argument("--frame-rate", type=float, default=100.0)
    sp.add_argument("--likelihood-min", type=float, default=0.95)
    sp.add_argument("--filter-cutoff", type=float, default=60.0)
    sp.add_argument("--max-gap", type=int, default=5)
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    return p


def _dispatch(args) -> int:
    if args.command == "build-web":
        path = H.cmd_build_web(_config(args), args.out, args.with_robot)
        print(path)
    elif args.command == "run":
        cfg = _config(args)
        manifest = H.cmd_run(cfg, args.out, args.jobs, args.format)
        print(json.dumps({"out": str(H.resolve_output(cfg, args.out)), "system_hash": manifest["system_hash"]}))
    elif args.command == "compare":
        doc = H.cmd_compare(args.run_a, args.run_b, args.out, tuple(args.prey_band))
        print(json.dumps({k: doc[k] for k in ("decision_a", "decision_b", "flipped")}))
    elif args.command == "sweep":
        rows = H.cmd_sweep(_config(args), args.param, args.values, args.out, args.jobs, args.format)
        for r in rows:
            print(f"{r['parameter']}={r['value']}: {r['status']} prey_peak_hz={r['prey_peak_hz']} {r['note']}")
    elif args.command == "plot":
        for path in H.cmd_plot(args.run_dir, args.out):
            print(path)
    elif args.command == "pose-ratios":
        ratios = H.cmd_pose_ratios(args.csv, args.out, args.frame_rate, args.likelihood_min, args.filter_cutoff,
                                   args.max_gap, args.format)
        for leg, r in ratios.items():
            print(leg, " ".join(f"{x:.4f}" for x in r))
    return H.EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (FileNotFoundError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return H.EXIT_CONFIG
    except Exception as exc:
        rec = H.error_record(exc)
        if rec["exit_code"] == 1:
            raise
        print(f"error: {rec['error']}: {rec['message']}", file=sys.stderr)
        out = getattr(args, "out", None)
        if args.command in ("run", "sweep"):
            try:
                out_dir = H.resolve_output(load_config(args.config), out)
                out_dir.mkdir(parents=True, exist_ok=True)
                H.write_json(out_dir / "error.json", rec)
            except Exception:  # the error report is best effort
                logger.debug("could not write error.json", exc_info=True)
        return rec["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
