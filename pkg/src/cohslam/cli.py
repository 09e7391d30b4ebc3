"""Command line entry point: ``cohslam {simulate,run,crlb,mc,validate}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load

EXIT_USAGE = 2
EXIT_FAIL = 1


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cohslam", description="Coherent multipath SLAM toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH")
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--out", default="out", metavar="DIR")
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("validate", parents=[common], help="check a config file")
    s = sub.add_parser("simulate", parents=[common], help="write truth and observations")
    s.add_argument("--run", type=int, default=0)
    r = sub.add_parser("run", parents=[common], help="one SLAM run on simulated data")
    r.add_argument("--variant", choices=("nzm", "zm"), default="nzm")
    r.add_argument("--run", type=int, default=0)
    c = sub.add_parser("crlb", parents=[common], help="PEB/MEB curves")
    c.add_argument("--mode", choices=("coherent", "noncoherent", "both"), default="both")
    m = sub.add_parser("mc", parents=[common], help="Monte-Carlo batch with metrics")
    m.add_argument("--variant", choices=("nzm", "zm", "both"), default="nzm")
    m.add_argument("--runs", type=int, default=None)
    m.add_argument("--steps", type=int, default=None)
    return p


def _emit(kind: str, **fields) -> None:
    print(json.dumps({"status": kind, **fields}, sort_keys=True, default=float))


def _scenario(args):
    scn = load(args.config)
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        scn.seed = int(args.seed)
    return scn


def cmd_validate(args) -> int:
    scn = _scenario(args)
    _emit("ok", config=str(args.config), anchors=scn.n_pa, surfaces=scn.n_surfaces, steps=scn.steps)
    return 0


def cmd_simulate(args) -> int:
    from .dataset import generate_dataset
    from .harness import write_dataset

    scn = _scenario(args)
    ds = generate_dataset(scn, args.run)
    write_dataset(ds, args.out)
    _emit("ok", out=str(args.out), steps=ds.steps, noise_variance=ds.eta)
    return 0


def cmd_run(args) -> int:
    from .dataset import generate_dataset
    from .files import write_run
    from .harness import run_slam, write_dataset
    from .metrics import position_errors

    scn = _scenario(args)
    ds = generate_dataset(scn, args.run)
    rec = run_slam(scn, ds, args.variant)
    out = Path(args.out)
    write_dataset(ds, out)
    write_run(out, rec, ds)
    if rec.aborted:
        _emit("error", message=rec.aborted)
        return EXIT_FAIL
    err = position_errors(rec, ds)
    _emit("ok", out=str(out), steps=len(rec.steps), final_error_m=float(err[-1]),
          rmse_m=float(np.sqrt(np.mean(err ** 2))))
    return 0


def cmd_crlb(args) -> int:
    from .files import write_bounds
    from .harness import run_bounds

    scn = _scenario(args)
    modes = ("coherent", "noncoherent") if args.mode == "both" else (args.mode,)
    series = run_bounds(scn, modes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_bounds(out / "bounds.csv", series)
    _emit("ok", out=str(out / "bounds.csv"),
          final_peb_m={m: float(s.peb[-1]) for m, s in series.items()})
    return 0


def cmd_mc(args) -> int:
    from .harness import run_mc, summarize

    scn = _scenario(args)
    variants = ("nzm", "zm") if args.variant == "both" else (args.variant,)
    res = run_mc(scn, variants, args.threads, args.runs, args.steps, args.out)
    summary = {}
    for v in variants:
        aborted = sum(r.aborted is not None for r in res.records[v])
        entry = {"aborted": aborted}
        if v in res.metrics:
            start = min(20, res.metrics[v].errors.shape[1])
            entry["rmse_tail_m"] = summarize(res.metrics[v], start)["rmse_tail"]
        summary[v] = entry
    _emit("ok", out=str(args.out), summary=summary)
    return 0


COMMANDS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "run": cmd_run,
    "crlb": cmd_crlb,
    "mc": cmd_mc,
}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        _emit("invalid", message=str(e), line=e.line)
        return EXIT_FAIL
    except (ValueError, OSError, np.linalg.LinAlgError) as e:
        _emit("error", message=str(e))
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
