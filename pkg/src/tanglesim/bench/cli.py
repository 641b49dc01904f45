"""Command line entry point: ``tanglesim run | experiment | metrics``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..config import ConfigInvalid, RunConfig, default_seed
from .experiment import Manifest, read_records, run_experiment, summarise, write_records, write_summary
from .metrics import EmptyInput
from .report import render_report
from .rollout import TierConfig, run_rollout


def _print_reports(reports: dict) -> None:
    for (arm, tier), rep in reports.items():
        print(f"== tier {tier} {arm} ({rep.n} rollouts)")
        for label, value in rep.rows():
            print(f"  {label:<24} {value}")


def _run_config(args) -> RunConfig:
    run = RunConfig.load(args.config) if args.config else RunConfig()
    if args.kappa is not None:
        run = run.with_kappa(args.kappa)
    if args.noise_off:
        run = run.noise_off()
    if args.ablate_uncertainty:
        run = run.ablated()
    return run.validate()


def cmd_run(args) -> int:
    run = _run_config(args)
    seed = args.seed if args.seed is not None else default_seed(0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frames = out / f"rollout_{seed}" if args.dump_frames else None
    arm = "ablated" if args.ablate_uncertainty else "default"
    rec = run_rollout(TierConfig(args.tier).validate(), run, seed, arm, frames)
    write_records([rec], out / "records.jsonl")
    (out / "config.json").write_text(run.to_json())
    reports = summarise([rec])
    write_summary(reports, out / "summary.csv")
    render_report([rec], reports, out)
    for s in rec.steps:
        ev = ", ".join(s.events)
        err = f"  [{s.error}]" if s.error else ""
        print(f"{s.index:3d} t={s.sim_clock:6.1f}s k={s.k_t} {s.action}{' ' + ev if ev else ''}{err}")
    print(f"outcome {rec.outcome.value}, done_time {rec.done_time}, {rec.n_actions} actions")
    return 0


def cmd_experiment(args) -> int:
    manifest = Manifest.load(args.manifest)
    result = run_experiment(manifest, args.out, workers=args.workers)
    _print_reports(result.reports)
    return 0


def cmd_metrics(args) -> int:
    records = read_records(args.records)
    reports = summarise(records)
    if not reports:
        raise EmptyInput("no records in file")
    _print_reports(reports)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_summary(reports, out / "summary.csv")
        render_report(records, reports, out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tanglesim", description="cable untangling simulator and benchmark")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="one seeded rollout")
    r.add_argument("--tier", type=int, choices=(1, 2, 3), required=True)
    r.add_argument("--seed", type=int, default=None, help="defaults to $TANGLESIM_SEED or 0")
    r.add_argument("--ablate-uncertainty", action="store_true")
    r.add_argument("--noise-off", action="store_true")
    r.add_argument("--dump-frames", action="store_true")
    r.add_argument("--kappa", type=float, default=None)
    r.add_argument("--config", default=None, help="run config JSON")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("experiment", help="run a manifest of rollouts")
    e.add_argument("--manifest", required=True)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_experiment)

    m = sub.add_parser("metrics", help="recompute metrics from records.jsonl")
    m.add_argument("--records", required=True)
    m.add_argument("--out", default=None, help="also write summary.csv and figures here")
    m.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigInvalid, EmptyInput, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
