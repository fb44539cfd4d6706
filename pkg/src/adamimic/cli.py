"""Command line entry point: ``adamimic {train,eval,play-ref,gen-ref}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from adamimic.config import ConfigError, ExperimentConfig, load_config
from adamimic.experiment import STRATEGIES, evaluate_policy, load_checkpoint, play_reference, run_experiment
from adamimic.reference import export_reference

log = logging.getLogger("adamimic")


def _common(p: argparse.ArgumentParser, out_help: str):
    p.add_argument("--config", type=Path, help="YAML/JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, help=out_help)
    p.add_argument("--target-vx", type=float, help="commanded forward speed (m/s)")
    p.add_argument("--ref-vx", type=float, help="speed of the reference gait (m/s); 0 gives standing")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adamimic", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy with PPO")
    _common(p, "run directory (curve.csv, checkpoint.pt, config.yaml)")
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--iterations", type=int)

    p = sub.add_parser("eval", help="evaluate a checkpoint with the mean action")
    _common(p, "JSON file for the metrics (default: stdout)")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--iterations", type=int, help="evaluation steps per env")

    p = sub.add_parser("play-ref", help="play a reference open loop and dump the trajectory")
    _common(p, "trajectory CSV")
    p.add_argument("--iterations", type=int, help="number of env steps (default: horizon)")

    p = sub.add_parser("gen-ref", help="export a reference as a text table")
    _common(p, "reference table path")
    return parser


def resolve_config(args, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or (load_config(args.config) if args.config else ExperimentConfig())
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "strategy", None):
        cfg = cfg.replace(strategy=args.strategy)
    if args.command == "train" and args.iterations is not None:
        cfg = cfg.replace(iterations=args.iterations)
    task = cfg.task
    if args.target_vx is not None:
        task = dataclasses.replace(task, target_vx=args.target_vx)
    if args.ref_vx is not None:
        task = dataclasses.replace(task, ref_vx=args.ref_vx)
    return cfg.replace(task=task)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        if args.command == "eval":
            policy, ckpt_cfg, _ = load_checkpoint(args.checkpoint)
            cfg = resolve_config(args, load_config(args.config) if args.config else ckpt_cfg)
        else:
            cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if args.command == "train":
        out = args.out or Path("runs") / f"{cfg.strategy}_ref{cfg.task.ref_vx:+.2f}_tgt{cfg.task.target_vx:+.2f}_s{cfg.seed}"

        def progress(row, diag):
            if row["iteration"] % 10 == 0:
                log.info("it %5d  R %9.3f  rp/R* %.3f  ri/R* %.3f  omega %.3f  len %.0f", row["iteration"],
                         row["episode_reward"], diag["rp_norm"], diag["ri_norm"], row["mean_omega_p"],
                         row["mean_ep_len"])

        result = run_experiment(cfg, out, progress)
        log.info("wrote %s", out)
        return 1 if result.aborted else 0

    if args.command == "eval":
        steps = args.iterations or 500
        metrics = evaluate_policy(policy, cfg, steps=steps, seed=cfg.seed)
        text = json.dumps(metrics, indent=2)
        if args.out:
            args.out.write_text(text + "\n")
        else:
            print(text)
        return 0

    ref = cfg.reference()
    if args.command == "gen-ref":
        out = args.out or Path(f"reference_{cfg.task.ref_vx:+.2f}.txt")
        export_reference(ref, out)
        log.info("wrote %s (%d cycle + %d half-step samples)", out, len(ref.cycle), len(ref.prefix))
        return 0

    out = args.out or Path(f"playback_{cfg.task.ref_vx:+.2f}.csv")
    pb = play_reference(cfg, ref, args.iterations, out)
    if pb.fall_time is None:
        log.info("no fall within %.2f s; wrote %s", pb.trajectory[-1, 0], out)
    else:
        log.info("fell at t = %.2f s (%.2f step periods); wrote %s", pb.fall_time, pb.fall_periods, out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
