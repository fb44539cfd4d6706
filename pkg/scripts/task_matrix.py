"""Train every weighting strategy on every task of the matrix.

Usage: python3 scripts/task_matrix.py [--iterations 500] [--seeds 0 1 2] [--out runs/matrix]
       [--strategies ada ni] [--tasks 0]

Each run lands in ``<out>/<strategy>_ref<ref>_tgt<target>_s<seed>/``; a run
whose ``curve.csv`` already exists is skipped. A summary table (final 5%
mean of r_p/R*, r_i/R* and omega) is written to ``<out>/summary.csv``.
"""

import argparse
import csv
import logging
import sys
from pathlib import Path

from adamimic.config import ExperimentConfig, TaskConfig
from adamimic.experiment import STRATEGIES, TASKS, load_log, run_experiment


def run_name(strategy, ref_vx, target_vx, seed):
    return f"{strategy}_ref{ref_vx:+.2f}_tgt{target_vx:+.2f}_s{seed}"


def tail_mean(values, frac=0.05):
    k = max(1, int(round(frac * len(values))))
    return float(sum(values[-k:]) / k)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iterations", type=int, default=500)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--strategies", nargs="+", default=list(STRATEGIES), choices=STRATEGIES)
    ap.add_argument("--tasks", type=int, nargs="+", default=list(range(len(TASKS))),
                    help="indices into the task matrix")
    ap.add_argument("--out", type=Path, default=Path("runs/matrix"))
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stdout)

    summary = []
    for ti in args.tasks:
        ref_vx, target_vx = TASKS[ti]
        for strategy in args.strategies:
            for seed in args.seeds:
                name = run_name(strategy, ref_vx, target_vx, seed)
                run_dir = args.out / name
                if (run_dir / "curve.csv").exists():
                    tlog = load_log(run_dir / "curve.csv")
                else:
                    cfg = ExperimentConfig(seed=seed, strategy=strategy, iterations=args.iterations,
                                           task=TaskConfig(target_vx=target_vx, ref_vx=ref_vx))
                    tlog = run_experiment(cfg, run_dir).log
                r_star = ExperimentConfig().reward.r_star
                row = {"run": name, "strategy": strategy, "ref_vx": ref_vx, "target_vx": target_vx, "seed": seed,
                       "rp_norm": tail_mean(tlog.column("mean_rp")) / r_star,
                       "ri_norm": tail_mean(tlog.column("mean_ri")) / r_star,
                       "omega_p": tail_mean(tlog.column("mean_omega_p"))}
                logging.info("%s  rp/R* %.3f  ri/R* %.3f  omega %.3f", name, row["rp_norm"], row["ri_norm"],
                             row["omega_p"])
                summary.append(row)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]) if summary else ["run"])
        w.writeheader()
        w.writerows(summary)


if __name__ == "__main__":
    main()
