"""Train the end-to-end acceptance runs: task ref 0.4 -> target 0.4 under Ada, three seeds.

Usage: python3 scripts/acceptance_runs.py [--iterations 500] [--seeds 0 1 2] [--out runs/acceptance]

The acceptance tests read ``<out>/seed_<k>/curve.csv`` when it exists and its
stored config matches :func:`acceptance_config`; otherwise they train.
"""

import argparse
import logging
import sys
import time
from pathlib import Path

from adamimic.config import ExperimentConfig
from adamimic.experiment import run_experiment

ACCEPTANCE_ITERATIONS = 500
ACCEPTANCE_SEEDS = (0, 1, 2)
DEFAULT_OUT = Path(__file__).resolve().parents[1] / "runs" / "acceptance"


def acceptance_config(seed: int, iterations: int = ACCEPTANCE_ITERATIONS) -> ExperimentConfig:
    return ExperimentConfig(seed=seed, strategy="ada", iterations=iterations)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iterations", type=int, default=ACCEPTANCE_ITERATIONS)
    ap.add_argument("--seeds", type=int, nargs="+", default=list(ACCEPTANCE_SEEDS))
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stdout)
    for seed in args.seeds:
        cfg = acceptance_config(seed, args.iterations)
        t0 = time.time()

        def progress(row, diag, seed=seed):
            if row["iteration"] % 25 == 0:
                logging.info("seed %d it %4d rp/R* %.3f ri/R* %.3f omega %.3f len %.0f", seed, row["iteration"],
                             diag["rp_norm"], diag["ri_norm"], row["mean_omega_p"], row["mean_ep_len"])

        run_experiment(cfg, args.out / f"seed_{seed}", progress)
        logging.info("seed %d done in %.0f s", seed, time.time() - t0)


if __name__ == "__main__":
    main()
