"""Plot learning curves from one or more run directories.

Usage: python3 scripts/plot_curves.py runs/acceptance/seed_0 runs/acceptance/seed_1 --out curves.png

Needs matplotlib, which the package itself does not depend on.
"""

import argparse
from pathlib import Path

from adamimic.config import load_config
from adamimic.experiment import load_log


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("runs", type=Path, nargs="+")
    ap.add_argument("--out", type=Path, default=Path("curves.png"))
    args = ap.parse_args(argv)

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 3, figsize=(13, 3.6), sharex=True)
    for run in args.runs:
        tlog = load_log(run / "curve.csv")
        r_star = load_config(run / "config.yaml").reward.r_star
        it = tlog.column("iteration")
        axes[0].plot(it, tlog.column("mean_rp") / r_star, label=run.name)
        axes[1].plot(it, tlog.column("mean_ri") / r_star, label=run.name)
        axes[2].plot(it, tlog.column("mean_omega_p"), label=run.name)
    for ax, title in zip(axes, ("r_p / R*", "r_i / R*", "omega_p")):
        ax.set_title(title)
        ax.set_xlabel("iteration")
        ax.grid(alpha=0.3)
    axes[0].axhline(0.5, color="k", lw=0.6, ls="--")
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(args.out)


if __name__ == "__main__":
    main()
