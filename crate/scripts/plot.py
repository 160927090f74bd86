"""Figure-style plots from a `fourier-diag --mode reproduce` output directory."""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def plot_preset(src: Path, dst: Path, title: str) -> None:
    models = sorted(p.stem[len("pred_"):] for p in src.glob("pred_*.csv"))
    if not models:
        return
    fig, axes = plt.subplots(1, 3, figsize=(15, 4))
    base = pd.read_csv(src / f"pred_{models[0]}.csv")
    axes[0].scatter(base.theta, base.y, s=4, c="0.7", label="data")
    axes[0].plot(base.theta, base.truth, "k", lw=1, label="truth")
    for model in models:
        pred = pd.read_csv(src / f"pred_{model}.csv")
        axes[0].plot(pred.theta, pred.pred, lw=1, label=model)
        trace = pd.read_csv(src / f"trace_{model}.csv").dropna(subset=["rel_l2"])
        axes[1].semilogy(trace.iteration, trace.rel_l2, label=model)
        weights = pd.read_csv(src / f"weights_{model}.csv")
        axes[2].plot(weights.slot, weights.magnitude, ".", ms=3, label=model)
    axes[0].set_xlabel("theta")
    axes[1].set_xlabel("iteration")
    axes[1].set_ylabel("relative L2 error")
    axes[2].set_xlabel("slot")
    axes[2].set_ylabel("|w|")
    for ax in axes:
        ax.legend(fontsize=7)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(dst / f"{title}.png", dpi=120)
    plt.close(fig)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("run_dir", type=Path)
    parser.add_argument("--out", type=Path)
    args = parser.parse_args()
    out = args.out or args.run_dir
    out.mkdir(parents=True, exist_ok=True)
    subdirs = sorted(d for d in args.run_dir.iterdir() if d.is_dir())
    if subdirs:
        for d in subdirs:
            plot_preset(d, out, d.name)
    else:
        plot_preset(args.run_dir, out, args.run_dir.name)


if __name__ == "__main__":
    main()
