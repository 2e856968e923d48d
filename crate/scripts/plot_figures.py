#!/usr/bin/env python3
"""Plot mean resource usage and outage against the target BLER.

Reads the plot_ru*.csv / plot_outage*.csv files written by `narrm sweep`
and saves one PNG per file next to them (or into --dest).
"""

import argparse
import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd

LABELS = {"genie": "genie", "iir": "IIR average", "quantile": "quantile", "nar": "NAR"}


def plot(path: pathlib.Path, dest: pathlib.Path) -> pathlib.Path:
    df = pd.read_csv(path).sort_values("eps_target")
    outage = path.stem.startswith("plot_outage")
    alpha = path.stem.partition("_alpha")[2]

    fig, ax = plt.subplots(figsize=(6, 4))
    for col in df.columns[1:]:
        label = LABELS.get(col, col)
        if col == "nar" and alpha:
            label = f"NAR (alpha = {alpha})"
        ax.plot(df["eps_target"], df[col], marker="o", label=label)
    ax.set_xscale("log")
    ax.set_xlabel("target BLER")
    if outage:
        ax.set_yscale("log")
        lo = df["eps_target"]
        ax.plot(lo, lo, "k--", linewidth=0.8, label="target")
        ax.set_ylabel("outage probability")
    else:
        ax.set_ylabel("mean channel uses")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()

    out = dest / f"{path.stem}.png"
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("dir", nargs="?", default="out", type=pathlib.Path, help="sweep output directory")
    parser.add_argument("--dest", type=pathlib.Path, help="where to write PNGs (default: DIR)")
    args = parser.parse_args()

    dest = args.dest or args.dir
    dest.mkdir(parents=True, exist_ok=True)
    files = sorted(args.dir.glob("plot_*.csv"))
    if not files:
        raise SystemExit(f"no plot_*.csv in {args.dir}; run `narrm sweep` first")
    for f in files:
        print(plot(f, dest))


if __name__ == "__main__":
    main()
