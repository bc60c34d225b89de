#!/usr/bin/env python3
"""
plot_series.py - PNG previews of experiment CSV artifacts

Renders the CSV files written next to a report.json:
- series with a ``t`` column (orbits, separation witnesses): every other column against t
- series keyed by another first column (comanence tables): remaining columns against it
- point clouds (closures, manifolds): scatter of the first two coordinates

Each PNG is written next to its CSV. Pass a CSV file or a run directory; a
directory is searched recursively.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from quasiergodic.reports import read_series_csv  # noqa: E402


def plot_csv(csv_path: Path) -> Path:
    header, columns = read_series_csv(csv_path)
    names = list(columns)
    if not names:
        raise ValueError(f"{csv_path} has no columns")

    plt.rcParams["font.family"] = "monospace"
    plt.rcParams["font.size"] = 9
    fig, ax = plt.subplots(figsize=(8, 5), facecolor="white")

    if "dimension" in header:
        # point cloud
        x = columns[names[0]]
        y = columns[names[1]] if len(names) > 1 else 0.0 * x
        ax.scatter(x, y, s=2, color="black", marker=".")
        ax.set_xlabel(names[0])
        ax.set_ylabel(names[1] if len(names) > 1 else "")
        ax.set_aspect("equal", adjustable="datalim")
    else:
        key = "t" if "t" in columns else names[0]
        for name in names:
            if name != key:
                ax.plot(columns[key], columns[name], linewidth=0.8, label=name)
        ax.set_xlabel(key)
        if "separation" in columns:
            ax.set_yscale("log")
        ax.legend(loc="best", frameon=False)

    ax.grid(True, linestyle=":", linewidth=0.5)
    ax.set_title(csv_path.stem)
    out_path = csv_path.with_suffix(".png")
    fig.savefig(out_path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return out_path


def main(argv: list[str] | None = None) -> int:
    """Main entry point"""
    parser = argparse.ArgumentParser(description="Render experiment CSV artifacts to PNG")
    parser.add_argument("target", help="CSV file or run directory")
    args = parser.parse_args(argv)

    target = Path(args.target).expanduser().resolve()
    if target.is_dir():
        files = sorted(target.rglob("*.csv"))
    elif target.is_file():
        files = [target]
    else:
        print(f"Error: not found: {target}", file=sys.stderr)
        return 2
    if not files:
        print(f"No CSV files below {target}", file=sys.stderr)
        return 1

    failures = 0
    for i, csv_path in enumerate(files, 1):
        try:
            png = plot_csv(csv_path)
            print(f"[{i}/{len(files)}] {png}")
        except (ValueError, KeyError) as e:
            failures += 1
            print(f"[{i}/{len(files)}] skipped {csv_path}: {e}", file=sys.stderr)
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
